"""
The five-system comparison through the harness
==============================================

Drives the same stages as ``python -m diffasr`` on a deliberately small
configuration: simulate, train the detector, cache frontends, train the
five ASR systems, evaluate, and write the report. Expect tens of minutes
on one CPU core; scale the sizes below up for meaningful numbers.
"""

import csv
import json
import sys
from pathlib import Path

from diffasr.harness import SYSTEMS, PipelineConfig, Run

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
config = PipelineConfig.load(None)
config.data["corpus"]["per_pool"] = 60
config.data["datasets"]["train_clean"]["wearers"] = [0, 50]
config.data["datasets"]["train_noisy"]["wearers"] = [0, 50]
config.data["datasets"]["test_clean"]["wearers"] = [50, 60]
config.data["datasets"]["test_noisy"]["wearers"] = [50, 51]
config.data["asr"]["steps"] = 600
print("config hash", config.hash)

run = Run(config, out)
for name, rows in run.simulate().items():
    print(f"{name}: {len(rows)} mixtures")
print("detector:", run.train_std())
for name in config["datasets"]:
    run.run_frontend(name)
for system in SYSTEMS:
    print("trained", json.dumps(run.train_asr(system)))
    for ds in config["eval_sets"]:
        run.evaluate(system, ds)
rows, absent = run.compare()

with open(out / "results" / "report.csv") as fh:
    for row in csv.reader(fh):
        print(" | ".join(f"{c:>20s}" for c in row))
print("polar data:", out / "results" / "polar.csv")
