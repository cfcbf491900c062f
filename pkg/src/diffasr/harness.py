"""End-to-end orchestration: simulate, run frontends, train, evaluate, compare.

All outputs land under one run directory::

    <out>/config.json                 resolved config + hash
    <out>/corpus/                     synthetic corpus (unless a corpus root is configured)
    <out>/data/<dataset>/             manifest.jsonl, mixtures/*.wav, labels/*.lab
    <out>/cache/<frontend_hash>/<dataset>/<utt>.{chx,ch0}.feat, <utt>.std.logits
    <out>/models/                     std.ckpt, asr-<system>.ckpt
    <out>/logs/                       training logs (line-delimited JSON)
    <out>/results/                    <system>--<dataset>.jsonl, report.csv, polar.csv
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .asr import AsrExample, AsrTrainConfig, DifferentialAsr, Vocabulary, train_asr, variant_dim
from .asr.train import toy_transducer_config
from .audio import MultiChannelWave, StftConfig, write_wav
from .corpus import CorpusConfig, fetch_or_generate_corpus, load_mono, pool
from .eval import ConditionKey, read_results, wer, write_polar, write_report, write_results
from .features import FeatureSequence, read_feature_dump, write_feature_dump
from .pipeline import run_frontends
from .sim import (
    BystanderPosition,
    MixtureDistribution,
    build_manifest,
    default_geometry,
    load_geometry,
    read_manifest,
    render_row,
)
from .std import StdConfig, StdModel, StdTrainConfig, std_accuracy, train_std

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISSING = 0, 1, 2, 3

SYSTEMS = {
    "clean-chx": ("train_clean", "chx"),
    "noisy-chx": ("train_noisy", "chx"),
    "noisy-chx+embed": ("train_noisy", "chx+embed"),
    "noisy-chx+ch0": ("train_noisy", "chx+ch0"),
    "noisy-chx+ch0+embed": ("train_noisy", "chx+ch0+embed"),
}
BASELINE = "noisy-chx"


class HarnessError(Exception):
    def __init__(self, message: str, code: int = EXIT_DATA):
        super().__init__(message)
        self.code = code


DEFAULT_CONFIG = {
    "seed": 0,
    "geometry": None,
    "corpus": {"root": None, "per_pool": 120, "seed": 0, "words": [2, 4], "librispeech_root": None},
    "stft": {"window_len": 400, "hop_len": 160, "fft_len": 512},
    "noise_mask": "labels",
    "datasets": {
        "train_clean": {"mode": "clean", "wearers": [0, 100]},
        "train_noisy": {"mode": "random", "wearers": [0, 100], "per_wearer": 3, "snr_range": [10, 25], "overlap_range": [0, 1]},
        "test_clean": {"mode": "clean", "wearers": [100, 120]},
        "test_noisy": {
            "mode": "grid",
            "wearers": [100, 102],
            "snr_range": [10, 25],
            "overlap_grid": [0.0, 0.5],
            "orders": ["wearer-first", "bystander-first"],
        },
    },
    "std": {
        "train_set": "train_noisy",
        "heldout_fraction": 0.2,
        "steps": 400,
        "batch_size": 8,
        "crop_len": 8000,
        "lr": 0.002,
        "model": {},
    },
    "asr": {
        "steps": 1500,
        "batch_size": 16,
        "peak_lr": 0.002,
        "warmup_steps": 100,
        "hold_steps": 0,
        "final_lr_scale": 0.05,
        "time_budget_s": None,
        "model_overrides": {},
    },
    "systems": list(SYSTEMS),
    "eval_sets": ["test_clean", "test_noisy"],
    # radial WER axis for polar plots; None lets the plotting side autoscale
    "polar_wer_axis": None,
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class PipelineConfig:
    """Resolved declarative config (JSON on disk)."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    @classmethod
    def load(cls, path: str | Path | None, seed: int | None = None) -> "PipelineConfig":
        override = {}
        if path is not None:
            try:
                override = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise HarnessError(f"config not found: {path}", EXIT_USAGE) from None
            except json.JSONDecodeError as err:
                raise HarnessError(f"bad config {path}: {err}", EXIT_USAGE) from None
        data = _merge(DEFAULT_CONFIG, override)
        if seed is not None:
            data["seed"] = seed
        return cls(data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    def section_hash(self, *keys) -> str:
        return config_hash({k: self.data.get(k) for k in keys})

    @property
    def stft(self) -> StftConfig:
        return StftConfig(**self.data["stft"])


class Run:
    """A run directory bound to a config."""

    def __init__(self, config: PipelineConfig, out: str | Path):
        self.config = config
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        _atomic_write(self.out / "config.json", json.dumps({"config_hash": config.hash, **config.data}, indent=2, sort_keys=True))
        geo = config["geometry"]
        try:
            self.geometry = load_geometry(geo) if geo else default_geometry()
        except FileNotFoundError:
            raise HarnessError(f"geometry file not found: {geo}", EXIT_USAGE) from None

    # -- corpus & datasets ------------------------------------------------

    def corpus(self):
        c = dict(self.config["corpus"])
        root = c.pop("root") or str(self.out / "corpus")
        try:
            return fetch_or_generate_corpus(CorpusConfig(root=root, words=tuple(c.pop("words")), **c))
        except FileNotFoundError as err:
            raise HarnessError(str(err), EXIT_DATA) from None

    def data_dir(self, name: str) -> Path:
        return self.out / "data" / name

    def dataset_hash(self, name: str) -> str:
        return config_hash(
            {"ds": self.config["datasets"][name], "corpus": self.config["corpus"], "geometry": self.config["geometry"], "seed": self.config["seed"]}
        )

    def simulate(self, names=None) -> dict[str, list[dict]]:
        """Write manifests, mixtures and labels; skips datasets whose hash is unchanged."""
        names = names or list(self.config["datasets"])
        entries = None
        out = {}
        for i, name in enumerate(names):
            if name not in self.config["datasets"]:
                raise HarnessError(f"unknown dataset {name!r}", EXIT_USAGE)
            ddir = self.data_dir(name)
            stamp = ddir / "STAMP"
            h = self.dataset_hash(name)
            if stamp.exists() and stamp.read_text().strip() == h:
                logger.info("dataset %s up to date (%s)", name, h)
                out[name] = read_manifest(ddir / "manifest.jsonl")
                continue
            entries = entries or self.corpus()
            spec = self.config["datasets"][name]
            lo, hi = spec.get("wearers", [0, None])
            wearers = pool(entries, "wearer")[lo:hi]
            bystanders = pool(entries, "bystander")
            if not wearers:
                raise HarnessError(f"dataset {name}: no wearer utterances selected", EXIT_DATA)
            dist = MixtureDistribution(
                mode=spec.get("mode", "random"),
                snr_range=tuple(spec.get("snr_range", (10, 25))),
                overlap_range=tuple(spec.get("overlap_range", (0, 1))),
                overlap_grid=tuple(spec.get("overlap_grid", (0.0, 0.5))),
                orders=tuple(spec.get("orders", ("wearer-first", "bystander-first"))),
                positions=[BystanderPosition(*p) for p in spec["positions"]] if spec.get("positions") else None,
                per_wearer=spec.get("per_wearer", 1),
            )
            (ddir / "mixtures").mkdir(parents=True, exist_ok=True)
            (ddir / "labels").mkdir(exist_ok=True)
            rows = build_manifest(wearers, bystanders, dist, ddir / "manifest.jsonl", seed=self.config["seed"] * 1000 + i)
            self._map(_render_job, [(row, str(ddir), self.config["geometry"]) for row in rows])
            (ddir / "manifest.hash").write_text(h + "\n")
            stamp.write_text(h + "\n")
            out[name] = rows
        return out

    def _map(self, fn, jobs):
        n = int(os.environ.get("DIFFASR_JOBS", "1"))
        if n <= 1:
            return [fn(j) for j in jobs]
        with ProcessPoolExecutor(n) as ex:
            return list(ex.map(fn, jobs))

    def load_record(self, name: str, row: dict):
        return render_row(row, load_mono, self.geometry)

    # -- frontends --------------------------------------------------------

    @property
    def std_path(self) -> Path:
        return self.out / "models" / "std.ckpt"

    def std_model(self) -> StdModel:
        if not self.std_path.exists():
            raise HarnessError(f"missing STD checkpoint {self.std_path}; run train-std first", EXIT_MISSING)
        model = StdModel(self.std_config())
        checkpoint.load_module(self.std_path, model)
        return model.eval()

    def std_config(self) -> StdConfig:
        m = dict(self.config["std"].get("model") or {})
        if "dilations" in m:
            m["dilations"] = tuple(m["dilations"])
        return StdConfig(**m)

    def frontend_hash(self) -> str:
        std_h = hashlib.sha256(self.std_path.read_bytes()).hexdigest()[:12] if self.std_path.exists() else None
        return config_hash({"cfg": self.config.section_hash("geometry", "stft", "noise_mask"), "std": std_h})

    def cache_dir(self, name: str) -> Path:
        return self.out / "cache" / self.frontend_hash() / name

    def run_frontend(self, name: str, variants=None) -> Path:
        """Write per-utterance ch-x / ch-0 log-Mel dumps and STD logits as needed."""
        variants = variants or [SYSTEMS[s][1] for s in self.config["systems"]]
        need_ch0 = any("ch0" in v for v in variants)
        need_embed = any("embed" in v for v in variants)
        manifest = self.data_dir(name) / "manifest.jsonl"
        if not manifest.exists():
            raise HarnessError(f"missing dataset {name}; run simulate first", EXIT_MISSING)
        std = self.std_model() if (need_embed or self.config["noise_mask"] == "std") else None
        cdir = self.cache_dir(name)
        cdir.mkdir(parents=True, exist_ok=True)
        for row in read_manifest(manifest):
            uid = row["utt_id"]
            want = [cdir / f"{uid}.chx.feat"]
            if need_ch0:
                want.append(cdir / f"{uid}.ch0.feat")
            if need_embed:
                want.append(cdir / f"{uid}.std.logits")
            if all(p.exists() for p in want):
                continue
            fo = run_frontends(self.load_record(name, row), self.geometry, std, self.config.stft, self.config["noise_mask"])
            _atomic_dump(cdir / f"{uid}.chx.feat", FeatureSequence(fo.mel_chx))
            if need_ch0:
                _atomic_dump(cdir / f"{uid}.ch0.feat", FeatureSequence(fo.mel_ch0))
            if need_embed:
                _atomic_dump(cdir / f"{uid}.std.logits", FeatureSequence(fo.std_logits, 16000.0))
        return cdir

    def examples(self, name: str, variant: str) -> list[AsrExample]:
        manifest = self.data_dir(name) / "manifest.jsonl"
        if not manifest.exists():
            raise HarnessError(f"missing dataset {name}; run simulate first", EXIT_MISSING)
        cdir = self.cache_dir(name)
        out = []
        for row in read_manifest(manifest):
            uid = row["utt_id"]
            paths = {"chx": cdir / f"{uid}.chx.feat", "ch0": cdir / f"{uid}.ch0.feat", "std": cdir / f"{uid}.std.logits"}
            needed = ["chx"] + (["ch0"] if "ch0" in variant else []) + (["std"] if "embed" in variant else [])
            missing = [str(paths[k]) for k in needed if not paths[k].exists()]
            if missing:
                raise HarnessError(f"missing frontend cache {missing[0]}; run run-frontend first", EXIT_MISSING)
            out.append(
                AsrExample(
                    read_feature_dump(paths["chx"]).frames,
                    read_feature_dump(paths["ch0"]).frames if "ch0" in needed else None,
                    read_feature_dump(paths["std"]).frames if "std" in needed else None,
                    row["transcript"],
                    uid,
                )
            )
        return out

    # -- training ---------------------------------------------------------

    def train_std(self) -> dict:
        cfg = self.config["std"]
        name = cfg["train_set"]
        manifest = self.data_dir(name) / "manifest.jsonl"
        if not manifest.exists():
            raise HarnessError(f"missing dataset {name}; run simulate first", EXIT_MISSING)
        rows = read_manifest(manifest)
        if not rows:
            raise HarnessError("empty manifest", EXIT_DATA)
        data = []
        for row in rows:
            fo = run_frontends(self.load_record(name, row), self.geometry, None, self.config.stft, "labels")
            data.append((fo.std_input.astype(np.float32), fo.activity.astype(np.int64)))
        n_held = max(1, int(round(cfg["heldout_fraction"] * len(data))))
        train, held = data[:-n_held], data[-n_held:]
        tcfg = StdTrainConfig(
            steps=cfg["steps"], batch_size=cfg["batch_size"], crop_len=cfg["crop_len"], lr=cfg["lr"], seed=self.config["seed"],
            model=self.std_config(),
        )
        result = train_std(train, tcfg, held)
        self.std_path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"config_hash": self.config.hash, "kind": "std", "heldout_accuracy": result.heldout_accuracy}
        checkpoint.save_module(self.std_path, result.model, meta)
        _write_log(self.out / "logs" / "std.jsonl", [{"step": i, "loss": l} for i, l in enumerate(result.losses)])
        return meta

    def asr_path(self, system: str) -> Path:
        return self.out / "models" / f"asr-{system}.ckpt"

    def train_asr(self, system: str) -> dict:
        if system not in SYSTEMS:
            raise HarnessError(f"unknown system {system!r}", EXIT_USAGE)
        dataset, variant = SYSTEMS[system]
        examples = self.examples(dataset, variant)
        a = self.config["asr"]
        tcfg = AsrTrainConfig(
            steps=a["steps"],
            batch_size=a["batch_size"],
            peak_lr=a["peak_lr"],
            warmup_steps=a["warmup_steps"],
            hold_steps=a["hold_steps"],
            final_lr_scale=a["final_lr_scale"],
            time_budget_s=a.get("time_budget_s"),
            seed=self.config["seed"],
            model_overrides=copy.deepcopy(a["model_overrides"]),
        )
        (self.out / "logs").mkdir(parents=True, exist_ok=True)
        result = train_asr(examples, variant, tcfg, log_path=self.out / "logs" / f"asr-{system}.jsonl")
        meta = {"config_hash": self.config.hash, "kind": "asr", "system": system, "variant": variant, "steps": len(result.log)}
        self.asr_path(system).parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save_module(self.asr_path(system), result.model, meta)
        return meta

    def load_asr(self, system: str) -> DifferentialAsr:
        path = self.asr_path(system)
        if not path.exists():
            raise HarnessError(f"missing ASR checkpoint {path}; run train-asr first", EXIT_MISSING)
        variant = SYSTEMS[system][1]
        vocab = Vocabulary.characters()
        model = DifferentialAsr(variant, vocab, toy_transducer_config(variant, vocab, **copy.deepcopy(self.config["asr"]["model_overrides"])))
        checkpoint.load_module(path, model)
        return model.eval()

    # -- evaluation -------------------------------------------------------

    def results_path(self, system: str, dataset: str) -> Path:
        return self.out / "results" / f"{system}--{dataset}.jsonl"

    def evaluate(self, system: str, dataset: str, batch_size: int = 32) -> Path:
        model = self.load_asr(system)
        examples = self.examples(dataset, SYSTEMS[system][1])
        rows = read_manifest(self.data_dir(dataset) / "manifest.jsonl")
        decoded = []
        for i in range(0, len(examples), batch_size):
            decoded += model.decode(examples[i : i + batch_size])
        hyps = [model.vocab.decode(h.tokens) for h in decoded]
        out = []
        for row, ex, hyp in zip(rows, examples, hyps):
            key = ConditionKey(row["angle_deg"], row["height_m"], row["distance_m"], row["overlap_ratio"], row["order"])
            out.append((ex.utt_id, key, wer(ex.transcript, hyp)))
        path = self.results_path(system, dataset)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_results(path, out)
        lines = [
            json.dumps({"utt_id": e.utt_id, "hypothesis": h, "frames": d.frames}) + "\n"
            for e, h, d in zip(examples, hyps, decoded)
        ]
        _atomic_write(path.with_suffix(".hyp.jsonl"), "".join(lines))
        return path

    def compare(self, strict: bool = False) -> tuple[list[dict], list[str]]:
        systems, absent = {}, []
        for system in self.config["systems"]:
            results = []
            for ds in self.config["eval_sets"]:
                p = self.results_path(system, ds)
                if p.exists():
                    results += [(r, k) for _, k, r in read_results(p)]
            if results:
                systems[system] = results
            else:
                absent.append(system)
        if strict and absent:
            raise HarnessError(f"missing results for: {', '.join(absent)}", EXIT_MISSING)
        if not systems:
            raise HarnessError("no evaluation results found; run evaluate first", EXIT_MISSING)
        rdir = self.out / "results"
        rows = write_report(rdir / "report.csv", systems, BASELINE)
        write_polar(rdir / "polar.csv", systems)
        summary = {"config_hash": self.config.hash, "rows": rows, "absent": absent, "polar_wer_axis": self.config["polar_wer_axis"]}
        _atomic_write(rdir / "report.json", json.dumps(summary, indent=2))
        return rows, absent


def _render_job(job):
    row, ddir, geometry_path = job
    geometry = load_geometry(geometry_path) if geometry_path else default_geometry()
    rec = render_row(row, load_mono, geometry)
    ddir = Path(ddir)
    uid = row["utt_id"]
    tmp = ddir / "mixtures" / f".{uid}.wav.tmp"
    write_wav(tmp, rec.mixture)
    tmp.replace(ddir / "mixtures" / f"{uid}.wav")
    _atomic_write_bytes(ddir / "labels" / f"{uid}.lab", rec.activity.astype(np.uint8).tobytes())


def _atomic_write(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode())


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _atomic_dump(path: Path, feats: FeatureSequence) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    write_feature_dump(tmp, feats)
    tmp.replace(path)


def _write_log(path: Path, records) -> None:
    _atomic_write(path, "".join(json.dumps(r) + "\n" for r in records))
