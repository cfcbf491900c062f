"""Word error rate, relative WER reduction, and condition-sliced aggregation."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_PUNCT = re.compile(r"[^\w\s']")


def normalize_text(text: str) -> list[str]:
    """Lowercase, drop punctuation except apostrophes, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise ValueError("undefined WER")
        return self.errors / self.ref_words

    def __add__(self, other: "WerResult") -> "WerResult":
        return WerResult(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_words + other.ref_words,
        )


def align_counts(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """Minimum-edit (S, D, I); among optimal paths substitutions are preferred."""
    n, m = len(ref), len(hyp)
    # cost[i, j] = (edits, insert+delete count) compared lexicographically
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), D[i - 1, j] + 1, D[i, j - 1] + 1)
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(s), d, ins


def wer(ref, hyp, normalize: bool = True) -> WerResult:
    """Word-level edit statistics of ``hyp`` against ``ref`` (strings or word lists)."""
    r = normalize_text(ref) if isinstance(ref, str) and normalize else (ref.split() if isinstance(ref, str) else list(ref))
    h = normalize_text(hyp) if isinstance(hyp, str) and normalize else (hyp.split() if isinstance(hyp, str) else list(hyp))
    if not r:
        raise ValueError("undefined WER")
    s, d, i = align_counts(r, h)
    return WerResult(s, d, i, len(r))


def wer_corpus(refs: Sequence[str], hyps: Sequence[str]) -> float:
    """Pooled WER: total errors over total reference words."""
    total = WerResult(0, 0, 0, 0)
    for r, h in zip(refs, hyps, strict=True):
        total = total + wer(r, h)
    return total.wer


def werr(baseline_wer: float, system_wer: float) -> float:
    """Relative WER reduction ``(baseline - system) / baseline``."""
    if baseline_wer <= 0:
        raise ValueError("baseline WER must be positive")
    return (baseline_wer - system_wer) / baseline_wer


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class ConditionKey:
    angle_deg: float | None = None
    height_m: float | None = None
    distance_m: float | None = None
    overlap_ratio: float | None = None
    order: str | None = None

    @property
    def is_clean(self) -> bool:
        return self.order is None


SLICE_FIELDS = ("angle_deg", "distance_m", "height_m")


def aggregate(results: Iterable[tuple[WerResult, ConditionKey]]) -> dict[str, dict]:
    """Pooled WER per slice: by angle, distance, height, and overall.

    Returns ``{"overall": WerResult, "angle_deg": {value: WerResult}, ...}``.
    Keys whose field is ``None`` (wearer-only rows) only count toward overall.
    """
    results = list(results)
    table: dict[str, dict] = {f: {} for f in SLICE_FIELDS}
    overall = WerResult(0, 0, 0, 0)
    for res, key in results:
        overall = overall + res
        for f in SLICE_FIELDS:
            v = getattr(key, f)
            if v is not None:
                table[f][v] = table[f].get(v, WerResult(0, 0, 0, 0)) + res
    out: dict[str, dict] = {f: dict(sorted(table[f].items())) for f in SLICE_FIELDS}
    out["overall"] = overall
    return out


def pooled(results: Iterable[tuple[WerResult, ConditionKey]], **match) -> WerResult | None:
    total = None
    for res, key in results:
        if all(getattr(key, k) == v for k, v in match.items()):
            total = res if total is None else total + res
    return total


# ---------------------------------------------------------------------------
# Files


def write_results(path: str | Path, rows: Iterable[tuple[str, ConditionKey, WerResult]]) -> None:
    with open(path, "w") as fh:
        for utt_id, key, res in rows:
            rec = {"utt_id": utt_id, **asdict(key), "S": res.substitutions, "D": res.deletions, "I": res.insertions, "ref_words": res.ref_words}
            fh.write(json.dumps(rec) + "\n")


def read_results(path: str | Path) -> list[tuple[str, ConditionKey, WerResult]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        key = ConditionKey(r["angle_deg"], r["height_m"], r["distance_m"], r["overlap_ratio"], r["order"])
        rows.append((r["utt_id"], key, WerResult(r["S"], r["D"], r["I"], r["ref_words"])))
    return rows


TABLE_COLUMNS = (
    ("wearer-only", None, None),
    ("wearer-bystander 0%", "wearer-first", 0.0),
    ("wearer-bystander 50%", "wearer-first", 0.5),
    ("bystander-wearer 0%", "bystander-first", 0.0),
    ("bystander-wearer 50%", "bystander-first", 0.5),
)


def condition_row(results: Sequence[tuple[WerResult, ConditionKey]]) -> dict[str, float | None]:
    """One report row: WER (%) per column and the mean of the side-talk columns."""
    row: dict[str, float | None] = {}
    for name, order, ov in TABLE_COLUMNS:
        if order is None:
            res = pooled([(r, k) for r, k in results if k.is_clean])
        else:
            res = pooled(results, order=order, overlap_ratio=ov)
        row[name] = None if res is None else 100.0 * res.wer
    side = [row[name] for name, order, _ in TABLE_COLUMNS if order is not None and row[name] is not None]
    row["Avg"] = float(np.mean(side)) if side else None
    return row


def write_report(path: str | Path, systems: dict[str, Sequence[tuple[WerResult, ConditionKey]]], baseline: str | None = None) -> list[dict]:
    """CSV with one row per system; WERR (%) on the side-talk average against ``baseline``."""
    rows = []
    base_avg = condition_row(systems[baseline])["Avg"] if baseline in systems else None
    for name, results in systems.items():
        row = {"system": name, **condition_row(results)}
        row["WERR vs baseline"] = (
            100.0 * werr(base_avg, row["Avg"]) if base_avg and row["Avg"] is not None else None
        )
        rows.append(row)
    fields = ["system"] + [c for c, _, _ in TABLE_COLUMNS] + ["Avg", "WERR vs baseline"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row[k] is None else f"{row[k]:.2f}") if k != "system" else row[k] for k in fields})
    return rows


def write_polar(path: str | Path, systems: dict[str, Sequence[tuple[WerResult, ConditionKey]]]) -> None:
    """Per-angle WER (%) for every system and (order, overlap) panel."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "order", "overlap_ratio", "angle_deg", "wer"])
        for name, results in systems.items():
            for _, order, ov in TABLE_COLUMNS[1:]:
                panel = [(r, k) for r, k in results if k.order == order and k.overlap_ratio == ov]
                for angle, res in aggregate(panel)["angle_deg"].items():
                    w.writerow([name, order, ov, f"{angle:g}", f"{100.0 * res.wer:.4f}"])
