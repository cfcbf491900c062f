"""Spatial mixture simulation: array geometry, synthetic RIRs, wearer/bystander mixing.

Sources are placed in a head-centered frame with the wearer's mouth at the
origin, ``+y`` pointing forward and ``+z`` up. Bystander angles are measured in
the horizontal plane from straight ahead, counterclockwise seen from above.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .audio import SAMPLE_RATE, MultiChannelWave

SPEED_OF_SOUND = 343.0
FRACTIONAL_DELAY_TAPS = 32
MIN_SOURCE_DISTANCE = 0.01

ANGLES_DEG = (0, 45, 90, 135, 180, 225, 270, 315)
HEIGHTS_M = (-0.5, 0.0, 0.5)
DISTANCES_M = (0.5, 1.0, 2.0)

WEARER, BYSTANDER, NON_SPEECH = 0, 1, 2
CLASS_NAMES = ("wearer", "bystander", "non-speech")
ORDERS = ("wearer-first", "bystander-first")


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    mouth_position: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        mics = np.asarray(self.mic_positions, dtype=float).reshape(-1, 3)
        mouth = np.asarray(self.mouth_position, dtype=float).reshape(3)
        labels = tuple(self.labels)
        if len(labels) != len(mics):
            raise ValueError("one label per microphone required")
        if labels.count("nose") != 1:
            raise ValueError("exactly one microphone must be labeled 'nose'")
        dist = np.linalg.norm(mics - mouth, axis=1)
        nose = labels.index("nose")
        others = np.delete(dist, nose)
        if others.size and not np.all(dist[nose] < others):
            raise ValueError("the nose microphone must be strictly closest to the mouth")
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "mouth_position", mouth)
        object.__setattr__(self, "labels", labels)

    @property
    def num_mics(self) -> int:
        return len(self.labels)

    @property
    def nose_index(self) -> int:
        return self.labels.index("nose")

    def translated(self, offset) -> "ArrayGeometry":
        offset = np.asarray(offset, dtype=float)
        return ArrayGeometry(self.mic_positions + offset, self.mouth_position + offset, self.labels)


def default_geometry() -> ArrayGeometry:
    """Five-mic glasses layout: nose mic plus front- and mid-temple pairs."""
    return ArrayGeometry(
        mic_positions=[
            (0.0, -0.02, 0.08),
            (0.07, 0.0, 0.10),
            (-0.07, 0.0, 0.10),
            (0.075, 0.0, 0.04),
            (-0.075, 0.0, 0.04),
        ],
        mouth_position=(0.0, 0.0, 0.0),
        labels=("nose", "front_right", "front_left", "mid_right", "mid_left"),
    )


def load_geometry(path: str | Path) -> ArrayGeometry:
    """Parse ``name x y z`` lines; a ``mouth x y z`` line is required."""
    mics, labels, mouth = [], [], None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'name x y z'")
        xyz = tuple(float(v) for v in parts[1:])
        if parts[0] == "mouth":
            mouth = xyz
        else:
            labels.append(parts[0])
            mics.append(xyz)
    if mouth is None:
        raise ValueError(f"{path}: missing 'mouth' line")
    return ArrayGeometry(mics, mouth, tuple(labels))


def save_geometry(geometry: ArrayGeometry, path: str | Path) -> None:
    lines = [f"{name} {x!r} {y!r} {z!r}" for name, (x, y, z) in zip(geometry.labels, geometry.mic_positions.tolist())]
    x, y, z = geometry.mouth_position.tolist()
    lines.append(f"mouth {x!r} {y!r} {z!r}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True, order=True)
class BystanderPosition:
    angle_deg: float
    height_m: float
    distance_m: float

    def to_xyz(self, geometry: ArrayGeometry | None = None) -> np.ndarray:
        """Cartesian position relative to the wearer's mouth."""
        origin = np.zeros(3) if geometry is None else geometry.mouth_position
        a = math.radians(self.angle_deg)
        return origin + np.array(
            [-self.distance_m * math.sin(a), self.distance_m * math.cos(a), self.height_m]
        )


def enumerate_positions() -> list[BystanderPosition]:
    return [BystanderPosition(float(a), h, d) for a, h, d in itertools.product(ANGLES_DEG, HEIGHTS_M, DISTANCES_M)]


# ---------------------------------------------------------------------------
# RIR synthesis


def fractional_delay_filter(delay: float, length: int, taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Hann-windowed sinc centered at ``delay`` samples, nonzero on ``taps`` samples."""
    n = np.arange(length)
    x = n - delay
    half = taps / 2
    win = np.where(np.abs(x) < half, 0.5 * (1 + np.cos(np.pi * x / half)), 0.0)
    return np.sinc(x) * win


def propagation(geometry: ArrayGeometry, source, sample_rate: int = SAMPLE_RATE):
    """Per-mic (distance_m, delay_samples, gain) for a point source."""
    source = np.asarray(source, dtype=float)
    dist = np.linalg.norm(geometry.mic_positions - source, axis=1)
    if np.any(dist < 1e-9):
        raise ValueError("source coincides with a microphone")
    delay = dist / SPEED_OF_SOUND * sample_rate
    gain = 1.0 / np.maximum(dist, MIN_SOURCE_DISTANCE)
    return dist, delay, gain


@dataclass(frozen=True)
class Room:
    """Shoebox room; ``head_position`` places the head frame origin in room coordinates."""

    dims: tuple[float, float, float] = (5.0, 4.0, 3.0)
    head_position: tuple[float, float, float] = (2.5, 2.0, 1.5)
    reflection_coeff: float = 0.7


def _image_sources(source, room: Room, order: int):
    src = np.asarray(source, float) + np.asarray(room.head_position)
    dims = np.asarray(room.dims)
    images = []
    rng = range(-order, order + 1)
    for nx, ny, nz in itertools.product(rng, rng, rng):
        for px, py, pz in itertools.product((0, 1), repeat=3):
            bounces = abs(2 * nx - px) + abs(2 * ny - py) + abs(2 * nz - pz)
            if bounces == 0 or bounces > order:
                continue
            p = np.array([px, py, pz])
            n = np.array([nx, ny, nz])
            pos = (1 - 2 * p) * src + 2 * n * dims
            images.append((pos - np.asarray(room.head_position), room.reflection_coeff**bounces))
    return images


def synth_rir(
    geometry: ArrayGeometry,
    source,
    reflections: int = 0,
    sample_rate: int = SAMPLE_RATE,
    room: Room | None = None,
) -> np.ndarray:
    """Per-mic impulse responses, ``mics x length``.

    Direct path: fractional delay ``dist / c`` with gain ``1 / dist``. With
    ``reflections > 0``, shoebox image sources up to that reflection order are
    added.
    """
    _, delay, gain = propagation(geometry, source, sample_rate)
    paths = [(delay, gain)]
    if reflections > 0:
        room = room or Room()
        for pos, coeff in _image_sources(source, room, reflections):
            dist = np.linalg.norm(geometry.mic_positions - pos, axis=1)
            paths.append((dist / SPEED_OF_SOUND * sample_rate, coeff / np.maximum(dist, MIN_SOURCE_DISTANCE)))
    max_delay = max(float(np.max(d)) for d, _ in paths)
    length = int(math.ceil(max_delay)) + FRACTIONAL_DELAY_TAPS // 2 + 1
    rir = np.zeros((geometry.num_mics, length))
    for d, g in paths:
        for m in range(geometry.num_mics):
            rir[m] += g[m] * fractional_delay_filter(d[m], length)
    return rir


def spatialize(wave, rir: np.ndarray) -> MultiChannelWave:
    """Linear convolution of a mono wave with every RIR channel (full length)."""
    if isinstance(wave, MultiChannelWave):
        if wave.num_channels != 1:
            raise ValueError("spatialize expects a mono wave")
        x, sr = wave.samples[0], wave.sample_rate_hz
    else:
        x, sr = np.asarray(wave, dtype=float), SAMPLE_RATE
    if x.size == 0:
        return MultiChannelWave(np.zeros((rir.shape[0], 0)), sr)
    out = fftconvolve(x[None, :], rir, axes=1)
    return MultiChannelWave(out, sr)


# ---------------------------------------------------------------------------
# Mixing


@dataclass(frozen=True)
class MixtureSpec:
    snr_db: float
    overlap_ratio: float
    order: str
    position: BystanderPosition
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValueError("overlap_ratio must lie in [0, 1]")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")


@dataclass
class MixtureRecord:
    """A rendered utterance. ``spec`` is None for wearer-only (clean) records."""

    mixture: MultiChannelWave
    wearer_clean: MultiChannelWave
    bystander_clean: MultiChannelWave
    activity: np.ndarray
    transcript: str
    spec: MixtureSpec | None
    wearer_interval: tuple[int, int]
    bystander_interval: tuple[int, int] | None = None

    def realized_snr_db(self, channel: int = 0) -> float:
        w0, w1 = self.wearer_interval
        b0, b1 = self.bystander_interval
        pw = np.mean(self.wearer_clean.samples[channel, w0:w1] ** 2)
        pb = np.mean(self.bystander_clean.samples[channel, b0:b1] ** 2)
        return float(10 * np.log10(pw / pb))

    def realized_overlap(self) -> int:
        if self.bystander_interval is None:
            return 0
        (w0, w1), (b0, b1) = self.wearer_interval, self.bystander_interval
        return max(0, min(w1, b1) - max(w0, b0))


def bystander_gain(wearer_rms: float, bystander_rms: float, snr_db: float) -> float:
    if wearer_rms <= 0 or bystander_rms <= 0:
        raise ValueError("cannot set SNR against silence")
    return wearer_rms / bystander_rms * 10 ** (-snr_db / 20)


def _as_mono(wave) -> np.ndarray:
    if isinstance(wave, MultiChannelWave):
        if wave.num_channels != 1:
            raise ValueError("expected a mono wave")
        return wave.samples[0]
    return np.asarray(wave, dtype=float)


def _labels(length, wearer_iv, bystander_iv):
    act = np.full(length, NON_SPEECH, dtype=np.uint8)
    if bystander_iv is not None:
        act[bystander_iv[0] : bystander_iv[1]] = BYSTANDER
    # The wearer label wins where both sources are active.
    act[wearer_iv[0] : wearer_iv[1]] = WEARER
    return act


def _place(signal, rir, onset, length):
    out = np.zeros((rir.shape[0], length))
    if signal.size:
        y = fftconvolve(signal[None, :], rir, axes=1)
        out[:, onset : onset + y.shape[1]] = y
    return out


def _padding(rng, sample_rate, lead_range_s=(0.1, 0.3), trail_range_s=(0.1, 0.3)):
    lead = int(round(rng.uniform(*lead_range_s) * sample_rate))
    trail = int(round(rng.uniform(*trail_range_s) * sample_rate))
    return lead, trail


def mix_with_overlap(
    wearer,
    bystander,
    spec: MixtureSpec,
    geometry: ArrayGeometry | None = None,
    transcript: str = "",
    sample_rate: int = SAMPLE_RATE,
    reflections: int = 0,
) -> MixtureRecord:
    """Spatialize wearer and bystander and mix them at ``spec``'s SNR and overlap.

    Placement works on arrival times at the nose microphone. The overlapped
    span equals ``overlap_ratio`` times the wearer duration and sits at the
    wearer's tail (wearer-first) or head (bystander-first). Bystander audio
    shorter than the required overlap is tiled.
    """
    geometry = geometry or default_geometry()
    w = _as_mono(wearer)
    b = _as_mono(bystander)
    if w.size == 0 or b.size == 0 or not np.any(w) or not np.any(b):
        raise ValueError("cannot set SNR against silence")
    rng = np.random.default_rng(spec.seed)
    nose = geometry.nose_index

    rir_w = synth_rir(geometry, geometry.mouth_position, reflections, sample_rate)
    rir_b = synth_rir(geometry, spec.position.to_xyz(geometry), reflections, sample_rate)
    d_w = int(round(propagation(geometry, geometry.mouth_position, sample_rate)[1][nose]))
    d_b = int(round(propagation(geometry, spec.position.to_xyz(geometry), sample_rate)[1][nose]))

    len_w = w.size
    ov = int(round(spec.overlap_ratio * len_w))
    if b.size < ov:
        b = np.tile(b, -(-ov // b.size))
    len_b = b.size

    # Arrival intervals, relative to an arbitrary origin.
    if spec.order == "wearer-first":
        aw = 0
        ab = aw + len_w - ov
    else:
        ab = 0
        aw = ab + len_b - ov
    lead, trail = _padding(rng, sample_rate)
    lead += max(d_w, d_b)
    shift = lead - min(aw, ab)
    aw, ab = aw + shift, ab + shift
    onset_w, onset_b = aw - d_w, ab - d_b
    end = max(onset_w + len_w + rir_w.shape[1] - 1, onset_b + len_b + rir_b.shape[1] - 1)
    total = end + trail

    wearer_img = _place(w, rir_w, onset_w, total)
    bystander_img = _place(b, rir_b, onset_b, total)
    w_iv = (aw, aw + len_w)
    b_iv = (ab, ab + len_b)
    rms_w = np.sqrt(np.mean(wearer_img[nose, w_iv[0] : w_iv[1]] ** 2))
    rms_b = np.sqrt(np.mean(bystander_img[nose, b_iv[0] : b_iv[1]] ** 2))
    bystander_img = bystander_img * bystander_gain(rms_w, rms_b, spec.snr_db)

    return MixtureRecord(
        mixture=MultiChannelWave(wearer_img + bystander_img, sample_rate),
        wearer_clean=MultiChannelWave(wearer_img, sample_rate),
        bystander_clean=MultiChannelWave(bystander_img, sample_rate),
        activity=_labels(total, w_iv, b_iv),
        transcript=transcript,
        spec=spec,
        wearer_interval=w_iv,
        bystander_interval=b_iv,
    )


def render_clean(
    wearer,
    geometry: ArrayGeometry | None = None,
    transcript: str = "",
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
    reflections: int = 0,
) -> MixtureRecord:
    """Wearer-only record with the same padding convention as mixtures."""
    geometry = geometry or default_geometry()
    w = _as_mono(wearer)
    rng = np.random.default_rng(seed)
    rir_w = synth_rir(geometry, geometry.mouth_position, reflections, sample_rate)
    d_w = int(round(propagation(geometry, geometry.mouth_position, sample_rate)[1][geometry.nose_index]))
    lead, trail = _padding(rng, sample_rate)
    lead += d_w
    total = lead - d_w + w.size + rir_w.shape[1] - 1 + trail
    img = _place(w, rir_w, lead - d_w, total)
    w_iv = (lead, lead + w.size)
    return MixtureRecord(
        mixture=MultiChannelWave(img, sample_rate),
        wearer_clean=MultiChannelWave(img, sample_rate),
        bystander_clean=MultiChannelWave(np.zeros_like(img), sample_rate),
        activity=_labels(total, w_iv, None),
        transcript=transcript,
        spec=None,
        wearer_interval=w_iv,
    )


# ---------------------------------------------------------------------------
# Manifests


MANIFEST_FIELDS = (
    "utt_id",
    "wearer_id",
    "bystander_id",
    "wearer_path",
    "bystander_path",
    "snr_db",
    "overlap_ratio",
    "order",
    "angle_deg",
    "height_m",
    "distance_m",
    "seed",
    "transcript",
)


@dataclass
class MixtureDistribution:
    """How manifest rows are drawn.

    ``mode="random"`` draws ``per_wearer`` rows per wearer utterance with SNR and
    overlap uniform in their ranges and a random grid position and order.
    ``mode="grid"`` emits every (position, order, overlap) combination from
    ``positions`` x ``orders`` x ``overlap_grid`` with SNR drawn from ``snr_range``.
    ``mode="clean"`` emits wearer-only rows.
    """

    mode: str = "random"
    snr_range: tuple[float, float] = (10.0, 25.0)
    overlap_range: tuple[float, float] = (0.0, 1.0)
    overlap_grid: tuple[float, ...] = (0.0, 0.5)
    orders: tuple[str, ...] = ORDERS
    positions: Sequence[BystanderPosition] | None = None
    per_wearer: int = 1


@dataclass(frozen=True)
class CorpusEntry:
    utt_id: str
    path: str
    transcript: str
    pool: str


def _row(utt_id, w: CorpusEntry, b: CorpusEntry | None, snr, ov, order, pos, seed):
    return {
        "utt_id": utt_id,
        "wearer_id": w.utt_id,
        "bystander_id": None if b is None else b.utt_id,
        "wearer_path": w.path,
        "bystander_path": None if b is None else b.path,
        "snr_db": snr,
        "overlap_ratio": ov,
        "order": order,
        "angle_deg": None if pos is None else pos.angle_deg,
        "height_m": None if pos is None else pos.height_m,
        "distance_m": None if pos is None else pos.distance_m,
        "seed": seed,
        "transcript": w.transcript,
    }


def build_manifest_rows(
    wearer_corpus: Sequence[CorpusEntry],
    bystander_corpus: Sequence[CorpusEntry],
    distribution: MixtureDistribution,
    seed: int = 0,
) -> list[dict]:
    if not wearer_corpus:
        raise ValueError("empty wearer corpus")
    if distribution.mode != "clean" and not bystander_corpus:
        raise ValueError("empty bystander corpus")
    rng = np.random.default_rng(seed)
    positions = list(distribution.positions or enumerate_positions())
    rows = []

    def pick_bystander(w):
        for _ in range(100):
            b = bystander_corpus[int(rng.integers(len(bystander_corpus)))]
            if b.utt_id != w.utt_id:
                return b
        raise ValueError("no bystander utterance distinct from the wearer utterance")

    for w in wearer_corpus:
        if distribution.mode == "clean":
            rows.append(_row(f"{w.utt_id}__clean", w, None, None, None, None, None, int(rng.integers(2**31))))
        elif distribution.mode == "random":
            for k in range(distribution.per_wearer):
                b = pick_bystander(w)
                snr = float(rng.uniform(*distribution.snr_range))
                ov = float(rng.uniform(*distribution.overlap_range))
                order = distribution.orders[int(rng.integers(len(distribution.orders)))]
                pos = positions[int(rng.integers(len(positions)))]
                rows.append(_row(f"{w.utt_id}__{k}", w, b, snr, ov, order, pos, int(rng.integers(2**31))))
        elif distribution.mode == "grid":
            for pos, order, ov in itertools.product(positions, distribution.orders, distribution.overlap_grid):
                b = pick_bystander(w)
                snr = float(rng.uniform(*distribution.snr_range))
                uid = f"{w.utt_id}__a{pos.angle_deg:g}_h{pos.height_m:g}_d{pos.distance_m:g}_{order}_o{ov:g}"
                rows.append(_row(uid, w, b, snr, float(ov), order, pos, int(rng.integers(2**31))))
        else:
            raise ValueError(f"unknown distribution mode {distribution.mode!r}")
    return rows


def write_manifest(rows: Iterable[dict], out_path: str | Path) -> None:
    text = "".join(json.dumps({k: r[k] for k in MANIFEST_FIELDS}) + "\n" for r in rows)
    Path(out_path).write_text(text)


def read_manifest(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def build_manifest(
    wearer_corpus: Sequence[CorpusEntry],
    bystander_corpus: Sequence[CorpusEntry],
    distribution: MixtureDistribution,
    out_path: str | Path,
    seed: int = 0,
) -> list[dict]:
    rows = build_manifest_rows(wearer_corpus, bystander_corpus, distribution, seed)
    write_manifest(rows, out_path)
    return rows


def render_row(
    row: dict,
    load_audio: Callable[[str], np.ndarray],
    geometry: ArrayGeometry | None = None,
    reflections: int = 0,
) -> MixtureRecord:
    """Render one manifest row; a pure function of (row, geometry)."""
    wearer = load_audio(row["wearer_path"])
    if row["bystander_path"] is None:
        return render_clean(wearer, geometry, row["transcript"], row["seed"], reflections=reflections)
    spec = MixtureSpec(
        snr_db=row["snr_db"],
        overlap_ratio=row["overlap_ratio"],
        order=row["order"],
        position=BystanderPosition(row["angle_deg"], row["height_m"], row["distance_m"]),
        seed=row["seed"],
    )
    return mix_with_overlap(
        wearer, load_audio(row["bystander_path"]), spec, geometry, row["transcript"], reflections=reflections
    )
