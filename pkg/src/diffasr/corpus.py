"""Tiny synthetic speech corpus and corpus manifests.

Every character maps to a fixed "phone": a harmonic complex shaped by two
formant peaks (voiced letters) or a band of noise (fricative letters). Words
are separated by short pauses. The wearer and bystander pools use disjoint
utterance ids and different pitch ranges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, MultiChannelWave, read_wav, write_wav
from .sim import CorpusEntry

LEXICON = (
    "the and was for you his her she they what when with from have this that "
    "were will one all would there their out more some time can said each "
    "which them like into made than first been its who now find long down day "
    "did get come may part over new sound take only little work know place "
    "year live me back give most very after thing our just name good man "
    "think say great where help through much before line right too mean old "
    "any same tell boy follow came want show also around form three small"
).split()

FRICATIVES = {"s": 5200.0, "f": 6400.0, "h": 3000.0, "z": 4600.0, "x": 3800.0, "j": 2600.0}
_F1 = (300.0, 450.0, 600.0, 750.0, 900.0)
_F2 = (900.0, 1200.0, 1550.0, 1900.0, 2300.0, 2700.0)

POOL_PITCH = {"wearer": (100.0, 150.0), "bystander": (170.0, 240.0)}
LICENSE = "synthetic; generated locally; public domain (CC0)"


def _formant_table():
    voiced = [c for c in "abcdefghijklmnopqrstuvwxyz" if c not in FRICATIVES]
    pairs = [(f1, f2) for f2 in _F2 for f1 in _F1]
    # Spread letters over the grid so neighbors in the alphabet differ in both formants.
    step = 7
    return {c: pairs[(i * step) % len(pairs)] for i, c in enumerate(voiced)}


FORMANTS = _formant_table()


@dataclass(frozen=True)
class VoiceConfig:
    f0_range: tuple[float, float] = (100.0, 150.0)
    char_dur_s: tuple[float, float] = (0.09, 0.12)
    word_gap_s: tuple[float, float] = (0.025, 0.04)
    level_rms: float = 0.02
    sample_rate: int = SAMPLE_RATE


def _envelope(n, sr, ramp_s=0.012):
    r = min(int(ramp_s * sr), n // 2)
    env = np.ones(n)
    if r > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = ramp
        env[-r:] = ramp[::-1]
    return env


def synth_char(ch: str, f0: float, n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(n) / sr
    if ch in FRICATIVES:
        noise = rng.standard_normal(n)
        spec = np.fft.rfft(noise)
        f = np.fft.rfftfreq(n, 1 / sr)
        spec *= np.exp(-0.5 * ((f - FRICATIVES[ch]) / 500.0) ** 2)
        y = np.fft.irfft(spec, n) * 0.6
    elif ch == "'":
        return np.zeros(n)
    else:
        f1, f2 = FORMANTS[ch]
        glide = f0 * (1 + 0.04 * np.sin(np.pi * t / t[-1] if n > 1 else 0))
        phase = 2 * np.pi * np.cumsum(glide) / sr
        y = np.zeros(n)
        for k in range(1, int(7000 // f0) + 1):
            fk = k * f0
            amp = np.exp(-0.5 * ((fk - f1) / 90.0) ** 2) + 0.8 * np.exp(-0.5 * ((fk - f2) / 120.0) ** 2) + 0.03
            y += amp * np.sin(k * phase)
    y /= np.sqrt(np.mean(y**2)) + 1e-12
    return y * _envelope(n, sr)


def synth_utterance(text: str, rng: np.random.Generator, voice: VoiceConfig = VoiceConfig()) -> np.ndarray:
    sr = voice.sample_rate
    f0 = rng.uniform(*voice.f0_range)
    pieces = []
    for i, word in enumerate(text.split(" ")):
        if i:
            pieces.append(np.zeros(int(rng.uniform(*voice.word_gap_s) * sr)))
        for ch in word:
            n = int(rng.uniform(*voice.char_dur_s) * sr)
            pieces.append(synth_char(ch, f0 * rng.uniform(0.97, 1.03), n, rng, sr))
    y = np.concatenate(pieces)
    y *= voice.level_rms / (np.sqrt(np.mean(y**2)) + 1e-12)
    return y.astype(np.float32).astype(np.float64)


def random_transcript(rng: np.random.Generator, words: tuple[int, int] = (2, 4)) -> str:
    n = int(rng.integers(words[0], words[1] + 1))
    return " ".join(LEXICON[int(i)] for i in rng.integers(len(LEXICON), size=n))


@dataclass
class CorpusConfig:
    root: str
    per_pool: int = 120
    seed: int = 0
    words: tuple[int, int] = (2, 4)
    librispeech_root: str | None = None


def generate_corpus(config: CorpusConfig) -> list[CorpusEntry]:
    """Write both synthetic pools under ``config.root``; idempotent for a fixed config."""
    root = Path(config.root)
    manifest = root / "corpus.jsonl"
    stamp = root / "corpus_config.json"
    wanted = json.dumps({"per_pool": config.per_pool, "seed": config.seed, "words": list(config.words)}, sort_keys=True)
    if manifest.exists() and stamp.exists() and stamp.read_text() == wanted:
        return read_corpus_manifest(manifest)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for p, pool in enumerate(("wearer", "bystander")):
        rng = np.random.default_rng([config.seed, p])
        voice = VoiceConfig(f0_range=POOL_PITCH[pool])
        (root / pool).mkdir(exist_ok=True)
        for i in range(config.per_pool):
            utt_id = f"{pool}-{i:04d}"
            text = random_transcript(rng, config.words)
            path = root / pool / f"{utt_id}.wav"
            write_wav(path, MultiChannelWave(synth_utterance(text, rng, voice)))
            entries.append(CorpusEntry(utt_id, str(path), text, pool))
    write_corpus_manifest(entries, manifest)
    (root / "LICENSE.txt").write_text(LICENSE + "\n")
    stamp.write_text(wanted)
    return entries


def fetch_or_generate_corpus(config: CorpusConfig) -> list[CorpusEntry]:
    """Use a local LibriSpeech copy when configured, else synthesize offline."""
    if config.librispeech_root:
        return librispeech_entries(config.librispeech_root)
    return generate_corpus(config)


def librispeech_entries(root: str | Path) -> list[CorpusEntry]:
    """Index a user-supplied LibriSpeech tree converted to WAVE.

    ``test-clean`` feeds the wearer pool, ``test-other`` the bystander pool.
    """
    entries = []
    for subset, pool in (("test-clean", "wearer"), ("test-other", "bystander")):
        for trans in sorted(Path(root, subset).rglob("*.trans.txt")):
            for line in trans.read_text().splitlines():
                utt_id, _, text = line.partition(" ")
                wav = trans.parent / f"{utt_id}.wav"
                if wav.exists():
                    entries.append(CorpusEntry(utt_id, str(wav), text.lower(), pool))
    if not entries:
        raise FileNotFoundError(f"no LibriSpeech WAVE files found under {root}")
    return entries


def write_corpus_manifest(entries, path: str | Path) -> None:
    Path(path).write_text(
        "".join(
            json.dumps({"utt_id": e.utt_id, "path": e.path, "transcript": e.transcript, "pool": e.pool}) + "\n"
            for e in entries
        )
    )


def read_corpus_manifest(path: str | Path) -> list[CorpusEntry]:
    return [CorpusEntry(**json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


def load_mono(path: str) -> np.ndarray:
    wave = read_wav(path)
    if wave.sample_rate_hz != SAMPLE_RATE:
        raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {wave.sample_rate_hz}")
    return wave.samples[0]


def pool(entries, name: str) -> list[CorpusEntry]:
    return [e for e in entries if e.pool == name]
