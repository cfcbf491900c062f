"""Time/frequency primitives: multi-channel waves, STFT/ISTFT, RMS and WAVE I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class MultiChannelWave:
    """Real-valued audio, ``channels x num_samples``."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"expected channels x samples, got shape {x.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def channel(self, index: int) -> "MultiChannelWave":
        return MultiChannelWave(self.samples[index : index + 1], self.sample_rate_hz)


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 400
    hop_len: int = 160
    fft_len: int = 512
    window: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (1 <= self.hop_len <= self.window_len <= self.fft_len):
            raise ValueError("need hop_len <= window_len <= fft_len")
        win = periodic_hann(self.window_len) if self.window is None else np.asarray(self.window, float)
        if win.shape != (self.window_len,):
            raise ValueError("window length does not match window_len")
        # Weighted overlap-add needs sum_t w^2(n - t*hop) > 0 everywhere (NOLA).
        hops = int(np.ceil(self.window_len / self.hop_len))
        acc = np.zeros(self.hop_len)
        padded = np.zeros(hops * self.hop_len)
        padded[: self.window_len] = win**2
        for k in range(hops):
            acc += padded[k * self.hop_len : (k + 1) * self.hop_len]
        if np.min(acc) <= 1e-12:
            raise ValueError("window/hop pair violates the nonzero overlap-add condition")
        object.__setattr__(self, "window", win)

    def __eq__(self, other):
        if not isinstance(other, StftConfig):
            return NotImplemented
        return (
            (self.window_len, self.hop_len, self.fft_len) == (other.window_len, other.hop_len, other.fft_len)
            and np.array_equal(self.window, other.window)
        )

    def __hash__(self):
        return hash((self.window_len, self.hop_len, self.fft_len, self.window.tobytes()))

    @property
    def num_bins(self) -> int:
        return self.fft_len // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len:
            return 0
        return 1 + (num_samples - self.window_len) // self.hop_len

    def bin_frequencies(self, sample_rate_hz: int = SAMPLE_RATE) -> np.ndarray:
        return np.arange(self.num_bins) * sample_rate_hz / self.fft_len


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Per-channel STFT, ``channels x freq_bins x frames``."""

    bins: np.ndarray
    config: StftConfig
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 3 or b.shape[1] != self.config.num_bins:
            raise ValueError(f"expected channels x {self.config.num_bins} x frames, got {b.shape}")
        object.__setattr__(self, "bins", b)

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[2]


def stft(wave: MultiChannelWave, config: StftConfig | None = None) -> ComplexSpectrogram:
    """Unpadded STFT; frame ``t`` covers samples ``[t*hop, t*hop + window_len)``."""
    config = config or StftConfig()
    x = wave.samples
    if x.shape[1] < config.window_len:
        raise ValueError("input too short")
    n_frames = config.num_frames(x.shape[1])
    idx = np.arange(config.window_len)[None, :] + config.hop_len * np.arange(n_frames)[:, None]
    frames = x[:, idx] * config.window  # C x T x W
    spec = np.fft.rfft(frames, n=config.fft_len, axis=-1)  # C x T x F
    return ComplexSpectrogram(np.transpose(spec, (0, 2, 1)), config, wave.sample_rate_hz)


def istft(spec: ComplexSpectrogram, config: StftConfig | None = None) -> MultiChannelWave:
    """Weighted overlap-add synthesis normalized by the summed squared window.

    The output has ``(frames - 1) * hop + window_len`` samples. Samples with no
    window coverage (sample 0, where the periodic window vanishes) come out as zero.
    """
    config = config or spec.config
    if config != spec.config:
        raise ValueError("STFT config does not match the one used for analysis")
    n_ch, _, n_frames = spec.bins.shape
    n_out = (n_frames - 1) * config.hop_len + config.window_len if n_frames else 0
    frames = np.fft.irfft(np.transpose(spec.bins, (0, 2, 1)), n=config.fft_len, axis=-1)
    frames = frames[..., : config.window_len] * config.window
    out = np.zeros((n_ch, n_out))
    norm = np.zeros(n_out)
    w2 = config.window**2
    for t in range(n_frames):
        s = t * config.hop_len
        out[:, s : s + config.window_len] += frames[:, t]
        norm[s : s + config.window_len] += w2
    nz = norm > 1e-12
    out[:, nz] /= norm[nz]
    return MultiChannelWave(out, spec.sample_rate_hz)


def rms(wave: MultiChannelWave, channel: int = 0) -> float:
    x = wave.samples[channel]
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x**2)))


def read_wav(path: str | Path) -> MultiChannelWave:
    """Read 16-bit PCM or 32-bit float RIFF/WAVE into float samples."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported sample format {data.dtype}")
    x = x.T if x.ndim == 2 else x[None, :]
    return MultiChannelWave(x, int(sr))


def write_wav(path: str | Path, wave: MultiChannelWave, sample_format: str = "float32") -> None:
    """Write little-endian WAVE; ``sample_format`` is ``"float32"`` or ``"int16"``."""
    x = wave.samples.T
    if sample_format == "float32":
        data = x.astype("<f4")
    elif sample_format == "int16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    else:
        raise ValueError(f"unknown sample format {sample_format!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(path, wave.sample_rate_hz, data)
