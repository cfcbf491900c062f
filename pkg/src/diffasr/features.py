"""Log-Mel features and the causal Conv2D+GLU stack fusing ch-x and ch-0."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import SAMPLE_RATE, MultiChannelWave, StftConfig, stft

N_MELS = 80
LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # n_mels x freq_bins
    fmin: float
    fmax: float


def mel_filterbank(
    n_mels: int = N_MELS,
    config: StftConfig | None = None,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> MelFilterbank:
    """HTK-scale triangular filters on the STFT bin grid."""
    config = config or StftConfig()
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = config.bin_frequencies(sample_rate)
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    W = np.maximum(0.0, np.minimum(up, down))
    # Narrow low bands can fall between bins; give each at least its nearest bin.
    for m in np.flatnonzero(W.sum(axis=1) <= 0):
        W[m, int(np.argmin(np.abs(freqs - mid[m, 0])))] = 1.0
    return MelFilterbank(W, fmin, fmax)


@dataclass
class FeatureSequence:
    frames: np.ndarray  # T x D
    frame_rate_hz: float = 100.0
    dim_labels: list[tuple[str, int]] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def log_mel(
    wave: MultiChannelWave | np.ndarray,
    config: StftConfig | None = None,
    filterbank: MelFilterbank | None = None,
) -> FeatureSequence:
    config = config or StftConfig()
    if not isinstance(wave, MultiChannelWave):
        wave = MultiChannelWave(np.asarray(wave, dtype=float))
    if wave.num_channels != 1:
        raise ValueError("log_mel expects a mono wave")
    filterbank = filterbank or mel_filterbank(config=config, sample_rate=wave.sample_rate_hz)
    spec = stft(wave, config).bins[0]  # F x T
    mel = filterbank.weights @ (np.abs(spec) ** 2)
    feats = np.log(np.maximum(mel, LOG_FLOOR)).T
    return FeatureSequence(feats, wave.sample_rate_hz / config.hop_len, [("mel", feats.shape[1])])


class FeatureNormalizer:
    """Global per-dimension mean/variance normalization fit on training features."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, features) -> "FeatureNormalizer":
        stacked = np.concatenate([np.asarray(f) for f in features], axis=0)
        return cls(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-5))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / self.std

    def state_dict(self):
        return {"mean": self.mean, "std": self.std}


# ---------------------------------------------------------------------------
# Conv2D building block


@dataclass(frozen=True)
class ConvSpec:
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    in_channels: int = 1
    out_channels: int = 1
    activation: str = "none"  # "glu", "gelu" or "none"
    batch_norm: bool = False
    causal_pad: bool = True
    left_pad: int | None = None  # overrides the causal kernel-1 time padding

    def __post_init__(self):
        if min(self.stride) < 1 or min(self.kernel) < 1:
            raise ValueError("kernel and stride must be >= 1")
        if self.activation not in ("glu", "gelu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "glu" and self.out_channels % 2:
            raise ValueError("GLU needs an even pre-activation channel count")

    @property
    def time_pad(self) -> int:
        if self.left_pad is not None:
            return self.left_pad
        return self.kernel[0] - 1 if self.causal_pad else 0

    def out_size(self, t: int, f: int) -> tuple[int, int]:
        t_out = (t + self.time_pad - self.kernel[0]) // self.stride[0] + 1
        f_out = (f - self.kernel[1]) // self.stride[1] + 1
        return t_out, f_out


def glu(x: torch.Tensor, dim: int = 1) -> torch.Tensor:
    a, b = x.chunk(2, dim=dim)
    return a * torch.sigmoid(b)


def conv2d_forward(x: torch.Tensor, spec: ConvSpec, weight, bias=None, bn: nn.BatchNorm2d | None = None):
    """Cross-correlation over ``[batch, channels, time, freq]`` with optional causal time padding.

    Order: conv, batch norm, activation. GLU halves the channel dimension.
    """
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    if spec.time_pad:
        x = F.pad(x, (0, 0, spec.time_pad, 0))
    if x.shape[2] < spec.kernel[0] or x.shape[3] < spec.kernel[1]:
        raise ValueError(f"input {tuple(x.shape[2:])} smaller than kernel {spec.kernel}")
    y = F.conv2d(x, weight, bias, stride=spec.stride)
    if bn is not None:
        y = bn(y)
    if spec.activation == "glu":
        y = glu(y)
    elif spec.activation == "gelu":
        y = F.gelu(y)
    return y


class ConvLayer(nn.Module):
    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        self.conv = nn.Conv2d(spec.in_channels, spec.out_channels, spec.kernel, spec.stride)
        self.bn = nn.BatchNorm2d(spec.out_channels) if spec.batch_norm else None

    def forward(self, x):
        return conv2d_forward(x, self.spec, self.conv.weight, self.conv.bias, self.bn)


class ChannelFeatureStack(nn.Module):
    """Two causal Conv2D+BN+GLU layers (kernel [2, 5], stride [1, 2]) then a linear map to ``out_dim``."""

    def __init__(self, n_mels: int = N_MELS, hidden: int = 4, out_dim: int = 40):
        super().__init__()
        self.layers = nn.ModuleList(
            [
                ConvLayer(ConvSpec((2, 5), (1, 2), 1, 2 * hidden, "glu", True)),
                ConvLayer(ConvSpec((2, 5), (1, 2), hidden, 2 * hidden, "glu", True)),
            ]
        )
        f = n_mels
        for layer in self.layers:
            f = layer.spec.out_size(1, f)[1]
        self.freq_out = f
        self.proj = nn.Linear(hidden * f, out_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """``mel``: [B, T, F] -> [B, T, out_dim]."""
        x = mel.unsqueeze(1)
        for layer in self.layers:
            x = layer(x)
        B, C, T, Fq = x.shape
        return self.proj(x.permute(0, 2, 1, 3).reshape(B, T, C * Fq))


class FeatureFusion(nn.Module):
    """Halve each channel's log-Mel to 40 dims and concatenate: [40 ch-x | 40 ch-0]."""

    def __init__(self, n_mels: int = N_MELS, hidden: int = 4):
        super().__init__()
        self.chx = ChannelFeatureStack(n_mels, hidden, n_mels // 2)
        self.ch0 = ChannelFeatureStack(n_mels, hidden, n_mels // 2)

    def forward(self, mel_chx: torch.Tensor, mel_ch0: torch.Tensor) -> torch.Tensor:
        if mel_chx.shape[-2] != mel_ch0.shape[-2]:
            raise ValueError("align first")
        return torch.cat([self.chx(mel_chx), self.ch0(mel_ch0)], dim=-1)


def fuse_features(mel_chx, mel_ch0, fusion: FeatureFusion) -> FeatureSequence:
    """Inference-mode fusion of two ``T x 80`` log-Mel sequences."""
    a = mel_chx.frames if isinstance(mel_chx, FeatureSequence) else np.asarray(mel_chx)
    b = mel_ch0.frames if isinstance(mel_ch0, FeatureSequence) else np.asarray(mel_ch0)
    if a.shape[0] != b.shape[0]:
        raise ValueError("align first")
    was_training = fusion.training
    fusion.eval()
    dtype = next(fusion.parameters()).dtype
    with torch.no_grad():
        out = fusion(torch.as_tensor(a, dtype=dtype)[None], torch.as_tensor(b, dtype=dtype)[None])[0]
    fusion.train(was_training)
    half = out.shape[1] // 2
    return FeatureSequence(out.numpy().astype(np.float64), 100.0, [("ch-x", half), ("ch-0", half)])


# ---------------------------------------------------------------------------
# Dump format


def write_feature_dump(path: str | Path, feats: FeatureSequence) -> None:
    """Header ``int32 T, int32 D, float32 frame_rate`` then row-major float32 frames."""
    T, D = feats.frames.shape
    with open(path, "wb") as fh:
        fh.write(np.array([T, D], dtype="<i4").tobytes())
        fh.write(np.array([feats.frame_rate_hz], dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(feats.frames, dtype="<f4").tobytes())


def read_feature_dump(path: str | Path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    T, D = np.frombuffer(raw[:8], dtype="<i4")
    rate = float(np.frombuffer(raw[8:12], dtype="<f4")[0])
    frames = np.frombuffer(raw[12:], dtype="<f4").reshape(T, D).astype(np.float64)
    return FeatureSequence(frames, rate)
