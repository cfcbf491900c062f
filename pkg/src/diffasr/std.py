"""Side-talk detection: a causal sample-level TCN and the strided logit embedding.

Classes are ``wearer``, ``bystander`` and ``non-speech`` (indices 0, 1, 2). The
detector input is the two-channel stack ``[ch-0; ch-x]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import SAMPLE_RATE, MultiChannelWave
from .features import ConvLayer, ConvSpec, FeatureSequence

logger = logging.getLogger(__name__)

NUM_CLASSES = 3
EMBED_DIM = 5
EMBED_HIDDEN = 3
EMBED_STRIDES = (10, 16)
EMBED_KERNEL = 20


@dataclass(frozen=True)
class StdConfig:
    in_channels: int = 2
    channels: int = 32
    kernel: int = 5
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128)
    input_gain: float = 10.0
    # extra per-sample log-power channels; lets the TCN tell digital silence from quiet speech
    log_power: bool = True
    sample_rate: int = SAMPLE_RATE


@dataclass
class StdLogits:
    logits: np.ndarray  # num_samples x 3
    sample_rate_hz: int = SAMPLE_RATE


class CausalConv1d(nn.Conv1d):
    """Left-padded dilated conv.

    Training uses the library convolution. Eval mode gathers the taps and runs
    one matmul with time on the row axis, padded to at least ``MIN_ROWS`` rows,
    so each output sample gets the same arithmetic whatever the chunk length.
    That makes streamed logits bit-identical to whole-utterance logits.
    """

    MIN_ROWS = 64

    def __init__(self, cin, cout, kernel, dilation=1):
        super().__init__(cin, cout, kernel, dilation=dilation)
        self.left = (kernel - 1) * dilation

    def _taps(self, x):
        """``x`` carries ``left`` samples of history; returns ``[B, C_out, N - left]``."""
        n = x.shape[-1] - self.left
        rows = max(n, self.MIN_ROWS)
        if rows > n:
            x = F.pad(x, (0, rows - n))
        k, d = self.kernel_size[0], self.dilation[0]
        cols = torch.cat([x[..., i * d : i * d + rows] for i in range(k)], dim=1)
        w = self.weight.permute(2, 1, 0).reshape(k * self.in_channels, self.out_channels)
        y = cols.transpose(1, 2) @ w + self.bias
        return y[:, :n].transpose(1, 2)

    def forward(self, x):
        x = F.pad(x, (self.left, 0))
        return super().forward(x) if self.training else self._taps(x)

    def step(self, x, cache):
        """Streaming call: ``cache`` holds the last ``left`` input samples."""
        if self.left == 0:
            return self._taps(x), cache
        buf = torch.cat([cache, x], dim=-1)
        return self._taps(buf), buf[..., buf.shape[-1] - self.left :]


class ResidualBlock(nn.Module):
    def __init__(self, channels, kernel, dilation):
        super().__init__()
        self.conv1 = CausalConv1d(channels, channels, kernel, dilation)
        self.conv2 = CausalConv1d(channels, channels, kernel, dilation)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(F.relu(x))))

    def step(self, x, caches):
        h, c1 = self.conv1.step(F.relu(x), caches[0])
        h, c2 = self.conv2.step(F.relu(h), caches[1])
        return x + h, (c1, c2)


class StdModel(nn.Module):
    """Causal dilated TCN mapping ``[B, C, N]`` audio to ``[B, 3, N]`` logits."""

    def __init__(self, config: StdConfig = StdConfig()):
        super().__init__()
        self.config = config
        feat_channels = config.in_channels * (2 if config.log_power else 1)
        self.inp = CausalConv1d(feat_channels, config.channels, 1)
        self.blocks = nn.ModuleList(ResidualBlock(config.channels, config.kernel, d) for d in config.dilations)
        self.out = CausalConv1d(config.channels, NUM_CLASSES, 1)

    @property
    def receptive_field(self) -> int:
        return 1 + sum(2 * (self.config.kernel - 1) * d for d in self.config.dilations)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def input_features(self, x):
        """Scaled samples plus, if enabled, log power mapped to about [-1.3, 1]. Elementwise, so streaming is unaffected."""
        h = x * self.config.input_gain
        if self.config.log_power:
            h = torch.cat([h, torch.log(x * x + 1e-10) / 10 + 1], dim=1)
        return h

    def forward(self, x):
        h = self.inp(self.input_features(x))
        for block in self.blocks:
            h = block(h)
        return self.out(F.relu(h))

    def initial_state(self, batch: int = 1):
        dtype = self.out.weight.dtype
        return [
            tuple(torch.zeros(batch, self.config.channels, conv.left, dtype=dtype) for conv in (b.conv1, b.conv2))
            for b in self.blocks
        ]

    def step(self, x, state):
        h, _ = self.inp.step(self.input_features(x), None)
        new_state = []
        for block, caches in zip(self.blocks, state):
            h, caches = block.step(h, caches)
            new_state.append(caches)
        return self.out.step(F.relu(h), None)[0], new_state


def _as_input(wave, model: StdModel) -> torch.Tensor:
    if isinstance(wave, MultiChannelWave):
        if wave.sample_rate_hz != model.config.sample_rate:
            raise ValueError(f"sample-rate mismatch: {wave.sample_rate_hz} != {model.config.sample_rate}")
        x = wave.samples
    else:
        x = np.asarray(wave, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.shape[0] != model.config.in_channels:
        raise ValueError(f"expected {model.config.in_channels} input channels, got {x.shape[0]}")
    return torch.as_tensor(x, dtype=model.out.weight.dtype)[None]


def std_forward(wave, model: StdModel) -> StdLogits:
    """Batch inference; one logit triple per input sample."""
    x = _as_input(wave, model)
    model.eval()
    with torch.no_grad():
        y = model(x)[0].T.numpy()
    return StdLogits(y.astype(np.float64), model.config.sample_rate)


class StdStreamer:
    """Single-owner streaming detector; call :meth:`push` with successive chunks."""

    def __init__(self, model: StdModel):
        self.model = model.eval()
        self.state = model.initial_state()

    def push(self, chunk) -> np.ndarray:
        x = _as_input(chunk, self.model)
        with torch.no_grad():
            y, self.state = self.model.step(x, self.state)
        return y[0].T.numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Training


@dataclass
class StdTrainConfig:
    steps: int = 400
    batch_size: int = 8
    crop_len: int = 8000
    lr: float = 2e-3
    seed: int = 0
    model: StdConfig = field(default_factory=StdConfig)
    log_every: int = 50


@dataclass
class StdTrainResult:
    model: StdModel
    losses: list[float]
    heldout_accuracy: float | None


def std_accuracy(model: StdModel, examples) -> float:
    correct = total = 0
    for x, y in examples:
        pred = np.argmax(std_forward(x, model).logits, axis=1)
        correct += int(np.sum(pred == np.asarray(y)))
        total += len(y)
    return correct / max(total, 1)


def train_std(examples, config: StdTrainConfig = StdTrainConfig(), heldout=None) -> StdTrainResult:
    """Cross-entropy training on random crops.

    ``examples`` is a sequence of ``(inputs [C x N], labels [N])`` pairs.
    """
    if not examples:
        raise ValueError("empty training set")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = StdModel(config.model)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=config.lr, total_steps=config.steps, pct_start=0.1)
    losses = []
    for step in range(config.steps):
        xs, ys = [], []
        for _ in range(config.batch_size):
            x, y = examples[int(rng.integers(len(examples)))]
            n = x.shape[1]
            L = min(config.crop_len, n)
            # clamped start so the utterance edges (leading/trailing silence) are not undersampled
            s = min(max(int(rng.integers(-L + 1, n)), 0), n - L)
            xb = np.zeros((x.shape[0], config.crop_len))
            yb = np.full(config.crop_len, -100)
            xb[:, config.crop_len - L :] = x[:, s : s + L]
            yb[config.crop_len - L :] = y[s : s + L]
            xs.append(xb)
            ys.append(yb)
        xt = torch.as_tensor(np.stack(xs), dtype=torch.float32)
        yt = torch.as_tensor(np.stack(ys), dtype=torch.long)
        model.train()
        logits = model(xt)
        loss = F.cross_entropy(logits, yt, ignore_index=-100)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(loss.item())
        if config.log_every and step % config.log_every == 0:
            logger.info("std step %d loss %.4f", step, losses[-1])
    acc = std_accuracy(model, heldout) if heldout else None
    return StdTrainResult(model.eval(), losses, acc)


# ---------------------------------------------------------------------------
# Embedding generation and frame alignment


@dataclass
class StdEmbedding:
    frames: np.ndarray  # T x 5


class EmbeddingGenerator(nn.Module):
    """Two strided Conv2D layers (kernel [20, 1], strides [10, 1] and [16, 1]) over ``[B, 3, N, 1]`` logits.

    Layer 1 keeps 3 channels and is followed by batch norm and GELU; layer 2
    maps to 5 channels followed by batch norm. Each layer is left-padded by
    ``kernel - stride`` samples, giving ``floor(N / 160)`` output frames.
    """

    def __init__(self):
        super().__init__()
        s1, s2 = EMBED_STRIDES
        k = EMBED_KERNEL
        self.layer1 = ConvLayer(ConvSpec((k, 1), (s1, 1), NUM_CLASSES, EMBED_HIDDEN, "gelu", True, left_pad=k - s1))
        self.layer2 = ConvLayer(ConvSpec((k, 1), (s2, 1), EMBED_HIDDEN, EMBED_DIM, "none", True, left_pad=k - s2))

    @staticmethod
    def num_frames(num_samples: int) -> int:
        s1, s2 = EMBED_STRIDES
        k = EMBED_KERNEL
        t1 = (num_samples + k - s1 - k) // s1 + 1
        return (t1 + k - s2 - k) // s2 + 1

    def forward(self, logits: torch.Tensor) -> torch.Tensor:
        """``logits``: [B, N, 3] -> [B, T, 5]."""
        if logits.shape[1] < EMBED_KERNEL:
            raise ValueError("input shorter than one kernel")
        x = logits.permute(0, 2, 1).unsqueeze(-1)
        x = self.layer2(self.layer1(x))
        return x.squeeze(-1).permute(0, 2, 1)


def embed_from_logits(logits: StdLogits | np.ndarray, generator: EmbeddingGenerator) -> StdEmbedding:
    arr = logits.logits if isinstance(logits, StdLogits) else np.asarray(logits)
    was_training = generator.training
    generator.eval()
    dtype = next(generator.parameters()).dtype
    with torch.no_grad():
        out = generator(torch.as_tensor(arr, dtype=dtype)[None])[0]
    generator.train(was_training)
    return StdEmbedding(out.numpy().astype(np.float64))


MAX_FRAME_DIVERGENCE = 3


def align_frames(embed, feat):
    """Truncate both sequences to the shorter length.

    Accepts :class:`StdEmbedding`/:class:`FeatureSequence` or raw arrays/tensors
    with time on the first (arrays) or second (batched tensors) axis.
    """
    e = embed.frames if isinstance(embed, StdEmbedding) else embed
    f = feat.frames if isinstance(feat, FeatureSequence) else feat
    axis = 1 if isinstance(e, torch.Tensor) and e.dim() == 3 else 0
    te, tf = e.shape[axis], f.shape[axis]
    if abs(te - tf) > MAX_FRAME_DIVERGENCE:
        raise ValueError(f"frame-rate mismatch: {te} embedding frames vs {tf} feature frames")
    t = min(te, tf)
    e2 = e[:, :t] if axis else e[:t]
    f2 = f[:, :t] if axis else f[:t]
    if isinstance(embed, StdEmbedding):
        e2 = StdEmbedding(e2)
    if isinstance(feat, FeatureSequence):
        f2 = FeatureSequence(f2, feat.frame_rate_hz, feat.dim_labels)
    return e2, f2
