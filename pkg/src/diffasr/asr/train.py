"""Variant-specific input assembly, transducer training and batch decoding."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..features import N_MELS, FeatureFusion
from ..std import EmbeddingGenerator, align_frames
from .loss import rnnt_loss
from .model import STACK_FACTOR, EncoderConfig, Hypothesis, PredictorConfig, Transducer, TransducerConfig, greedy_decode, stack_frames
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

VARIANTS = ("chx", "chx+embed", "chx+ch0", "chx+ch0+embed")


def variant_dim(variant: str) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return N_MELS + (5 if "embed" in variant else 0)


@dataclass
class AsrExample:
    mel_chx: np.ndarray
    mel_ch0: np.ndarray | None
    std_logits: np.ndarray | None
    transcript: str
    utt_id: str = ""


def toy_transducer_config(variant: str, vocab: Vocabulary, **overrides) -> TransducerConfig:
    enc = EncoderConfig(input_dim=variant_dim(variant) * STACK_FACTOR, **overrides.pop("encoder", {}))
    pred = PredictorConfig(vocab_size=len(vocab), blank_id=vocab.blank_id, output_dim=enc.output_dim, **overrides.pop("predictor", {}))
    return TransducerConfig(enc, pred, **overrides)


class DifferentialAsr(nn.Module):
    """Trainable fusion front plus transducer for one input variant.

    The log-Mel normalizer statistics are fixed buffers; the STD detector is not
    part of this module (its logits arrive precomputed and frozen).
    """

    def __init__(self, variant: str, vocab: Vocabulary, config: TransducerConfig | None = None, mel_stats=None):
        super().__init__()
        self.variant = variant
        self.vocab = vocab
        self.dim = variant_dim(variant)
        self.uses_ch0 = "ch0" in variant
        self.uses_embed = "embed" in variant
        self.fusion = FeatureFusion() if self.uses_ch0 else None
        self.embedder = EmbeddingGenerator() if self.uses_embed else None
        self.transducer = Transducer(config or toy_transducer_config(variant, vocab))
        if self.transducer.cfg.encoder.input_dim != self.dim * STACK_FACTOR:
            raise ValueError("variant/feature-dim mismatch")
        mean, std = mel_stats if mel_stats is not None else (np.zeros((2, N_MELS)), np.ones((2, N_MELS)))
        self.register_buffer("mel_mean", torch.as_tensor(np.asarray(mean), dtype=torch.float32).reshape(2, N_MELS))
        self.register_buffer("mel_std", torch.as_tensor(np.asarray(std), dtype=torch.float32).reshape(2, N_MELS))

    @staticmethod
    def fit_mel_stats(examples) -> tuple[np.ndarray, np.ndarray]:
        """Global per-dimension statistics for ch-x (row 0) and ch-0 (row 1)."""
        rows = []
        for attr in ("mel_chx", "mel_ch0"):
            mats = [getattr(e, attr) for e in examples if getattr(e, attr) is not None]
            if not mats:
                rows.append((np.zeros(N_MELS), np.ones(N_MELS)))
                continue
            stacked = np.concatenate(mats, axis=0)
            rows.append((stacked.mean(0), np.maximum(stacked.std(0), 1e-5)))
        return np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows])

    # -- input assembly ------------------------------------------------------

    def _pad(self, mats, width):
        T = max(m.shape[0] for m in mats)
        out = torch.zeros(len(mats), T, width)
        for i, m in enumerate(mats):
            out[i, : m.shape[0]] = torch.as_tensor(m, dtype=torch.float32)
        return out

    def frame_features(self, batch: list[AsrExample]) -> list[torch.Tensor]:
        """Per-utterance ``[T_b, D]`` frame-rate features (before stacking)."""
        lengths = [e.mel_chx.shape[0] for e in batch]
        chx = (self._pad([e.mel_chx for e in batch], N_MELS) - self.mel_mean[0]) / self.mel_std[0]
        if self.uses_ch0:
            for e in batch:
                if e.mel_ch0 is None or e.mel_ch0.shape[0] != e.mel_chx.shape[0]:
                    raise ValueError("align first")
            ch0 = (self._pad([e.mel_ch0 for e in batch], N_MELS) - self.mel_mean[1]) / self.mel_std[1]
            feats = self.fusion(chx, ch0)
        else:
            feats = chx
        out = [feats[i, : lengths[i]] for i in range(len(batch))]
        if self.uses_embed:
            if any(e.std_logits is None for e in batch):
                raise ValueError("variant needs STD logits")
            emb = self.embedder(self._pad([e.std_logits for e in batch], 3))
            merged = []
            for i, e in enumerate(batch):
                n_emb = EmbeddingGenerator.num_frames(e.std_logits.shape[0])
                em, ft = align_frames(emb[i, :n_emb], out[i])
                merged.append(torch.cat([ft, em], dim=-1))
            out = merged
        return out

    def encode(self, batch: list[AsrExample]):
        stacked = [stack_frames(f) for f in self.frame_features(batch)]
        lengths = torch.tensor([s.shape[0] for s in stacked])
        x = nn.utils.rnn.pad_sequence(stacked, batch_first=True)
        return self.transducer.encoder(x, lengths), lengths

    def loss(self, batch: list[AsrExample]) -> torch.Tensor:
        enc, enc_len = self.encode(batch)
        targets = [self.vocab.encode(e.transcript) for e in batch]
        U = max(len(t) for t in targets)
        tgt = torch.zeros(len(batch), U, dtype=torch.long)
        for i, t in enumerate(targets):
            tgt[i, : len(t)] = torch.tensor(t, dtype=torch.long)
        tgt_len = torch.tensor([len(t) for t in targets])
        # Padding positions use a valid non-blank id; they are never scored.
        pred_in = torch.where(tgt == self.vocab.blank_id, torch.ones_like(tgt), tgt)
        pred, _ = self.transducer.predictor(pred_in)
        lattice = self.transducer.joint.lattice(enc, pred)
        losses = rnnt_loss(lattice, tgt, enc_len, tgt_len, blank=self.vocab.blank_id)
        return losses.sum() / tgt_len.sum().clamp(min=1)

    def decode(self, batch: list[AsrExample], max_symbols_per_frame: int = 5) -> list[Hypothesis]:
        was_training = self.training
        self.eval()
        with torch.no_grad():
            enc, lengths = self.encode(batch)
        hyps = [greedy_decode(enc[i, : lengths[i]], self.transducer, max_symbols_per_frame) for i in range(len(batch))]
        self.train(was_training)
        return hyps

    def transcribe(self, batch: list[AsrExample]) -> list[str]:
        return [self.vocab.decode(h.tokens) for h in self.decode(batch)]


# ---------------------------------------------------------------------------
# Training


@dataclass
class AsrTrainConfig:
    steps: int = 2000
    batch_size: int = 16
    peak_lr: float = 1e-3
    warmup_steps: int = 500
    hold_steps: int = 0
    init_lr_scale: float = 0.01
    final_lr_scale: float = 0.05
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    weight_decay: float = 1e-6
    grad_clip: float = 5.0
    seed: int = 0
    log_every: int = 1
    time_budget_s: float | None = None
    stop_loss: float | None = None
    model_overrides: dict = field(default_factory=dict)


def tri_stage_lr(step: int, cfg: AsrTrainConfig) -> float:
    """Linear warmup, constant hold, exponential decay to ``final_lr_scale * peak``."""
    peak = cfg.peak_lr
    if step < cfg.warmup_steps:
        return peak * (cfg.init_lr_scale + (1 - cfg.init_lr_scale) * step / cfg.warmup_steps)
    step -= cfg.warmup_steps
    if step < cfg.hold_steps:
        return peak
    step -= cfg.hold_steps
    decay_steps = max(cfg.steps - cfg.warmup_steps - cfg.hold_steps, 1)
    return peak * math.exp(math.log(cfg.final_lr_scale) * min(step / decay_steps, 1.0))


@dataclass
class AsrTrainResult:
    model: DifferentialAsr
    log: list[dict]


def train_asr(
    examples: list[AsrExample],
    variant: str,
    config: AsrTrainConfig = AsrTrainConfig(),
    vocab: Vocabulary | None = None,
    log_path: str | Path | None = None,
) -> AsrTrainResult:
    """Transducer training of one variant; deterministic for a fixed seed.

    The log holds one record per logged step: ``step``, ``loss``, ``lr`` and
    ``wall_time`` (seconds since start, the only non-deterministic field).
    """
    if not examples:
        raise ValueError("empty training set")
    variant_dim(variant)
    vocab = vocab or Vocabulary.characters()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = DifferentialAsr(
        variant,
        vocab,
        toy_transducer_config(variant, vocab, **config.model_overrides),
        DifferentialAsr.fit_mel_stats(examples),
    )
    opt = torch.optim.Adam(
        model.parameters(), lr=config.peak_lr, betas=config.betas, eps=config.eps, weight_decay=config.weight_decay
    )
    log = []
    fh = open(log_path, "w") if log_path else None
    start = time.perf_counter()
    order = []
    try:
        for step in range(config.steps):
            if len(order) < config.batch_size:
                order.extend(rng.permutation(len(examples)).tolist())
            idx, order = order[: config.batch_size], order[config.batch_size :]
            lr = tri_stage_lr(step, config)
            for g in opt.param_groups:
                g["lr"] = lr
            model.train()
            loss = model.loss([examples[i] for i in idx])
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            rec = {"step": step, "loss": loss.item(), "lr": lr, "wall_time": round(time.perf_counter() - start, 3)}
            if step % config.log_every == 0:
                log.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
                logger.info("asr %s step %d loss %.4f lr %.2e", variant, step, rec["loss"], lr)
            if config.time_budget_s is not None and rec["wall_time"] > config.time_budget_s:
                break
            if config.stop_loss is not None and rec["loss"] < config.stop_loss:
                break
    finally:
        if fh:
            fh.close()
    return AsrTrainResult(model.eval(), log)
