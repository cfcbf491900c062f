"""Toy streaming transducer: frame stacking, segmented encoder, LSTM predictor, joint network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..features import FeatureSequence

STACK_FACTOR = 6


def stack_frames(feat, factor: int = STACK_FACTOR):
    """Concatenate groups of ``factor`` frames; the last group repeats the final frame.

    Accepts a :class:`FeatureSequence`, a ``T x D`` array or a ``T x D`` tensor.
    """
    if isinstance(feat, FeatureSequence):
        out = stack_frames(feat.frames, factor)
        return FeatureSequence(out, feat.frame_rate_hz / factor, [(f"stack{factor}", out.shape[1])])
    T = feat.shape[0]
    if T < 1:
        raise ValueError("need at least one frame")
    groups = -(-T // factor)
    pad = groups * factor - T
    if isinstance(feat, torch.Tensor):
        if pad:
            feat = torch.cat([feat, feat[-1:].expand(pad, -1)], dim=0)
        return feat.reshape(groups, factor * feat.shape[1])
    feat = np.asarray(feat)
    if pad:
        feat = np.concatenate([feat, np.repeat(feat[-1:], pad, axis=0)], axis=0)
    return feat.reshape(groups, factor * feat.shape[1])


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 85 * STACK_FACTOR
    layers: int = 4
    dim: int = 128
    heads: int = 2
    ff_dim: int = 512
    segment_size: int = 2
    left_context: int = 10
    conv_kernel: int = 7
    output_dim: int = 192
    dropout: float = 0.0


def segment_attention_mask(T: int, segment: int, left: int, device=None) -> torch.Tensor:
    """Boolean ``[T, T]``; query ``t`` may see keys in ``[seg_start - left, seg_end)``."""
    t = torch.arange(T, device=device)
    start = (t // segment) * segment
    q_lo = (start - left)[:, None]
    q_hi = (start + segment)[:, None]
    k = t[None, :]
    return (k >= q_lo) & (k < q_hi)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.ln_att = nn.LayerNorm(cfg.dim)
        self.qkv = nn.Linear(cfg.dim, 3 * cfg.dim)
        self.att_out = nn.Linear(cfg.dim, cfg.dim)
        self.ln_conv = nn.LayerNorm(cfg.dim)
        self.depthwise = nn.Conv1d(cfg.dim, cfg.dim, cfg.conv_kernel, groups=cfg.dim)
        self.pointwise = nn.Linear(cfg.dim, cfg.dim)
        self.ln_ff = nn.LayerNorm(cfg.dim)
        self.ff = nn.Sequential(nn.Linear(cfg.dim, cfg.ff_dim), nn.GELU(), nn.Linear(cfg.ff_dim, cfg.dim))
        self.drop = nn.Dropout(cfg.dropout)

    def _attend(self, q_in, kv_in, mask):
        B, Tq, D = q_in.shape
        H = self.cfg.heads
        q = self.qkv(q_in)[..., :D]
        kv = self.qkv(kv_in)
        k, v = kv[..., D : 2 * D], kv[..., 2 * D :]
        split = lambda x: x.reshape(B, x.shape[1], H, D // H).transpose(1, 2)
        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // H)
        scores = scores.masked_fill(~mask, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.att_out(out)

    def _conv(self, x_padded):
        """``x_padded`` carries ``kernel - 1`` frames of history on the left."""
        h = self.depthwise(x_padded.transpose(1, 2)).transpose(1, 2)
        return self.pointwise(F.silu(h))

    def forward(self, x, mask):
        """Full-sequence pass; ``mask`` is ``[B or 1, 1, T, T]`` boolean."""
        h = self.ln_att(x)
        x = x + self.drop(self._attend(h, h, mask))
        h = self.ln_conv(x)
        x = x + self.drop(self._conv(F.pad(h, (0, 0, self.cfg.conv_kernel - 1, 0))))
        return x + self.drop(self.ff(self.ln_ff(x)))

    def step(self, seg, cache):
        """One segment with cached history: ``cache = (att_history, conv_history)``."""
        att_hist, conv_hist = cache
        ctx = torch.cat([att_hist, seg], dim=1)
        n_hist, n_seg = att_hist.shape[1], seg.shape[1]
        mask = torch.ones(n_seg, n_hist + n_seg, dtype=torch.bool)
        h_ctx = self.ln_att(ctx)
        x = seg + self._attend(h_ctx[:, n_hist:], h_ctx, mask)
        h = self.ln_conv(x)
        conv_in = torch.cat([conv_hist, h], dim=1)
        x = x + self._conv(conv_in)
        x = x + self.ff(self.ln_ff(x))
        new_att = ctx[:, -self.cfg.left_context :] if self.cfg.left_context else ctx[:, :0]
        new_conv = conv_in[:, conv_in.shape[1] - (self.cfg.conv_kernel - 1) :]
        return x, (new_att, new_conv)


class Encoder(nn.Module):
    """Segmented self-attention encoder with a hard left-context window.

    Each segment of ``segment_size`` stacked frames attends to itself and the
    ``left_context`` frames before it; a causal depthwise convolution looks back
    ``conv_kernel - 1`` frames. No memory bank is carried between segments.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.inp = nn.Linear(cfg.input_dim, cfg.dim)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.ln_out = nn.LayerNorm(cfg.dim)
        self.out = nn.Linear(cfg.dim, cfg.output_dim)

    def forward(self, x, lengths=None):
        """``x``: [B, T, input_dim] -> [B, T, output_dim]."""
        B, T, _ = x.shape
        mask = segment_attention_mask(T, self.cfg.segment_size, self.cfg.left_context, x.device)
        mask = mask[None, None].expand(B, 1, T, T)
        if lengths is not None:
            valid = torch.arange(T, device=x.device)[None, :] < torch.as_tensor(lengths, device=x.device)[:, None]
            # Padded queries keep their own position so no row is fully masked.
            mask = mask & (valid[:, None, None, :] | torch.eye(T, dtype=torch.bool, device=x.device))
        h = self.inp(x)
        for layer in self.layers:
            h = layer(h, mask)
        return self.out(self.ln_out(h))

    def initial_state(self, batch: int = 1):
        dtype = self.out.weight.dtype
        return [
            (
                torch.zeros(batch, 0, self.cfg.dim, dtype=dtype),
                torch.zeros(batch, self.cfg.conv_kernel - 1, self.cfg.dim, dtype=dtype),
            )
            for _ in self.layers
        ]

    def step(self, seg, state):
        h = self.inp(seg)
        new_state = []
        for layer, cache in zip(self.layers, state):
            h, cache = layer.step(h, cache)
            new_state.append(cache)
        return self.out(self.ln_out(h)), new_state


class EncoderStreamer:
    """Buffers stacked frames and emits encoder output one whole segment at a time."""

    def __init__(self, encoder: Encoder):
        self.encoder = encoder.eval()
        self.state = encoder.initial_state()
        self.buffer = []

    def push(self, frames) -> torch.Tensor:
        """Feed ``[n, input_dim]`` stacked frames; returns ``[m, output_dim]`` (possibly ``m = 0``)."""
        self.buffer.extend(torch.as_tensor(frames, dtype=self.encoder.out.weight.dtype).unbind(0))
        outs = []
        seg = self.encoder.cfg.segment_size
        while len(self.buffer) >= seg:
            chunk, self.buffer = self.buffer[:seg], self.buffer[seg:]
            outs.append(self._run(chunk))
        return torch.cat(outs, 0) if outs else torch.zeros(0, self.encoder.cfg.output_dim)

    def flush(self) -> torch.Tensor:
        if not self.buffer:
            return torch.zeros(0, self.encoder.cfg.output_dim)
        chunk, self.buffer = self.buffer, []
        return self._run(chunk)

    def _run(self, chunk):
        with torch.no_grad():
            y, self.state = self.encoder.step(torch.stack(chunk)[None], self.state)
        return y[0]


@dataclass(frozen=True)
class PredictorConfig:
    vocab_size: int = 29
    blank_id: int = 0
    embed_dim: int = 64
    hidden: int = 128
    layers: int = 2
    output_dim: int = 192


class Predictor(nn.Module):
    """Token embedding, stacked LSTM and projection. The blank id doubles as start-of-sequence."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.lstm = nn.LSTM(cfg.embed_dim, cfg.hidden, cfg.layers, batch_first=True)
        self.proj = nn.Linear(cfg.hidden, cfg.output_dim)

    def _check(self, tokens):
        if tokens.numel() and (
            int(tokens.min()) < 0 or int(tokens.max()) >= self.cfg.vocab_size or bool((tokens == self.cfg.blank_id).any())
        ):
            raise ValueError("invalid token id for the predictor")

    def forward(self, tokens: torch.Tensor, state=None, prepend_sos: bool = True):
        """``tokens``: [B, U] -> ([B, U+1, output_dim], state) when ``prepend_sos``."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() == 1:
            tokens = tokens[None]
        self._check(tokens)
        if prepend_sos:
            sos = torch.full((tokens.shape[0], 1), self.cfg.blank_id, dtype=torch.long)
            tokens = torch.cat([sos, tokens], dim=1)
        h, state = self.lstm(self.embed(tokens), state)
        return self.proj(h), state

    def start(self, batch: int = 1):
        """Output and state after consuming only start-of-sequence."""
        sos = torch.full((batch, 1), self.cfg.blank_id, dtype=torch.long)
        h, state = self.lstm(self.embed(sos))
        return self.proj(h)[:, 0], state

    def step(self, token: int, state):
        tok = torch.tensor([[token]], dtype=torch.long)
        self._check(tok)
        h, state = self.lstm(self.embed(tok), state)
        return self.proj(h)[:, 0], state


class Joint(nn.Module):
    def __init__(self, enc_dim: int, pred_dim: int, joint_dim: int, vocab_size: int):
        super().__init__()
        self.enc_proj = nn.Linear(enc_dim, joint_dim)
        self.pred_proj = nn.Linear(pred_dim, joint_dim, bias=False)
        self.out = nn.Linear(joint_dim, vocab_size)

    def forward(self, enc, pred):
        """Broadcasting joint: ``enc [..., E]`` and ``pred [..., P]`` -> log-probs ``[..., V]``."""
        return F.log_softmax(self.out(torch.tanh(self.enc_proj(enc) + self.pred_proj(pred))), dim=-1)

    def lattice(self, enc, pred):
        """``enc [B, T, E]``, ``pred [B, U+1, P]`` -> ``[B, T, U+1, V]``."""
        return self(enc[:, :, None, :], pred[:, None, :, :])


@dataclass(frozen=True)
class TransducerConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    joint_dim: int = 192


class Transducer(nn.Module):
    def __init__(self, cfg: TransducerConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder)
        self.predictor = Predictor(cfg.predictor)
        self.joint = Joint(cfg.encoder.output_dim, cfg.predictor.output_dim, cfg.joint_dim, cfg.predictor.vocab_size)

    @property
    def blank_id(self) -> int:
        return self.cfg.predictor.blank_id


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    frames: list[int] = field(default_factory=list)
    log_prob: float = 0.0


class GreedyDecoder:
    """Frame-synchronous greedy search; feed encoder frames as they arrive."""

    def __init__(self, model: Transducer, max_symbols_per_frame: int = 5):
        self.model = model
        self.max_symbols = max_symbols_per_frame
        self.hyp = Hypothesis()
        self.frame_index = 0
        with torch.no_grad():
            self.pred_out, self.state = model.predictor.start()

    def push(self, enc_frames) -> Hypothesis:
        with torch.no_grad():
            for enc in torch.as_tensor(enc_frames):
                for _ in range(self.max_symbols):
                    lp = self.model.joint(enc[None], self.pred_out)[0]
                    k = int(torch.argmax(lp))
                    self.hyp.log_prob += float(lp[k])
                    if k == self.model.blank_id:
                        break
                    self.hyp.tokens.append(k)
                    self.hyp.frames.append(self.frame_index)
                    self.pred_out, self.state = self.model.predictor.step(k, self.state)
                self.frame_index += 1
        return self.hyp


def greedy_decode(encodings, model: Transducer, max_symbols_per_frame: int = 5) -> Hypothesis:
    """``encodings``: ``[T, E]`` encoder output for one utterance."""
    was_training = model.training
    model.eval()
    dec = GreedyDecoder(model, max_symbols_per_frame)
    hyp = dec.push(encodings)
    model.train(was_training)
    return hyp
