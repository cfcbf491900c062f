"""Acceptance criteria, one test per criterion.

Each test records a one-line verdict that ``conftest.py`` prints in the
terminal summary. Criterion 10 is informational and never fails the run.
"""

import math
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE
from diffasr import corpus, pipeline, sim
from diffasr.asr import AsrExample, AsrTrainConfig, EncoderStreamer, GreedyDecoder, greedy_decode, rnnt_loss, train_asr
from diffasr.asr.model import STACK_FACTOR, Encoder, EncoderConfig, Transducer, stack_frames
from diffasr.asr.train import DifferentialAsr, toy_transducer_config
from diffasr.asr.vocab import Vocabulary
from diffasr.audio import MultiChannelWave, StftConfig
from diffasr.eval import wer, wer_corpus, werr
from diffasr.features import FeatureFusion, fuse_features, log_mel
from diffasr.frontend import apply_weights_to_wave, beamform, frame_mask_from_labels, mvdr_weights
from diffasr.std import EmbeddingGenerator, StdModel, StdStreamer, StdTrainConfig, align_frames, embed_from_logits, std_accuracy, std_forward, train_std

from oracles import edit_table, random_pd, rnnt_bruteforce

GEOMETRY = sim.default_geometry()
BYSTANDER_VOICE = corpus.VoiceConfig(f0_range=corpus.POOL_PITCH["bystander"])


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_mixture(rng, **fixed):
    text = corpus.random_transcript(rng)
    w = corpus.synth_utterance(text, rng)
    b = corpus.synth_utterance(corpus.random_transcript(rng), rng, BYSTANDER_VOICE)
    pos = fixed.get("position") or sim.enumerate_positions()[int(rng.integers(72))]
    spec = sim.MixtureSpec(
        fixed.get("snr_db", float(rng.uniform(10, 25))),
        fixed.get("overlap_ratio", float(rng.uniform(0, 1))),
        fixed.get("order", sim.ORDERS[int(rng.integers(2))]),
        pos,
        seed=int(rng.integers(2**31)),
    )
    return sim.mix_with_overlap(w, b, spec, GEOMETRY, text)


# ---------------------------------------------------------------------------
# 1. MVDR correctness


def test_criterion_01_mvdr_correctness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_gain, worst_excess = 0.0, -np.inf
    for _ in range(1000):
        C = int(rng.integers(2, 6))
        R = random_pd(rng, C, cond=float(rng.uniform(2, 1e3)))
        d = rng.standard_normal(C) + 1j * rng.standard_normal(C)
        w = mvdr_weights(R[None], d[None]).w[0]
        worst_gain = max(worst_gain, abs(np.vdot(w, d) - 1))
        V = rng.standard_normal((100, C)) + 1j * rng.standard_normal((100, C))
        # project onto the feasible set v^H d = 1
        V = V + np.conj(1 - V.conj() @ d)[:, None] * d[None, :] / np.vdot(d, d)
        out = np.real(np.vdot(w, R @ w))
        cand = np.real(np.einsum("kc,cd,kd->k", V.conj(), R, V))
        worst_excess = max(worst_excess, float(np.max(out - cand) / max(out, 1e-300)))
    elapsed = time.perf_counter() - start
    ok = worst_gain < 1e-10 and worst_excess <= 1e-9 and elapsed < 10
    record(1, ok, f"max|w^H d - 1|={worst_gain:.1e}, max rel excess={worst_excess:.1e}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. Beamformer benefit


def test_criterion_02_beamformer_benefit():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    cfg = StftConfig()
    gains = []
    for _ in range(50):
        rec = random_mixture(rng, snr_db=10.0, position=sim.BystanderPosition(90.0, 0.0, 1.0), overlap_ratio=0.5)
        _, W = beamform(rec.mixture, GEOMETRY, frame_mask_from_labels(rec.activity, cfg), cfg)
        yw = apply_weights_to_wave(rec.wearer_clean, W, cfg)
        yb = apply_weights_to_wave(rec.bystander_clean, W, cfg)
        (w0, w1), (b0, b1) = rec.wearer_interval, rec.bystander_interval
        out_snr = 10 * np.log10(np.mean(yw[w0:w1] ** 2) / np.mean(yb[b0:b1] ** 2))
        gains.append(out_snr - rec.realized_snr_db(GEOMETRY.nose_index))
    elapsed = time.perf_counter() - start
    med = float(np.median(gains))
    ok = med >= 3.0 and elapsed < 120
    record(2, ok, f"median SNR gain {med:.1f} dB over nose channel (min {min(gains):.1f}), {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. RNN-T loss oracle


def test_criterion_03_rnnt_loss_oracle():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst_loss, worst_grad = 0.0, 0.0
    eps = 1e-6
    for _ in range(1000):
        T, U, V = int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(2, 6))
        logits = rng.standard_normal((T, U + 1, V))
        lp = logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)
        tgt = rng.integers(1, V, U)
        x = torch.tensor(lp, requires_grad=True)
        loss = rnnt_loss(x, torch.tensor(tgt))
        loss.backward()
        worst_loss = max(worst_loss, abs(loss.item() - rnnt_bruteforce(lp, tgt)))
        # central differences for every lattice entry, evaluated as one batch
        n = lp.size
        bumps = np.eye(n).reshape(n, T, U + 1, V) * eps
        batch = torch.tensor(np.concatenate([lp[None] + bumps, lp[None] - bumps]))
        with torch.no_grad():
            vals = rnnt_loss(batch, torch.tensor(np.tile(tgt, (2 * n, 1)).reshape(2 * n, U))).numpy()
        fd = (vals[:n] - vals[n:]) / (2 * eps)
        g = x.grad.numpy().ravel()
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
        worst_grad = max(worst_grad, float(rel.max()))
    elapsed = time.perf_counter() - start
    ok = worst_loss < 1e-6 and worst_grad < 1e-4 and elapsed < 60
    record(3, ok, f"max loss err {worst_loss:.1e}, max grad rel err {worst_grad:.1e}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. Frame-rate alignment


def test_criterion_04_frame_rate_alignment():
    rng = np.random.default_rng(4)
    torch.manual_seed(4)
    cfg = StftConfig()
    fusion = FeatureFusion().eval()
    gen = EmbeddingGenerator().eval()
    vocab = Vocabulary.characters()
    model = DifferentialAsr("chx+ch0+embed", vocab).eval()
    failures = []
    for _ in range(200):
        n = int(rng.integers(8000, 160_001))
        mel = log_mel(MultiChannelWave(rng.standard_normal(n) * 0.01), cfg).frames
        T = mel.shape[0]
        fused = fuse_features(mel, mel, fusion).frames
        emb = embed_from_logits(rng.standard_normal((n, 3)), gen).frames
        emb_a, fused_a = align_frames(emb, fused)
        ex = AsrExample(mel, mel, rng.standard_normal((n, 3)), "a")
        with torch.no_grad():
            frames = model.frame_features([ex])[0]
        stacked = stack_frames(frames)
        good = (
            T == cfg.num_frames(n)
            and fused.shape[0] == T
            and emb_a.shape[0] == fused_a.shape[0] == T
            and frames.shape[0] == T
            and stacked.shape[0] == math.ceil(T / 6)
        )
        if not good:
            failures.append(n)
    ok = not failures
    record(4, ok, f"{200 - len(failures)}/200 lengths aligned (mel = fused = embed, stacked = ceil(T/6))")
    assert ok, failures[:5]


# ---------------------------------------------------------------------------
# 5. Streaming equivalence


def test_criterion_05_streaming_equivalence():
    rng = np.random.default_rng(5)
    torch.manual_seed(5)
    # STD: arbitrary chunking must reproduce batch logits exactly
    std = StdModel().eval()
    x = rng.standard_normal((2, 16000)) * 0.05
    batch = std_forward(x, std).logits
    streamer = StdStreamer(std)
    cuts = np.cumsum(rng.integers(1, 1500, 40))
    cuts = cuts[cuts < 16000]
    pieces = [streamer.push(c) for c in np.split(x, cuts, axis=1)]
    std_exact = np.array_equal(np.concatenate(pieces), batch)

    # Encoder: segment-by-segment vs full sequence
    vocab = Vocabulary.characters()
    tcfg = toy_transducer_config("chx+ch0+embed", vocab)
    model = Transducer(tcfg).eval()
    with torch.no_grad():
        model.joint.out.bias[vocab.blank_id] -= 2.0  # make the untrained decoder emit
    feats = torch.randn(1, 23, tcfg.encoder.input_dim)
    with torch.no_grad():
        full = model.encoder(feats)[0]
    enc_stream = EncoderStreamer(model.encoder)
    first = enc_stream.push(feats[0, :1]).shape[0]
    second = enc_stream.push(feats[0, 1:2]).shape[0]
    outs = []
    enc_stream2 = EncoderStreamer(model.encoder)
    dec = GreedyDecoder(model)
    for t in range(feats.shape[1]):
        out = enc_stream2.push(feats[0, t : t + 1])
        outs.append(out)
        dec.push(out)
    tail = enc_stream2.flush()
    outs.append(tail)
    dec.push(tail)
    streamed = torch.cat(outs)
    enc_err = float((streamed - full).abs().max())
    batch_hyp = greedy_decode(full, model)
    decode_equal = dec.hyp.tokens == batch_hyp.tokens and dec.hyp.frames == batch_hyp.frames

    # one-layer ablation: outputs ignore frames older than the left context window
    one = Encoder(EncoderConfig(input_dim=tcfg.encoder.input_dim, layers=1)).eval()
    with torch.no_grad():
        a = one(feats)
        f2 = feats.clone()
        f2[:, :6] = torch.randn(1, 6, tcfg.encoder.input_dim)
        b = one(f2)
    reach = tcfg.encoder.left_context + tcfg.encoder.conv_kernel - 1 + tcfg.encoder.segment_size
    context_limited = torch.equal(a[:, 6 + reach :], b[:, 6 + reach :])

    latency_ms = tcfg.encoder.segment_size * STACK_FACTOR * 10
    ok = std_exact and enc_err <= 1e-5 and decode_equal and first == 0 and second == 2 and latency_ms == 120 and context_limited
    record(
        5,
        ok,
        f"STD bit-exact={std_exact}, encoder max err {enc_err:.1e}, decode equal={decode_equal}, "
        f"first emission after 2 stacked frames={first == 0 and second == 2} ({latency_ms} ms), left-context limit={context_limited}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 6. Simulator fidelity


def test_criterion_06_simulator_fidelity():
    rng = np.random.default_rng(6)
    snr_err, ov_err = 0.0, 0
    for _ in range(500):
        rec = random_mixture(rng, snr_db=float(rng.uniform(-5, 30)))
        snr_err = max(snr_err, abs(rec.realized_snr_db(GEOMETRY.nose_index) - rec.spec.snr_db))
        w0, w1 = rec.wearer_interval
        ov_err = max(ov_err, abs(rec.realized_overlap() - rec.spec.overlap_ratio * (w1 - w0)))
    n_pos = len(sim.enumerate_positions())
    ok = snr_err <= 0.1 and ov_err <= 160 and n_pos == 72
    record(6, ok, f"max SNR err {snr_err:.2e} dB, max overlap err {ov_err:.1f} samples, {n_pos} positions")
    assert ok


# ---------------------------------------------------------------------------
# 7. WER / WERR arithmetic


def test_criterion_07_wer_arithmetic():
    rng = np.random.default_rng(7)
    words = np.array(["a", "b", "c", "d", "e"])
    mismatches = 0
    for _ in range(1000):
        ref = list(rng.choice(words, int(rng.integers(1, 12))))
        hyp = list(rng.choice(words, int(rng.integers(0, 12))))
        res = wer(ref, hyp)
        mismatches += res.errors != edit_table(ref, hyp)[-1, -1]
    a = round(100 * werr(7.36, 6.30), 1)
    b = round(100 * werr(11.79, 11.19), 1)
    ok = mismatches == 0 and a == 14.4 and b == 5.1
    record(7, ok, f"{1000 - mismatches}/1000 match DP oracle; werr(7.36, 6.30)={a}%, werr(11.79, 11.19)={b}%")
    assert ok


# ---------------------------------------------------------------------------
# 8. Toy STD


def std_examples(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        fo = pipeline.run_frontends(random_mixture(rng), GEOMETRY)
        out.append((fo.std_input.astype(np.float32), fo.activity.astype(np.int64)))
    return out


@pytest.fixture(scope="session")
def trained_std():
    start = time.perf_counter()
    train, held = std_examples(200, 81), std_examples(40, 82)
    res = train_std(train, StdTrainConfig(), held)
    return res, held, time.perf_counter() - start


def test_criterion_08_toy_std(trained_std):
    res, held, elapsed = trained_std
    acc = res.heldout_accuracy
    ok = acc >= 0.90 and elapsed < 15 * 60
    record(8, ok, f"held-out per-sample accuracy {100 * acc:.1f}% ({res.model.param_count} params), {elapsed:.0f}s incl. data")
    assert ok


# ---------------------------------------------------------------------------
# 9. Toy ASR overfit

ASR_OVERFIT = AsrTrainConfig(steps=800, batch_size=16, peak_lr=2e-3, warmup_steps=150, hold_steps=350, final_lr_scale=0.05)


def asr_examples(n, seed, std_model):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        rec = random_mixture(rng)
        fo = pipeline.run_frontends(rec, GEOMETRY, std_model)
        out.append(AsrExample(fo.mel_chx, fo.mel_ch0, fo.std_logits, rec.transcript, f"{seed}-{i}"))
    return out


def test_criterion_09_toy_asr_overfit(trained_std):
    std_model = trained_std[0].model
    start = time.perf_counter()
    data = asr_examples(50, 91, std_model)
    res = train_asr(data, "chx+ch0+embed", ASR_OVERFIT)
    hyps = res.model.transcribe(data)
    elapsed = time.perf_counter() - start
    score = wer_corpus([e.transcript for e in data], hyps)
    exact = sum(h == e.transcript for h, e in zip(hyps, data))
    memorized = hyps[0] == data[0].transcript
    ok = score < 0.05 and memorized and elapsed < 30 * 60
    record(9, ok, f"training WER {100 * score:.1f}% on 50 utts, {exact}/50 exact, utt 0 recovered={memorized}, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 10. Trend check (informational)

TREND_TRAIN = AsrTrainConfig(steps=1500, batch_size=16, peak_lr=2e-3, warmup_steps=150, hold_steps=600, final_lr_scale=0.05, seed=10)


def test_criterion_10_trend_check(trained_std):
    std_model = trained_std[0].model
    start = time.perf_counter()
    train = asr_examples(400, 101, std_model)
    test = asr_examples(500, 102, std_model)
    refs = [e.transcript for e in test]
    scores = {}
    for variant in ("chx", "chx+ch0+embed"):
        model = train_asr(train, variant, TREND_TRAIN).model
        hyps = []
        for i in range(0, len(test), 50):
            hyps += model.transcribe(test[i : i + 50])
        scores[variant] = wer_corpus(refs, hyps)
    elapsed = time.perf_counter() - start
    holds = scores["chx+ch0+embed"] <= scores["chx"]
    record(
        10,
        True,
        f"informational: noisy chx {100 * scores['chx']:.1f}% vs chx+ch0+embed {100 * scores['chx+ch0+embed']:.1f}% "
        f"(trend {'holds' if holds else 'does not hold'}; seeds train=101 test=102 model=10), {elapsed:.0f}s",
    )
