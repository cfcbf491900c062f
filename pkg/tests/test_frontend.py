import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffasr.audio import MultiChannelWave, StftConfig, stft
from diffasr.frontend import (
    BeamformerWeights,
    apply_beamformer,
    apply_weights_to_wave,
    beamform,
    estimate_noise_covariance,
    frame_mask_from_labels,
    load_weights,
    mvdr_streaming,
    mvdr_weights,
    save_weights,
    select_microphone,
    steering_vector,
)
from diffasr.sim import WEARER, ArrayGeometry, BystanderPosition, MixtureSpec, default_geometry, mix_with_overlap

from oracles import random_pd


def test_select_microphone_nose():
    assert select_microphone(default_geometry()) == 0


def test_select_microphone_tie_lowest_index():
    # a tie cannot pass geometry validation, so exercise the rule on a bare object
    class G:
        mic_positions = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0]])
        mouth_position = np.zeros(3)

    assert select_microphone(G) == 0


def test_steering_vector_reference_and_phase():
    g = default_geometry()
    cfg = StftConfig()
    sv = steering_vector(g, None, cfg)
    assert sv.d.shape == (257, 5)
    np.testing.assert_allclose(sv.d[:, 0], 1.0)
    np.testing.assert_allclose(sv.d[0], np.abs(sv.d[0]))
    # unit magnitude ratio across frequency per channel
    np.testing.assert_allclose(np.abs(sv.d), np.abs(sv.d[:1]).repeat(257, 0))


def test_steering_vector_matches_simulated_transfer():
    g = default_geometry()
    cfg = StftConfig()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(8000)
    rec = mix_with_overlap(x, rng.standard_normal(8000), MixtureSpec(60.0, 0.0, "wearer-first", BystanderPosition(0, 0, 2)))
    spec = stft(rec.wearer_clean, cfg).bins
    ratio = np.sum(spec * spec[:1].conj(), axis=2) / np.sum(np.abs(spec[:1]) ** 2, axis=2)  # C x F
    d = steering_vector(g, None, cfg).d.T
    band = slice(10, 200)
    assert np.median(np.abs(ratio[:, band] - d[:, band])) < 0.05


@settings(max_examples=50, deadline=None)
@given(C=st.integers(2, 5), seed=st.integers(0, 10_000))
def test_mvdr_distortionless_and_minimal(C, seed):
    rng = np.random.default_rng(seed)
    R = random_pd(rng, C)
    d = rng.standard_normal(C) + 1j * rng.standard_normal(C)
    w = mvdr_weights(R[None], d[None]).w[0]
    assert abs(np.vdot(w, d) - 1) < 1e-10
    out = np.real(np.vdot(w, R @ w))
    for _ in range(20):
        v = rng.standard_normal(C) + 1j * rng.standard_normal(C)
        v = v + np.conj(1 - np.vdot(v, d)) * d / np.vdot(d, d)
        assert abs(np.vdot(v, d) - 1) < 1e-10
        assert out <= np.real(np.vdot(v, R @ v)) + 1e-9


def test_mvdr_rejects_non_pd():
    R = np.array([[[1.0, 0], [0, -1.0]]], dtype=complex)
    with pytest.raises(ValueError, match="not PD"):
        mvdr_weights(R, np.ones((1, 2)))


def test_identity_covariance_gives_matched_filter(rng):
    d = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    w = mvdr_weights(np.broadcast_to(np.eye(3), (4, 3, 3)), d).w
    np.testing.assert_allclose(w, d / np.sum(np.abs(d) ** 2, axis=1, keepdims=True))


def test_covariance_estimate_and_fallback(rng):
    x = rng.standard_normal((3, 4000))
    spec = stft(MultiChannelWave(x))
    T = spec.num_frames
    mask = np.zeros(T, bool)
    mask[::2] = True
    cov = estimate_noise_covariance(spec, mask)
    assert cov.frame_count == mask.sum()
    np.testing.assert_allclose(cov.R, np.conj(np.swapaxes(cov.R, 1, 2)))
    assert np.all(np.linalg.eigvalsh(cov.R) > 0)
    fb = estimate_noise_covariance(spec, np.zeros(T, bool))
    assert fb.frame_count == 0
    np.testing.assert_allclose(fb.R[5], fb.R[5, 0, 0] * np.eye(3))
    with pytest.raises(ValueError):
        estimate_noise_covariance(spec, np.zeros(T, bool), fallback=False)
    with pytest.raises(ValueError):
        estimate_noise_covariance(spec, np.zeros(T + 1, bool))


def test_apply_beamformer_shape_check(rng):
    spec = stft(MultiChannelWave(rng.standard_normal((2, 1000))))
    with pytest.raises(ValueError):
        apply_beamformer(spec, BeamformerWeights(np.ones((257, 3))))
    y = apply_beamformer(spec, BeamformerWeights(np.ones((257, 2)) / 2))
    np.testing.assert_allclose(y.bins[0], spec.bins.mean(0))


def test_frame_mask_from_labels():
    cfg = StftConfig()
    act = np.full(2000, 2, dtype=np.uint8)
    act[800:900] = WEARER
    mask = frame_mask_from_labels(act, cfg)
    assert mask.size == cfg.num_frames(2000)
    for t, m in enumerate(mask):
        assert m == (not np.any(act[t * 160 : t * 160 + 400] == WEARER))


def test_beamformer_suppresses_bystander():
    rng = np.random.default_rng(3)
    g = default_geometry()
    spec = MixtureSpec(0.0, 0.5, "wearer-first", BystanderPosition(90.0, 0.0, 1.0), seed=1)
    rec = mix_with_overlap(rng.standard_normal(16000) * 0.1, rng.standard_normal(16000) * 0.1, spec, g)
    y, W = beamform(rec.mixture, g, frame_mask_from_labels(rec.activity, StftConfig()))
    assert y.num_samples == rec.mixture.num_samples
    yw = apply_weights_to_wave(rec.wearer_clean, W)
    yb = apply_weights_to_wave(rec.bystander_clean, W)
    (w0, w1), (b0, b1) = rec.wearer_interval, rec.bystander_interval
    snr_out = 10 * np.log10(np.mean(yw[w0:w1] ** 2) / np.mean(yb[b0:b1] ** 2))
    assert snr_out - rec.realized_snr_db() > 10


def test_streaming_mvdr_is_causal(rng):
    g = default_geometry()
    x = rng.standard_normal((5, 3000))
    spec = stft(MultiChannelWave(x))
    mask = np.ones(spec.num_frames, bool)
    d = steering_vector(g)
    full = mvdr_streaming(spec, mask, d).bins
    x2 = x.copy()
    x2[:, 2000:] = rng.standard_normal((5, 1000))
    spec2 = stft(MultiChannelWave(x2))
    part = mvdr_streaming(spec2, mask, d).bins
    t_safe = (2000 - 400) // 160 + 1
    np.testing.assert_allclose(full[..., :t_safe], part[..., :t_safe])
    assert not np.allclose(full[..., -1], part[..., -1])


def test_weights_sidecar_roundtrip(tmp_path, rng):
    w = BeamformerWeights(rng.standard_normal((257, 5)) + 1j * rng.standard_normal((257, 5)))
    save_weights(w, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin")
    np.testing.assert_allclose(back.w, w.w, rtol=1e-6)
    assert (tmp_path / "w.bin").stat().st_size == 8 + 257 * 5 * 8
