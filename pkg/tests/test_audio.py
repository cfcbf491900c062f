import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import check_NOLA, get_window
from scipy.signal import stft as scipy_stft

from diffasr.audio import (
    ComplexSpectrogram,
    MultiChannelWave,
    StftConfig,
    istft,
    periodic_hann,
    read_wav,
    stft,
    write_wav,
)


def test_periodic_hann_matches_scipy():
    np.testing.assert_allclose(periodic_hann(400), get_window("hann", 400, fftbins=True), atol=1e-15)


def test_default_config_is_nola():
    cfg = StftConfig()
    assert (cfg.window_len, cfg.hop_len, cfg.fft_len, cfg.num_bins) == (400, 160, 512, 257)
    assert check_NOLA(cfg.window, cfg.window_len, cfg.window_len - cfg.hop_len)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        StftConfig(window_len=400, hop_len=160, fft_len=256)
    with pytest.raises(ValueError):
        StftConfig(window_len=400, hop_len=500, fft_len=512)


def test_frame_count():
    cfg = StftConfig()
    assert cfg.num_frames(400) == 1
    assert cfg.num_frames(559) == 1
    assert cfg.num_frames(560) == 2
    assert cfg.num_frames(16000) == 98


def test_stft_matches_direct_dft(rng):
    x = rng.standard_normal(2000)
    spec = stft(MultiChannelWave(x))
    cfg = spec.config
    for t in (0, 3, spec.num_frames - 1):
        seg = x[t * cfg.hop_len : t * cfg.hop_len + cfg.window_len] * cfg.window
        np.testing.assert_allclose(spec.bins[0, :, t], np.fft.rfft(seg, cfg.fft_len), atol=1e-10)


def test_stft_agrees_with_scipy_unpadded(rng):
    x = rng.standard_normal(3200)
    ours = stft(MultiChannelWave(x)).bins[0]
    _, _, ref = scipy_stft(x, window=periodic_hann(400), nperseg=400, noverlap=240, nfft=512,
                           boundary=None, padded=False, detrend=False, scaling="spectrum")
    # scipy "spectrum" scaling divides by the window sum
    np.testing.assert_allclose(ours, ref * periodic_hann(400).sum(), atol=1e-9)


def test_too_short_raises():
    with pytest.raises(ValueError, match="too short"):
        stft(MultiChannelWave(np.zeros(399)))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(400, 6000), channels=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_istft_reconstructs_covered_samples(n, channels, seed):
    x = np.random.default_rng(seed).standard_normal((channels, n))
    y = istft(stft(MultiChannelWave(x)))
    cfg = StftConfig()
    covered = (cfg.num_frames(n) - 1) * cfg.hop_len + cfg.window_len
    assert y.num_samples == covered
    # the periodic window is exactly zero at sample 0, so only that sample is lost
    assert np.all(y.samples[:, 0] == 0)
    np.testing.assert_allclose(y.samples[:, 1:], x[:, 1:covered], atol=1e-10)


def test_istft_config_mismatch():
    spec = stft(MultiChannelWave(np.ones(1000)))
    with pytest.raises(ValueError):
        istft(spec, StftConfig(window_len=320, hop_len=160, fft_len=512))


def test_wave_validation():
    with pytest.raises(ValueError):
        MultiChannelWave(np.zeros((2, 3, 4)))
    w = MultiChannelWave(np.zeros(10))
    assert w.num_channels == 1 and w.num_samples == 10


@pytest.mark.parametrize("fmt", ["float32", "int16"])
def test_wav_roundtrip(tmp_path, rng, fmt):
    x = np.round(rng.uniform(-0.5, 0.5, (2, 800)) * 32767) / 32767
    x = x.astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "a.wav", MultiChannelWave(x), fmt)
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate_hz == 16000 and y.num_channels == 2
    np.testing.assert_allclose(y.samples, x, atol=1e-4 if fmt == "int16" else 0)
