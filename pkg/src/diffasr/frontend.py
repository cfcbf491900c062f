"""Spatial frontends: fixed microphone selection (ch-0) and the MVDR beamformer (ch-x)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, ComplexSpectrogram, MultiChannelWave, StftConfig, istft, stft
from .sim import SPEED_OF_SOUND, WEARER, ArrayGeometry, propagation

DIAGONAL_LOADING = 1e-6
LOADING_FLOOR = 1e-10


def select_microphone(geometry: ArrayGeometry) -> int:
    """Index of the mic nearest the mouth; ties go to the lowest index."""
    dist = np.linalg.norm(geometry.mic_positions - geometry.mouth_position, axis=1)
    return int(np.argmin(dist))


@dataclass(frozen=True)
class SteeringVector:
    d: np.ndarray  # freq_bins x channels
    target: np.ndarray


@dataclass(frozen=True)
class NoiseCovariance:
    R: np.ndarray  # freq_bins x channels x channels
    frame_count: int


@dataclass(frozen=True)
class BeamformerWeights:
    w: np.ndarray  # freq_bins x channels


def steering_vector(
    geometry: ArrayGeometry,
    source=None,
    stft_config: StftConfig | None = None,
    sample_rate: int = SAMPLE_RATE,
    ref_channel: int | None = None,
) -> SteeringVector:
    """Near-field steering vector normalized to the reference (ch-0) mic.

    ``d_i(f) = (g_i / g_ref) * exp(-2j*pi*f*(tau_i - tau_ref))`` with the same
    inverse-distance gains ``g`` used by the RIR synthesizer.
    """
    stft_config = stft_config or StftConfig()
    source = geometry.mouth_position if source is None else np.asarray(source, dtype=float)
    ref = select_microphone(geometry) if ref_channel is None else ref_channel
    dist, _, gain = propagation(geometry, source, sample_rate)
    tau = dist / SPEED_OF_SOUND
    freqs = stft_config.bin_frequencies(sample_rate)
    mag = gain / gain[ref]
    d = mag[None, :] * np.exp(-2j * np.pi * freqs[:, None] * (tau - tau[ref])[None, :])
    d[:, ref] = 1.0
    if np.any(np.linalg.norm(d, axis=1) == 0):
        raise ValueError("degenerate geometry: zero steering vector")
    return SteeringVector(d, source)


def estimate_noise_covariance(
    spec: ComplexSpectrogram,
    noise_frame_mask: np.ndarray | None,
    fallback: bool = True,
    loading: float = DIAGONAL_LOADING,
) -> NoiseCovariance:
    """Masked sample covariance per bin plus diagonal loading.

    With fewer than ``channels`` masked frames, the identity scaled by each
    bin's average per-channel power is used instead (if ``fallback``).
    """
    X = spec.bins  # C x F x T
    C, F, T = X.shape
    mask = np.zeros(T, bool) if noise_frame_mask is None else np.asarray(noise_frame_mask, bool)
    if mask.shape != (T,):
        raise ValueError("mask length must equal the frame count")
    K = int(mask.sum())
    if K < C:
        if not fallback:
            raise ValueError("not enough noise frames for covariance estimation")
        power = np.mean(np.abs(X) ** 2, axis=(0, 2)) if T else np.zeros(F)
        power = np.maximum(power, LOADING_FLOOR)
        R = power[:, None, None] * np.eye(C)[None]
        return NoiseCovariance(R.astype(np.complex128), 0)
    Xm = X[:, :, mask]
    R = np.einsum("cft,dft->fcd", Xm, Xm.conj()) / K
    return NoiseCovariance(load_covariance(R, loading), K)


def load_covariance(R: np.ndarray, loading: float = DIAGONAL_LOADING) -> np.ndarray:
    C = R.shape[-1]
    R = 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))
    tr = np.real(np.trace(R, axis1=-2, axis2=-1))
    eps = np.maximum(loading * tr / C, LOADING_FLOOR)
    return R + eps[..., None, None] * np.eye(C)


def mvdr_weights(R: NoiseCovariance | np.ndarray, d: SteeringVector | np.ndarray) -> BeamformerWeights:
    """``w = R^-1 d / (d^H R^-1 d)`` for every bin."""
    R = R.R if isinstance(R, NoiseCovariance) else np.asarray(R)
    d = d.d if isinstance(d, SteeringVector) else np.asarray(d)
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ValueError("covariance not PD") from None
    Rinv_d = np.linalg.solve(R, d[..., None])[..., 0]
    denom = np.einsum("...c,...c->...", d.conj(), Rinv_d)
    return BeamformerWeights(Rinv_d / denom[..., None])


def apply_beamformer(spec: ComplexSpectrogram, w: BeamformerWeights) -> ComplexSpectrogram:
    """``y = w^H x`` per bin and frame."""
    W = w.w
    if W.shape != spec.bins.shape[:2][::-1]:
        raise ValueError(f"weights {W.shape} do not match spectrogram {spec.bins.shape}")
    y = np.einsum("fc,cft->ft", W.conj(), spec.bins)
    return ComplexSpectrogram(y[None], spec.config, spec.sample_rate_hz)


def frame_mask_from_labels(activity: np.ndarray, config: StftConfig, num_frames: int | None = None) -> np.ndarray:
    """True for frames containing no wearer-labeled sample."""
    activity = np.asarray(activity)
    T = config.num_frames(activity.size) if num_frames is None else num_frames
    is_wearer = np.concatenate([[0], np.cumsum(activity == WEARER)])
    starts = np.arange(T) * config.hop_len
    counts = is_wearer[starts + config.window_len] - is_wearer[starts]
    return counts == 0


def mvdr_streaming(
    spec: ComplexSpectrogram,
    noise_frame_mask: np.ndarray,
    d: SteeringVector,
    forgetting: float = 0.95,
) -> ComplexSpectrogram:
    """Block-recursive MVDR: ``R_t = lam R_{t-1} + (1-lam) x x^H`` on noise frames.

    Weights for frame ``t`` use only frames ``<= t``. Until a noise frame has
    been seen the covariance is the loaded identity.
    """
    X = spec.bins
    C, F, T = X.shape
    R = np.broadcast_to(np.eye(C, dtype=np.complex128), (F, C, C)).copy()
    out = np.zeros((F, T), dtype=np.complex128)
    for t in range(T):
        if noise_frame_mask[t]:
            x = X[:, :, t].T  # F x C
            R = forgetting * R + (1 - forgetting) * np.einsum("fc,fd->fcd", x, x.conj())
        w = mvdr_weights(load_covariance(R), d).w
        out[:, t] = np.einsum("fc,fc->f", w.conj(), X[:, :, t].T)
    return ComplexSpectrogram(out[None], spec.config, spec.sample_rate_hz)


def beamform(
    wave: MultiChannelWave,
    geometry: ArrayGeometry,
    noise_frame_mask: np.ndarray | None,
    config: StftConfig | None = None,
) -> tuple[MultiChannelWave, BeamformerWeights]:
    """Full ch-x path: STFT, covariance, MVDR toward the mouth, ISTFT.

    The output waveform is zero-padded or trimmed to the input length.
    """
    config = config or StftConfig()
    spec = stft(wave, config)
    R = estimate_noise_covariance(spec, noise_frame_mask)
    d = steering_vector(geometry, None, config, wave.sample_rate_hz)
    w = mvdr_weights(R, d)
    y = istft(apply_beamformer(spec, w)).samples[0]
    out = np.zeros(wave.num_samples)
    out[: min(y.size, out.size)] = y[: out.size]
    return MultiChannelWave(out, wave.sample_rate_hz), w


def apply_weights_to_wave(wave: MultiChannelWave, w: BeamformerWeights, config: StftConfig | None = None) -> np.ndarray:
    """Beamform a (clean component) wave with fixed weights; returns mono samples at input length."""
    config = config or StftConfig()
    y = istft(apply_beamformer(stft(wave, config), w)).samples[0]
    out = np.zeros(wave.num_samples)
    out[: min(y.size, out.size)] = y[: out.size]
    return out


def save_weights(w: BeamformerWeights, path: str | Path) -> None:
    """Binary sidecar: int32 header (bins, channels), then per-bin rows of (re, im) float32 pairs."""
    F, C = w.w.shape
    inter = np.stack([w.w.real, w.w.imag], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(np.array([F, C], dtype="<i4").tobytes())
        fh.write(inter.tobytes())


def load_weights(path: str | Path) -> BeamformerWeights:
    raw = Path(path).read_bytes()
    F, C = np.frombuffer(raw[:8], dtype="<i4")
    inter = np.frombuffer(raw[8:], dtype="<f4").reshape(F, C, 2)
    return BeamformerWeights(inter[..., 0].astype(np.float64) + 1j * inter[..., 1])
