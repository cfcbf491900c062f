"""Per-utterance frontend pass: mixture -> ch-0, ch-x, log-Mels and STD logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import MultiChannelWave, StftConfig
from .features import log_mel, mel_filterbank
from .frontend import beamform, frame_mask_from_labels, select_microphone
from .sim import WEARER, ArrayGeometry, MixtureRecord
from .std import StdModel, std_forward


@dataclass
class FrontendOutput:
    ch0: np.ndarray
    chx: np.ndarray
    activity: np.ndarray
    mel_ch0: np.ndarray
    mel_chx: np.ndarray
    std_logits: np.ndarray | None = None
    transcript: str = ""

    @property
    def std_input(self) -> np.ndarray:
        return np.stack([self.ch0, self.chx])


def run_frontends(
    record: MixtureRecord,
    geometry: ArrayGeometry,
    std_model: StdModel | None = None,
    config: StftConfig | None = None,
    noise_mask: str = "labels",
) -> FrontendOutput:
    """Microphone selection, MVDR toward the mouth, log-Mel, and (optionally) STD.

    ``noise_mask="labels"`` estimates the noise covariance on frames without
    ground-truth wearer activity. ``noise_mask="std"`` runs a first pass with the
    fallback covariance, labels frames with the detector, then beamforms again.
    """
    config = config or StftConfig()
    fb = mel_filterbank(config=config)
    mix = record.mixture
    ch0 = mix.samples[select_microphone(geometry)]
    if noise_mask == "labels":
        mask = frame_mask_from_labels(record.activity, config)
    elif noise_mask == "std":
        if std_model is None:
            raise ValueError("noise_mask='std' needs an STD model")
        first, _ = beamform(mix, geometry, None, config)
        pred = np.argmax(std_forward(np.stack([ch0, first.samples[0]]), std_model).logits, axis=1)
        mask = frame_mask_from_labels(np.where(pred == WEARER, WEARER, 2), config)
    else:
        raise ValueError(f"unknown noise mask source {noise_mask!r}")
    chx_wave, _ = beamform(mix, geometry, mask, config)
    chx = chx_wave.samples[0]
    out = FrontendOutput(
        ch0=ch0,
        chx=chx,
        activity=record.activity,
        mel_ch0=log_mel(MultiChannelWave(ch0, mix.sample_rate_hz), config, fb).frames,
        mel_chx=log_mel(chx_wave, config, fb).frames,
        transcript=record.transcript,
    )
    if std_model is not None:
        out.std_logits = std_forward(out.std_input, std_model).logits
    return out
