"""Toy-scale streaming transducer ASR."""

from .loss import rnnt_loss
from .model import (
    EncoderConfig,
    Encoder,
    EncoderStreamer,
    GreedyDecoder,
    Hypothesis,
    Joint,
    Predictor,
    PredictorConfig,
    Transducer,
    TransducerConfig,
    greedy_decode,
    segment_attention_mask,
    stack_frames,
)
from .train import VARIANTS, AsrExample, AsrTrainConfig, DifferentialAsr, train_asr, tri_stage_lr, variant_dim
from .vocab import Vocabulary
