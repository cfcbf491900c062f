"""
Memorizing a toy set with the streaming transducer
==================================================

Build 50 noisy utterances, run the frozen frontends, and train the
chx+ch0+embed variant until it reproduces every transcript. A freshly
initialized detector stands in for a trained one to keep the demo short.
Roughly five minutes on one CPU core.
"""

import numpy as np
import torch

from diffasr import corpus, pipeline, sim
from diffasr.asr import AsrExample, AsrTrainConfig, EncoderStreamer, GreedyDecoder, stack_frames, train_asr
from diffasr.eval import wer_corpus
from diffasr.std import StdModel

geometry = sim.default_geometry()
rng = np.random.default_rng(3)
detector = StdModel().eval()

examples = []
for i in range(50):
    text = corpus.random_transcript(rng)
    w = corpus.synth_utterance(text, rng)
    b = corpus.synth_utterance(corpus.random_transcript(rng), rng, corpus.VoiceConfig(f0_range=corpus.POOL_PITCH["bystander"]))
    spec = sim.MixtureSpec(
        float(rng.uniform(10, 25)),
        float(rng.uniform(0, 1)),
        sim.ORDERS[int(rng.integers(2))],
        sim.enumerate_positions()[int(rng.integers(72))],
        seed=i,
    )
    fo = pipeline.run_frontends(sim.mix_with_overlap(w, b, spec, geometry, text), geometry, detector)
    examples.append(AsrExample(fo.mel_chx, fo.mel_ch0, fo.std_logits, text, str(i)))

config = AsrTrainConfig(steps=800, batch_size=16, peak_lr=2e-3, warmup_steps=150, hold_steps=350, log_every=100)
result = train_asr(examples, "chx+ch0+embed", config)
for rec in result.log:
    print(f"step {rec['step']:4d}  loss/token {rec['loss']:.4f}  lr {rec['lr']:.2e}")

hyps = result.model.transcribe(examples)
print(f"training WER: {100 * wer_corpus([e.transcript for e in examples], hyps):.1f}%")
for e, h in list(zip(examples, hyps))[:5]:
    print(f"  ref {e.transcript!r:30s} hyp {h!r}")

# %%
# Streaming decode: stacked frames arrive one at a time and the encoder emits
# a whole 2-frame segment (120 ms of audio) as soon as it is complete.
model = result.model
with torch.no_grad():
    feats = stack_frames(model.frame_features([examples[0]])[0])
enc = EncoderStreamer(model.transducer.encoder)
dec = GreedyDecoder(model.transducer)
for t in range(feats.shape[0]):
    dec.push(enc.push(feats[t : t + 1]))
dec.push(enc.flush())
print("streamed:", repr(model.vocab.decode(dec.hyp.tokens)), "emission frames:", dec.hyp.frames)
