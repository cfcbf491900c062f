"""
A sample-level side-talk detector
=================================

Train the causal TCN on simulated mixtures, check held-out accuracy, then
run it as a stream and confirm the logits match the whole-utterance pass.
Takes a few minutes on one CPU core.
"""

import numpy as np

from diffasr import corpus, pipeline, sim
from diffasr.sim import CLASS_NAMES
from diffasr.std import EmbeddingGenerator, StdStreamer, StdTrainConfig, embed_from_logits, std_forward, train_std

geometry = sim.default_geometry()
bystander_voice = corpus.VoiceConfig(f0_range=corpus.POOL_PITCH["bystander"])


def make(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        w = corpus.synth_utterance(corpus.random_transcript(rng), rng)
        b = corpus.synth_utterance(corpus.random_transcript(rng), rng, bystander_voice)
        spec = sim.MixtureSpec(
            float(rng.uniform(10, 25)),
            float(rng.uniform(0, 1)),
            sim.ORDERS[int(rng.integers(2))],
            sim.enumerate_positions()[int(rng.integers(72))],
            seed=int(rng.integers(2**31)),
        )
        fo = pipeline.run_frontends(sim.mix_with_overlap(w, b, spec, geometry), geometry)
        # detector input is [ch-0; ch-x]
        out.append((fo.std_input.astype(np.float32), fo.activity.astype(np.int64)))
    return out


train, held = make(200, 1), make(40, 2)
result = train_std(train, StdTrainConfig(), held)
print(f"{result.model.param_count} parameters, receptive field {result.model.receptive_field} samples")
print(f"held-out per-sample accuracy: {100 * result.heldout_accuracy:.1f}%")

# %%
# Confusion matrix over the held-out set (rows: truth).
cm = np.zeros((3, 3), dtype=int)
for x, y in held:
    pred = np.argmax(std_forward(x, result.model).logits, axis=1)
    np.add.at(cm, (y, pred), 1)
print("          " + "  ".join(f"{c:>10s}" for c in CLASS_NAMES))
for name, row in zip(CLASS_NAMES, cm / cm.sum(axis=1, keepdims=True)):
    print(f"{name:>10s}" + "  ".join(f"{v:10.3f}" for v in row))

# %%
# Streaming in 10 ms chunks reproduces the batch logits exactly.
x, _ = held[0]
streamer = StdStreamer(result.model)
streamed = np.concatenate([streamer.push(x[:, i : i + 160]) for i in range(0, x.shape[1], 160)])
print("stream == batch:", np.array_equal(streamed, std_forward(x, result.model).logits))

# %%
# The embedding generator turns per-sample logits into one 5-dim vector per 10 ms frame.
emb = embed_from_logits(std_forward(x, result.model), EmbeddingGenerator())
print(f"{x.shape[1]} samples -> embedding {emb.frames.shape}")
