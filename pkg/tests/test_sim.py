import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffasr.corpus import load_mono, pool
from diffasr.sim import (
    BYSTANDER,
    NON_SPEECH,
    SPEED_OF_SOUND,
    WEARER,
    ArrayGeometry,
    BystanderPosition,
    MixtureDistribution,
    MixtureSpec,
    Room,
    build_manifest,
    build_manifest_rows,
    bystander_gain,
    default_geometry,
    enumerate_positions,
    fractional_delay_filter,
    load_geometry,
    mix_with_overlap,
    propagation,
    read_manifest,
    render_clean,
    render_row,
    save_geometry,
    spatialize,
    synth_rir,
)


def tone(n, f=300.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 16000
    return np.sin(2 * np.pi * f * t) * 0.1 + 0.01 * rng.standard_normal(n)


def test_default_geometry_nose_is_closest():
    g = default_geometry()
    assert g.num_mics == 5 and g.labels[g.nose_index] == "nose"
    d = np.linalg.norm(g.mic_positions - g.mouth_position, axis=1)
    assert np.argmin(d) == g.nose_index


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry([(0, 0, 1), (0, 0, 0.5)], (0, 0, 0), ("nose", "nose"))
    with pytest.raises(ValueError):
        ArrayGeometry([(0, 0, 1), (0, 0, 0.5)], (0, 0, 0), ("nose", "temple"))


def test_geometry_file_roundtrip(tmp_path):
    g = default_geometry()
    save_geometry(g, tmp_path / "g.txt")
    h = load_geometry(tmp_path / "g.txt")
    np.testing.assert_array_equal(g.mic_positions, h.mic_positions)
    assert g.labels == h.labels


def test_enumerate_positions_grid():
    pos = enumerate_positions()
    assert len(pos) == 72 and len(set(pos)) == 72
    assert {p.angle_deg for p in pos} == {0, 45, 90, 135, 180, 225, 270, 315}
    assert {p.height_m for p in pos} == {-0.5, 0.0, 0.5}
    assert {p.distance_m for p in pos} == {0.5, 1.0, 2.0}


def test_angle_convention():
    front = BystanderPosition(0.0, 0.0, 1.0).to_xyz()
    left = BystanderPosition(90.0, 0.0, 1.0).to_xyz()
    np.testing.assert_allclose(front, [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(left, [-1, 0, 0], atol=1e-12)


@pytest.mark.parametrize("delay", [0.0, 0.25, 0.5, 3.7])
def test_fractional_delay_shifts_band_limited_signal(delay):
    n = 512
    x = tone(n, 500.0)
    h = fractional_delay_filter(delay, 64)
    y = np.convolve(x, h)[:n]
    t = np.arange(n) / 16000
    ref = np.sin(2 * np.pi * 500.0 * (t - delay / 16000)) * 0.1
    sl = slice(80, 400)
    # compare against the noiseless tone with a generous tolerance for the noise term
    assert np.max(np.abs(y[sl] - ref[sl])) < 0.05


def test_propagation_gains_and_delays():
    g = default_geometry()
    dist, delay, gain = propagation(g, np.array([0.0, 2.0, 0.0]))
    np.testing.assert_allclose(delay, dist / SPEED_OF_SOUND * 16000)
    np.testing.assert_allclose(gain, 1 / dist)
    with pytest.raises(ValueError):
        propagation(g, g.mic_positions[0])


def test_anechoic_rir_peak_at_direct_path():
    g = default_geometry()
    src = BystanderPosition(45.0, 0.0, 2.0).to_xyz()
    rir = synth_rir(g, src)
    _, delay, gain = propagation(g, src)
    assert rir.shape[0] == 5
    for m in range(5):
        assert abs(int(np.argmax(np.abs(rir[m]))) - round(delay[m])) <= 1
        assert np.sum(rir[m]) == pytest.approx(gain[m], rel=0.02)


def test_reflections_add_energy():
    g = default_geometry().translated([2.0, 2.0, 1.5])
    src = g.mouth_position + [0.0, 1.0, 0.0]
    dry = synth_rir(g, src)
    wet = synth_rir(g, src, reflections=1, room=Room((4.0, 5.0, 3.0), 0.7))
    assert wet.shape[1] >= dry.shape[1]
    assert np.sum(wet**2) > np.sum(dry**2)


def test_spatialize_shape():
    rir = synth_rir(default_geometry(), BystanderPosition(0.0, 0.0, 1.0).to_xyz())
    out = spatialize(tone(1000), rir)
    assert out.num_channels == 5 and out.num_samples == 1000 + rir.shape[1] - 1


def test_bystander_gain():
    assert bystander_gain(1.0, 1.0, 20.0) == pytest.approx(0.1)
    with pytest.raises(ValueError, match="silence"):
        bystander_gain(1.0, 0.0, 10.0)


def test_mixture_spec_validation():
    pos = BystanderPosition(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        MixtureSpec(10.0, 1.5, "wearer-first", pos)
    with pytest.raises(ValueError):
        MixtureSpec(10.0, 0.5, "sideways", pos)
    with pytest.raises(ValueError):
        MixtureSpec(math.nan, 0.5, "wearer-first", pos)


def test_silent_input_rejected():
    spec = MixtureSpec(10.0, 0.5, "wearer-first", BystanderPosition(0.0, 0.0, 1.0))
    with pytest.raises(ValueError, match="silence"):
        mix_with_overlap(tone(4000), np.zeros(4000), spec)


@settings(max_examples=30, deadline=None)
@given(
    snr=st.floats(-5, 30),
    overlap=st.floats(0, 1),
    order=st.sampled_from(["wearer-first", "bystander-first"]),
    pos=st.sampled_from(enumerate_positions()),
    nw=st.integers(3000, 9000),
    nb=st.integers(1000, 9000),
    seed=st.integers(0, 1000),
)
def test_mixture_properties(snr, overlap, order, pos, nw, nb, seed):
    rec = mix_with_overlap(tone(nw, 220.0, seed), tone(nb, 410.0, seed + 1), MixtureSpec(snr, overlap, order, pos, seed))
    nose = default_geometry().nose_index
    assert abs(rec.realized_snr_db(nose) - snr) < 1e-6
    assert abs(rec.realized_overlap() - overlap * nw) <= 1
    w0, w1 = rec.wearer_interval
    b0, b1 = rec.bystander_interval
    if order == "wearer-first":
        assert w0 <= b0
    else:
        assert b0 <= w0
    np.testing.assert_allclose(rec.mixture.samples, rec.wearer_clean.samples + rec.bystander_clean.samples)
    act = rec.activity
    assert act.size == rec.mixture.num_samples
    assert np.all(act[w0:w1] == WEARER)
    bonly = np.zeros(act.size, bool)
    bonly[b0:b1] = True
    bonly[w0:w1] = False
    assert np.all(act[bonly] == BYSTANDER)
    assert np.all(act[~bonly & (act != WEARER)] == NON_SPEECH)


def test_mixture_is_deterministic():
    spec = MixtureSpec(12.0, 0.3, "bystander-first", BystanderPosition(135.0, 0.5, 2.0), seed=7)
    a = mix_with_overlap(tone(5000), tone(4000, 500.0), spec)
    b = mix_with_overlap(tone(5000), tone(4000, 500.0), spec)
    np.testing.assert_array_equal(a.mixture.samples, b.mixture.samples)


def test_short_bystander_is_tiled():
    spec = MixtureSpec(10.0, 1.0, "wearer-first", BystanderPosition(90.0, 0.0, 1.0))
    rec = mix_with_overlap(tone(8000), tone(1500, 500.0), spec)
    assert abs(rec.realized_overlap() - 8000) <= 1


def test_render_clean_labels():
    rec = render_clean(tone(4000), seed=3)
    w0, w1 = rec.wearer_interval
    assert w1 - w0 == 4000
    assert set(np.unique(rec.activity)) == {WEARER, NON_SPEECH}
    assert rec.spec is None


def test_manifest_grid_counts(tiny_corpus, tmp_path):
    wearers, bystanders = pool(tiny_corpus, "wearer")[:2], pool(tiny_corpus, "bystander")
    dist = MixtureDistribution(mode="grid", overlap_grid=(0.0, 0.5))
    rows = build_manifest(wearers, bystanders, dist, tmp_path / "m.jsonl", seed=0)
    assert len(rows) == 72 * 2 * 2 * 2
    assert {r["overlap_ratio"] for r in rows} == {0.0, 0.5}
    assert read_manifest(tmp_path / "m.jsonl") == rows
    assert len({r["utt_id"] for r in rows}) == len(rows)


def test_manifest_is_deterministic(tiny_corpus, tmp_path):
    wearers, bystanders = pool(tiny_corpus, "wearer"), pool(tiny_corpus, "bystander")
    dist = MixtureDistribution(mode="random", per_wearer=2)
    build_manifest(wearers, bystanders, dist, tmp_path / "a.jsonl", seed=5)
    build_manifest(wearers, bystanders, dist, tmp_path / "b.jsonl", seed=5)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_manifest_errors(tiny_corpus):
    with pytest.raises(ValueError):
        build_manifest_rows([], pool(tiny_corpus, "bystander"), MixtureDistribution())
    with pytest.raises(ValueError):
        build_manifest_rows(pool(tiny_corpus, "wearer"), [], MixtureDistribution())


def test_render_row_matches_manifest(tiny_corpus):
    rows = build_manifest_rows(pool(tiny_corpus, "wearer")[:1], pool(tiny_corpus, "bystander"), MixtureDistribution(), seed=2)
    rec = render_row(rows[0], load_mono)
    assert rec.transcript == rows[0]["transcript"]
    assert abs(rec.realized_snr_db() - rows[0]["snr_db"]) < 1e-6
    clean = build_manifest_rows(pool(tiny_corpus, "wearer")[:1], [], MixtureDistribution(mode="clean"))
    assert render_row(clean[0], load_mono).spec is None
