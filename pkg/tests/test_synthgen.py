import filecmp

import numpy as np
import pytest

from ctxvad import ingest, synthgen
from ctxvad.context import ContextParams, calibrate_speed_threshold, mine_sequence, spatial_context
from ctxvad.synthgen import AnomalySpec, SceneConfig


def test_same_seed_identical_files(tmp_path):
    cfg = SceneConfig(frame_count=60, sequences=2, seed=4, anomalies=(AnomalySpec("overspeed", 10, 5, 1),))
    a = synthgen.generate(cfg, tmp_path / "a").parent
    b = synthgen.generate(cfg, tmp_path / "b").parent
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert not mismatch and not errors


def test_zero_anomalies_all_normal():
    for seq in synthgen.simulate(SceneConfig(frame_count=80, sequences=2, seed=1)):
        assert seq.labels == [0] * 80


def test_degenerate_walkway():
    with pytest.raises(ValueError):
        SceneConfig(walkway=(70, 70))
    with pytest.raises(ValueError):
        SceneConfig(anomalies=(AnomalySpec("overspeed", 245, 10),))
    with pytest.raises(ValueError):
        AnomalySpec("teleport", 0, 1)


def test_split():
    cfg = synthgen.desk_preset(seed=2)
    tr, te = synthgen.split(cfg)
    assert tr.anomalies == () and tr.sequences == 8
    assert te.anomalies == cfg.anomalies and te.seed == cfg.seed
    assert tr.seed != te.seed
    assert all(s.labels == [0] * 250 for s in synthgen.simulate(tr))


def test_overspeed_window_labels_and_flags(tmp_path):
    cfg = SceneConfig(frame_count=200, sequences=1, train_sequences=4, seed=8,
                      anomalies=(AnomalySpec("overspeed", 100, 20),))
    tr, te = synthgen.generate_split(cfg, tmp_path)
    train, test = ingest.load_dataset(tr), ingest.load_dataset(te)
    seq = test.sequences[0]
    assert [t for t, y in enumerate(seq.labels) if y] == list(range(100, 120))
    theta = calibrate_speed_threshold(train, 10, 99.5)
    ctx = mine_sequence(seq, 1, ContextParams(window=10, speed_threshold=theta))
    for t in range(100, 120):
        assert ctx[t].overspeed.flagged_count >= 1
        assert ctx[t].overspeed.max_windowed_speed >= synthgen.OVERSPEED_FACTOR * 0.95
    assert max(c.overspeed.max_windowed_speed for c in ctx[:100]) < 3.0 * cfg.speed_mean


def test_prohibited_region_on_grass():
    cfg = SceneConfig(frame_count=50, seed=3, anomalies=(AnomalySpec("prohibited_region", 20, 10),))
    seq = synthgen.simulate(cfg)[0]
    grass = synthgen.REGION_CLASSES.index("grass")
    for t in range(50):
        on_grass = spatial_context(seq.seg, seq.tracks[t], 1).occupancy[grass, 0]
        assert on_grass == (1 if 20 <= t < 30 else 0)


def test_unexpected_entity_unseen_in_training(tmp_path):
    cfg = SceneConfig(frame_count=60, sequences=1, train_sequences=2, seed=5,
                      anomalies=(AnomalySpec("unexpected_entity", 10, 5),))
    train_cfg, test_cfg = synthgen.split(cfg)
    seen = np.zeros(len(synthgen.COCO_CLASSES))
    for s in synthgen.simulate(train_cfg):
        for c in s.categories:
            seen += c.counts
    test = synthgen.simulate(test_cfg)[0]
    for t, c in enumerate(test.categories):
        novel = (c.counts > 0) & (seen == 0)
        assert novel.any() == (10 <= t < 15)


def test_desk_preset_counts(desk_train, desk_test):
    assert desk_train.frame_count == 2000
    assert desk_test.frame_count == 500
    labels = [y for s in desk_test.sequences for y in s.labels]
    assert sum(labels) == 50 == synthgen.desk_preset().abnormal_frames
    types = {e.type for s in desk_test.sequences for e in s.events}
    assert types == set(synthgen.ANOMALY_TYPES)
    assert not any(s.has_labels and any(s.labels) for s in desk_train.sequences)


def test_training_frames_never_on_grass(desk_train):
    grass = desk_train.region_classes.index("grass")
    for seq in desk_train.sequences:
        for f in seq.frames:
            assert spatial_context(seq.seg_map(f), f.tracks, 1).occupancy[grass, 0] == 0


def test_abnormal_fraction_matches_schedule():
    cfg = SceneConfig(frame_count=100, sequences=2, seed=0, anomalies=(
        AnomalySpec("overspeed", 10, 10, 0), AnomalySpec("unexpected_entity", 15, 10, 0),
        AnomalySpec("prohibited_region", 90, 10, 1),
    ))
    labels = [y for s in synthgen.simulate(cfg) for y in s.labels]
    assert sum(labels) == cfg.abnormal_frames == 25
