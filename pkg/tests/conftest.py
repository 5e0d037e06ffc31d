import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctxvad import ingest, synthgen  # noqa: E402
from ctxvad.features import SegmentationMap, Track  # noqa: E402


@pytest.fixture(scope="session")
def desk_dirs(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    return synthgen.generate_split(synthgen.desk_preset(seed=0), out)


@pytest.fixture(scope="session")
def desk_train(desk_dirs):
    return ingest.load_dataset(desk_dirs[0])


@pytest.fixture(scope="session")
def desk_test(desk_dirs):
    return ingest.load_dataset(desk_dirs[1])


@pytest.fixture(scope="session")
def small_split(tmp_path_factory):
    """A quick two-sequence scene with one anomaly of each type."""
    cfg = synthgen.SceneConfig(
        name="small", frame_count=120, sequences=1, train_sequences=4, seed=3,
        anomalies=(
            synthgen.AnomalySpec("unexpected_entity", 20, 8),
            synthgen.AnomalySpec("overspeed", 50, 8),
            synthgen.AnomalySpec("prohibited_region", 90, 8),
        ),
    )
    out = tmp_path_factory.mktemp("small")
    tr, te = synthgen.generate_split(cfg, out)
    return ingest.load_dataset(tr), ingest.load_dataset(te), (tr, te)


def two_by_two():
    return SegmentationMap(np.array([[0, 0], [1, 1]]), ("walkway", "grass"))


def random_map(rng, h=20, w=30, c=3):
    return SegmentationMap(rng.integers(0, c, (h, w)), tuple(f"r{i}" for i in range(c)))


def random_tracks(rng, n, w=30, h=20, j=2, margin=5):
    out = []
    for i in range(n):
        x0 = rng.uniform(-margin, w)
        y0 = rng.uniform(-margin, h)
        bw, bh = rng.uniform(0.5, 6), rng.uniform(0.5, 8)
        out.append(Track(i, (x0, y0, x0 + bw, y0 + bh), int(rng.integers(0, j)),
                         tuple(rng.normal(0, 2, 2))))
    return out


def perturbed_small_model(seed, d=None, hidden=(5, 3, 5)):
    """A small DAE with non-trivial BN affine terms and biases, plus a batch."""
    from ctxvad import dae
    from ctxvad.features import FeatureBlock, FeatureSchema

    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 9))
    model = dae.init(FeatureSchema((FeatureBlock("x", "group", d),)), seed=seed, hidden=hidden)
    for bn in model.bn:
        bn.gamma[:] = rng.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta[:] = rng.normal(0, 0.5, bn.beta.shape)
    for layer in model.layers:
        layer.b[:] = rng.normal(0, 0.3, layer.b.shape)
    clean = rng.uniform(0, 1, (4, d))
    noisy = clean + 0.1 * rng.standard_normal((4, d))
    return model, clean, noisy


def gradient_check(model, clean, noisy):
    """(max relative error over ordinary parameters, max |grad| over pre-BN biases).

    A bias feeding straight into batch norm is cancelled by the mean
    subtraction, so its exact gradient is zero; it is reported separately.
    """
    from ctxvad import dae
    from oracles import central_differences

    analytic = dae.gradients(model, clean, noisy)
    numeric = central_differences(lambda: dae.batch_loss(model, clean, noisy), model.parameters())
    pre_bn = {f"b{i}" for i in range(len(model.bn))}
    rel, zero = 0.0, 0.0
    for k, a in analytic.items():
        n = numeric[k]
        if k in pre_bn:
            zero = max(zero, float(np.abs(a).max()), float(np.abs(n).max()))
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
        rel = max(rel, float((np.abs(a - n) / denom).max()))
    return rel, zero
