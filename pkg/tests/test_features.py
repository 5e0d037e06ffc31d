import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxvad.features import (
    CategoryVector,
    FeatureBlock,
    FeatureSchema,
    FrameFeatures,
    SchemaError,
    SegmentationMap,
    Track,
    assemble,
    fit_normalizer,
    normalize,
)
from oracles import minmax_scan


def test_assemble_categories_only_k80():
    counts = np.arange(80) % 7
    schema = FeatureSchema((FeatureBlock("categories", "categories", 80),))
    v = assemble(None, CategoryVector(counts), schema)
    assert v.shape == (80,)
    np.testing.assert_array_equal(v, counts)


def test_assemble_empty_schema():
    assert assemble({}, CategoryVector([1, 2]), FeatureSchema()).shape == (0,)


def test_assemble_concatenates_in_schema_order():
    schema = FeatureSchema((
        FeatureBlock("categories", "categories", 3),
        FeatureBlock("group", "group", 5),
    ))
    group = [0.5, 1.5, 2.5, 3.5, 4.5]
    v = assemble({"group": group}, CategoryVector([1, 0, 2]), schema)
    np.testing.assert_array_equal(v, [1, 0, 2, *group])


def test_assemble_length_mismatch_names_block():
    schema = FeatureSchema((FeatureBlock("group", "group", 4),))
    with pytest.raises(SchemaError, match="'group'"):
        assemble({"group": [1, 2, 3]}, None, schema)


def test_assemble_missing_source():
    schema = FeatureSchema((FeatureBlock("spatial", "spatial", 2),))
    with pytest.raises(SchemaError, match="spatial"):
        assemble({}, None, schema)


@settings(max_examples=50, deadline=None)
@given(
    cats=arrays(np.float64, 4, elements=st.floats(0, 100)),
    grp=arrays(np.float64, 3, elements=st.floats(-100, 100)),
)
def test_assemble_then_split_recovers_blocks(cats, grp):
    schema = FeatureSchema((FeatureBlock("categories", "categories", 4), FeatureBlock("group", "group", 3)))
    v = assemble({"group": grp}, CategoryVector(cats), schema)
    parts = schema.split(v)
    assert parts["categories"].tobytes() == cats.tobytes()
    assert parts["group"].tobytes() == grp.tobytes()


@settings(max_examples=50, deadline=None)
@given(
    a=arrays(np.float64, 5, elements=st.floats(0, 10)),
    idx=st.integers(0, 4),
    delta=st.floats(0.001, 5),
)
def test_assemble_injective(a, idx, delta):
    schema = FeatureSchema((FeatureBlock("categories", "categories", 2), FeatureBlock("group", "group", 3)))
    b = a.copy()
    b[idx] += delta
    va = assemble({"group": a[2:]}, CategoryVector(a[:2]), schema)
    vb = assemble({"group": b[2:]}, CategoryVector(b[:2]), schema)
    assert not np.array_equal(va, vb)


def test_schema_invariants():
    with pytest.raises(SchemaError):
        FeatureSchema((FeatureBlock("a", "group", 1), FeatureBlock("a", "spatial", 2)))
    with pytest.raises(SchemaError):
        FeatureBlock("a", "group", -1)
    with pytest.raises(SchemaError):
        FeatureBlock("a", "pixels", 1)
    s = FeatureSchema((FeatureBlock("a", "group", 2, ("u", "v")), FeatureBlock("b", "spatial", 1)))
    assert s.total_dim == 3
    assert s.feature_names() == ["a:u", "a:v", "b[0]"]
    assert FeatureSchema.from_dict(s.to_dict()) == s


def test_fit_normalizer_example():
    n = fit_normalizer([(0, 2), (1, 4)])
    np.testing.assert_array_equal(n.mins, [0, 2])
    np.testing.assert_array_equal(n.maxs, [1, 4])
    assert not n.constant.any()


def test_fit_normalizer_single_vector_all_constant():
    n = fit_normalizer([(3.0, -1.0, 7.0)])
    assert n.constant.all()
    np.testing.assert_array_equal(n.mins, n.maxs)


def test_fit_normalizer_matches_scan():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 7)) * rng.uniform(0.1, 10, 7)
    n = fit_normalizer(X)
    mins, maxs = minmax_scan(X.tolist())
    np.testing.assert_array_equal(n.mins, mins)
    np.testing.assert_array_equal(n.maxs, maxs)


def test_fit_normalizer_empty():
    with pytest.raises(ValueError):
        fit_normalizer([])


def test_normalize_endpoints_and_clamp():
    n = fit_normalizer([(0, 2, 5), (1, 4, 9)])
    np.testing.assert_array_equal(normalize(n.mins, n), 0)
    np.testing.assert_array_equal(normalize(n.maxs, n), 1)
    np.testing.assert_array_equal(normalize([-5, 100, 7], n), [0, 1, 0.5])


def test_normalize_constant_dims():
    n = fit_normalizer([(3.0, 1.0), (3.0, 2.0)])
    # training values of a constant dimension map to 0
    assert normalize([3.0, 1.5], n)[0] == 0
    # an unseen deviation stays visible (unit span), still clamped at 1
    assert normalize([3.25, 1.5], n)[0] == 0.25
    assert normalize([9.0, 1.5], n)[0] == 1.0


def test_normalize_without_upper_clamp():
    n = fit_normalizer([(0.0,), (2.0,)], upper=None)
    assert normalize([6.0], n)[0] == 3.0
    assert normalize([-1.0], n)[0] == 0.0


def test_normalize_dim_mismatch():
    n = fit_normalizer([(0, 1)])
    with pytest.raises(SchemaError):
        normalize([1, 2, 3], n)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6)))
def test_normalize_maps_training_into_unit_cube(X):
    n = fit_normalizer(X)
    Z = normalize(X, n)
    assert Z.min() >= 0 and Z.max() <= 1


def test_track_validation():
    t = Track(3, (10, 20, 30, 60), 0, (1.0, 0.0))
    assert t.size == (20, 40)
    assert t.foot_point == (20, 60)
    with pytest.raises(ValueError):
        Track(1, (5, 0, 4, 1))
    with pytest.raises(ValueError):
        Track(1, (0, 0, 4, 2), size=(4, 3))
    assert Track(1, (0, 0, 4, 2), size=(4, 2 + 1e-9)).size[1] == pytest.approx(2)


def test_category_vector_rejects_negative():
    with pytest.raises(ValueError):
        CategoryVector([1, -1])


def test_segmentation_map_validation():
    with pytest.raises(ValueError):
        SegmentationMap(np.array([[0, 2]]), ("a", "b"))
    with pytest.raises(ValueError):
        SegmentationMap(np.array([[0, 1]]), ("a", "a"))
    m = SegmentationMap(np.zeros((2, 3), dtype=int), ("only",))
    assert (m.height, m.width, m.class_count) == (2, 3, 1)


def test_frame_label_values():
    with pytest.raises(ValueError):
        FrameFeatures(0, (), CategoryVector([0]), label=2)
