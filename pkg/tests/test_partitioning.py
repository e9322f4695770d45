import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathway_miner.grid_io import FieldDataset, Variable
from pathway_miner.partitioning import (
    SignatureSpec,
    compute_signatures,
    make_partitions,
    read_signatures,
    signature,
    write_signatures,
)


def dataset(values, missing=None):
    T, nlat, nlon = values.shape
    missing = np.zeros(values.shape, bool) if missing is None else missing
    return FieldDataset(
        {"X": Variable("X", values.astype(float), missing)},
        list(range(T)),
        np.linspace(-80, 80, nlat),
        np.arange(nlon) * 360.0 / nlon,
    )


def test_grid_geometry_drops_remainder():
    ds = dataset(np.zeros((1, 7, 10)))
    g = make_partitions(ds, 3)
    assert (g.nlat_bands, g.nlon_bands, g.npart) == (2, 3, 6)
    # row-major: partition k covers lat band k // nlon_bands
    assert g.rect(4) == ((3, 3), (6, 6))  # ((i0, j0), (i1, j1))
    with pytest.raises(ValueError):
        make_partitions(ds, 8)


def test_partitions_tile_without_overlap():
    ds = dataset(np.zeros((1, 9, 12)))
    g = make_partitions(ds, 3)
    cover = np.zeros((9, 12), int)
    for (r0, c0), (r1, c1) in g.rects:
        cover[r0:r1, c0:c1] += 1
    assert (cover == 1).all()


def test_percentile5_quartiles_linear_interpolation():
    spec = SignatureSpec.from_dict("percentile(5)")
    assert spec.quantiles == (0.0, 0.25, 0.5, 0.75, 1.0)
    # 1..9: positions (n-1)q = 0, 2, 4, 6, 8
    np.testing.assert_array_equal(signature(np.arange(1, 10), spec), [1, 3, 5, 7, 9])
    # 1..4: positions 0, .75, 1.5, 2.25, 3
    np.testing.assert_allclose(signature([4, 1, 3, 2], spec), [1, 1.75, 2.5, 3.25, 4])


def test_mean_signature_and_empty():
    spec = SignatureSpec.from_dict("mean")
    assert signature([1.0, 2.0, 6.0], spec)[0] == 3.0
    assert signature([], spec) is None


def test_constant_partition_signature_is_constant():
    sig = compute_signatures(dataset(np.full((2, 6, 6), 7.5)), make_partitions(dataset(np.zeros((1, 6, 6))), 3),
                             SignatureSpec.from_dict("percentile(5)"), "X")
    assert (sig.values == 7.5).all() and sig.valid.all()


def test_signature_matches_direct_quantile_per_block():
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(3, 6, 9))
    ds = dataset(vals)
    g = make_partitions(ds, 3)
    spec = SignatureSpec.from_dict("percentile(5)")
    sig = compute_signatures(ds, g, spec, "X")
    for k, ((r0, c0), (r1, c1)) in enumerate(g.rects):
        for t in range(3):
            expect = np.quantile(vals[t, r0:r1, c0:c1].ravel(), spec.quantiles)
            np.testing.assert_allclose(sig.values[t, k], expect, rtol=0, atol=1e-15)


def test_missing_policies():
    vals = np.arange(36, dtype=float).reshape(1, 6, 6)
    miss = np.zeros_like(vals, bool)
    miss[0, 0, 0] = True  # one cell of partition 0
    miss[0, 3:6, 3:6] = True  # all of partition 3
    ds = dataset(vals, miss)
    g = make_partitions(ds, 3)
    spec = SignatureSpec.from_dict("mean")
    ex = compute_signatures(ds, g, spec, "X", "exclude")
    assert ex.valid.tolist() == [[True, True, True, False]]
    block = vals[0, :3, :3].ravel()[1:]
    assert ex.values[0, 0, 0] == pytest.approx(block.mean())
    inv = compute_signatures(ds, g, spec, "X", "invalidate")
    assert inv.valid.tolist() == [[False, True, True, False]]


def test_signature_tensor_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    miss = rng.random((4, 6, 6)) < 0.3
    ds = dataset(rng.normal(size=(4, 6, 6)), miss)
    g = make_partitions(ds, 3)
    sig = compute_signatures(ds, g, SignatureSpec.from_dict("percentile(5)"), "X", "invalidate")
    write_signatures(sig, tmp_path / "a")
    back = read_signatures(tmp_path / "a")
    np.testing.assert_array_equal(back.valid, sig.valid)
    np.testing.assert_array_equal(back.points(), sig.points())
    write_signatures(back, tmp_path / "b")
    assert (tmp_path / "a" / "signatures.bin").read_bytes() == (tmp_path / "b" / "signatures.bin").read_bytes()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40))
def test_percentile_signature_is_sorted_and_bounded(xs):
    s = signature(xs, SignatureSpec.from_dict("percentile(5)"))
    assert np.all(np.diff(s) >= 0)
    assert s[0] == min(xs) and s[-1] == max(xs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_signature_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=9)
    spec = SignatureSpec.from_dict("percentile(5)")
    np.testing.assert_array_equal(signature(x, spec), signature(rng.permutation(x), spec))


def test_bad_signature_specs():
    for bad in ("median", "percentile(x)"):
        with pytest.raises(ValueError):
            SignatureSpec.from_dict(bad)
    with pytest.raises(ValueError):
        SignatureSpec("percentile", (0.5, 0.2))
