import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from specstack.data_pipeline import (
    DEFAULT_NOISE_REGIONS,
    DataError,
    SpectraDataset,
    apply_standardizer,
    drop_noise_regions,
    fit_standardizer,
    load_table,
    log_transform_traits,
    make_dataset,
    to_absorbance,
)

from oracles import sample_skewness_direct


def write_table(path, rows, waves=(1000, 1100, 1200, 1300, 1400), extra=None):
    header = ["sample_id"] + [f"w{w}" for w in waves] + list(extra or [])
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_three_rows(tmp_path):
    rows = [[f"s{i}", 0.5, 0.4, 0.3, 0.2, 0.1, 1.0 + i, "A"] for i in range(3)]
    t = load_table(write_table(tmp_path / "t.csv", rows, extra=["fat", "diet"]))
    assert t.n_samples == 3 and t.n_wavelengths == 5
    assert t.sample_ids == ("s0", "s1", "s2")
    assert t.target_roles == {"fat": "trait", "diet": "label"}


def test_load_rejects_zero_transmittance(tmp_path):
    rows = [["a", 0.5, 0.4, 0.0, 0.2, 0.1], ["b", 0.5, 0.4, 0.3, 0.2, 0.1]]
    with pytest.raises(DataError, match="non-positive transmittance") as err:
        load_table(write_table(tmp_path / "t.csv", rows))
    assert err.value.row == 1 and err.value.column == "w1200"


def test_load_rejects_duplicate_ids(tmp_path):
    rows = [["a", 0.5, 0.4, 0.3, 0.2, 0.1], ["a", 0.5, 0.4, 0.3, 0.2, 0.1]]
    with pytest.raises(DataError, match="duplicate sample id"):
        load_table(write_table(tmp_path / "t.csv", rows))


def test_load_rejects_non_numeric_and_missing_file(tmp_path):
    rows = [["a", 0.5, "x", 0.3, 0.2, 0.1]]
    with pytest.raises(DataError, match="non-numeric") as err:
        load_table(write_table(tmp_path / "t.csv", rows))
    assert err.value.column == "w1100"
    with pytest.raises(DataError, match="missing file"):
        load_table(tmp_path / "nope.csv")


def test_load_sorts_wavenumber_columns(tmp_path):
    rows = [["a", 0.1, 0.2]]
    t = load_table(write_table(tmp_path / "t.csv", rows, waves=(2000, 1000)))
    assert_allclose(t.wavenumbers, [1000, 2000])
    assert_allclose(t.values, [[0.2, 0.1]])


def _table(values, waves=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    from specstack.data_pipeline import RawSpectraTable

    waves = np.arange(values.shape[1], dtype=float) + 1000 if waves is None else waves
    return RawSpectraTable(
        sample_ids=tuple(f"s{i}" for i in range(values.shape[0])),
        wavenumbers=np.asarray(waves, dtype=float),
        values=values,
        targets=pd.DataFrame({"y": np.arange(values.shape[0], dtype=float)}),
        target_roles={"y": "trait"},
    )


def test_absorbance_values():
    out = to_absorbance(_table([[1.0, 0.01, 10.0]]))
    assert_allclose(out.values, [[0.0, 2.0, -1.0]], atol=1e-15)
    assert out.kind == "absorbance"


def test_absorbance_rejects_nonpositive():
    with pytest.raises(DataError, match="non-positive"):
        to_absorbance(_table([[1.0, -0.5]]))


@given(st.lists(st.floats(min_value=-6, max_value=6), min_size=1, max_size=20))
def test_absorbance_roundtrip(A):
    A = np.array([A])
    T = 1.0 / 10.0 ** A
    back = to_absorbance(_table(T)).values
    assert_allclose(back, A, rtol=1e-12, atol=1e-12)


def _grid_dataset():
    grid = np.arange(900.0, 5001.0, 100.0)
    X = np.random.default_rng(0).normal(size=(4, grid.size))
    return SpectraDataset(absorbance=X, wavenumbers=grid, sample_ids=("a", "b", "c", "d"))


def test_noise_region_counts():
    data = _grid_dataset()
    # direct enumeration of grid points inside each closed interval
    regions = [(1600, 1710), (2990, 3690), (3822, math.inf)]
    inside = [w for w in data.wavenumbers if any(lo <= w <= hi for lo, hi in regions)]
    assert data.wavenumbers.size == 42 and len(inside) == 21
    out = drop_noise_regions(data, regions)
    assert out.wavenumbers.size == 21
    assert out.removed_wavenumbers.size == 21
    keep = [j for j, w in enumerate(data.wavenumbers) if w not in inside]
    assert_allclose(out.absorbance, data.absorbance[:, keep])


def test_noise_regions_defaults_match_intervals_and_reversed_bounds():
    data = _grid_dataset()
    a = drop_noise_regions(data, DEFAULT_NOISE_REGIONS)
    b = drop_noise_regions(data, [(1710, 1600), (3690, 2990), (math.inf, 3822)])
    assert_allclose(a.wavenumbers, b.wavenumbers)


def test_noise_regions_identity_and_empty():
    data = _grid_dataset()
    same = drop_noise_regions(data, [])
    assert_allclose(same.absorbance, data.absorbance)
    with pytest.raises(DataError, match="empty surviving grid"):
        drop_noise_regions(data, [(0, 1e9)])


@given(
    st.tuples(st.floats(900, 5000), st.floats(0, 800)),
    st.tuples(st.floats(900, 5000), st.floats(0, 800)),
)
def test_noise_regions_compose(r1, r2):
    data = _grid_dataset()
    R1 = (r1[0], r1[0] + r1[1])
    R2 = (r2[0], r2[0] + r2[1])
    if not (R1[1] < R2[0] or R2[1] < R1[0]):
        return
    try:
        both = drop_noise_regions(data, [R1, R2])
    except DataError:
        return
    seq = drop_noise_regions(drop_noise_regions(data, [R1]), [R2])
    assert_allclose(both.wavenumbers, seq.wavenumbers)
    assert_allclose(both.absorbance, seq.absorbance)
    assert both.removed_wavenumbers.size == seq.removed_wavenumbers.size


def test_standardizer_two_points():
    s = fit_standardizer(np.array([[2.0], [4.0]]))
    assert_allclose(s.means, [3.0])
    assert_allclose(s.sds, [math.sqrt(2)])
    assert_allclose(apply_standardizer(s, np.array([[5.0]])), [[(5 - 3) / math.sqrt(2)]])
    assert_allclose(apply_standardizer(s, np.array([[3.0]])), [[0.0]])


def test_standardizer_guards():
    X = np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 5.0]])
    with pytest.raises(DataError, match="constant column"):
        fit_standardizer(X)
    s = fit_standardizer(X[:, 1:])
    with pytest.raises(DataError, match="expected 1 columns"):
        apply_standardizer(s, X)


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.integers(5, 30), st.integers(1, 6))
def test_standardizer_train_block_and_leakage(seed, n, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.1, 10, p) + rng.normal(size=p)
    train = np.sort(rng.choice(n, size=max(3, n // 2), replace=False))
    s = fit_standardizer(X, train)
    Z = apply_standardizer(s, X[train])
    assert_allclose(Z.mean(axis=0), 0.0, atol=1e-10)
    assert_allclose(Z.std(axis=0, ddof=1), 1.0, atol=1e-10)
    X2 = X.copy()
    test = np.setdiff1d(np.arange(n), train)
    X2[test] = rng.normal(size=(test.size, p)) * 1e6
    assert fit_standardizer(X2, train) == s


def test_log_transform_rule():
    sym = pd.DataFrame({"a": [1.0, 2.0, 3.0, 4.0, 5.0]})
    out, flags = log_transform_traits(sym)
    assert flags == {"a": False}
    assert_allclose(out["a"], sym["a"])

    skewed = pd.DataFrame({"b": [1.0, 1.0, 1.0, 1000.0]})
    assert sample_skewness_direct(skewed["b"]) > 1
    out, flags = log_transform_traits(skewed)
    assert flags == {"b": True}
    assert_allclose(out["b"], np.log(skewed["b"]))

    with pytest.raises(DataError, match="non-positive"):
        log_transform_traits(pd.DataFrame({"c": [0.0, 0.0, 0.0, 1000.0]}))


def test_make_dataset_label_invariant():
    t = to_absorbance(_table([[0.5, 0.2], [0.4, 0.3]]))
    data = make_dataset(t)
    assert data.task == "regression" and list(data.traits.columns) == ["y"]
    with pytest.raises(DataError, match="outside declared class set"):
        SpectraDataset(absorbance=np.ones((2, 1)), wavenumbers=np.array([1.0]), sample_ids=("a", "b"),
                       labels=np.array(["A", "C"]), classes=("A", "B"))
