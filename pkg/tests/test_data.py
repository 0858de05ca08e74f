import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from augmatch.data import DataError, Dataset, load_csv, split_sample, write_csv
from augmatch.simulate import gen_scenario


def _write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_small_csv(tmp_path):
    path = _write(tmp_path, "w1,a,y\n0.5,1,2.0\n-1,0,1.5\n2,1,3\n0,0,0\n")
    d = load_csv(path)
    assert (d.n, d.p) == (4, 1)
    np.testing.assert_array_equal(d.a, [1, 0, 1, 0])
    np.testing.assert_array_equal(d.v[:, 0], [0.5, -1, 2, 0])
    np.testing.assert_array_equal(d.w[:, 0], 1.0)


def test_non_binary_treatment_rejected(tmp_path):
    path = _write(tmp_path, "w1,a,y\n0.5,1,2.0\n-1,2,1.5\n")
    with pytest.raises(DataError, match="non-binary treatment"):
        load_csv(path)


@pytest.mark.parametrize("token", ["0.0", "1.0"])
def test_float_spelled_treatment_accepted(tmp_path, token):
    other = "1" if token == "0.0" else "0"
    d = load_csv(_write(tmp_path, f"w1,a,y\n1,{token},1\n2,{other},2\n"))
    assert set(d.a.tolist()) == {0, 1}


@pytest.mark.parametrize(
    "text, msg",
    [
        ("", "empty"),
        ("w1,a,y\n", "no data"),
        ("w1,y\n1,2\n", "missing column"),
        ("w1,a,y\n1,1,\n2,0,1\n", "non-numeric|non-finite"),
        ("w1,a,y\nnan,1,1\n2,0,1\n", "non-finite"),
        ("w1,a,y\n1,true,1\n2,0,1\n", "non-binary"),
    ],
)
def test_malformed_files(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path, text))


def test_schema_selects_columns(tmp_path):
    path = _write(tmp_path, "id,x,z,t,out\n1,0.1,5,1,2\n2,0.2,6,0,3\n")
    d = load_csv(path, {"treatment": "t", "outcome": "out", "covariates": ["x"]})
    assert d.names == ("x",)
    d = load_csv(path, {"treatment": "t", "outcome": "out", "ignore": ["id"]})
    assert d.names == ("x", "z")


def test_scenario_round_trip_is_exact(tmp_path):
    d = gen_scenario(2, 300, 3)
    path = tmp_path / "s.csv"
    write_csv(d, path)
    back = load_csv(path)
    assert back.names == d.names
    assert np.array_equal(back.v, d.v) and np.array_equal(back.y, d.y)
    assert np.array_equal(back.a, d.a)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 1)), np.array([1]), np.zeros(1))
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), np.array([0, 1, 2]), np.zeros(3))
    with pytest.raises(DataError):
        Dataset(np.array([[0.0], [np.inf]]), np.array([0, 1]), np.zeros(2))
    d = Dataset(np.zeros((3, 1)), np.array([1, 1, 1]), np.zeros(3))
    with pytest.raises(DataError):
        d.require_arms(1)


def test_arrays_are_read_only():
    d = gen_scenario(1, 20, 0)
    with pytest.raises(ValueError):
        d.y[0] = 1.0


def test_split_sizes_match_design_of_study():
    d = gen_scenario(2, 5000, 1)
    sp = split_sample(d, 0.05, 7)
    assert (sp.m_n, sp.n_eff) == (250, 4750)


def test_split_deterministic():
    d = gen_scenario(2, 100, 1)
    a, b = split_sample(d, 0.5, 11), split_sample(d, 0.5, 11)
    np.testing.assert_array_equal(a.idx_a, b.idx_a)
    np.testing.assert_array_equal(a.idx_b, b.idx_b)


def test_split_partitions_indices():
    d = gen_scenario(2, 1000, 1)
    sp = split_sample(d, 0.05, 3)
    both = np.concatenate([sp.idx_a, sp.idx_b])
    np.testing.assert_array_equal(np.sort(both), np.arange(1000))


def test_split_floor_enforced():
    d = gen_scenario(2, 200, 1)
    with pytest.raises(DataError):
        split_sample(d, 0.05, 0)


@given(n=st.integers(120, 600), frac=st.floats(0.1, 0.5), seed=st.integers(0, 2**31))
def test_split_sizes_add_up(n, frac, seed):
    d = gen_scenario(2, n, 5)
    try:
        sp = split_sample(d, frac, seed)
    except DataError:
        return
    assert sp.m_n + sp.n_eff == n
    assert 50 <= sp.m_n < n
    assert len(np.intersect1d(sp.idx_a, sp.idx_b)) == 0
