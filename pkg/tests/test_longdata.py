import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpcmr.errors import DataError
from mpcmr.longdata import (
    GenotypeMatrix,
    LongitudinalExposure,
    OutcomeVector,
    center_columns,
    load_individual_data,
)
from mpcmr.simgen import SimConfig, gen_dataset


def _exposure(times_by_subject, values_by_subject, t_min=0.0, t_max=10.0):
    ids = [f"s{i}" for i in range(len(times_by_subject))]
    times = [np.asarray(t, dtype=float) for t in times_by_subject]
    values = [np.asarray(v, dtype=float) for v in values_by_subject]
    return LongitudinalExposure(ids, times, values, t_min, t_max)


def test_center_columns_small_example():
    out = center_columns(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(out, [-1.0, 0.0, 1.0], atol=1e-15)


def test_center_columns_empty_rejected():
    with pytest.raises(DataError):
        center_columns(np.empty((0, 2)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 15), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6)))
def test_center_columns_properties(a):
    """Centering zeroes column means, preserves gaps, and is idempotent."""
    c = center_columns(a)
    scale = 1.0 + np.abs(a).max()
    assert np.all(np.abs(c.mean(axis=0)) <= 1e-9 * scale)
    assert np.allclose(c - c[0], a - a[0], atol=1e-9 * scale)
    assert np.allclose(center_columns(c), c, atol=1e-9 * scale)


def test_exposure_counts_and_flatten():
    data = _exposure([[0.0, 1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0, 3.0], [4.0, 5.0]])
    assert data.n_subjects == 2
    assert data.n_obs == 5
    idx, t, x = data.flatten()
    assert np.array_equal(idx, [0, 0, 0, 1, 1])
    assert np.array_equal(t, [0.0, 1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(x, [1.0, 2.0, 3.0, 4.0, 5.0])


def test_exposure_allows_tied_times():
    data = _exposure([[1.0, 1.0, 2.0]], [[0.0, 0.5, 1.0]])
    assert data.n_obs == 3


@pytest.mark.parametrize("times,values", [
    ([[0.0, 1.0]], [[1.0]]),
    ([[]], [[]]),
    ([[0.0, 1.0]], [[1.0, np.nan]]),
    ([[2.0, 1.0]], [[1.0, 2.0]]),
    ([[0.0, 11.0]], [[1.0, 2.0]]),
])
def test_exposure_invalid_subjects_rejected(times, values):
    with pytest.raises(DataError):
        _exposure(times, values)


def test_exposure_empty_and_bad_window_rejected():
    with pytest.raises(DataError):
        LongitudinalExposure([], [], [], 0.0, 10.0)
    with pytest.raises(DataError):
        _exposure([[1.0]], [[1.0]], t_min=5.0, t_max=5.0)


def test_genotype_constant_column_rejected():
    values = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 0.0]])
    with pytest.raises(DataError, match="constant genotype"):
        GenotypeMatrix(["s0", "s1", "s2"], ["g1", "g2"], values)


def test_genotype_shape_checks():
    with pytest.raises(DataError):
        GenotypeMatrix(["s0"], ["g1"], np.array([1.0]))
    with pytest.raises(DataError):
        GenotypeMatrix(["s0", "s1"], ["g1"], np.array([[1.0], [np.inf]]))


def test_outcome_length_mismatch_rejected():
    with pytest.raises(DataError):
        OutcomeVector(["s0", "s1"], np.array([1.0]), 10.0)


def _write_csvs(tmp_path, exposure_rows, genotype_frame, outcome_frame):
    e_path = tmp_path / "exposure.csv"
    g_path = tmp_path / "genotype.csv"
    o_path = tmp_path / "outcome.csv"
    pd.DataFrame(exposure_rows, columns=["subject_id", "time", "value"]).to_csv(
        e_path, index=False)
    genotype_frame.to_csv(g_path, index=False)
    outcome_frame.to_csv(o_path, index=False)
    return str(e_path), str(g_path), str(o_path)


def _small_tables():
    exposure_rows = [
        ("s1", 0.0, 1.25), ("s1", 5.0, 2.0),
        ("s2", 1.0, 0.5), ("s2", 4.0, 1.5),
        ("s3", 2.0, 3.0), ("s3", 3.0, 1.0),
    ]
    genotype = pd.DataFrame({"subject_id": ["s1", "s2", "s3"],
                             "g1": [0, 1, 2], "g2": [1, 2, 0]})
    outcome = pd.DataFrame({"subject_id": ["s1", "s2", "s3"],
                            "outcome": [0.1, -0.2, 0.3]})
    return exposure_rows, genotype, outcome


def test_load_small_tables(tmp_path):
    paths = _write_csvs(tmp_path, *_small_tables())
    exp, gen, out = load_individual_data(*paths)
    assert exp.n_subjects == 3
    assert list(exp.subject_ids) == ["s1", "s2", "s3"]
    assert exp.t_min == 0.0 and exp.t_max == 5.0
    assert np.array_equal(gen.values, [[0, 1], [1, 2], [2, 0]])
    assert np.array_equal(out.values, [0.1, -0.2, 0.3])
    assert out.measurement_time == 5.0


def test_load_aligns_by_subject_id_not_row_order(tmp_path):
    exposure_rows, genotype, outcome = _small_tables()
    genotype = genotype.iloc[[2, 0, 1]].reset_index(drop=True)
    outcome = outcome.iloc[[1, 2, 0]].reset_index(drop=True)
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    exp, gen, out = load_individual_data(*paths)
    assert list(gen.subject_ids) == ["s1", "s2", "s3"]
    assert np.array_equal(gen.values, [[0, 1], [1, 2], [2, 0]])
    assert np.array_equal(out.values, [0.1, -0.2, 0.3])


def test_load_drops_subjects_missing_elsewhere(tmp_path):
    exposure_rows, genotype, outcome = _small_tables()
    outcome = outcome.iloc[:2]
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    with pytest.warns(UserWarning, match="dropped 1 subject"):
        exp, gen, out = load_individual_data(*paths)
    assert exp.n_subjects == 2
    assert list(exp.subject_ids) == ["s1", "s2"]


def test_load_no_common_subjects(tmp_path):
    exposure_rows, genotype, outcome = _small_tables()
    outcome["subject_id"] = ["x1", "x2", "x3"]
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    with pytest.raises(DataError, match="no subjects"):
        load_individual_data(*paths)


def test_load_missing_file(tmp_path):
    paths = _write_csvs(tmp_path, *_small_tables())
    with pytest.raises(DataError, match="file not found"):
        load_individual_data(paths[0], str(tmp_path / "nope.csv"), paths[2])


def test_load_wrong_exposure_header(tmp_path):
    exposure_rows, genotype, outcome = _small_tables()
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    frame = pd.read_csv(paths[0]).rename(columns={"time": "t"})
    frame.to_csv(paths[0], index=False)
    with pytest.raises(DataError):
        load_individual_data(*paths)


def test_load_non_numeric_cell_points_at_line(tmp_path):
    exposure_rows, genotype, outcome = _small_tables()
    outcome["outcome"] = outcome["outcome"].astype(object)
    outcome.loc[0, "outcome"] = "abc"
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    with pytest.raises(DataError, match="line 2"):
        load_individual_data(*paths)


def test_load_duplicate_genotype_rows(tmp_path):
    exposure_rows, genotype, outcome = _small_tables()
    genotype = pd.concat([genotype, genotype.iloc[:1]], ignore_index=True)
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    with pytest.raises(DataError):
        load_individual_data(*paths)


def test_simulated_csv_round_trip_is_exact(tmp_path):
    """Floats written by pandas and re-read must round-trip bit for bit."""
    ds = gen_dataset(SimConfig(n=25, J=5, obs_per_subject=4, seed=3))
    sparse = ds.sparse_exposure
    idx, t, x = sparse.flatten()
    exposure_rows = list(zip(np.asarray(sparse.subject_ids)[idx], t, x))
    genotype = pd.DataFrame(ds.genotype.values, columns=ds.genotype.variant_ids)
    genotype.insert(0, "subject_id", ds.genotype.subject_ids)
    outcome = pd.DataFrame({"subject_id": ds.outcome.subject_ids,
                            "outcome": ds.outcome.values})
    paths = _write_csvs(tmp_path, exposure_rows, genotype, outcome)
    exp, gen, out = load_individual_data(*paths)
    _, t2, x2 = exp.flatten()
    assert np.array_equal(t2, t)
    assert np.array_equal(x2, x)
    assert np.array_equal(gen.values, ds.genotype.values)
    assert np.array_equal(out.values, ds.outcome.values)
