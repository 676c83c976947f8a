import math

import numpy as np
import pytest
from dataclasses import replace
from scipy import integrate

from gpsobol.bench import (StudyConfig, convergence_study, coverage_study, default_config, fmt, gsobol,
                           gsobol_first_order, ishigami, pick_freeze, run_replicate, write_study_csvs)
from gpsobol.effects import SimulationConfig
from gpsobol.errors import DegenerateVarianceError
from gpsobol.gp import FitOptions
from gpsobol.inputs import InputSpace


def test_gsobol_truth():
    f = gsobol()
    assert f.true_indices == pytest.approx([0.7164, 0.1791, 0.0237, 0.0072, 0.0001], abs=5e-5)
    assert f.d == 5 and f.true_indices.sum() <= 1


@pytest.mark.parametrize("a", [0.0, 2.5, 99.0])
def test_gsobol_single_input(a):
    assert gsobol([a]).true_indices == pytest.approx([1.0])


def test_gsobol_rejects_negative_coefficients():
    with pytest.raises(ValueError):
        gsobol([1.0, -0.5])


def test_gsobol_values():
    f = gsobol()
    assert f.evaluate([0.5] * 5) == pytest.approx(np.prod(np.array(f.params["a"]) / (1 + np.array(f.params["a"]))))
    assert f.evaluate([0.0, 0.5, 0.5, 0.5, 0.5]) == pytest.approx(0.0 + 2.0 * np.prod(
        np.array([1.0, 4.5, 9.0, 99.0]) / np.array([2.0, 5.5, 10.0, 100.0])))


def test_ishigami_truth_and_values():
    f = ishigami()
    assert f.true_indices == pytest.approx([0.3139, 0.4424, 0.0], abs=5e-4)
    assert f.evaluate([0.0, 0.0, 0.0]) == 0.0
    assert f.evaluate([math.pi / 2, 0.0, 0.0]) == pytest.approx(1.0)
    assert f.space.dims[0].support == (-math.pi, math.pi)


def _x1(X):
    return X[:, 0]


@pytest.mark.parametrize("i,expected", [(0, 1.0), (1, 0.0)])
def test_pick_freeze_trivial(i, expected):
    r = pick_freeze(_x1, InputSpace.uniform(2), i, 20_000, seed=1)
    assert abs(r.estimate - expected) <= max(3 * r.se, 1e-12)


def test_pick_freeze_errors():
    with pytest.raises(ValueError):
        pick_freeze(_x1, InputSpace.uniform(2), 0, 100)
    with pytest.raises(DegenerateVarianceError):
        pick_freeze(lambda X: np.ones(len(X)), InputSpace.uniform(2), 0, 2000)


@pytest.mark.slow
def test_ishigami_truth_against_pick_freeze():
    f = ishigami()
    for i in range(3):
        r = pick_freeze(f, f.space, i, 1_000_000, seed=100 + i)
        assert abs(r.estimate - f.true_indices[i]) <= 0.005
        if i == 1:
            assert abs(r.estimate - f.true_indices[i]) <= 3 * r.se


@pytest.mark.slow
def test_gsobol_truth_against_pick_freeze():
    f = gsobol()
    for i in range(f.d):
        r = pick_freeze(f, f.space, i, 1_000_000, seed=200 + i)
        assert abs(r.estimate - f.true_indices[i]) <= 3 * r.se


def test_gsobol_formula_against_generic_decomposition():
    # independent route: exact partial variances from one-dimensional moments of g_k
    a = np.array([0.3, 2.0, 7.0])
    v = np.array([integrate.quad(lambda x: ((abs(4 * x - 2) + ak) / (1 + ak)) ** 2, 0, 1, points=[0.5])[0] - 1
                  for ak in a])
    assert gsobol_first_order(a) == pytest.approx(v / (np.prod(1 + v) - 1), rel=1e-10)


def _small_cfg(simulate=False):
    sim = SimulationConfig(n_dis=40, k_sim=200) if simulate else None
    return StudyConfig(fit=FitOptions(n_starts=2), n_nodes=32, n_test=500, simulation=sim)


def test_study_reproducible():
    f = gsobol([0.0, 1.0])
    a = convergence_study(f, [12], 10, _small_cfg(), seed=4)
    b = convergence_study(f, [12], 10, _small_cfg(), seed=4, threads=2)
    assert len(a.rows) == 10
    for ra, rb in zip(a.rows, b.rows):
        assert ra.q2 == rb.q2
        assert np.array_equal(ra.predictor, rb.predictor) and np.array_equal(ra.global_mean, rb.global_mean)
    c = convergence_study(f, [12], 10, _small_cfg(), seed=5)
    assert c.rows[0].q2 != a.rows[0].q2


def test_study_argument_checks():
    with pytest.raises(ValueError):
        convergence_study(gsobol(), [10], 5)
    with pytest.raises(ValueError):
        coverage_study(gsobol(), [10], 10, level=1.5)


def test_default_configs():
    assert default_config("gsobol").fit.estimate_p
    assert not default_config("ishigami").fit.estimate_p
    assert default_config("ishigami", simulate=True).simulation.k_sim == 10_000


def test_coverage_rows_and_csvs(tmp_path):
    f = ishigami()
    conv = convergence_study(f, [20, 30], 10, _small_cfg(), seed=1)
    cov = coverage_study(f, [30], 10, cfg=_small_cfg(simulate=True), seed=1)
    r = cov.rows[0]
    assert r.hits.shape == (3,) and np.all(r.ci_lower <= r.ci_upper) and np.all(r.global_std >= 0)
    paths = write_study_csvs(tmp_path, conv, cov)
    names = sorted(p.name for p in paths)
    assert names == ["fig_convergence.csv", "fig_coverage.csv", "table1.csv", "table2.csv"]
    for p in paths:
        lines = p.read_text(encoding="utf-8").splitlines()
        assert len(lines) > 1
    table1 = (tmp_path / "table1.csv").read_text().splitlines()
    assert table1[0] == "n,replicates,q2_mean,q2_std" and len(table1) == 3
    coverage_lines = (tmp_path / "fig_coverage.csv").read_text().splitlines()
    assert {line.split(",")[4] for line in coverage_lines[1:]} == {"X1", "X2", "X3"}
    assert len((tmp_path / "table2.csv").read_text().splitlines()) == 4


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float64(2.0)) == "2"
    assert fmt(True) == "1" and fmt("X1") == "X1" and fmt(7) == "7"


def test_errors_decrease_with_learning_size(gsobol_study):
    for approach in ("predictor_only", "global_model"):
        means = [gsobol_study.errors(n, approach).mean() for n in gsobol_study.sizes]
        assert all(b <= a for a, b in zip(means, means[1:]))
    e25, e95 = gsobol_study.errors(25, "global_model"), gsobol_study.errors(95, "global_model")
    assert np.sum(e95 < e25) >= 19


def test_global_mean_close_to_truth_at_largest_size(gsobol_study):
    norms = np.sqrt(gsobol_study.errors(95, "global_model"))
    assert gsobol_study.q2(95).mean() >= 0.97
    assert np.mean(norms) <= 0.05


def test_estimators_approach_each_other(gsobol_study):
    gaps = [np.abs(gsobol_study.estimates(n, "predictor_only") - gsobol_study.estimates(n, "global_model")).sum(axis=1).mean()
            for n in gsobol_study.sizes]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))


@pytest.mark.slow
def test_ishigami_uncertainty_shrinks_with_n():
    f = ishigami()
    cfg = replace(default_config("ishigami"), simulation=SimulationConfig(k_sim=100), n_test=1000)
    study = coverage_study(f, [30, 80, 130], 10, cfg=cfg, seed=0)
    sig = np.array([np.mean([r.global_std for r in study.at(n)], axis=0) for n in study.sizes])
    assert np.all(sig[:, :2] > 0)
    assert np.all(np.diff(sig[:, 0]) < 0) and np.all(np.diff(sig[:, 1]) < 0)


def test_replicate_hits_consistent():
    f = ishigami()
    r = run_replicate(f, 40, 0, _small_cfg(simulate=True), seed=3)
    assert np.array_equal(r.hits, (r.ci_lower <= f.true_indices) & (f.true_indices <= r.ci_upper))
    assert r.err_global == pytest.approx(np.sum((r.global_mean - f.true_indices) ** 2))
