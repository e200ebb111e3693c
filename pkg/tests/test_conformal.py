import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from physcp.conformal import (CSV_HEADER, DEFAULT_ALPHAS, CalibrationResult, CoverageReport,
                              ScoreBatch, aer_scores, calibrate, calibrate_joint, calibrate_marginal,
                              conformal_quantile, coverage_curve, coverage_row, empirical_coverage,
                              pre_scores, prediction_band, quantile_rank, std_scores,
                              validate_prediction)
from physcp.errors import CalibrationError, CompositionError, ConfigurationError, GridMismatchError
from physcp.grid import Axis, FieldTensor, Grid, gaussian_bump_ic, periodic_axis
from physcp.residual import advection_program
from physcp.solvers import SolverConfig, solve
from physcp.surrogate import CallablePredictor, ProbabilisticPrediction, predict_batch


def cells(n):
    return Grid([Axis("x", 0.0, 1.0, n)], min_points=1)


def batch(values, kind="PRE"):
    v = np.asarray(values, dtype=float)
    return ScoreBatch(FieldTensor(cells(v.shape[1]), v, batched=True), kind)


ROLL_GRID = Grid([Axis("t", 0, 0.05, 6), periodic_axis("x", 0, 2, 16)])
PROG = advection_program(ROLL_GRID, 1.0)


def noise_rollouts(rng, n, scale=1.0):
    return FieldTensor(ROLL_GRID, scale * rng.standard_normal((n, *ROLL_GRID.shape)), batched=True)


# -- scores ------------------------------------------------------------------------

def test_aer_hand_example_and_zero_cases():
    g = cells(3)
    pred, target = FieldTensor(g, [1.0, 2.0, 3.0]), FieldTensor(g, [1.0, 1.0, 5.0])
    s = aer_scores(pred, target)
    assert s.kind == "AER" and s.n == 1
    assert s.scores.values.tolist() == [[0.0, 1.0, 2.0]]
    assert np.all(aer_scores(pred, pred).scores.values == 0)
    pp = ProbabilisticPrediction(pred, FieldTensor(g, [0.1, 5.0, 1e-12]))
    assert np.all(std_scores(pp, pred).scores.values == 0)
    np.testing.assert_allclose(std_scores(pp, target).scores.values, [[0.0, 0.2, 2e12]])
    with pytest.raises(GridMismatchError):
        aer_scores(pred, FieldTensor(cells(4), np.zeros(4)))


def test_pre_scores_zero_and_linear_scaling(rng):
    zero = FieldTensor(ROLL_GRID, np.zeros((3, *ROLL_GRID.shape)), batched=True)
    s = pre_scores(zero, PROG)
    assert s.kind == "PRE" and s.n == 3 and np.all(s.scores.values == 0)
    assert s.grid == PROG.output_grid(ROLL_GRID)
    u = noise_rollouts(rng, 4)
    base = pre_scores(u, PROG).scores.values
    scaled = pre_scores(FieldTensor(ROLL_GRID, -4.0 * u.values, batched=True), PROG).scores.values
    assert np.array_equal(scaled, 4.0 * base)  # power-of-two scaling is exact
    third = pre_scores(FieldTensor(ROLL_GRID, 3.0 * u.values, batched=True), PROG).scores.values
    np.testing.assert_allclose(third, 3.0 * base, rtol=1e-13, atol=1e-12)
    with pytest.raises(CompositionError):
        pre_scores(FieldTensor(ROLL_GRID.spatial(), np.zeros(16)), PROG)


def test_pre_scores_of_solver_rollouts_shrink_with_refinement():
    tops = []
    for n in (50, 100, 200):
        g = Grid([periodic_axis("x", 0, 2, n)])
        cfg = SolverConfig("advection", {"v": 1.0}, g, 1.0 / n, n // 2)
        roll = solve(cfg, gaussian_bump_ic(g, 1.0, [1.0], width=20.0))  # smooth across the wrap
        tops.append(pre_scores(roll, advection_program(roll.grid, 1.0)).scores.values.max())
    assert tops[0] / tops[1] > 3.5 and tops[1] / tops[2] > 3.5


def test_score_batch_validation():
    with pytest.raises(CalibrationError):
        batch([[1.0, -0.1]])
    with pytest.raises(CalibrationError):
        batch([[1.0, np.nan]])
    with pytest.raises(ConfigurationError):
        batch([[1.0]], kind="MSE")
    with pytest.raises(ConfigurationError):
        ScoreBatch(FieldTensor(cells(2), [1.0, 2.0]), "PRE")


# -- quantile ----------------------------------------------------------------------

def test_quantile_examples():
    assert quantile_rank(99, 0.1) == 90
    assert conformal_quantile(np.arange(1, 100), 0.1) == 90
    assert conformal_quantile(np.arange(99, 0, -1), 0.1) == 90
    assert conformal_quantile([1, 2, 3, 4], 0.1) == math.inf
    for a in DEFAULT_ALPHAS:
        assert conformal_quantile(np.full(99, 0.5), a) == 0.5


def test_quantile_rank_is_exact_on_decimal_alpha():
    # (n + 1)(1 - alpha) is an integer here; floating point would round it up by one
    assert quantile_rank(19, 0.05) == 19
    assert quantile_rank(9, 0.3) == 7
    assert quantile_rank(999, 0.1) == 900


def test_quantile_errors():
    with pytest.raises(CalibrationError):
        conformal_quantile([], 0.1)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigurationError):
            conformal_quantile([1.0, 2.0], bad)


@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1e6)),
       st.sampled_from(DEFAULT_ALPHAS), st.randoms(use_true_random=False))
def test_quantile_permutation_invariant(v, alpha, r):
    perm = list(range(v.size))
    r.shuffle(perm)
    assert conformal_quantile(v, alpha) == conformal_quantile(v[perm], alpha)


@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1e6)),
       st.sampled_from(DEFAULT_ALPHAS), st.floats(1e-3, 1e3))
def test_quantile_scaling_equivariant(v, alpha, lam):
    q = conformal_quantile(v, alpha)
    assert conformal_quantile(lam * v, alpha) == (q if math.isinf(q) else lam * q)


@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 5)), elements=st.floats(0, 100)))
def test_quantile_and_bands_monotone_in_alpha(v):
    s = batch(v)
    prev_m = prev_j = None
    for a in DEFAULT_ALPHAS:
        m, j = calibrate_marginal(s, a), calibrate_joint(s, a)
        hm, hj = m.half_width().values, j.half_width().values
        if prev_m is not None:
            assert np.all(hm <= prev_m) and np.all(hj <= prev_j)
            bm = prediction_band(m)
            assert np.all(bm.lower.values >= -prev_m) and np.all(bm.upper.values <= prev_m)
        prev_m, prev_j = hm, hj


# -- calibration ---------------------------------------------------------------------

def test_marginal_per_cell_weights():
    w = np.array([1.0, 0.5, 3.0, 7.0])
    scores = np.arange(1, 100)[:, None] * w[None, :]
    res = calibrate_marginal(batch(scores), 0.1)
    assert res.mode == "marginal" and res.n == 99 and not res.insufficient
    np.testing.assert_array_equal(res.qhat.values, 90 * w)
    const = calibrate_marginal(batch(np.full((30, 5), 2.5)), 0.2)
    assert np.all(const.qhat.values == 2.5)


def test_marginal_insufficient_calibration_flagged():
    res = calibrate_marginal(batch(np.ones((4, 3))), 0.1)
    assert res.insufficient and np.all(np.isinf(res.qhat.values))
    j = calibrate_joint(batch(np.ones((4, 3))), 0.1)
    assert j.insufficient and j.qhat == math.inf


def test_joint_quantile_is_order_statistic_of_modulated_sup(rng):
    scores = rng.gamma(2.0, size=(99, 2)) * np.array([1.0, 2.0])
    res = calibrate_joint(batch(scores), 0.1)
    sigma = scores.std(axis=0)
    np.testing.assert_array_equal(res.sigma.values, sigma)
    stat = (scores / sigma).max(axis=1)
    assert res.qhat == np.sort(stat)[89]
    np.testing.assert_array_equal(res.half_width().values, res.qhat * sigma)


def test_joint_toy_direct_arithmetic():
    res = CalibrationResult("joint", "PRE", 0.1, 99, conformal_quantile(np.arange(1, 100), 0.1),
                            FieldTensor(cells(2), [1.0, 2.0]))
    assert res.qhat == 90
    assert res.half_width().values.tolist() == [90.0, 180.0]
    band = prediction_band(res)
    assert band.lower.values.tolist() == [-90.0, -180.0]
    assert band.upper.values.tolist() == [90.0, 180.0]


def test_joint_identical_samples_hit_floor():
    field = np.array([0.3, 1.2, 0.7])
    res = calibrate_joint(batch(np.tile(field, (20, 1))), 0.1)
    assert np.all(res.sigma.values == 1e-12)
    assert res.qhat == pytest.approx(field.max() / 1e-12, rel=1e-15)
    np.testing.assert_allclose(res.half_width().values, field.max(), rtol=1e-12)
    assert np.all(res.half_width().values >= field * (1 - 1e-12))


def test_calibrate_dispatch():
    s = batch(np.arange(20.0).reshape(10, 2))
    assert calibrate(s, 0.2, "marginal").mode == "marginal"
    assert calibrate(s, 0.2, "joint").mode == "joint"
    with pytest.raises(ConfigurationError):
        calibrate(s, 0.2, "both")


# -- bands and validation ----------------------------------------------------------

def test_pre_band_independent_of_input(rng):
    s = pre_scores(noise_rollouts(rng, 50), PROG)
    for mode in ("marginal", "joint"):
        res = calibrate(s, 0.1, mode)
        a = prediction_band(res, noise_rollouts(rng, 1))
        b = prediction_band(res, FieldTensor(ROLL_GRID, np.zeros(ROLL_GRID.shape)))
        c = prediction_band(res)
        assert a.lower.values.tobytes() == b.lower.values.tobytes() == c.lower.values.tobytes()
        assert a.upper.values.tobytes() == b.upper.values.tobytes() == c.upper.values.tobytes()
        assert np.all(a.lower.values <= a.upper.values)


def test_aer_band_collapses_at_zero_quantile():
    g = cells(3)
    res = calibrate_marginal(ScoreBatch(FieldTensor(g, np.zeros((10, 3)), batched=True), "AER"), 0.5)
    pred = FieldTensor(g, [1.0, -2.0, 3.5])
    band = prediction_band(res, pred)
    assert np.array_equal(band.lower.values, pred.values)
    assert np.array_equal(band.upper.values, pred.values)
    with pytest.raises(ConfigurationError):
        prediction_band(res)


def test_std_band_scales_with_spread():
    g = cells(2)
    res = calibrate_marginal(ScoreBatch(FieldTensor(g, np.tile([1.0, 2.0], (9, 1)), batched=True), "STD"), 0.1)
    pp = ProbabilisticPrediction(FieldTensor(g, [0.0, 10.0]), FieldTensor(g, [0.5, 3.0]))
    band = prediction_band(res, pp)
    assert band.lower.values.tolist() == [-0.5, 4.0]
    assert band.upper.values.tolist() == [0.5, 16.0]
    with pytest.raises(ConfigurationError):
        prediction_band(res, pp.mean)


def test_validation_closed_interval(rng):
    u = noise_rollouts(rng, 1).sample(0)
    r = np.abs(PROG.evaluate(u).values)
    rg = PROG.output_grid(ROLL_GRID)
    tight = CalibrationResult("marginal", "PRE", 0.1, 9, FieldTensor(rg, r))
    v = validate_prediction(PROG, tight, u)
    assert v.accepted and v.violations == 0 and v.statistic == 1.0
    lowered = r.copy()
    lowered[2, 3] = np.nextafter(lowered[2, 3], 0)
    v = validate_prediction(PROG, CalibrationResult("marginal", "PRE", 0.1, 9, FieldTensor(rg, lowered)), u)
    assert not v.accepted and v.violations == 1 and not v.mask[2, 3]
    joint = CalibrationResult("joint", "PRE", 0.1, 9, 1.0, FieldTensor(rg, r))
    assert validate_prediction(PROG, joint, u).accepted


def test_validation_exact_solution_always_accepted(rng):
    s = pre_scores(noise_rollouts(rng, 30), PROG)
    zero = FieldTensor(ROLL_GRID, np.zeros(ROLL_GRID.shape))
    const = FieldTensor(ROLL_GRID, np.full(ROLL_GRID.shape, 4.25))
    for mode in ("marginal", "joint"):
        for a in (0.05, 0.5, 0.95):
            res = calibrate(s, a, mode)
            assert validate_prediction(PROG, res, zero).accepted
            assert validate_prediction(PROG, res, const).accepted


def test_validation_batched_and_errors(rng):
    s = pre_scores(noise_rollouts(rng, 30), PROG)
    res = calibrate(s, 0.1, "joint")
    out = validate_prediction(PROG, res, noise_rollouts(rng, 5, scale=10.0))
    assert out.accepted.shape == (5,) and not out.accepted.any()
    assert out.violations.shape == (5,)
    with pytest.raises(ConfigurationError):
        validate_prediction(PROG, calibrate(batch(np.ones((5, 2)), "AER"), 0.5, "marginal"), noise_rollouts(rng, 1))
    other_grid = Grid([Axis("t", 0, 0.05, 6), periodic_axis("x", 0, 2, 20)])
    with pytest.raises(GridMismatchError):
        validate_prediction(advection_program(other_grid, 1.0), res,
                            FieldTensor(other_grid, np.zeros(other_grid.shape)))


def _joint_acceptance(rng, n, trials, split):
    accepted = 0
    for _ in range(trials):
        scores = pre_scores(noise_rollouts(rng, n), PROG)
        sigma = None
        if split:
            other = pre_scores(noise_rollouts(rng, n), PROG).scores.values
            sigma = FieldTensor(scores.grid, other.std(axis=0))
        res = calibrate_joint(scores, 0.1, sigma)
        accepted += validate_prediction(PROG, res, noise_rollouts(rng, 1).sample(0)).accepted
    return accepted / trials


def test_joint_validation_monte_carlo_split_sigma():
    """Fresh calibration set and one fresh prediction per trial; sigma from a disjoint split."""
    p = _joint_acceptance(np.random.default_rng(2024), 49, 1000, split=True)
    assert p >= 0.9 - 3 * math.sqrt(0.9 * 0.1 / 1000)


@pytest.mark.slow
def test_joint_validation_monte_carlo_in_sample_sigma():
    # in-sample sigma biases coverage down by O(1/n); at n = 999 it is inside the MC tolerance
    p = _joint_acceptance(np.random.default_rng(2025), 999, 1000, split=False)
    assert p >= 0.9 - 3 * math.sqrt(0.9 * 0.1 / 1000)


def test_joint_external_sigma_checked():
    s = batch(np.ones((5, 3)))
    with pytest.raises(GridMismatchError):
        calibrate_joint(s, 0.5, FieldTensor(cells(2), [1.0, 1.0]))
    res = calibrate(s, 0.5, "joint", FieldTensor(cells(3), [2.0, 0.0, 1.0]))
    assert res.sigma.values.tolist() == [2.0, 1e-12, 1.0]


@pytest.mark.parametrize("alpha", [0.05, 0.1, 0.25, 0.5])
@pytest.mark.parametrize("n", [19, 50])
def test_finite_sample_guarantee_monte_carlo(alpha, n):
    rng = np.random.default_rng(int(alpha * 1000) + n)
    trials = 20000
    draws = rng.exponential(size=(trials, n + 1))
    k = quantile_rank(n, alpha)
    q = np.sort(draws[:, :n], axis=1)[:, k - 1] if k <= n else np.full(trials, np.inf)
    hit = np.mean(draws[:, n] <= q)
    sd = math.sqrt(hit * (1 - hit) / trials) + 1e-12
    assert hit >= 1 - alpha - 3 * sd
    assert hit <= 1 - alpha + 1 / (n + 1) + 3 * sd
    assert hit == pytest.approx(k / (n + 1), abs=4 * sd)


# -- coverage ------------------------------------------------------------------------

def test_coverage_all_below_quantile():
    cal = batch(np.arange(1, 100, dtype=float)[:, None] * np.ones((1, 3)))
    val = batch(np.full((20, 3), 0.5))
    for mode in ("marginal", "joint"):
        assert empirical_coverage(calibrate(cal, 0.1, mode), val).value == 1.0
    cov = empirical_coverage(calibrate_marginal(cal, 0.1), val)
    assert np.all(cov.per_cell.values == 1.0)


def test_coverage_iid_uniform_cell_average():
    rng = np.random.default_rng(7)
    cal, val = batch(rng.uniform(size=(999, 100))), batch(rng.uniform(size=(10000, 100)))
    cov = empirical_coverage(calibrate_marginal(cal, 0.1), val)
    assert 0.894 <= cov.value <= 0.906
    assert cov.per_cell.values.shape == (100,)


def test_coverage_curve_identical_distributions_on_diagonal():
    rng = np.random.default_rng(11)
    cal, val = batch(rng.gamma(2.0, size=(200, 300))), batch(rng.gamma(2.0, size=(200, 300)))
    rep = coverage_curve(cal, val)
    target = 1 - np.array(DEFAULT_ALPHAS)
    assert np.all(np.abs(rep.column("marginal_coverage") - target) <= 0.03)
    assert np.all((rep.column("joint_coverage") >= 0) & (rep.column("joint_coverage") <= 1))


def test_coverage_curve_conservative_under_dominance():
    rng = np.random.default_rng(12)
    cal = batch(rng.uniform(size=(200, 50)))
    val = batch(0.8 * rng.uniform(size=(500, 50)))
    rep = coverage_curve(cal, val)
    target = 1 - np.array(DEFAULT_ALPHAS)
    assert np.all(rep.column("marginal_coverage") >= target)
    assert np.all(rep.column("joint_coverage") >= target - 3 * np.sqrt(target * (1 - target) / 500))


def test_single_alpha_curve_matches_row():
    rng = np.random.default_rng(13)
    cal, val = batch(rng.uniform(size=(60, 4))), batch(rng.uniform(size=(40, 4)))
    rep = coverage_curve(cal, val, alphas=[0.3])
    assert rep.rows == [coverage_row(cal, val, 0.3)]
    with pytest.raises(ConfigurationError):
        coverage_curve(cal, batch(rng.uniform(size=(40, 4)), "AER"))


def test_cp_agnostic_pure_noise_predictor():
    """Coverage does not care how bad the model is: a predictor emitting pure noise."""
    rng = np.random.default_rng(99)
    pred = CallablePredictor(lambda ic: rng.standard_normal(ROLL_GRID.shape) * 50.0, ROLL_GRID)
    ics = [FieldTensor(ROLL_GRID.spatial(), np.zeros(16))] * 800
    rolls = predict_batch(pred, ics)
    cal = pre_scores(FieldTensor(ROLL_GRID, rolls.values[:300], batched=True), PROG)
    val = pre_scores(FieldTensor(ROLL_GRID, rolls.values[300:], batched=True), PROG)
    rep = coverage_curve(cal, val, alphas=(0.05, 0.1, 0.25, 0.5))
    target = 1 - np.array([0.05, 0.1, 0.25, 0.5])
    assert np.all(rep.column("marginal_coverage") >= target - 0.02)
    tol = 3 * np.sqrt(target * (1 - target) / 500) + 3 * np.sqrt(target * (1 - target) / 300)
    assert np.all(rep.column("joint_coverage") >= target - tol)


def test_report_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    rep = coverage_curve(batch(rng.uniform(size=(30, 3))), batch(rng.uniform(size=(17, 3))))
    path = tmp_path / "coverage.csv"
    text = rep.to_csv(path)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert len(text.splitlines()) == 1 + len(DEFAULT_ALPHAS)
    back = CoverageReport.from_csv(path)
    assert back.rows == rep.rows
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ConfigurationError):
        CoverageReport.from_csv(tmp_path / "bad.csv")
