import math

import numpy as np
import pytest

from schrodinger import bmo
from schrodinger.bmo import BallClass, BallSpec, EnsemblePolicy
from schrodinger.errors import EnsembleError, ParameterRangeError
from schrodinger.grid import BoxGrid, GridFunction
from schrodinger.potential import build_potential
from schrodinger.rho import critical_covering, rho_field

# pi rho^2 * 0.02 = 1 in the plane
RHO = 1 / math.sqrt(0.02 * math.pi)
CENTER = (24, 24)


@pytest.fixture(scope="module")
def grid():
    return BoxGrid(2, 49, 8.0)


@pytest.fixture(scope="module")
def rho(grid):
    return rho_field(build_potential("constant:0.02", grid))


@pytest.fixture(scope="module")
def ensemble(grid, rho):
    return bmo.ball_ensemble(grid, rho)


def test_classify():
    assert (bmo.classify(1.0, 2.0) == BallClass.SUB_CRITICAL)
    assert (bmo.classify(1.5, 2.0) == BallClass.INTERMEDIATE)
    assert (bmo.classify(2.0, 2.0) == BallClass.CRITICAL)
    assert (bmo.classify(5.0, 2.0) == BallClass.CRITICAL)


def test_policy_validation_and_doubling():
    with pytest.raises(EnsembleError, match="at least 4 radii per decade"):
        EnsemblePolicy(radii_per_decade=3)
    with pytest.raises(EnsembleError, match="one center per axis"):
        EnsemblePolicy(centers_per_axis=0)
    doubled = EnsemblePolicy(random_centers=3).doubled()
    assert (doubled.centers_per_axis == 9)
    assert (doubled.radii_per_decade == 8)
    assert (doubled.random_centers == 6)


def test_rho_at_center(rho):
    assert (math.isclose(float(rho.at(np.array(CENTER))), RHO, rel_tol=1e-3))


def test_ensemble_classes(ensemble, grid):
    counts = ensemble.counts()
    assert (all(counts[c.value] > 0 for c in BallClass))
    assert (ensemble.dropped["below_resolution"] > 0)
    assert (ensemble.dropped["outside_margin"] > 0)
    for ball in ensemble.balls:
        assert (ball.radius > 2 * grid.spacing)
        assert (max(abs(c) for c in ball.center) + ball.radius <= grid.half_width - 1.0 + 1e-9)


def test_ensemble_doubled_keeps_the_original_balls(grid, rho, ensemble):
    doubled = bmo.ball_ensemble(grid, rho, ensemble.policy.doubled())
    radii = {(ball.center, round(ball.radius, 9)) for ball in doubled.balls}
    assert (len(doubled.balls) > len(ensemble.balls))
    assert (all((ball.center, round(ball.radius, 9)) in radii for ball in ensemble.balls))


def test_ensemble_errors(grid, rho):
    with pytest.raises(EnsembleError, match="below 2h"):
        bmo.ball_ensemble(grid, rho, EnsemblePolicy(radius_cap=0.5))
    with pytest.raises(EnsembleError, match="box too small"):
        bmo.ball_ensemble(grid, rho, EnsemblePolicy(margin=7.9))


def test_radius_cap_drops_large_balls(grid, rho):
    capped = bmo.ball_ensemble(grid, rho, EnsemblePolicy(radius_cap=1.5))
    assert (capped.dropped["above_cap"] > 0)
    assert (all(ball.radius <= 1.5 for ball in capped.balls))


def test_ball_below_resolution(grid, rho):
    ball = BallSpec(CENTER, (0.0, 0.0), 0.2, RHO, BallClass.SUB_CRITICAL, True)
    with pytest.raises(EnsembleError, match="ball below resolution"):
        bmo.ball_values(GridFunction.constant(grid, 1.0), ball)


def test_dilated(grid):
    ball = BallSpec(CENTER, (0.0, 0.0), 1.0, RHO, BallClass.SUB_CRITICAL, True)
    assert (ball.dilated(2).ball_class == BallClass.INTERMEDIATE)
    assert (ball.dilated(4).ball_class == BallClass.CRITICAL)
    assert (not ball.dilated(8, grid, margin=1.0).margin_ok)
    assert (math.isclose(ball.volume, math.pi))


def test_mean_oscillation(grid):
    ball = BallSpec(CENTER, (0.0, 0.0), 1.5, RHO, BallClass.SUB_CRITICAL, True)
    assert (bmo.mean_oscillation(GridFunction.constant(grid, 3.0), ball) == 0.0)
    linear = GridFunction.from_callable(grid, lambda x, y: x + 0 * y)
    first = bmo.mean_oscillation(linear, ball)
    second = bmo.mean_oscillation(linear, ball, p=2)
    assert (0 < first <= second <= 1.5)
    with pytest.raises(ParameterRangeError, match=">= 1"):
        bmo.mean_oscillation(linear, ball, p=0.5)


def test_ball_mean_exact_for_constants():
    values = np.full(37, 0.1)
    assert (bmo.ball_mean(values) == 0.1)


def test_norm_of_constant(grid, ensemble):
    f = GridFunction.constant(grid, 2.0)
    report = bmo.bmo_alpha_norm(f, 0.5, ensemble)
    assert (report.oscillation_sup == 0.0)
    assert (not report.condition_ii_dropped)
    # |B(x, rho)| = pi rho^2 = 50
    assert (math.isclose(report.mean_sup, 2 * 50 ** -0.25, rel_tol=1e-3))
    assert (report.norm == report.mean_sup)
    assert (math.isclose(bmo.bmo_alpha_norm(f, 0.0, ensemble).norm, 2.0))
    as_report = report.as_report()
    assert (as_report.name == "bmo_norm")
    assert (math.isclose(as_report.constant, report.norm))
    assert (len(as_report.rows) == len(ensemble.balls))


def test_norm_alpha_range(grid, ensemble):
    with pytest.raises(ParameterRangeError, match="only constants remain"):
        bmo.bmo_alpha_norm(GridFunction.constant(grid, 1.0), 1.5, ensemble)


def test_condition_ii_dropped_without_critical_balls(grid, rho):
    small = bmo.ball_ensemble(grid, rho, EnsemblePolicy(decades_above=0.0, radius_cap=3.0))
    report = bmo.bmo_alpha_norm(GridFunction.constant(grid, 1.0), 0.0, small)
    assert (report.condition_ii_dropped)
    assert (report.mean_sup == 0.0)


def test_subcritical_only_ignores_critical_oscillation(grid, ensemble):
    linear = GridFunction.from_callable(grid, lambda x, y: x + 0 * y)
    full = bmo.bmo_alpha_norm(linear, 0.0, ensemble)
    restricted = bmo.bmo_alpha_norm(linear, 0.0, ensemble, subcritical_only=True)
    assert (restricted.oscillation_sup <= full.oscillation_sup)
    assert (restricted.subcritical_only)


def test_function_g_profile(rho, grid):
    g = bmo.test_function_g(rho, CENTER, 1.0)
    rho0 = float(rho.at(np.array(CENTER)))
    assert (math.isclose(float(g.at(np.array(CENTER))), math.log(rho0), rel_tol=1e-12))
    # x = 2 lies between s and rho(x0)
    outer = np.array([24 + round(2.0 / grid.spacing), 24])
    distance = float(grid.coordinates(outer)[0])
    assert (math.isclose(float(g.at(outer)), math.log(rho0 / distance), rel_tol=1e-12))
    assert (float(g.at(np.array([0, 0]))) == 0.0)
    assert (np.all(g.values >= 0))


def test_function_f_profile(rho):
    f = bmo.test_function_f(rho, CENTER, 1.0, 0.5)
    rho0 = float(rho.at(np.array(CENTER)))
    assert (math.isclose(float(f.at(np.array(CENTER))), math.sqrt(rho0) - 1.0, rel_tol=1e-12))
    assert (float(f.at(np.array([0, 0]))) == 0.0)
    assert (np.all(f.values >= 0))


def test_function_parameter_ranges(rho):
    with pytest.raises(ParameterRangeError, match="0 < s <= rho"):
        bmo.test_function_g(rho, CENTER, 10.0)
    with pytest.raises(ParameterRangeError, match="0 < s <= rho"):
        bmo.test_function_f(rho, CENTER, 0.0, 0.5)
    with pytest.raises(ParameterRangeError, match="0 < alpha <= 1"):
        bmo.test_function_f(rho, CENTER, 1.0, 0.0)


def test_mean_value_bound(grid, ensemble):
    report = bmo.mean_value_bound_check(GridFunction.constant(grid, 1.0), ensemble, 0.0, 1.0)
    assert (report.name == "mean_value_bound")
    assert (0 < report.constant <= 1.0)
    positive = bmo.mean_value_bound_check(GridFunction.constant(grid, 1.0), ensemble, 0.5, 1.0)
    assert (math.isclose(positive.constant, RHO ** -0.5, rel_tol=1e-3))


def test_mean_value_bound_needs_subcritical_balls(grid, rho):
    critical = bmo.ball_ensemble(grid, rho, EnsemblePolicy(decades_below=0.0))
    with pytest.raises(EnsembleError, match="sub-critical"):
        bmo.mean_value_bound_check(GridFunction.constant(grid, 1.0), critical, 0.0, 1.0)


def test_covering_mean(grid, rho, ensemble):
    covering = critical_covering(rho)
    report = bmo.covering_mean_check(GridFunction.constant(grid, 2.0), 0.0, covering, ensemble)
    assert (math.isclose(report.constant, 2.0))
    assert (report.header["oscillation_sup"] == 0.0)
    assert (report.header["balls"] == covering.size)


def test_campanato_linear(grid, rho):
    linear = GridFunction.from_callable(grid, lambda x, y: x + 0 * y)
    first = np.array([[10, 10], [20, 30], [5, 5]])
    second = np.array([[12, 10], [20, 31], [5, 5]])
    report = bmo.campanato_table(linear, 1.0, rho, (first, second), norm_estimate=2.0)
    assert (report.excluded["coincident"] == 1)
    assert (len(report.rows) == 2)
    assert (math.isclose(report.header["holder_seminorm"], 1.0))
    assert (report.header["size_seminorm"] > 0)
    assert (math.isclose(report.header["ratio_to_norm"], report.header["campanato"] / 2.0))
    with pytest.raises(ParameterRangeError, match="0 < alpha <= 1"):
        bmo.campanato_table(linear, 0.0, rho, (first, second))


def test_quadratic_oscillation_dominates_the_mean_oscillation(grid, rho, ensemble):
    for f in (GridFunction.from_callable(grid, lambda x, y: x + 0 * y), bmo.test_function_g(rho, CENTER, 1.0)):
        first = bmo.bmo_alpha_norm(f, 0.0, ensemble)
        second = bmo.bmo_alpha_norm(f, 0.0, ensemble, p=2)
        assert (first.oscillation_sup > 0)
        assert (second.oscillation_sup >= first.oscillation_sup * (1 - 1e-12))
        assert (second.p == 2)


def test_norms_of_g_and_f_are_uniform_in_center_and_radius(grid, rho, ensemble):
    candidates = bmo.ball_ensemble(grid, rho, ensemble.policy.doubled()).sub_critical
    sweep = candidates[::max(1, len(candidates) // 60)]
    assert (len(sweep) >= 50)
    norms = np.array([bmo.bmo_alpha_norm(bmo.test_function_g(rho, ball.index, ball.radius), 0.0, ensemble).norm
                      for ball in sweep])
    assert (np.all(norms > 0))
    assert (norms.max() / norms.min() <= 10)
    for alpha in (0.25, 0.5):
        norms = np.array([bmo.bmo_alpha_norm(bmo.test_function_f(rho, ball.index, ball.radius, alpha), alpha,
                                             ensemble).norm for ball in sweep])
        assert (np.all(norms > 0))
        assert (norms.max() / norms.min() <= 10)
