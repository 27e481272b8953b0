import math

import numpy as np
import pytest

from operators import OperatorDescriptor
from operators.operatormanager import OperatorManager
from schrodinger import t1
from schrodinger.bmo import BallClass, BallSpec, EnsemblePolicy, ball_ensemble
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import BoxGrid, GridFunction
from schrodinger.potential import build_potential
from schrodinger.report import VerificationReport
from schrodinger.rho import critical_covering, rho_field
from schrodinger.spectral import SpectralModel


@pytest.fixture(scope="module")
def model():
    return SpectralModel.assemble(build_potential("constant:0.02", BoxGrid(2, 49, 8.0)))


@pytest.fixture(scope="module")
def rho(model):
    return rho_field(model.potential)


@pytest.fixture(scope="module")
def ensemble(model, rho):
    return ball_ensemble(model.grid, rho)


@pytest.fixture(scope="module")
def manager(model):
    return OperatorManager(model)


@pytest.fixture(scope="module")
def identity_t1(manager):
    return t1.t1_field(manager.get(OperatorDescriptor("identity")))


@pytest.fixture(scope="module")
def heat_t1(manager, rho):
    return t1.t1_field(manager.get(OperatorDescriptor("heat-at-t", t=4.0)), rho=rho)


@pytest.fixture(scope="module")
def battery(model, rho, ensemble):
    return t1.build_battery(model, rho, ensemble, np.random.default_rng(0), size=4)


def test_identity_t1_is_one(identity_t1):
    assert (np.allclose(identity_t1.values, 1.0))
    assert (identity_t1.margin_sensitivity == 0.0)
    assert (not identity_t1.truncation_dominated)
    assert (identity_t1.slices is None)
    assert (identity_t1.summary()["label"] == "identity")


def test_heat_t1_is_truncation_dominated(heat_t1, model, rho):
    # at t = 4 the walls reach the margin region
    assert (heat_t1.margin_sensitivity > 0.05)
    assert (heat_t1.truncation_dominated)
    assert (np.all(heat_t1.values <= 1.0))
    assert (heat_t1.truncation_radius >= model.grid.half_width - 1.0)


def test_threshold_override(manager):
    relaxed = t1.t1_field(manager.get(OperatorDescriptor("heat-at-t", t=4.0)), threshold=10.0)
    assert (not relaxed.truncation_dominated)


def test_vector_t1_reductions(manager):
    field = t1.t1_field(manager.get(OperatorDescriptor("heat-maximal")))
    assert (field.vector_norm == "E")
    assert (field.slices is not None)
    assert (np.allclose(field.reduced("E").values, field.values))
    assert (np.all(field.values <= 1.0 + 1e-9))


def test_shifted_and_scaled(heat_t1):
    assert (np.allclose(heat_t1.shifted(3.0).values, heat_t1.values + 3.0))
    assert (np.allclose(heat_t1.scaled(2.0).values, 2.0 * heat_t1.values))
    assert (heat_t1.scaled(2.0).slices is None)


@pytest.fixture(scope="module")
def maximal_t1(manager):
    return t1.t1_field(manager.get(OperatorDescriptor("heat-maximal")))


def test_vector_criterion_takes_the_mean_per_slice(maximal_t1, model, ensemble):
    report = t1.criterion_alpha(maximal_t1, 0.25, 0.0, ensemble)
    flat = maximal_t1.slices.reshape(len(maximal_t1.slices), -1)
    expected, reduced_only = 0.0, 0.0
    for ball in ensemble.sub_critical:
        data = flat[:, ball.cells(model.grid)]
        deviation = np.max(np.abs(data - np.mean(data, axis=1, keepdims=True)), axis=0)
        weight = (ball.rho / ball.radius) ** 0.25
        expected = max(expected, weight * float(np.mean(deviation)))
        reduced_only = max(reduced_only, weight * t1.oscillation_integral(maximal_t1.function(), ball, 0.0))
    assert (expected > 0)
    assert (math.isclose(report.supremum, expected, rel_tol=1e-9))
    assert (report.supremum >= reduced_only / 2)


def test_vector_shift_and_scale_keep_the_slices(maximal_t1, ensemble):
    shifted = maximal_t1.shifted(3.0)
    assert (np.allclose(shifted.slices, maximal_t1.slices + 3.0))
    assert (np.allclose(shifted.values, np.max(np.abs(maximal_t1.slices + 3.0), axis=0)))
    scaled = maximal_t1.scaled(-2.0)
    assert (np.allclose(scaled.values, 2.0 * maximal_t1.values))
    base = t1.criterion_alpha(maximal_t1, 0.25, 0.0, ensemble).supremum
    assert (math.isclose(t1.criterion_alpha(shifted, 0.25, 0.0, ensemble).supremum, base, rel_tol=1e-6))
    assert (math.isclose(t1.criterion_alpha(scaled, 0.25, 0.0, ensemble).supremum, 2 * base, rel_tol=1e-9))


def test_oscillation_integral(model):
    ball = BallSpec((24, 24), (0.0, 0.0), 1.5, 4.0, BallClass.SUB_CRITICAL, True)
    assert (t1.oscillation_integral(GridFunction.constant(model.grid, 5.0), ball, 0.5) == 0.0)
    linear = GridFunction.from_callable(model.grid, lambda x, y: x + 0 * y)
    plain = t1.oscillation_integral(linear, ball, 0.0)
    weighted = t1.oscillation_integral(linear, ball, 1.0)
    assert (math.isclose(weighted, plain * ball.volume ** -0.5))


def test_criterion_of_constant_t1_vanishes(identity_t1, ensemble):
    report = t1.criterion_alpha(identity_t1, 0.5, 0.0, ensemble)
    assert (report.supremum == 0.0)
    assert (report.slope is None)
    as_report = report.as_report()
    assert (as_report.constant == 0.0)
    assert (as_report.excluded["intermediate"] == len(ensemble.of_class(BallClass.INTERMEDIATE)))
    assert (t1.criterion_log(identity_t1, 0.0, ensemble).supremum == 0.0)


def test_criterion_scales_and_ignores_shifts(heat_t1, ensemble):
    base = t1.criterion_alpha(heat_t1, 0.5, 0.25, ensemble)
    assert (base.supremum > 0)
    assert (math.isclose(t1.criterion_alpha(heat_t1.scaled(2.0), 0.5, 0.25, ensemble).supremum,
                         2 * base.supremum, rel_tol=1e-9))
    assert (math.isclose(t1.criterion_alpha(heat_t1.shifted(3.0), 0.5, 0.25, ensemble).supremum,
                         base.supremum, rel_tol=1e-6))
    assert (base.truncation_dominated)
    assert (base.as_report().truncation_dominated)


def test_criterion_parameter_ranges(identity_t1, ensemble):
    with pytest.raises(ParameterRangeError, match="alpha \\+ gamma < 1"):
        t1.criterion_alpha(identity_t1, 0.5, 0.5, ensemble)
    with pytest.raises(ParameterRangeError, match="0 <= gamma < 1"):
        t1.criterion_log(identity_t1, 1.0, ensemble)


def test_criterion_stability(identity_t1, rho):
    report = t1.criterion_stability(identity_t1, 0.5, 0.0, rho, EnsemblePolicy())
    assert (report.constant == 0.0)
    assert (report.stability_delta == 0.0)
    log_report = t1.criterion_stability(identity_t1, None, 0.0, rho, EnsemblePolicy())
    assert (log_report.name.startswith("criterion_log"))


def test_mean_bound_gamma(identity_t1, rho):
    report = t1.mean_bound_gamma_check(identity_t1, 0.0, rho, np.array([[24, 24], [0, 0]]))
    assert (math.isclose(report.constant, 1.0))
    assert (report.excluded["outside_margin"] == 1)


def test_build_battery(battery):
    labels = [label for label, _ in battery]
    assert (sum(label.startswith("g[") for label in labels) == 4)
    assert (sum(label.startswith("f[") for label in labels) == 4)
    assert (sum(label.startswith("eigenfunction[") for label in labels) == 3)
    assert (sum(label.startswith("random[") for label in labels) == 1)


def test_battery_is_reproducible(model, rho, ensemble, battery):
    again = t1.build_battery(model, rho, ensemble, np.random.default_rng(0), size=4)
    assert ([label for label, _ in again] == [label for label, _ in battery])
    assert (all(np.array_equal(a.values, b.values) for (_, a), (_, b) in zip(again, battery)))


def test_multiplier_criterion_of_one(model, ensemble, battery):
    report = t1.multiplier_criterion(GridFunction.constant(model.grid, 1.0), 0.25, ensemble, battery)
    assert (math.isclose(report.constant, 1.0, rel_tol=1e-9))
    assert (report.header["sup_norm"] == 1.0)
    assert (report.header["weighted_oscillation"] == 0.0)
    with pytest.raises(ParameterRangeError, match="0 <= alpha < 1"):
        t1.multiplier_criterion(GridFunction.constant(model.grid, 1.0), 1.0, ensemble, battery)


def test_empirical_norm_of_identity(manager, ensemble, battery):
    identity = manager.get(OperatorDescriptor("identity"))
    report = t1.empirical_operator_norm(identity, 0.25, 0.0, battery, ensemble)
    assert (math.isclose(report.constant, 1.0, rel_tol=1e-9))
    assert (len(report.rows) == len(battery))
    with pytest.raises(ParameterRangeError, match="alpha \\+ gamma <= 1"):
        t1.empirical_operator_norm(identity, 0.75, 0.5, battery, ensemble)


def test_covering_boundedness(manager, rho, ensemble, battery):
    identity = manager.get(OperatorDescriptor("identity"))
    covering = critical_covering(rho)
    report = t1.covering_boundedness_check(identity, battery, 0.0, 0.0, covering, ensemble)
    assert (report.finite)
    assert (len(report.rows) == len(battery))
    # B_k of the identity is an oscillation already counted in ||f||
    assert (all(row[3] <= 1.0 + 1e-9 for row in report.rows))
    assert (report.header["balls"] == covering.size)


def test_refinement_delta():
    first = VerificationReport.from_ratios("a", ("ratio",), [(1.0,)], np.array([1.0]))
    second = VerificationReport.from_ratios("a", ("ratio",), [(2.0,)], np.array([2.0]))
    assert (t1.refinement_delta(first, second) == 0.5)
