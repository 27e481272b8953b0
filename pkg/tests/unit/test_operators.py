import math

import numpy as np
import pytest

from operators import (GHeat, HeatAtT, Identity, OperatorDescriptor, calculate_checksum_for_dict, kernel_of,
                       lp_operator_norm, validate_alpha)
from operators.gfunction import derivative_formula_slice, g_heat, g_poisson, g_tgrid
from operators.heat import heat_maximal
from operators.laplace import LaplaceSymbol, SymbolKind
from operators.negativepower import negative_power, negative_power_quadrature
from operators.operatormanager import OperatorManager
from operators.poisson import extension_constant, extension_residual, maximal_domination_check, poisson_sigma_apply
from operators.riesz import riesz_apply, riesz_defect
from schrodinger.errors import ConfigurationError, ConsistencyError, OnDiagonalError, ParameterRangeError
from schrodinger.grid import BoxGrid, GridFunction
from schrodinger.potential import Potential, PotentialMode, build_potential
from schrodinger.spectral import SpectralModel
from schrodinger.tgrid import TGrid

X = np.array([[4, 5], [8, 8]])
Y = np.array([[9, 5], [8, 11]])


@pytest.fixture(scope="module")
def model():
    return SpectralModel.assemble(build_potential("harmonic", BoxGrid(2, 16, 3.0)))


@pytest.fixture(scope="module")
def manager(model):
    return OperatorManager(model)


@pytest.fixture(scope="module")
def field(model):
    return model.random_smooth_field(np.random.default_rng(11))


def test_descriptor_validation():
    with pytest.raises(ConfigurationError, match="unknown operator kind"):
        OperatorDescriptor("fourier")
    with pytest.raises(ConfigurationError, match="needs t > 0"):
        OperatorDescriptor("heat-at-t")
    with pytest.raises(ConfigurationError, match="sigma must lie"):
        OperatorDescriptor("poisson-maximal", sigma=1.0)
    with pytest.raises(ConfigurationError, match="gamma must be 0"):
        OperatorDescriptor("identity", gamma=1.0)
    with pytest.raises(ConfigurationError, match="gamma > 0"):
        OperatorDescriptor("negative-power")
    with pytest.raises(ConfigurationError, match="axis index"):
        OperatorDescriptor("riesz-component", axis=0)
    with pytest.raises(ConfigurationError, match="needs a symbol"):
        OperatorDescriptor("laplace-multiplier")
    with pytest.raises(ConfigurationError, match="p must be >= 1"):
        OperatorDescriptor("identity", p=0.5)
    with pytest.raises(ConfigurationError, match="tgrid_size"):
        OperatorDescriptor("heat-maximal", tgrid_size=8)


def test_descriptor_labels():
    assert (OperatorDescriptor("heat-at-t", t=0.5).label == "heat-at-t[t=0.5]")
    assert (OperatorDescriptor("poisson-sigma-at-t", t=1.0).label == "poisson-sigma-at-t[t=1,sigma=0.5]")
    assert (OperatorDescriptor("riesz-component", axis=2).label == "riesz-component[axis=2]")
    assert (OperatorDescriptor("negative-power", gamma=1.0).label == "negative-power[gamma=1]")
    symbol = LaplaceSymbol(SymbolKind.EXPONENTIAL_DECAY)
    assert (OperatorDescriptor("laplace-multiplier", symbol=symbol).label
            == "laplace-multiplier[symbol=exponential-decay]")
    assert (OperatorDescriptor("identity").label == "identity")


def test_descriptor_from_dict():
    descriptor = OperatorDescriptor.from_dict(
        {"kind": "laplace-multiplier", "symbol": {"kind": "window", "length": 2.0}}, "operators[3]")
    assert (descriptor.symbol.kind == SymbolKind.WINDOW)
    assert (OperatorDescriptor.from_dict(descriptor.to_dict()).label == descriptor.label)
    with pytest.raises(ConfigurationError, match=r"operators\[1\]\.order: unknown key"):
        OperatorDescriptor.from_dict({"kind": "identity", "order": 2}, "operators[1]")
    with pytest.raises(ConfigurationError, match=r"operators\.kind: missing"):
        OperatorDescriptor.from_dict({"t": 1.0})
    with pytest.raises(ConfigurationError, match=r"operators\[0\]\.symbol\.kind"):
        OperatorDescriptor.from_dict({"kind": "laplace-multiplier", "symbol": {"kind": "cosine"}}, "operators[0]")


def test_lebesgue_exponent():
    assert (math.isclose(OperatorDescriptor("negative-power", gamma=1.0).q_leb(3), 6.0))
    assert (math.isinf(OperatorDescriptor("negative-power", gamma=2.0).q_leb(3)))
    assert (OperatorDescriptor("identity").q_leb(3) == 2.0)


def test_checksum():
    first = OperatorDescriptor("heat-at-t", t=0.5)
    assert (first.checksum == OperatorDescriptor("heat-at-t", t=0.5).checksum)
    assert (first.checksum != OperatorDescriptor("heat-at-t", t=0.25).checksum)
    assert (calculate_checksum_for_dict({"b": 1, "a": np.float64(2.0)})
            == calculate_checksum_for_dict({"a": 2.0, "b": 1}))


def test_manager_caches_operators(manager):
    descriptor = OperatorDescriptor("heat-at-t", t=0.5)
    operator = manager.get(descriptor)
    assert (isinstance(operator, HeatAtT))
    assert (manager.get(OperatorDescriptor("heat-at-t", t=0.5)) is operator)
    assert (str(operator) == "heat-at-t[t=0.5]")
    with pytest.raises(ConfigurationError, match="unknown operator kind"):
        manager.operator_class("bogus")


def test_wrong_descriptor_for_class(model):
    with pytest.raises(ConfigurationError, match="given to Identity"):
        Identity(OperatorDescriptor("heat-at-t", t=1.0), model)


def test_identity(manager, field, model):
    identity = manager.get(OperatorDescriptor("identity"))
    assert (np.array_equal(identity.apply(field).values, field.values))
    sample = identity.kernel(np.array([[3, 3], [3, 3]]), np.array([[3, 3], [3, 4]]))
    assert (np.allclose(sample.values, [1 / model.grid.cell_volume, 0.0]))


def test_heat_at_t(manager, field, model):
    heat = manager.get(OperatorDescriptor("heat-at-t", t=0.3))
    assert (np.allclose(heat.apply(field).values, model.apply(lambda lam: np.exp(-0.3 * lam), field).values))
    sample = heat.kernel(X, Y)
    assert (np.allclose(sample.values, model.heat_kernel(np.array([0.3]), X, Y)[0]))


def test_heat_maximal_of_ground_state(model):
    ground = model.ground_state()
    tgrid = TGrid.maximal(model.grid, 40)
    expected = np.exp(-tgrid.times[0] * model.lambda_min) * ground.values
    assert (np.allclose(heat_maximal(model, ground, tgrid).values, expected))


def test_maximal_kernel_norm(manager):
    maximal = manager.get(OperatorDescriptor("heat-maximal"))
    sample = maximal.kernel(X, Y)
    assert (sample.values.shape == (maximal.tgrid.size, 2))
    assert (np.allclose(sample.norm, np.max(np.abs(sample.values), axis=0)))


def test_poisson_half_is_exponential(model, field):
    expected = model.apply(lambda lam: np.exp(-np.sqrt(lam)), field)
    assert (np.allclose(poisson_sigma_apply(model, 0.5, 1.0, field).values, expected.values, rtol=1e-6, atol=1e-10))


def test_poisson_kernel_matches_apply(manager, model):
    poisson = manager.get(OperatorDescriptor("poisson-sigma-at-t", t=1.0, sigma=0.5))
    delta = np.zeros(model.grid.shape)
    delta[tuple(Y[0])] = 1.0 / model.grid.cell_volume
    column = poisson.apply(GridFunction(model.grid, delta)).values
    assert (math.isclose(float(poisson.kernel(X[:1], Y[:1]).values[0]), column[tuple(X[0])], rel_tol=1e-4))


def test_maximal_domination(model):
    ground = model.ground_state()
    report = maximal_domination_check(model, 0.5, ground, TGrid.maximal(model.grid, 40))
    assert (report.constant <= 1.0 + 1e-8)
    assert (report.excluded["zero_heat"] == 0)


def test_extension_residual(model, field):
    assert (extension_constant(0.5) == 1.0)
    residual = extension_residual(model, 0.5, 1.0, field)
    assert (residual.equation < 1e-2)
    assert (residual.c_sigma == 1.0)


def test_g_functions_of_an_eigenfunction(model):
    phi = model.eigenfunction((1, 0))
    heat = g_heat(model, phi, g_tgrid(model, 96, 1.0))
    poisson = g_poisson(model, phi, g_tgrid(model, 96, 0.5))
    assert (np.allclose(heat.values, np.abs(phi.values) / 2, rtol=1e-4, atol=1e-8))
    assert (np.allclose(poisson.values, np.abs(phi.values) / 2, rtol=1e-4, atol=1e-8))


def test_g_kernel_shape(manager):
    g = manager.get(OperatorDescriptor("g-heat"))
    assert (isinstance(g, GHeat))
    sample = g.kernel(X, Y)
    assert (sample.values.shape == (g.tgrid.size, 2))
    assert (np.all(sample.norm >= 0))


def test_derivative_formula_slice(model, field):
    t = 0.7
    expected = model.apply(lambda lam: -t * np.sqrt(lam) * np.exp(-t * np.sqrt(lam)), field)
    assert (np.allclose(derivative_formula_slice(model, t, field).values, expected.values, rtol=1e-5, atol=1e-10))


def test_symbol_multipliers():
    lam = np.array([0.5, 2.0, 10.0])
    assert (np.allclose(LaplaceSymbol(SymbolKind.EXPONENTIAL_DECAY, rate=2.0).multiplier(lam), lam / (2 + lam)))
    assert (np.allclose(LaplaceSymbol(SymbolKind.WINDOW, length=0.5).multiplier(lam), 1 - np.exp(-0.5 * lam)))
    ramp = LaplaceSymbol(SymbolKind.SAMPLED, times=(0.0, 1.0), samples=(1.0, 0.0))
    assert (np.allclose(ramp.multiplier(lam), 1 - (1 - np.exp(-lam)) / lam))
    flat = LaplaceSymbol(SymbolKind.SAMPLED, times=(0.5, 2.0), samples=(3.0, 3.0))
    assert (np.allclose(flat.multiplier(lam), 3.0))
    assert (ramp.bound == 1.0)


def test_symbol_validation():
    with pytest.raises(ParameterRangeError, match="rate > 0"):
        LaplaceSymbol(SymbolKind.EXPONENTIAL_DECAY, rate=0.0)
    with pytest.raises(ParameterRangeError, match="strictly ascending"):
        LaplaceSymbol(SymbolKind.SAMPLED, times=(1.0, 0.5), samples=(1.0, 1.0))
    with pytest.raises(ParameterRangeError, match="exceeds its declared bound"):
        LaplaceSymbol(SymbolKind.CONSTANT, value=2.0, bound=1.0)
    with pytest.raises(ConfigurationError, match=r"symbol\.scale: unknown key"):
        LaplaceSymbol.from_dict({"kind": "constant", "scale": 2})


def test_checked_multiplier_detects_overshoot():
    symbol = LaplaceSymbol(SymbolKind.EXPONENTIAL_DECAY, value=-1.0)
    object.__setattr__(symbol, "bound", 0.5)
    with pytest.raises(ConsistencyError, match="exceeds the symbol bound"):
        symbol.checked_multiplier(np.array([10.0]))


def test_laplace_multiplier_apply(manager, field, model):
    constant = manager.get(OperatorDescriptor("laplace-multiplier", symbol=LaplaceSymbol(SymbolKind.CONSTANT, 2.0)))
    assert (np.allclose(constant.apply(field).values, 2 * field.values))
    decay = manager.get(OperatorDescriptor("laplace-multiplier", symbol=LaplaceSymbol(SymbolKind.EXPONENTIAL_DECAY)))
    assert (np.allclose(decay.apply(field).values, model.apply(lambda lam: lam / (1 + lam), field).values))


def test_riesz(model, field):
    with pytest.raises(ParameterRangeError, match="Riesz axis"):
        riesz_apply(model, 3, field)
    defect = riesz_defect(model, field)
    assert (abs(defect.defect) < 0.1)
    assert (defect.potential_energy > 0)
    first, second = riesz_apply(model, 1, field), riesz_apply(model, 2, field)
    assert (first.norm(2) ** 2 + second.norm(2) ** 2 <= field.norm(2) ** 2 * 1.1)


def test_negative_power_routes_agree(model, field):
    spectral = negative_power(model, 1.0, field)
    quadrature = negative_power_quadrature(model, 1.0, field)
    assert (np.allclose(spectral.values, quadrature.values, rtol=1e-6, atol=1e-10))
    with pytest.raises(ParameterRangeError, match="gamma > 0"):
        negative_power(model, 0.0, field)


def test_singular_kernels_refuse_the_diagonal(manager):
    negative = manager.get(OperatorDescriptor("negative-power", gamma=1.0))
    with pytest.raises(OnDiagonalError, match="on-diagonal"):
        negative.kernel(X, X)


def test_admissible_alpha():
    grid = BoxGrid(3, 9, 4.0)
    factors = tuple(np.ones(grid.points) for _ in range(3))
    rough = Potential(grid, PotentialMode.SEPARABLE, factors=factors, q=6.0)
    smooth = build_potential("constant:1", grid)
    model = SpectralModel.assemble(smooth)
    manager = OperatorManager(model)
    assert (manager.get(OperatorDescriptor("identity")).admissible_alpha(rough) == 1.0)
    assert (manager.get(OperatorDescriptor("heat-at-t", t=1.0)).admissible_alpha(rough) == 1.0)
    assert (math.isclose(manager.get(OperatorDescriptor("riesz-component", axis=1)).admissible_alpha(rough), 0.5))
    assert (manager.get(OperatorDescriptor("riesz-component", axis=1)).admissible_alpha(smooth) == 1.0)
    assert (math.isclose(manager.get(OperatorDescriptor("negative-power", gamma=0.5)).admissible_alpha(smooth), 0.5))


def test_validate_alpha(manager, model):
    identity = manager.get(OperatorDescriptor("identity"))
    validate_alpha(identity, model.potential, 1.0)
    with pytest.raises(ParameterRangeError, match="alpha must be >= 0"):
        validate_alpha(identity, model.potential, -0.1)


def test_lp_norm_of_identity(manager, model):
    rng = np.random.default_rng(2)
    family = [model.random_smooth_field(rng) for _ in range(4)] + [GridFunction.zeros(model.grid)]
    report = lp_operator_norm(manager.get(OperatorDescriptor("identity")), family)
    assert (math.isclose(report.constant, 1.0))
    assert (report.excluded["zero_norm"] == 1)
    assert (report.header["q"] == 2.0)


def test_kernel_of_builds_a_manager(model):
    sample = kernel_of(OperatorDescriptor("heat-at-t", t=0.3), model, X, Y)
    assert (np.allclose(sample.values, model.heat_kernel(np.array([0.3]), X, Y)[0]))


def test_classification(manager):
    info = manager.get(OperatorDescriptor("g-poisson")).classification()
    assert (info["vector_norm"] == "F")
    assert (info["gamma"] == 0.0)
