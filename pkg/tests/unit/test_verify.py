import math

import numpy as np
import pytest

from operators import OperatorDescriptor
from schrodinger.errors import ParameterRangeError
from schrodinger.grid import BoxGrid
from schrodinger.potential import Potential, build_potential
from schrodinger.probes import ProbePolicy, probe_set
from schrodinger.report import Verdict, VerificationReport
from schrodinger.rho import rho_field
from schrodinger.spectral import SpectralModel
from schrodinger.verify import (N_VALUES, TEMPLATES, EstimateId, EstimateParams, EstimateVerifier,
                                heat_gaussian_calibration, kernel_probe_dump, report_bundle, report_name,
                                resolve_params, verify_estimate, verify_estimates)

GRID = BoxGrid(2, 24, 4.0)


@pytest.fixture(scope="module")
def model():
    return SpectralModel.assemble(build_potential("constant:0.1", GRID))


@pytest.fixture(scope="module")
def rho(model):
    return rho_field(model.potential)


@pytest.fixture(scope="module")
def probes(rho):
    return probe_set(GRID, rho, ProbePolicy(count=48, seed=5))


def test_every_estimate_has_a_template():
    assert (set(TEMPLATES) == set(EstimateId))
    assert (EstimateId.HEAT_GAUSSIAN.order == 0)
    assert (EstimateId.NEGPOW_HOLDER.order == len(EstimateId) - 1)


def test_report_name():
    assert (report_name(EstimateId.HEAT_GAUSSIAN) == "HEAT_GAUSSIAN[N=2]")
    assert (report_name(EstimateId.NEGPOW_SIZE, EstimateParams(N=1)) == "NEGPOW_SIZE[N=1,gamma=0.5]")
    assert (report_name(EstimateId.NEGPOW_HOLDER, EstimateParams(gamma=1.0)) == "NEGPOW_HOLDER[gamma=1]")
    assert (report_name(EstimateId.HEAT_HOLDER) == "HEAT_HOLDER[N=2]")
    assert (report_name(EstimateId.MAXIMAL_HOLDER) == "MAXIMAL_HOLDER")


def test_resolve_params_defaults(model):
    # q is infinite for the presets, so delta0 = 2
    assert (resolve_params(EstimateId.HEAT_HOLDER, model, None)["delta"] == 1.0)
    assert (resolve_params(EstimateId.HEAT_DIFF_OF_DIFF, model, None)["delta"] == 0.5)
    assert (resolve_params(EstimateId.RIESZ_HOLDER, model, None)["delta"] == 0.5)
    assert (resolve_params(EstimateId.HEAT_GAUSSIAN, model, None)["delta"] is None)
    finite = SpectralModel.assemble(build_potential("constant:0.1", GRID, q=3.0))
    assert (math.isclose(resolve_params(EstimateId.RIESZ_HOLDER, finite, None)["delta"], 1 / 6))
    assert (math.isclose(resolve_params(EstimateId.TDERIV_MEAN, finite, None)["delta0"], 4 / 3))


def test_resolve_params_ranges(model):
    with pytest.raises(ParameterRangeError, match="delta must lie in"):
        resolve_params(EstimateId.HEAT_HOLDER, model, EstimateParams(delta=2.0))
    with pytest.raises(ParameterRangeError, match="N must be > 0"):
        resolve_params(EstimateId.TDERIV_SIZE, model, EstimateParams(N=0))
    with pytest.raises(ParameterRangeError, match="gamma must lie in"):
        resolve_params(EstimateId.NEGPOW_SIZE, model, EstimateParams(gamma=2.0))
    low = SpectralModel.assemble(build_potential("constant:0.1", GRID, q=1.5))
    with pytest.raises(ParameterRangeError, match="need q > n"):
        resolve_params(EstimateId.RIESZ_SIZE, low, None)


def test_select_tallies_every_probe(model, rho, probes):
    verifier = EstimateVerifier(model, rho)
    for estimate in EstimateId:
        index, excluded = verifier.select(estimate, probes)
        assert (len(index) + sum(excluded.values()) == len(probes))
        if TEMPLATES[estimate].singular:
            assert ("on_diagonal" in excluded)
    _, excluded = verifier.select(EstimateId.HEAT_HOLDER, probes)
    assert ("z_outside_sqrt_t" in excluded)


def test_verify_heat_gaussian(model, rho, probes):
    report = verify_estimate(EstimateId.HEAT_GAUSSIAN, model, rho, probes)
    assert (report.name == "HEAT_GAUSSIAN[N=2]")
    assert (report.finite)
    assert (report.constant > 0)
    assert (report.stability_delta is not None)
    assert (report.header["estimate"] == "heat-gaussian")
    assert (report.header["min_kernel"] is not None)
    assert (report.columns[-4:] == ("t", "measured", "bound", "ratio"))
    assert (len(report.rows) + sum(report.excluded.values()) == len(probes))


@pytest.mark.parametrize("estimate", [EstimateId.HEAT_FREE_COMPARISON, EstimateId.HEAT_DIFF_OF_DIFF])
def test_free_comparison_weight(model, rho, probes, estimate):
    report = verify_estimate(estimate, model, rho, probes, stability=False)
    assert (report.header["omega"] == "e^{-|u|^2}")
    assert ("e^{-|u|^2/5}" not in report.header["bound"])
    if estimate != EstimateId.HEAT_FREE_COMPARISON or not report.rows:
        return
    delta0 = report.header["delta0"]
    for row in report.rows:
        x, y = np.array(row[1:3]), np.array(row[3:5])
        t, bound = row[-4], row[-2]
        rho_x = float(rho.at_point(x))
        expected = (math.sqrt(t) / rho_x) ** delta0 / t * math.exp(-float(np.sum((x - y) ** 2)) / t)
        assert (math.isclose(bound, expected, rel_tol=1e-9))


def test_verify_time_derivative_identity(model, rho):
    policy = ProbePolicy(count=128, time_floor_cells=0.01, margin=2.0, diagonal_fraction=0.0, seed=9)
    probes = probe_set(GRID, rho, policy)
    report = verify_estimate(EstimateId.TDERIV_IDENTITY, model, rho, probes, stability=False)
    assert (report.excluded["boundary_layer"] > 0)
    assert (len(report.rows) > 0)
    # for constant V the identity only fails through the walls
    assert (report.constant < 1e-4)


def test_verify_singular_estimate_skips_the_diagonal(model, rho, probes):
    report = verify_estimate(EstimateId.MAXIMAL_SIZE, model, rho, probes, stability=False)
    assert (report.excluded["on_diagonal"] == int(np.count_nonzero(probes.diagonal & probes.margin_ok)))
    assert (report.header["tgrid_size"] > 0)
    assert (all(row[-4] is None for row in report.rows))


def test_verify_estimates_sweeps_n_and_gamma(model, rho, probes):
    reports = verify_estimates(model, rho, probes, estimates=[EstimateId.HEAT_GAUSSIAN, EstimateId.NEGPOW_SIZE],
                               stability=False, gammas=(0.5, 1.0))
    names = [report.name for report in reports]
    assert (len(reports) == len(N_VALUES) * 3)
    assert ("NEGPOW_SIZE[N=8,gamma=1]" in names)
    assert ("HEAT_GAUSSIAN[N=1]" in names)
    assert (all(report.finite for report in reports))


def test_verify_estimates_skips_riesz_below_n():
    low = SpectralModel.assemble(build_potential("constant:0.1", GRID, q=1.5))
    field = rho_field(low.potential)
    probes = probe_set(GRID, field, ProbePolicy(count=8))
    assert (verify_estimates(low, field, probes, estimates=[EstimateId.RIESZ_SIZE], stability=False) == [])


def test_free_potential_adds_the_calibration():
    free = SpectralModel.assemble(Potential.free(GRID))
    field = rho_field(free.potential)
    probes = probe_set(GRID, field, ProbePolicy(count=16))
    reports = verify_estimates(free, field, probes, estimates=[EstimateId.HEAT_GAUSSIAN], stability=False)
    assert (reports[-1].name == "HEAT_GAUSSIAN[free-continuum,N=1]")


def test_heat_gaussian_calibration():
    report = heat_gaussian_calibration(3, 1.0)
    expected = (4 * math.pi) ** -1.5
    assert (report.header["expected"] == expected)
    # attained on the diagonal at the largest time, where the bracket gives 1 + 2 sqrt(t)
    assert (report.constant >= expected)
    assert (math.isclose(report.constant, expected * 1.02, rel_tol=1e-9))


def _report(name: str, constant: float) -> VerificationReport:
    return VerificationReport.from_ratios(name, ("ratio",), [(constant,)], np.array([constant]))


def test_report_bundle_order_and_verdict():
    bundle = report_bundle([_report("rho_equivalence", 1.0), _report("NEGPOW_SIZE[N=1,gamma=0.5]", 2.0),
                            _report("HEAT_GAUSSIAN[N=2]", 0.3)])
    assert ([report.name for report in bundle.reports]
            == ["HEAT_GAUSSIAN[N=2]", "NEGPOW_SIZE[N=1,gamma=0.5]", "rho_equivalence"])
    assert (bundle.verdict == Verdict.CONSISTENT)
    assert (bundle.exit_code == 0)
    assert (bundle.flagged() == [])
    assert (bundle.to_dict()["verdict"] == Verdict.CONSISTENT.value)


def test_report_bundle_flags_non_finite():
    bundle = report_bundle([_report("HEAT_GAUSSIAN[N=2]", 0.3), _report("TDERIV_SIZE[N=2]", math.nan)])
    assert (bundle.verdict == Verdict.NON_FINITE)
    assert (bundle.exit_code == 1)
    assert (bundle.flagged() == [f"{Verdict.NON_FINITE.value} TDERIV_SIZE[N=2]"])


def test_kernel_probe_dump(model, probes):
    rows = kernel_probe_dump(OperatorDescriptor("heat-at-t", t=0.5), model, probes)
    assert (len(rows) == len(probes))
    assert (all(row[0] == "heat-at-t" and row[1] == 0.5 for row in rows))
    singular = kernel_probe_dump(OperatorDescriptor("negative-power", gamma=0.5), model, probes)
    assert (len(singular) == int(np.count_nonzero(~probes.diagonal)))
    assert (all(row[1] is None for row in singular))
