import numpy as np
import pytest

from schrodinger.errors import ParameterRangeError
from schrodinger.grid import BoxGrid
from schrodinger.potential import build_potential
from schrodinger.probes import ProbePolicy, probe_set
from schrodinger.rho import rho_field


@pytest.fixture(scope="module")
def rho():
    return rho_field(build_potential("constant:0.1", BoxGrid(3, 15, 4.0)))


def test_policy_validation():
    with pytest.raises(ParameterRangeError, match="probe count"):
        ProbePolicy(count=0)
    with pytest.raises(ParameterRangeError, match="diagonal fraction"):
        ProbePolicy(diagonal_fraction=1.0)
    with pytest.raises(ParameterRangeError, match="ascending pair"):
        ProbePolicy(z_decades=(0.0, -1.0))
    with pytest.raises(ParameterRangeError, match="time floor"):
        ProbePolicy(time_floor_cells=0.0)


def test_time_range():
    grid = BoxGrid(3, 15, 4.0)
    assert (ProbePolicy().time_range(grid) == (4 * 0.25, 16.0))
    assert (ProbePolicy(time_decades=2.0).time_range(grid) == pytest.approx((1.0, 100.0)))


def test_probe_set_is_reproducible(rho):
    policy = ProbePolicy(count=32, seed=7)
    first, second = probe_set(rho.grid, rho, policy), probe_set(rho.grid, rho, policy)
    for name in ("x", "y", "z", "t"):
        assert (np.array_equal(getattr(first, name), getattr(second, name)))


def test_doubling_keeps_the_prefix(rho):
    small = probe_set(rho.grid, rho, ProbePolicy(count=32, seed=7))
    large = small.doubled(rho)
    assert (len(large) == 64)
    for name in ("x", "y", "z", "t", "margin_ok"):
        assert (np.array_equal(getattr(large, name)[:32], getattr(small, name)))


def test_probe_ranges(rho):
    policy = ProbePolicy(count=200, diagonal_fraction=0.5, seed=1)
    probes = probe_set(rho.grid, rho, policy)
    low, high = policy.time_range(rho.grid)
    assert (np.all((probes.t >= low) & (probes.t <= high)))
    assert (0 < np.count_nonzero(probes.diagonal) < 200)
    assert (np.all(probes.distance[probes.diagonal] == 0))
    inside = probes.margin_ok
    assert (np.all(probes.wall_distance()[inside] >= policy.margin - 1e-12))
    summary = probes.summary()
    assert (summary["count"] == 200)
    assert (summary["policy"]["diagonal_fraction"] == 0.5)


def test_seeds_differ(rho):
    first = probe_set(rho.grid, rho, ProbePolicy(count=32, seed=1))
    second = probe_set(rho.grid, rho, ProbePolicy(count=32, seed=2))
    assert (not np.array_equal(first.t, second.t))
