"""
Critical radius function rho(x) = sup{r : r^(2-n) int_{B(x,r)} V <= 1} and the
covering of the box by critical balls.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from schrodinger.errors import ResolutionError
from schrodinger.grid import BoxGrid, ball_cells
from schrodinger.potential import Potential
from schrodinger.quadrature import slice_average
from schrodinger.report import VerificationReport

logger = logging.getLogger("schroedinger-lab")

DEFAULT_SCAN_SIZE = 64
DEFAULT_BISECTION_STEPS = 40
DEFAULT_TABLE_SIZE = 1024
# below-resolution points are refined down to 2h / BELOW_RESOLUTION_FLOOR
BELOW_RESOLUTION_FLOOR = 64.0
K0_GRID = np.round(np.arange(0.25, 20.0 + 1e-9, 0.25), 2)
CHUNK = 1 << 16


class CriticalRadius(NamedTuple):
    value: float
    capped: bool


@dataclass(frozen=True, eq=False)
class RhoField:
    grid: BoxGrid
    values: np.ndarray
    capped: np.ndarray
    below_resolution: np.ndarray
    scan_size: int
    bisection_steps: int
    r_min: float
    r_max: float

    def __post_init__(self) -> None:
        for name in ("values", "capped", "below_resolution"):
            getattr(self, name).setflags(write=False)
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ResolutionError("rho field must be finite and positive at every grid point")

    def at(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        return self.values[tuple(np.moveaxis(index, -1, 0))]

    def at_point(self, point: np.ndarray) -> np.ndarray:
        return self.at(self.grid.nearest_index(point))

    def is_capped(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        return self.capped[tuple(np.moveaxis(index, -1, 0))]

    def reliable(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        location = tuple(np.moveaxis(index, -1, 0))
        return ~(self.capped[location] | self.below_resolution[location])

    @property
    def reliable_mask(self) -> np.ndarray:
        return ~(self.capped | self.below_resolution)

    def summary(self) -> dict[str, float | int]:
        return dict(
            minimum=float(np.min(self.values)),
            maximum=float(np.max(self.values)),
            capped=int(np.count_nonzero(self.capped)),
            below_resolution=int(np.count_nonzero(self.below_resolution)),
            scan_size=self.scan_size,
            bisection_steps=self.bisection_steps,
            r_min=self.r_min,
            r_max=self.r_max,
        )


def ball_mass_ratio(potential: Potential, point: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Phi(x, r) = r^(2-n) int_{B(x,r)} V for a fixed point and many radii"""
    radii = np.asarray(radii, dtype=float)
    n = potential.dimension
    if potential.is_separable:
        total = np.zeros_like(radii)
        for spline, coordinate in zip(potential.splines, point):
            total = total + slice_average(spline, n, coordinate, radii)
        return radii ** 2 * total
    return _dense_mass_ratio(potential, point, radii)


def _dense_mass_ratio(potential: Potential, point: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return _DenseProfile(potential, point)(radii)


class _DenseProfile:
    """cell-center inclusion mass of V around one point, sorted once by distance"""

    def __init__(self, potential: Potential, point: np.ndarray):
        grid = potential.grid
        coordinates = grid.coordinates(grid.unravel(np.arange(grid.size)))
        distance = np.sqrt(np.sum((coordinates - np.asarray(point)) ** 2, axis=-1))
        order = np.argsort(distance, kind="stable")
        self.distance = distance[order]
        self.mass = np.cumsum(potential.values.reshape(-1)[order]) * grid.cell_volume
        self.exponent = 2 - grid.dimension

    def __call__(self, radii: np.ndarray) -> np.ndarray:
        radii = np.asarray(radii, dtype=float)
        count = np.searchsorted(self.distance, radii * (1 + 1e-12), side="right")
        enclosed = np.where(count > 0, self.mass[np.maximum(count - 1, 0)], 0.0)
        return radii ** self.exponent * enclosed


def _scan(phi, lower: float, cap: float, scan_size: int, steps: int) -> tuple[float, bool, bool]:
    """sup-convention scan over log radii followed by bisection; (rho, capped, below resolution)"""
    if cap <= lower:
        if float(phi(np.array([cap]))[0]) <= 1.0:
            return cap, True, False
        lo, hi = lower / BELOW_RESOLUTION_FLOOR, cap
        below = True
    else:
        radii = np.geomspace(lower, cap, scan_size)
        admissible = phi(radii) <= 1.0
        if not admissible[0]:
            lo, hi = lower / BELOW_RESOLUTION_FLOOR, lower
            below = True
        else:
            last = int(np.flatnonzero(admissible)[-1])
            if last == scan_size - 1:
                return cap, True, False
            lo, hi = float(radii[last]), float(radii[last + 1])
            below = False
    if below and float(phi(np.array([lo]))[0]) > 1.0:
        return lo, False, True
    for _ in range(steps):
        middle = 0.5 * (lo + hi)
        if float(phi(np.array([middle]))[0]) <= 1.0:
            lo = middle
        else:
            hi = middle
    return lo, False, below


def critical_radius(potential: Potential, point: np.ndarray, scan_size: int = DEFAULT_SCAN_SIZE,
                    bisection_steps: int = DEFAULT_BISECTION_STEPS) -> CriticalRadius:
    """
    rho at one point of the box. The scan is capped at the distance to the
    wall; a point where even the smallest scan radius 2h is inadmissible
    raises "rho below resolution".
    """
    grid = potential.grid
    point = np.asarray(point, dtype=float)
    cap = float(grid.wall_distance(point))
    if cap <= 0:
        raise ValueError(f"point {tuple(point)} is not inside the box")
    if potential.is_separable:
        phi = lambda r: ball_mass_ratio(potential, point, r)  # noqa: E731
    else:
        phi = _DenseProfile(potential, point)
    value, capped, below = _scan(phi, 2 * grid.spacing, cap, scan_size, bisection_steps)
    if below:
        raise ResolutionError(f"rho below resolution at {tuple(float(p) for p in point)}: "
                              f"no admissible radius at 2h = {2 * grid.spacing:.4g}")
    return CriticalRadius(value, capped)


class _SliceTable:
    """per-axis r^-n ball integrals tabulated on log-spaced radii"""

    def __init__(self, potential: Potential, lower: float, upper: float, size: int):
        self.log_lower = math.log(lower)
        self.log_step = (math.log(upper) - self.log_lower) / (size - 1)
        self.size = size
        radii = np.exp(self.log_lower + self.log_step * np.arange(size))
        axis = potential.grid.axis
        self.tables = [slice_average(spline, potential.dimension, axis[:, None], radii[None, :])
                       for spline in potential.splines]

    def __call__(self, index: np.ndarray, radii: np.ndarray) -> np.ndarray:
        position = (np.log(radii) - self.log_lower) / self.log_step
        k = np.clip(np.floor(position).astype(np.int64), 0, self.size - 2)
        weight = position - k
        total = np.zeros_like(radii)
        for axis, table in enumerate(self.tables):
            row = index[:, axis]
            total += table[row, k] * (1 - weight) + table[row, k + 1] * weight
        return radii ** 2 * total


def rho_field(potential: Potential, scan_size: int = DEFAULT_SCAN_SIZE,
              bisection_steps: int = DEFAULT_BISECTION_STEPS, table_size: int = DEFAULT_TABLE_SIZE) -> RhoField:
    """
    rho at every node. Capped points are flagged; points with no admissible
    radius at 2h are refined below the scan and flagged instead of raising.
    """
    grid = potential.grid
    lower = 2 * grid.spacing
    values = np.empty(grid.size)
    capped = np.zeros(grid.size, dtype=bool)
    below = np.zeros(grid.size, dtype=bool)

    if potential.is_separable:
        table = _SliceTable(potential, lower / BELOW_RESOLUTION_FLOOR, grid.half_width, table_size)
        for start in range(0, grid.size, CHUNK):
            flat = np.arange(start, min(start + CHUNK, grid.size))
            index = grid.unravel(flat)
            rho, cap_flag, below_flag = _scan_vectorized(table, index, grid, lower, scan_size, bisection_steps)
            values[flat], capped[flat], below[flat] = rho, cap_flag, below_flag
    else:
        coordinates = grid.coordinates(grid.unravel(np.arange(grid.size)))
        for flat in range(grid.size):
            point = coordinates[flat]
            values[flat], capped[flat], below[flat] = _scan(
                _DenseProfile(potential, point), lower, float(grid.wall_distance(point)), scan_size, bisection_steps)

    if np.any(capped):
        logger.warning("rho capped at the wall distance on %s of %s nodes", int(np.count_nonzero(capped)), grid.size)
    if np.any(below):
        logger.warning("rho below resolution (< 2h) on %s of %s nodes", int(np.count_nonzero(below)), grid.size)
    return RhoField(grid, values.reshape(grid.shape), capped.reshape(grid.shape), below.reshape(grid.shape),
                    scan_size, bisection_steps, lower, grid.half_width - grid.spacing)


def _scan_vectorized(table: _SliceTable, index: np.ndarray, grid: BoxGrid, lower: float, scan_size: int,
                     steps: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cap = grid.wall_distance(grid.coordinates(index))
    count = len(cap)
    top = np.maximum(cap, lower)
    last = np.full(count, -1)
    for k in range(scan_size):
        radius = lower * (top / lower) ** (k / (scan_size - 1))
        admissible = table(index, radius) <= 1.0
        last = np.where(admissible, k, last)

    capped = last == scan_size - 1
    below = last < 0
    lo = np.where(below, lower / BELOW_RESOLUTION_FLOOR,
                  lower * (top / lower) ** (np.maximum(last, 0) / (scan_size - 1)))
    hi = np.where(below, lower, lower * (top / lower) ** (np.minimum(last + 1, scan_size - 1) / (scan_size - 1)))
    hi = np.minimum(hi, top)
    for _ in range(steps):
        middle = 0.5 * (lo + hi)
        admissible = table(index, middle) <= 1.0
        lo = np.where(admissible, middle, lo)
        hi = np.where(admissible, hi, middle)

    rho = np.where(capped, top, lo)
    # walls closer than 2h: the single scan radius is the cap itself
    tight = cap <= lower
    if np.any(tight):
        at_cap = table(index[tight], cap[tight]) <= 1.0
        rho[tight] = np.where(at_cap, cap[tight], rho[tight])
        capped[tight] = at_cap
        below[tight] = ~at_cap
    return rho, capped, below


def random_pairs(grid: BoxGrid, rho: RhoField, count: int, rng: np.random.Generator,
                 margin: float) -> tuple[np.ndarray, np.ndarray]:
    """pairs of node indices inside the margin region, the second within a few rho of the first"""
    inner = grid.half_width - margin
    if inner <= 0:
        inner = grid.half_width / 2
    first = grid.nearest_index(rng.uniform(-inner, inner, size=(count, grid.dimension)))
    direction = rng.standard_normal(size=(count, grid.dimension))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    scale = rho.at(first) * 10 ** rng.uniform(-1.5, 0.7, size=count)
    second = grid.nearest_index(grid.coordinates(first) + scale[:, None] * direction)
    return first, second


def rho_equivalence_check(rho: RhoField, first: np.ndarray, second: np.ndarray) -> VerificationReport:
    """
    Fits the smallest c (over a grid of k0) with
    c^-1 rho(x) (1 + |x-y|/rho(x))^-k0 <= rho(y) <= c rho(x) (1 + |x-y|/rho(x))^(k0/(k0+1))
    and the largest C1 with C1 rho(x) < rho(y) < rho(x)/C1 when |x-y| <= rho(x).
    """
    grid = rho.grid
    first = np.asarray(first, dtype=np.int64)
    second = np.asarray(second, dtype=np.int64)
    reliable = rho.reliable(first) & rho.reliable(second)
    same = np.all(first == second, axis=-1)
    keep = reliable & ~same
    excluded = dict(capped=int(np.count_nonzero(~reliable)), coincident=int(np.count_nonzero(reliable & same)))
    if excluded["capped"]:
        logger.warning("rho equivalence: %s pairs with capped rho excluded", excluded["capped"])

    x, y = first[keep], second[keep]
    rho_x, rho_y = rho.at(x), rho.at(y)
    distance = np.linalg.norm(grid.coordinates(x) - grid.coordinates(y), axis=-1)
    ratio = rho_y / rho_x
    scaled = 1.0 + distance / rho_x

    curve = []
    for k0 in K0_GRID:
        lower_need = np.max(1.0 / (ratio * scaled ** k0)) if len(ratio) else 1.0
        upper_need = np.max(ratio * scaled ** (-k0 / (k0 + 1))) if len(ratio) else 1.0
        curve.append(max(1.0, float(lower_need), float(upper_need)))
    best = int(np.argmin(curve))
    c, k0 = curve[best], float(K0_GRID[best])

    near = distance <= rho_x
    c1 = float(np.min(np.minimum(ratio[near], 1.0 / ratio[near]))) if np.any(near) else math.nan

    rows = [(*map(int, a), *map(int, b), float(rx), float(ry), float(d),
             float(r * s ** k0 * c), float(c * s ** (k0 / (k0 + 1)) / r))
            for a, b, rx, ry, d, r, s in zip(x, y, rho_x, rho_y, distance, ratio, scaled)]
    n = grid.dimension
    columns = (tuple(f"i{k + 1}" for k in range(n)) + tuple(f"j{k + 1}" for k in range(n))
               + ("rho_x", "rho_y", "distance", "lower_margin", "upper_margin"))
    report = VerificationReport.from_ratios(
        "rho_equivalence", columns, rows, np.array([c]), excluded=excluded,
        header=dict(c=c, k0=k0, C1=c1, near_pairs=int(np.count_nonzero(near)),
                    c_curve=[dict(k0=float(k), c=float(v)) for k, v in zip(K0_GRID, curve)]))
    return report


@dataclass(frozen=True, eq=False)
class CriticalCovering:
    grid: BoxGrid
    centers: np.ndarray
    radii: np.ndarray
    membership: np.ndarray
    overlap: int
    intersection_count: int

    @property
    def size(self) -> int:
        return len(self.radii)

    def center_points(self) -> np.ndarray:
        return self.grid.coordinates(self.centers)

    def covered(self) -> bool:
        return bool(np.all(self.membership >= 0))

    def summary(self) -> dict[str, int]:
        return dict(size=self.size, overlap=self.overlap, intersection_count=self.intersection_count)


def critical_covering(rho: RhoField, dilation: float = 4.0) -> CriticalCovering:
    """
    Greedy covering by Q_k = B(x_k, rho(x_k)): pick the uncovered node with the
    largest rho until every node is covered. The overlap N is the largest
    number of Q_k** = B(x_k, 4 rho(x_k)) containing one node.
    """
    grid = rho.grid
    flat_rho = rho.values.reshape(-1)
    order = np.argsort(-flat_rho, kind="stable")
    covered = np.zeros(grid.size, dtype=bool)
    membership = np.full(grid.size, -1, dtype=np.int64)
    centers: list[int] = []
    coordinates = grid.coordinates(grid.unravel(order))
    for position, flat in enumerate(order):
        if covered[flat]:
            continue
        center = tuple(float(c) for c in coordinates[position])
        cells = ball_cells(grid, center, float(flat_rho[flat]))
        fresh = cells[~covered[cells]]
        membership[fresh] = len(centers)
        covered[cells] = True
        centers.append(int(flat))

    center_index = grid.unravel(np.asarray(centers, dtype=np.int64))
    radii = flat_rho[centers]
    counts = np.zeros(grid.size, dtype=np.int64)
    for index, radius in zip(grid.coordinates(center_index), radii):
        counts[ball_cells(grid, tuple(float(c) for c in index), dilation * float(radius))] += 1
    covering = CriticalCovering(grid, center_index, radii, membership.reshape(grid.shape), int(counts.max()), 0)
    intersections = covering_intersection_count(covering, dilation)
    logger.info("critical covering: %s balls, overlap N = %s, intersection count = %s",
                covering.size, covering.overlap, intersections)
    return CriticalCovering(grid, center_index, radii, covering.membership, covering.overlap, intersections)


def covering_intersection_count(covering: CriticalCovering, dilation: float = 4.0) -> int:
    """max over k of the number of j with Q_j** meeting Q_k**"""
    points = covering.center_points()
    if len(points) == 1:
        return 1
    tree = cKDTree(points)
    reach = dilation * covering.radii
    candidates = tree.query_ball_point(points, reach + float(np.max(reach)))
    best = 0
    for k, neighbours in enumerate(candidates):
        neighbours = np.asarray(neighbours, dtype=np.int64)
        gaps = np.linalg.norm(points[neighbours] - points[k], axis=-1)
        best = max(best, int(np.count_nonzero(gaps <= reach[neighbours] + reach[k])))
    return best
