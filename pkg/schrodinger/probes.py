import logging
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from schrodinger.errors import ParameterRangeError
from schrodinger.grid import BoxGrid
from schrodinger.rho import RhoField

logger = logging.getLogger("schroedinger-lab")

# one child stream of the seed per sampled quantity
STREAMS = ("anchor", "direction", "separation", "diagonal", "z_direction", "z_ratio", "time")


@dataclass(frozen=True)
class ProbePolicy:
    """
    How probe tuples (x, y, z, t) are drawn: |x - y| = rho(x) 10^u with u
    uniform over `separation_decades`, |y - z| = max(|x - y|, sqrt t) 10^v
    with v uniform over `z_decades`, and t = time_floor_cells * h^2 10^w over
    `time_decades` decades (None: up to the squared half-width of the box).
    """
    count: int = 256
    separation_decades: tuple[float, float] = (-1.5, 0.5)
    z_decades: tuple[float, float] = (-2.0, -0.35)
    time_floor_cells: float = 4.0
    time_decades: float | None = None
    diagonal_fraction: float = 0.1
    margin: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ParameterRangeError(f"probe count must be >= 1, got {self.count}")
        if not 0 <= self.diagonal_fraction < 1:
            raise ParameterRangeError(f"diagonal fraction must lie in [0, 1), got {self.diagonal_fraction}")
        for name in ("separation_decades", "z_decades"):
            low, high = getattr(self, name)
            if not low < high:
                raise ParameterRangeError(f"{name} must be an ascending pair, got {(low, high)}")
        if not self.time_floor_cells > 0:
            raise ParameterRangeError(f"time floor must be positive, got {self.time_floor_cells}")

    def doubled(self) -> "ProbePolicy":
        return replace(self, count=2 * self.count)

    def time_range(self, grid: BoxGrid) -> tuple[float, float]:
        floor = self.time_floor_cells * grid.spacing ** 2
        if self.time_decades is None:
            return floor, max(grid.half_width ** 2, 10 * floor)
        return floor, floor * 10 ** self.time_decades

    def to_dict(self) -> dict[str, Any]:
        return dict(count=self.count, separation_decades=list(self.separation_decades),
                    z_decades=list(self.z_decades), time_floor_cells=self.time_floor_cells,
                    time_decades=self.time_decades, diagonal_fraction=self.diagonal_fraction,
                    margin=self.margin, seed=self.seed)


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """node multi-indices x, y, z of shape (P, n), times t (P,) and the margin flags"""
    grid: BoxGrid
    policy: ProbePolicy
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    t: np.ndarray
    margin_ok: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def points_x(self) -> np.ndarray:
        return self.grid.coordinates(self.x)

    @property
    def points_y(self) -> np.ndarray:
        return self.grid.coordinates(self.y)

    @property
    def points_z(self) -> np.ndarray:
        return self.grid.coordinates(self.z)

    @property
    def distance(self) -> np.ndarray:
        """|x - y|"""
        return np.linalg.norm(self.points_x - self.points_y, axis=-1)

    @property
    def z_distance(self) -> np.ndarray:
        """|y - z|"""
        return np.linalg.norm(self.points_y - self.points_z, axis=-1)

    @property
    def diagonal(self) -> np.ndarray:
        return np.all(self.x == self.y, axis=-1)

    def wall_distance(self) -> np.ndarray:
        return self.grid.wall_distance(self.points_x)

    def doubled(self, rho: RhoField) -> "ProbeSet":
        """twice the probe density; the first len(self) probes are unchanged"""
        return probe_set(self.grid, rho, self.policy.doubled())

    def summary(self) -> dict[str, Any]:
        return dict(count=len(self), diagonal=int(np.count_nonzero(self.diagonal)),
                    margin_ok=int(np.count_nonzero(self.margin_ok)),
                    t_min=float(np.min(self.t)), t_max=float(np.max(self.t)), policy=self.policy.to_dict())


def probe_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(child)) for name, child in zip(STREAMS, children)}


def _unit_vectors(rng: np.random.Generator, count: int, dimension: int) -> np.ndarray:
    direction = rng.standard_normal(size=(count, dimension))
    norm = np.linalg.norm(direction, axis=-1, keepdims=True)
    return direction / np.where(norm > 0, norm, 1.0)


def probe_set(grid: BoxGrid, rho: RhoField, policy: ProbePolicy | None = None) -> ProbeSet:
    """
    Draws the probe tuples. Each quantity has its own Philox stream, so a
    policy with a larger count reproduces the smaller set as its prefix.
    """
    policy = policy or ProbePolicy()
    count, n = policy.count, grid.dimension
    streams = probe_streams(policy.seed)

    inner = grid.half_width - policy.margin
    if inner <= 0:
        logger.warning("margin %s leaves no interior in a box of half-width %s, sampling the inner half",
                       policy.margin, grid.half_width)
        inner = grid.half_width / 2
    x = grid.nearest_index(streams["anchor"].uniform(-inner, inner, size=(count, n)))
    origin = grid.coordinates(x)

    low, high = policy.separation_decades
    separation = rho.at(x) * 10 ** streams["separation"].uniform(low, high, size=count)
    y = grid.nearest_index(origin + separation[:, None] * _unit_vectors(streams["direction"], count, n))
    on_diagonal = streams["diagonal"].uniform(size=count) < policy.diagonal_fraction
    y[on_diagonal] = x[on_diagonal]

    t_low, t_high = policy.time_range(grid)
    t = t_low * (t_high / t_low) ** streams["time"].uniform(size=count)

    scale = np.maximum(np.linalg.norm(grid.coordinates(y) - origin, axis=-1), np.sqrt(t))
    low, high = policy.z_decades
    step = scale * 10 ** streams["z_ratio"].uniform(low, high, size=count)
    z = grid.nearest_index(grid.coordinates(y) + step[:, None] * _unit_vectors(streams["z_direction"], count, n))

    margin_ok = np.ones(count, dtype=bool)
    for index in (x, y, z):
        margin_ok &= grid.wall_distance(grid.coordinates(index)) >= policy.margin - 1e-12
    if not np.any(margin_ok):
        logger.warning("no probe lies at distance >= %s from the walls", policy.margin)
    logger.debug("drew %d probes (%d on the diagonal, %d inside the margin)", count,
                 int(np.count_nonzero(on_diagonal)), int(np.count_nonzero(margin_ok)))
    return ProbeSet(grid=grid, policy=policy, x=x, y=y, z=z, t=t, margin_ok=margin_ok)
