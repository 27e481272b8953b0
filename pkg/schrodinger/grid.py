import logging
import math
from dataclasses import dataclass
from typing import Callable

import cachetools.func
import numpy as np

from schrodinger.errors import GridTooCoarseError

logger = logging.getLogger("schroedinger-lab")

MIN_POINTS = 8


def ball_volume(dimension: int, radius: float = 1.0) -> float:
    """Lebesgue volume of the euclidean ball of the given radius"""
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1) * radius ** dimension


@dataclass(frozen=True)
class BoxGrid:
    """
    Cell-centered tensor grid of the box [-half_width, half_width]^dimension.

    The interior nodes are x_j = -L + j*h, j = 1..m, with h = 2L/(m+1); the
    Dirichlet walls sit at +-L and every node carries a cell of volume h^n.
    """
    dimension: int
    points: int
    half_width: float

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.points < MIN_POINTS:
            raise GridTooCoarseError(f"grid too coarse: m = {self.points} < {MIN_POINTS} points per axis")
        if not self.half_width > 0:
            raise ValueError(f"box half-width must be positive, got {self.half_width}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points + 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dimension

    @property
    def size(self) -> int:
        return self.points ** self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(1, self.points + 1)

    def mesh(self) -> list[np.ndarray]:
        """sparse coordinate arrays broadcasting to the grid shape"""
        return np.meshgrid(*([self.axis] * self.dimension), indexing="ij", sparse=True)

    def coordinates(self, index: np.ndarray) -> np.ndarray:
        """coordinates of integer multi-indices of shape (..., n)"""
        return self.axis[np.asarray(index, dtype=np.int64)]

    def unravel(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape), axis=-1)

    def ravel(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(index, -1, 0)), self.shape)

    def nearest_index(self, point: np.ndarray) -> np.ndarray:
        """multi-index of the node nearest to each point, clipped into the grid"""
        point = np.asarray(point, dtype=float)
        index = np.rint((point + self.half_width) / self.spacing).astype(np.int64) - 1
        return np.clip(index, 0, self.points - 1)

    def snap(self, point: np.ndarray) -> np.ndarray:
        return self.coordinates(self.nearest_index(point))

    def wall_distance(self, point: np.ndarray) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        return self.half_width - np.max(np.abs(point), axis=-1)

    def distance_field(self, center: np.ndarray) -> np.ndarray:
        squared = sum((coordinate - c) ** 2 for coordinate, c in zip(self.mesh(), center))
        return np.sqrt(np.broadcast_to(squared, self.shape))

    def interior_mask(self, margin: float) -> np.ndarray:
        """nodes at least `margin` away from every wall"""
        per_axis = self.half_width - np.abs(self.axis) >= margin - 1e-12 * self.spacing
        mask = per_axis
        for _ in range(self.dimension - 1):
            mask = np.multiply.outer(mask, per_axis)
        return np.asarray(mask, dtype=bool).reshape(self.shape)

    def shrunk(self, cells: int) -> "BoxGrid":
        """the box with `cells` nodes removed next to every wall; spacing is unchanged"""
        return BoxGrid(self.dimension, self.points - 2 * cells, self.half_width - cells * self.spacing)

    def refined(self) -> "BoxGrid":
        """twice the resolution on the same box (m -> 2m + 1 keeps every node)"""
        return BoxGrid(self.dimension, 2 * self.points + 1, self.half_width)

    def describe(self) -> dict[str, float | int]:
        return dict(dimension=self.dimension, points=self.points, half_width=self.half_width, spacing=self.spacing)


def _axis_window(grid: BoxGrid, center: float, radius: float) -> np.ndarray:
    h = grid.spacing
    slack = 1e-9
    lo = max(math.ceil((center - radius + grid.half_width) / h - 1 - slack), 0)
    hi = min(math.floor((center + radius + grid.half_width) / h - 1 + slack), grid.points - 1)
    return np.arange(lo, hi + 1)


def ball_cells(grid: BoxGrid, center: tuple[float, ...], radius: float) -> np.ndarray:
    """
    Flat indices of the cells whose centers lie in the closed ball B(center, radius),
    in ascending order.
    """
    ranges = [_axis_window(grid, c, radius) for c in center]
    if any(len(r) == 0 for r in ranges):
        return np.zeros(0, dtype=np.int64)
    offsets = np.meshgrid(*[grid.axis[r] - c for r, c in zip(ranges, center)], indexing="ij", sparse=True)
    squared = sum(o ** 2 for o in offsets)
    local = np.nonzero(np.broadcast_to(squared, tuple(len(r) for r in ranges))
                       <= radius ** 2 + 1e-12 * grid.spacing ** 2)
    index = tuple(r[loc] for r, loc in zip(ranges, local))
    return np.ravel_multi_index(index, grid.shape).astype(np.int64)


@cachetools.func.lru_cache(maxsize=4096)
def cached_ball_cells(grid: BoxGrid, center: tuple[float, ...], radius: float) -> np.ndarray:
    cells = ball_cells(grid, center, radius)
    cells.setflags(write=False)
    return cells


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values on the tensor grid together with the box they live on"""
    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise ValueError(f"grid function has {values.size} values, grid expects {self.grid.size}")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: BoxGrid, value: float) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: BoxGrid) -> "GridFunction":
        return cls.constant(grid, 0.0)

    @classmethod
    def from_callable(cls, grid: BoxGrid, function: Callable[..., np.ndarray]) -> "GridFunction":
        return cls(grid, np.broadcast_to(function(*grid.mesh()), grid.shape))

    def norm(self, p: float = 2.0) -> float:
        if math.isinf(p):
            return float(np.max(np.abs(self.values)))
        return float((self.grid.cell_volume * np.sum(np.abs(self.values) ** p)) ** (1.0 / p))

    def inner(self, other: "GridFunction") -> float:
        return float(self.grid.cell_volume * np.sum(self.values * other.values))

    def at(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        return self.values[tuple(np.moveaxis(index, -1, 0))]

    def _coerce(self, other: "GridFunction | float") -> np.ndarray | float:
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid functions live on different grids")
            return other.values
        return float(other)

    def __add__(self, other: "GridFunction | float") -> "GridFunction":
        return GridFunction(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other: "GridFunction | float") -> "GridFunction":
        return GridFunction(self.grid, self.values - self._coerce(other))

    def __mul__(self, other: "GridFunction | float") -> "GridFunction":
        return GridFunction(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.grid, -self.values)
