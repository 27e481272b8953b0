"""
Dirichlet finite-difference discretization of L = -Laplace + V on the box and
its functional calculus.

Separable potentials give a Kronecker sum of tridiagonal axis operators, so
eigenvalues add and eigenvectors multiply; nothing of size m^n x m^n is ever
formed. Dense potentials are diagonalized in full up to the dense cap.
"""
import logging
import math
import threading
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

from schrodinger.errors import (DenseCapExceededError, EigensolverError, GridTooCoarseError,
                                ParameterRangeError, SpectralTruncationError)
from schrodinger.grid import MIN_POINTS, BoxGrid, GridFunction
from schrodinger.potential import DEFAULT_DENSE_CAP, Potential

logger = logging.getLogger("schroedinger-lab")

Multiplier = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class AxisSpectrum:
    """
    Eigenpairs of -d^2/dx^2 + v on one axis. `vectors` are orthonormal in the
    euclidean sense; the eigenfunctions normalized under weight h are
    vectors / sqrt(h).
    """
    eigenvalues: np.ndarray
    vectors: np.ndarray
    spacing: float

    @property
    def eigenfunctions(self) -> np.ndarray:
        return self.vectors / math.sqrt(self.spacing)

    @cached_property
    def column_sums(self) -> np.ndarray:
        return self.vectors.sum(axis=0)


def eigensolve_axis(samples: np.ndarray, spacing: float, axis: int = 0) -> AxisSpectrum:
    samples = np.asarray(samples, dtype=float)
    if len(samples) < MIN_POINTS:
        raise GridTooCoarseError(f"grid too coarse: {len(samples)} < {MIN_POINTS} points on axis {axis}")
    diagonal = 2.0 / spacing ** 2 + samples
    off_diagonal = np.full(len(samples) - 1, -1.0 / spacing ** 2)
    try:
        eigenvalues, vectors = scipy.linalg.eigh_tridiagonal(diagonal, off_diagonal)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"eigensolver failed on axis {axis}: {e}") from e
    if not np.all(np.isfinite(eigenvalues)):
        raise EigensolverError(f"eigensolver failed on axis {axis}: non-finite eigenvalues")
    _fix_signs(vectors)
    eigenvalues.setflags(write=False)
    vectors.setflags(write=False)
    return AxisSpectrum(eigenvalues, vectors, spacing)


def _fix_signs(vectors: np.ndarray) -> None:
    """largest entry of every eigenvector positive"""
    lead = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])]
    vectors *= np.where(lead < 0, -1.0, 1.0)


class SpectralModel:
    """
    Eigen-decomposition of the discrete operator plus everything built on it:
    f(L) for scalar maps, heat kernel samples and their t-derivatives, heat
    masses int W_t(x, y) dy and W_t V.
    """

    def __init__(self, potential: Potential, axes: Sequence[AxisSpectrum] | None = None,
                 dense_values: np.ndarray | None = None, dense_vectors: np.ndarray | None = None,
                 energy_cutoff: float = 0.0, tolerance: float = 1e-8):
        self.potential = potential
        self.grid: BoxGrid = potential.grid
        self.axes = tuple(axes or ())
        self.dense_values = dense_values
        self.dense_vectors = dense_vectors
        self.energy_cutoff = energy_cutoff
        self.tolerance = tolerance
        self._free: SpectralModel | None = None
        self._lock = threading.Lock()

    @classmethod
    def assemble(cls, potential: Potential, energy_cutoff: float = 0.0, tolerance: float = 1e-8,
                 dense_cap: int = DEFAULT_DENSE_CAP) -> "SpectralModel":
        grid = potential.grid
        if potential.is_separable:
            axes = [eigensolve_axis(factor, grid.spacing, axis) for axis, factor in enumerate(potential.factors)]
            logger.debug("assembled separable model: %s axes of %s points", grid.dimension, grid.points)
            return cls(potential, axes=axes, energy_cutoff=energy_cutoff, tolerance=tolerance)
        if grid.size > dense_cap:
            raise DenseCapExceededError(f"dense cap exceeded: m^n = {grid.size} > {dense_cap}")
        if grid.points < MIN_POINTS:
            raise GridTooCoarseError(f"grid too coarse: {grid.points} < {MIN_POINTS}")
        second = scipy.sparse.diags(
            [np.full(grid.points - 1, -1.0), np.full(grid.points, 2.0), np.full(grid.points - 1, -1.0)],
            [-1, 0, 1]) / grid.spacing ** 2
        operator = _kronecker_sum(second, grid.dimension) + scipy.sparse.diags(potential.values.reshape(-1))
        try:
            values, vectors = scipy.linalg.eigh(operator.toarray())
        except (np.linalg.LinAlgError, ValueError) as e:
            raise EigensolverError(f"eigensolver failed on the dense operator: {e}") from e
        _fix_signs(vectors)
        values.setflags(write=False)
        vectors.setflags(write=False)
        logger.debug("assembled dense model: %s unknowns", grid.size)
        return cls(potential, dense_values=values, dense_vectors=vectors, energy_cutoff=energy_cutoff,
                   tolerance=tolerance)

    @property
    def is_separable(self) -> bool:
        return bool(self.axes)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @cached_property
    def eigenvalue_field(self) -> np.ndarray:
        """Lambda for every coefficient (grid-shaped in separable mode)"""
        if not self.is_separable:
            assert self.dense_values is not None
            return self.dense_values
        total = np.zeros((1,) * self.dimension)
        for axis, spectrum in enumerate(self.axes):
            shape = [1] * self.dimension
            shape[axis] = -1
            total = total + spectrum.eigenvalues.reshape(shape)
        total = np.broadcast_to(total, self.grid.shape).copy()
        total.setflags(write=False)
        return total

    @property
    def lambda_min(self) -> float:
        if self.is_separable:
            return float(sum(spectrum.eigenvalues[0] for spectrum in self.axes))
        assert self.dense_values is not None
        return float(self.dense_values[0])

    @property
    def lambda_max(self) -> float:
        if self.is_separable:
            return float(sum(spectrum.eigenvalues[-1] for spectrum in self.axes))
        assert self.dense_values is not None
        return float(self.dense_values[-1])

    def free(self) -> "SpectralModel":
        """the V = 0 model on the same grid and mode"""
        with self._lock:
            if self._free is None:
                if self.potential.is_zero:
                    self._free = self
                else:
                    self._free = SpectralModel.assemble(Potential.free(self.grid, self.potential.mode),
                                                        self.energy_cutoff, self.tolerance, dense_cap=self.grid.size)
            return self._free

    # ---- transforms ---------------------------------------------------------------------------

    def _along_axes(self, array: np.ndarray, matrices: Sequence[np.ndarray]) -> np.ndarray:
        for axis, matrix in enumerate(matrices):
            array = np.moveaxis(np.tensordot(matrix, array, axes=([1], [axis])), 0, axis)
        return array

    def to_coefficients(self, values: np.ndarray) -> np.ndarray:
        if self.is_separable:
            return self._along_axes(np.asarray(values, dtype=float), [s.vectors.T for s in self.axes])
        assert self.dense_vectors is not None
        return self.dense_vectors.T @ np.asarray(values, dtype=float).reshape(-1)

    def from_coefficients(self, coefficients: np.ndarray) -> np.ndarray:
        if self.is_separable:
            return self._along_axes(coefficients, [s.vectors for s in self.axes])
        assert self.dense_vectors is not None
        return (self.dense_vectors @ coefficients).reshape(self.grid.shape)

    def _truncate(self, coefficients: np.ndarray) -> np.ndarray:
        if not self.energy_cutoff > 0:
            return coefficients
        dropped = self.eigenvalue_field > self.energy_cutoff
        total = float(np.sum(coefficients ** 2))
        if total == 0.0:
            return coefficients
        residual = math.sqrt(float(np.sum(coefficients[dropped] ** 2)) / total)
        if residual > self.tolerance:
            energies = coefficients.reshape(-1) ** 2
            levels = self.eigenvalue_field.reshape(-1)
            order = np.argsort(levels, kind="stable")
            tail = np.cumsum(energies[order][::-1])[::-1]
            allowed = np.flatnonzero(tail <= (self.tolerance ** 2) * total)
            required = float(levels[order][allowed[0] - 1]) if len(allowed) and allowed[0] > 0 else float(levels.max())
            raise SpectralTruncationError(
                f"energy cutoff {self.energy_cutoff:g} leaves residual {residual:.3e} > {self.tolerance:.1e}; "
                f"required cutoff >= {required:.6g}")
        logger.debug("energy cutoff %s: truncation residual %.3e", self.energy_cutoff, residual)
        return np.where(dropped, 0.0, coefficients)

    def _values(self, f: GridFunction | np.ndarray) -> np.ndarray:
        if isinstance(f, GridFunction):
            if f.grid != self.grid:
                raise ValueError("grid function lives on a different grid than the model")
            return f.values
        return np.asarray(f, dtype=float).reshape(self.grid.shape)

    def _multiplier_values(self, phi: Multiplier) -> np.ndarray:
        values = np.asarray(phi(self.eigenvalue_field), dtype=float)
        if not np.all(np.isfinite(values)):
            raise ParameterRangeError("multiplier is not finite on the spectrum")
        return values

    def apply(self, phi: Multiplier, f: GridFunction | np.ndarray) -> GridFunction:
        """sum_k phi(lambda_k) <f, phi_k> phi_k"""
        coefficients = self._truncate(self.to_coefficients(self._values(f)))
        return GridFunction(self.grid, self.from_coefficients(self._multiplier_values(phi) * coefficients))

    def apply_factorized(self, axis_multiplier: Callable[[np.ndarray], np.ndarray],
                         f: GridFunction | np.ndarray) -> GridFunction:
        """
        phi(L) for phi(sum_i lambda_i) = prod_i axis_multiplier(lambda_i), e.g.
        exponentials, evaluated axis by axis with m x m propagators.
        """
        if not self.is_separable:
            return self.apply(lambda lam: axis_multiplier(lam), f)
        propagators = [(s.vectors * axis_multiplier(s.eigenvalues)) @ s.vectors.T for s in self.axes]
        return GridFunction(self.grid, self._along_axes(self._values(f), propagators))

    def slices(self, f: GridFunction | np.ndarray, multipliers: Iterable[Multiplier]) -> np.ndarray:
        """phi_k(L) f for a family of multipliers, stacked along a new first axis"""
        coefficients = self._truncate(self.to_coefficients(self._values(f)))
        return np.stack([self.from_coefficients(self._multiplier_values(phi) * coefficients)
                         for phi in multipliers])

    def eigenfunction(self, index: int | Sequence[int]) -> GridFunction:
        """eigenfunction normalized under <f, g> = h^n sum f g"""
        scale = self.grid.cell_volume ** -0.5
        if self.is_separable:
            index = tuple(index) if isinstance(index, Sequence) else (int(index),) * self.dimension
            values = np.ones((1,) * self.dimension)
            for axis, (spectrum, k) in enumerate(zip(self.axes, index)):
                shape = [1] * self.dimension
                shape[axis] = -1
                values = values * spectrum.vectors[:, k].reshape(shape)
            return GridFunction(self.grid, np.broadcast_to(values, self.grid.shape) * scale)
        assert self.dense_vectors is not None
        return GridFunction(self.grid, self.dense_vectors[:, int(index)] * scale)  # type: ignore[arg-type]

    def eigenvalue(self, index: int | Sequence[int]) -> float:
        if self.is_separable:
            index = tuple(index) if isinstance(index, Sequence) else (int(index),) * self.dimension
            return float(sum(s.eigenvalues[k] for s, k in zip(self.axes, index)))
        assert self.dense_values is not None
        return float(self.dense_values[int(index)])  # type: ignore[arg-type]

    def ground_state(self) -> GridFunction:
        return self.eigenfunction(0 if not self.is_separable else (0,) * self.dimension)

    def orthonormality_defect(self) -> float:
        if self.is_separable:
            return max(float(np.max(np.abs(s.vectors.T @ s.vectors - np.eye(len(s.eigenvalues)))))
                       for s in self.axes)
        assert self.dense_vectors is not None
        gram = self.dense_vectors.T @ self.dense_vectors
        return float(np.max(np.abs(gram - np.eye(len(gram)))))

    def random_smooth_field(self, rng: np.random.Generator, modes: int = 6) -> GridFunction:
        """random combination of the low eigenmodes with decaying amplitudes"""
        if self.is_separable:
            coefficients = np.zeros(self.grid.shape)
            low = (slice(0, min(modes, self.grid.points)),) * self.dimension
            block = coefficients[low]
            ranks = sum(np.meshgrid(*[np.arange(s) for s in block.shape], indexing="ij"))
            coefficients[low] = rng.standard_normal(block.shape) / (1.0 + ranks) ** 2
        else:
            coefficients = np.zeros(self.grid.size)
            count = min(modes ** self.dimension, self.grid.size)
            coefficients[:count] = rng.standard_normal(count) / (1.0 + np.arange(count)) ** 0.5
        return GridFunction(self.grid, self.from_coefficients(coefficients))

    def spectrum_rows(self, limit: int | None = None) -> list[tuple[int, int, float]]:
        """(axis, index, eigenvalue); dense mode reports axis 0"""
        rows = []
        if self.is_separable:
            for axis, spectrum in enumerate(self.axes):
                for index, value in enumerate(spectrum.eigenvalues[:limit]):
                    rows.append((axis, index, float(value)))
        else:
            assert self.dense_values is not None
            for index, value in enumerate(self.dense_values[:limit]):
                rows.append((0, index, float(value)))
        return rows

    # ---- kernels --------------------------------------------------------------------------------

    def _flat(self, index: np.ndarray) -> np.ndarray:
        return self.grid.ravel(index)

    def _axis_terms(self, times: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """per axis (e^{-t lambda}, -lambda e^{-t lambda}), shaped (T, m)"""
        terms = []
        for spectrum in self.axes:
            decay = np.exp(-np.outer(times, spectrum.eigenvalues))
            terms.append((decay, -spectrum.eigenvalues * decay))
        return terms

    def _contract(self, weights: np.ndarray, left: np.ndarray, right: np.ndarray, pointwise: bool) -> np.ndarray:
        product = left * right
        if pointwise:
            return np.einsum("pk,pk->p", weights, product)
        return weights @ product.T

    def _kernel_parts(self, times: np.ndarray, x: np.ndarray, y: np.ndarray | None, pointwise: bool,
                      ) -> list[tuple[np.ndarray, np.ndarray]]:
        """per axis (value, t-derivative) of the factor of W_t(x, y) (or of int W_t(x, y) dy when y is None)"""
        parts = []
        for axis, (spectrum, (decay, slope)) in enumerate(zip(self.axes, self._axis_terms(times))):
            left = spectrum.vectors[x[:, axis]]
            if y is None:
                right = np.broadcast_to(spectrum.column_sums, left.shape)
                scale = 1.0
            else:
                right = spectrum.vectors[y[:, axis]]
                scale = 1.0 / spectrum.spacing
            parts.append((self._contract(decay, left, right, pointwise) * scale,
                          self._contract(slope, left, right, pointwise) * scale))
        return parts

    def _dense_kernel(self, times: np.ndarray, x: np.ndarray, right: np.ndarray, pointwise: bool,
                      derivative: bool, scale: float) -> np.ndarray:
        assert self.dense_values is not None and self.dense_vectors is not None
        decay = np.exp(-np.outer(times, self.dense_values))
        if derivative:
            decay = -self.dense_values * decay
        left = self.dense_vectors[self._flat(x)]
        return self._contract(decay, left, right, pointwise) * scale

    def _prepare(self, times: np.ndarray, x: np.ndarray, y: np.ndarray | None,
                 pointwise: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times <= 0):
            raise ParameterRangeError("heat kernel needs t > 0")
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        if y is not None:
            y = np.atleast_2d(np.asarray(y, dtype=np.int64))
        if pointwise and len(times) != len(x):
            raise ValueError("pointwise evaluation needs one time per probe")
        return times, x, y

    def heat_kernel(self, times: np.ndarray, x: np.ndarray, y: np.ndarray, pointwise: bool = False) -> np.ndarray:
        """
        W_t(x, y) for node multi-indices x, y of shape (P, n); shape (T, P), or
        (P,) with one time per probe when `pointwise` is set.
        """
        times, x, y = self._prepare(times, x, y, pointwise)
        assert y is not None
        if not self.is_separable:
            assert self.dense_vectors is not None
            right = self.dense_vectors[self._flat(y)]
            return self._dense_kernel(times, x, right, pointwise, False, 1.0 / self.grid.cell_volume)
        result = None
        for value, _ in self._kernel_parts(times, x, y, pointwise):
            result = value if result is None else result * value
        return result

    def heat_kernel_dt(self, times: np.ndarray, x: np.ndarray, y: np.ndarray, pointwise: bool = False) -> np.ndarray:
        """d/dt W_t(x, y), same shapes as heat_kernel"""
        times, x, y = self._prepare(times, x, y, pointwise)
        assert y is not None
        if not self.is_separable:
            assert self.dense_vectors is not None
            right = self.dense_vectors[self._flat(y)]
            return self._dense_kernel(times, x, right, pointwise, True, 1.0 / self.grid.cell_volume)
        return _product_rule(self._kernel_parts(times, x, y, pointwise))

    def heat_mass(self, times: np.ndarray, x: np.ndarray, pointwise: bool = False) -> np.ndarray:
        """W_t 1(x) = int_box W_t(x, y) dy"""
        times, x, _ = self._prepare(times, x, None, pointwise)
        if not self.is_separable:
            assert self.dense_vectors is not None
            right = np.broadcast_to(self.dense_vectors.sum(axis=0), (len(x), self.grid.size))
            return self._dense_kernel(times, x, right, pointwise, False, 1.0)
        result = None
        for value, _ in self._kernel_parts(times, x, None, pointwise):
            result = value if result is None else result * value
        return result

    def heat_mass_dt(self, times: np.ndarray, x: np.ndarray, pointwise: bool = False) -> np.ndarray:
        """d/dt W_t 1(x)"""
        times, x, _ = self._prepare(times, x, None, pointwise)
        if not self.is_separable:
            assert self.dense_vectors is not None
            right = np.broadcast_to(self.dense_vectors.sum(axis=0), (len(x), self.grid.size))
            return self._dense_kernel(times, x, right, pointwise, True, 1.0)
        return _product_rule(self._kernel_parts(times, x, None, pointwise))

    def heat_potential(self, times: np.ndarray, x: np.ndarray, pointwise: bool = False) -> np.ndarray:
        """W_t V(x) = int_box W_t(x, y) V(y) dy"""
        times, x, _ = self._prepare(times, x, None, pointwise)
        if not self.is_separable:
            assert self.dense_vectors is not None
            weighted = self.dense_vectors.T @ self.potential.values.reshape(-1)
            right = np.broadcast_to(weighted, (len(x), self.grid.size))
            return self._dense_kernel(times, x, right, pointwise, False, 1.0)
        masses = [value for value, _ in self._kernel_parts(times, x, None, pointwise)]
        total = np.zeros_like(masses[0])
        for axis, (spectrum, factor) in enumerate(zip(self.axes, self.potential.factors)):
            decay = np.exp(-np.outer(times, spectrum.eigenvalues))
            left = spectrum.vectors[x[:, axis]]
            right = np.broadcast_to(spectrum.vectors.T @ factor, left.shape)
            term = self._contract(decay, left, right, pointwise)
            for other, mass in enumerate(masses):
                if other != axis:
                    term = term * mass
            total = total + term
        return total


def _product_rule(parts: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    total = np.zeros_like(parts[0][0])
    for axis, (_, slope) in enumerate(parts):
        term = slope
        for other, (value, _) in enumerate(parts):
            if other != axis:
                term = term * value
        total = total + term
    return total


def _kronecker_sum(second: scipy.sparse.spmatrix, dimension: int) -> scipy.sparse.spmatrix:
    operator = second
    for _ in range(dimension - 1):
        operator = scipy.sparse.kronsum(operator, second)
    return scipy.sparse.csr_matrix(operator)


def apply_function_of_L(model: SpectralModel, phi: Multiplier, f: GridFunction) -> GridFunction:
    return model.apply(phi, f)


def heat_kernel_at(model: SpectralModel, t: float, x: np.ndarray, y: np.ndarray) -> float:
    return float(model.heat_kernel(np.array([t]), np.atleast_2d(x), np.atleast_2d(y))[0, 0])
