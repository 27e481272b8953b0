import numpy as np

from operators.operator import KernelSample, SchrodingerOperator
from schrodinger.grid import GridFunction
from schrodinger.potential import Potential


class Identity(SchrodingerOperator):
    kind = "identity"

    def apply(self, f: GridFunction) -> GridFunction:
        return self._grid_function(f)

    def _kernel(self, x: np.ndarray, y: np.ndarray) -> KernelSample:
        # discrete delta: 1/h^n on the diagonal
        values = np.where(np.all(x == y, axis=-1), 1.0 / self.model.grid.cell_volume, 0.0)
        return KernelSample(values, np.abs(values))

    def admissible_alpha(self, potential: Potential) -> float:
        return 1.0
