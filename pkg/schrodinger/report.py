import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

import numpy as np

logger = logging.getLogger("schroedinger-lab")


class Verdict(Enum):
    CONSISTENT = "consistent"
    TRUNCATION = "inconclusive-truncation"
    UNSTABLE = "inconclusive-unstable"
    NON_FINITE = "non-finite"

    @property
    def exit_code(self) -> int:
        if self == Verdict.CONSISTENT:
            return 0
        if self == Verdict.NON_FINITE:
            return 1
        return 2


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """
    Per-probe (or per-ball) rows and the empirical constant, i.e. the
    supremum of measured/bound over the rows that entered the fit.
    """
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]
    constant: float
    attained_at: int | None = None
    excluded: dict[str, int] = field(default_factory=dict)
    header: dict[str, Any] = field(default_factory=dict)
    stability_delta: float | None = None
    truncation_dominated: bool = False

    @classmethod
    def from_ratios(cls, name: str, columns: Sequence[str], rows: list[tuple], ratios: np.ndarray,
                    excluded: dict[str, int] | None = None, header: dict[str, Any] | None = None,
                    truncation_dominated: bool = False) -> "VerificationReport":
        ratios = np.asarray(ratios, dtype=float)
        if ratios.size == 0:
            constant, attained = 0.0, None
        elif np.any(np.isnan(ratios)):
            constant, attained = math.nan, int(np.flatnonzero(np.isnan(ratios))[0])
        else:
            attained = int(np.argmax(ratios))
            constant = float(ratios[attained])
        return cls(name=name, columns=tuple(columns), rows=rows, constant=constant, attained_at=attained,
                   excluded={k: int(v) for k, v in (excluded or {}).items()}, header=dict(header or {}),
                   truncation_dominated=truncation_dominated)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.constant) and self.constant >= 0

    def with_stability(self, other: "VerificationReport") -> "VerificationReport":
        return replace(self, stability_delta=relative_delta(self.constant, other.constant))

    def verdict(self, stability_threshold: float) -> Verdict:
        if not self.finite:
            return Verdict.NON_FINITE
        if self.truncation_dominated:
            return Verdict.TRUNCATION
        if self.stability_delta is not None and self.stability_delta > stability_threshold:
            return Verdict.UNSTABLE
        return Verdict.CONSISTENT

    def attaining_row(self) -> tuple | None:
        if self.attained_at is None or self.attained_at >= len(self.rows):
            return None
        return self.rows[self.attained_at]

    def summary(self, stability_threshold: float) -> dict[str, Any]:
        attaining = self.attaining_row()
        return dict(
            name=self.name,
            constant=self.constant,
            finite=self.finite,
            rows=len(self.rows),
            attained_at=None if attaining is None else dict(zip(self.columns, attaining)),
            excluded=dict(sorted(self.excluded.items())),
            stability_delta=self.stability_delta,
            truncation_dominated=self.truncation_dominated,
            verdict=self.verdict(stability_threshold).value,
            header=self.header,
        )


def relative_delta(first: float, second: float) -> float:
    """relative change between two empirical suprema (0 when both vanish)"""
    if first == second:
        return 0.0
    scale = max(abs(first), abs(second))
    if not math.isfinite(scale):
        return math.inf
    return abs(first - second) / scale


def worst_verdict(verdicts: Sequence[Verdict]) -> Verdict:
    order = [Verdict.CONSISTENT, Verdict.UNSTABLE, Verdict.TRUNCATION, Verdict.NON_FINITE]
    if not verdicts:
        return Verdict.CONSISTENT
    return max(verdicts, key=order.index)
