"""Error of replacing ``log x`` by its first-order expansion around ``x0``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..tensor import DomainError


@dataclass(frozen=True)
class TaylorStudy:
    x0: float
    a: float
    b: float
    slope: float
    intercept: float
    max_abs_error: float
    argmax: float

    def to_dict(self) -> dict:
        return asdict(self)


def linearize_log(x0: float) -> tuple[float, float]:
    """Slope and intercept of the tangent to ``log`` at ``x0``: ``1/x0`` and ``log x0 - 1``."""
    return 1.0 / x0, math.log(x0) - 1.0


def taylor_study(x0: float, a: float, b: float, grid: int = 10_000) -> TaylorStudy:
    """Max ``|log x - (slope*x + intercept)|`` over a dense grid on ``[a, b]``.

    ``log`` is concave, so the tangent lies above it and the error is largest
    at an endpoint; both endpoints are on the grid.
    """
    if not a > 0:
        raise DomainError("range must be strictly positive")
    if not a <= x0 <= b:
        raise DomainError("expansion point must lie inside [a, b]")
    slope, intercept = linearize_log(x0)
    xs = np.unique(np.concatenate([np.linspace(a, b, max(grid, 2)), [x0]]))
    err = np.abs(np.log(xs) - (slope * xs + intercept))
    i = int(np.argmax(err))
    return TaylorStudy(x0, a, b, slope, intercept, float(err[i]), float(xs[i]))
