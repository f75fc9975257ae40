"""Empirical complexity: count operations over a size sweep and fit the log-log slope."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attention import sssa_v1, sssa_v2, ssa_baseline
from ..neurons import init_saccadic
from ..ops import E_AC_PJ, E_MAC_PJ, OpCounter, energy_estimate
from ..tensor import DomainError, RngState, bernoulli_spikes

DEFAULT_NS = (16, 32, 64, 128)
DEFAULT_DS = (8, 16, 32, 64)


def scaling_fit(sizes, counts) -> float:
    """Least-squares slope of ``log(count)`` against ``log(size)``.

    Raises:
        DomainError: fewer than 4 sizes, a range under 8x, or a non-positive value.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if sizes.shape != counts.shape or sizes.ndim != 1:
        raise DomainError("sizes and counts must be matching 1-d sequences")
    if sizes.size < 4:
        raise DomainError("need at least 4 sizes")
    if np.any(sizes <= 0) or np.any(counts <= 0):
        raise DomainError("sizes and counts must be positive")
    if sizes.max() / sizes.min() < 8:
        raise DomainError("sizes must span at least an 8x range")
    slope, _ = np.polyfit(np.log(sizes), np.log(counts), 1)
    return float(slope)


def count_forward(variant: str, t: int, n: int, d: int, rng: RngState, p: float = 0.15) -> OpCounter:
    """Run one attention forward on random spikes and return its op counts.

    ``variant`` is one of ``ssa``, ``v1``, ``v2-computed`` or ``v2-learned``.
    """
    q, k, v = (bernoulli_spikes((t, n, d), p, rng.stream(i)) for i in range(3))
    c = OpCounter()
    if variant == "ssa":
        ssa_baseline(q, k, v, c)
        return c
    params = init_saccadic(t, rng.stream(3), v_th=1.0, alpha=float(n * d * p))
    if variant == "v1":
        sssa_v1(q, k, v, params, c)
    elif variant in ("v2-computed", "v2-learned"):
        sssa_v2(q, k, v, params, variant.split("-")[1], c)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return c


@dataclass
class ScalingBench:
    axis: str
    sizes: list[int]
    totals: dict[str, list[int]]
    exponents: dict[str, float]

    def to_dict(self) -> dict:
        return {"axis": self.axis, "sizes": self.sizes, "totals": self.totals, "exponents": self.exponents}


def bench_scaling(
    axis: str = "n",
    sizes=None,
    variants=("v2-learned", "ssa"),
    t: int = 4,
    fixed: int = 32,
    seed: int = 0,
) -> ScalingBench:
    """Total op counts per variant over a sweep of N (``axis='n'``) or D (``axis='d'``)."""
    if axis not in ("n", "d"):
        raise ValueError("axis must be 'n' or 'd'")
    sizes = list(sizes or (DEFAULT_NS if axis == "n" else DEFAULT_DS))
    root = RngState(seed)
    totals: dict[str, list[int]] = {}
    for variant in variants:
        row = []
        for i, s in enumerate(sizes):
            n, d = (s, fixed) if axis == "n" else (fixed, s)
            row.append(count_forward(variant, t, n, d, root.stream(i)).total)
        totals[variant] = row
    return ScalingBench(axis, sizes, totals, {v: scaling_fit(sizes, c) for v, c in totals.items()})


def energy_comparison(
    ns=DEFAULT_NS,
    t: int = 4,
    d: int = 32,
    seed: int = 0,
    e_ac_pj: float = E_AC_PJ,
    e_mac_pj: float = E_MAC_PJ,
) -> list[dict]:
    """Energy of one V2 learned-mode forward versus one SSA forward for each N."""
    root = RngState(seed)
    rows = []
    for i, n in enumerate(ns):
        v2 = count_forward("v2-learned", t, n, d, root.stream(i))
        ssa = count_forward("ssa", t, n, d, root.stream(i))
        e_v2 = energy_estimate(v2, e_ac_pj, e_mac_pj)
        e_ssa = energy_estimate(ssa, e_ac_pj, e_mac_pj)
        rows.append(
            {
                "n": n,
                "v2_counts": v2.to_dict(),
                "ssa_counts": ssa.to_dict(),
                "v2_joules": e_v2.total,
                "ssa_joules": e_ssa.total,
                "ssa_over_v2": e_ssa.total / e_v2.total,
            }
        )
    return rows
