"""Spread of the query/key magnitude ratio for spike vectors versus real vectors.

For spike vectors ``||x||^2`` is the spike count, a Binomial(D, p) variable.
The folded ratio ``sqrt(max(a, b) / min(a, b))`` of two independent squared
norms is always >= 1; pairs where the smaller norm is zero are dropped and the
remaining probability mass is renormalized.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.stats import binom

from ..tensor import DomainError, RngState

PUBLISHED_SPIKE_VARIANCE = 0.2322
PUBLISHED_ANN_VARIANCE = 0.00844
CHUNK = 50_000


class StatisticsError(RuntimeError):
    """Too many draws were unusable to form an estimate."""


@dataclass(frozen=True)
class RatioStudyConfig:
    mode: Literal["spike", "gaussian"] = "spike"
    p: float = 0.15
    d: int = 128
    mu: float = 35.0
    sigma: float = 10.0
    sigma_is_variance: bool = False
    trials: int = 1_000_000
    seed: int = 0
    fold: bool = True
    bins: int = 100

    def validate(self) -> None:
        if self.mode not in ("spike", "gaussian"):
            raise DomainError(f"mode must be 'spike' or 'gaussian', got {self.mode!r}")
        if self.d < 1:
            raise DomainError("D must be >= 1")
        if self.mode == "spike" and not 0 < self.p < 1:
            raise DomainError("spike mode needs 0 < p < 1")
        if self.mode == "gaussian" and not self.sigma > 0:
            raise DomainError("gaussian mode needs sigma > 0")
        if self.trials < 10_000:
            raise DomainError("Monte Carlo needs at least 10^4 trials")

    @property
    def std(self) -> float:
        return math.sqrt(self.sigma) if self.sigma_is_variance else self.sigma


@dataclass
class RatioStudyResult:
    config: RatioStudyConfig
    mean: float
    variance: float
    used: int
    excluded: int
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "mean": self.mean,
            "variance": self.variance,
            "used_trials": self.used,
            "excluded_trials": self.excluded,
        }

    def write_histogram(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return path


def _fold(a, b, fold: bool):
    """Ratio of norms from squared norms ``a`` (query) and ``b`` (key)."""
    if fold:
        return np.sqrt(np.maximum(a, b) / np.minimum(a, b))
    return np.sqrt(a / b)


def ratio_var_exact(p: float, d: int, fold: bool = True) -> tuple[float, float]:
    """Exact (mean, variance) of the magnitude ratio by enumerating all count pairs.

    Sums over ``(k, l)`` in ``{0..D}^2`` weighted by the product of binomial
    pmfs. Pairs with a zero in the denominator (both zeros when folded) are
    excluded and the remaining mass renormalized.
    """
    if not 0 < p < 1:
        raise DomainError("p must lie strictly inside (0, 1)")
    k = np.arange(d + 1)
    pmf = binom.pmf(k, d, p)
    a, b = np.meshgrid(k, k, indexing="ij")
    w = np.outer(pmf, pmf)
    keep = (np.minimum(a, b) > 0) if fold else (b > 0)
    r = _fold(a[keep].astype(np.float64), b[keep].astype(np.float64), fold)
    w = w[keep]
    total = w.sum()
    if total <= 0:
        raise StatisticsError("no probability mass on pairs with nonzero norms")
    w = w / total
    mean = float((w * r).sum())
    return mean, float((w * (r - mean) ** 2).sum())


def _squared_norms(cfg: RatioStudyConfig, rng: RngState, n: int) -> tuple[np.ndarray, np.ndarray]:
    gen = rng.generator()
    if cfg.mode == "spike":
        q = (gen.random((n, cfg.d)) < cfg.p).sum(axis=1)
        k = (gen.random((n, cfg.d)) < cfg.p).sum(axis=1)
        return q.astype(np.float64), k.astype(np.float64)
    q = gen.normal(cfg.mu, cfg.std, (n, cfg.d))
    k = gen.normal(cfg.mu, cfg.std, (n, cfg.d))
    return np.einsum("ij,ij->i", q, q), np.einsum("ij,ij->i", k, k)


def _chunk_ratios(cfg: RatioStudyConfig, index: int, n: int):
    a, b = _squared_norms(cfg, RngState(cfg.seed).stream(index), n)
    keep = (np.minimum(a, b) > 0) if cfg.fold else (b > 0)
    return _fold(a[keep], b[keep], cfg.fold), int(n - keep.sum())


def ratio_var_mc(cfg: RatioStudyConfig, workers: int = 1) -> RatioStudyResult:
    """Monte Carlo estimate of the magnitude-ratio distribution.

    Trials are split into fixed-size chunks and chunk ``i`` always draws from
    stream ``i``, so the estimate does not depend on ``workers``.
    """
    cfg.validate()
    sizes = [CHUNK] * (cfg.trials // CHUNK) + ([cfg.trials % CHUNK] if cfg.trials % CHUNK else [])
    jobs = list(enumerate(sizes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda j: _chunk_ratios(cfg, *j), jobs))
    else:
        parts = [_chunk_ratios(cfg, *j) for j in jobs]
    r = np.concatenate([p[0] for p in parts])
    excluded = sum(p[1] for p in parts)
    if excluded > cfg.trials / 2:
        raise StatisticsError(f"{excluded} of {cfg.trials} draws had a zero norm")
    counts, edges = np.histogram(r, bins=cfg.bins)
    return RatioStudyResult(cfg, float(r.mean()), float(r.var()), int(r.size), excluded, edges, counts)


def estimator_conventions(p: float, d: int) -> dict[str, float]:
    """Exact variances under alternative ratio conventions, for side-by-side reporting."""
    k = np.arange(d + 1)
    pmf = binom.pmf(k, d, p)
    a, b = (x.astype(np.float64) for x in np.meshgrid(k, k, indexing="ij"))
    w = np.outer(pmf, pmf)

    def var(r, keep):
        ww = w[keep] / w[keep].sum()
        m = (ww * r[keep]).sum()
        return float((ww * (r[keep] - m) ** 2).sum())

    both = np.minimum(a, b) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return {
            "folded_norm_ratio": var(np.sqrt(np.maximum(a, b) / np.minimum(a, b)), both),
            "unfolded_norm_ratio": var(np.sqrt(a / b), b > 0),
            "folded_squared_ratio": var(np.maximum(a, b) / np.minimum(a, b), both),
            "unfolded_squared_ratio": var(a / b, b > 0),
        }
