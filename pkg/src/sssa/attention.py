"""Saccadic spike self-attention (SSSA) and the dot-product baseline.

Relevance between query and key tokens is computed from their spike counts
(firing rates) rather than from a dot product. The saccadic neuron then turns
per-token salience into a binary decision that masks V over the token axis.

All functions are pure over their inputs. Each takes an optional
:class:`~sssa.ops.OpCounter` and adds the arithmetic it performs:
accumulations go to ``ac``, genuine multiplications to ``mac``, threshold tests
to ``cmp``. Masking V by S is a select and is not counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .neurons import ParameterError, SaccadicParams, fold_thresholds, heaviside
from .ops import OpCounter, tally
from .tensor import DomainError, RealTensor, ShapeError, SpikeTensor, matmul, real, spikes, sum_axis

Variant = Literal["ssa", "v1", "v2"]
AlphaMode = Literal["computed", "learned"]

EPS = 1e-12


@dataclass(frozen=True)
class AttentionConfig:
    t_steps: int
    n_tokens: int
    d_model: int
    variant: Variant = "v2"
    alpha_mode: AlphaMode = "learned"

    def __post_init__(self):
        if min(self.t_steps, self.n_tokens, self.d_model) < 1:
            raise ValueError("T, N and D must all be >= 1")
        if self.variant not in ("ssa", "v1", "v2"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.alpha_mode not in ("computed", "learned"):
            raise ValueError(f"unknown alpha mode {self.alpha_mode!r}")


@dataclass
class AttentionOutput:
    spikes: SpikeTensor
    masked_v: SpikeTensor
    counters: OpCounter = field(default_factory=OpCounter)


def _check_qkv(q, k, v):
    q, k, v = (np.asarray(a) for a in (q, k, v))
    if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"Q, K, V must share a [T, N, D] shape, got {q.shape}, {k.shape}, {v.shape}")
    return q, k, v


def spike_sum(x, counter: OpCounter | None = None) -> RealTensor:
    """Per-token spike counts ``[T, N]`` of a ``[T, N, D]`` spike tensor."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"spike_sum expects [T, N, D], got {list(x.shape)}")
    tally(counter, ac=x.size)
    return sum_axis(x, -1)


def cross_entropy_relevance(q, k) -> float:
    """Cross-entropy between the firing-rate distributions of two spike vectors.

    Rates are clamped to ``[EPS, 1 - EPS]`` so silent or saturated vectors
    give a large finite value instead of infinity.
    """
    q = np.asarray(q).reshape(-1)
    k = np.asarray(k).reshape(-1)
    if q.size < 1 or k.size < 1:
        raise ShapeError("relevance needs non-empty vectors")
    p_q = min(max(q.sum() / q.size, EPS), 1 - EPS)
    p_k = min(max(k.sum() / k.size, EPS), 1 - EPS)
    return -(p_q * math.log(p_k) + (1 - p_q) * math.log(1 - p_k))


def cro_att(q_sum, k_sum, counter: OpCounter | None = None) -> RealTensor:
    """Per-timestep outer product of query and key spike counts, ``[T, N, N]``."""
    q_sum = np.asarray(q_sum, dtype=np.float64)
    k_sum = np.asarray(k_sum, dtype=np.float64)
    if q_sum.ndim != 2 or q_sum.shape != k_sum.shape:
        raise ShapeError(f"expected matching [T, N] counts, got {q_sum.shape} and {k_sum.shape}")
    t, n = q_sum.shape
    tally(counter, mac=t * n * n)
    return real(q_sum[:, :, None] * k_sum[:, None, :])


def patch_salience(cro, counter: OpCounter | None = None) -> RealTensor:
    """Row sums of the relevance matrix: the aggregate salience of each token."""
    cro = np.asarray(cro, dtype=np.float64)
    if cro.ndim != 3 or cro.shape[1] != cro.shape[2]:
        raise ShapeError(f"expected [T, N, N], got {list(cro.shape)}")
    tally(counter, ac=cro.size)
    return sum_axis(cro, -1)


def _mix(params: SaccadicParams, x, counter: OpCounter | None) -> RealTensor:
    # lower-triangular T x T times [T, N]: T(T+1)/2 products per token
    t, n = x.shape
    tally(counter, mac=t * (t + 1) // 2 * n)
    return matmul(params.m_w, x)


def _fire(h, thresholds, counter: OpCounter | None) -> SpikeTensor:
    tally(counter, cmp=np.asarray(h).size)
    return heaviside(h, thresholds)


def _mask(s, v) -> SpikeTensor:
    return spikes(np.where(np.asarray(s, dtype=bool)[:, :, None], v, 0))


def _check_params(params: SaccadicParams, t: int):
    params.validate()
    if params.t_steps != t:
        raise ShapeError(f"params cover {params.t_steps} timesteps, input has {t}")


def sssa_v1(q, k, v, params: SaccadicParams, counters: OpCounter | None = None) -> AttentionOutput:
    """SSSA-V1: mix the full salience ``(Q' K'^T) L`` over time, then fire.

    Quadratic in N because the relevance matrix is formed explicitly.
    """
    q, k, v = _check_qkv(q, k, v)
    _check_params(params, q.shape[0])
    c = OpCounter()
    cro = cro_att(spike_sum(q, c), spike_sum(k, c), c)
    patch = patch_salience(cro, c)
    s = _fire(_mix(params, patch, c), params.v_th[:, None], c)
    if counters is not None:
        counters.merge(c)
    return AttentionOutput(s, _mask(s, v), c)


def learned_thresholds(params: SaccadicParams) -> RealTensor:
    """Per-timestep thresholds ``(1/alpha) * m_w^-1 v_th`` used by learned-alpha inference.

    Depends only on parameters, so it is computed once and not charged to a forward pass.
    """
    if not params.alpha > 0:
        raise ParameterError("alpha must be positive")
    folded = params.folded if params.folded is not None else fold_thresholds(params)
    return real(folded / params.alpha)


def sssa_v2(
    q,
    k,
    v,
    params: SaccadicParams,
    mode: AlphaMode = "learned",
    counters: OpCounter | None = None,
) -> AttentionOutput:
    """SSSA-V2: linear-time attention.

    ``computed`` mode reassociates V1 as ``(m_w Q') * alpha[t]`` with
    ``alpha[t] = sum_n K'[t, n]``. ``learned`` mode treats alpha as a trained
    scalar, folds ``m_w^-1`` and ``1/alpha`` into the thresholds, and fires each
    timestep from ``Q'[t]`` alone, so the spike path only accumulates and compares.
    """
    q, k, v = _check_qkv(q, k, v)
    if mode == "learned":
        if not params.alpha > 0:
            raise ParameterError("alpha must be positive in learned mode")
        _check_params(params, q.shape[0])
        thresholds = learned_thresholds(params)
        c = OpCounter()
        q_sum = spike_sum(q, c)
        s = _fire(q_sum, thresholds[:, None], c)
    elif mode == "computed":
        _check_params(params, q.shape[0])
        c = OpCounter()
        q_sum = spike_sum(q, c)
        k_sum = spike_sum(k, c)
        tally(c, ac=k_sum.size)
        alpha = sum_axis(k_sum, -1)
        mixed = _mix(params, q_sum, c)
        tally(c, mac=mixed.size)
        s = _fire(mixed * alpha[:, None], params.v_th[:, None], c)
    else:
        raise ValueError(f"unknown alpha mode {mode!r}")
    if counters is not None:
        counters.merge(c)
    return AttentionOutput(s, _mask(s, v), c)


def ssa_baseline(q, k, v, counters: OpCounter | None = None) -> RealTensor:
    """Dot-product spiking self-attention ``(Q K^T) V`` per timestep, no softmax."""
    q, k, v = _check_qkv(q, k, v)
    t, n, d = q.shape
    out = np.stack([matmul(matmul(q[i], k[i].T), v[i]) for i in range(t)])
    tally(counters, mac=2 * t * n * n * d)
    return real(out)


def attend(cfg: AttentionConfig, q, k, v, params: SaccadicParams | None = None, counters: OpCounter | None = None):
    """Dispatch on ``cfg.variant``; returns an AttentionOutput (or a real tensor for ``ssa``)."""
    if cfg.variant == "ssa":
        return ssa_baseline(q, k, v, counters)
    if params is None:
        raise ParameterError(f"variant {cfg.variant} needs saccadic parameters")
    if cfg.variant == "v1":
        return sssa_v1(q, k, v, params, counters)
    return sssa_v2(q, k, v, params, cfg.alpha_mode, counters)


@dataclass(frozen=True)
class OrderingResult:
    agree: bool
    degenerate: bool
    full_ranking: tuple[int, ...]
    simplified_ranking: tuple[int, ...]


def _rank(scores: Sequence[float]) -> tuple[int, ...]:
    # descending score, ties by index
    return tuple(sorted(range(len(scores)), key=lambda i: (-scores[i], i)))


def ordering_oracle(q, ks) -> OrderingResult:
    """Check that replacing ``log p_k`` by ``p_k`` keeps the relevance ranking.

    Ranks keys by ``p_q log p_k`` (the negated first cross-entropy term) and by
    ``p_q * p_k``. With ``p_q = 0`` every score is zero; both rankings fall back
    to index order and the result is flagged degenerate.
    """
    q = np.asarray(q).reshape(-1)
    p_q = q.sum() / q.size
    p_ks = []
    for k in ks:
        k = np.asarray(k).reshape(-1)
        p_k = k.sum() / k.size
        if not 0 < p_k < 1:
            raise DomainError("every key firing rate must lie strictly inside (0, 1)")
        p_ks.append(p_k)
    full = _rank([p_q * math.log(p) for p in p_ks])
    simplified = _rank([p_q * p for p in p_ks])
    return OrderingResult(full == simplified, p_q == 0, full, simplified)
