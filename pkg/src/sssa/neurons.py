"""Spiking neuron models.

Two families live here:

* the leaky integrate-and-fire neuron, stepped one timestep at a time;
* the saccadic neuron, whose membrane potential mixes all timesteps through a
  lower-triangular matrix ``m_w``. Training evaluates all timesteps at once;
  inference folds ``m_w^-1`` into the thresholds and fires from the current
  timestep alone.

The step function fires at the threshold (``u >= v_th``), in both branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import RealTensor, RngState, ShapeError, SpikeTensor, matmul, real, spikes


class ParameterError(ValueError):
    """Saccadic parameters violate triangularity, diagonal or sign constraints."""


class SingularMixerError(ParameterError):
    """``m_w`` has a zero on its diagonal and cannot be inverted."""


class NeuronStateError(RuntimeError):
    """Inference was requested before thresholds were folded."""


@dataclass(frozen=True)
class LIFParams:
    tau: float = 0.5
    v_th: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ParameterError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.v_th > self.v_reset:
            raise ParameterError("v_th must exceed v_reset")


@dataclass(frozen=True)
class LIFState:
    h: RealTensor

    @classmethod
    def zeros(cls, shape) -> "LIFState":
        return cls(real(np.zeros(shape)))


@dataclass(frozen=True)
class SurrogateSpec:
    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ParameterError("surrogate width must be positive")


@dataclass
class SaccadicParams:
    """Saccadic neuron parameters.

    Attributes:
        m_w: ``[T, T]`` lower-triangular temporal mixer with nonzero diagonal.
        v_th: ``[T]`` per-timestep thresholds, shared by every token.
        alpha: positive scale used by the learned-alpha attention variant.
        folded: cached ``m_w^-1 v_th``; filled by :func:`fold_thresholds`.
    """

    m_w: np.ndarray
    v_th: np.ndarray
    alpha: float = 1.0
    folded: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.m_w = np.array(self.m_w, dtype=np.float64)
        self.v_th = np.array(self.v_th, dtype=np.float64).reshape(-1)
        self.alpha = float(self.alpha)

    @property
    def t_steps(self) -> int:
        return self.v_th.shape[0]

    def validate(self) -> None:
        t = self.t_steps
        if self.m_w.shape != (t, t):
            raise ParameterError(f"m_w must be [{t}, {t}], got {list(self.m_w.shape)}")
        if np.any(np.triu(self.m_w, k=1) != 0):
            raise ParameterError("m_w must be lower triangular")
        if np.any(np.diag(self.m_w) == 0):
            raise SingularMixerError("m_w has a zero diagonal entry")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if self.folded is not None:
            resid = np.abs(self.m_w @ self.folded - self.v_th).max()
            if resid > 1e-10:
                raise ParameterError(f"folded thresholds stale (residual {resid:.3g})")


def heaviside(u, v_th) -> SpikeTensor:
    """Spike where ``u >= v_th``; ``v_th`` broadcasts against ``u``."""
    return spikes(np.asarray(u) >= np.asarray(v_th))


def lif_step(params: LIFParams, state: LIFState, x) -> tuple[SpikeTensor, LIFState]:
    """Advance one timestep: integrate, fire, then reset or leak."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != state.h.shape:
        raise ShapeError(f"input {x.shape} does not match state {state.h.shape}")
    u = state.h + x
    s = heaviside(u, params.v_th)
    h_next = params.v_reset * s + params.tau * u * (1 - s)
    return s, LIFState(real(h_next))


def lif_run(params: LIFParams, x_seq) -> SpikeTensor:
    """Run ``lif_step`` over the leading (time) axis from a zero state."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    state = LIFState.zeros(x_seq.shape[1:])
    out = []
    for x in x_seq:
        s, state = lif_step(params, state, x)
        out.append(s)
    return spikes(np.stack(out))


def forward_substitution(lower, b) -> np.ndarray:
    """Solve ``lower @ x = b`` for lower-triangular ``lower``."""
    lower = np.asarray(lower, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros_like(b)
    for i in range(n):
        d = lower[i, i]
        if d == 0:
            raise SingularMixerError(f"zero diagonal entry at row {i}")
        acc = b[i]
        for j in range(i):
            acc = acc - lower[i, j] * x[j]
        x[i] = acc / d
    return x


def fold_thresholds(params: SaccadicParams) -> RealTensor:
    """Compute ``m_w^-1 v_th`` and cache it on ``params.folded``."""
    if params.m_w.shape != (params.t_steps, params.t_steps):
        raise ParameterError("m_w shape does not match v_th")
    folded = real(forward_substitution(params.m_w, params.v_th))
    params.folded = folded
    return folded


def saccadic_train(params: SaccadicParams, patch) -> SpikeTensor:
    """Parallel (training) branch: ``S = Θ(m_w @ patch - v_th)`` over all timesteps.

    ``patch`` is ``[T, N]``; the per-timestep threshold broadcasts over N.
    """
    params.validate()
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2 or patch.shape[0] != params.t_steps:
        raise ShapeError(f"patch must be [{params.t_steps}, N], got {list(patch.shape)}")
    h = matmul(params.m_w, patch)
    return heaviside(h, params.v_th[:, None])


def saccadic_infer_step(params: SaccadicParams, patch_t, t: int) -> SpikeTensor:
    """Asynchronous branch: fire from the current patch against the folded threshold.

    Uses no earlier patches, so calls for different ``t`` can happen in any order.
    """
    if params.folded is None:
        raise NeuronStateError("fold_thresholds must run before inference")
    if not 0 <= t < params.t_steps:
        raise IndexError(f"timestep {t} outside [0, {params.t_steps})")
    return heaviside(np.asarray(patch_t, dtype=np.float64), params.folded[t])


def saccadic_infer(params: SaccadicParams, patch) -> SpikeTensor:
    """Run :func:`saccadic_infer_step` for every timestep of a ``[T, N]`` patch."""
    if params.folded is None:
        fold_thresholds(params)
    patch = np.asarray(patch, dtype=np.float64)
    return spikes(np.stack([saccadic_infer_step(params, patch[t], t) for t in range(params.t_steps)]))


def train_infer_agreement(
    params: SaccadicParams,
    trials: int,
    rng: RngState,
    n_tokens: int = 4,
    max_value: int = 4,
) -> float:
    """Fraction of random integer patches on which both branches emit identical spikes.

    Patches are drawn uniformly from ``{0, ..., max_value}``, matching the
    integer salience values produced from spike counts.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fold_thresholds(params)
    gen = rng.generator()
    agree = 0
    for _ in range(trials):
        patch = gen.integers(0, max_value + 1, size=(params.t_steps, n_tokens)).astype(np.float64)
        if np.array_equal(saccadic_train(params, patch), saccadic_infer(params, patch)):
            agree += 1
    return agree / trials


def surrogate_grad(u, v_th, spec: SurrogateSpec = SurrogateSpec()) -> RealTensor:
    """Triangular pseudo-derivative of the step: ``max(0, 1 - |u - v_th|/w) / w``."""
    w = spec.width
    d = np.abs(np.asarray(u, dtype=np.float64) - np.asarray(v_th, dtype=np.float64))
    return real(np.maximum(0.0, 1.0 - d / w) / w)


def init_saccadic(t_steps: int, rng: RngState, v_th: float = 1.0, alpha: float = 1.0, sigma: float = 0.01) -> SaccadicParams:
    """Identity mixer plus small Gaussian noise below the diagonal."""
    noise = np.tril(rng.generator().normal(0.0, sigma, size=(t_steps, t_steps)), k=-1)
    return SaccadicParams(np.eye(t_steps) + noise, np.full(t_steps, v_th), alpha)


def project_mixer(m_w: np.ndarray, diag_min: float = 0.1) -> np.ndarray:
    """Zero the strict upper triangle and clamp the diagonal to ``>= diag_min``, in place."""
    m_w[np.triu_indices_from(m_w, k=1)] = 0.0
    idx = np.diag_indices_from(m_w)
    m_w[idx] = np.maximum(m_w[idx], diag_min)
    return m_w
