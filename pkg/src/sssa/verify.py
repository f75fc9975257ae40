"""Randomized equivalence and agreement checks shared by the tests and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .attention import sssa_v1, sssa_v2
from .conv import BNParams
from .neurons import SaccadicParams, heaviside, saccadic_infer, saccadic_train, train_infer_agreement
from .tensor import RngState

# Saccadic duality counterexample: the branches disagree at t = 1.
COUNTEREXAMPLE = {
    "patch": [[2.0], [0.0]],
    "m_w": [[1.0, 0.0], [0.5, 1.0]],
    "v_th": [1.5, 0.9],
}


@dataclass
class CheckResult:
    passed: int
    trials: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.trials

    def summary(self) -> str:
        return f"{self.passed}/{self.trials} identical"


def _dyadic(gen, shape, lo, hi, denom=16):
    # multiples of 1/16 keep every product and sum exact in float64
    return gen.integers(int(lo * denom), int(hi * denom) + 1, size=shape) / denom


def random_mixer(gen, t: int, general: bool = True) -> np.ndarray:
    """Lower-triangular mixer with a positive diagonal; ``general=False`` gives a diagonal one."""
    m = np.diag(_dyadic(gen, t, 0.25, 2.0))
    if general:
        m += np.tril(_dyadic(gen, (t, t), -1.0, 1.0), k=-1)
    return m


def constant_alpha_instance(gen, max_t: int = 4, max_n: int = 8, max_d: int = 8):
    """Random Q, K, V and mixer where every timestep's K carries the same spike total.

    K[t] for t > 0 is a random permutation of K[0]'s entries, so
    ``alpha[t] = sum K'[t]`` does not depend on t.
    """
    t, n, d = (int(gen.integers(1, m + 1)) for m in (max_t, max_n, max_d))
    p = gen.uniform(0.05, 0.6)
    q = (gen.random((t, n, d)) < p).astype(np.uint8)
    v = (gen.random((t, n, d)) < p).astype(np.uint8)
    k0 = (gen.random(n * d) < p).astype(np.uint8)
    k = np.stack([gen.permutation(k0) for _ in range(t)]).reshape(t, n, d)
    alpha = float(k0.sum())
    thresholds = _dyadic(gen, t, 0.0, max(alpha, 1.0) * d)
    params = SaccadicParams(random_mixer(gen, t), thresholds)
    return q, k, v, params


def single_step_instance(gen, max_n: int = 8, max_d: int = 8):
    """T = 1 instance with unconstrained K; alpha is then trivially constant."""
    n, d = (int(gen.integers(1, m + 1)) for m in (max_n, max_d))
    q, k, v = ((gen.random((1, n, d)) < gen.uniform(0.05, 0.6)).astype(np.uint8) for _ in range(3))
    params = SaccadicParams(random_mixer(gen, 1), _dyadic(gen, 1, 0.0, n * d * d))
    return q, k, v, params


def verify_v1_v2(trials: int, seed: int, single_step: bool = False) -> CheckResult:
    """Compare sssa_v1 with sssa_v2 in computed mode on random constant-alpha instances."""
    gen = RngState(seed).generator()
    res = CheckResult(0, trials)
    for i in range(trials):
        q, k, v, params = single_step_instance(gen) if single_step else constant_alpha_instance(gen)
        a = sssa_v1(q, k, v, params)
        b = sssa_v2(q, k, v, params, mode="computed")
        if np.array_equal(a.spikes, b.spikes) and np.array_equal(a.masked_v, b.masked_v):
            res.passed += 1
        else:
            res.failures.append(i)
    return res


def verify_scaling_invariance(trials: int, seed: int) -> CheckResult:
    """``heaviside(c*u, c*v) == heaviside(u, v)`` for random reals and c > 0."""
    gen = RngState(seed).generator()
    u = gen.normal(0.0, 2.0, trials)
    v = gen.normal(0.0, 2.0, trials)
    # include exact ties so the >= branch is exercised
    tie = gen.random(trials) < 0.1
    v[tie] = u[tie]
    c = np.exp(gen.uniform(-3.0, 3.0, trials))
    same = heaviside(c * u, c * v) == heaviside(u, v)
    return CheckResult(int(same.sum()), trials, np.flatnonzero(~same).tolist())


def saccadic_agreement(trials: int, seed: int, general: bool) -> float:
    """Mean train/infer agreement over ``trials`` random mixers (one patch each)."""
    root = RngState(seed)
    gen = root.stream(0).generator()
    total = 0.0
    for i in range(trials):
        t = int(gen.integers(1, 5))
        m = random_mixer(gen, t, general)
        v_th = gen.uniform(0.5, 3.0, t)
        total += train_infer_agreement(SaccadicParams(m, v_th), 1, root.stream(i + 1))
    return total / trials


def counterexample() -> dict:
    p = SaccadicParams(np.array(COUNTEREXAMPLE["m_w"]), np.array(COUNTEREXAMPLE["v_th"]))
    patch = np.array(COUNTEREXAMPLE["patch"])
    train, infer = saccadic_train(p, patch), saccadic_infer(p, patch)
    return {
        **COUNTEREXAMPLE,
        "train_spikes": train.ravel().tolist(),
        "infer_spikes": infer.ravel().tolist(),
        "disagree": not np.array_equal(train, infer),
    }


# -- finite-difference checks on threshold-free subgraphs -------------------


def _fd_conv(gen):
    cin, cout = (int(gen.integers(1, 4)) for _ in range(2))
    k = int(gen.choice([1, 3]))
    stride, dilation = int(gen.integers(1, 3)), int(gen.integers(1, 3))
    size = int(gen.integers(dilation * (k - 1) + 1, 7))
    x = ag.parameter(gen.normal(size=(2, cin, size, size)))
    w = ag.parameter(gen.normal(size=(cout, cin, k, k)))
    r = gen.normal(size=ag.conv2d(x, w, stride, dilation, 1).shape)
    return lambda: (ag.conv2d(x, w, stride, dilation, 1) * r).sum(), [x, w]


def _fd_bn(gen):
    c = int(gen.integers(1, 4))
    x = ag.parameter(gen.normal(size=(3, c, 2, 2)))
    gamma, beta = ag.parameter(gen.normal(size=c)), ag.parameter(gen.normal(size=c))
    r = gen.normal(size=x.shape)

    def loss():
        # fresh buffers each call so running-stat updates cannot leak between evaluations
        return (ag.batchnorm(x, gamma, beta, BNParams.identity(c), "train") * r).sum()

    return loss, [x, gamma, beta]


def _fd_matmul(gen):
    m, k, n = (int(gen.integers(1, 5)) for _ in range(3))
    a, b = ag.parameter(gen.normal(size=(m, k))), ag.parameter(gen.normal(size=(k, n)))
    r = gen.normal(size=(m, n))
    return lambda: ((a @ b) * r).sum(), [a, b]


def _fd_cro(gen, salience: bool):
    t, n = int(gen.integers(1, 4)), int(gen.integers(1, 5))
    qs, ks = ag.parameter(gen.normal(size=(t, n))), ag.parameter(gen.normal(size=(t, n)))
    r = gen.normal(size=(t, n) if salience else (t, n, n))

    def loss():
        cro = qs.reshape((t, n, 1)) * ks.reshape((t, 1, n))
        out = cro.sum(axis=-1) if salience else cro
        return (out * r).sum()

    return loss, [qs, ks]


GRAD_CASES = {
    "conv2d": _fd_conv,
    "batchnorm": _fd_bn,
    "matmul": _fd_matmul,
    "cro_att": lambda g: _fd_cro(g, False),
    "patch_salience": lambda g: _fd_cro(g, True),
}


def grad_checks(instances: int, seed: int, h: float = 1e-5) -> dict[str, float]:
    """Worst finite-difference error per subgraph over ``instances`` random cases each."""
    root = RngState(seed)
    out = {}
    for j, (name, build) in enumerate(GRAD_CASES.items()):
        worst = 0.0
        for i in range(instances):
            loss, params = build(root.stream(j * instances + i).generator())
            worst = max(worst, ag.grad_check(loss, params, h))
        out[name] = float(worst)
    return out
