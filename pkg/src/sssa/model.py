"""Tiny SNN-ViT: stride-2 stem, GL-SPS embedding, SSSA blocks, GAP and a linear head.

Token tensors are laid out ``[T, B, N, D]`` with ``N = grid * grid`` tokens
taken from the ``D``-channel feature map. Everything is written against the
autograd ops, so the same code runs plain inference (no tape) and training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .conv import BNParams, ConfigurationError
from .neurons import SurrogateSpec, forward_substitution
from .tensor import RngState, ShapeError


@dataclass
class ModelConfig:
    """Single-stage desk-scale SNN-ViT.

    ``stem_kernel`` is 3 for 16x16 inputs; 7 reproduces the full-size stem.
    ``variant`` picks the attention used inside every block (``v1`` or ``v2``)
    and ``alpha_mode`` the V2 flavour.
    """

    in_channels: int = 1
    image_size: int = 16
    t_steps: int = 4
    embed_dim: int = 16
    num_blocks: int = 1
    num_classes: int = 2
    stem_kernel: int = 3
    stem_stride: int = 2
    glsps_kernel: int = 3
    glsps_dilation: int = 2
    qkv_kernel: int = 3
    variant: str = "v2"
    alpha_mode: str = "learned"
    tau: float = 0.5
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_width: float = 1.0
    p0: float = 0.15

    def validate(self) -> None:
        if self.image_size % self.stem_stride:
            raise ConfigurationError(f"image size {self.image_size} not divisible by stem stride {self.stem_stride}")
        if self.stem_kernel % 2 == 0 or self.glsps_kernel % 2 == 0 or self.qkv_kernel % 2 == 0:
            raise ConfigurationError("kernels must be odd for SAME padding")
        if self.variant not in ("v1", "v2"):
            raise ConfigurationError(f"model blocks support variants v1 and v2, got {self.variant!r}")
        if self.alpha_mode not in ("computed", "learned"):
            raise ConfigurationError(f"unknown alpha mode {self.alpha_mode!r}")
        if min(self.t_steps, self.embed_dim, self.num_classes, self.in_channels) < 1 or self.num_blocks < 0:
            raise ConfigurationError("T, D, classes and channels must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.stem_stride

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def stages(self) -> list[dict]:
        return [{"channels": self.embed_dim, "token_grid": self.grid}]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _bn_names(prefix: str) -> list[str]:
    return [f"{prefix}.gamma", f"{prefix}.beta"]


class SNNViT:
    """Parameters and forward pass of the tiny SNN-ViT.

    ``params`` maps names to trainable :class:`~sssa.autograd.Tensor` leaves;
    ``bn`` maps BN prefixes to their running statistics.
    """

    def __init__(self, cfg: ModelConfig, rng: RngState | None = None):
        cfg.validate()
        self.cfg = cfg
        self.params: dict[str, ag.Tensor] = {}
        self.bn: dict[str, BNParams] = {}
        gen = (rng or RngState(0)).generator()
        c, d, t, n = cfg.in_channels, cfg.embed_dim, cfg.t_steps, cfg.n_tokens

        def conv_w(name, cout, cin, k):
            std = np.sqrt(2.0 / (cin * k * k))
            self.params[name] = ag.parameter(gen.normal(0.0, std, (cout, cin, k, k)), name)

        def bn(prefix, channels):
            self.bn[prefix] = BNParams.identity(channels)
            self.params[f"{prefix}.gamma"] = ag.parameter(np.ones(channels), f"{prefix}.gamma")
            self.params[f"{prefix}.beta"] = ag.parameter(np.zeros(channels), f"{prefix}.beta")

        conv_w("stem.w", d, c, cfg.stem_kernel)
        conv_w("glsps.conv.w", d, d, cfg.glsps_kernel)
        bn("glsps.bn1", d)
        conv_w("glsps.dconv.w", d, d, cfg.glsps_kernel)
        bn("glsps.bn2", d)
        alpha0 = n * cfg.p0
        for i in range(cfg.num_blocks):
            p = f"block{i}"
            for name in ("q", "k", "v"):
                conv_w(f"{p}.{name}.w", d, d, cfg.qkv_kernel)
                bn(f"{p}.{name}.bn", d)
            noise = np.tril(gen.normal(0.0, 0.01, (t, t)), k=-1)
            self.params[f"{p}.m_w"] = ag.parameter(np.eye(t) + noise, f"{p}.m_w")
            self.params[f"{p}.alpha"] = ag.parameter(np.array(alpha0), f"{p}.alpha")
            # V_th / alpha starts at the count expected from a p0 firing rate
            self.params[f"{p}.v_th"] = ag.parameter(np.full(t, alpha0 * d * cfg.p0), f"{p}.v_th")
            conv_w(f"{p}.proj.w", d, d, 1)
            bn(f"{p}.proj.bn", d)
            self.params[f"{p}.mlp.w"] = ag.parameter(gen.normal(0.0, np.sqrt(2.0 / d), (d, d)), f"{p}.mlp.w")
            bn(f"{p}.mlp.bn", d)
        self.params["head.w"] = ag.parameter(gen.normal(0.0, np.sqrt(1.0 / d), (d, cfg.num_classes)), "head.w")
        self.params["head.b"] = ag.parameter(np.zeros(cfg.num_classes), "head.b")
        self._tril = np.tril(np.ones((t, t)))

    # -- building blocks -------------------------------------------------

    def _surrogate(self) -> SurrogateSpec:
        return SurrogateSpec(self.cfg.surrogate_width)

    def _bn(self, x, prefix, train):
        p = self.params
        return ag.batchnorm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"], self.bn[prefix], "train" if train else "infer")

    def lif(self, u):
        """LIF spiking layer over the leading time axis of ``u``."""
        cfg = self.cfg
        h = 0.0
        out = []
        for t in range(u.shape[0]):
            x = u[t]
            m = h + x
            s = ag.spike(m, cfg.v_th, self._surrogate())
            h = cfg.v_reset * s + cfg.tau * m * (1.0 - s)
            out.append(s)
        return ag.stack(out)

    def mixer(self, i: int):
        """Lower-triangular view of block ``i``'s mixer; upper entries carry no gradient."""
        return self.params[f"block{i}.m_w"] * self._tril

    def embed(self, x, train: bool):
        """Stem downsample followed by GL-SPS; ``x`` is ``[T*B, C, H, W]``."""
        cfg, p = self.cfg, self.params
        h = ag.conv2d(x, p["stem.w"], stride=cfg.stem_stride, padding=cfg.stem_kernel // 2)
        k = cfg.glsps_kernel
        local = self._bn(ag.conv2d(h, p["glsps.conv.w"], padding=(k - 1) // 2), "glsps.bn1", train)
        dil = cfg.glsps_dilation
        wide = self._bn(ag.conv2d(h, p["glsps.dconv.w"], dilation=dil, padding=dil * (k - 1) // 2), "glsps.bn2", train)
        if local.shape != wide.shape:
            raise ConfigurationError(f"GL-SPS branches disagree: {local.shape} vs {wide.shape}")
        return local + wide

    def _to_grid(self, tok):
        t, b, n, d = tok.shape
        g = self.cfg.grid
        return tok.reshape(t * b, n, d).transpose(0, 2, 1).reshape(t * b, d, g, g)

    def _from_grid(self, x, t, b):
        tb, d, g, _ = x.shape
        return x.reshape(tb, d, g * g).transpose(0, 2, 1).reshape(t, b, g * g, d)

    def saccadic(self, i: int, q, k, asynchronous: bool = False):
        """Saccadic decision ``S [T, B, N]`` from Q, K spike tensors ``[T, B, N, D]``."""
        cfg, p = self.cfg, self.params
        pre = f"block{i}"
        t, b, n, _ = q.shape
        q_sum = q.sum(axis=-1)
        alpha = p[f"{pre}.alpha"]
        v_th = p[f"{pre}.v_th"]
        if asynchronous:
            folded = forward_substitution(self.mixer(i).data, v_th.data)
            if cfg.variant == "v2" and cfg.alpha_mode == "learned":
                return ag.spike(q_sum, (folded / alpha.data).reshape(t, 1, 1), self._surrogate())
            if cfg.variant == "v2":
                # computed alpha is input dependent, so it scales Q' instead of the threshold
                return ag.spike(q_sum * k.sum(axis=-1).sum(axis=-1, keepdims=True), folded.reshape(t, 1, 1), self._surrogate())
            patch = (q_sum.reshape(t, b, n, 1) * k.sum(axis=-1).reshape(t, b, 1, n)).sum(axis=-1)
            return ag.spike(patch, folded.reshape(t, 1, 1), self._surrogate())
        m = self.mixer(i)
        if cfg.variant == "v2":
            mixed = (m @ q_sum.reshape(t, b * n)).reshape(t, b, n)
            if cfg.alpha_mode == "learned":
                # Θ(alpha·M Q' - V_th) == Θ(M Q' - V_th/alpha) for alpha > 0
                return ag.spike(mixed, (v_th / alpha).reshape(t, 1, 1), self._surrogate())
            alpha_t = k.sum(axis=-1).sum(axis=-1, keepdims=True)
            return ag.spike(mixed * alpha_t, v_th.reshape(t, 1, 1), self._surrogate())
        patch = (q_sum.reshape(t, b, n, 1) * k.sum(axis=-1).reshape(t, b, 1, n)).sum(axis=-1)
        mixed = (m @ patch.reshape(t, b * n)).reshape(t, b, n)
        return ag.spike(mixed, v_th.reshape(t, 1, 1), self._surrogate())

    def block(self, i: int, u0, train: bool, asynchronous: bool = False, probe: dict | None = None):
        """One SSSA transformer block on membrane potentials ``u0 [T, B, N, D]``."""
        p, pre = self.params, f"block{i}"
        t, b, n, d = u0.shape
        x = self._to_grid(self.lif(u0))
        qkv = []
        for name in ("q", "k", "v"):
            pad = self.cfg.qkv_kernel // 2
            z = self._bn(ag.conv2d(x, p[f"{pre}.{name}.w"], padding=pad), f"{pre}.{name}.bn", train)
            qkv.append(self.lif(self._from_grid(z, t, b)))
        q, k, v = qkv
        s = self.saccadic(i, q, k, asynchronous)
        masked = s.reshape(t, b, n, 1) * v
        o = self._bn(ag.conv2d(self._to_grid(masked), p[f"{pre}.proj.w"]), f"{pre}.proj.bn", train)
        u1 = ag.residual_add(u0, self._from_grid(o, t, b))
        z = self.lif(u1).reshape(t * b * n, d) @ p[f"{pre}.mlp.w"]
        u2 = ag.residual_add(u1, self._bn(z, f"{pre}.mlp.bn", train).reshape(t, b, n, d))
        if probe is not None:
            probe.update(q=q, k=k, v=v, s=s, masked=masked, u1=u1, u2=u2)
        return u2

    # -- full pass -------------------------------------------------------

    def forward(self, x, train: bool = False, asynchronous: bool = False) -> ag.Tensor:
        """Logits ``[B, classes]`` for input ``[T, B, C, H, W]`` (real currents or spikes)."""
        cfg = self.cfg
        x = ag.as_tensor(x)
        if x.ndim != 5:
            raise ShapeError(f"expected [T, B, C, H, W], got {list(x.shape)}")
        t, b, c, hh, ww = x.shape
        if t != cfg.t_steps or c != cfg.in_channels or hh != cfg.image_size or ww != cfg.image_size:
            raise ConfigurationError(
                f"input [T={t}, C={c}, {hh}x{ww}] does not match config "
                f"[T={cfg.t_steps}, C={cfg.in_channels}, {cfg.image_size}x{cfg.image_size}]"
            )
        u = self._from_grid(self.embed(x.reshape(t * b, c, hh, ww), train), t, b)
        for i in range(cfg.num_blocks):
            u = self.block(i, u, train, asynchronous)
        feat = self.lif(u).mean(axis=(0, 2))
        return feat @ self.params["head.w"] + self.params["head.b"]

    def project(self, diag_min: float = 0.1) -> None:
        """Restore mixer constraints after an optimizer step."""
        from .neurons import project_mixer

        for i in range(self.cfg.num_blocks):
            project_mixer(self.params[f"block{i}.m_w"].data, diag_min)
            a = self.params[f"block{i}.alpha"].data
            a[...] = np.maximum(a, 1e-3)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        for prefix, bn in self.bn.items():
            out[f"{prefix}.running_mean"] = bn.running_mean
            out[f"{prefix}.running_var"] = bn.running_var
        return out


def model_forward(image, model: SNNViT, asynchronous: bool = False) -> np.ndarray:
    """Inference logits.

    ``image`` is ``[T, C, H, W]`` (returns ``[classes]``) or ``[T, B, C, H, W]``
    (returns ``[B, classes]``). BN uses running statistics.
    """
    x = np.asarray(image, dtype=np.float64)
    single = x.ndim == 4
    if single:
        x = x[:, None]
    logits = model.forward(x, train=False, asynchronous=asynchronous).data
    return logits[0] if single else logits


def gl_sps_block(model: SNNViT, x) -> np.ndarray:
    """GL-SPS embedding of ``[T*B, C, H, W]`` inputs, inference mode."""
    return model.embed(ag.as_tensor(x), train=False).data


def sssa_block(u0, model: SNNViT, index: int = 0, asynchronous: bool = False) -> np.ndarray:
    """Apply block ``index`` to membrane potentials ``[T, N, D]`` (inference mode)."""
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.ndim != 3:
        raise ShapeError(f"expected [T, N, D], got {list(u0.shape)}")
    return model.block(index, ag.as_tensor(u0[:, None]), train=False, asynchronous=asynchronous).data[:, 0]
