"""Surrogate-gradient training of the tiny SNN-ViT on a synthetic bar task.

Images hold a single horizontal (label 0) or vertical (label 1) bar whose
centre is jittered around the image centre. Pixels are rate encoded into
Bernoulli spike trains; a fresh encoding is drawn every epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .conv import ConfigurationError
from .model import ModelConfig, SNNViT
from .tensor import RngState, bernoulli_spikes

log = logging.getLogger(__name__)

MAX_RATE = 0.5


class TrainingError(RuntimeError):
    """Training diverged."""


@dataclass
class ToyTaskSpec:
    image_size: int = 16
    samples_per_class: int = 200
    t_steps: int = 4
    peak_rate: float = 0.5
    bar_length: int = 10
    jitter: int = 3
    background: float = 0.05
    train_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.samples_per_class < 2 or not 0 < self.train_fraction < 1:
            raise ConfigurationError("need >= 2 samples per class and 0 < train_fraction < 1")
        centre, half = self.image_size // 2, self.bar_length // 2
        if centre - self.jitter - half < 0 or centre + self.jitter - half + self.bar_length > self.image_size:
            raise ConfigurationError("bar does not fit the image at every jitter offset")
        if not 0 < self.peak_rate <= 1:
            raise ConfigurationError("peak rate must lie in (0, 1]")


@dataclass
class OptimSpec:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 200
    batch_size: int = 20
    diag_clamp: float = 0.1

    def validate(self) -> None:
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("lr must be >= 0, epochs >= 0, batch size >= 1")


@dataclass
class ToyData:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


def make_bar_images(task: ToyTaskSpec) -> ToyData:
    """Balanced, disjoint train/test split of bar images with intensities in [0, 1]."""
    task.validate()
    gen = RngState(task.seed).stream(1).generator()
    size, half = task.image_size, task.bar_length // 2
    centre = size // 2
    images, labels = [], []
    for label in (0, 1):
        for _ in range(task.samples_per_class):
            img = gen.uniform(0.0, task.background, (size, size))
            cy, cx = centre + gen.integers(-task.jitter, task.jitter + 1, size=2)
            if label == 0:
                img[cy, cx - half : cx - half + task.bar_length] = 1.0
            else:
                img[cy - half : cy - half + task.bar_length, cx] = 1.0
            images.append(img)
            labels.append(label)
    images = np.asarray(images)[:, None]
    labels = np.asarray(labels)
    n_train = int(round(task.samples_per_class * task.train_fraction))
    train_idx, test_idx = [], []
    for label in (0, 1):
        idx = np.flatnonzero(labels == label)
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    train_idx = gen.permutation(train_idx)
    test_idx = np.asarray(test_idx)
    return ToyData(images[train_idx], labels[train_idx], images[test_idx], labels[test_idx])


def rate_encode(images, t_steps: int, peak_rate: float, rng: RngState) -> np.ndarray:
    """``[M, C, H, W]`` intensities -> ``[T, M, C, H, W]`` spikes, rate capped at 0.5."""
    p = np.minimum(np.asarray(images) * peak_rate, MAX_RATE)
    return bernoulli_spikes((t_steps,) + p.shape, p, rng)


def logistic_oracle(task: ToyTaskSpec, features: str = "rate") -> float:
    """Test accuracy of logistic regression on per-pixel rate features.

    ``rate`` uses each pixel's encoding probability; ``counts`` uses one
    sampled T-step spike count per pixel (a noisier view of the same rates).
    Confirms linear separability before the SNN is judged on the task.
    """
    from sklearn.linear_model import LogisticRegression

    data = make_bar_images(task)
    if features == "rate":
        tr = np.minimum(data.train_images * task.peak_rate, MAX_RATE)
        te = np.minimum(data.test_images * task.peak_rate, MAX_RATE)
    elif features == "counts":
        base = RngState(task.seed).stream(2)
        tr = rate_encode(data.train_images, task.t_steps, task.peak_rate, base.stream(0)).sum(axis=0)
        te = rate_encode(data.test_images, task.t_steps, task.peak_rate, base.stream(1)).sum(axis=0)
    else:
        raise ValueError(f"features must be 'rate' or 'counts', got {features!r}")
    clf = LogisticRegression(max_iter=2000).fit(tr.reshape(len(tr), -1), data.train_labels)
    return float(clf.score(te.reshape(len(te), -1), data.test_labels))


def evaluate(model: SNNViT, spikes, labels, batch_size: int = 50, asynchronous: bool = False) -> float:
    return evaluate_loss(model, spikes, labels, batch_size, asynchronous)[0]


def evaluate_loss(model: SNNViT, spikes, labels, batch_size: int = 50, asynchronous: bool = False) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) in inference mode."""
    correct, total = 0, 0.0
    for i in range(0, spikes.shape[1], batch_size):
        yb = labels[i : i + batch_size]
        logits = model.forward(spikes[:, i : i + batch_size], train=False, asynchronous=asynchronous)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
        total += float(ag.softmax_cross_entropy(logits, yb).data) * len(yb)
    n = spikes.shape[1]
    return correct / n, total / n


class SGD:
    """SGD with momentum and optional L2 weight decay."""

    def __init__(self, params: list[ag.Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, grads: dict) -> None:
        for p, v in zip(self.params, self.velocity):
            g = grads[p]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    model: SNNViT | None = None
    test_acc_async: float | None = None

    @property
    def final_test_acc(self) -> float:
        return self.metrics[-1]["test_acc"] if self.metrics else float("nan")


def default_model_config(task: ToyTaskSpec) -> ModelConfig:
    return ModelConfig(image_size=task.image_size, t_steps=task.t_steps, embed_dim=8, num_blocks=1, num_classes=2)


def train_toy(
    task: ToyTaskSpec,
    model_cfg: ModelConfig | None = None,
    optim: OptimSpec | None = None,
    track_train_loss: bool = False,
) -> TrainResult:
    """Train with cross-entropy and surrogate gradients; deterministic given ``task.seed``.

    The mixer is projected back to lower-triangular with a clamped diagonal
    after every step. With ``track_train_loss`` each metrics row also holds
    ``train_loss_fixed``: the inference-mode loss on one fixed encoding of
    the training set, a less noisy curve than the running epoch loss.
    """
    model_cfg = model_cfg or default_model_config(task)
    optim = optim or OptimSpec()
    task.validate()
    optim.validate()
    if model_cfg.t_steps != task.t_steps or model_cfg.image_size != task.image_size or model_cfg.num_classes != 2:
        raise ConfigurationError("model config must match the task's T, image size and 2 classes")

    root = RngState(task.seed)
    data = make_bar_images(task)
    model = SNNViT(model_cfg, root.stream(0))
    params = list(model.params.values())
    opt = SGD(params, optim.lr, optim.momentum, optim.weight_decay)
    test_spikes = rate_encode(data.test_images, task.t_steps, task.peak_rate, root.stream(3))
    n = len(data.train_labels)
    fixed_train = rate_encode(data.train_images, task.t_steps, task.peak_rate, root.stream(2)) if track_train_loss else None
    result = TrainResult(model=model)

    for epoch in range(1, optim.epochs + 1):
        ep = root.stream(1000 + epoch)
        order = ep.stream(0).generator().permutation(n)
        spikes = rate_encode(data.train_images[order], task.t_steps, task.peak_rate, ep.stream(1))
        labels = data.train_labels[order]
        losses, correct = [], 0
        for i in range(0, n, optim.batch_size):
            xb, yb = spikes[:, i : i + optim.batch_size], labels[i : i + optim.batch_size]
            with ag.Tape() as tape:
                logits = model.forward(xb, train=True)
                loss = ag.softmax_cross_entropy(logits, yb)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(
                    f"loss became {value} at epoch {epoch}, batch {i // optim.batch_size}; "
                    f"recent losses {losses[-5:]}, lr {optim.lr}"
                )
            if optim.lr > 0:
                opt.step(tape.backward(loss, params))
                model.project(optim.diag_clamp)
            losses.append(value * len(yb))
            correct += int((logits.data.argmax(axis=1) == yb).sum())
        row = {
            "epoch": epoch,
            "train_acc": correct / n,
            "test_acc": evaluate(model, test_spikes, data.test_labels),
            "loss": sum(losses) / n,
        }
        if track_train_loss:
            row["train_loss_fixed"] = evaluate_loss(model, fixed_train, data.train_labels)[1]
        result.metrics.append(row)
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, row["loss"], row["train_acc"], row["test_acc"])
    result.test_acc_async = evaluate(model, test_spikes, data.test_labels, asynchronous=True)
    return result


def spec_dict(*specs) -> dict:
    return {type(s).__name__: asdict(s) for s in specs}
