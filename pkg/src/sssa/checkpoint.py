"""JSON checkpoints for :class:`~sssa.model.SNNViT`.

Floats are written with Python's shortest round-trip repr, so a save/load
cycle restores every parameter bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conv import BNParams, ConfigurationError
from .model import ModelConfig, SNNViT

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for checkpoint problems."""


class MigrationError(CheckpointError):
    """The file was written by a different format version."""


class CorruptCheckpointError(CheckpointError):
    """The file parses but violates a model invariant."""


@dataclass
class Checkpoint:
    model: SNNViT
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def migration_message(found) -> str:
    return (
        f"checkpoint format version {found} cannot be read by this loader (expects {FORMAT_VERSION}); "
        "re-export the model with a current release"
    )


def checkpoint_dict(model: SNNViT, metadata: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "params": {name: t.data.tolist() for name, t in model.params.items()},
        "bn": {
            prefix: {"running_mean": bn.running_mean.tolist(), "running_var": bn.running_var.tolist()}
            for prefix, bn in model.bn.items()
        },
        "metadata": dict(metadata or {}),
    }


def save_checkpoint(path, model: SNNViT, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(model, metadata), indent=1))
    return path


def _array(name, value, shape) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise CorruptCheckpointError(f"{name}: not a numeric array ({e})") from None
    if a.shape != shape:
        raise CorruptCheckpointError(f"{name}: shape {list(a.shape)} does not match model {list(shape)}")
    if not np.all(np.isfinite(a)):
        raise CorruptCheckpointError(f"{name}: non-finite values")
    return a


def _check_block(model: SNNViT, i: int, diag_min: float) -> None:
    m_w = model.params[f"block{i}.m_w"].data
    if np.any(np.triu(m_w, k=1) != 0):
        raise CorruptCheckpointError(f"block{i}.m_w: nonzero entry above the diagonal")
    if np.any(np.diag(m_w) < diag_min):
        raise CorruptCheckpointError(f"block{i}.m_w: diagonal below the clamp {diag_min}")
    if not model.params[f"block{i}.alpha"].data > 0:
        raise CorruptCheckpointError(f"block{i}.alpha: must be positive")


def checkpoint_from_dict(doc: dict) -> Checkpoint:
    if not isinstance(doc, dict):
        raise CorruptCheckpointError("checkpoint root must be a JSON object")
    version = doc.get("format_version", 0)
    if version != FORMAT_VERSION:
        raise MigrationError(migration_message(version))
    for key in ("model_config", "params", "bn"):
        if key not in doc:
            raise CorruptCheckpointError(f"missing section {key!r}")
    try:
        cfg = ModelConfig.from_dict(doc["model_config"])
        model = SNNViT(cfg)
    except (ConfigurationError, TypeError) as e:
        raise CorruptCheckpointError(f"model_config: {e}") from None

    params = doc["params"]
    if set(params) != set(model.params):
        missing, extra = set(model.params) - set(params), set(params) - set(model.params)
        raise CorruptCheckpointError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, t in model.params.items():
        t.data = _array(name, params[name], t.data.shape)

    bn = doc["bn"]
    if set(bn) != set(model.bn):
        raise CorruptCheckpointError(f"BN buffers differ from the model: {sorted(set(bn) ^ set(model.bn))}")
    for prefix, old in model.bn.items():
        mean = _array(f"{prefix}.running_mean", bn[prefix].get("running_mean"), old.running_mean.shape)
        var = _array(f"{prefix}.running_var", bn[prefix].get("running_var"), old.running_var.shape)
        if np.any(var < 0):
            raise CorruptCheckpointError(f"{prefix}.running_var: negative variance")
        model.bn[prefix] = BNParams(old.gamma, old.beta, mean, var, old.eps, old.momentum)

    metadata = doc.get("metadata", {})
    diag_min = float(metadata.get("diag_clamp", 0.0))
    for i in range(cfg.num_blocks):
        _check_block(model, i, diag_min)
    return Checkpoint(model, metadata, version)


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint.

    Raises:
        MigrationError: the file's ``format_version`` is not the current one.
        CorruptCheckpointError: malformed JSON, a shape mismatch or a broken invariant.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CorruptCheckpointError(f"not valid JSON: {e}") from None
    return checkpoint_from_dict(doc)
