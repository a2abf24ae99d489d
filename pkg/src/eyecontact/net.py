"""Residual fully-connected binary classifier with hand-written gradients.

The network maps a flat normalized-keypoint vector to the probability that
the person is looking at the camera:

    stem:   linear(input_dim -> hidden) -> batch norm -> shift -> ReLU -> dropout
    body:   n residual blocks, each two [linear(hidden -> hidden) -> batch
            norm -> ReLU -> dropout] units whose output is added to the
            block input
    head:   linear(hidden -> 1) -> sigmoid

The stem carries a trainable per-feature shift applied after the batch-norm
affine; with the default width of 256 and three residual blocks the model
holds 412,161 trainable scalars on 51 inputs.

Everything runs in float64 and both passes are written out explicitly, so
gradients can be validated against central finite differences.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pose import Subset

DEFAULT_HIDDEN_DIM = 256
DEFAULT_N_BLOCKS = 3
DEFAULT_DROPOUT = 0.2
DEFAULT_BN_EPS = 1e-5
DEFAULT_BN_MOMENTUM = 0.1

# Probabilities are clamped this far away from {0, 1} before entering a log.
PROB_CLAMP = 1e-12

CHECKPOINT_VERSION = 1
NORMALIZER_ID = "eq1-v1"


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class NetworkArch:
    """Shape of the classifier.

    The reference configuration is hidden_dim=256 with 3 residual blocks and
    input_dim in {51, 15, 36} (full / head / body keypoint subsets); smaller
    widths are accepted so gradient checks can run on toy instances.
    """

    input_dim: int
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    n_residual_blocks: int = DEFAULT_N_BLOCKS
    dropout_rate: float = DEFAULT_DROPOUT
    bn_eps: float = DEFAULT_BN_EPS
    bn_momentum: float = DEFAULT_BN_MOMENTUM

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.n_residual_blocks < 0:
            raise ValueError("n_residual_blocks must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.bn_eps <= 0.0:
            raise ValueError("bn_eps must be positive")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in (0, 1)")


def _unit_prefixes(arch: NetworkArch) -> list[str]:
    """Prefixes of all linear+norm units in forward order."""
    prefixes = ["stem"]
    for i in range(arch.n_residual_blocks):
        prefixes.append(f"block{i}.a")
        prefixes.append(f"block{i}.b")
    return prefixes


def tensor_shapes(arch: NetworkArch) -> dict[str, tuple[int, ...]]:
    """All tensors (trainable and running statistics) keyed by name, in layer order."""
    h = arch.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for prefix in _unit_prefixes(arch):
        fan_in = arch.input_dim if prefix == "stem" else h
        shapes[f"{prefix}.fc.w"] = (h, fan_in)
        shapes[f"{prefix}.fc.b"] = (h,)
        shapes[f"{prefix}.bn.gamma"] = (h,)
        shapes[f"{prefix}.bn.beta"] = (h,)
        if prefix == "stem":
            shapes["stem.shift"] = (h,)
        shapes[f"{prefix}.bn.running_mean"] = (h,)
        shapes[f"{prefix}.bn.running_var"] = (h,)
    shapes["head.w"] = (1, h)
    shapes["head.b"] = (1,)
    return shapes


def trainable_names(arch: NetworkArch) -> list[str]:
    return [name for name in tensor_shapes(arch) if "running_" not in name]


def param_count(arch: NetworkArch) -> int:
    """Number of trainable scalars (weights, biases, gammas, betas, shift)."""
    return sum(
        math.prod(shape)
        for name, shape in tensor_shapes(arch).items()
        if "running_" not in name
    )


@dataclass
class NetworkParams:
    """All network tensors, including non-trainable batch-norm running stats."""

    arch: NetworkArch
    tensors: dict[str, np.ndarray]

    def trainable_items(self) -> list[tuple[str, np.ndarray]]:
        return [(name, self.tensors[name]) for name in trainable_names(self.arch)]

    @property
    def n_trainable(self) -> int:
        return sum(t.size for _, t in self.trainable_items())

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


def init_network(arch: NetworkArch, seed: int) -> NetworkParams:
    """Deterministic initialization.

    Linear weights are drawn from a symmetric uniform distribution with a
    fan-in-scaled bound sqrt(6 / fan_in); biases and shifts start at zero,
    batch norms at identity (gamma 1, beta 0, running mean 0, running var 1).
    Any 64-bit integer works as a seed.
    """
    rng = np.random.default_rng(seed & 0xFFFF_FFFF_FFFF_FFFF)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(arch).items():
        if name.endswith(".fc.w") or name == "head.w":
            fan_in = shape[1]
            bound = math.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".bn.gamma") or name.endswith(".running_var"):
            tensors[name] = np.ones(shape, dtype=np.float64)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float64)
    return NetworkParams(arch, tensors)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ForwardCache:
    """Intermediate values of a TRAIN-mode forward, consumed by backward()."""

    units: dict[str, dict[str, np.ndarray]]
    head_input: np.ndarray
    batch_size: int


def _unit_forward_train(
    params: NetworkParams,
    prefix: str,
    x: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    arch = params.arch
    t = params.tensors
    w, b = t[f"{prefix}.fc.w"], t[f"{prefix}.fc.b"]
    gamma, beta = t[f"{prefix}.bn.gamma"], t[f"{prefix}.bn.beta"]

    z = x @ w.T + b
    mean = z.mean(axis=0)
    var = z.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + arch.bn_eps)
    xhat = (z - mean) * inv_std
    h = gamma * xhat + beta
    if prefix == "stem":
        h = h + t["stem.shift"]
    a = np.maximum(h, 0.0)
    if arch.dropout_rate > 0.0:
        keep = 1.0 - arch.dropout_rate
        mask = (rng.random(a.shape) < keep) / keep
        y = a * mask
    else:
        mask = None
        y = a

    # Running statistics: batch mean, unbiased batch variance.
    n = z.shape[0]
    mom = arch.bn_momentum
    var_unbiased = var * n / (n - 1)
    t[f"{prefix}.bn.running_mean"] = (1.0 - mom) * t[f"{prefix}.bn.running_mean"] + mom * mean
    t[f"{prefix}.bn.running_var"] = (1.0 - mom) * t[f"{prefix}.bn.running_var"] + mom * var_unbiased

    cache = {"x": x, "xhat": xhat, "inv_std": inv_std, "h": h}
    if mask is not None:
        cache["mask"] = mask
    return y, cache


def _unit_forward_eval(params: NetworkParams, prefix: str, x: np.ndarray) -> np.ndarray:
    arch = params.arch
    t = params.tensors
    z = x @ t[f"{prefix}.fc.w"].T + t[f"{prefix}.fc.b"]
    inv_std = 1.0 / np.sqrt(t[f"{prefix}.bn.running_var"] + arch.bn_eps)
    h = t[f"{prefix}.bn.gamma"] * (z - t[f"{prefix}.bn.running_mean"]) * inv_std
    h = h + t[f"{prefix}.bn.beta"]
    if prefix == "stem":
        h = h + t["stem.shift"]
    return np.maximum(h, 0.0)


def forward(
    params: NetworkParams,
    batch: np.ndarray,
    mode: Mode = Mode.EVAL,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the network on a (B, input_dim) batch.

    TRAIN mode uses batch statistics for normalization (updating the running
    statistics in place), samples dropout masks from ``rng``, and returns the
    cache needed by :func:`backward`.  EVAL mode is a pure deterministic
    function of (params, batch): running statistics, identity dropout, no
    cache.

    Returns probabilities in (0, 1), clamped away from the extremes.
    """
    arch = params.arch
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != arch.input_dim:
        raise ValueError(
            f"batch must have shape (B, {arch.input_dim}), got {batch.shape}"
        )
    if mode is Mode.TRAIN:
        if batch.shape[0] < 2:
            raise ValueError("TRAIN mode needs a batch of at least 2 rows")
        if rng is None:
            raise ValueError("TRAIN mode needs an rng for dropout")
        return _forward_train(params, batch, rng)

    x = _unit_forward_eval(params, "stem", batch)
    for i in range(arch.n_residual_blocks):
        inner = _unit_forward_eval(params, f"block{i}.a", x)
        inner = _unit_forward_eval(params, f"block{i}.b", inner)
        x = inner + x
    logits = x @ params.tensors["head.w"].T + params.tensors["head.b"]
    probs = np.clip(_sigmoid(logits[:, 0]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return probs, None


def _forward_train(
    params: NetworkParams, batch: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, ForwardCache]:
    arch = params.arch
    units: dict[str, dict[str, np.ndarray]] = {}

    x, units["stem"] = _unit_forward_train(params, "stem", batch, rng)
    for i in range(arch.n_residual_blocks):
        inner, units[f"block{i}.a"] = _unit_forward_train(params, f"block{i}.a", x, rng)
        inner, units[f"block{i}.b"] = _unit_forward_train(params, f"block{i}.b", inner, rng)
        x = inner + x

    logits = x @ params.tensors["head.w"].T + params.tensors["head.b"]
    probs = np.clip(_sigmoid(logits[:, 0]), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return probs, ForwardCache(units=units, head_input=x, batch_size=batch.shape[0])


def _unit_backward_train(
    params: NetworkParams,
    prefix: str,
    d_out: np.ndarray,
    cache: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    t = params.tensors
    gamma = t[f"{prefix}.bn.gamma"]
    w = t[f"{prefix}.fc.w"]
    x, xhat, inv_std, h = cache["x"], cache["xhat"], cache["inv_std"], cache["h"]
    n = x.shape[0]

    da = d_out * cache["mask"] if "mask" in cache else d_out
    dh = da * (h > 0.0)

    grads[f"{prefix}.bn.gamma"] = (dh * xhat).sum(axis=0)
    grads[f"{prefix}.bn.beta"] = dh.sum(axis=0)
    if prefix == "stem":
        grads["stem.shift"] = dh.sum(axis=0)

    dxhat = dh * gamma
    dz = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )

    grads[f"{prefix}.fc.w"] = dz.T @ x
    grads[f"{prefix}.fc.b"] = dz.sum(axis=0)
    return dz @ w


def backward(
    params: NetworkParams,
    cache: ForwardCache,
    probs: np.ndarray,
    labels: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradients of the mean binary cross-entropy w.r.t. every trainable tensor.

    ``cache`` must come from a matching TRAIN-mode forward.  The sigmoid and
    loss are differentiated jointly, so the head pre-activation gradient per
    sample is (p - y) / B.
    """
    arch = params.arch
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = cache.batch_size
    if probs.shape != (n,) or labels.shape != (n,):
        raise ValueError("probs/labels must match the cached batch size")
    if cache.head_input.shape[1] != arch.hidden_dim:
        raise ValueError("cache does not match the given params")

    grads: dict[str, np.ndarray] = {}
    dlogits = ((probs - labels) / n)[:, None]
    grads["head.w"] = dlogits.T @ cache.head_input
    grads["head.b"] = dlogits.sum(axis=0)
    dx = dlogits @ params.tensors["head.w"]

    for i in reversed(range(arch.n_residual_blocks)):
        d_skip = dx
        d_inner = _unit_backward_train(params, f"block{i}.b", dx, cache.units[f"block{i}.b"], grads)
        d_inner = _unit_backward_train(params, f"block{i}.a", d_inner, cache.units[f"block{i}.a"], grads)
        dx = d_inner + d_skip

    _unit_backward_train(params, "stem", dx, cache.units["stem"], grads)
    return grads


def input_gradients(
    params: NetworkParams, batch: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Per-sample gradients of the per-sample BCE loss w.r.t. the input vector.

    Runs in EVAL mode (running statistics, no dropout), so the result is a
    deterministic function of (params, batch, labels).  Returns a (B,
    input_dim) array.
    """
    arch = params.arch
    t = params.tensors
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != arch.input_dim:
        raise ValueError(f"batch must have shape (B, {arch.input_dim}), got {batch.shape}")
    if labels.shape != (batch.shape[0],):
        raise ValueError("labels must be a vector matching the batch")

    unit_h: dict[str, np.ndarray] = {}

    def unit_fwd(prefix: str, x_in: np.ndarray) -> np.ndarray:
        z = x_in @ t[f"{prefix}.fc.w"].T + t[f"{prefix}.fc.b"]
        inv_std = 1.0 / np.sqrt(t[f"{prefix}.bn.running_var"] + arch.bn_eps)
        h = t[f"{prefix}.bn.gamma"] * (z - t[f"{prefix}.bn.running_mean"]) * inv_std
        h = h + t[f"{prefix}.bn.beta"]
        if prefix == "stem":
            h = h + t["stem.shift"]
        unit_h[prefix] = h
        return np.maximum(h, 0.0)

    def unit_bwd(prefix: str, d_out: np.ndarray) -> np.ndarray:
        dh = d_out * (unit_h[prefix] > 0.0)
        inv_std = 1.0 / np.sqrt(t[f"{prefix}.bn.running_var"] + arch.bn_eps)
        dz = dh * t[f"{prefix}.bn.gamma"] * inv_std
        return dz @ t[f"{prefix}.fc.w"]

    x = unit_fwd("stem", batch)
    for i in range(arch.n_residual_blocks):
        inner = unit_fwd(f"block{i}.b", unit_fwd(f"block{i}.a", x))
        x = inner + x

    logits = x @ t["head.w"].T + t["head.b"]
    probs = np.clip(_sigmoid(logits[:, 0]), PROB_CLAMP, 1.0 - PROB_CLAMP)

    # Per-sample losses: no 1/B factor.
    dx = (probs - labels)[:, None] @ t["head.w"]
    for i in reversed(range(arch.n_residual_blocks)):
        d_inner = unit_bwd(f"block{i}.a", unit_bwd(f"block{i}.b", dx))
        dx = d_inner + dx
    return unit_bwd("stem", dx)


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped away from {0, 1}."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


# --------------------------------------------------------------------------
# Checkpoint serialization


def to_checkpoint_dict(params: NetworkParams, subset: Subset) -> dict:
    if params.arch.input_dim != subset.input_dim:
        raise ValueError(
            f"arch input_dim {params.arch.input_dim} does not match subset "
            f"{subset.value} ({subset.input_dim})"
        )
    arch = params.arch
    return {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "input_dim": arch.input_dim,
            "hidden_dim": arch.hidden_dim,
            "n_residual_blocks": arch.n_residual_blocks,
            "dropout_rate": arch.dropout_rate,
            "bn_eps": arch.bn_eps,
            "bn_momentum": arch.bn_momentum,
        },
        "params": {
            name: params.tensors[name].tolist() for name in trainable_names(arch)
        },
        "bn_running": {
            name: params.tensors[name].tolist()
            for name in tensor_shapes(arch)
            if "running_" in name
        },
        "subset": subset.value,
        "normalizer": NORMALIZER_ID,
    }


def from_checkpoint_dict(doc: dict) -> tuple[NetworkParams, Subset]:
    if not isinstance(doc, dict):
        raise ValueError("checkpoint must be a JSON object")
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {version!r}")
    normalizer = doc.get("normalizer")
    if normalizer != NORMALIZER_ID:
        raise ValueError(f"unsupported normalizer: {normalizer!r}")
    try:
        subset = Subset(doc.get("subset"))
    except ValueError:
        raise ValueError(f"unknown subset: {doc.get('subset')!r}") from None
    arch_doc = doc.get("arch")
    if not isinstance(arch_doc, dict):
        raise ValueError("checkpoint is missing the arch object")
    arch = NetworkArch(
        input_dim=int(arch_doc["input_dim"]),
        hidden_dim=int(arch_doc["hidden_dim"]),
        n_residual_blocks=int(arch_doc["n_residual_blocks"]),
        dropout_rate=float(arch_doc["dropout_rate"]),
        bn_eps=float(arch_doc["bn_eps"]),
        bn_momentum=float(arch_doc["bn_momentum"]),
    )
    if arch.input_dim != subset.input_dim:
        raise ValueError(
            f"subset {subset.value} implies input_dim {subset.input_dim}, "
            f"checkpoint says {arch.input_dim}"
        )
    shapes = tensor_shapes(arch)
    tensors: dict[str, np.ndarray] = {}
    stored = dict(doc.get("params", {}))
    stored.update(doc.get("bn_running", {}))
    for name, shape in shapes.items():
        if name not in stored:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        arr = np.asarray(stored[name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        tensors[name] = arr
    extra = set(stored) - set(shapes)
    if extra:
        raise ValueError(f"checkpoint has unexpected tensors: {sorted(extra)}")
    for name in shapes:
        if name.endswith("running_var") and np.any(tensors[name] < 0.0):
            raise ValueError(f"tensor {name!r} has negative variance components")
    return NetworkParams(arch, tensors), subset


def save_checkpoint(params: NetworkParams, subset: Subset, path: str | Path) -> None:
    doc = to_checkpoint_dict(params, subset)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[NetworkParams, Subset]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return from_checkpoint_dict(doc)
