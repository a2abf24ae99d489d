"""Adam training loop and gradient-based keypoint saliency.

Training follows a fixed schedule: 20 epochs of mini-batches of 64 with
Adam at learning rate 1e-4, binary cross-entropy loss, and no data
augmentation on the poses.  Runs are fully deterministic in the config
seed: the same data and config always produce bit-identical checkpoints.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .metrics import ScoredInstance, average_precision
from .net import (
    Mode,
    NetworkArch,
    NetworkParams,
    backward,
    bce_loss,
    forward,
    init_network,
    input_gradients,
)
from .pose import Subset

DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS = 20


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    subset: Subset = Subset.FULL

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


@dataclass
class AdamState:
    """First/second-moment accumulators per trainable tensor plus step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t) for name, t in params.trainable_items()},
            v={name: np.zeros_like(t) for name, t in params.trainable_items()},
        )


@dataclass(frozen=True)
class TrainSample:
    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y}")


@dataclass
class HistoryEntry:
    epoch: int
    train_loss: float
    val_ap: float | None
    elapsed_ms: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_ap": self.val_ap,
            "elapsed_ms": self.elapsed_ms,
        }


def write_history(history: Sequence[HistoryEntry], path: str | Path) -> None:
    """One JSON object per epoch, as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry.to_dict()))
            fh.write("\n")


def adam_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_tensors = dict(params.tensors)
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.trainable_items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_tensors[name] = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new_m[name] = m
        new_v[name] = v
    return NetworkParams(params.arch, new_tensors), AdamState(m=new_m, v=new_v, t=t)


def _stack(samples: Sequence[TrainSample], input_dim: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([s.x for s in samples])
    ys = np.array([s.y for s in samples], dtype=np.float64)
    if xs.shape[1] != input_dim:
        raise ValueError(f"samples have width {xs.shape[1]}, expected {input_dim}")
    return xs, ys


def _validation_ap(params: NetworkParams, x_val, y_val) -> float | None:
    if x_val is None or len(np.unique(y_val)) < 2:
        return None
    probs, _ = forward(params, x_val, Mode.EVAL)
    items = [ScoredInstance(score=float(p), label=int(y)) for p, y in zip(probs, y_val)]
    return average_precision(items)


def train(
    dataset: Sequence[TrainSample],
    val: Sequence[TrainSample],
    cfg: TrainConfig,
    arch: NetworkArch | None = None,
    epoch_callback: Callable[[int, NetworkParams], None] | None = None,
) -> tuple[NetworkParams, list[HistoryEntry]]:
    """Train the classifier and return (final-epoch params, per-epoch history).

    Each epoch reshuffles with a seeded generator and walks mini-batches of
    ``cfg.batch_size``; a short final batch is kept if it still has at least
    two rows (batch normalization needs them) and dropped otherwise.  The
    checkpoint is simply the final epoch; validation AP is recorded per
    epoch for visibility.  ``epoch_callback`` (if given) observes the params
    after every epoch, e.g. to log per-epoch saliency.
    """
    if not dataset:
        raise ValueError("training set is empty")
    labels = {s.y for s in dataset}
    if labels != {0, 1}:
        raise ValueError("training set must contain both classes")
    if arch is None:
        arch = NetworkArch(input_dim=cfg.subset.input_dim)

    x_train, y_train = _stack(dataset, arch.input_dim)
    x_val, y_val = (None, None)
    if val:
        x_val, y_val = _stack(val, arch.input_dim)

    params = init_network(arch, cfg.seed)
    state = AdamState.zeros(params)
    base_seed = cfg.seed & 0xFFFF_FFFF_FFFF_FFFF
    shuffle_rng = np.random.default_rng([base_seed, 1])
    dropout_rng = np.random.default_rng([base_seed, 2])

    n = len(dataset)
    history: list[HistoryEntry] = []
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        n_seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            xb, yb = x_train[idx], y_train[idx]
            probs, cache = forward(params, xb, Mode.TRAIN, dropout_rng)
            loss_sum += bce_loss(probs, yb) * len(idx)
            n_seen += len(idx)
            grads = backward(params, cache, probs, yb)
            params, state = adam_step(params, grads, state, cfg)

        train_loss = loss_sum / n_seen
        if not np.isfinite(train_loss):
            raise ArithmeticError(f"training loss diverged at epoch {epoch}")
        history.append(
            HistoryEntry(
                epoch=epoch,
                train_loss=train_loss,
                val_ap=_validation_ap(params, x_val, y_val),
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
            )
        )
        if epoch_callback is not None:
            epoch_callback(epoch, params)
    return params, history


# --------------------------------------------------------------------------
# Keypoint saliency


@dataclass
class SaliencyReport:
    """Mean absolute loss gradient per keypoint, over a dataset.

    ``impact[k]`` adds the absolute per-sample loss gradients of keypoint
    k's three input channels (x, y, confidence), averaged over samples.
    ``impact_normalized`` rescales so the strongest keypoint is 1.
    """

    keypoint_names: tuple[str, ...]
    impact: np.ndarray
    impact_normalized: np.ndarray

    def to_csv(self) -> str:
        lines = ["keypoint_name,impact,impact_normalized"]
        for name, raw, norm in zip(self.keypoint_names, self.impact, self.impact_normalized):
            lines.append(f"{name},{float(raw)!r},{float(norm)!r}")
        return "\n".join(lines) + "\n"


def saliency(
    params: NetworkParams, dataset: Sequence[TrainSample], subset: Subset
) -> SaliencyReport:
    """Gradient saliency of each keypoint on a dataset.

    Gradients are taken with respect to the network input in EVAL mode
    (running batch-norm statistics), so the result is deterministic and can
    be computed for any dataset on demand.
    """
    if not dataset:
        raise ValueError("saliency needs a non-empty dataset")
    x, y = _stack(dataset, params.arch.input_dim)
    if params.arch.input_dim != subset.input_dim:
        raise ValueError(
            f"checkpoint input_dim {params.arch.input_dim} does not match "
            f"subset {subset.value} ({subset.input_dim})"
        )
    grads = input_gradients(params, x, y)
    per_keypoint = np.abs(grads).reshape(len(dataset), subset.n_keypoints, 3).sum(axis=2)
    impact = per_keypoint.mean(axis=0)
    peak = float(impact.max())
    normalized = impact / peak if peak > 0.0 else np.zeros_like(impact)
    return SaliencyReport(
        keypoint_names=subset.keypoint_names,
        impact=impact,
        impact_normalized=normalized,
    )
