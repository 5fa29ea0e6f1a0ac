"""Small feed-forward voltage regressor with from-scratch backprop.

One tanh hidden layer, identity output, mean-squared-error loss, plain
mini-batch gradient descent.  Input standardization (per-feature mean and
scale) is learned from the training set and stored inside the model so a
trained regressor is a self-contained feature -> voltage map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

N_INPUTS = 4


class DivergenceError(RuntimeError):
    """Training loss went non-finite; try a smaller learning rate."""


@dataclass
class MLPParams:
    w1: np.ndarray    # (hidden, 4)
    b1: np.ndarray    # (hidden,)
    w2: np.ndarray    # (hidden,)
    b2: float
    mean: np.ndarray  # (4,) feature offsets
    scale: np.ndarray # (4,) feature divisors, strictly positive

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "MLPParams":
        return MLPParams(self.w1.copy(), self.b1.copy(), self.w2.copy(),
                         float(self.b2), self.mean.copy(), self.scale.copy())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 32
    rng_seed: int = 0
    init_scale: float = 0.2
    n_hidden: int = 30

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1 or self.n_hidden < 1:
            raise ValueError("epochs, batch_size and n_hidden must all be >= 1")


def forward(params: MLPParams, features: Sequence[float]) -> float:
    """Raw (unclamped) voltage estimate for one feature vector."""
    x = np.asarray(features, dtype=float)
    z = (x - params.mean) / params.scale
    h = np.tanh(params.w1 @ z + params.b1)
    return float(params.w2 @ h + params.b2)


def forward_batch(params: MLPParams, features: np.ndarray) -> np.ndarray:
    z = (np.asarray(features, dtype=float) - params.mean) / params.scale
    h = np.tanh(z @ params.w1.T + params.b1)
    return h @ params.w2 + params.b2


def loss_and_gradient(params: MLPParams, features: np.ndarray,
                      targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over a batch and its exact reverse-mode gradient."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or x.shape[1] != N_INPUTS or len(x) == 0:
        raise ValueError(f"expected a non-empty (B, {N_INPUTS}) batch, got {x.shape}")
    b = len(x)
    z = (x - params.mean) / params.scale
    pre = z @ params.w1.T + params.b1
    h = np.tanh(pre)
    pred = h @ params.w2 + params.b2
    err = pred - y
    loss = float(err @ err) / b

    dpred = (2.0 / b) * err
    grad_w2 = h.T @ dpred
    grad_b2 = float(dpred.sum())
    dpre = np.outer(dpred, params.w2) * (1.0 - h * h)
    grad_w1 = dpre.T @ z
    grad_b1 = dpre.sum(axis=0)
    return loss, {"w1": grad_w1, "b1": grad_b1, "w2": grad_w2,
                  "b2": np.array(grad_b2)}


def train(features: np.ndarray, targets: np.ndarray,
          cfg: TrainConfig = TrainConfig()) -> tuple[MLPParams, list[float]]:
    """Fit the regressor; returns the model and the per-epoch full-set MSE.

    Deterministic per rng_seed (weight init and batch shuffling both draw
    from one seeded generator).  The input arrays are never mutated.
    """
    x = np.array(features, dtype=float)
    y = np.array(targets, dtype=float)
    if x.ndim != 2 or x.shape[1] != N_INPUTS:
        raise ValueError(f"expected (M, {N_INPUTS}) features, got {x.shape}")
    m = len(x)
    if m < cfg.batch_size:
        raise ValueError(f"dataset of {m} rows is smaller than batch_size={cfg.batch_size}")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)

    rng = np.random.default_rng(cfg.rng_seed)
    params = MLPParams(
        w1=rng.uniform(-cfg.init_scale, cfg.init_scale, (cfg.n_hidden, N_INPUTS)),
        b1=rng.uniform(-cfg.init_scale, cfg.init_scale, cfg.n_hidden),
        w2=rng.uniform(-cfg.init_scale, cfg.init_scale, cfg.n_hidden),
        b2=float(rng.uniform(-cfg.init_scale, cfg.init_scale)),
        mean=mean,
        scale=scale,
    )

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grad = loss_and_gradient(params, x[idx], y[idx])
            params.w1 -= cfg.learning_rate * grad["w1"]
            params.b1 -= cfg.learning_rate * grad["b1"]
            params.w2 -= cfg.learning_rate * grad["w2"]
            params.b2 -= cfg.learning_rate * float(grad["b2"])
        loss, _ = loss_and_gradient(params, x, y)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"loss became non-finite at epoch {epoch}; reduce learning_rate")
        history.append(loss)
    return params, history


def distill_config(n_rows: int, cfg: TrainConfig) -> TrainConfig:
    """Shrink the batch to the dataset when distilling small tables."""
    return replace(cfg, batch_size=min(cfg.batch_size, n_rows))
