"""
Optimizers and the planted low-rank recovery task.

A planted task hides a known rank-r* perturbation ``delta_star`` on top of a
random base weight. Training an adapter against targets
``(w0 + delta_star) @ X`` has an exact zero-loss solution whenever the
adapter rank reaches r*, so convergence can be measured directly as the
relative distance between the learned update and ``delta_star``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .adapters import Adapter, delta_weight
from .errors import ParameterError, ShapeError, TrainingError
from .grad import backward, loss_and_upstream
from .linalg import derive_seed, frobenius_norm, gaussian_matrix

__all__ = [
    "PlantedTask",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "batch_inputs",
    "make_planted_task",
    "recovery_error",
    "sgd_step",
    "train_adapter",
]


@dataclass(frozen=True)
class TrainConfig:
    optimizer: Literal["sgd", "adam"] = "adam"
    lr: float = 1e-2
    steps: int = 2000
    batch: int = 16
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ParameterError(f"batch must be >= 1, got {self.batch}")


@dataclass(frozen=True, eq=False)
class PlantedTask:
    w0: np.ndarray
    delta_star: np.ndarray
    rank: int
    data_seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.w0.shape


@dataclass
class TrainReport:
    losses: np.ndarray
    recovery_error: float
    wall_seconds: float
    steps: int = field(init=False)

    def __post_init__(self):
        self.steps = len(self.losses)

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def make_planted_task(p: int, q: int, r_star: int, magnitude: float = 10.0, seed: int = 0) -> PlantedTask:
    """Gaussian base weight plus ``delta_star = P @ Q.T`` of rank ``r_star``,
    rescaled so ``||delta_star||_F = magnitude * ||w0||_F``."""
    if not 1 <= r_star <= min(p, q):
        raise ParameterError(f"r_star={r_star} outside [1, {min(p, q)}]")
    if not magnitude >= 0:
        raise ParameterError(f"magnitude must be >= 0, got {magnitude}")
    w0 = gaussian_matrix(p, q, 1.0, derive_seed(seed, 0))
    if magnitude == 0:
        delta = np.zeros((p, q))
    else:
        P = gaussian_matrix(p, r_star, 1.0, derive_seed(seed, 1))
        Q = gaussian_matrix(q, r_star, 1.0, derive_seed(seed, 2))
        delta = P @ Q.T
        delta *= magnitude * frobenius_norm(w0) / frobenius_norm(delta)
    return PlantedTask(w0, delta, r_star, seed)


def batch_inputs(task: PlantedTask, cfg: TrainConfig, step: int) -> np.ndarray:
    """The Gaussian input batch for ``step``, regenerated from seeds on demand."""
    return gaussian_matrix(task.shape[1], cfg.batch, 1.0, derive_seed(task.data_seed, cfg.seed, step))


def recovery_error(task: PlantedTask, adapter: Adapter) -> float:
    """``||delta_weight - delta_star||_F / ||delta_star||_F`` (absolute when delta_star = 0)."""
    err = frobenius_norm(delta_weight(adapter) - task.delta_star)
    ref = frobenius_norm(task.delta_star)
    return err / ref if ref > 0 else err


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    out = {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
        out[name] = value - lr * g
    return out


def adam_step(
    params: dict,
    grads: dict,
    state: dict,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    step_index: int = 1,
) -> tuple[dict, dict]:
    """One bias-corrected Adam update.

    ``state`` maps each parameter name to its ``(m, v)`` moment pair; pass an
    empty dict on the first step.
    """
    if step_index < 1:
        raise ParameterError(f"step_index must be >= 1, got {step_index}")
    b1, b2 = betas
    bias1 = 1.0 - b1**step_index
    bias2 = 1.0 - b2**step_index
    new_params, new_state = {}, {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
        m, v = state.get(name, (np.zeros_like(value), np.zeros_like(value)))
        if m.shape != value.shape or v.shape != value.shape:
            raise ShapeError(f"optimizer state for {name} does not match shape {value.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + eps)
        new_params[name] = value - lr * update
        new_state[name] = (m, v)
    return new_params, new_state


def train_adapter(task: PlantedTask, adapter: Adapter, cfg: TrainConfig) -> tuple[Adapter, TrainReport]:
    """Fit the adapter to the planted task; ``task.w0`` is never written."""
    if adapter.shape != task.shape:
        raise ShapeError(f"adapter {adapter.shape} does not match task {task.shape}")
    w0 = task.w0
    target = w0 + task.delta_star
    params = {k: v.copy() for k, v in adapter.params().items()}
    state: dict = {}
    losses = np.empty(cfg.steps)

    start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(cfg.steps):
            x = batch_inputs(task, cfg, step)
            try:
                current = adapter.with_params(params)
            except ParameterError as exc:
                raise TrainingError(f"parameters became non-finite at step {step}", step=step) from exc
            loss, g = loss_and_upstream(w0, current, x, target @ x)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became non-finite at step {step}", step=step)
            losses[step] = loss
            grads = backward(current, g)
            if cfg.optimizer == "sgd":
                params = sgd_step(params, grads, cfg.lr)
            else:
                params, state = adam_step(
                    params, grads, state, cfg.lr,
                    (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, step + 1,
                )
    elapsed = time.perf_counter() - start

    trained = adapter.with_params(params)
    return trained, TrainReport(losses, recovery_error(task, trained), elapsed)
