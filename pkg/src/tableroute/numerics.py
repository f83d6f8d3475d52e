"""Math kernel for the gate: softmax, KL divergence, optimizer, LR schedule.

All functions compute in float64. They are pure except `adamw_step`, which
updates the moment buffers of the state it is handed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Floor on predicted probabilities inside the KL; keeps the log finite when
# the gate saturates to a near-one-hot distribution.
KL_FLOOR = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax over the last axis, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("softmax: logits must be finite")
    if not (np.isfinite(temperature) and temperature > 0):
        raise InvalidArgumentError(f"softmax: temperature must be > 0, got {temperature}")
    scaled = z / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def kl_div(target, predicted) -> float:
    """KL(target || predicted) with the 0*log(0) = 0 convention.

    Predicted entries are floored at KL_FLOOR before the log. Result is
    clamped at 0 to absorb float round-off on near-identical inputs.
    """
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if np.isnan(t).any() or np.isnan(p).any():
        raise InvalidArgumentError("kl_div: NaN input")
    if t.shape != p.shape:
        raise InvalidArgumentError(f"kl_div: shape mismatch {t.shape} vs {p.shape}")
    p = np.maximum(p, KL_FLOOR)
    mask = t > 0
    val = float(np.sum(t[mask] * np.log(t[mask] / p[mask])))
    return max(val, 0.0)


@dataclass
class OptimizerState:
    """Moments and constants for decoupled-weight-decay Adam."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    weight_decay: float = 0.0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def for_size(cls, n_params: int, weight_decay: float = 0.0, **kwargs) -> "OptimizerState":
        return cls(
            first_moment=np.zeros(n_params, dtype=np.float64),
            second_moment=np.zeros(n_params, dtype=np.float64),
            weight_decay=weight_decay,
            **kwargs,
        )


def adamw_step(params, grads, state: OptimizerState, lr: float) -> np.ndarray:
    """One Adam step with decoupled weight decay; returns the updated params.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

    Moments are bias-corrected and updated in place; `state.step_count` is
    incremented.
    """
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape or p.shape != state.first_moment.shape:
        raise InvalidArgumentError(
            f"adamw_step: shape mismatch params {p.shape}, grads {g.shape}, "
            f"moments {state.first_moment.shape}"
        )
    if not (np.isfinite(lr) and lr >= 0):
        raise InvalidArgumentError(f"adamw_step: lr must be >= 0, got {lr}")

    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    return p - lr * (m_hat / (np.sqrt(v_hat) + state.epsilon) + state.weight_decay * p)


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 1e-4
    warmup_ratio: float = 0.05
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise InvalidArgumentError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.total_steps <= 0:
            raise InvalidArgumentError(f"total_steps must be > 0, got {self.total_steps}")
        if self.lr_max < 0:
            raise InvalidArgumentError(f"lr_max must be >= 0, got {self.lr_max}")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_ratio * self.total_steps))


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate at `step`: linear ramp from zero, then cosine decay to zero."""
    if not 0 <= step <= cfg.total_steps:
        raise InvalidArgumentError(
            f"step {step} outside schedule range [0, {cfg.total_steps}]"
        )
    w = cfg.warmup_steps
    if w > 0 and step < w:
        return cfg.lr_max * step / w
    span = cfg.total_steps - w
    if span <= 0:
        return 0.0
    t = (step - w) / span
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * t))


def clip_grad_norm(grads, max_norm: float) -> tuple[np.ndarray, float]:
    """Scale `grads` so the global L2 norm is at most `max_norm`.

    Returns (possibly rescaled gradients, observed pre-clip norm).
    """
    if not (np.isfinite(max_norm) and max_norm > 0):
        raise InvalidArgumentError(f"max_norm must be > 0, got {max_norm}")
    g = np.asarray(grads, dtype=np.float64)
    norm = float(np.sqrt(np.sum(g * g)))
    if norm > max_norm:
        g = g * (max_norm / norm)
    return g, norm
