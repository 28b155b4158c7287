"""Annealing schedules for the proxy-gradient scale and the learning rate.

All scales are evaluated in float64 and lie in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

KINDS = ("fixed", "linear", "cosine", "sigmoid", "sigmoid_cosine", "exponential")


def _check_range(i, T):
    if T < 1:
        raise ValueError(f"total epochs must be >= 1, got {T}")
    if i < 0 or i > T:
        raise ValueError(f"epoch index {i} outside [0, {T}]")


def _logistic(x):
    # split form keeps exp() from overflowing for large |x|
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def cosine_decay(i, T):
    _check_range(i, T)
    return (1.0 + math.cos(math.pi * i / T)) / 2.0


def sigmoid_decay(i, T, L0=-6.0, L1=6.0):
    _check_range(i, T)
    if not L0 < L1:
        raise ValueError(f"need L0 < L1, got L0={L0}, L1={L1}")
    return 1.0 - _logistic(L0 + (L1 - L0) * i / T)


def sigmoid_cosine_decay(i, T, L0=-6.0, L1=6.0):
    return max(sigmoid_decay(i, T, L0, L1), cosine_decay(i, T))


def linear_decay(i, T):
    _check_range(i, T)
    return 1.0 - i / T


def exponential_decay(t, beta=1.0):
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if t < 0:
        raise ValueError(f"epoch index must be >= 0, got {t}")
    return math.exp(-beta * t)


@dataclass(frozen=True)
class AnnealSchedule:
    """Which decay rule scales alpha, plus the rule's constants.

    ``kind`` is one of ``fixed``, ``linear``, ``cosine``, ``sigmoid``,
    ``sigmoid_cosine`` or ``exponential``.
    """

    kind: str = "sigmoid_cosine"
    L0: float = -6.0
    L1: float = 6.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not self.L0 < self.L1:
            raise ValueError(f"need L0 < L1, got L0={self.L0}, L1={self.L1}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def scale(self, i, T):
        if self.kind == "fixed":
            _check_range(i, T)
            return 1.0
        if self.kind == "linear":
            return linear_decay(i, T)
        if self.kind == "cosine":
            return cosine_decay(i, T)
        if self.kind == "sigmoid":
            return sigmoid_decay(i, T, self.L0, self.L1)
        if self.kind == "sigmoid_cosine":
            return sigmoid_cosine_decay(i, T, self.L0, self.L1)
        _check_range(i, T)
        return exponential_decay(i, self.beta)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def alpha_at_epoch(alpha0, schedule: AnnealSchedule, e, T, zero_from: Optional[int] = None):
    """Alpha used for every iteration of epoch ``e``.

    Returns exactly ``0.0`` once ``e >= zero_from``.
    """
    if not 0.0 <= alpha0 <= 1.0:
        raise ValueError(f"alpha0 must lie in [0, 1], got {alpha0}")
    _check_range(e, T)
    if zero_from is not None and e >= zero_from:
        return 0.0
    return float(alpha0 * schedule.scale(e, T))


@dataclass(frozen=True)
class LrSchedule:
    max_lr: float = 0.256
    warmup_epochs: int = 5
    total_epochs: int = 100

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError(f"max_lr must be positive, got {self.max_lr}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be >= 1, got {self.total_epochs}")


def lr_at_epoch(sched: LrSchedule, e):
    """Learning rate at (possibly fractional) epoch ``e``.

    Linear ramp ``max_lr * e / warmup`` up to the end of warmup, then a
    cosine decay reaching 0 at ``total_epochs``.
    """
    T, w = sched.total_epochs, min(sched.warmup_epochs, sched.total_epochs)
    if e < 0 or e > T:
        raise ValueError(f"epoch {e} outside [0, {T}]")
    if e < w:
        return sched.max_lr * e / w
    if T == w:
        return sched.max_lr
    return sched.max_lr * (1.0 + math.cos(math.pi * (e - w) / (T - w))) / 2.0
