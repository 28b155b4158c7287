"""Independent checking tools.

* ``finite_diff_grad``: central differences in float64.
* ``simulate_case`` / ``simulate_descent``: the one-dimensional model
  ``L(v) = 0.5 * (h(v) - v_star)**2`` where ``h`` is ReLU forward with an
  ``alpha``-scaled proxy slope for ``v <= 0``.
* ``brute_force_train_flops``: loop-nest MAC counter over explicit masks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

# branch labels for the 1-D case analysis
AT_OPTIMUM = 1          # h(v) == v_star
ACTIVE_POS_TARGET = 2   # v > 0,  v_star > 0
ACTIVE_NEG_TARGET = 3   # v > 0,  v_star <= 0
MASKED_POS_TARGET = 4   # v <= 0, v_star > 0
MASKED_NEG_TARGET = 5   # v <= 0, v_star <= 0


def finite_diff_grad(f: Callable, x, h=1e-6):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    grad = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x[0] if scalar else x))
        x[idx] = orig - h
        fm = float(f(x[0] if scalar else x))
        x[idx] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value near index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return float(grad[0]) if scalar else grad


def richardson_grad(f, x, h=1e-4):
    """Richardson-extrapolated central difference from steps h and h/2."""
    g1 = finite_diff_grad(f, x, h)
    g2 = finite_diff_grad(f, x, h / 2)
    return (4.0 * np.asarray(g2) - np.asarray(g1)) / 3.0


@dataclass
class ConvergenceCase:
    v: float
    v_star: float
    alpha: float
    branch: int
    gradient: float


def h_forward(v):
    return v if v > 0 else 0.0


def simulate_case(v, v_star, alpha) -> ConvergenceCase:
    # the optimum check goes first; it overlaps the other branches only on a measure-zero set
    if h_forward(v) == v_star:
        return ConvergenceCase(v, v_star, alpha, AT_OPTIMUM, 0.0)
    if v > 0:
        if v_star > 0:
            return ConvergenceCase(v, v_star, alpha, ACTIVE_POS_TARGET, v - v_star)
        return ConvergenceCase(v, v_star, alpha, ACTIVE_NEG_TARGET, v + abs(v_star))
    if v_star > 0:
        return ConvergenceCase(v, v_star, alpha, MASKED_POS_TARGET, alpha * (-v_star))
    return ConvergenceCase(v, v_star, alpha, MASKED_NEG_TARGET, alpha * abs(v_star))


@dataclass
class Trajectory:
    v0: float
    v_star: float
    alpha: float
    lr: float
    values: List[float]
    transitions: List[int]

    @property
    def first_active_step(self):
        """First step index with v > 0, or None if it never happens."""
        for i, v in enumerate(self.values):
            if v > 0:
                return i
        return None


def simulate_descent(v0, v_star, alpha, lr, steps):
    """Gradient descent on the 1-D loss.

    ``alpha`` is a constant or a callable ``step -> alpha``. ``values[0]`` is
    ``v0``; ``transitions`` lists steps where v crossed between masked and active.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    alpha_at = alpha if callable(alpha) else (lambda _t: alpha)
    v = float(v0)
    values, transitions = [v], []
    for t in range(steps):
        g = simulate_case(v, v_star, alpha_at(t)).gradient
        nv = v - lr * g
        if (nv > 0) != (v > 0):
            transitions.append(t + 1)
        v = nv
        values.append(v)
    a0 = alpha if not callable(alpha) else float("nan")
    return Trajectory(float(v0), float(v_star), a0, lr, values, transitions)


def brute_force_layer_macs(weight_mask, out_hw=(1, 1)):
    """Count MACs of one pass over a layer by walking every output position.

    Affine layers use ``out_hw=(1, 1)``. Each masked-in weight entry costs
    one MAC per output position.
    """
    weight_mask = np.asarray(weight_mask, dtype=bool)
    flat = weight_mask.ravel().tolist()
    count = 0
    for _oy in range(out_hw[0]):
        for _ox in range(out_hw[1]):
            for keep in flat:
                if keep:
                    count += 1
    return count


def brute_force_train_flops(layers):
    """Per-sample training MACs from explicit masks.

    ``layers`` is a list of dicts with ``forward_mask`` (non-zero sparse
    weights), ``weight_grad_mask`` (entries whose weight gradient is
    computed) and ``out_hw``. Forward and input-gradient passes use the
    forward mask; the weight-gradient pass uses its own mask.
    """
    total = 0
    for layer in layers:
        hw = layer.get("out_hw", (1, 1))
        total += brute_force_layer_macs(layer["forward_mask"], hw)      # forward
        total += brute_force_layer_macs(layer["forward_mask"], hw)      # input gradient
        total += brute_force_layer_macs(layer["weight_grad_mask"], hw)  # weight gradient
    return total
