"""Soft-threshold pruning with an annealed proxy gradient.

Forward, per entry::

    w_hat = sign(w) * max(|w| - sigmoid(s), 0)

Backward, per entry of the upstream gradient ``G`` (gradient w.r.t. ``w_hat``)::

    dL/dw = G * (1 if active else alpha)           # inside the backward set
    dL/dw = 0                                      # outside the backward set
    dL/ds = -sigmoid'(s) * sum(G * sign(w) * gate)

With ``alpha = 0`` masked weights get no gradient at all; that is the plain
ReLU straight-through rule.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

ALL_WEIGHTS = "all"
TOPK_FRACTION = "topk"


def sigmoid(s):
    s = float(s)
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    z = math.exp(s)
    return z / (1.0 + z)


def sigmoid_grad(s):
    g = sigmoid(s)
    return g * (1.0 - g)


@dataclass
class PruneForwardResult:
    sparse_weights: np.ndarray
    active_mask: np.ndarray
    threshold: float
    active_fraction: float


@dataclass(frozen=True)
class BackwardSupersetSpec:
    """Which weights receive a weight gradient.

    ``mode="all"`` sends (annealed) gradient to every entry. ``mode="topk"``
    restricts it to the ``keep_fraction`` largest-magnitude entries, always
    widened to cover the active set.
    """

    mode: str = ALL_WEIGHTS
    keep_fraction: float = 1.0

    def __post_init__(self):
        if self.mode not in (ALL_WEIGHTS, TOPK_FRACTION):
            raise ValueError(f"unknown superset mode {self.mode!r}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _check_shapes(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {shape}")


def prune_forward(weights, s) -> PruneForwardResult:
    weights = np.asarray(weights)
    if not np.all(np.isfinite(weights)):
        raise FloatingPointError("weights contain non-finite entries")
    if not math.isfinite(s):
        raise FloatingPointError(f"threshold parameter is not finite: {s}")
    threshold = sigmoid(s)
    shrunk = np.abs(weights) - weights.dtype.type(threshold)
    # |w| == threshold counts as masked
    mask = shrunk > 0
    sparse = np.where(mask, np.sign(weights) * shrunk, 0).astype(weights.dtype, copy=False)
    n = weights.size
    frac = float(np.count_nonzero(mask)) / n if n else 0.0
    return PruneForwardResult(sparse, mask, threshold, frac)


def topk_superset(weights, keep_fraction):
    """Flat indices of the ceil(keep_fraction * n) largest |w|, ascending.

    Ties at the cut are resolved in favour of the lower index.
    """
    flat = np.abs(np.asarray(weights)).ravel()
    n = flat.size
    if n == 0:
        raise ValueError("topk_superset on an empty tensor")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    # the 1e-9 keeps (1/3) * 3 from rounding up to 2
    k = min(n, math.ceil(keep_fraction * n - 1e-9))
    k = max(k, 1)
    if k == n:
        return np.arange(n)
    kth = np.partition(flat, n - k)[n - k]
    above = np.flatnonzero(flat > kth)
    ties = np.flatnonzero(flat == kth)[: k - above.size]
    return np.sort(np.concatenate([above, ties]))


def backward_set(result: PruneForwardResult, superset: BackwardSupersetSpec, weights):
    """Boolean mask of entries that receive a weight gradient (None = all)."""
    if superset.mode == ALL_WEIGHTS:
        return None
    sel = np.zeros(result.active_mask.size, dtype=bool)
    sel[topk_superset(weights, superset.keep_fraction)] = True
    sel = sel.reshape(result.active_mask.shape)
    # the active set always belongs to the backward set
    sel |= result.active_mask
    return sel


def _gate(result, alpha, superset, weights):
    gate = np.where(result.active_mask, 1.0, float(alpha))
    sel = backward_set(result, superset, weights)
    if sel is not None:
        gate = np.where(sel, gate, 0.0)
    return gate


def prune_backward_weights(upstream, result: PruneForwardResult, alpha,
                           superset: BackwardSupersetSpec = BackwardSupersetSpec(),
                           weights=None):
    upstream = np.asarray(upstream)
    _check_shapes(upstream, result.active_mask)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if superset.mode == TOPK_FRACTION and weights is None:
        raise ValueError("topk superset needs the dense weights")
    if superset.mode == ALL_WEIGHTS:
        # multiply in the upstream dtype so masked entries are exactly alpha * G
        scale = upstream.dtype.type(alpha) if upstream.dtype.kind == "f" else alpha
        return np.where(result.active_mask, upstream, upstream * scale)
    gate = _gate(result, alpha, superset, weights)
    return (upstream.astype(np.float64) * gate).astype(upstream.dtype, copy=False)


def prune_backward_threshold(upstream, result: PruneForwardResult, alpha, s, weights,
                             superset: BackwardSupersetSpec = BackwardSupersetSpec()):
    upstream = np.asarray(upstream)
    weights = np.asarray(weights)
    _check_shapes(upstream, result.active_mask, weights)
    gate = _gate(result, alpha, superset, weights)
    # fixed-order float64 reduction
    inner = float(np.sum(upstream.astype(np.float64) * np.sign(weights).astype(np.float64) * gate))
    return -sigmoid_grad(s) * inner
