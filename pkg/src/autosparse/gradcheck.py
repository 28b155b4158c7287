"""Randomised check of the pruning backward rules against finite differences.

For the linear probe loss ``L(w, s) = sum(G * prune(w, s))``:

* active weight entries must match a central difference in ``w``;
* the threshold gradient restricted to active entries (the ``alpha = 0``
  value) must match a central difference in ``s``;
* masked weight entries must equal ``alpha * G`` bit for bit.

Weights are drawn at least ``margin`` away from the threshold so that the
difference stencil never straddles the kink.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .oracle import finite_diff_grad
from .prune import prune_backward_threshold, prune_backward_weights, prune_forward, sigmoid

REL_TOL = 1e-4
STEP = 1e-4
MARGIN = 1e-3
# denominator floor for the relative error, far below any sampled |G|
REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    instances: int
    checked: int = 0
    worst_rel_err: float = 0.0
    worst_where: Optional[Tuple] = None
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)


def sample_instance(rng, shape, alpha=None):
    s = float(rng.uniform(-4.0, 1.0))
    thr = sigmoid(s)
    n = int(np.prod(shape))
    above = rng.random(n) < 0.6
    # sigmoid(-4) > MARGIN, so the masked band is never empty
    mag = np.where(above, thr + rng.uniform(MARGIN, 1.0, n), rng.uniform(0.0, thr - MARGIN, n))
    w = (np.where(rng.random(n) < 0.5, -1.0, 1.0) * mag).reshape(shape)
    g = rng.normal(size=shape)
    a = float(rng.uniform(0.0, 1.0)) if alpha is None else float(alpha)
    return w, s, g, a


def check_instance(w, s, g, alpha, report: GradCheckReport, tag=(), mutate=None):
    res = prune_forward(w, s)
    gw = prune_backward_weights(g, res, alpha)
    gs_active = prune_backward_threshold(g, res, 0.0, s, w)
    if mutate == "sign":
        gw = -gw
        gs_active = -gs_active

    # masked entries: exact proxy
    masked = ~res.active_mask
    expected = g[masked] * alpha
    if not np.array_equal(gw[masked], expected):
        bad = np.flatnonzero(gw[masked] != expected)[0]
        report.failures.append(f"instance {tag}: masked entry {bad} is not alpha * upstream")

    def loss_w(flat_idx):
        def f(x):
            ww = w.copy().ravel()
            ww[flat_idx] = x
            return float(np.sum(g * prune_forward(ww.reshape(w.shape), s).sparse_weights))
        return f

    for idx in np.flatnonzero(res.active_mask):
        num = finite_diff_grad(loss_w(idx), w.ravel()[idx], STEP)
        err = _rel(float(gw.ravel()[idx]), num)
        report.checked += 1
        if err > report.worst_rel_err:
            report.worst_rel_err, report.worst_where = err, (tag, "w", int(idx))
        if err > REL_TOL:
            report.failures.append(f"instance {tag}: weight {int(idx)} rel err {err:.3e}")

    num_s = finite_diff_grad(lambda x: float(np.sum(g * prune_forward(w, float(x)).sparse_weights)),
                             s, STEP)
    err = _rel(gs_active, num_s)
    report.checked += 1
    if err > report.worst_rel_err:
        report.worst_rel_err, report.worst_where = err, (tag, "s", None)
    if err > REL_TOL:
        report.failures.append(f"instance {tag}: threshold rel err {err:.3e}")


def run_gradcheck(seed=0, sizes=((4, 3), (5, 5), (8,)), instances=1000, alpha=None, mutate=None):
    """Check ``instances`` random tensors, cycling through ``sizes``."""
    rng = np.random.default_rng(seed)
    report = GradCheckReport(instances)
    for i in range(instances):
        shape = tuple(sizes[i % len(sizes)])
        w, s, g, a = sample_instance(rng, shape, alpha)
        check_instance(w, s, g, a, report, tag=i, mutate=mutate)
    return report
