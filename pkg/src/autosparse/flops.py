"""Training and inference cost model in multiply-accumulates (MACs) per sample.

Per layer, ``f_D`` is the dense MAC count of one pass, ``f_S`` the count
with the current forward mask, and ``f_B`` the count for the weights whose
gradient is computed. One training step costs a forward pass, an input
gradient pass and a weight gradient pass:

==========================  ===================================
alpha == 0, all weights     ``3 * sum(f_S)``
alpha != 0, all weights     ``2 * sum(f_S) + sum(f_D)``
alpha != 0, top-k set       ``2 * sum(f_S) + sum(f_B)``
alpha == 0, top-k set       ``2 * sum(f_S) + sum(max(f_B, f_S))``
==========================  ===================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .prune import ALL_WEIGHTS, TOPK_FRACTION, BackwardSupersetSpec, backward_set, prune_forward


class FlopsContractError(ValueError):
    pass


def layer_dense_flops(layer):
    """Dense MACs per sample for a ``Dense`` or ``Conv2D`` layer."""
    return int(layer.dense_flops())


@dataclass
class LayerFlops:
    name: str
    dense: int
    sparse: int
    backward: Optional[int] = None


@dataclass
class FlopsLedger:
    layers: List[LayerFlops] = field(default_factory=list)

    @property
    def per_layer_dense(self):
        return [l.dense for l in self.layers]

    @property
    def per_layer_sparse(self):
        return [l.sparse for l in self.layers]

    @property
    def dense_infer(self):
        return sum(self.per_layer_dense)

    @property
    def sparse_infer(self):
        return sum(self.per_layer_sparse)

    @property
    def dense_train(self):
        return 3 * self.dense_infer

    def to_dict(self):
        return {
            "layers": [vars(l) for l in self.layers],
            "dense_infer": self.dense_infer,
            "sparse_infer": self.sparse_infer,
            "dense_train": self.dense_train,
        }


def ledger_from_counts(dense: Sequence[int], sparse: Sequence[int], backward=None) -> FlopsLedger:
    backward = backward if backward is not None else [None] * len(dense)
    layers = []
    for i, (d, s, b) in enumerate(zip(dense, sparse, backward)):
        if not 0 <= s <= d:
            raise FlopsContractError(f"layer {i}: sparse count {s} outside [0, {d}]")
        layers.append(LayerFlops(f"layer{i}", int(d), int(s), None if b is None else int(b)))
    return FlopsLedger(layers)


def model_ledger(model, superset: BackwardSupersetSpec = BackwardSupersetSpec()) -> FlopsLedger:
    """Snapshot the model's current masks.

    In top-k mode ``f_B`` counts the backward set actually used, i.e. the
    top-k entries widened to the active set.
    """
    layers = []
    for i, layer in enumerate(model.prunable):
        dense = layer_dense_flops(layer)
        per_weight = dense // layer.n_params
        n_active = layer.n_active()
        b = None
        if superset.mode == TOPK_FRACTION:
            if layer.dense_exempt:
                b = dense
            else:
                res = prune_forward(layer.weights, layer.s)
                sel = backward_set(res, superset, layer.weights)
                b = int(sel.sum()) * per_weight
        layers.append(LayerFlops(f"{layer.kind}{i}", dense, n_active * per_weight, b))
    return FlopsLedger(layers)


def train_sample_flops(ledger: FlopsLedger, alpha_zero: bool,
                       superset: BackwardSupersetSpec = BackwardSupersetSpec()):
    f_s = ledger.per_layer_sparse
    if superset.mode == ALL_WEIGHTS:
        if alpha_zero:
            return 3 * sum(f_s)
        return 2 * sum(f_s) + sum(ledger.per_layer_dense)
    f_b = [l.backward for l in ledger.layers]
    if any(b is None for b in f_b):
        raise FlopsContractError("top-k superset mode needs a backward count for every layer")
    if alpha_zero:
        return 2 * sum(f_s) + sum(max(b, s) for b, s in zip(f_b, f_s))
    return 2 * sum(f_s) + sum(f_b)


@dataclass
class EpochFlops:
    ledger: FlopsLedger
    alpha_zero: bool
    superset: BackwardSupersetSpec = BackwardSupersetSpec()
    samples: int = 1


def run_flops_fraction(epochs: Sequence[EpochFlops], final: Optional[FlopsLedger] = None):
    """(train fraction, inference fraction) of a run relative to dense training.

    Every snapshot is weighted by ``samples``, so per-iteration snapshots
    and per-epoch snapshots both work. The inference fraction comes from
    ``final`` (default: the last snapshot).
    """
    if not epochs:
        if final is None:
            return 1.0, 1.0
        return 1.0, final.sparse_infer / final.dense_infer
    sparse = sum(e.samples * train_sample_flops(e.ledger, e.alpha_zero, e.superset) for e in epochs)
    dense = sum(e.samples * e.ledger.dense_train for e in epochs)
    final = final or epochs[-1].ledger
    return sparse / dense, final.sparse_infer / final.dense_infer
