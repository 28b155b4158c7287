"""Layer stack whose affine and convolution weights pass through the pruner."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .prune import (
    BackwardSupersetSpec,
    PruneForwardResult,
    prune_backward_threshold,
    prune_backward_weights,
    prune_forward,
)

DEFAULT_S0 = -5.0


class ContractError(RuntimeError):
    """Raised when a layer is used out of order (e.g. backward before forward)."""


class PrunableLayer:
    """Base class for layers carrying weights, a bias and one threshold parameter."""

    kind = "base"

    def __init__(self, weights, bias, s=DEFAULT_S0, dense_exempt=False):
        self.weights = weights
        self.bias = bias
        self.s = float(s)
        self.dense_exempt = bool(dense_exempt)
        self.last_forward: Optional[PruneForwardResult] = None
        self.grad_weights = None
        self.grad_bias = None
        self.grad_s = 0.0
        self._x = None

    @property
    def n_params(self):
        return int(self.weights.size)

    def effective_weights(self):
        if self.dense_exempt:
            self.last_forward = None
            return self.weights
        self.last_forward = prune_forward(self.weights, self.s)
        return self.last_forward.sparse_weights

    def active_mask(self):
        """Mask for the current weights and s (no forward required)."""
        if self.dense_exempt:
            return np.ones(self.weights.shape, dtype=bool)
        return prune_forward(self.weights, self.s).active_mask

    def n_active(self):
        if self.dense_exempt:
            return self.n_params
        return int(np.count_nonzero(self.active_mask()))

    def zero_fraction(self):
        return 1.0 - self.n_active() / self.n_params

    def _weight_grads(self, grad_w_hat, alpha, superset):
        if self.dense_exempt:
            self.grad_weights = grad_w_hat
            self.grad_s = 0.0
            return
        res = self.last_forward
        self.grad_weights = prune_backward_weights(grad_w_hat, res, alpha, superset, self.weights)
        self.grad_s = prune_backward_threshold(grad_w_hat, res, alpha, self.s, self.weights, superset)

    def _require_cache(self):
        if self._x is None or (not self.dense_exempt and self.last_forward is None):
            raise ContractError(f"{self.kind} layer: backward called without a cached forward")


class Dense(PrunableLayer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng, dtype=np.float32, **kw):
        bound = math.sqrt(6.0 / in_features)
        w = rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dtype)
        super().__init__(w, np.zeros(out_features, dtype=dtype), **kw)
        self.in_shape = (in_features,)
        self.out_shape = (out_features,)

    def dense_flops(self):
        return self.n_params

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ValueError(f"dense layer expects (N, {self.weights.shape[1]}) input, got {x.shape}")
        w_hat = self.effective_weights()
        self._x = x
        self._w_hat = w_hat
        return x @ w_hat.T + self.bias

    def backward(self, dy, alpha, superset):
        self._require_cache()
        grad_w_hat = dy.T @ self._x
        self.grad_bias = dy.sum(axis=0)
        self._weight_grads(grad_w_hat, alpha, superset)
        return dy @ self._w_hat


class Conv2D(PrunableLayer):
    """Stride-1 2-D convolution on (N, C, H, W) inputs with zero padding."""

    kind = "conv2d"

    def __init__(self, in_shape, out_channels, kernel_size, rng, padding=0,
                 dtype=np.float32, **kw):
        c, h, w = in_shape
        k = int(kernel_size)
        fan_in = c * k * k
        bound = math.sqrt(6.0 / fan_in)
        weights = rng.uniform(-bound, bound, size=(out_channels, c, k, k)).astype(dtype)
        super().__init__(weights, np.zeros(out_channels, dtype=dtype), **kw)
        self.padding = int(padding)
        self.kernel_size = k
        self.in_shape = tuple(in_shape)
        ho, wo = h + 2 * self.padding - k + 1, w + 2 * self.padding - k + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {k} too large for input {in_shape} with padding {padding}")
        self.out_shape = (out_channels, ho, wo)

    def dense_flops(self):
        _, ho, wo = self.out_shape
        return self.n_params * ho * wo

    def _cols(self, x):
        p = self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        k = self.kernel_size
        # (N, C, Ho, Wo, k, k) -> (N*Ho*Wo, C*k*k)
        win = sliding_window_view(x, (k, k), axis=(2, 3))
        n, c, ho, wo = win.shape[:4]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1:] != self.in_shape:
            raise ValueError(f"conv layer expects (N, {self.in_shape}) input, got {x.shape}")
        w_hat = self.effective_weights()
        cols = self._cols(x)
        self._x = x
        self._cols_cache = cols
        self._w_hat = w_hat
        o, ho, wo = self.out_shape
        y = cols @ w_hat.reshape(o, -1).T + self.bias
        return y.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2)

    def backward(self, dy, alpha, superset):
        self._require_cache()
        o, ho, wo = self.out_shape
        n = dy.shape[0]
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        grad_w_hat = (dy_flat.T @ self._cols_cache).reshape(self.weights.shape)
        self.grad_bias = dy_flat.sum(axis=0)
        self._weight_grads(grad_w_hat, alpha, superset)

        c, h, w = self.in_shape
        k, p = self.kernel_size, self.padding
        dcols = (dy_flat @ self._w_hat.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
        dx = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx


class ReLU:
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy, alpha=None, superset=None):
        return np.where(self._mask, dy, 0).astype(dy.dtype, copy=False)


class Flatten:
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, alpha=None, superset=None):
        return dy.reshape(self._shape)


@dataclass
class LayerSparsity:
    layer: int
    kind: str
    zero_fraction: float
    n_params: int
    dense_exempt: bool


@dataclass
class SparsityReport:
    per_layer: List[LayerSparsity] = field(default_factory=list)
    global_sparsity: float = 0.0
    model_sparsity: float = 0.0

    def to_dict(self):
        return {
            "per_layer": [vars(p) for p in self.per_layer],
            "global_sparsity": self.global_sparsity,
            "model_sparsity": self.model_sparsity,
        }


class SparseNet:
    """Sequential network; ``prunable`` lists the weight-carrying layers in order."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self._forwarded = False

    @property
    def prunable(self) -> List[PrunableLayer]:
        return [l for l in self.layers if isinstance(l, PrunableLayer)]

    @property
    def dtype(self):
        return self.prunable[0].weights.dtype

    def forward(self, x, alpha=None):
        # alpha only matters for backward; accepted here to keep call sites symmetric
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            if x.ndim < 2 or math.prod(x.shape[1:]) != math.prod(self.input_shape):
                raise ValueError(f"input shape {x.shape[1:]} does not match model input {self.input_shape}")
            x = x.reshape((x.shape[0],) + self.input_shape)
        for layer in self.layers:
            x = layer.forward(x)
        self._forwarded = True
        return x

    def backward(self, dlogits, alpha, superset=BackwardSupersetSpec()):
        """Backpropagate ``dlogits``; fills ``grad_*`` on every prunable layer.

        Returns the gradient with respect to the network input.
        """
        if not self._forwarded:
            raise ContractError("backward called before forward")
        g = np.asarray(dlogits, dtype=self.dtype)
        for layer in reversed(self.layers):
            g = layer.backward(g, alpha, superset)
        return g

    def predict_logits(self, x, batch_size=1024):
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.prunable[-1].out_shape[0]))

    def sparsity_report(self) -> SparsityReport:
        rows, zeros, total, all_params = [], 0, 0, 0
        for i, layer in enumerate(self.prunable):
            n_zero = layer.n_params - layer.n_active()
            rows.append(LayerSparsity(i, layer.kind, n_zero / layer.n_params, layer.n_params,
                                      layer.dense_exempt))
            all_params += layer.n_params
            if not layer.dense_exempt:
                zeros += n_zero
                total += layer.n_params
        return SparsityReport(
            per_layer=rows,
            global_sparsity=zeros / total if total else 0.0,
            model_sparsity=zeros / all_params if all_params else 0.0,
        )


def _layer_spec(item):
    if isinstance(item, int):
        return {"type": "dense", "units": item}
    spec = dict(item)
    if spec.get("type") not in ("dense", "conv2d"):
        raise ValueError(f"unsupported layer spec {item!r}")
    return spec


def build_model(input_shape, hidden: Sequence, n_classes, seed=0, s0=DEFAULT_S0,
                dense_exempt: Sequence[int] = (), prune=True, dtype=np.float32) -> SparseNet:
    """Build hidden layers plus a final dense layer with ``n_classes`` outputs.

    ``hidden`` items are ints (dense widths) or dicts such as
    ``{"type": "conv2d", "channels": 8, "kernel": 3, "padding": 1}``.
    ``dense_exempt`` holds indices into the weight-carrying layers; negative
    indices count from the end. ``prune=False`` exempts every layer.
    """
    rng = np.random.default_rng(seed)
    specs = [_layer_spec(h) for h in hidden] + [{"type": "dense", "units": int(n_classes)}]
    n_w = len(specs)
    exempt = {i % n_w for i in dense_exempt}
    shape = tuple(input_shape)
    layers = []
    for i, spec in enumerate(specs):
        kw = dict(s=s0, dense_exempt=(not prune) or i in exempt)
        if spec["type"] == "conv2d":
            if len(shape) == 2:
                shape = (1,) + shape
            if len(shape) != 3:
                raise ValueError(f"conv2d needs a (C, H, W) input, got {shape}")
            layer = Conv2D(shape, int(spec["channels"]), int(spec["kernel"]), rng,
                           padding=int(spec.get("padding", 0)), dtype=dtype, **kw)
        else:
            if len(shape) != 1:
                layers.append(Flatten())
                shape = (math.prod(shape),)
            layer = Dense(shape[0], int(spec["units"]), rng, dtype=dtype, **kw)
        layers.append(layer)
        shape = layer.out_shape
        if i < n_w - 1:
            layers.append(ReLU())
    if input_shape and len(input_shape) == 2 and specs[0]["type"] == "conv2d":
        input_shape = (1,) + tuple(input_shape)
    return SparseNet(layers, input_shape)
