"""Checkpoint container.

A checkpoint is a NumPy ``.npz`` archive opened with ``allow_pickle=False``:

``meta``
    0-d unicode array holding a JSON document::

        {"format": "autosparse-checkpoint", "version": 1,
         "input_shape": [...],
         "sequence": [{"kind": "flatten"}, {"kind": "dense", "index": 0, "s": -5.0,
                       "dense_exempt": false, "in_shape": [...], "out_shape": [...]},
                      {"kind": "relu"}, ...],
         "epoch": int, "alpha": float, "rng": {...},
         "config": {...}, "history": [{"alpha": float, "n_active": [...]}, ...]}

    Conv entries also carry ``kernel_size`` and ``padding``.
``w{i}`` / ``b{i}``
    weights and bias of the i-th weight-carrying layer.
"""
from __future__ import annotations

import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .model import Conv2D, Dense, Flatten, PrunableLayer, ReLU, SparseNet

FORMAT = "autosparse-checkpoint"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _describe(model: SparseNet):
    seq, idx = [], 0
    for layer in model.layers:
        if isinstance(layer, PrunableLayer):
            d = {"kind": layer.kind, "index": idx, "s": layer.s,
                 "dense_exempt": layer.dense_exempt,
                 "in_shape": list(layer.in_shape), "out_shape": list(layer.out_shape)}
            if isinstance(layer, Conv2D):
                d.update(kernel_size=layer.kernel_size, padding=layer.padding)
            idx += 1
        else:
            d = {"kind": layer.kind}
        seq.append(d)
    return seq


def save_checkpoint(path, model: SparseNet, epoch=0, alpha=0.0, rng=None, config=None,
                    history=None):
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "input_shape": list(model.input_shape),
        "sequence": _describe(model),
        "epoch": int(epoch),
        "alpha": float(alpha),
        "rng": rng or {},
        "config": config or {},
        "history": history or [],
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for i, layer in enumerate(model.prunable):
        arrays[f"w{i}"] = layer.weights
        arrays[f"b{i}"] = layer.bias
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def load_checkpoint(path):
    """Return ``(model, meta)``; raises ``CheckpointFormatError`` on bad content."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except (zipfile.BadZipFile, ValueError, KeyError, EOFError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CheckpointFormatError(f"{path}: unreadable checkpoint ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointFormatError(f"{path}: not an autosparse checkpoint")
    if meta.get("version") != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {meta.get('version')}")

    rng = np.random.default_rng(0)
    layers = []
    try:
        for d in meta["sequence"]:
            kind = d["kind"]
            if kind == "relu":
                layers.append(ReLU())
                continue
            if kind == "flatten":
                layers.append(Flatten())
                continue
            w, b = arrays[f"w{d['index']}"], arrays[f"b{d['index']}"]
            kw = dict(s=d["s"], dense_exempt=d["dense_exempt"], dtype=w.dtype)
            if kind == "dense":
                layer = Dense(d["in_shape"][0], d["out_shape"][0], rng, **kw)
            elif kind == "conv2d":
                layer = Conv2D(tuple(d["in_shape"]), d["out_shape"][0], d["kernel_size"], rng,
                               padding=d["padding"], **kw)
            else:
                raise CheckpointFormatError(f"{path}: unknown layer kind {kind!r}")
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise CheckpointFormatError(f"{path}: layer {d['index']} shape mismatch")
            layer.weights, layer.bias = w, b
            layers.append(layer)
    except KeyError as exc:
        raise CheckpointFormatError(f"{path}: missing field {exc}") from exc
    return SparseNet(layers, tuple(meta["input_shape"])), meta
