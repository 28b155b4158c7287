"""Sparse training loop with annealed proxy gradients and optional alpha auto-tuning."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional

import numpy as np

from .data import LabeledDataset, batches
from .flops import EpochFlops, model_ledger, run_flops_fraction
from .model import DEFAULT_S0, SparseNet, build_model
from .prune import BackwardSupersetSpec
from .schedules import AnnealSchedule, LrSchedule, alpha_at_epoch, lr_at_epoch, sigmoid_cosine_decay

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DivergedError(RuntimeError):
    """Training produced a non-finite loss or update."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class AutoTuneConfig:
    tuning_epochs: int
    ref_loss: List[float]
    eps0: float = 0.01
    eps1: float = 0.05
    eps2: float = 0.005

    def __post_init__(self):
        if self.tuning_epochs < 0:
            raise ConfigError("autotune.tuning_epochs", "must be >= 0")
        if len(self.ref_loss) < self.tuning_epochs:
            raise ConfigError("autotune.ref_loss",
                              f"has {len(self.ref_loss)} entries, need {self.tuning_epochs}")
        for name in ("eps0", "eps1", "eps2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"autotune.{name}", "must be positive")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    momentum: float = 0.875
    max_lr: float = 0.256
    warmup: int = 5
    weight_decay: float = 3.0517578125e-05
    label_smoothing: float = 0.1
    alpha0: float = 0.75
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    zero_from: Optional[int] = None
    autotune: Optional[AutoTuneConfig] = None
    seed: int = 0
    backward_superset: BackwardSupersetSpec = field(default_factory=BackwardSupersetSpec)
    # network
    hidden: list = field(default_factory=lambda: [256, 128])
    s0: float = DEFAULT_S0
    dense_exempt: list = field(default_factory=list)
    prune: bool = True
    # bookkeeping
    flops_per_iteration: bool = False
    checkpoint_every: int = 0
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        nested = (("schedule", AnnealSchedule.from_dict),
                  ("backward_superset", BackwardSupersetSpec.from_dict),
                  ("autotune", lambda d: AutoTuneConfig(**d)))
        for name, build in nested:
            value = getattr(self, name)
            if isinstance(value, dict):
                try:
                    setattr(self, name, build(value))
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(name, str(exc)) from exc
        self.validate()

    def validate(self):
        checks = [
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("momentum", 0.0 <= self.momentum < 1.0, "must lie in [0, 1)"),
            ("max_lr", self.max_lr > 0, "must be positive"),
            ("warmup", self.warmup >= 0, "must be >= 0"),
            ("weight_decay", self.weight_decay >= 0, "must be >= 0"),
            ("label_smoothing", 0.0 <= self.label_smoothing < 1.0, "must lie in [0, 1)"),
            ("alpha0", 0.0 <= self.alpha0 <= 1.0, "must lie in [0, 1]"),
            ("zero_from", self.zero_from is None or self.zero_from >= 0, "must be >= 0"),
            ("checkpoint_every", self.checkpoint_every >= 0, "must be >= 0"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, f"{msg} (got {getattr(self, name)!r})")

    def to_dict(self):
        d = asdict(self)
        d["schedule"] = self.schedule.to_dict()
        d["backward_superset"] = self.backward_superset.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_accuracy: float
    alpha: float
    global_sparsity: float
    per_layer_sparsity: List[float]
    train_flops_fraction: float
    infer_flops_fraction: float
    lr: float
    model_sparsity: float = 0.0


def smoothed_cross_entropy(logits, target, smoothing=0.0, return_grad=False):
    """Mean label-smoothed cross-entropy over the batch.

    The target distribution puts ``1 - smoothing + smoothing / K`` on the true
    class and ``smoothing / K`` elsewhere. With ``return_grad`` the gradient
    with respect to ``logits`` (same dtype as ``logits``) is returned too.
    """
    z = np.asarray(logits, dtype=np.float64)
    n, k = z.shape
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    q = np.full((n, k), smoothing / k)
    q[np.arange(n), target] += 1.0 - smoothing
    loss = float(-(q * logp).sum() / n)
    if not return_grad:
        return loss
    grad = (np.exp(logp) - q) / n
    return loss, grad.astype(np.asarray(logits).dtype, copy=False)


def sgd_step(param, grad, buf, lr, weight_decay=0.0, momentum=0.875):
    """One momentum-SGD step with L2 decay folded into the gradient.

    Returns ``(new_param, new_buf)``; inputs are not modified.
    """
    d = grad + weight_decay * param
    new_buf = momentum * buf + d
    new_param = param - lr * new_buf
    if not np.all(np.isfinite(new_param)):
        raise DivergedError("non-finite parameter after SGD step")
    return new_param, new_buf


def autotune_alpha(alpha, epoch, epoch_loss, cfg: AutoTuneConfig):
    if epoch >= cfg.tuning_epochs:
        raise ValueError(f"epoch {epoch} is past the tuning phase ({cfg.tuning_epochs} epochs)")
    if epoch_loss >= (1.0 + cfg.eps0) * cfg.ref_loss[epoch]:
        alpha = (1.0 + cfg.eps1) * alpha
    else:
        alpha = (1.0 - cfg.eps2) * alpha
    return min(max(alpha, 0.0), 1.0)


def post_tune_schedule(alpha_at_T0, epoch, T0, T, reset_epoch=None):
    """Alpha for epoch >= T0: the tuned value decayed over the remaining epochs."""
    if epoch < T0:
        raise ValueError(f"epoch {epoch} precedes the end of tuning ({T0})")
    if reset_epoch is not None and epoch >= reset_epoch:
        return 0.0
    return float(alpha_at_T0 * sigmoid_cosine_decay(epoch - T0, T - T0))


def model_from_config(config: TrainConfig, input_shape, num_classes) -> SparseNet:
    return build_model(input_shape, config.hidden, num_classes, seed=config.seed, s0=config.s0,
                       dense_exempt=config.dense_exempt, prune=config.prune)


def evaluate(model: SparseNet, data: LabeledDataset):
    if len(data) == 0:
        return float("nan")
    pred = model.predict_logits(data.inputs).argmax(axis=1)
    return float(np.mean(pred == data.labels))


class AlphaController:
    """Chooses alpha at the start of each epoch and absorbs the epoch's loss at its end."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.tuned = config.alpha0
        self.alpha = config.alpha0

    def alpha_for(self, epoch):
        c = self.config
        T = c.epochs
        if c.autotune is None:
            self.alpha = alpha_at_epoch(c.alpha0, c.schedule, epoch, T, c.zero_from)
            return self.alpha
        T0 = min(c.autotune.tuning_epochs, T)
        if c.zero_from is not None and epoch >= c.zero_from:
            self.alpha = 0.0
        elif epoch > T0:
            # the decayed value is assigned at the end of epoch - 1, as in the tuning algorithm
            self.alpha = post_tune_schedule(self.tuned, epoch - 1, T0, max(T, T0 + 1))
        else:
            self.alpha = self.tuned
        return self.alpha

    def end_epoch(self, epoch, mean_loss):
        at = self.config.autotune
        if at is not None and epoch < at.tuning_epochs:
            self.tuned = autotune_alpha(self.tuned, epoch, mean_loss, at)


def _param_slots(model):
    """(layer, attribute, decayed) for every trainable tensor or scalar."""
    slots = []
    for layer in model.prunable:
        slots.append((layer, "weights", True))
        slots.append((layer, "bias", False))
        if not layer.dense_exempt:
            slots.append((layer, "s", True))
    return slots


def train(model: SparseNet, data: LabeledDataset, config: TrainConfig,
          eval_data: Optional[LabeledDataset] = None,
          on_epoch: Optional[Callable] = None):
    """Run ``config.epochs`` epochs of sparse training.

    Returns ``(model, records)``. ``on_epoch(record, model)`` is called after
    every epoch. Raises ``DivergedError`` on a non-finite loss.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    records: List[EpochRecord] = []
    if config.epochs == 0:
        return model, records

    eval_data = eval_data if eval_data is not None else data
    lr_sched = LrSchedule(config.max_lr, config.warmup, config.epochs)
    controller = AlphaController(config)
    superset = config.backward_superset
    slots = _param_slots(model)
    grad_attr = {"weights": "grad_weights", "bias": "grad_bias", "s": "grad_s"}
    bufs = [np.zeros_like(getattr(l, a)) if a != "s" else 0.0 for l, a, _ in slots]
    flops_log: List[EpochFlops] = []

    for epoch in range(config.epochs):
        alpha = controller.alpha_for(epoch)
        order = batches(data, config.batch_size, config.seed, epoch)
        losses = []
        for i, idx in enumerate(order):
            lr = lr_at_epoch(lr_sched, epoch + i / len(order))
            logits = model.forward(data.inputs[idx], alpha)
            loss, dlogits = smoothed_cross_entropy(logits, data.labels[idx],
                                                   config.label_smoothing, return_grad=True)
            if not math.isfinite(loss):
                raise DivergedError(f"non-finite loss at epoch {epoch}, batch {i}",
                                    records[-1] if records else None)
            losses.append(loss)
            if config.flops_per_iteration:
                flops_log.append(EpochFlops(model_ledger(model, superset), alpha == 0.0,
                                            superset, len(idx)))
            model.backward(dlogits, alpha, superset)
            try:
                for j, (layer, attr, decayed) in enumerate(slots):
                    wd = config.weight_decay if decayed else 0.0
                    new, bufs[j] = sgd_step(getattr(layer, attr), getattr(layer, grad_attr[attr]),
                                            bufs[j], lr, wd, config.momentum)
                    setattr(layer, attr, float(new) if attr == "s" else new.astype(layer.weights.dtype))
            except DivergedError as exc:
                raise DivergedError(f"{exc} at epoch {epoch}, batch {i}",
                                    records[-1] if records else None) from None

        mean_loss = float(np.mean(losses))
        if not config.flops_per_iteration:
            flops_log.append(EpochFlops(model_ledger(model, superset), alpha == 0.0,
                                        superset, len(data)))
        train_frac, infer_frac = run_flops_fraction(flops_log, model_ledger(model, superset))
        report = model.sparsity_report()
        record = EpochRecord(
            epoch=epoch,
            train_loss=mean_loss,
            eval_accuracy=evaluate(model, eval_data),
            alpha=alpha,
            global_sparsity=report.global_sparsity,
            per_layer_sparsity=[p.zero_fraction for p in report.per_layer],
            train_flops_fraction=train_frac,
            infer_flops_fraction=infer_frac,
            lr=lr_at_epoch(lr_sched, epoch),
            model_sparsity=report.model_sparsity,
        )
        records.append(record)
        logger.info("epoch %d loss %.4f acc %.4f alpha %.4f sparsity %.4f",
                    epoch, mean_loss, record.eval_accuracy, alpha, report.global_sparsity)
        controller.end_epoch(epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(record, model)
    return model, records
