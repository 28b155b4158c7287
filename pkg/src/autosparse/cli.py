"""Command-line entry point: ``autosparse {train,check-grad,flops,simulate-ga}``.

Exit codes: 0 success, 2 configuration error, 3 diverged run,
4 data/checkpoint format or I/O error, 5 failed check.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .data import IdxFormatError, LabeledDataset, default_data_dir, load_idx, synth_gaussian_blobs
from .flops import model_ledger, run_flops_fraction, train_sample_flops
from .gradcheck import REL_TOL, run_gradcheck
from .metrics import MetricsWriter
from .oracle import simulate_descent
from .prune import BackwardSupersetSpec
from .training import ConfigError, DivergedError, TrainConfig, model_from_config, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4
EXIT_CHECK_FAILED = 5

logger = logging.getLogger("autosparse")


# ---------------------------------------------------------------- config


def parse_override(text):
    """``a.b=value`` -> (["a", "b"], value); the value is JSON if it parses."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: dict, overrides):
    cfg = json.loads(json.dumps(cfg))
    for text in overrides or ():
        path, value = parse_override(text)
        node = cfg
        for k in path[:-1]:
            if node.get(k) is None:
                node[k] = {}
            node = node[k]
            if not isinstance(node, dict):
                raise ConfigError(".".join(path), "cannot set a field inside a non-object")
        node[path[-1]] = value
    return cfg


def resolve_config(raw: dict, base_dir: Path) -> TrainConfig:
    raw = dict(raw)
    at = raw.get("autotune")
    if isinstance(at, dict) and "ref_loss_file" in at:
        at = dict(at)
        ref_path = Path(at.pop("ref_loss_file"))
        if not ref_path.is_absolute():
            ref_path = base_dir / ref_path
        try:
            at["ref_loss"] = json.loads(ref_path.read_text())["ref_loss"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError("autotune.ref_loss_file", f"cannot read {ref_path}: {exc}") from exc
        raw["autotune"] = at
    return TrainConfig.from_dict(raw)


# ---------------------------------------------------------------- data


def _path(p):
    p = Path(p)
    return p if p.is_absolute() else default_data_dir() / p


def split_dataset(ds: LabeledDataset, eval_fraction, seed):
    n_eval = int(round(eval_fraction * len(ds)))
    perm = np.random.default_rng(seed).permutation(len(ds))
    cut = len(ds) - n_eval
    return ds.subset(perm[:cut], "train"), ds.subset(perm[cut:], "eval")


def load_data(spec: dict):
    """Build (train, eval) datasets from the config's ``data`` section."""
    kind = spec.get("kind", "idx")
    nc = int(spec.get("num_classes", 10))
    if kind == "blobs":
        ds = synth_gaussian_blobs(nc, int(spec.get("dims", nc)), int(spec.get("per_class", 100)),
                                  int(spec.get("seed", 0)), float(spec.get("scale", 6.0)))
    elif kind == "idx":
        for key in ("train_images", "train_labels"):
            if key not in spec:
                raise ConfigError(f"data.{key}", "required for idx data")
        ds = load_idx(_path(spec["train_images"]), _path(spec["train_labels"]), nc)
        if "eval_images" in spec:
            ev = load_idx(_path(spec["eval_images"]), _path(spec["eval_labels"]), nc, "eval")
            return ds, ev
    else:
        raise ConfigError("data.kind", f"unknown data kind {kind!r}")
    if "limit" in spec:
        ds = ds.subset(np.arange(min(int(spec["limit"]), len(ds))))
    return split_dataset(ds, float(spec.get("eval_fraction", 0.2)), int(spec.get("split_seed", 0)))


# ---------------------------------------------------------------- manifest


def build_id():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_json_atomic(path, obj):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _now():
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------- commands


def cmd_train(args):
    try:
        cfg_path = Path(args.config)
        raw = json.loads(cfg_path.read_text()) if args.config else {}
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: config: invalid JSON ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw = apply_overrides(raw, args.set)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.record_ref_loss:
            raw["prune"] = False
        config = resolve_config(raw, cfg_path.parent)
        train_ds, eval_ds = load_data(config.data)
    except ConfigError as exc:
        print(f"error: config field {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxFormatError, OSError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_IO

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    paths = {"metrics_csv": str(out / "metrics.csv"), "metrics_jsonl": str(out / "metrics.jsonl"),
             "checkpoints": []}
    model = model_from_config(config, train_ds.inputs.shape[1:], train_ds.num_classes)
    alpha_hist = []
    status = "ok"
    code = EXIT_OK
    records = []

    with MetricsWriter(paths["metrics_csv"], paths["metrics_jsonl"]) as writer:
        def on_epoch(record, m):
            records.append(record)
            writer.write(record)
            alpha_hist.append({"alpha": record.alpha, "n_active": [l.n_active() for l in m.prunable]})
            last = record.epoch + 1 == config.epochs
            every = config.checkpoint_every
            if last or (every and (record.epoch + 1) % every == 0):
                p = out / f"checkpoint_epoch{record.epoch:04d}.npz"
                save_checkpoint(p, m, epoch=record.epoch, alpha=record.alpha,
                                rng={"seed": config.seed, "batch_order": "default_rng([seed, epoch])"},
                                config=config.to_dict(), history=alpha_hist)
                paths["checkpoints"].append(str(p))

        try:
            # divergence is detected and reported below; numpy's overflow chatter adds nothing
            with np.errstate(over="ignore", invalid="ignore"):
                train(model, train_ds, config, eval_ds, on_epoch=on_epoch)
        except DivergedError as exc:
            print(f"error: diverged: {exc}", file=sys.stderr)
            status, code = "diverged", EXIT_DIVERGED

    if args.record_ref_loss:
        paths["ref_loss"] = str(out / "ref_loss.json")
        write_json_atomic(paths["ref_loss"], {"ref_loss": [r.train_loss for r in records]})

    manifest = {
        "status": status,
        "config": config.to_dict(),
        "build": build_id(),
        "started": started,
        "finished": _now(),
        "outputs": paths,
        "data": {"train": train_ds.summary(), "eval": eval_ds.summary()},
        "sparsity": model.sparsity_report().to_dict(),
        "train_flops_fraction": records[-1].train_flops_fraction if records else 1.0,
        "infer_flops_fraction": records[-1].infer_flops_fraction if records else 1.0,
    }
    write_json_atomic(out / "manifest.json", manifest)
    if records:
        r = records[-1]
        print(f"epochs {len(records)} sparsity {r.global_sparsity:.4f} "
              f"accuracy {r.eval_accuracy:.4f} train_F {r.train_flops_fraction:.4f} "
              f"test_F {r.infer_flops_fraction:.4f}")
    return code


def _parse_sizes(text):
    try:
        return [tuple(int(d) for d in item.split("x")) for item in text.split(",") if item]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sizes {text!r}; expected e.g. 4x3,5x5") from None


def cmd_check_grad(args):
    report = run_gradcheck(args.seed, args.sizes, args.instances, args.alpha, mutate=args.mutate)
    print(f"checked {report.checked} gradients over {report.instances} instances; "
          f"worst relative error {report.worst_rel_err:.3e} at {report.worst_where} "
          f"(tolerance {REL_TOL:g})")
    if report.passed:
        print("PASS")
        return EXIT_OK
    for line in report.failures[:10]:
        print(f"FAIL {line}", file=sys.stderr)
    return EXIT_CHECK_FAILED


def flops_report(model, alpha=0.0, superset=BackwardSupersetSpec()):
    ledger = model_ledger(model, superset)
    train_frac = train_sample_flops(ledger, alpha == 0.0, superset) / ledger.dense_train
    _, infer_frac = run_flops_fraction([], ledger)
    return {
        "layers": [
            {"name": l.name, "dense": l.dense, "sparse": l.sparse, "backward": l.backward,
             "fraction": l.sparse / l.dense if l.dense else 1.0}
            for l in ledger.layers
        ],
        "dense_infer": ledger.dense_infer,
        "sparse_infer": ledger.sparse_infer,
        "dense_train": ledger.dense_train,
        "train_fraction": train_frac,
        "infer_fraction": infer_frac,
    }


def cmd_flops(args):
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CheckpointFormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return EXIT_IO
    superset = BackwardSupersetSpec.from_dict(
        meta.get("config", {}).get("backward_superset", {"mode": "all", "keep_fraction": 1.0}))
    report = flops_report(model, meta.get("alpha", 0.0), superset)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


SIM_COLUMNS = ["v0", "v_star", "alpha", "step", "v", "first_active_step"]


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_simulate_ga(args):
    grid = []
    if args.grid:
        spec = json.loads(Path(args.grid).read_text())
        grid = [(float(p["v0"]), float(p["v_star"]), float(p["alpha"])) for p in spec]
    else:
        grid = [(a, b, c) for a in args.v0 for b in args.v_star for c in args.alpha]
    f = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SIM_COLUMNS)
        for v0, vs, a in grid:
            traj = simulate_descent(v0, vs, a, args.lr, args.steps)
            cross = traj.first_active_step
            for step, v in enumerate(traj.values):
                w.writerow([repr(v0), repr(vs), repr(a), step, repr(v), "" if cross is None else cross])
    finally:
        if args.out:
            f.close()
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="autosparse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a sparse network from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field; dotted keys reach nested objects")
    t.add_argument("--record-ref-loss", action="store_true",
                   help="dense run that writes ref_loss.json for auto-tuning")
    t.add_argument("--out-dir", default="runs/latest")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("check-grad", help="compare backward rules with finite differences")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sizes", type=_parse_sizes, default=[(4, 3), (5, 5), (8,)])
    g.add_argument("--instances", type=int, default=1000)
    g.add_argument("--alpha", type=float, default=None, help="fixed alpha (default: random)")
    g.add_argument("--mutate", choices=["sign"], default=None, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_check_grad)

    f = sub.add_parser("flops", help="FLOPS report for a checkpoint")
    f.add_argument("checkpoint")
    f.add_argument("--out")
    f.set_defaults(func=cmd_flops)

    s = sub.add_parser("simulate-ga", help="1-D descent trajectories as CSV")
    s.add_argument("--v0", type=_float_list, default=[-0.5])
    s.add_argument("--v-star", type=_float_list, default=[0.3])
    s.add_argument("--alpha", type=_float_list, default=[0.0, 0.1, 0.5, 1.0])
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--grid", help="JSON list of {v0, v_star, alpha} objects")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate_ga)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
