"""Command-line front end: train, finetune, reconstruct, sample, logprob.

Every run is reproducible from its echoed configuration and master seed;
all randomness flows from the seed through named sub-streams. Settings can
come from flags or from a plain-text config file (one `key = value` per
line, `#` comments); flags override file values and unknown keys are
rejected. Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from . import data_io, evaluation, learning, model
from .inference import IcmConfig


def _version_string() -> str:
    try:
        from importlib.metadata import version

        base = version("lrbn")
    except Exception:
        base = "0.0.0"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if desc.returncode == 0:
            return f"lrbn {base} ({desc.stdout.strip()})"
    except Exception:
        pass
    return f"lrbn {base}"


# --- argument plumbing -------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="plain-text config file (key = value)")
    p.add_argument("--json", action="store_true",
                   help="emit metrics as a single-line JSON object")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/worker threads (default: all cores)")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")


def _add_data(p):
    p.add_argument("--data", required=True, help="dataset path (.idx or .lmat)")
    p.add_argument("--labels", help="label file path (IDX input only)")
    p.add_argument("--format", choices=["idx", "lmat"], default=None,
                   help="input container format (default: by extension)")
    p.add_argument("--binarize", type=float, default=None, metavar="T",
                   help="threshold to {0,1} at T (strict >)")
    p.add_argument("--normalize", action="store_true",
                   help="center columns and scale to unit variance")


def _add_train_opts(p):
    p.add_argument("--lr", type=float, default=0.25, help="learning rate")
    p.add_argument("--batch", type=int, default=20, help="minibatch size")
    p.add_argument("--epochs", type=int, default=50, help="max epochs per layer")
    p.add_argument("--sweeps", type=int, default=10, help="max ICM sweeps")
    p.add_argument("--val-size", type=int, default=100,
                   help="held-out validation samples for early stopping")
    p.add_argument("--patience", type=int, default=5,
                   help="early-stopping patience in epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrbn",
        description="Deep directed generative models with binary latent "
                    "layers: training, inference, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model by greedy layer stacking")
    _add_data(p)
    p.add_argument("--layers", required=True,
                   help="comma-separated latent layer sizes, e.g. 200,200")
    p.add_argument("--kind", choices=["binary", "gaussian"], default="binary")
    _add_train_opts(p)
    p.add_argument("--out", required=True, help="output model file (.lrbn)")
    p.add_argument("--report", help="plain-text training report path")
    _add_common(p)

    p = sub.add_parser("finetune", help="fine-tune a trained model")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--mode", choices=["unsupervised", "supervised"],
                   default="unsupervised")
    p.add_argument("--alternations", type=int, default=2)
    _add_train_opts(p)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("reconstruct", help="mean reconstruction error on a test set")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--grid", help="write side-by-side original/reconstruction PGM")
    p.add_argument("--grid-count", type=int, default=10)
    p.add_argument("--shape", help="image shape ROWSxCOLS (default: square)")
    _add_common(p)

    p = sub.add_parser("sample", help="draw ancestral samples as PGM images")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", help="one PGM file per sample")
    p.add_argument("--grid", help="tile all samples into one PGM")
    p.add_argument("--shape", help="image shape ROWSxCOLS (default: square)")
    _add_common(p)

    p = sub.add_parser("logprob", help="sampling-based test log-probability")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--samples", type=int, default=1_000_000,
                   help="latent samples per repetition")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--limit", type=int, default=None,
                   help="evaluate only the first N test samples")
    p.add_argument("--oracle", action="store_true",
                   help="also print the exact enumeration value and the gap")
    _add_common(p)

    return parser


def _apply_config_file(parser, argv, args):
    """Re-parse with file values as defaults so flags keep priority."""
    sub_parser = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub_parser = action.choices[args.command]
    known = {a.dest: a for a in sub_parser._actions}
    overrides = {}
    with open(args.config) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{args.config}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            dest = key.replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                raise ValueError(f"{args.config}:{lineno}: unknown key '{key}'")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                overrides[dest] = value.lower() in ("1", "true", "yes")
            elif action.type is not None:
                overrides[dest] = action.type(value)
            else:
                overrides[dest] = value
    sub_parser.set_defaults(**overrides)
    return parser.parse_args(argv)


# --- shared helpers ----------------------------------------------------------


def load_dataset(args) -> data_io.Dataset:
    path = args.data
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    fmt = args.format
    if fmt is None:
        fmt = "lmat" if path.endswith(".lmat") else "idx"
    if fmt == "lmat":
        ds = data_io.load_lmat(path)
        if args.binarize is not None and ds.kind == "real":
            ds = data_io.Dataset(data_io.binarize(ds.samples, args.binarize),
                                 "binary", ds.labels)
    else:
        tensor = data_io.load_idx(path)
        matrix = data_io.idx_images_to_matrix(tensor)
        labels = None
        if args.labels:
            labels = data_io.load_idx(args.labels).ravel()
        if args.binarize is not None:
            ds = data_io.Dataset(data_io.binarize(matrix, args.binarize),
                                 "binary", labels)
        else:
            real = matrix.astype(np.float64)
            if tensor.dtype == np.uint8:
                real /= 255.0
            ds = data_io.Dataset(real, "real", labels)
    if args.normalize:
        if ds.kind != "real":
            raise ValueError("--normalize applies to real-valued data only")
        normalized, stats = data_io.normalize_columns(ds.as_float())
        ds = data_io.Dataset(normalized, "real", ds.labels, stats)
    return ds


def _train_config(args) -> learning.TrainConfig:
    return learning.TrainConfig(
        learning_rate=args.lr,
        minibatch_size=args.batch,
        max_epochs=args.epochs,
        icm=IcmConfig(max_sweeps=args.sweeps),
        rng_seed=args.seed,
        validation_size=args.val_size,
        early_stop_patience=args.patience,
        finetune_alternations=getattr(args, "alternations", 2),
    )


def _image_shape(args, n_dim: int):
    if getattr(args, "shape", None):
        rows, cols = (int(v) for v in args.shape.lower().split("x"))
    else:
        rows = int(math.isqrt(n_dim))
        cols = rows
        if rows * cols != n_dim:
            raise ValueError(
                f"{n_dim} pixels is not square; pass --shape ROWSxCOLS"
            )
    if rows * cols != n_dim:
        raise ValueError(f"--shape {args.shape} does not match {n_dim} pixels")
    return rows, cols


def _echo_config(args) -> dict:
    skip = {"command", "config", "json", "func"}
    return {k: v for k, v in sorted(vars(args).items())
            if k not in skip and v is not None}


def write_report(path, header: dict, reports) -> None:
    """Plain text: `key: value` header, blank line, CSV epoch table."""
    with open(path, "w") as fh:
        for key, value in header.items():
            fh.write(f"{key}: {value}\n")
        fh.write("\n")
        fh.write("layer,epoch,train_ll,val_ll\n")
        for layer, rep in enumerate(reports):
            for epoch in range(rep.epochs_run):
                val = rep.val_ll[epoch] if epoch < len(rep.val_ll) else ""
                fh.write(f"{layer},{epoch},{rep.train_ll[epoch]:.6f},{val}\n")


def _emit(args, metrics: dict) -> None:
    if args.json:
        print(json.dumps(metrics))
    else:
        for key, value in metrics.items():
            print(f"{key}: {value}")


# --- subcommands -------------------------------------------------------------


def cmd_train(args) -> int:
    sizes = [int(s) for s in args.layers.split(",") if s]
    if not sizes:
        raise ValueError("--layers must list at least one latent size")
    ds = load_dataset(args)
    kind = args.kind
    if ds.kind == "binary" and kind == "gaussian":
        raise ValueError("gaussian kind requires real-valued data")
    if ds.kind == "real" and kind == "binary":
        raise ValueError("binary kind requires binarized data (--binarize)")
    cfg = _train_config(args)
    started = time.time()
    net, reports = learning.greedy_stack(ds.as_float(), sizes, cfg, kind)
    wall = time.time() - started
    model.save(net, args.out)
    header = {"version": _version_string(), "wall_time_s": f"{wall:.2f}"}
    header.update(_echo_config(args))
    if args.report:
        write_report(args.report, header, reports)
    _emit(args, {
        "model": args.out,
        "layers": ",".join(str(s) for s in net.layer_sizes),
        "epochs": sum(r.epochs_run for r in reports),
        "final_train_ll": reports[-1].train_ll[-1],
        "wall_time_s": round(wall, 2),
    })
    return 0


def cmd_finetune(args) -> int:
    net = model.load(args.model)
    ds = load_dataset(args)
    cfg = _train_config(args)
    if args.mode == "unsupervised":
        if net.n_layers < 2:
            raise ValueError("unsupervised fine-tuning needs >= 2 latent layers")
        net = learning.finetune_unsupervised(net, ds.as_float(), cfg)
    else:
        if ds.labels is None:
            raise ValueError("supervised fine-tuning requires labels")
        n_classes = int(ds.labels.max()) + 1
        if net.layers[-1].n_upper != n_classes:
            raise ValueError(
                f"top layer has {net.layers[-1].n_upper} units but data has "
                f"{n_classes} classes"
            )
        net = learning.finetune_supervised(net, ds.as_float(), ds.labels, cfg)
    model.save(net, args.out)
    _emit(args, {"model": args.out})
    return 0


def cmd_reconstruct(args) -> int:
    net = model.load(args.model)
    ds = load_dataset(args)
    if ds.n_samples == 0:
        raise ValueError("empty test set")
    X = ds.as_float()
    icm = IcmConfig(max_sweeps=args.sweeps)
    err = evaluation.mean_reconstruction_error(net, X, icm)
    if args.grid:
        rows, cols = _image_shape(args, ds.n_dim)
        n = min(args.grid_count, ds.n_samples)
        originals = X[:n]
        recons = evaluation.reconstruct_batch(net, originals, icm)
        tiles = np.vstack([originals, np.clip(recons, 0, 1)])
        data_io.write_pgm(tiles, rows, cols, args.grid, grid_shape=(2, n))
    _emit(args, {"mean_reconstruction_error": float(f"{err:.2f}"),
                 "n_samples": ds.n_samples})
    return 0


def cmd_sample(args) -> int:
    net = model.load(args.model)
    rng = np.random.default_rng(args.seed)
    X, _ = evaluation.ancestral_sample_batch(net, args.count, rng)
    written = []
    if args.count:
        rows, cols = _image_shape(args, net.n_visible)
        pixels = np.clip(X, 0, 1)
        if args.grid:
            side = math.ceil(math.sqrt(args.count))
            data_io.write_pgm(pixels, rows, cols, args.grid,
                              grid_shape=(math.ceil(args.count / side), side))
            written.append(args.grid)
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            for k in range(args.count):
                path = os.path.join(args.out_dir, f"sample_{k:05d}.pgm")
                data_io.write_pgm(pixels[k], rows, cols, path)
                written.append(path)
    _emit(args, {"count": args.count, "files": len(written)})
    return 0


def cmd_logprob(args) -> int:
    net = model.load(args.model)
    ds = load_dataset(args)
    X = ds.as_float()
    if args.limit:
        X = X[: args.limit]
    cfg = evaluation.CslConfig(sample_count=args.samples,
                               repetitions=args.repetitions,
                               rng_seed=args.seed)
    result = evaluation.csl_logprob(net, X, cfg)
    metrics = {
        "mean_logprob": result.mean,
        "per_repetition": [float(np.mean(r)) for r in result.per_repetition],
        "samples": args.samples,
        "n_test": X.shape[0],
    }
    if args.oracle:
        exact = evaluation.exact_logprob_batch(net, X)
        metrics["exact_logprob"] = float(np.mean(exact))
        metrics["gap"] = metrics["exact_logprob"] - result.mean
    _emit(args, metrics)
    return 0


_COMMANDS = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "reconstruct": cmd_reconstruct,
    "sample": cmd_sample,
    "logprob": cmd_logprob,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config_file(parser, argv, args)
        if args.threads:
            try:
                from threadpoolctl import threadpool_limits

                with threadpool_limits(limits=args.threads):
                    return _COMMANDS[args.command](args)
            except ImportError:
                pass
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
