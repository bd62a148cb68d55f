"""Command-line entry point: train, eval, diagnose, sweep.

Configuration is a flat key=value text file; command-line flags override file
values which override defaults.  Unknown keys are fatal so typos never pass
silently.  Every run echoes its fully-resolved configuration next to its
outputs; feeding that file back reproduces the run bit-identically.

Exit codes: 0 success, 2 usage/config errors, 3 file and format errors,
4 numeric failures.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics, figures, network
from .data import Dataset, load_idx, synth_blobs, train_test_split
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    IdxFormatError,
    NonFiniteError,
    NotPositiveDefiniteError,
)
from .kernels import gaussian_mixture
from .training import Mode, TrainConfig, train, evaluate, write_report

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# config schema: canonical key -> (parse, format, default)
# ---------------------------------------------------------------------------

def _parse_bool(s):
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_float_list(s):
    return tuple(float(v) for v in s.split(",")) if s else ()


def _parse_int_list(s):
    return tuple(int(v) for v in s.split(",")) if s else ()


def _parse_schedule(s):
    if not s:
        return ()
    out = []
    for item in s.split(","):
        epoch, mult = item.split(":")
        out.append((int(epoch), float(mult)))
    return tuple(out)


def _fmt_bool(v):
    return "true" if v else "false"


def _fmt_float_list(v):
    return ",".join(repr(float(x)) for x in v)


def _fmt_int_list(v):
    return ",".join(str(int(x)) for x in v)


def _fmt_schedule(v):
    return ",".join(f"{int(e)}:{m!r}" for e, m in v)


def _parse_choice(*allowed):
    def parse(s):
        if s not in allowed:
            raise ValueError(f"expected one of {allowed}, got {s!r}")
        return s
    return parse


SCHEMA = {
    "mode": (_parse_choice("supervised", "semi", "identity", "ae-pretrain"), str, "supervised"),
    "dataset": (_parse_choice("blobs", "mnist"), str, "blobs"),
    "data_dir": (str, str, "data/mnist"),
    "blob_classes": (int, str, 3),
    "blob_per_class": (int, str, 200),
    "blob_dim": (int, str, 16),
    "blob_spread": (float, repr, 0.35),
    "test_fraction": (float, repr, 0.25),
    "batch_size": (int, str, 100),
    "lambda": (float, repr, 0.01),
    "beta": (float, repr, 0.1),
    "beta1": (float, repr, 0.1),
    "beta2": (float, repr, 1.0),
    "optimizer": (_parse_choice("sgd", "adam"), str, None),
    "lr": (float, repr, None),
    "momentum": (float, repr, 0.9),
    "weight_decay": (float, repr, 0.0005),
    "adam_gamma1": (float, repr, 0.9),
    "adam_gamma2": (float, repr, 0.99),
    "adam_eps": (float, repr, 1e-8),
    "lr_schedule": (_parse_schedule, _fmt_schedule, ((50, 0.2), (100, 0.2), (130, 0.2))),
    "epochs": (int, str, 30),
    "seed": (int, str, 0),
    "bandwidths": (_parse_float_list, _fmt_float_list, (1.0, 3.0, 5.0, 7.0, 9.0)),
    "latent_dim": (int, str, 128),
    "hidden_dims": (_parse_int_list, _fmt_int_list, (512, 256)),
    "label_kernel": (_parse_choice("gaussian", "linear"), str, "gaussian"),
    "labels": (int, str, 100),
    "validation_fraction": (float, repr, 0.0),
    "hard_labels": (_parse_bool, _fmt_bool, False),
    "repeat": (int, str, 1),
}

MODE_MAP = {
    "supervised": Mode.SUPERVISED,
    "semi": Mode.SEMI_SUPERVISED,
    "identity": Mode.IDENTITY_ABLATION,
    "ae-pretrain": Mode.AE_PRETRAIN_ABLATION,
}


def read_config_file(path):
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
            parse = SCHEMA[key][0]
            try:
                values[key] = parse(value) if value != "" else None
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return values


def resolve_settings(args):
    """defaults < config file < flags; returns the full canonical dict."""
    settings = {key: default for key, (_, _, default) in SCHEMA.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in SCHEMA:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
    return settings


def write_resolved(path, settings, mode):
    """Echo the run configuration with optimizer/lr pinned to their resolved
    values, so the file reproduces the run when fed back."""
    config = to_train_config(settings)
    resolved = dict(settings)
    resolved["optimizer"] = config.optimizer_kind(mode)
    resolved["lr"] = config.base_lr(mode)
    lines = []
    for key in sorted(SCHEMA):
        fmt = SCHEMA[key][1]
        value = resolved[key]
        lines.append(f"{key}={'' if value is None else fmt(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def to_train_config(settings) -> TrainConfig:
    config = TrainConfig(
        batch_size=settings["batch_size"],
        lam=settings["lambda"],
        beta=settings["beta"],
        beta1=settings["beta1"],
        beta2=settings["beta2"],
        optimizer=settings["optimizer"],
        lr=settings["lr"],
        momentum=settings["momentum"],
        weight_decay=settings["weight_decay"],
        adam_gamma1=settings["adam_gamma1"],
        adam_gamma2=settings["adam_gamma2"],
        adam_eps=settings["adam_eps"],
        lr_schedule=settings["lr_schedule"],
        epochs=settings["epochs"],
        seed=settings["seed"],
        bandwidths=settings["bandwidths"],
        latent_dim=settings["latent_dim"],
        hidden_dims=settings["hidden_dims"],
        label_kernel=settings["label_kernel"],
        n_labeled=settings["labels"],
        validation_fraction=settings["validation_fraction"],
        hard_labels=settings["hard_labels"],
    )
    config.validate()
    return config


MNIST_STEMS = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def find_mnist(data_dir):
    root = Path(data_dir)
    found = {}
    for part, stem in MNIST_STEMS.items():
        for candidate in (root / stem, root / (stem + ".gz")):
            if candidate.exists():
                found[part] = candidate
                break
        else:
            raise FileNotFoundError(
                f"missing MNIST file {stem}[.gz] under {root} "
                "(see scripts/fetch_mnist.py)"
            )
    return found


def load_datasets(settings):
    """Returns (train_ds, test_ds) for the configured dataset."""
    if settings["dataset"] == "mnist":
        paths = find_mnist(settings["data_dir"])
        train_ds = load_idx(paths["train_images"], paths["train_labels"], name="mnist-train")
        test_ds = load_idx(paths["test_images"], paths["test_labels"], name="mnist-test")
        return train_ds, test_ds
    blobs = synth_blobs(
        settings["blob_classes"], settings["blob_per_class"],
        settings["blob_dim"], settings["blob_spread"], settings["seed"],
    )
    return train_test_split(blobs, settings["test_fraction"], settings["seed"])


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Once(argparse.Action):
    """Reject repeated occurrences of a flag instead of silently keeping the last."""

    def __call__(self, parser, namespace, values, option_string=None):
        seen = getattr(namespace, "_seen_flags", None)
        if seen is None:
            seen = set()
            setattr(namespace, "_seen_flags", seen)
        if self.dest in seen:
            parser.error(f"{option_string} given more than once")
        seen.add(self.dest)
        setattr(namespace, self.dest, values)


def _add_config_flags(parser, keys):
    parser.add_argument("--config", action=_Once, help="key=value config file")
    for key in keys:
        parse = SCHEMA[key][0]
        flag = "--" + key.replace("_", "-")
        if key == "hard_labels":
            parser.add_argument(flag, action=_Once, type=_parse_bool,
                                metavar="BOOL", help="harden predicted labels (diagnostic)")
        else:
            parser.add_argument(flag, action=_Once, type=parse, dest=key,
                                metavar=key.upper())


TRAIN_KEYS = tuple(SCHEMA)
DATA_KEYS = ("dataset", "data_dir", "blob_classes", "blob_per_class",
             "blob_dim", "blob_spread", "test_fraction", "seed")
DIAG_KEYS = DATA_KEYS + ("bandwidths", "lambda", "batch_size")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kln",
        description="Conditional moment-matching classification with a learned kernel.",
        epilog="exit codes: 0 ok, 2 usage/config, 3 file/format, 4 numeric",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training mode end to end")
    _add_config_flags(p_train, TRAIN_KEYS)
    p_train.add_argument("--out", action=_Once, default="runs/latest", help="output directory")
    p_train.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_config_flags(p_eval, DATA_KEYS)
    p_eval.add_argument("--checkpoint", action=_Once, required=True)
    p_eval.add_argument("--split", action=_Once, choices=("train", "test"), default="test")

    p_diag = sub.add_parser("diagnose", help="kernel heat maps, histograms, separation")
    _add_config_flags(p_diag, DIAG_KEYS)
    p_diag.add_argument("--checkpoint", action=_Once, help="encode with this model")
    p_diag.add_argument("--raw", action="store_true", help="identity encoding on raw features")
    p_diag.add_argument("--which", action=_Once, required=True,
                        choices=("heatmap", "histogram", "separation"))
    p_diag.add_argument("--single-class", action=_Once, type=int, dest="single_class")
    p_diag.add_argument("--pairs", action=_Once, type=int, default=10000)
    p_diag.add_argument("--bins", action=_Once, type=int, default=50)
    p_diag.add_argument("--split", action=_Once, choices=("train", "test"), default="test")
    p_diag.add_argument("--out", action=_Once, default="runs/diagnose")
    p_diag.add_argument("--no-figures", action="store_true")

    p_sweep = sub.add_parser("sweep", help="vary one trade-off weight, all else fixed")
    _add_config_flags(p_sweep, TRAIN_KEYS)
    p_sweep.add_argument("--axis", action=_Once, required=True,
                         choices=("beta", "beta1", "beta2"))
    p_sweep.add_argument("--values", action=_Once, required=True,
                         help="comma-separated values for the swept axis")
    p_sweep.add_argument("--out", action=_Once, default="runs/sweep")
    p_sweep.add_argument("--no-figures", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _run_once(settings, mode, out_dir, no_figures):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = to_train_config(settings)
    train_ds, test_ds = load_datasets(settings)

    def show(record):
        print(f"epoch {record.epoch}: cmmd={record.cmmd:.6g} ae={record.ae:.6g} "
              f"conf={record.conf:.6g} lr={record.lr:.6g} test_error={record.test_error:.4f}")

    report, params = train(train_ds, test_ds, config, mode, on_epoch=show)
    write_report(out / "report.csv", report)
    network.save_checkpoint(out / "model.ckpt", params,
                            meta={"mode": mode.value, "dataset": settings["dataset"],
                                  "seed": settings["seed"]})
    write_resolved(out / "resolved.cfg", settings, mode)
    if not no_figures and report.records:
        figures.training_curves(report, out / "train_curves.png")
    final = report.final_test_error
    print(f"final test_error={final!r} best={report.best_test_error!r} "
          f"wall_time={report.wall_time:.1f}s -> {out}")
    return report


def cmd_train(args):
    settings = resolve_settings(args)
    mode = MODE_MAP[settings["mode"]]
    repeat = settings["repeat"]
    if repeat < 1:
        raise ConfigError(f"repeat must be >= 1, got {repeat}")
    if repeat == 1:
        _run_once(settings, mode, args.out, args.no_figures)
        return 0
    errors = []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in range(repeat):
        run_settings = dict(settings, seed=settings["seed"] + r, repeat=1)
        print(f"--- run {r} (seed {run_settings['seed']})")
        report = _run_once(run_settings, mode, out / f"run_{r:02d}", args.no_figures)
        errors.append(report.final_test_error)
    with open(out / "summary.csv", "w") as f:
        f.write("run,seed,final_error\n")
        for r, err in enumerate(errors):
            f.write(f"{r},{settings['seed'] + r},{err!r}\n")
    mean = float(np.mean(errors))
    std = float(np.std(errors))
    print(f"summary: final_error mean={mean:.4f} std={std:.4f} over {repeat} runs")
    return 0


def cmd_eval(args):
    settings = resolve_settings(args)
    params, _meta = network.load_checkpoint(args.checkpoint)
    train_ds, test_ds = load_datasets(settings)
    ds = train_ds if args.split == "train" else test_ds
    error = evaluate(params, ds)
    print(f"test_error={error!r}")
    return 0


def _diag_encode(args):
    if args.raw and args.checkpoint:
        raise ConfigError("--raw and --checkpoint are mutually exclusive")
    if args.raw:
        return None
    if not args.checkpoint:
        raise ConfigError("diagnose needs either --checkpoint or --raw")
    params, _ = network.load_checkpoint(args.checkpoint)
    return lambda x: network.encode(params, x)


def cmd_diagnose(args):
    settings = resolve_settings(args)
    encode = _diag_encode(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = load_datasets(settings)
    ds = train_ds if args.split == "train" else test_ds
    spec = gaussian_mixture(settings["bandwidths"])
    seed = settings["seed"]

    if args.which == "heatmap":
        h, stats = diagnostics.h_heatmap(
            ds, spec, encode, settings["batch_size"], settings["lambda"],
            seed, single_class=args.single_class,
        )
        diagnostics.write_matrix_csv(out / "heatmap.csv", h)
        diagnostics.write_pgm(out / "heatmap.pgm", h)
        if not args.no_figures:
            figures.heatmap_figure(h, out / "heatmap.png")
        print(f"offdiag_mean={stats['offdiag_mean']!r} offdiag_cv={stats['offdiag_cv']!r}")
        return 0

    hist = diagnostics.kernel_histogram(ds, spec, encode, pairs=args.pairs,
                                        bins=args.bins, seed=seed)
    score = diagnostics.separation_score(hist.same_values, hist.diff_values)
    if args.which == "histogram":
        diagnostics.write_histogram_csv(out / "histogram.csv", hist)
        if not args.no_figures:
            figures.histogram_figure(hist, out / "histogram.png")
    (out / "separation.txt").write_text(f"separation_score={score!r}\n")
    print(f"separation_score={score!r}")
    return 0


def cmd_sweep(args):
    settings = resolve_settings(args)
    mode = MODE_MAP[settings["mode"]]
    values = [float(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    errors = []
    for value in values:
        run_settings = dict(settings)
        run_settings[args.axis] = value
        run_dir = out / f"{args.axis}_{value:g}"
        print(f"--- {args.axis}={value:g}")
        report = _run_once(run_settings, mode, run_dir, args.no_figures)
        errors.append(report.final_test_error)
    with open(out / "sweep.csv", "w") as f:
        f.write(f"{args.axis},final_error\n")
        for value, err in zip(values, errors):
            f.write(f"{value!r},{err!r}\n")
    if not args.no_figures:
        figures.sweep_curve(args.axis, values, errors, out / "sweep.png")
    for value, err in zip(values, errors):
        print(f"{args.axis}={value:g} final_error={err!r}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IdxFormatError, CheckpointError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NotPositiveDefiniteError, NonFiniteError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
