"""Command-line front end: ``slm synth | train | compare | ablate``.

Every command writes its outputs into one directory together with a
``manifest.json`` describing the run.  Tables are UTF-8 TSV files whose
first line is ``# manifest <hash>``.  Failures print a single line

    error: <kind>: <message>

to stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import fields, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from slm import baselines, net
from slm.data import Dataset, SynthConfig, load_csv, normalize_split, synth_generate, write_csv
from slm.errors import SLMError
from slm.train import ABLATION_CELLS, TrainConfig, config_dict, run_ablation, train_slm

OUTPUT_ENV = "SLM_OUTPUT_DIR"
DEFAULT_OUTPUT = "slm_out"

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4

COMPARE_METHODS = {
    "Fisher": "fisher",
    "AnovaF": "anova",
    "BinnedMI": "binned_mi",
    "LinearCoef": "linear",
}

# flag dest -> TrainConfig field
TRAIN_FLAGS = {
    "target_features": "target_features",
    "tempering": "tempering",
    "mi_enabled": "mi_enabled",
    "rcs_enabled": "rcs_enabled",
    "hsic_enabled": "hsic_enabled",
    "scaling": "scaling",
    "mi_weight": "mi_weight",
    "n_epochs": "n_epochs",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "hidden_units": "hidden_units",
    "n_layers": "n_layers",
    "seed": "seed",
}


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# --- output helpers ----------------------------------------------------------


def write_atomic(path, data: bytes) -> Path:
    """Write ``data`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def tsv_bytes(manifest_hash: str, header: list[str], rows) -> bytes:
    lines = [f"# manifest {manifest_hash}", "\t".join(header)]
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_tsv(path) -> tuple[str, list[str], list[list[str]]]:
    """Inverse of :func:`tsv_bytes`: (manifest hash, header, rows as strings)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith("# manifest "):
            raise SLMError(f"{path}: missing manifest header line")
        header = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    return first.split()[-1], header, rows


class Run:
    """Collects outputs of one command and writes the manifest last."""

    def __init__(self, command: str, out_dir: Path, config: dict, seed, inputs: list[str]):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.inputs = inputs
        self.outputs: list[str] = []
        self.started = time.perf_counter()
        ident = {
            "command": command,
            "config": config,
            "seed": seed,
            "inputs": inputs,
            "version": _version(),
        }
        self.hash = hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()[:16]

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def add(self, name: str) -> Path:
        # created on first write, so a run that fails early leaves nothing behind
        if not self.outputs:
            try:
                self.out_dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise CLIError("output", f"cannot create output directory {self.out_dir}: {exc.strerror}", EXIT_INPUT) from None
        self.outputs.append(name)
        return self.path(name)

    def tsv(self, name: str, header, rows) -> Path:
        return write_atomic(self.add(name), tsv_bytes(self.hash, list(header), rows))

    def finish(self) -> Path:
        manifest = {
            "manifest_hash": self.hash,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "output_dir": str(self.out_dir),
            "version": _version(),
            "duration_s": round(time.perf_counter() - self.started, 3),
        }
        return write_atomic(self.path("manifest.json"), (json.dumps(manifest, indent=2) + "\n").encode())


def _plotting():
    # figures are optional: the numerical core never needs matplotlib
    try:
        from slm import plotting
    except ImportError:
        print("warning: matplotlib is not installed; skipping figures", file=sys.stderr)
        return None
    return plotting


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


# --- configuration -----------------------------------------------------------


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise CLIError("input", f"config file {path} not found", EXIT_INPUT) from None
    except json.JSONDecodeError as exc:
        raise CLIError("config", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(values, dict):
        raise CLIError("config", f"{path}: top level must be a JSON object")
    types = {f.name: f.type for f in fields(TrainConfig)}
    for key, val in values.items():
        if key not in types:
            raise CLIError("config", f"{path}: unknown key {key!r}; valid keys: {', '.join(sorted(types))}")
        want = types[key]
        ok = {
            "int": isinstance(val, int) and not isinstance(val, bool),
            "float": isinstance(val, (int, float)) and not isinstance(val, bool),
            "bool": isinstance(val, bool),
            "str": isinstance(val, str),
            "int | None": val is None or (isinstance(val, int) and not isinstance(val, bool)),
        }.get(want, True)
        if not ok:
            raise CLIError("config", f"{path}: key {key!r} expects {want}, got {type(val).__name__}")
    return values


def resolve_config(args) -> TrainConfig:
    """Merge defaults, the optional config file and explicit flags (in that order)."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for dest, name in TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    try:
        return TrainConfig.from_dict(values)
    except SLMError as exc:
        raise CLIError("config", str(exc)) from None


# --- datasets ----------------------------------------------------------------


def _synth_config(args, seed: int) -> SynthConfig:
    return SynthConfig(
        group_size=args.L,
        n_features=args.features,
        n_samples=args.samples,
        noise_scale=args.noise,
        seed=seed,
        threshold=args.threshold,
        permute_columns=args.permute,
    )


def _dataset(args, seed: int) -> Dataset:
    if args.data:
        if not Path(args.data).is_file():
            raise CLIError("input", f"dataset {args.data} not found", EXIT_INPUT)
        ds = load_csv(args.data, args.label, args.task)
    else:
        ds = synth_generate(_synth_config(args, seed))
    return normalize_split(ds, seed=seed)


def _data_desc(args) -> dict:
    if args.data:
        return {"data": str(args.data), "label": args.label, "task": args.task}
    return {
        "synthetic": {
            "L": args.L,
            "features": args.features,
            "samples": args.samples,
            "noise": args.noise,
            "threshold": args.threshold,
            "permute": args.permute,
        }
    }


# --- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    cfg = _synth_config(args, args.seed)
    run = Run("synth", out, {k: getattr(cfg, k) for k in ("group_size", "n_features", "n_samples", "noise_scale", "threshold", "permute_columns")}, args.seed, [])
    ds = synth_generate(cfg)
    path = run.add(args.name)
    tmp = path.with_name(f".{path.name}.tmp")
    write_csv(ds, tmp)
    os.replace(tmp, path)
    run.tsv("salient.tsv", ["index", "name"], [(int(j), ds.feature_names[j]) for j in ds.salient])
    run.finish()
    print(path)
    return 0


def _history_rows(report):
    for r in report.loss_history:
        yield (
            r.step,
            r.epoch,
            r.target_count,
            r.support_size,
            r.learning_rate,
            r.loss.task_loss,
            r.loss.mi_error,
            r.loss.r_cs,
            r.loss.combined,
            r.degenerate,
        )


HISTORY_HEADER = [
    "step",
    "epoch",
    "target_count",
    "support_size",
    "learning_rate",
    "task_loss",
    "mi_error",
    "r_cs",
    "combined",
    "degenerate",
]


def _metric_rows(metrics: dict) -> list[tuple]:
    return [(split, name, value) for split, vals in metrics.items() for name, value in vals.items()]


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    run = Run("train", out, {**config_dict(cfg), **_data_desc(args)}, cfg.seed, [args.data] if args.data else [])
    ds = _dataset(args, cfg.seed)
    report = train_slm(ds, cfg)
    run.tsv("metrics.tsv", ["split", "metric", "value"], _metric_rows(report.metrics))
    run.tsv(
        "selection.tsv",
        ["rank", "index", "name", "weight", "selected"],
        [
            (rank, j, ds.feature_names[j], float(report.mask_probs[j]), report.mask_probs[j] > 0)
            for rank, j in enumerate(report.ranking)
        ],
    )
    run.tsv("losses.tsv", HISTORY_HEADER, _history_rows(report))
    ckpt = run.add("model.npz")
    tmp = ckpt.with_name(".model.tmp.npz")
    net.save_checkpoint(tmp, report.model, extra={"mask_argument": report.mask.argument, "mask_weights": report.mask_probs})
    os.replace(tmp, ckpt)
    plotting = _plotting() if args.plots else None
    if plotting is not None:
        hist = np.array([row[:9] for row in _history_rows(report)], dtype=np.float64)
        losses = {"task": hist[:, 5], "combined": hist[:, 8]}
        if cfg.mi_active:
            losses["mi_error"] = hist[:, 6]
            losses["r_cs"] = hist[:, 7]
        plotting.plot_loss_history(hist[:, 0], losses, hist[:, 3], hist[:, 2], run.add("losses.png"))
        plotting.plot_mask(report.mask_probs, run.add("mask.png"), ds.salient)
    run.finish()
    summary = {s: m for s, m in report.metrics.items() if m}
    line = {"selected": len(report.selected_indices), "test": summary.get("test", {})}
    if ds.salient is not None:
        line["salient"] = report.salient_recovered(ds.salient)
    print(json.dumps(line))
    return 0


def _main_metric(ds: Dataset) -> str:
    return "accuracy" if ds.task == "classification" else "mae"


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    run = Run("compare", out, {**config_dict(cfg), **_data_desc(args), "k": args.k, "seeds": seeds}, cfg.seed, [args.data] if args.data else [])
    rows = []
    metric = None
    for seed in seeds:
        ds = _dataset(args, seed)
        metric = _main_metric(ds)
        c = replace(cfg, seed=seed)
        for k in args.k:
            if not 1 <= k <= ds.d:
                raise CLIError("config", f"k={k} outside [1, {ds.d}]")
            selections = {"SLM": None}
            for label, method in COMPARE_METHODS.items():
                selections[label] = baselines.select(method, ds, k)
            selections["RandomK"] = baselines.random_k(ds.d, k, seed)
            for label, idx in selections.items():
                if idx is None:
                    rep = train_slm(ds, replace(c, target_features=k))
                    idx = np.asarray(rep.selected_indices)
                    test = rep.metrics["test"]
                else:
                    test = baselines.evaluate_selection(ds, idx, c)["test"]
                sal = "" if ds.salient is None else int(np.isin(idx, ds.salient).sum())
                rows.append((seed, k, label, len(idx), sal, test.get(metric, float("nan")), test.get("auc", "")))
        full = baselines.evaluate_selection(ds, np.arange(ds.d), c)["test"]
        rows.append((seed, ds.d, "AllFeatures", ds.d, "" if ds.salient is None else len(ds.salient), full.get(metric), full.get("auc", "")))
    header = ["seed", "k", "method", "n_selected", "salient", f"test_{metric}", "test_auc"]
    run.tsv("compare.tsv", header, rows)

    summary: dict[str, dict[int, float]] = {}
    for seed, k, label, *_, value, _auc in rows:
        summary.setdefault(label, {}).setdefault(k, []).append(value)
    means = {m: {k: float(np.mean(v)) for k, v in per.items()} for m, per in summary.items()}
    run.tsv(
        "compare_summary.tsv",
        ["method", "k", f"mean_test_{metric}", "n_seeds"],
        [(m, k, v, len(summary[m][k])) for m, per in means.items() for k, v in per.items()],
    )
    plotting = _plotting() if args.plots else None
    if plotting is not None:
        bars = {m: per for m, per in means.items() if m != "AllFeatures"}
        plotting.plot_compare(bars, metric, run.add("compare.png"))
    run.finish()
    print(json.dumps({m: {str(k): round(v, 4) for k, v in per.items()} for m, per in means.items()}))
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    run = Run("ablate", out, {**config_dict(cfg), **_data_desc(args), "seeds": seeds}, cfg.seed, [args.data] if args.data else [])
    rows = []
    values: dict[str, list[float]] = {c: [] for c in ABLATION_CELLS}
    metric = None
    for seed in seeds:
        ds = _dataset(args, seed)
        metric = _main_metric(ds)
        result = run_ablation(ds, replace(cfg, seed=seed), seeds=[seed])
        for cell, reps in result.reports.items():
            rep = reps[0]
            flags = ABLATION_CELLS[cell]
            v = rep.metrics["test"][metric]
            values[cell].append(v)
            sal = "" if ds.salient is None else rep.salient_recovered(ds.salient)
            rows.append((seed, cell, flags["mi_enabled"], flags["tempering"], v, sal))
    run.tsv("ablation.tsv", ["seed", "cell", "mi", "tempering", f"test_{metric}", "salient"], rows)
    summary = {
        c: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0) for c, v in values.items()
    }
    run.tsv(
        "ablation_summary.tsv",
        ["cell", f"mean_test_{metric}", "sd", "n_seeds"],
        [(c, m, s, len(seeds)) for c, (m, s) in summary.items()],
    )
    plotting = _plotting() if args.plots else None
    if plotting is not None:
        plotting.plot_ablation(summary, metric, run.add("ablation.png"))
    run.finish()
    print(json.dumps({c: round(m, 4) for c, (m, _) in summary.items()}))
    return 0


# --- parser ------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_common(p):
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def _add_synth_flags(p, seed: bool):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--L", type=_positive_int, default=20, help="features per salient block")
    g.add_argument("--features", type=_positive_int, default=3000)
    g.add_argument("--samples", type=_positive_int, default=5000)
    g.add_argument("--noise", type=float, default=0.2)
    g.add_argument("--threshold", type=float, default=None, help="label threshold (default: median score)")
    g.add_argument("--permute", action="store_true", help="shuffle column order")
    if seed:
        g.add_argument("--seed", type=int, default=0)


def _add_data_flags(p):
    g = p.add_argument_group("input data")
    g.add_argument("--data", help="CSV file with a header row; synthetic data when omitted")
    g.add_argument("--label", default="label", help="label column name")
    g.add_argument("--task", choices=("classification", "regression"), default="classification")
    _add_synth_flags(p, seed=False)


def _add_train_flags(p):
    g = p.add_argument_group("training (flags override --config)")
    g.add_argument("--config", help="JSON file of training settings")
    g.add_argument("--target-features", dest="target_features", type=_positive_int)
    g.add_argument("--no-tempering", dest="tempering", action="store_const", const=False)
    g.add_argument("--no-mi", dest="mi_enabled", action="store_const", const=False)
    g.add_argument("--no-rcs", dest="rcs_enabled", action="store_const", const=False)
    g.add_argument("--hsic", dest="hsic_enabled", action="store_const", const=True)
    g.add_argument("--no-scaling", dest="scaling", action="store_const", const=False)
    g.add_argument("--mi-weight", dest="mi_weight", type=float)
    g.add_argument("--epochs", dest="n_epochs", type=_positive_int)
    g.add_argument("--batch", dest="batch_size", type=_positive_int)
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--hidden", dest="hidden_units", type=_positive_int)
    g.add_argument("--layers", dest="n_layers", type=_positive_int)
    g.add_argument("--seed", type=int)
    g.add_argument("--no-plots", dest="plots", action="store_false", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slm", description="Sparse learnable masks for feature selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic benchmark as CSV")
    _add_common(p)
    _add_synth_flags(p, seed=True)
    p.add_argument("--name", default="synth.csv", help="output file name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a mask and predictor")
    _add_common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="SLM against filter baselines at one or more k")
    _add_common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--k", type=_positive_int, nargs="+", default=[50])
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of consecutive seeds")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="MI on/off x tempering on/off grid")
    _add_common(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of consecutive seeds")
    p.set_defaults(func=cmd_ablate)
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return exc.code
    except SLMError as exc:
        kind = "input" if isinstance(exc, ValueError) else "runtime"
        print(f"error: {kind}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INPUT if kind == "input" else EXIT_RUNTIME
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
