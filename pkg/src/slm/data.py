"""Datasets: CSV I/O, splitting and normalization, label binning, synthetic benchmark."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from slm.errors import InvalidInputError

SPLITS = ("train", "val", "test")
N_BLOCKS = 5


@dataclass
class Dataset:
    """Dense features with class-index or real labels.

    ``split`` holds one of ``"train"``/``"val"``/``"test"`` per sample once
    :func:`normalize_split` has run.  ``salient`` lists the informative columns
    when they are known (synthetic data).
    """

    x: np.ndarray
    y: np.ndarray
    task: str = "classification"
    feature_names: list[str] = field(default_factory=list)
    label_name: str = "label"
    class_values: np.ndarray | None = None
    split: np.ndarray | None = None
    feature_mean: np.ndarray | None = None
    feature_sd: np.ndarray | None = None
    label_mean: float = 0.0
    label_sd: float = 1.0
    salient: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise InvalidInputError(f"feature matrix must be 2-D, got shape {self.x.shape}")
        if self.task not in ("classification", "regression"):
            raise InvalidInputError(f"unknown task {self.task!r}")
        self.y = np.asarray(self.y, dtype=np.int64 if self.task == "classification" else np.float64)
        if self.y.shape != (self.x.shape[0],):
            raise InvalidInputError("label vector length does not match sample count")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.x.shape[1])]
        if len(self.feature_names) != self.x.shape[1]:
            raise InvalidInputError("feature name count does not match column count")
        if not np.all(np.isfinite(self.x)) or (self.task == "regression" and not np.all(np.isfinite(self.y))):
            raise InvalidInputError("dataset contains NaN or infinite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task != "classification":
            return 1
        if self.class_values is not None:
            return len(self.class_values)
        return int(self.y.max()) + 1 if self.y.size else 0

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if self.split is None:
            raise InvalidInputError("dataset has not been split")
        if name not in SPLITS:
            raise InvalidInputError(f"unknown split {name!r}")
        sel = self.split == name
        return self.x[sel], self.y[sel]

    def columns(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        salient = None
        if self.salient is not None:
            salient = np.flatnonzero(np.isin(idx, self.salient))
        return replace(
            self,
            x=self.x[:, idx],
            feature_names=[self.feature_names[j] for j in idx],
            feature_mean=None if self.feature_mean is None else self.feature_mean[idx],
            feature_sd=None if self.feature_sd is None else self.feature_sd[idx],
            salient=salient,
        )


# --- CSV ---------------------------------------------------------------------


def load_csv(path, label_column: str, task: str = "classification") -> Dataset:
    """Read a comma-separated file with a header row.

    Every cell must parse as a float.  Classification labels are mapped to
    ``0..c-1`` in sorted order of their values.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InvalidInputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise InvalidInputError(f"{path}: label column {label_column!r} not in header")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}"
                )
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise InvalidInputError(
                        f"{path}: row {line_no}, column {col!r}: cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(v):
                    raise InvalidInputError(f"{path}: row {line_no}, column {col!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    li = header.index(label_column)
    feats = [j for j in range(len(header)) if j != li]
    raw_y = table[:, li]
    class_values = None
    if task == "classification":
        class_values, y = np.unique(raw_y, return_inverse=True)
    else:
        y = raw_y
    return Dataset(
        x=table[:, feats],
        y=y,
        task=task,
        feature_names=[header[j] for j in feats],
        label_name=label_column,
        class_values=class_values,
    )


def write_csv(ds: Dataset, path) -> None:
    """Write features and label; floats use the shortest round-tripping repr."""
    if ds.task == "classification":
        raw = ds.class_values[ds.y] if ds.class_values is not None else ds.y
        labels = [repr(float(v)) for v in raw]
    else:
        labels = [repr(float(v)) for v in ds.y]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.feature_names, ds.label_name])
        for row, lab in zip(ds.x, labels):
            w.writerow([*(repr(float(v)) for v in row), lab])


# --- splitting and normalization ---------------------------------------------


def split_sizes(n: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise InvalidInputError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def normalize_split(ds: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> Dataset:
    """Shuffle into train/val/test and standardize with train statistics.

    Constant training columns get sd 1 (so they become 0).  Regression
    labels are standardized the same way.
    """
    n_train, n_val, _ = split_sizes(ds.n, fractions)
    if n_train == 0:
        raise InvalidInputError("training split is empty")
    perm = np.random.default_rng(seed).permutation(ds.n)
    split = np.empty(ds.n, dtype=object)
    split[perm[:n_train]] = "train"
    split[perm[n_train : n_train + n_val]] = "val"
    split[perm[n_train + n_val :]] = "test"
    split = split.astype(str)
    train = split == "train"
    mean = ds.x[train].mean(axis=0)
    sd = ds.x[train].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    x = (ds.x - mean) / sd
    y, lm, ls = ds.y, 0.0, 1.0
    if ds.task == "regression":
        lm = float(ds.y[train].mean())
        ls = float(ds.y[train].std()) or 1.0
        y = (ds.y - lm) / ls
    return replace(ds, x=x, y=y, split=split, feature_mean=mean, feature_sd=sd, label_mean=lm, label_sd=ls)


def bin_labels(y, k: int = 10, reference=None) -> np.ndarray:
    """Equal-frequency bins of ``y`` with edges from the quantiles of ``reference``.

    ``reference`` defaults to ``y`` itself; pass the training labels to bin
    other splits consistently.
    """
    y = np.asarray(y, dtype=np.float64)
    if k < 1:
        raise InvalidInputError("need at least one bin")
    ref = y if reference is None else np.asarray(reference, dtype=np.float64)
    if k == 1:
        return np.zeros(y.shape, dtype=np.int64)
    edges = np.quantile(ref, np.arange(1, k) / k)
    return np.searchsorted(edges, y, side="right").astype(np.int64)


# --- synthetic benchmark -----------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic binary task where only the first ``5 * group_size`` columns matter.

    ``threshold`` is subtracted from the score ``T1 + ... + T5``; ``None``
    uses the median noiseless score of the generated sample, which balances
    the classes.  A fixed value of 3.0 is the literal constant of the
    original benchmark and yields mostly positive labels.
    """

    group_size: int = 20
    n_features: int = 3000
    n_samples: int = 5000
    noise_scale: float = 0.2
    seed: int = 0
    threshold: float | None = None
    permute_columns: bool = False

    def __post_init__(self):
        if self.group_size < 1:
            raise InvalidInputError("group size must be positive")
        if N_BLOCKS * self.group_size > self.n_features:
            raise InvalidInputError(
                f"{N_BLOCKS} x group size {self.group_size} exceeds {self.n_features} features"
            )
        if self.n_samples < 1:
            raise InvalidInputError("need at least one sample")


def synth_scores(x_salient: np.ndarray, group_size: int) -> np.ndarray:
    """The five block scores T1..T5 (n x 5) from the salient columns."""
    L = group_size
    blocks = [x_salient[:, i * L : (i + 1) * L] for i in range(N_BLOCKS)]
    return np.column_stack(
        [
            np.exp(blocks[0]).mean(axis=1),
            np.exp(np.abs(np.sin(2.0 * np.pi * blocks[1])).mean(axis=1)),
            (-np.log(1.1 + blocks[2])).mean(axis=1),
            blocks[3].mean(axis=1),
            1.0 / (1.0 + np.abs(np.tanh(blocks[4])).mean(axis=1)),
        ]
    )


def synth_generate(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    n_sal = N_BLOCKS * cfg.group_size
    x = rng.uniform(-1.0, 1.0, size=(cfg.n_samples, cfg.n_features))
    eps = rng.standard_normal(cfg.n_samples)
    score = synth_scores(x[:, :n_sal], cfg.group_size).sum(axis=1)
    threshold = float(np.median(score)) if cfg.threshold is None else cfg.threshold
    y = (score - threshold + cfg.noise_scale * eps > 0).astype(np.int64)
    names = [f"s{j // cfg.group_size + 1}_{j % cfg.group_size}" for j in range(n_sal)]
    names += [f"noise_{j}" for j in range(cfg.n_features - n_sal)]
    salient = np.arange(n_sal)
    if cfg.permute_columns:
        perm = rng.permutation(cfg.n_features)
        x = x[:, perm]
        names = [names[j] for j in perm]
        salient = np.sort(np.flatnonzero(perm < n_sal))
    return Dataset(
        x=x,
        y=y,
        task="classification",
        feature_names=names,
        class_values=np.array([0.0, 1.0]),
        salient=salient,
    )
