"""End-to-end training of the learnable sparse mask together with the MLP."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.stats import rankdata

from slm import net
from slm.data import Dataset
from slm.errors import InvalidInputError, TrainingDivergedError
from slm.mask import MaskState, TemperingSchedule, apply_mask, refresh_mask
from slm.miloss import LossBreakdown, PredictionBatch, hsic_terms, miloss_gradients
from slm.simplex import sparsemax_jvp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 0.003
    decay_steps: int = 1000
    decay_rate: float = 0.95
    hidden_units: int = 50
    n_layers: int = 1
    target_features: int = 50
    tempering: bool = True
    n_tmp: int | None = None
    mi_weight: float = 1.0
    mi_enabled: bool = True
    hsic_enabled: bool = False
    rcs_enabled: bool = True
    rcs_reduction: str = "mean"
    rcs_support_only: bool = True
    scaling: bool = True
    mask_gradient: str = "both"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_epochs", "batch_size", "decay_steps", "hidden_units", "n_layers", "target_features"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.learning_rate <= 0 or not 0 < self.decay_rate <= 1:
            raise InvalidInputError("learning rate must be positive and decay rate in (0, 1]")
        if self.mi_weight < 0:
            raise InvalidInputError("mi_weight must be non-negative")
        if self.rcs_reduction not in ("sum", "mean"):
            raise InvalidInputError("rcs_reduction must be 'sum' or 'mean'")
        if self.mask_gradient not in ("both", "task", "mi"):
            raise InvalidInputError("mask_gradient must be 'both', 'task' or 'mi'")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    @property
    def mi_active(self) -> bool:
        return self.mi_enabled and self.mi_weight > 0

    def ablation_flags(self) -> dict:
        return {
            "mi": self.mi_active,
            "tempering": self.tempering,
            "hsic": self.hsic_enabled,
            "rcs": self.rcs_enabled,
            "scaling": self.scaling,
        }


@dataclass
class StepRecord:
    step: int
    epoch: int
    target_count: int
    support_size: int
    learning_rate: float
    loss: LossBreakdown
    degenerate: bool = False


@dataclass
class SelectionReport:
    """Outcome of one training run.

    ``selected_indices`` is always the support of the final sparse mask.
    ``model`` and ``mask`` carry the trained state and are not serialized
    with the report.
    """

    selected_indices: list[int]
    mask_probs: np.ndarray
    ranking: list[int]
    metrics: dict[str, dict[str, float]]
    loss_history: list[StepRecord]
    ablation_flags: dict
    config: TrainConfig
    feature_names: list[str] = field(default_factory=list)
    model: net.Predictor | None = field(default=None, repr=False)
    mask: MaskState | None = field(default=None, repr=False)

    def salient_recovered(self, salient) -> int:
        return int(np.isin(self.selected_indices, salient).sum())


# --- metrics -----------------------------------------------------------------


def accuracy(pred_labels, labels) -> float:
    return float(np.mean(np.asarray(pred_labels) == np.asarray(labels)))


def roc_auc(scores, labels) -> float:
    """Binary AUC as the normalized Mann-Whitney statistic (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def predict(model: net.Predictor, x, mask_values=None) -> np.ndarray:
    if mask_values is not None:
        x = apply_mask(x, mask_values)
    out, _ = net.forward(model, x)
    return out


def evaluate(model: net.Predictor, mask_values, ds: Dataset, split: str) -> dict[str, float]:
    """Accuracy (and AUC for binary tasks) or MAE on standardized labels."""
    x, y = ds.part(split)
    if len(y) == 0:
        return {}
    out = predict(model, x, mask_values)
    if ds.task == "classification":
        metrics = {"accuracy": accuracy(out.argmax(axis=1), y)}
        if out.shape[1] == 2:
            metrics["auc"] = roc_auc(out[:, 1], y)
        return metrics
    return {"mae": net.mae(out, y)}


# --- training loop -----------------------------------------------------------


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def _schedule_step(t: int, spe: int, n_total: int) -> int:
    # evaluate the schedule at the epoch midpoint, so a plateau boundary
    # inside an epoch moves to the nearer epoch boundary
    return min((t // spe) * spe + spe // 2, n_total)


def batch_objective(
    model: net.Predictor,
    mask: MaskState | None,
    xb: np.ndarray,
    yb: np.ndarray,
    cfg: TrainConfig,
    y_embed: np.ndarray | None = None,
) -> tuple[LossBreakdown, list[np.ndarray], np.ndarray | None]:
    """Combined loss of one batch and its gradients.

    Returns the loss breakdown, gradients for ``model.params()`` and the
    gradient for the mask argument (``None`` without a mask).  The scaling
    multiplier in ``mask`` is treated as a constant.  ``y_embed`` (one-hot
    or column labels) is needed only for the HSIC variant.
    """
    classification = model.output == "softmax"
    xin = xb if mask is None else apply_mask(xb, mask.sparse)
    out, cache = net.forward(model, xin)
    if classification:
        task_loss = net.cross_entropy(out, yb)
        g_task = net.cross_entropy_grad_logits(out, yb)
        batch = PredictionBatch(labels=yb, probs=out)
    else:
        task_loss = net.mae(out, yb)
        g_task = net.mae_grad(out, yb)
        batch = PredictionBatch(labels=yb, outputs=out)

    mi_on = mask is not None and cfg.mi_active
    mi_error = r_cs = 0.0
    g_mi_out = g_p = g_arg_direct = None
    if mi_on and cfg.hsic_enabled:
        if y_embed is None:
            y_embed = np.eye(model.n_outputs)[yb] if classification else np.asarray(yb)[:, None]
        h = hsic_terms(xb * mask.argument, y_embed)
        mi_error = h.value
        g_arg_direct = cfg.mi_weight * np.sum(xb * h.grad_x, axis=0)
    elif mi_on:
        mg = miloss_gradients(
            xb,
            batch,
            mask.sparse.values,
            rcs=cfg.rcs_enabled,
            support_only=cfg.rcs_support_only,
            reduction=cfg.rcs_reduction,
        )
        mi_error, r_cs = mg.mi_error, mg.r_cs
        g_mi_out = cfg.mi_weight * (net.softmax_backward(out, mg.grad_pred) if classification else mg.grad_pred)
        g_p = cfg.mi_weight * mg.grad_p

    loss = LossBreakdown.combine(task_loss, mi_error, r_cs, cfg.mi_weight if mi_on else 0.0)
    g_out = g_task if g_mi_out is None else g_task + g_mi_out
    grads = net.backward(model, cache, g_out)
    g_arg = None
    if mask is not None:
        g_arg = _mask_argument_grad(model, cache, mask, xb, grads, g_task, g_mi_out, g_p, cfg)
        if g_arg_direct is not None and cfg.mask_gradient != "task":
            g_arg = g_arg + g_arg_direct
    return loss, grads.params(), g_arg


def _loop(ds: Dataset, cfg: TrainConfig, use_mask: bool):
    x_train, y_train = ds.part("train")
    n_train, d = x_train.shape
    if n_train == 0:
        raise InvalidInputError("training split is empty")
    if use_mask and cfg.target_features > d:
        raise InvalidInputError(f"target_features {cfg.target_features} exceeds {d} features")
    classification = ds.task == "classification"
    rng = np.random.default_rng(cfg.seed)
    model = net.Predictor.init(
        d,
        ds.n_classes if classification else 1,
        cfg.hidden_units,
        cfg.n_layers,
        "softmax" if classification else "linear",
        rng,
    )
    opt = net.Adam(cfg.learning_rate, cfg.decay_steps, cfg.decay_rate)
    spe = steps_per_epoch(n_train, cfg.batch_size)
    n_total = cfg.n_epochs * spe
    schedule = None
    if use_mask and cfg.tempering:
        n_tmp = n_total // 2 if cfg.n_tmp is None else cfg.n_tmp
        schedule = TemperingSchedule(d, cfg.target_features, n_total, n_tmp)
    elif use_mask:
        schedule = TemperingSchedule.constant(cfg.target_features, n_total)
    mask = MaskState.initial(d)
    y_embed = None
    if use_mask and cfg.mi_active and cfg.hsic_enabled:
        y_embed = np.eye(ds.n_classes)[y_train] if classification else y_train[:, None]

    def y_embed_b(idx):
        return None if y_embed is None else y_embed[idx]

    history: list[StepRecord] = []
    t = 0
    for epoch in range(cfg.n_epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if use_mask:
                mask = refresh_mask(mask, _schedule_step(t, spe, n_total), schedule, cfg.scaling)
            loss, gparams, g_arg = batch_objective(model, mask if use_mask else None, xb, yb, cfg, y_embed_b(idx))
            if not math.isfinite(loss.combined):
                raise TrainingDivergedError(
                    f"non-finite loss at step {t} (epoch {epoch}): task={loss.task_loss} "
                    f"mi={loss.mi_error} r_cs={loss.r_cs}"
                )
            params = model.params()
            if use_mask:
                params = params + [mask.argument]
                gparams = gparams + [g_arg]

            history.append(
                StepRecord(
                    step=t,
                    epoch=epoch,
                    target_count=mask.target_count if use_mask else d,
                    support_size=mask.sparse.k if use_mask else d,
                    learning_rate=opt.learning_rate(),
                    loss=loss,
                    degenerate=mask.degenerate if use_mask else False,
                )
            )
            opt.update(params, gparams)
            t += 1

    if use_mask:
        # freeze at the final target for evaluation
        mask = refresh_mask(mask, n_total, schedule, cfg.scaling)
    return model, opt, mask, history


def _mask_argument_grad(model, cache, mask, xb, grads, g_task, g_mi_out, g_p, cfg) -> np.ndarray:
    """Chain the loss gradient to the mask argument (scaling multiplier held fixed)."""
    if cfg.mask_gradient == "both":
        g_in = grads.inputs
    elif cfg.mask_gradient == "task":
        g_in = net.backward(model, cache, g_task).inputs
    else:
        g_in = None if g_mi_out is None else net.backward(model, cache, g_mi_out).inputs
    g_msp = np.zeros(xb.shape[1]) if g_in is None else np.sum(xb * g_in, axis=0)
    if g_p is not None and cfg.mask_gradient != "task":
        g_msp = g_msp + g_p
    return mask.multiplier * sparsemax_jvp(mask.sparse, g_msp)


def _all_metrics(model, mask_values, ds: Dataset) -> dict[str, dict[str, float]]:
    return {s: evaluate(model, mask_values, ds, s) for s in ("train", "val", "test")}


def train_slm(ds: Dataset, cfg: TrainConfig) -> SelectionReport:
    """Jointly learn the sparse feature mask and the predictor."""
    if ds.split is None:
        raise InvalidInputError("dataset must be split (see normalize_split) before training")
    model, _, mask, history = _loop(ds, cfg, use_mask=True)
    probs = mask.sparse.values
    ranking = np.argsort(-probs, kind="stable")
    return SelectionReport(
        selected_indices=[int(i) for i in mask.sparse.support],
        mask_probs=probs.copy(),
        ranking=[int(i) for i in ranking],
        metrics=_all_metrics(model, probs, ds),
        loss_history=history,
        ablation_flags=cfg.ablation_flags(),
        config=cfg,
        feature_names=list(ds.feature_names),
        model=model,
        mask=mask,
    )


def train_predictor(ds: Dataset, cfg: TrainConfig, columns=None):
    """Plain MLP (no mask, no MI term) on ``columns`` of ``ds``; returns (model, metrics, history)."""
    sub = ds if columns is None else ds.columns(columns)
    if sub.d == 0:
        raise InvalidInputError("no feature columns selected")
    model, _, _, history = _loop(sub, replace(cfg, mi_enabled=False), use_mask=False)
    return model, _all_metrics(model, None, sub), history


# --- ablation ----------------------------------------------------------------

ABLATION_CELLS = {
    "full": dict(mi_enabled=True, tempering=True),
    "no_mi": dict(mi_enabled=False, tempering=True),
    "no_tempering": dict(mi_enabled=True, tempering=False),
    "neither": dict(mi_enabled=False, tempering=False),
}


@dataclass
class AblationResult:
    reports: dict[str, list[SelectionReport]]
    seeds: list[int]

    def summary(self, split: str = "test", metric: str | None = None) -> dict[str, tuple[float, float]]:
        out = {}
        for cell, reps in self.reports.items():
            m = metric or next(iter(reps[0].metrics[split]))
            vals = np.array([r.metrics[split][m] for r in reps])
            out[cell] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
        return out


def run_ablation(ds: Dataset, cfg: TrainConfig, seeds=(0, 1, 2), cells=tuple(ABLATION_CELLS)) -> AblationResult:
    """Train each {MI on/off} x {tempering on/off} cell over ``seeds``."""
    reports = {}
    for cell in cells:
        reports[cell] = [train_slm(ds, replace(cfg, seed=s, **ABLATION_CELLS[cell])) for s in seeds]
    return AblationResult(reports, list(seeds))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
