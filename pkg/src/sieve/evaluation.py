"""Experiment protocols: stochastic accuracy, privacy/accuracy sweeps,
attribute-inference adversaries, fairness gaps and the black-box workflow."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import LabeledDataset, split_disjoint
from .infotheory import mi_loss_percent
from .nn import Model, TrainConfig, build_model, predict, train_classifier
from .noise_map import NoiseMap, NoiseTrainConfig, train_noise_map
from .suppression import SiftPlan, SuppressionConfig, build_plan, sift

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    task: str
    scheme: str
    suppression_ratio: float
    mean_accuracy: float
    accuracy_std: float
    repetitions: int
    seed: int
    mi_loss_percent: float | None = None


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([seed, rep])


def evaluate_accuracy_stochastic(
    model: Model,
    dataset: LabeledDataset,
    plan: SiftPlan | None = None,
    reps: int = 10,
    seed: int = 0,
    task: str = "target",
) -> EvalReport:
    """Accuracy over ``reps`` passes, each sifting every test item with its own noise draw.

    Without a plan this is the clean accuracy and a single pass.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if reps < 1:
        raise ValueError(f"repetitions must be >= 1, got {reps}")
    if plan is None:
        reps = 1
    accs = []
    for rep in range(reps):
        x = dataset.features if plan is None else sift(dataset.features, plan, _rep_rng(seed, rep))
        accs.append(float((predict(model, x).argmax(axis=1) == dataset.labels).mean()))
    return EvalReport(
        task,
        "clean" if plan is None else plan.scheme,
        0.0 if plan is None else plan.suppression_ratio,
        float(np.mean(accs)),
        float(np.std(accs)),
        reps,
        seed,
    )


# -- privacy / accuracy -----------------------------------------------------


@dataclass
class SweepPoint:
    lam: float
    status: str = "ok"
    mean_sigma: float = float("nan")
    suppression_ratio: float = float("nan")
    accuracy: float = float("nan")
    accuracy_std: float = float("nan")
    mi_loss_percent: float = float("nan")
    mi_loss_self_percent: float = float("nan")
    baseline_sigma: float = float("nan")
    baseline_accuracy: float = float("nan")
    baseline_mi_loss_percent: float = float("nan")
    baseline_mi_loss_self_percent: float = float("nan")


@dataclass
class SweepConfig:
    noise: NoiseTrainConfig
    suppression: SuppressionConfig
    threshold: float | None = None
    reps: int = 10
    mi_samples: int = 1000
    k: int = 3
    seed: int = 0


def _mi_losses(x: np.ndarray, plan: SiftPlan, cfg: SweepConfig):
    from .infotheory import estimate_mi_ksg
    from scipy.special import digamma

    sifted = sift(x, plan, np.random.default_rng([cfg.seed, 7919]))
    loss = mi_loss_percent(x, sifted, cfg.k, cfg.seed)
    # same estimate against the estimator's own ceiling I(X; X) = psi(N) - psi(k)
    ceiling = float(digamma(x.shape[0]) - digamma(cfg.k))
    mi = estimate_mi_ksg(x.reshape(len(x), -1), sifted.reshape(len(x), -1), cfg.k, cfg.seed)
    mi_value = ceiling if mi.status == "degenerate" else mi.value
    return loss.percent, 100.0 * (ceiling - mi_value) / ceiling


def privacy_accuracy_sweep(model: Model, train: LabeledDataset, test: LabeledDataset, lambda_grid, cfg: SweepConfig) -> list:
    """One noise map and trained-values plan per lambda, with a uniform-noise baseline.

    The baseline applies the sieve's mean sigma to every feature. A failing
    grid point is reported with ``status`` describing the error.
    """
    lambda_grid = list(lambda_grid)
    if not lambda_grid:
        raise ValueError("lambda grid is empty")
    x_mi = test.features[: cfg.mi_samples]
    points = []
    for lam in lambda_grid:
        point = SweepPoint(float(lam))
        try:
            noise_cfg = NoiseTrainConfig(**{**asdict(cfg.noise), "lam": float(lam), "gamma": None})
            nm, _ = train_noise_map(model, train.features, train.labels, None, noise_cfg)
            plan = build_plan(model, train.features, train.labels, nm, cfg.threshold, "trained", cfg.suppression)
            rep = evaluate_accuracy_stochastic(model, test, plan, cfg.reps, cfg.seed)
            point.mean_sigma = float(plan.sigma.mean())
            point.suppression_ratio = plan.suppression_ratio
            point.accuracy, point.accuracy_std = rep.mean_accuracy, rep.accuracy_std
            point.mi_loss_percent, point.mi_loss_self_percent = _mi_losses(x_mi, plan, cfg)

            baseline = SiftPlan.uniform_noise(model.input_shape, point.mean_sigma)
            base = evaluate_accuracy_stochastic(model, test, baseline, cfg.reps, cfg.seed)
            point.baseline_sigma = point.mean_sigma
            point.baseline_accuracy = base.mean_accuracy
            point.baseline_mi_loss_percent, point.baseline_mi_loss_self_percent = _mi_losses(x_mi, baseline, cfg)
        except (ValueError, FloatingPointError, ArithmeticError) as exc:
            logger.warning("sweep point lambda=%s failed: %s", lam, exc)
            point.status = f"failed: {exc}"
        logger.info("sweep %s", point)
        points.append(point)
    return points


# -- adversaries ------------------------------------------------------------


@dataclass
class AdversaryReport:
    mode: str
    suppression_ratio: float
    adversary_accuracy: float
    adversary_clean_accuracy: float
    target_accuracy: float


def adversary_eval(
    target_model: Model,
    plan: SiftPlan,
    train: LabeledDataset,
    test: LabeledDataset,
    adversary_cfg: TrainConfig,
    mode: str = "no_retrain",
    arch: str = "mlp",
    reps: int = 1,
    seed: int = 0,
) -> AdversaryReport:
    """Train a classifier for the private attribute and attack sifted test inputs.

    ``no_retrain``: the adversary learns on raw inputs. ``retrain``: it learns
    on sifted inputs with fresh noise for every minibatch.
    """
    if mode not in ("no_retrain", "retrain"):
        raise ValueError(f"unknown adversary mode {mode!r}")
    if train.private_labels is None or test.private_labels is None:
        raise ValueError("adversary evaluation needs private_labels")
    n_private = int(max(train.private_labels.max(), test.private_labels.max())) + 1
    adversary = build_model(arch, train.input_shape, n_private, adversary_cfg.seed)
    transform = None
    if mode == "retrain":
        transform = lambda x, rng: sift(x, plan, rng)  # noqa: E731
    train_classifier(adversary, train.features, train.private_labels, adversary_cfg, transform)
    adversary.freeze()
    private_test = LabeledDataset(test.features, test.private_labels)
    clean = evaluate_accuracy_stochastic(adversary, private_test, None)
    attacked = evaluate_accuracy_stochastic(adversary, private_test, plan, reps, seed)
    target = evaluate_accuracy_stochastic(target_model, test, plan, reps, seed)
    return AdversaryReport(mode, plan.suppression_ratio, attacked.mean_accuracy, clean.mean_accuracy, target.mean_accuracy)


# -- fairness ---------------------------------------------------------------


@dataclass
class FairnessReport:
    delta_demp: float
    delta_eo: float
    group_sizes: tuple


def fairness_metrics(predictions, labels, sensitive) -> FairnessReport:
    """Demographic-parity and equal-opportunity gaps for a binary task and binary attribute.

    delta_demp = |P(Yhat=1 | S=0) - P(Yhat=1 | S=1)|
    delta_eo   = sum over y of |P(Yhat=y | S=0, Y=y) - P(Yhat=y | S=1, Y=y)|
    """
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    s = np.asarray(sensitive)
    if not (pred.shape == y.shape == s.shape):
        raise ValueError("predictions, labels and sensitive must have equal length")
    for name, arr in (("predictions", pred), ("labels", y), ("sensitive", s)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary")

    def rate(cond, event, cell):
        if not cond.any():
            raise ValueError(f"empty cell: {cell}")
        return float(event[cond].mean())

    demp = abs(rate(s == 0, pred == 1, "S=0") - rate(s == 1, pred == 1, "S=1"))
    eo = sum(
        abs(rate((s == 0) & (y == c), pred == c, f"S=0,Y={c}") - rate((s == 1) & (y == c), pred == c, f"S=1,Y={c}"))
        for c in (0, 1)
    )
    return FairnessReport(demp, eo, (int((s == 0).sum()), int((s == 1).sum())))


def fairness_eval(model: Model, test: LabeledDataset, plan: SiftPlan | None, seed: int = 0) -> FairnessReport:
    if test.sensitive is None:
        raise ValueError("fairness evaluation needs a sensitive attribute")
    x = test.features if plan is None else sift(test.features, plan, _rep_rng(seed, 0))
    return fairness_metrics(predict(model, x).argmax(axis=1), test.labels, test.sensitive)


# -- black box --------------------------------------------------------------


@dataclass
class BlackBoxReport:
    target_clean_accuracy: float
    substitute_clean_accuracy: float
    whitebox_accuracy: float
    whitebox_suppression_ratio: float
    blackbox_accuracy: float
    blackbox_suppression_ratio: float


@dataclass
class BlackBoxConfig:
    target_train: TrainConfig
    substitute_train: TrainConfig
    noise: NoiseTrainConfig
    suppression: SuppressionConfig
    threshold: float | None = None
    reps: int = 10
    disjoint: bool = True
    seed: int = 0


def blackbox_workflow(train: LabeledDataset, test: LabeledDataset, target_arch: str, substitute_arch: str, cfg: BlackBoxConfig):
    """Compare plans learned against the target (white box) and against a substitute (black box).

    The training set is split in two equal disjoint halves: the target is
    trained on the first, the substitute and both noise maps on the second.
    Both plans are evaluated on the target; the black-box threshold is chosen
    to match the white-box suppression ratio. ``disjoint=False`` trains
    everything on the full set.
    """
    if len(train) < 2:
        raise ValueError("dataset too small to split")
    if cfg.disjoint:
        target_data, sieve_data = split_disjoint(train, [0.5, 0.5], cfg.seed)
    else:
        target_data = sieve_data = train
    k = int(max(train.labels.max(), test.labels.max())) + 1
    target = build_model(target_arch, train.input_shape, k, cfg.target_train.seed)
    train_classifier(target, target_data.features, target_data.labels, cfg.target_train)
    target.freeze()
    substitute = build_model(substitute_arch, train.input_shape, k, cfg.substitute_train.seed)
    train_classifier(substitute, sieve_data.features, sieve_data.labels, cfg.substitute_train)
    substitute.freeze()

    def plan_for(model, ratio=None):
        nm, _ = train_noise_map(model, sieve_data.features, sieve_data.labels, None, cfg.noise)
        return build_plan(model, sieve_data.features, sieve_data.labels, nm, cfg.threshold, "trained", cfg.suppression, ratio)

    white = plan_for(target)
    black = plan_for(substitute, ratio=white.suppression_ratio)
    white_rep = evaluate_accuracy_stochastic(target, test, white, cfg.reps, cfg.seed)
    black_rep = evaluate_accuracy_stochastic(target, test, black, cfg.reps, cfg.seed)
    return BlackBoxReport(
        evaluate_accuracy_stochastic(target, test).mean_accuracy,
        evaluate_accuracy_stochastic(substitute, test).mean_accuracy,
        white_rep.mean_accuracy,
        white.suppression_ratio,
        black_rep.mean_accuracy,
        black.suppression_ratio,
    )


# -- reports ----------------------------------------------------------------


def write_csv(path, rows) -> None:
    """Write dataclass rows with a header; floats use repr so reruns compare byte-for-byte."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    names = [f.name for f in fields(rows[0])]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            writer.writerow([_fmt(getattr(row, n)) for n in names])


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    if value is None:
        return ""
    return str(value)
