"""``sieve`` command-line entry point.

Every subcommand reads an optional INI config (``--config``), applies flag
overrides (``--<section>-<key> value``), writes its artifacts and a
``run.meta`` record into ``--out`` and prints a one-line summary.

Exit codes: 0 success, 1 usage, 2 missing input file, 3 validation
failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, read_arrays, save_checkpoint, write_arrays
from .config import SCHEMA, Config, ConfigError, flag_name, parse_config, parse_text
from .data import (
    LabeledDataset,
    derive_binary_labels,
    generate_biased,
    generate_two_attribute,
    load_idx,
    load_mnist_fixture,
)
from .evaluation import (
    BlackBoxConfig,
    SweepConfig,
    adversary_eval,
    blackbox_workflow,
    evaluate_accuracy_stochastic,
    fairness_eval,
    privacy_accuracy_sweep,
    write_csv,
)
from .infotheory import estimate_mi_ksg, mi_loss_percent, mi_upper_bound
from .nn import Model, TrainConfig, build_model, train_classifier
from .noise_map import DEFAULT_CAP, NoiseMap, NoiseTrainConfig, train_noise_map
from .suppression import SiftPlan, SuppressionConfig, build_plan, sift

logger = logging.getLogger("sieve")

EXIT_USAGE, EXIT_MISSING, EXIT_INVALID, EXIT_NUMERIC = 1, 2, 3, 4
BUNDLED_MI_FIXTURE = Path(__file__).parent / "data" / "gaussian-corr0.9.siv"
META_NAME = "run.meta"

DEFAULT_GRID = (0.5, 1.0, 3.0, 10.0, 100.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config to library objects ----------------------------------------------


def train_config(cfg: Config, section: str) -> TrainConfig:
    base = TrainConfig()
    return TrainConfig(
        epochs=cfg.get(section, "epochs", base.epochs),
        lr=cfg.get(section, "lr", base.lr),
        batch_size=cfg.get(section, "batch_size", base.batch_size),
        optimizer=cfg.get(section, "optimizer", base.optimizer),
        seed=cfg.seed_for(section),
        shift=cfg.get(section, "shift", base.shift),
    )


def noise_config(cfg: Config) -> NoiseTrainConfig:
    base = NoiseTrainConfig()
    return NoiseTrainConfig(
        epochs=cfg.get("noise", "epochs", base.epochs),
        lr=cfg.get("noise", "lr", base.lr),
        batch_size=cfg.get("noise", "batch_size", base.batch_size),
        lam=cfg.get("noise", "lambda", base.lam),
        cap=cfg.get("noise", "cap", DEFAULT_CAP),
        mc_samples=cfg.get("noise", "mc_samples", base.mc_samples),
        seed=cfg.seed_for("noise"),
    )


def suppression_config(cfg: Config) -> SuppressionConfig:
    base = SuppressionConfig()
    return SuppressionConfig(
        epochs=cfg.get("suppression", "epochs", base.epochs),
        lr=cfg.get("suppression", "lr", base.lr),
        batch_size=cfg.get("suppression", "batch_size", base.batch_size),
        seed=cfg.seed_for("suppression"),
    )


def _existing(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def load_datasets(cfg: Config) -> tuple:
    """(train, test) for the ``[data]`` section."""
    kind = cfg.get("data", "dataset", "mnist")
    seed = cfg.seed_for("data")
    n_train, n_test = cfg.get("data", "n_train"), cfg.get("data", "n_test")
    if kind == "mnist":
        if cfg.get("data", "images"):
            train = load_idx(_existing(cfg.require("data", "images")), _existing(cfg.require("data", "labels")))
            test = load_idx(_existing(cfg.require("data", "test_images")), _existing(cfg.require("data", "test_labels")))
        else:
            train, test = load_mnist_fixture()
        task = cfg.get("data", "task", "gt5")
        train, test = derive_binary_labels(train, task), derive_binary_labels(test, task)
        if n_train is not None:
            train = train.head(n_train)
        if n_test is not None:
            test = test.head(n_test)
        return train, test
    noise = {} if cfg.get("data", "noise_level") is None else {"noise_level": cfg.get("data", "noise_level")}
    if cfg.get("data", "contrast") is not None:
        noise["contrast"] = cfg.get("data", "contrast")
    if kind == "two_attribute":
        return (
            generate_two_attribute(n_train or 2000, seed, **noise),
            generate_two_attribute(n_test or 1000, seed + 1, **noise),
        )
    if kind == "biased":
        return (
            generate_biased(n_train or 2000, seed, bias=cfg.get("data", "bias", 0.9), **noise),
            generate_biased(n_test or 2000, seed + 1, bias=cfg.get("data", "test_bias", 0.5), **noise),
        )
    raise ConfigError(f"unknown dataset {kind!r} (expected mnist, two_attribute or biased)")


def _load(cfg: Config, section: str, key: str, kind):
    obj = load_checkpoint(_existing(cfg.require(section, key)))
    if not isinstance(obj, kind):
        raise ConfigError(f"[{section}] {key} holds a {type(obj).__name__}, expected {kind.__name__}")
    return obj


def _optional_plan(cfg: Config):
    if cfg.get("suppression", "plan") is None:
        return None
    plan = _load(cfg, "suppression", "plan", SiftPlan)
    scheme = cfg.get("suppression", "scheme")
    return plan.with_scheme(scheme) if scheme else plan


# -- subcommands ------------------------------------------------------------


@dataclass
class EpochRow:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class NoiseRow:
    epoch: int
    loss: float
    privacy: float
    utility: float
    mean_sigma: float


def cmd_train_classifier(cfg: Config, out: Path) -> str:
    train, test = load_datasets(cfg)
    tc = train_config(cfg, "classifier")
    model = build_model(cfg.get("classifier", "arch", "lenet_lite"), train.input_shape, train.n_classes, tc.seed)
    history = train_classifier(model, train.features, train.labels, tc)
    model.freeze()
    save_checkpoint(model, out / "classifier.siv")
    rows = [EpochRow(i + 1, loss, acc) for i, (loss, acc) in enumerate(zip(history["loss"], history["accuracy"]))]
    write_csv(out / "train_classifier.csv", rows)
    acc = evaluate_accuracy_stochastic(model, test).mean_accuracy
    return f"trained {model.arch} ({model.n_params()} parameters): test accuracy {acc:.4f}"


def cmd_train_noise_map(cfg: Config, out: Path) -> str:
    train, _ = load_datasets(cfg)
    model = _load(cfg, "classifier", "checkpoint", Model)
    nm, history = train_noise_map(model, train.features, train.labels, None, noise_config(cfg))
    save_checkpoint(nm, out / "noise_map.siv")
    rows = [NoiseRow(i + 1, *vals) for i, vals in enumerate(zip(*(history[k] for k in ("loss", "privacy", "utility", "mean_sigma"))))]
    write_csv(out / "noise_history.csv", rows)
    return f"noise map: lambda {nm.lam:g}, mean sigma {float(nm.sigma.mean()):.4f}"


def cmd_train_suppression(cfg: Config, out: Path) -> str:
    train, _ = load_datasets(cfg)
    model = _load(cfg, "classifier", "checkpoint", Model)
    nm = _load(cfg, "noise", "checkpoint", NoiseMap)
    plan = build_plan(
        model,
        train.features,
        train.labels,
        nm,
        cfg.get("suppression", "threshold"),
        cfg.get("suppression", "scheme", "trained"),
        suppression_config(cfg),
        cfg.get("suppression", "ratio"),
    )
    save_checkpoint(plan, out / "plan.siv")
    return f"plan: threshold {plan.threshold:.4g}, suppression ratio {plan.suppression_ratio:.4f}, scheme {plan.scheme}"


def cmd_sift(cfg: Config, out: Path) -> str:
    arrays = read_arrays(_existing(cfg.require("sift", "input")))
    if "data" not in arrays:
        raise ConfigError("sift input must hold an array named 'data'")
    plan = _optional_plan(cfg)
    if plan is None:
        raise ConfigError("missing required key [suppression] plan")
    sifted = sift(arrays["data"], plan, cfg.seed_for("sift"))
    target = out / cfg.get("sift", "output", "sifted.siv")
    write_arrays(target, {"data": sifted})
    return f"sifted {arrays['data'].shape} -> {target}"


@dataclass
class EvalRow:
    task: str
    scheme: str
    suppression_ratio: float
    mean_accuracy: float
    accuracy_std: float
    repetitions: int
    seed: int
    mi_loss_percent: float | None


def cmd_evaluate(cfg: Config, out: Path) -> str:
    _, test = load_datasets(cfg)
    model = _load(cfg, "classifier", "checkpoint", Model)
    plan = _optional_plan(cfg)
    seed = cfg.seed_for("evaluate")
    rep = evaluate_accuracy_stochastic(model, test, plan, cfg.get("evaluate", "reps", 10), seed)
    if plan is not None:
        x = test.features[: cfg.get("evaluate", "mi_samples", 1000)]
        k = cfg.get("evaluate", "k", 3)
        rep.mi_loss_percent = mi_loss_percent(x, sift(x, plan, np.random.default_rng([seed, 7919])), k, seed).percent
    write_csv(out / "evaluate.csv", [EvalRow(**vars(rep))])
    mi = "" if rep.mi_loss_percent is None else f", MI loss {rep.mi_loss_percent:.2f}%"
    return f"accuracy {rep.mean_accuracy:.4f} +/- {rep.accuracy_std:.4f} ({rep.scheme}, SR {rep.suppression_ratio:.3f}){mi}"


def cmd_sweep(cfg: Config, out: Path) -> str:
    train, test = load_datasets(cfg)
    model = _load(cfg, "classifier", "checkpoint", Model)
    sweep_cfg = SweepConfig(
        noise_config(cfg),
        suppression_config(cfg),
        cfg.get("suppression", "threshold"),
        cfg.get("evaluate", "reps", 10),
        cfg.get("evaluate", "mi_samples", 1000),
        cfg.get("evaluate", "k", 3),
        cfg.seed_for("evaluate"),
    )
    points = privacy_accuracy_sweep(model, train, test, cfg.get("evaluate", "lambda_grid", DEFAULT_GRID), sweep_cfg)
    write_csv(out / "sweep.csv", points)
    ok = sum(p.status == "ok" for p in points)
    return f"sweep: {ok}/{len(points)} grid points ok -> {out / 'sweep.csv'}"


def cmd_adversary(cfg: Config, out: Path) -> str:
    train, test = load_datasets(cfg)
    model = _load(cfg, "classifier", "checkpoint", Model)
    plan = _optional_plan(cfg) or SiftPlan.identity(model.input_shape)
    report = adversary_eval(
        model,
        plan,
        train,
        test,
        train_config(cfg, "adversary"),
        cfg.get("adversary", "mode", "no_retrain"),
        cfg.get("adversary", "arch", "mlp"),
        cfg.get("evaluate", "reps", 1),
        cfg.seed_for("evaluate"),
    )
    write_csv(out / "adversary.csv", [report])
    return f"adversary ({report.mode}): {report.adversary_accuracy:.4f} (clean {report.adversary_clean_accuracy:.4f}), target {report.target_accuracy:.4f}"


@dataclass
class FairnessRow:
    scheme: str
    suppression_ratio: float
    accuracy: float
    delta_demp: float
    delta_eo: float
    group_sizes: tuple


def cmd_fairness(cfg: Config, out: Path) -> str:
    _, test = load_datasets(cfg)
    model = _load(cfg, "classifier", "checkpoint", Model)
    plan = _optional_plan(cfg)
    seed = cfg.seed_for("evaluate")
    report = fairness_eval(model, test, plan, seed)
    acc = evaluate_accuracy_stochastic(model, test, plan, 1, seed).mean_accuracy
    row = FairnessRow(
        "clean" if plan is None else plan.scheme,
        0.0 if plan is None else plan.suppression_ratio,
        acc,
        report.delta_demp,
        report.delta_eo,
        report.group_sizes,
    )
    write_csv(out / "fairness.csv", [row])
    return f"fairness: delta_demp {report.delta_demp:.4f}, delta_eo {report.delta_eo:.4f} (SR {row.suppression_ratio:.3f})"


def cmd_blackbox(cfg: Config, out: Path) -> str:
    train, test = load_datasets(cfg)
    bb = BlackBoxConfig(
        train_config(cfg, "classifier"),
        train_config(cfg, "substitute"),
        noise_config(cfg),
        suppression_config(cfg),
        cfg.get("suppression", "threshold"),
        cfg.get("evaluate", "reps", 10),
        cfg.get("evaluate", "disjoint", True),
        cfg.seed_for("evaluate"),
    )
    report = blackbox_workflow(train, test, cfg.get("classifier", "arch", "lenet_lite"), cfg.get("substitute", "arch", "mlp"), bb)
    write_csv(out / "blackbox.csv", [report])
    return (
        f"white box {report.whitebox_accuracy:.4f} (SR {report.whitebox_suppression_ratio:.3f}), "
        f"black box {report.blackbox_accuracy:.4f} (SR {report.blackbox_suppression_ratio:.3f})"
    )


@dataclass
class MiRow:
    mi_nats: float
    mi_bits: float
    k: int
    n_samples: int
    status: str


def cmd_estimate_mi(cfg: Config, out: Path) -> str:
    arrays = read_arrays(_existing(cfg.get("mi", "input", BUNDLED_MI_FIXTURE)))
    if "x" not in arrays or "y" not in arrays:
        raise ConfigError("estimate-mi input must hold arrays named 'x' and 'y'")
    est = estimate_mi_ksg(arrays["x"], arrays["y"], cfg.get("mi", "k", 3), cfg.seed_for("mi"))
    write_csv(out / "mi.csv", [MiRow(est.value, est.bits, est.k, est.n_samples, est.status)])
    return f"I(X; Y) = {est.value:.3f} nats ({est.bits:.3f} bits), k={est.k}, N={est.n_samples}, {est.status}"


@dataclass
class BoundRow:
    logdet_bound: float
    product_bound: float
    product_is_approximate: bool


def cmd_bound(cfg: Config, out: Path) -> str:
    arrays = read_arrays(_existing(cfg.require("bound", "input")))
    if "data" not in arrays:
        raise ConfigError("bound input must hold an array named 'data'")
    samples = arrays["data"].reshape(arrays["data"].shape[0], -1)
    if cfg.get("noise", "checkpoint") is not None:
        sigma = _load(cfg, "noise", "checkpoint", NoiseMap).sigma
    else:
        sigma = np.full(samples.shape[1], cfg.require("bound", "sigma"))
    ub = mi_upper_bound(samples, sigma, cfg.get("bound", "ridge", 1e-8))
    write_csv(out / "bound.csv", [BoundRow(ub.logdet, ub.product, ub.product_is_approximate)])
    return f"upper bound {ub.logdet:.4f} nats (product form {ub.product:.4f}, approximate)"


COMMANDS = {
    "train-classifier": cmd_train_classifier,
    "train-noise-map": cmd_train_noise_map,
    "train-suppression": cmd_train_suppression,
    "sift": cmd_sift,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "adversary": cmd_adversary,
    "fairness": cmd_fairness,
    "blackbox": cmd_blackbox,
    "estimate-mi": cmd_estimate_mi,
    "bound": cmd_bound,
}


# -- plumbing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sieve", description="Learn noise maps and sift inputs for a frozen classifier.")
    parser.add_argument("--version", action="version", version=f"sieve {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name.replace("-", " ")).strip().splitlines()[0])
        _common_flags(p)
        for section, keys in SCHEMA.items():
            if section == "meta":
                continue
            for key in keys:
                p.add_argument(flag_name(section, key), dest=f"{section}:{key}", metavar="VALUE", help=argparse.SUPPRESS)
    rp = sub.add_parser("replay", help="rerun a recorded run.meta")
    rp.add_argument("meta", help="path to a run.meta file")
    rp.add_argument("--out", help="output directory (default: a 'replay' folder beside the record)")
    rp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _common_flags(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="run seed (used where a section sets none)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _overrides(ns: argparse.Namespace) -> dict:
    found = {}
    for dest, value in vars(ns).items():
        if ":" in dest and value is not None:
            section, key = dest.split(":")
            found[(section, key)] = value
    if ns.seed is not None:
        if ns.seed < 0:
            raise ConfigError("seed must be non-negative")
        found[("run", "seed")] = str(ns.seed)
    if ns.out is not None:
        found[("run", "out")] = ns.out
    return found


def run(command: str, cfg: Config) -> str:
    """Execute one subcommand with a parsed config and record ``run.meta``."""
    out = Path(cfg.get("run", "out", "sieve-out"))
    out.mkdir(parents=True, exist_ok=True)
    summary = COMMANDS[command](cfg, out)
    meta = cfg.copy()
    meta.sections["meta"] = {"subcommand": command, "version": __version__}
    meta.sections.setdefault("run", {}).setdefault("seed", cfg.seed_for("run"))
    (out / META_NAME).write_text(meta.to_text())
    return summary


def _replay(ns) -> str:
    meta_path = _existing(ns.meta)
    cfg = parse_text(meta_path.read_text())
    command = cfg.require("meta", "subcommand")
    if command not in COMMANDS:
        raise ConfigError(f"run.meta names unknown subcommand {command!r}")
    del cfg.sections["meta"]
    cfg.sections.setdefault("run", {})["out"] = ns.out or str(meta_path.parent / "replay")
    return run(command, cfg)


def _threads():
    raw = os.environ.get("SIEVE_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SIEVE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("SIEVE_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("no subcommand given")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sieve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_threads()):
            if ns.command == "replay":
                summary = _replay(ns)
            else:
                summary = run(ns.command, parse_config(ns.config and _existing(ns.config), _overrides(ns)))
    except FileNotFoundError as exc:
        print(f"sieve: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"sieve: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError) as exc:
        print(f"sieve: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
