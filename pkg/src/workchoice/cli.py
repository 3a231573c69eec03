"""Command-line driver: simulate, estimate-nl, train-dnn, evaluate, compare.

Exit codes: 0 success, 2 invalid input, 3 numerical failure,
4 estimation did not converge (output still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import DataValidationError, Dataset, split_dataset
from .formats import (
    DataFormatError,
    fmt_float,
    load_dataset,
    read_model_file,
    save_dataset,
    save_model,
    write_json,
)
from .nested_logit import PARAM_NAMES, HessianError, NestedLogitModel, estimate_nl
from .neural import FeatureSpec, TrainConfig, TrainingDivergedError, train
from .optim import LbfgsSettings
from .report import DataReference, data_reference, evaluate_model, write_report
from .synthgen import AccessibilityConfig, CityConfig, Oracle, PopulationConfig, simulate_dataset

log = logging.getLogger("workchoice")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4
DEFAULT_SPLIT = 0.75
DEFAULT_DRAWS = 100
MAX_SEED = 2**64 - 1


class CompatibilityError(DataValidationError):
    """Models and data do not belong together."""


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise DataFormatError(f"{path}: top level must be an object")
    return cfg


def _split_info(seed: int, fraction: float, train: Dataset, val: Dataset) -> dict:
    return {"seed": seed, "train_fraction": fraction, "n_train": train.n_individuals, "n_validation": val.n_individuals}


def _check_seed(seed: int) -> int:
    if not 0 <= seed <= MAX_SEED:
        raise DataValidationError(f"seed {seed} outside the unsigned 64-bit range")
    return seed


# -- simulate ----------------------------------------------------------------


def simulation_configs(cfg: dict):
    """Parse a simulation config into its four parts."""
    unknown = set(cfg) - {"seed", "city", "population", "accessibility", "oracle"}
    if unknown:
        raise DataValidationError(f"unknown simulation config keys: {sorted(unknown)}")
    try:
        city = CityConfig.from_dict(cfg.get("city", {}))
        pop = PopulationConfig.from_dict(cfg.get("population", {}))
        acc = AccessibilityConfig(**cfg.get("accessibility", {}))
        oracle = Oracle.from_dict(cfg.get("oracle", {}))
    except TypeError as exc:
        raise DataValidationError(f"bad simulation config: {exc}") from None
    return city, pop, acc, oracle


def cmd_simulate(config: dict, out_dir, seed: int | None = None) -> int:
    """Write a synthetic dataset, the generating oracle and a provenance record."""
    seed = _check_seed(int(config.get("seed", 0) if seed is None else seed))
    city, pop, acc, oracle = simulation_configs(config)
    ds = simulate_dataset(city, pop, acc, oracle, seed)
    out = Path(out_dir)
    files = [p.name for p in save_dataset(ds, out)]
    fingerprint = ds.fingerprint()
    save_model(oracle.model(), out / "oracle.json", dataset_fingerprint=fingerprint, seed=seed)
    provenance = {
        "seed": seed,
        "city": asdict(city),
        "population": pop.to_dict(),
        "accessibility": asdict(acc),
        "oracle": oracle.to_dict(),
        "dataset_fingerprint": fingerprint,
        "files": files + ["oracle.json"],
        "version": __version__,
    }
    if isinstance(provenance["city"]["job_scale"], tuple):
        provenance["city"]["job_scale"] = list(provenance["city"]["job_scale"])
    write_json(provenance, out / "provenance.json")
    log.info("simulated %d individuals in %d zones -> %s", ds.n_individuals, ds.n_zones, out)
    return EXIT_OK


# -- estimate-nl -------------------------------------------------------------


def _companion(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}.csv")


def cmd_estimate_nl(data_dir, out_path, settings: LbfgsSettings = LbfgsSettings(), seed: int = 0, split: float = DEFAULT_SPLIT) -> int:
    """Estimate on the training split; write the model JSON and a parameter table CSV."""
    seed = _check_seed(seed)
    ds = load_dataset(data_dir)
    ds.require_choices()
    train_ds, val_ds = split_dataset(ds, split, seed)
    est = estimate_nl(train_ds, settings=settings)
    model = NestedLogitModel(est.params, est)
    ll_val = float(model.log_probabilities_chosen(val_ds) @ val_ds.weights) if val_ds.n_individuals else float("nan")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(
        model,
        out,
        ll_validation=ll_val,
        seed=seed,
        split=_split_info(seed, split, train_ds, val_ds),
        dataset_fingerprint=ds.fingerprint(),
    )
    with open(_companion(out, "estimates"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "estimate", "std_error", "t_value"])
        se, tv = est.std_errors, est.t_values
        for i, (name, value) in enumerate(zip(PARAM_NAMES, est.params.values())):
            w.writerow([name, fmt_float(value), "nan" if se is None else fmt_float(se[i]), "nan" if tv is None else fmt_float(tv[i])])
        w.writerow(["t_lambda_vs_1", "nan" if est.t_against_1 is None else fmt_float(est.t_against_1), "", ""])
        w.writerow(["ll_null", fmt_float(est.ll_null), "", ""])
        w.writerow(["ll_final", fmt_float(est.ll_final), "", ""])
        w.writerow(["ll_validation", fmt_float(ll_val), "", ""])
        w.writerow(["n_train", train_ds.n_individuals, "", ""])
        w.writerow(["n_validation", val_ds.n_individuals, "", ""])
    if not est.converged:
        log.warning("estimation did not converge: %s", est.message)
        return EXIT_NOT_CONVERGED
    if not est.hessian_ok:
        log.error("Hessian not negative definite; standard errors unavailable")
        return EXIT_NUMERICAL
    return EXIT_OK


# -- train-dnn ---------------------------------------------------------------


def cmd_train_dnn(data_dir, mode: str, config: TrainConfig, out_path, split: float = DEFAULT_SPLIT) -> int:
    """Train on the training split; write the model JSON and per-epoch history CSV."""
    seed = _check_seed(config.seed)
    ds = load_dataset(data_dir)
    ds.require_choices()
    train_ds, val_ds = split_dataset(ds, split, seed)
    spec = FeatureSpec(mode)
    model, hist = train(train_ds, val_ds if val_ds.n_individuals else None, spec, config)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(
        model,
        out,
        train_config=config.to_dict(),
        seed=seed,
        final_ll={"train": hist.train_ll[-1], "validation": hist.val_ll[-1]},
        split=_split_info(seed, split, train_ds, val_ds),
        dataset_fingerprint=ds.fingerprint(),
    )
    with open(_companion(out, "history"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_ll", "validation_ll"])
        for epoch, (t, v) in enumerate(zip(hist.train_ll, hist.val_ll), start=1):
            w.writerow([epoch, fmt_float(t), fmt_float(v)])
    return EXIT_OK


# -- evaluate / compare ------------------------------------------------------


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _unique_names(paths) -> list[str]:
    names, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return names


def _resolve_split(docs, seed: int, split: float):
    """The split recorded by trained models (they must agree), else the CLI one."""
    recorded = [(d["split"]["seed"], d["split"]["train_fraction"]) for d in docs if "split" in d]
    if len(set(recorded)) > 1:
        raise CompatibilityError(f"models were fitted on different splits: {sorted(set(recorded))}")
    if recorded:
        return recorded[0], True
    return (seed, split), False


def run_evaluation(data_dir, model_paths, out_dir, seed: int = 0, split: float = DEFAULT_SPLIT, eval_set: str = "auto", draws: int = DEFAULT_DRAWS) -> dict:
    """Shared body of ``evaluate`` and ``compare``; nothing is written until all checks pass."""
    seed = _check_seed(seed)
    if eval_set not in ("auto", "validation", "all"):
        raise DataValidationError(f"eval_set must be auto, validation or all, not {eval_set!r}")
    ds = load_dataset(data_dir)
    ds.require_choices()
    fingerprint = ds.fingerprint()
    loaded = [read_model_file(p) for p in model_paths]
    for path, (_, doc) in zip(model_paths, loaded):
        fp = doc.get("dataset_fingerprint")
        if fp is not None and fp != fingerprint:
            raise CompatibilityError(f"{path} was fitted on a different dataset (fingerprint {fp[:12]} vs {fingerprint[:12]})")
    docs = [doc for _, doc in loaded]
    (split_seed, split_frac), recorded = _resolve_split(docs, seed, split)
    use_validation = eval_set == "validation" or (eval_set == "auto" and recorded)
    if use_validation:
        train_ds, val_ds = split_dataset(ds, split_frac, split_seed)
        if val_ds.n_individuals == 0:
            raise DataValidationError("validation split is empty")
        eval_ds, ll_sets = val_ds, {"train": train_ds, "validation": val_ds}
    else:
        eval_ds, ll_sets = ds, {"all": ds}
    names = _unique_names(model_paths)
    reference: DataReference = data_reference(eval_ds)
    evals = [
        evaluate_model(name, model, eval_ds, ll_sets, reference, draws, seed)
        for name, (model, _) in zip(names, loaded)
    ]
    metadata = {
        "report_kind": "compare" if len(model_paths) > 1 else "evaluate",
        "models": [
            {"name": n, "file": Path(p).name, "model_kind": d["model_kind"], "sha256": _file_sha256(p)}
            for n, p, d in zip(names, model_paths, docs)
        ],
        "dataset_fingerprint": fingerprint,
        "evaluated_on": "validation" if use_validation else "all",
        "split": {"seed": split_seed, "train_fraction": split_frac} if use_validation else None,
        "n_evaluated": eval_ds.n_individuals,
        "draws_per_individual": draws,
        "sampling_seed": seed,
        "version": __version__,
    }
    return write_report(out_dir, evals, reference, metadata)


def cmd_evaluate(data_dir, model_path, out_dir, seed: int = 0, split: float = DEFAULT_SPLIT, eval_set: str = "auto", draws: int = DEFAULT_DRAWS) -> int:
    run_evaluation(data_dir, [model_path], out_dir, seed, split, eval_set, draws)
    return EXIT_OK


def cmd_compare(data_dir, model_paths, out_dir, seed: int = 0, split: float = DEFAULT_SPLIT, eval_set: str = "auto", draws: int = DEFAULT_DRAWS) -> int:
    if len(model_paths) < 2:
        raise DataValidationError("compare needs at least two models")
    run_evaluation(data_dir, model_paths, out_dir, seed, split, eval_set, draws)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _layers(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--layers expects comma-separated integers, got {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("--layers needs at least one size")
    return sizes


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("--split must be in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="workchoice", description="Workplace location choice: nested logit vs neural network.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out_help="output path"):
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
        p.add_argument("--config", help="JSON config file")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p, data=False, out_help="output directory")

    p = sub.add_parser("estimate-nl", help="estimate the nested logit")
    common(p, out_help="model JSON path")
    p.add_argument("--split", type=_fraction, default=DEFAULT_SPLIT)

    p = sub.add_parser("train-dnn", help="train the neural network")
    common(p, out_help="model JSON path")
    p.add_argument("--split", type=_fraction, default=DEFAULT_SPLIT)
    p.add_argument("--mode", choices=("car", "all"), default="car")
    p.add_argument("--layers", type=_layers)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)

    for name, helptext in (("evaluate", "evaluate one model"), ("compare", "compare several models")):
        p = sub.add_parser(name, help=helptext)
        common(p, out_help="report directory")
        p.add_argument("--model", action="append", required=True, help="model JSON (repeat for compare)")
        p.add_argument("--split", type=_fraction, default=DEFAULT_SPLIT)
        p.add_argument("--eval-set", choices=("auto", "validation", "all"), default="auto")
        p.add_argument("--draws", type=int, default=DEFAULT_DRAWS, help="work-zone draws per individual")
    return parser


def _dispatch(args) -> int:
    cfg = _read_config(args.config)
    if args.command == "simulate":
        return cmd_simulate(cfg, args.out, args.seed)
    seed = 0 if args.seed is None else args.seed
    if args.command == "estimate-nl":
        settings = LbfgsSettings(**cfg)
        return cmd_estimate_nl(args.data, args.out, settings, seed, args.split)
    if args.command == "train-dnn":
        overrides = {"hidden_sizes": args.layers, "learning_rate": args.lr, "epochs": args.epochs, "batch_size": args.batch}
        merged = {**cfg, **{k: v for k, v in overrides.items() if v is not None}}
        if args.seed is not None or "seed" not in merged:
            merged["seed"] = seed
        return cmd_train_dnn(args.data, args.mode, TrainConfig(**merged), args.out, args.split)
    if args.command == "evaluate":
        if len(args.model) != 1:
            raise DataValidationError("evaluate takes exactly one --model; use compare for several")
        return cmd_evaluate(args.data, args.model[0], args.out, seed, args.split, args.eval_set, args.draws)
    return cmd_compare(args.data, args.model, args.out, seed, args.split, args.eval_set, args.draws)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (TrainingDivergedError, HessianError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
