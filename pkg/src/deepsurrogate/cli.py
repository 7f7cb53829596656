"""Command-line entry point: ``dsur generate|train|predict|eval|bench``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import pandas as pd
from pydantic import ValidationError

from deepsurrogate.errors import ConfigurationError, DeepSurrogateError, FormatError, UsageError
from deepsurrogate.models.baseline import fit_fosr, fosr_predictions
from deepsurrogate.models.datagen import GeneratedTruth, generate, scenario, write_generated
from deepsurrogate.models.dataset import Dataset, read_dataset
from deepsurrogate.models.inference import InferenceConfig, holdout_noise_variance, predict_with_uncertainty
from deepsurrogate.models.surrogate import load_params, save_params
from deepsurrogate.models.tensor import Rng
from deepsurrogate.models.training import train
from deepsurrogate.utils.bench import BenchResult, BenchTable
from deepsurrogate.utils.config import RunConfig, load_config, write_manifest
from deepsurrogate.utils.io import write_csv, write_json
from deepsurrogate.utils.metrics import EvalReport, evaluate_frame, per_simulation, truth_frame

logger = logging.getLogger(__name__)

MODEL_FILE = "model.dsur"
TRAINING_LOG_FILE = "training_log.csv"
PREDICTIONS_FILE = "predictions.csv"
EVAL_JSON_FILE = "eval.json"
EVAL_CSV_FILE = "eval.csv"
EVAL_PER_SIM_FILE = "eval_per_sim.csv"
BENCH_MD_FILE = "bench.md"
BENCH_CSV_FILE = "bench.csv"


def _config(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    return load_config(args.config, {"seed": args.seed, "paths.out": args.out, **overrides})


def _require(value: Path | None, flag: str) -> Path:
    if value is None:
        raise UsageError(f"{flag} is required (or set it under [paths] in the config)")
    return Path(value)


def _calibrated_inference(cfg: RunConfig, data: Dataset, rng: Rng) -> InferenceConfig:
    inference = cfg.inference
    if inference.calibration_folds is None or inference.noise_var is not None:
        return inference
    noise_var = holdout_noise_variance(
        data, cfg.resolved_model(), cfg.resolved_train(), inference.calibration_folds, rng, inference.noise_floor
    )
    logger.info("Held-out noise variance %.4g from %d folds", noise_var, inference.calibration_folds)
    return inference.model_copy(update={"noise_var": noise_var})


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _config(args, scenario=args.scenario)
    spec = cfg.resolved_scenario()
    truth = generate(spec)
    out = cfg.paths.out
    write_generated(truth, out)
    write_manifest(cfg, out, "generate", scenario=spec.model_dump(mode="json"))
    print(f"Wrote scenario '{spec.name}' (n={spec.n}, H={spec.H}, H0={spec.H0}) to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args, **{"paths.data": args.data, "train.epochs": args.epochs})
    data = read_dataset(_require(cfg.paths.data, "--data"), "train")
    result = train(data, cfg.resolved_model(), cfg.resolved_train(), Rng(cfg.seed), verbose=args.verbose)
    out = cfg.paths.out
    model_path = save_params(result.params, out / MODEL_FILE)
    result.log.to_csv(out / TRAINING_LOG_FILE)
    write_manifest(cfg, out, "train", final_loss=result.log.rows[-1].train_loss)
    print(f"Saved model to {model_path}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config(
        args, **{"paths.model": args.model, "paths.data": args.data, "inference.draws": args.draws}
    )
    params = load_params(_require(cfg.paths.model, "--model"))
    data_dir = _require(cfg.paths.data, "--data")
    fitted_on = read_dataset(data_dir, "train")
    query = read_dataset(data_dir, args.split)
    inference = _calibrated_inference(cfg, fitted_on, Rng(cfg.seed).spawn(2))
    frame = predict_with_uncertainty(params, fitted_on, query, inference, Rng(cfg.seed))
    out = cfg.paths.out
    path = write_csv(out / PREDICTIONS_FILE, frame)
    write_manifest(cfg, out, "predict", split=args.split, noise_var=inference.noise_var)
    print(f"Wrote {len(frame)} predictions to {path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(
        args,
        **{"paths.predictions": args.predictions, "paths.data": args.data, "metrics.threshold": args.threshold},
    )
    pred_path = _require(cfg.paths.predictions, "--predictions")
    if not pred_path.exists():
        raise FormatError(f"predictions file {pred_path} does not exist")
    predictions = pd.read_csv(pred_path, float_precision="round_trip")
    data = read_dataset(_require(cfg.paths.data, "--data"), None)
    truth = truth_frame(data.sim_ids, data.site_ids, data.responses)
    threshold = cfg.metrics.threshold
    report = evaluate_frame(predictions, truth, threshold)

    out = cfg.paths.out
    write_json(out / EVAL_JSON_FILE, report.model_dump())
    write_csv(out / EVAL_CSV_FILE, report.to_frame())
    write_csv(out / EVAL_PER_SIM_FILE, per_simulation(predictions, truth, threshold))
    write_manifest(cfg, out, "eval")
    print(report.to_json(), end="")
    return 0


def _run_method(
    method: str, truth: GeneratedTruth, cfg: RunConfig, rng: Rng
) -> tuple[pd.DataFrame, float]:
    start = time.perf_counter()
    if method == "deepsurrogate":
        result = train(truth.dataset, cfg.resolved_model(), cfg.resolved_train(), rng.spawn(0))
        frame = predict_with_uncertainty(
            result.params,
            truth.dataset,
            truth.test_dataset,
            _calibrated_inference(cfg, truth.dataset, rng.spawn(2)),
            rng.spawn(1),
        )
    elif method == "fosr":
        model = fit_fosr(truth.dataset, cfg.bench.fosr_m_s, cfg.bench.fosr_lam)
        frame = fosr_predictions(model, truth.test_dataset)
    else:
        raise UsageError(f"unknown method '{method}'")
    return frame, time.perf_counter() - start


def run_bench(cfg: RunConfig, workers: int | None = None) -> BenchTable:
    """Evaluate every (scenario, method, replicate) cell of ``cfg.bench``.

    Data for replicate ``r`` is generated with seed ``cfg.seed + r``; cell
    ``j`` in declaration order fits with ``Rng(cfg.seed).spawn(j)``.
    """
    bench = cfg.bench
    table = BenchTable(bench.scenarios, list(bench.methods))
    workers = workers or cfg.worker_count()
    master = Rng(cfg.seed)
    threshold = cfg.metrics.threshold
    data_keys = [(name, rep) for name in bench.scenarios for rep in range(bench.replicates)]
    cells = [(name, method, rep) for name in bench.scenarios for rep in range(bench.replicates) for method in bench.methods]
    logger.info("Running %d bench cells on %d worker(s)", len(cells), workers)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        truths = dict(
            zip(
                data_keys,
                pool.map(lambda key: generate(scenario(key[0], seed=cfg.seed + key[1])), data_keys),
                strict=True,
            )
        )

        def run_cell(index: int) -> BenchResult:
            name, method, rep = cells[index]
            truth = truths[(name, rep)]
            frame, seconds = _run_method(method, truth, cfg, master.spawn(index))
            test = truth.test_dataset
            report: EvalReport = evaluate_frame(
                frame, truth_frame(test.sim_ids, test.site_ids, test.responses), threshold
            )
            return BenchResult(name, method, rep, report, seconds)

        for result in pool.map(run_cell, range(len(cells))):
            table.on_result(result)
    return table


def cmd_bench(args: argparse.Namespace) -> int:
    overrides: dict[str, Any] = {"train.epochs": args.epochs}
    if args.scenarios is not None:
        overrides["bench.scenarios"] = _split_list(args.scenarios)
    if args.methods is not None:
        overrides["bench.methods"] = _split_list(args.methods)
    cfg = _config(args, **overrides)
    if not cfg.bench.methods:
        raise UsageError("bench needs at least one method")
    if not cfg.bench.scenarios:
        raise UsageError("bench needs at least one scenario")

    table = run_bench(cfg)
    out = cfg.paths.out
    table.export(out / BENCH_MD_FILE)
    table.export(out / BENCH_CSV_FILE)
    write_manifest(cfg, out, "bench")
    print(table.to_markdown(), end="")
    return 0


def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON or TOML run file")
    common.add_argument("--seed", type=int, default=None, help="Master random seed")
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level"
    )

    parser = argparse.ArgumentParser(prog="dsur", description="Deep spatial surrogate toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="Generate a synthetic scenario")
    p.add_argument("--scenario", default=None, help="Preset name, e.g. s7 or gp-desk")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="Train a surrogate on a dataset directory")
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--verbose", action="store_true", help="Echo progress to stdout")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="Predict with Monte Carlo dropout intervals")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--split", default="test", choices=["test", "train"])
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="Score predictions against truth")
    p.add_argument("--predictions", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="Compare methods across scenarios")
    p.add_argument("--scenarios", default=None, help="Comma-separated preset names")
    p.add_argument("--methods", default=None, help="Comma-separated: deepsurrogate,fosr")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except DeepSurrogateError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return ConfigurationError.exit_code
    except Exception:
        logger.exception("Unexpected failure in '%s'", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
