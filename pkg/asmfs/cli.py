"""
Command-line entry point: synth, fit, evaluate, predict and sweep.

Configuration comes from model defaults, then an optional JSON file
(--config), then flags. Exit status is 0 on success, 2 for usage or
validation errors and 1 for anything else.
"""
import argparse
import json
import os
import sys
import typing
from dataclasses import asdict

import numpy as np
import pandas as pd
from pydantic import ValidationError

from asmfs.classify import TrainedClassifier, predict
from asmfs.evaluation import (
    PipelineSettings,
    default_hyperparameters,
    fit_pipeline,
    format_table,
    roc_frame,
    run_benchmark,
    sensitivity_sweep,
)
from asmfs.synthetic import generate, write_synthetic
from shared.asmfs_protocol import RunConfig
from shared.data_model import load_dataset, load_modalities
from shared.environment_variables import ASMFS_LOG, ASMFS_VERSION
from shared.exceptions import AsmfsError, ConfigValidationError, DatasetValidationError
from shared.log_data import LoggerType, configure_logging, get_logger
from shared.log_handler import register_warning_recorder, unregister_warning_recorder
from shared.seeding import derive_seed
from shared.store_results_handler import ArtifactWriter, register_artifact_writer

logger = get_logger("cli")

LOGGER_TYPES = {
    "synth": LoggerType.Synth,
    "fit": LoggerType.Fit,
    "evaluate": LoggerType.Evaluate,
    "predict": LoggerType.Predict,
    "sweep": LoggerType.Sweep,
}

# flag destination -> path inside the RunConfig document
FLAG_PATHS = {
    "method": ("method",),
    "methods": ("methods",),
    "lambda_": ("asmfs", "lambda"),
    "mu": ("asmfs", "mu"),
    "k": ("asmfs", "K"),
    "folds": ("plan", "folds"),
    "repeats": ("plan", "repeats"),
    "inner_folds": ("plan", "inner_folds"),
    "jobs": ("jobs",),
    "out": ("output_dir",),
    "modalities": ("modality_paths",),
    "labels": ("labels_path",),
    "model": ("model_path",),
    "log_level": ("log_level",),
    "top_t": ("top_t",),
    "C": ("C",),
    "n": ("synthetic", "n"),
    "d": ("synthetic", "d"),
    "M": ("synthetic", "M"),
    "n_informative": ("synthetic", "n_informative"),
    "separation": ("synthetic", "class_separation"),
    "noise_sigma": ("synthetic", "noise_sigma"),
}

# on evaluate a fixed hyperparameter becomes a single-point search grid
GRID_FLAG_PATHS = {
    "lambda_": ("grids", "lambdas"),
    "mu": ("grids", "mus"),
    "k": ("grids", "ks"),
}

TOP_FEATURES_DEFAULT = 10


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON RunConfig file; flags override its values")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--seed", type=int, help="Top-level seed for folds and synthetic data")
    parser.add_argument("--jobs", type=int, help="Concurrent fold fits")
    parser.add_argument("--log-level", dest="log_level", choices=["error", "warn", "info", "debug"])


def _add_model_flags(parser: argparse.ArgumentParser, method: bool = True, hyperparameters: bool = True):
    if method:
        parser.add_argument("--method", help="Feature selection method")
    if hyperparameters:
        parser.add_argument("--lambda", dest="lambda_", type=float, help="Similarity term weight")
        parser.add_argument("--mu", type=float, help="L2,1 sparsity weight")
        parser.add_argument("--k", type=int, help="Neighbours per similarity row")
    parser.add_argument("--top-t", dest="top_t", type=int, help="Keep the top t ranked features")
    parser.add_argument("--C", dest="C", type=float, help="SVM box constraint")


def _add_data_flags(parser: argparse.ArgumentParser, labels: bool = True):
    parser.add_argument("--modalities", nargs="+", help="One CSV per modality, subjects as rows")
    if labels:
        parser.add_argument("--labels", help="CSV with a single 'label' column")


def _add_cv_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--folds", type=int, help="Outer folds")
    parser.add_argument("--repeats", type=int, help="Repeats of the outer CV")
    parser.add_argument("--inner-folds", dest="inner_folds", type=int, help="Inner folds for hyperparameters")
    parser.add_argument("--inner-beta-search", dest="inner_beta_search", action="store_true", default=None,
                        help="Search kernel weights inside the inner CV too")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asmfs", description="Adaptive-similarity multi-modality feature selection.")
    parser.add_argument("--version", action="version", version=ASMFS_VERSION)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Write a seeded synthetic dataset")
    _add_common_flags(synth)
    synth.add_argument("--n", type=int, help="Subjects")
    synth.add_argument("--d", type=int, help="Features per modality")
    synth.add_argument("--M", dest="M", type=int, help="Modalities")
    synth.add_argument("--n-informative", dest="n_informative", type=int, help="Planted informative features")
    synth.add_argument("--separation", type=float, help="Distance between class means")
    synth.add_argument("--noise-sigma", dest="noise_sigma", type=float, help="Noise standard deviation")
    synth.add_argument("--correlated-noise", dest="correlated_noise", action="store_true", default=None,
                       help="Share a noise component across modalities")

    fit = commands.add_parser("fit", help="Fit one method on the whole dataset")
    _add_common_flags(fit)
    _add_data_flags(fit)
    _add_model_flags(fit)

    evaluate = commands.add_parser("evaluate", help="Cross-validated benchmark of several methods")
    _add_common_flags(evaluate)
    _add_data_flags(evaluate)
    _add_cv_flags(evaluate)
    _add_model_flags(evaluate, method=False)
    evaluate.add_argument("--methods", nargs="+", help="Methods to benchmark")

    predict_cmd = commands.add_parser("predict", help="Score subjects with a fitted model")
    _add_common_flags(predict_cmd)
    _add_data_flags(predict_cmd, labels=False)
    predict_cmd.add_argument("--model", help="model.json written by fit")

    sweep = commands.add_parser("sweep", help="Accuracy over the lambda/mu/K grids")
    _add_common_flags(sweep)
    _add_data_flags(sweep)
    _add_cv_flags(sweep)
    _add_model_flags(sweep, method=False, hyperparameters=False)
    return parser


def _read_config_file(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigValidationError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigValidationError(f"cannot parse config {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigValidationError(f"config {path} must hold a JSON object")
    return data


def _set_path(document: dict, path: typing.Tuple[str, ...], value):
    node = document
    for key in path[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigValidationError(f"config key '{key}' must be an object")
        node = child
    node[path[-1]] = value


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < JSON file < flags; every path is made absolute before anything runs."""
    document = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for flag, path in FLAG_PATHS.items():
        value = getattr(args, flag, None)
        if value is not None:
            _set_path(document, path, value)
    if getattr(args, "command", None) == "evaluate":
        for flag, path in GRID_FLAG_PATHS.items():
            value = getattr(args, flag, None)
            if value is not None:
                _set_path(document, path, [value])
    if getattr(args, "seed", None) is not None:
        _set_path(document, ("plan", "seed"), args.seed)
        _set_path(document, ("synthetic", "seed"), args.seed)
    if getattr(args, "correlated_noise", None):
        _set_path(document, ("synthetic", "correlated_noise"), True)
    if getattr(args, "inner_beta_search", None):
        document["inner_beta_search"] = True
    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigValidationError(f"invalid configuration: {e}")
    return config.model_copy(update={
        "modality_paths": [os.path.abspath(p) for p in config.modality_paths],
        "labels_path": os.path.abspath(config.labels_path) if config.labels_path else None,
        "model_path": os.path.abspath(config.model_path) if config.model_path else None,
        "output_dir": os.path.abspath(config.output_dir),
    })


def _require(value, flag: str):
    if not value:
        raise ConfigValidationError(f"{flag} is required")
    return value


def cmd_synth(config: RunConfig, writer: ArtifactWriter) -> typing.List[str]:
    dataset, truth = generate(config.synthetic)
    echo = {"config": config.echo(), "version": ASMFS_VERSION}
    written = write_synthetic(dataset, truth, config.synthetic, config.output_dir, echo=echo)
    writer.written.extend(written)
    return written


def _training_dataset(config: RunConfig):
    _require(config.modality_paths, "--modalities")
    _require(config.labels_path, "--labels")
    return load_dataset(config.modality_paths, config.labels_path)


def _fit_summary(config: RunConfig, pipeline, training_accuracy: float, feature_names) -> str:
    params = pipeline.params.to_dict()
    lines = [f"method: {config.method}"]
    for name, value in params.items():
        lines.append(f"{name}: {'inactive' if value is None else value}")
    lines.append(f"training accuracy: {training_accuracy:.4f}")
    lines.append(f"kernel weights: {', '.join(f'{b:.2f}' for b in pipeline.classifier.betas)}")
    fit_result = pipeline.fit_result
    if fit_result is not None:
        state = "converged" if fit_result.converged else "not converged"
        lines.append(f"objective ({state} after {fit_result.iterations} iterations):")
        lines.extend(f"  {i + 1:3d}  {value:.10g}" for i, value in enumerate(fit_result.objective_history))
    ranking = pipeline.ranking
    if ranking is not None:
        t = config.top_t or TOP_FEATURES_DEFAULT
        for block, (order, scores) in enumerate(zip(ranking.rankings, ranking.scores)):
            names = feature_names if len(feature_names) == scores.shape[0] else [str(i) for i in range(scores.shape[0])]
            lines.append(f"top {t} features (block {block}, {ranking.rule} rule):")
            lines.extend(f"  {names[i]:<24} {scores[i]:.6g}" for i in order[:t])
    lines.append(f"selected features per block: {[int(s.shape[0]) for s in pipeline.classifier.selected_features]}")
    return "\n".join(lines)


def cmd_fit(config: RunConfig, writer: ArtifactWriter) -> typing.List[str]:
    dataset = _training_dataset(config)
    settings = PipelineSettings.from_run_config(config)
    params = default_hyperparameters(config.method, config.asmfs)
    pipeline = fit_pipeline(dataset, config.method, params, settings, derive_seed(config.plan.seed, "fit"))
    _, predicted = predict(pipeline.classifier, dataset)
    training_accuracy = float(np.mean(predicted == dataset.labels))
    logger.info(f"FIT | {config.method} | Training accuracy {training_accuracy:.4f}")

    writer.write_json("model.json", {"model": pipeline.classifier.to_dict()})
    if pipeline.fit_result is not None:
        payload = {"fit": pipeline.fit_result.to_dict()}
        if pipeline.ranking is not None:
            payload["ranking"] = pipeline.ranking.to_dict(dataset.feature_names)
        writer.write_json("fit_result.json", payload)
        if pipeline.fit_result.S is not None:
            writer.write_csv("similarity.csv", pipeline.fit_result.S.triplet_frame())
            writer.write_csv("similarity_dense.csv", pipeline.fit_result.S.dense_frame())
    writer.write_text("summary.txt", _fit_summary(config, pipeline, training_accuracy, dataset.feature_names))
    return writer.written


def cmd_evaluate(config: RunConfig, writer: ArtifactWriter) -> typing.List[str]:
    dataset = _training_dataset(config)
    reports = run_benchmark(
        dataset,
        config.methods,
        config.plan,
        config.grids,
        PipelineSettings.from_run_config(config),
        jobs=config.jobs,
        config_echo=config.echo(),
    )
    writer.write_json("report.json", {"reports": [r.to_dict() for r in reports]})
    writer.write_text("report.txt", format_table(reports))
    for report in reports:
        writer.write_csv(f"roc_{report.method}.csv", roc_frame(report))
    return writer.written


def load_model(path: str) -> TrainedClassifier:
    if not os.path.isfile(path):
        raise DatasetValidationError(f"model file not found: {path}", path=path)
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DatasetValidationError(f"cannot parse model {path}: {e}", path=path)
    if not isinstance(document, dict) or "model" not in document:
        raise DatasetValidationError(f"{path} holds no 'model' entry", path=path)
    return TrainedClassifier.from_dict(document["model"])


def cmd_predict(config: RunConfig, writer: ArtifactWriter) -> typing.List[str]:
    model = load_model(_require(config.model_path, "--model"))
    subjects = load_modalities(_require(config.modality_paths, "--modalities"), modality_names=None)
    decisions, labels = predict(model, subjects)
    frame = pd.DataFrame({
        "subject": np.arange(decisions.shape[0]),
        "decision_value": decisions,
        "predicted_label": labels.astype(int),
    })
    writer.write_csv("predictions.csv", frame)
    return writer.written


def cmd_sweep(config: RunConfig, writer: ArtifactWriter) -> typing.List[str]:
    dataset = _training_dataset(config)
    points = sensitivity_sweep(
        dataset, config.plan, config.grids, PipelineSettings.from_run_config(config), jobs=config.jobs
    )
    records = [{("lambda" if k == "lambda_" else k): v for k, v in asdict(p).items()} for p in points]
    writer.write_csv("sweep.csv", pd.DataFrame(records))
    writer.write_json("sweep.json", {"points": records})
    return writer.written


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(ASMFS_LOG)
    recorder = register_warning_recorder(LOGGER_TYPES[args.command])
    try:
        config = load_run_config(args)
        if config.log_level:
            configure_logging(config.log_level)
        writer = register_artifact_writer(config.output_dir, config.echo(), recorder)
        written = COMMANDS[args.command](config, writer)
        logger.info(f"CLI | {args.command} | Wrote {len(written)} file(s) to {config.output_dir}")
        return 0
    except AsmfsError as e:
        print(f"{e.provenance} | {e.message}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"asmfs | {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    finally:
        unregister_warning_recorder(recorder)


if __name__ == "__main__":
    sys.exit(main())
