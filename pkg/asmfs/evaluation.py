"""
Cross-validation harness: stratified folds, nested hyperparameter selection,
the seven-method benchmark and the lambda/mu/K sensitivity sweep.

Every split, inner fold and fit draws its randomness from a seed derived from
(plan.seed, key path), so reports do not depend on --jobs or scheduling.
"""
import asyncio
import itertools
import typing
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix, roc_curve
from sklearn.model_selection import KFold, StratifiedKFold

from asmfs.classify import (
    LAYOUT_CONCATENATED,
    LAYOUT_MULTI_KERNEL,
    TrainedClassifier,
    grid_search_beta,
    predict,
    train_classifier,
)
from asmfs.feature_selection import (
    FeatureRanking,
    FitResult,
    asmfs_fit,
    fixed_similarity_fit,
    lasso_fit,
    mtfs_fit_result,
    select_features,
)
from shared.asmfs_protocol import AsmfsConfig, CvPlan, HyperparameterGrids, RunConfig
from shared.data_model import MultiModalDataset, concatenate_modalities, zscore_apply, zscore_fit
from shared.exceptions import AsmfsError, ConfigValidationError
from shared.log_data import get_logger
from shared.results_data import METRIC_NAMES, ClassificationMetrics, FoldMetrics, MetricsReport, SweepPoint
from shared.seeding import derive_seed

logger = get_logger("evaluation")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    layout: str
    selector: typing.Optional[str]
    axes: typing.Tuple[str, ...] = ()
    rule: typing.Optional[str] = None  # overrides the configured selection rule
    note: str = ""


METHODS = {
    spec.name: spec
    for spec in (
        MethodSpec("svm", LAYOUT_CONCATENATED, None),
        MethodSpec("lasso_svm", LAYOUT_CONCATENATED, "lasso", ("mu",), rule="per_modality"),
        MethodSpec("mksvm", LAYOUT_MULTI_KERNEL, None),
        MethodSpec("lasso_mksvm", LAYOUT_MULTI_KERNEL, "lasso", ("mu",), rule="per_modality"),
        MethodSpec("mtfs", LAYOUT_MULTI_KERNEL, "mtfs", ("mu",)),
        MethodSpec(
            "fixed_similarity", LAYOUT_MULTI_KERNEL, "fixed_similarity", ("lambda", "mu", "K"),
            note="stand-in ablation: similarity fixed at its raw-space initialisation",
        ),
        MethodSpec("asmfs", LAYOUT_MULTI_KERNEL, "asmfs", ("lambda", "mu", "K")),
    )
}


class Hyperparameters(typing.NamedTuple):
    """None marks an axis the method does not use."""
    lambda_: typing.Optional[float]
    mu: typing.Optional[float]
    K: typing.Optional[int]

    def to_dict(self) -> dict:
        return {"lambda": self.lambda_, "mu": self.mu, "K": self.K}

    def tie_key(self):
        # smaller mu first, then smaller lambda, then smaller K
        return (self.mu or 0.0, self.lambda_ or 0.0, self.K or 0)


@dataclass(frozen=True)
class PipelineSettings:
    asmfs: AsmfsConfig = field(default_factory=AsmfsConfig)
    C: float = 1.0
    select_rule: str = "joint"
    epsilon_select: float = 1e-6
    top_t: typing.Optional[int] = None
    beta_step: float = 0.1
    inner_folds: int = 10
    inner_beta_search: bool = False
    stratified: bool = True

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "PipelineSettings":
        return cls(
            asmfs=config.asmfs,
            C=config.C,
            select_rule=config.select_rule,
            epsilon_select=config.epsilon_select,
            top_t=config.top_t,
            beta_step=config.grids.beta_step,
            inner_folds=config.plan.inner_folds,
            inner_beta_search=config.inner_beta_search,
            stratified=config.plan.stratified,
        )


@dataclass
class PipelineFit:
    method: str
    params: Hyperparameters
    classifier: TrainedClassifier
    fit_result: typing.Optional[FitResult] = None
    ranking: typing.Optional[FeatureRanking] = None


@dataclass
class NestedFit:
    params: Hyperparameters
    pipeline: PipelineFit
    inner_scores: typing.Dict[Hyperparameters, float] = field(default_factory=dict)


def method_spec(name: str) -> MethodSpec:
    try:
        return METHODS[name]
    except KeyError:
        raise ConfigValidationError(f"unknown method '{name}', expected one of {list(METHODS)}")


def hyperparameter_grid(method: str, grids: HyperparameterGrids) -> typing.List[Hyperparameters]:
    spec = method_spec(method)
    lambdas = grids.lambdas if "lambda" in spec.axes else [None]
    mus = grids.mus if "mu" in spec.axes else [None]
    ks = grids.ks if "K" in spec.axes else [None]
    candidates = [Hyperparameters(lam, mu, k) for lam, mu, k in itertools.product(lambdas, mus, ks)]
    return sorted(set(candidates), key=Hyperparameters.tie_key)


def default_hyperparameters(method: str, base: AsmfsConfig) -> Hyperparameters:
    spec = method_spec(method)
    return Hyperparameters(
        lambda_=base.lambda_ if "lambda" in spec.axes else None,
        mu=base.mu if "mu" in spec.axes else None,
        K=base.K if "K" in spec.axes else None,
    )


def _check_fold_count(n: int, folds: int):
    if folds < 2 or n < folds:
        raise ConfigValidationError(f"cannot split {n} subjects into {folds} folds")


def _assignment_from(splitter, labels: np.ndarray) -> np.ndarray:
    assignment = np.empty(labels.shape[0], dtype=int)
    for fold, (_, test_idx) in enumerate(splitter.split(np.zeros((labels.shape[0], 1)), labels)):
        assignment[test_idx] = fold
    return assignment


def stratified_kfold(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per subject; fold sizes and per-class fold counts differ by at most 1."""
    labels = np.asarray(labels)
    _check_fold_count(labels.shape[0], folds)
    counts = {label: int(np.sum(labels == label)) for label in np.unique(labels)}
    short = [label for label, count in counts.items() if count < folds]
    if len(short) == len(counts):
        raise ConfigValidationError(f"every class has fewer than {folds} subjects, cannot stratify")
    for label in short:
        logger.warning(f"FOLDS | class {label} | {counts[label]} subject(s) for {folds} folds, some folds lack the class")
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, "stratify"))
    return _assignment_from(splitter, labels)


def fold_assignment(labels: np.ndarray, folds: int, seed: int, stratified: bool = True) -> np.ndarray:
    if stratified:
        return stratified_kfold(labels, folds, seed)
    labels = np.asarray(labels)
    _check_fold_count(labels.shape[0], folds)
    return _assignment_from(KFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, "shuffle")), labels)


def _inner_folds(labels: np.ndarray, requested: int, seed: int, stratified: bool) -> typing.Optional[np.ndarray]:
    """
    Inner folds are capped by the smaller class so every inner training split
    keeps both classes; None when fewer than two folds remain.
    """
    smallest = int(min(np.sum(labels == 1), np.sum(labels == -1)))
    count = min(requested, smallest)
    if count < 2:
        logger.warning(f"FOLDS | n={labels.shape[0]} | Smaller class has {smallest} subject(s), inner CV skipped")
        return None
    if count < requested:
        logger.info(f"FOLDS | n={labels.shape[0]} | Inner folds reduced from {requested} to {count}")
    return fold_assignment(labels, count, seed, stratified)


def _auc(true_labels: np.ndarray, decision_values: np.ndarray) -> typing.Optional[float]:
    positives = true_labels == 1
    n_pos, n_neg = int(positives.sum()), int((~positives).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(decision_values)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(true_labels: np.ndarray, decision_values: np.ndarray) -> typing.List[list]:
    true_labels = np.asarray(true_labels)
    if len(np.unique(true_labels)) < 2:
        return []
    fpr, tpr, thresholds = roc_curve(true_labels, decision_values, pos_label=1, drop_intermediate=False)
    return [
        [float(f), float(t), float(h) if np.isfinite(h) and i > 0 else None]
        for i, (f, t, h) in enumerate(zip(fpr, tpr, thresholds))
    ]


def _ratio(numerator: int, denominator: int, name: str, n: int) -> typing.Optional[float]:
    if denominator == 0:
        logger.warning(f"METRICS | n={n} | {name} undefined for this split, reported as null")
        return None
    return numerator / denominator


def compute_metrics(true_labels, predicted_labels, decision_values) -> ClassificationMetrics:
    """Positive class is +1; AUC uses the rank (Mann-Whitney) form so score ties count one half."""
    true_labels = np.asarray(true_labels, dtype=int)
    predicted_labels = np.asarray(predicted_labels, dtype=int)
    decision_values = np.asarray(decision_values, dtype=float)
    if not (true_labels.shape == predicted_labels.shape == decision_values.shape):
        raise ValueError("true labels, predictions and decision values differ in length")
    n = true_labels.shape[0]
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(true_labels, predicted_labels, labels=[-1, 1]).ravel())
    auc = _auc(true_labels, decision_values)
    if auc is None:
        logger.warning(f"METRICS | n={n} | AUC undefined with a single class, reported as null")
    return ClassificationMetrics(
        accuracy=_ratio(tp + tn, n, "Accuracy", n),
        sensitivity=_ratio(tp, tp + fn, "Sensitivity", n),
        specificity=_ratio(tn, tn + fp, "Specificity", n),
        f1=_ratio(2 * tp, 2 * tp + fp + fn, "F1", n),
        auc=auc,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        roc=roc_points(true_labels, decision_values),
    )


def _ensure_nonempty(ranking: FeatureRanking, method: str) -> typing.List[np.ndarray]:
    selected = []
    for block, chosen in enumerate(ranking.selected):
        if chosen.shape[0] == 0:
            top = int(ranking.rankings[block][0])
            logger.warning(f"SELECT | {method} | No feature passed the threshold in block {block}, kept top-ranked feature {top}")
            chosen = np.array([top])
        selected.append(chosen)
    return selected


def _select(blocks: MultiModalDataset, normalized: MultiModalDataset, spec: MethodSpec, params: Hyperparameters,
            settings: PipelineSettings):
    if spec.selector is None:
        return None, None
    fit_result = None
    if spec.selector == "lasso":
        W = np.column_stack([lasso_fit(X, blocks.targets, params.mu) for X in blocks.modalities])
    elif spec.selector == "mtfs":
        fit_result = mtfs_fit_result(normalized, params.mu, settings.asmfs.irls_epsilon)
        W = fit_result.W
    else:
        config = settings.asmfs.model_copy(update={"lambda_": params.lambda_, "mu": params.mu, "K": params.K})
        fit = asmfs_fit if spec.selector == "asmfs" else fixed_similarity_fit
        fit_result = fit(normalized, config)
        W = fit_result.W
    rule = spec.rule or settings.select_rule
    return fit_result, select_features(W, rule, settings.epsilon_select, settings.top_t)


def fit_pipeline(train: MultiModalDataset, method: str, params: Hyperparameters, settings: PipelineSettings,
                 seed: int, beta_search: bool = True) -> PipelineFit:
    """normalise -> select features -> choose beta -> train the SVM, on the training split only."""
    spec = method_spec(method)
    stats = zscore_fit(train)
    normalized = zscore_apply(train, stats)
    blocks = concatenate_modalities(normalized) if spec.layout == LAYOUT_CONCATENATED else normalized
    fit_result, ranking = _select(blocks, normalized, spec, params, settings)
    if ranking is None:
        selected = [np.arange(X.shape[0]) for X in blocks.modalities]
    else:
        selected = _ensure_nonempty(ranking, method)

    n_blocks = blocks.n_modalities
    folds = None
    if n_blocks > 1 and beta_search:
        folds = _inner_folds(train.labels, settings.inner_folds, derive_seed(seed, "beta"), settings.stratified)
    if n_blocks == 1:
        betas = np.ones(1)
    elif folds is not None:
        betas = grid_search_beta(normalized, selected, settings.C, folds, settings.beta_step, spec.layout)
    else:
        betas = np.full(n_blocks, 1.0 / n_blocks)
    classifier = train_classifier(normalized, stats, spec.layout, selected, betas, settings.C)
    return PipelineFit(method=method, params=params, classifier=classifier, fit_result=fit_result, ranking=ranking)


def _accuracy(pipeline: PipelineFit, test: MultiModalDataset) -> float:
    _, predicted = predict(pipeline.classifier, test)
    return float(np.mean(predicted == test.labels))


def nested_cv_fit(train: MultiModalDataset, method: str, grids: HyperparameterGrids, plan: CvPlan,
                  settings: PipelineSettings, seed: int) -> NestedFit:
    """
    Picks (lambda, mu, K) by inner CV accuracy on the training split (ties go to
    smaller mu, then smaller lambda, then smaller K) and refits on the whole split.
    """
    candidates = hyperparameter_grid(method, grids)
    scores = {}
    folds = None
    if len(candidates) > 1:
        folds = _inner_folds(train.labels, plan.inner_folds, derive_seed(seed, "inner"), plan.stratified)
    if folds is None:
        best = candidates[0]
    else:
        for params in candidates:
            accuracies = []
            try:
                for fold in np.unique(folds):
                    inner_train = train.subset(np.flatnonzero(folds != fold))
                    inner_test = train.subset(np.flatnonzero(folds == fold))
                    pipeline = fit_pipeline(
                        inner_train, method, params, settings, derive_seed(seed, "inner_fit", int(fold)),
                        beta_search=settings.inner_beta_search,
                    )
                    accuracies.append(_accuracy(pipeline, inner_test))
            except AsmfsError as e:
                logger.warning(f"NESTED | {method} | Candidate {params.to_dict()} skipped: {e}")
                continue
            scores[params] = float(np.mean(accuracies))
        if not scores:
            raise AsmfsError(f"every hyperparameter candidate failed for {method}", provenance="evaluation")
        best_score = max(scores.values())
        best = next(p for p in candidates if scores.get(p) == best_score)
    logger.debug(f"NESTED | {method} | Selected {best.to_dict()}")
    pipeline = fit_pipeline(train, method, best, settings, seed, beta_search=True)
    return NestedFit(params=best, pipeline=pipeline, inner_scores=scores)


def _evaluate_fold(dataset: MultiModalDataset, method: str, repeat: int, fold: int, assignment: np.ndarray,
                   grids: HyperparameterGrids, plan: CvPlan, settings: PipelineSettings):
    train_idx = np.flatnonzero(assignment != fold)
    test_idx = np.flatnonzero(assignment == fold)
    entry = FoldMetrics(method=method, repeat=repeat, fold=fold, n_train=int(train_idx.shape[0]), n_test=int(test_idx.shape[0]))
    test = dataset.subset(test_idx)
    try:
        nested = nested_cv_fit(dataset.subset(train_idx), method, grids, plan, settings, derive_seed(plan.seed, method, repeat, fold))
        decisions, predicted = predict(nested.pipeline.classifier, test)
        entry.metrics = compute_metrics(test.labels, predicted, decisions)
        entry.hyperparameters = nested.params.to_dict()
        entry.betas = nested.pipeline.classifier.betas.tolist()
        entry.n_selected = [int(s.shape[0]) for s in nested.pipeline.classifier.selected_features]
        return entry, decisions
    except Exception as e:
        logger.warning(f"BENCHMARK | {method} repeat {repeat} fold {fold} | Fold failed: {e}")
        entry.failed = True
        entry.error = str(e)
        return entry, None


def aggregate_metrics(folds: typing.Sequence[FoldMetrics]) -> dict:
    """mean and population std per metric over the folds that produced it, in (repeat, fold) order."""
    ordered = sorted(folds, key=lambda f: (f.repeat, f.fold))
    aggregate = {}
    for name in METRIC_NAMES:
        values = [getattr(f.metrics, name) for f in ordered if f.metrics is not None]
        values = [v for v in values if v is not None]
        aggregate[name] = {
            "mean": float(np.mean(values)) if values else None,
            "std": float(np.std(values)) if values else None,
            "count": len(values),
        }
    return aggregate


def _build_report(method: str, results, dataset: MultiModalDataset, assignments, config_echo: dict) -> MetricsReport:
    results = sorted(results, key=lambda r: (r[0].repeat, r[0].fold))
    folds = [entry for entry, _ in results]
    pooled_true, pooled_decisions = [], []
    for entry, decisions in results:
        if decisions is not None:
            pooled_true.append(dataset.labels[assignments[entry.repeat] == entry.fold])
            pooled_decisions.append(decisions)
    roc = roc_points(np.concatenate(pooled_true), np.concatenate(pooled_decisions)) if pooled_true else []
    failed = sum(1 for f in folds if f.failed)
    return MetricsReport(
        method=method,
        folds=folds,
        aggregate=aggregate_metrics(folds),
        roc=roc,
        failed_folds=failed,
        flagged=failed > 0,
        note=METHODS[method].note,
        config=config_echo,
    )


async def _run_bounded(jobs: int, calls: typing.Sequence[typing.Callable]):
    semaphore = asyncio.Semaphore(jobs)

    async def run(call):
        async with semaphore:
            return await asyncio.to_thread(call)

    return await asyncio.gather(*(run(call) for call in calls))


def run_benchmark(dataset: MultiModalDataset, methods: typing.Sequence[str], plan: CvPlan,
                  grids: HyperparameterGrids = None, settings: PipelineSettings = None, jobs: int = 1,
                  config_echo: dict = None) -> typing.List[MetricsReport]:
    grids = grids or HyperparameterGrids()
    settings = settings or PipelineSettings()
    for method in methods:
        method_spec(method)
    assignments = [
        fold_assignment(dataset.labels, plan.folds, derive_seed(plan.seed, "outer", repeat), plan.stratified)
        for repeat in range(plan.repeats)
    ]
    keys = [(method, repeat, fold) for method in methods for repeat in range(plan.repeats) for fold in range(plan.folds)]
    calls = [
        (lambda m=m, r=r, f=f: _evaluate_fold(dataset, m, r, f, assignments[r], grids, plan, settings))
        for m, r, f in keys
    ]
    logger.info(f"BENCHMARK | seed={plan.seed} | {len(calls)} fold fits over {len(methods)} method(s), jobs={jobs}")
    results = asyncio.run(_run_bounded(jobs, calls))
    reports = []
    for method in methods:
        method_results = [res for (m, _, _), res in zip(keys, results) if m == method]
        reports.append(_build_report(method, method_results, dataset, assignments, config_echo or {}))
    return reports


def _format_cell(stats: dict) -> str:
    if stats["mean"] is None:
        return "n/a"
    return f"{stats['mean']:.4f} ± {stats['std']:.4f}"


def format_table(reports: typing.Sequence[MetricsReport]) -> str:
    """Aligned text table: Method, Accuracy, Sensitivity, Specificity, F1, AUC."""
    header = ["Method", "Accuracy", "Sensitivity", "Specificity", "F1", "AUC"]
    rows = [
        [r.method + (" *" if r.flagged else "")] + [_format_cell(r.aggregate[name]) for name in METRIC_NAMES]
        for r in reports
    ]
    widths = [max(len(row[c]) for row in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header] + rows]
    if any(r.flagged for r in reports):
        lines.append("* some folds failed; see the JSON report")
    return "\n".join(lines)


def roc_frame(report: MetricsReport) -> pd.DataFrame:
    return pd.DataFrame(report.roc, columns=["fpr", "tpr", "threshold"])


def _sweep_accuracy(dataset: MultiModalDataset, params: Hyperparameters, train_idx: np.ndarray, test_idx: np.ndarray,
                    settings: PipelineSettings, seed: int) -> typing.Optional[float]:
    try:
        pipeline = fit_pipeline(dataset.subset(train_idx), "asmfs", params, settings, seed,
                                beta_search=settings.inner_beta_search)
        return _accuracy(pipeline, dataset.subset(test_idx))
    except AsmfsError as e:
        logger.warning(f"SWEEP | {params.to_dict()} | Fold failed: {e}")
        return None


def sensitivity_sweep(dataset: MultiModalDataset, plan: CvPlan, grids: HyperparameterGrids = None,
                      settings: PipelineSettings = None, jobs: int = 1) -> typing.List[SweepPoint]:
    """
    Plain CV accuracy of asmfs over lambda x mu at K = grids.sweep_k and over
    K x mu at lambda = grids.sweep_lambda.
    """
    grids = grids or HyperparameterGrids()
    settings = settings or PipelineSettings()
    points = [("lambda_mu", Hyperparameters(lam, mu, grids.sweep_k)) for lam in grids.lambdas for mu in grids.mus]
    points += [("k_mu", Hyperparameters(grids.sweep_lambda, mu, k)) for k in grids.ks for mu in grids.mus]
    assignments = [
        fold_assignment(dataset.labels, plan.folds, derive_seed(plan.seed, "outer", repeat), plan.stratified)
        for repeat in range(plan.repeats)
    ]
    splits = [(r, f) for r in range(plan.repeats) for f in range(plan.folds)]
    calls = [
        (lambda p=params, r=r, f=f: _sweep_accuracy(
            dataset, p, np.flatnonzero(assignments[r] != f), np.flatnonzero(assignments[r] == f),
            settings, derive_seed(plan.seed, "sweep", r, f),
        ))
        for _, params in points
        for r, f in splits
    ]
    logger.info(f"SWEEP | seed={plan.seed} | {len(points)} grid points x {len(splits)} folds, jobs={jobs}")
    accuracies = asyncio.run(_run_bounded(jobs, calls))
    sweep = []
    for index, (axis, params) in enumerate(points):
        chunk = accuracies[index * len(splits):(index + 1) * len(splits)]
        values = [a for a in chunk if a is not None]
        sweep.append(SweepPoint(
            axis=axis,
            lambda_=params.lambda_,
            mu=params.mu,
            K=params.K,
            mean_accuracy=float(np.mean(values)) if values else None,
            std_accuracy=float(np.std(values)) if values else None,
            folds=len(values),
            failed_folds=len(chunk) - len(values),
        ))
    return sweep
