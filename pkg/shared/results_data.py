from typing import List, Optional
from dataclasses import dataclass, field, asdict

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "f1", "auc")


@dataclass
class ClassificationMetrics:
    """
    Rates are in [0, 1]; a rate whose denominator is zero is None.
    roc rows are (fpr, tpr, threshold); the first threshold is None (above every score).
    """
    accuracy: Optional[float] = None
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    f1: Optional[float] = None
    auc: Optional[float] = None
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    roc: List[list] = field(default_factory=list)


@dataclass
class FoldMetrics:
    method: str
    repeat: int
    fold: int
    n_train: int = 0
    n_test: int = 0
    metrics: Optional[ClassificationMetrics] = None
    hyperparameters: Optional[dict] = None
    betas: Optional[List[float]] = None
    n_selected: Optional[List[int]] = None
    failed: bool = False
    error: Optional[str] = None


@dataclass
class MetricsReport:
    method: str
    folds: List[FoldMetrics] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)  # metric -> {"mean", "std", "count"}
    roc: List[list] = field(default_factory=list)  # pooled over every test prediction
    failed_folds: int = 0
    flagged: bool = False
    note: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class SweepPoint:
    axis: str  # "lambda_mu" or "k_mu"
    lambda_: float
    mu: float
    K: int
    mean_accuracy: Optional[float] = None
    std_accuracy: Optional[float] = None
    folds: int = 0
    failed_folds: int = 0
