"""
Multi-kernel linear SVM.

Each modality contributes a linear kernel on its selected features; kernels
are combined with simplex weights beta and the soft-margin dual is solved on
the combined matrix by pairwise (SMO) updates of the maximal violating pair.
"""
import itertools
import typing
from dataclasses import dataclass

import numpy as np

from shared.data_model import MultiModalDataset, NormalizationStats, concatenate_modalities, zscore_apply
from shared.exceptions import DatasetValidationError, KernelError
from shared.log_data import get_logger

logger = get_logger("classify")

LAYOUT_MULTI_KERNEL = "multi_kernel"
LAYOUT_CONCATENATED = "concatenated"

KKT_TOL = 1e-5
MAX_SMO_ITERS = 100_000
PSD_TOL = 1e-8
BETA_TOL = 1e-9
# floor for the pair curvature K_ii + K_jj - 2 K_ij
TAU = 1e-12


class SvmSolution(typing.NamedTuple):
    alphas: np.ndarray
    bias: float


@dataclass
class TrainedClassifier:
    layout: str
    support_vectors: typing.List[np.ndarray]  # per kernel block: selected features x training subjects
    alphas: np.ndarray
    bias: float
    betas: np.ndarray
    selected_features: typing.List[np.ndarray]
    normalization: NormalizationStats
    labels: np.ndarray
    modality_names: typing.List[str]
    C: float = 1.0

    @property
    def n_features(self) -> int:
        return self.normalization.means[0].shape[0]

    def to_dict(self) -> dict:
        return {
            "layout": self.layout,
            "modality_names": list(self.modality_names),
            "C": self.C,
            "alphas": self.alphas.tolist(),
            "bias": self.bias,
            "betas": self.betas.tolist(),
            "selected_features": [s.tolist() for s in self.selected_features],
            "support_vectors": [
                {"rows": int(sv.shape[0]), "cols": int(sv.shape[1]), "values": sv.ravel().tolist()}
                for sv in self.support_vectors
            ],
            "normalization": self.normalization.to_dict(),
            "labels": self.labels.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainedClassifier":
        try:
            return cls(
                layout=data["layout"],
                support_vectors=[
                    np.asarray(sv["values"], dtype=float).reshape(sv["rows"], sv["cols"])
                    for sv in data["support_vectors"]
                ],
                alphas=np.asarray(data["alphas"], dtype=float),
                bias=float(data["bias"]),
                betas=np.asarray(data["betas"], dtype=float),
                selected_features=[np.asarray(s, dtype=int) for s in data["selected_features"]],
                normalization=NormalizationStats.from_dict(data["normalization"]),
                labels=np.asarray(data["labels"], dtype=int),
                modality_names=list(data["modality_names"]),
                C=float(data["C"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetValidationError(f"model document is malformed: {e}")


def linear_kernel(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Inner products between the columns of A (d' x p) and B (d' x q)."""
    if A.shape[0] != B.shape[0]:
        raise KernelError(f"dimension mismatch: {A.shape[0]} vs {B.shape[0]} features")
    return A.T @ B


def check_betas(betas, M: int) -> np.ndarray:
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (M,):
        raise KernelError(f"{betas.shape[0]} kernel weights for {M} kernels")
    if np.any(betas < -BETA_TOL) or abs(float(betas.sum()) - 1.0) > BETA_TOL:
        raise KernelError(f"kernel weights {betas.tolist()} are not on the simplex")
    return betas


def combine_kernels(kernels: typing.Sequence[np.ndarray], betas) -> np.ndarray:
    betas = check_betas(betas, len(kernels))
    shape = kernels[0].shape
    if any(k.shape != shape for k in kernels):
        raise KernelError(f"kernel shapes differ: {[k.shape for k in kernels]}")
    combined = np.zeros(shape)
    for beta, kernel in zip(betas, kernels):
        combined += beta * kernel
    return combined


def _check_training_kernel(K: np.ndarray, y: np.ndarray):
    n = y.shape[0]
    if K.shape != (n, n):
        raise KernelError(f"kernel is {K.shape}, expected {(n, n)}")
    if set(np.unique(y).tolist()) != {-1, 1}:
        raise KernelError("SVM training needs both classes")
    scale = max(1.0, float(np.max(np.abs(K))))
    if np.max(np.abs(K - K.T)) > PSD_TOL * scale:
        raise KernelError("kernel is not symmetric")
    smallest = float(np.linalg.eigvalsh(K)[0])
    if smallest < -PSD_TOL * scale:
        raise KernelError(f"kernel is not positive semidefinite (smallest eigenvalue {smallest:.3g})")


def _bounds(y: np.ndarray, C: float):
    """Box for y_t alpha_t: [min(0, y_t C), max(0, y_t C)]."""
    return np.minimum(0.0, y * C), np.maximum(0.0, y * C)


def _violating_pair(ya: np.ndarray, yg: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    up = ya < upper
    low = ya > lower
    if not up.any() or not low.any():
        return None, None, 0.0
    i = int(np.flatnonzero(up)[np.argmax(yg[up])])
    j = int(np.flatnonzero(low)[np.argmin(yg[low])])
    return i, j, float(yg[i] - yg[j])


def svm_dual_objective(alphas: np.ndarray, K: np.ndarray, y: np.ndarray) -> float:
    ay = alphas * y
    return float(alphas.sum() - 0.5 * ay @ K @ ay)


def kkt_violation(alphas: np.ndarray, K: np.ndarray, y: np.ndarray, C: float) -> float:
    y = np.asarray(y, dtype=float)
    g = 1.0 - y * (K @ (alphas * y))
    lower, upper = _bounds(y, C)
    _, _, violation = _violating_pair(y * alphas, y * g, lower, upper)
    return max(violation, 0.0)


def svm_train(K: np.ndarray, y: np.ndarray, C: float) -> SvmSolution:
    y = np.asarray(y, dtype=float)
    _check_training_kernel(K, y)
    n = y.shape[0]
    lower, upper = _bounds(y, C)
    alphas = np.zeros(n)
    # g = 1 - Q alpha with Q_ij = y_i y_j K_ij
    g = np.ones(n)
    diagonal = np.diag(K)
    iterations = 0
    while True:
        ya = y * alphas
        i, j, violation = _violating_pair(ya, y * g, lower, upper)
        if i is None or violation < KKT_TOL:
            break
        if iterations >= MAX_SMO_ITERS:
            logger.warning(f"SVM | n={n} | Stopped after {MAX_SMO_ITERS} iterations, KKT violation {violation:.3g}")
            break
        curvature = max(diagonal[i] + diagonal[j] - 2.0 * K[i, j], TAU)
        step = min(upper[i] - ya[i], ya[j] - lower[j], violation / curvature)
        g += step * y * (K[j] - K[i])
        alphas[i] = np.clip(alphas[i] + y[i] * step, 0.0, C)
        alphas[j] = np.clip(alphas[j] - y[j] * step, 0.0, C)
        iterations += 1

    yg = y * g
    free = (alphas > 0.0) & (alphas < C)
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        ya = y * alphas
        up, low = ya < upper, ya > lower
        highest = float(yg[up].max()) if up.any() else float(yg[low].min())
        lowest = float(yg[low].min()) if low.any() else highest
        bias = 0.5 * (highest + lowest)
        logger.warning(f"SVM | n={n} | No free support vectors, bias taken from the bound-vector midpoint")
    logger.debug(f"SVM | n={n} | Converged in {iterations} iterations, {int(np.sum(alphas > 0))} support vectors")
    return SvmSolution(alphas=alphas, bias=bias)


def kernel_blocks(dataset: MultiModalDataset, layout: str) -> typing.List[np.ndarray]:
    if layout == LAYOUT_CONCATENATED:
        return concatenate_modalities(dataset).modalities
    return list(dataset.modalities)


def decision_function(model: TrainedClassifier, blocks: typing.Sequence[np.ndarray]) -> np.ndarray:
    """Decision values for normalised kernel blocks (selected features not yet applied)."""
    kernels = [
        linear_kernel(sv, block[selected])
        for sv, block, selected in zip(model.support_vectors, blocks, model.selected_features)
    ]
    return (model.alphas * model.labels) @ combine_kernels(kernels, model.betas) + model.bias


def train_classifier(train: MultiModalDataset, normalization: NormalizationStats, layout: str,
                     selected_features: typing.Sequence[np.ndarray], betas, C: float) -> TrainedClassifier:
    """Fit the SVM on a normalised training split restricted to the selected features."""
    blocks = kernel_blocks(train, layout)
    support_vectors = [block[selected] for block, selected in zip(blocks, selected_features)]
    kernels = [linear_kernel(sv, sv) for sv in support_vectors]
    solution = svm_train(combine_kernels(kernels, betas), train.labels, C)
    return TrainedClassifier(
        layout=layout,
        support_vectors=support_vectors,
        alphas=solution.alphas,
        bias=solution.bias,
        betas=np.asarray(betas, dtype=float),
        selected_features=[np.asarray(s, dtype=int) for s in selected_features],
        normalization=normalization,
        labels=np.asarray(train.labels, dtype=int),
        modality_names=list(train.modality_names),
        C=C,
    )


def predict(model: TrainedClassifier, subjects: MultiModalDataset) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Normalises raw subjects with the model's statistics, then scores them; sign(0) is +1."""
    if subjects.n_modalities != len(model.modality_names):
        missing = model.modality_names[subjects.n_modalities:]
        detail = f"missing modality {', '.join(repr(m) for m in missing)}" if missing else "extra modalities"
        raise DatasetValidationError(
            f"model expects {len(model.modality_names)} modalities, got {subjects.n_modalities}: {detail}"
        )
    if subjects.n_features != model.n_features:
        raise DatasetValidationError(
            f"feature count mismatch: model expects {model.n_features}, got {subjects.n_features}"
        )
    normalized = zscore_apply(subjects, model.normalization)
    decisions = decision_function(model, kernel_blocks(normalized, model.layout))
    return decisions, np.where(decisions >= 0.0, 1, -1)


def beta_grid(M: int, step: float = 0.1) -> typing.List[typing.Tuple[float, ...]]:
    """
    Candidate kernel weights in descending lexicographic order. Two modalities
    use beta_1 in {step, ..., 1 - step}; three or more use every simplex point
    on the step lattice.
    """
    if M == 1:
        return [(1.0,)]
    units = int(round(1.0 / step))
    if M == 2:
        return [(k / units, (units - k) / units) for k in range(units - 1, 0, -1)]
    points = [p for p in itertools.product(range(units, -1, -1), repeat=M) if sum(p) == units]
    return [tuple(c / units for c in p) for p in points]


def grid_search_beta(train: MultiModalDataset, selected_features, C: float, folds: np.ndarray,
                     step: float = 0.1, layout: str = LAYOUT_MULTI_KERNEL) -> np.ndarray:
    """
    Picks the beta with the best mean accuracy over the given fold assignment of
    a normalised training split; ties keep the earliest grid point.
    """
    blocks = kernel_blocks(train, layout)
    if len(blocks) == 1:
        return np.ones(1)
    grams = [linear_kernel(block[s], block[s]) for block, s in zip(blocks, selected_features)]
    y = train.labels
    fold_ids = np.unique(folds)
    best, best_accuracy = None, -1.0
    for betas in beta_grid(len(blocks), step):
        combined = combine_kernels(grams, betas)
        accuracies = []
        for fold in fold_ids:
            test = folds == fold
            fit = ~test
            if len(np.unique(y[fit])) < 2:
                continue
            solution = svm_train(combined[np.ix_(fit, fit)], y[fit], C)
            decisions = (solution.alphas * y[fit]) @ combined[np.ix_(fit, test)] + solution.bias
            accuracies.append(float(np.mean(np.where(decisions >= 0.0, 1, -1) == y[test])))
        accuracy = float(np.mean(accuracies)) if accuracies else 0.0
        if accuracy > best_accuracy:
            best, best_accuracy = betas, accuracy
    logger.debug(f"BETA | M={len(blocks)} | Selected {best} with CV accuracy {best_accuracy:.4f}")
    return np.asarray(best, dtype=float)
