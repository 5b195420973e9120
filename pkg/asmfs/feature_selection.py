"""
Joint multi-modality feature selection.

W (d x M, column m for modality m) minimises
    sum_m ||y - w_m^T X_m||^2 + mu ||W||_{2,1}
      + lambda sum_ik (s_ik sum_m (w_m^T x_i - w_m^T x_k)^2 + gamma_i s_ik^2)
by alternating an IRLS solve for W with the closed-form S update. mu always
weights the sparsity term and lambda the similarity term.
"""
import typing
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from asmfs.similarity import SimilarityMatrix, initial_similarity, projections, update_similarity
from shared.asmfs_protocol import AsmfsConfig
from shared.data_model import MultiModalDataset
from shared.exceptions import AsmfsError
from shared.log_data import get_logger

logger = get_logger("feature_selection")

# d x M regression matrix; row norms rank features
CoefficientMatrix = np.ndarray

RIDGE_START = 1e-10
RIDGE_MAX = 1e-4
MTFS_REL_TOL = 1e-6
MTFS_MAX_ITERS = 100
LASSO_TOL = 1e-13
LASSO_MAX_SWEEPS = 100000


@dataclass
class FitResult:
    W: CoefficientMatrix
    S: typing.Optional[SimilarityMatrix]
    objective_history: typing.List[float]
    converged: bool
    iterations: int
    method: str = "asmfs"
    adaptive_similarity: bool = True
    config: AsmfsConfig = field(default_factory=AsmfsConfig)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "adaptive_similarity": self.adaptive_similarity,
            "W": {"rows": int(self.W.shape[0]), "cols": int(self.W.shape[1]), "values": self.W.ravel().tolist()},
            "S": None if self.S is None else self.S.to_dict(),
            "gammas": None if self.S is None else self.S.gammas.tolist(),
            "objective_history": list(self.objective_history),
            "converged": self.converged,
            "iterations": self.iterations,
            "config": self.config.model_dump(mode="json", by_alias=True),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        W = np.asarray(data["W"]["values"], dtype=float).reshape(data["W"]["rows"], data["W"]["cols"])
        return cls(
            W=W,
            S=None if data["S"] is None else SimilarityMatrix.from_dict(data["S"]),
            objective_history=list(data["objective_history"]),
            converged=data["converged"],
            iterations=data["iterations"],
            method=data["method"],
            adaptive_similarity=data["adaptive_similarity"],
            config=AsmfsConfig.model_validate(data["config"]),
        )


@dataclass
class FeatureRanking:
    """Per-modality scores, descending rankings and selected index sets."""
    rule: str
    scores: typing.List[np.ndarray]
    rankings: typing.List[np.ndarray]
    selected: typing.List[np.ndarray]

    def to_dict(self, feature_names=None) -> dict:
        data = {
            "rule": self.rule,
            "scores": [s.tolist() for s in self.scores],
            "rankings": [r.tolist() for r in self.rankings],
            "selected": [s.tolist() for s in self.selected],
        }
        if feature_names is not None:
            data["selected_names"] = [[feature_names[i] for i in s] for s in self.selected]
        return data


class IrlsStep(typing.NamedTuple):
    W: CoefficientMatrix
    D: np.ndarray  # the reweighting matrix W was solved with
    objective: float


def l21_norm(W: CoefficientMatrix) -> float:
    return float(np.sum(np.linalg.norm(W, axis=1)))


def build_graph_term(S) -> np.ndarray:
    """
    Lfull with sum_ik s_ik (z_i - z_k)^2 == z^T Lfull z for any z, asymmetric S included:
    diag(row sums) + diag(column sums) - S - S^T.
    """
    S = getattr(S, "values", S)
    return np.diag(S.sum(axis=1)) + np.diag(S.sum(axis=0)) - S - S.T


def update_D(W: CoefficientMatrix, irls_epsilon: float) -> np.ndarray:
    """d_ii = 1 / (2 sqrt(||w_i||^2 + eps^2)); equals 1/(2||w_i||) unless the row is near zero."""
    row_norms_sq = np.sum(W * W, axis=1)
    return np.diag(0.5 / np.sqrt(row_norms_sq + irls_epsilon ** 2))


def _graph_quadratic(dataset: MultiModalDataset, W: CoefficientMatrix, Lfull: typing.Optional[np.ndarray]) -> float:
    if Lfull is None:
        return 0.0
    P = projections(dataset, W)
    return float(np.einsum("mi,ij,mj->", P, Lfull, P))


def _residual_energy(dataset: MultiModalDataset, W: CoefficientMatrix) -> float:
    y = dataset.targets
    return float(sum(np.sum((y - W[:, m] @ X) ** 2) for m, X in enumerate(dataset.modalities)))


def smoothed_w_objective(dataset: MultiModalDataset, W: CoefficientMatrix, S, config: AsmfsConfig) -> float:
    """The W-block objective with eps-smoothed row norms; IRLS never increases it."""
    Lfull = None if S is None or config.lambda_ == 0 else build_graph_term(S)
    smoothed_l21 = float(np.sum(np.sqrt(np.sum(W * W, axis=1) + config.irls_epsilon ** 2)))
    return (
        _residual_energy(dataset, W)
        + config.lambda_ * _graph_quadratic(dataset, W, Lfull)
        + config.mu * smoothed_l21
    )


def asmfs_objective(dataset: MultiModalDataset, W: CoefficientMatrix, S: SimilarityMatrix, config: AsmfsConfig) -> float:
    """Full joint objective, including the learned per-row gamma_i ||s_i||^2 term."""
    Lfull = build_graph_term(S)
    similarity_term = _graph_quadratic(dataset, W, Lfull) + float(np.sum(S.gammas * np.sum(S.values ** 2, axis=1)))
    return _residual_energy(dataset, W) + config.mu * l21_norm(W) + config.lambda_ * similarity_term


def _modality_systems(dataset: MultiModalDataset, S, lam: float):
    """Per modality: the D-independent part X X^T + lambda X Lfull X^T and the right side X y."""
    y = dataset.targets
    Lfull = None if S is None or lam == 0 else build_graph_term(S)
    systems = []
    for X in dataset.modalities:
        G = X @ X.T
        if Lfull is not None:
            G = G + lam * (X @ Lfull @ X.T)
        systems.append((G, X @ y))
    return systems


def surrogate_objective(dataset: MultiModalDataset, W: CoefficientMatrix, S, D: np.ndarray, config: AsmfsConfig) -> float:
    """Smooth reweighted objective with D held fixed (mu Tr(W^T D W) stands in for mu ||W||_{2,1})."""
    Lfull = None if S is None or config.lambda_ == 0 else build_graph_term(S)
    return (
        _residual_energy(dataset, W)
        + config.mu * float(np.trace(W.T @ D @ W))
        + config.lambda_ * _graph_quadratic(dataset, W, Lfull)
    )


def surrogate_gradient(dataset: MultiModalDataset, W: CoefficientMatrix, S, D: np.ndarray, config: AsmfsConfig) -> np.ndarray:
    gradient = np.empty_like(W)
    for m, (G, b) in enumerate(_modality_systems(dataset, S, config.lambda_)):
        gradient[:, m] = 2.0 * (G @ W[:, m] - b) + 2.0 * config.mu * (D @ W[:, m])
    return gradient


def _solve_spd(A: np.ndarray, b: np.ndarray, modality: str) -> np.ndarray:
    ridge = 0.0
    while True:
        try:
            factor = scipy.linalg.cho_factor(A + ridge * np.eye(A.shape[0]) if ridge else A)
            return scipy.linalg.cho_solve(factor, b)
        except np.linalg.LinAlgError:
            ridge = RIDGE_START if ridge == 0.0 else ridge * 10.0
            if ridge > RIDGE_MAX:
                raise AsmfsError(f"modality '{modality}' system stays singular with ridge {RIDGE_MAX:g}", provenance="feature_selection")
            logger.warning(f"IRLS | {modality} | System not positive definite, added ridge {ridge:g}")


def irls_steps(dataset: MultiModalDataset, S, config: AsmfsConfig, W_init: typing.Optional[CoefficientMatrix] = None,
               rounds: typing.Optional[int] = None) -> typing.Iterator[IrlsStep]:
    """
    Reweighted solves with S fixed. D starts at I when no W_init is given,
    otherwise it is derived from W_init; each round solves every modality's
    system (X X^T + mu D + lambda X Lfull X^T) w_m = X y and then refreshes D.
    """
    systems = _modality_systems(dataset, S, config.lambda_)
    d, M = dataset.n_features, dataset.n_modalities
    D = np.eye(d) if W_init is None else update_D(W_init, config.irls_epsilon)
    rounds = config.inner_w_iters if rounds is None else rounds
    for _ in range(rounds):
        W = np.empty((d, M))
        for m, (G, b) in enumerate(systems):
            W[:, m] = _solve_spd(G + config.mu * D, b, dataset.modality_names[m])
        yield IrlsStep(W=W, D=D, objective=smoothed_w_objective(dataset, W, S, config))
        D = update_D(W, config.irls_epsilon)


def update_W(dataset: MultiModalDataset, S, config: AsmfsConfig, W_init: typing.Optional[CoefficientMatrix] = None) -> CoefficientMatrix:
    W = W_init
    for step in irls_steps(dataset, S, config, W_init):
        W = step.W
    return W


def _alternate(dataset: MultiModalDataset, config: AsmfsConfig, adaptive: bool, method: str) -> FitResult:
    """
    S starts from raw distances. Each outer iteration runs the IRLS W-update and,
    when adaptive, the S-update; the first gamma_refresh_iters S-updates re-derive
    gamma_i, later ones keep it and solve each row for the held value.
    """
    S = initial_similarity(dataset, config.K, config.clamp_k)
    W = None
    history = []
    converged = False
    for iteration in range(1, config.max_outer_iters + 1):
        W = update_W(dataset, S, config, W)
        if adaptive:
            # with gamma_i held, no outer iteration increases the objective
            held = S.gammas if iteration > config.gamma_refresh_iters else None
            S = update_similarity(dataset, W, config.K, config.clamp_k, gammas=held)
        history.append(asmfs_objective(dataset, W, S, config))
        logger.debug(f"ASMFS | {method} | Iteration {iteration} objective {history[-1]:.10g}")
        if len(history) >= 2:
            previous = history[-2]
            if abs(history[-1] - previous) <= config.rel_tol * max(abs(previous), np.finfo(float).tiny):
                converged = True
                break
    if not converged:
        logger.warning(f"ASMFS | {method} | No convergence within {config.max_outer_iters} outer iterations")
    return FitResult(
        W=W,
        S=S,
        objective_history=history,
        converged=converged,
        iterations=len(history),
        method=method,
        adaptive_similarity=adaptive,
        config=config,
    )


def asmfs_fit(dataset: MultiModalDataset, config: AsmfsConfig) -> FitResult:
    return _alternate(dataset, config, adaptive=True, method="asmfs")


def fixed_similarity_fit(dataset: MultiModalDataset, config: AsmfsConfig) -> FitResult:
    """Ablation: S is computed once from raw distances and never updated."""
    return _alternate(dataset, config, adaptive=False, method="fixed_similarity")


def mtfs_fit_result(dataset: MultiModalDataset, mu: float, irls_epsilon: float = 1e-8) -> FitResult:
    """L2,1 multi-task least squares (no similarity term), iterated to IRLS convergence."""
    config = AsmfsConfig(lambda_=0.0, mu=mu, irls_epsilon=irls_epsilon)
    W, history, converged = None, [], False
    for step in irls_steps(dataset, None, config, rounds=MTFS_MAX_ITERS):
        W = step.W
        history.append(step.objective)
        if len(history) >= 2 and abs(history[-1] - history[-2]) <= MTFS_REL_TOL * max(abs(history[-2]), np.finfo(float).tiny):
            converged = True
            break
    if not converged:
        logger.warning(f"MTFS | mu={mu:g} | No convergence within {MTFS_MAX_ITERS} IRLS iterations")
    return FitResult(
        W=W,
        S=None,
        objective_history=history,
        converged=converged,
        iterations=len(history),
        method="mtfs",
        adaptive_similarity=False,
        config=config,
    )


def mtfs_fit(dataset: MultiModalDataset, mu: float, irls_epsilon: float = 1e-8) -> CoefficientMatrix:
    return mtfs_fit_result(dataset, mu, irls_epsilon).W


def _soft_threshold(value: float, threshold: float) -> float:
    return float(np.sign(value) * max(abs(value) - threshold, 0.0))


def lasso_fit(X: np.ndarray, y: np.ndarray, mu: float) -> np.ndarray:
    """min ||y - w^T X||^2 + mu ||w||_1 by cyclic coordinate descent; X is d x n."""
    gram = X @ X.T
    correlation = X @ y
    d = X.shape[0]
    w = np.zeros(d)
    gram_w = np.zeros(d)
    for _ in range(LASSO_MAX_SWEEPS):
        largest_step = 0.0
        for j in range(d):
            if gram[j, j] <= 0.0:
                continue
            rho = correlation[j] - gram_w[j] + gram[j, j] * w[j]
            updated = _soft_threshold(rho, mu / 2.0) / gram[j, j]
            step = updated - w[j]
            if step != 0.0:
                gram_w += step * gram[:, j]
                w[j] = updated
                largest_step = max(largest_step, abs(step))
        if largest_step <= LASSO_TOL * max(1.0, float(np.max(np.abs(w)))):
            return w
    logger.warning(f"LASSO | mu={mu:g} | Coordinate descent stopped after {LASSO_MAX_SWEEPS} sweeps")
    return w


def select_features(W: CoefficientMatrix, rule: str = "joint", epsilon_select: float = 1e-6,
                    top_t: typing.Optional[int] = None) -> FeatureRanking:
    """
    Scores are row norms of W (joint rule) or |w_im| (per_modality rule).
    Rankings are descending by score, ties by index. The selected set is either
    the top_t ranked features or those scoring above epsilon_select * max score.
    """
    if rule == "joint":
        joint = np.linalg.norm(W, axis=1)
        scores = [joint for _ in range(W.shape[1])]
    elif rule == "per_modality":
        scores = [np.abs(W[:, m]) for m in range(W.shape[1])]
    else:
        raise ValueError(f"unknown selection rule '{rule}'")
    rankings, selected = [], []
    for score in scores:
        ranking = np.lexsort((np.arange(score.shape[0]), -score))
        if top_t is not None:
            chosen = ranking[:top_t]
        else:
            best = float(score.max()) if score.size else 0.0
            chosen = ranking[score[ranking] > epsilon_select * best] if best > 0.0 else ranking[:0]
        rankings.append(ranking)
        selected.append(np.sort(chosen))
    return FeatureRanking(rule=rule, scores=scores, rankings=rankings, selected=selected)
