"""
Adaptive similarity learning.

Each subject's row of S solves a simplex-constrained QP over its within-class
peers; the closed-form KKT solution keeps the K nearest peers and derives the
row regulariser gamma_i from the (K+1)-th distance, so no gamma hyperparameter
exists. One S is shared by all modalities: distances are summed over them.
Once gamma_i is held, a row is re-solved for that gamma over its K nearest peers.
"""
import typing
from dataclasses import dataclass

import numpy as np
import pandas as pd

from shared.data_model import MultiModalDataset
from shared.exceptions import NeighborCountError
from shared.log_data import get_logger

logger = get_logger("similarity")


@dataclass(frozen=True)
class DistanceRow:
    index: int
    candidates: np.ndarray  # within-class subject indices, ascending, self excluded
    distances: np.ndarray  # squared distances aligned with candidates


class RowSolution(typing.NamedTuple):
    weights: np.ndarray  # aligned with DistanceRow.candidates
    gamma: float
    eta: float


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    neighbor_count: int
    gammas: np.ndarray
    effective_k: typing.Optional[np.ndarray] = None  # per-row K after clamping

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    def to_triplets(self) -> typing.List[typing.Tuple[int, int, float]]:
        rows, cols = np.nonzero(self.values)
        return [(int(i), int(j), float(self.values[i, j])) for i, j in zip(rows, cols)]

    def to_dict(self) -> dict:
        return {
            "n": self.n_subjects,
            "neighbor_count": self.neighbor_count,
            "effective_k": None if self.effective_k is None else self.effective_k.tolist(),
            "gammas": self.gammas.tolist(),
            "triplets": [list(t) for t in self.to_triplets()],
        }

    @staticmethod
    def _values_from_triplets(n: int, triplets) -> np.ndarray:
        values = np.zeros((n, n))
        for i, j, s in triplets:
            values[int(i), int(j)] = s
        return values

    @classmethod
    def from_dict(cls, data: dict) -> "SimilarityMatrix":
        values = cls._values_from_triplets(data["n"], data["triplets"])
        effective_k = data.get("effective_k")
        return cls(
            values=values,
            neighbor_count=data["neighbor_count"],
            gammas=np.asarray(data["gammas"], dtype=float),
            effective_k=None if effective_k is None else np.asarray(effective_k, dtype=int),
        )

    def dense_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=[str(j) for j in range(self.n_subjects)])

    def triplet_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.to_triplets(), columns=["i", "j", "s_ij"])


def within_class_candidates(labels: np.ndarray, i: int) -> np.ndarray:
    mask = labels == labels[i]
    mask[i] = False
    return np.flatnonzero(mask)


def projections(dataset: MultiModalDataset, W: np.ndarray) -> np.ndarray:
    """M x n matrix whose row m holds w_m^T X_m."""
    return np.vstack([W[:, m] @ X for m, X in enumerate(dataset.modalities)])


def _distance_row(features: np.ndarray, labels: np.ndarray, i: int) -> DistanceRow:
    candidates = within_class_candidates(labels, i)
    diff = features[:, candidates] - features[:, [i]]
    return DistanceRow(index=i, candidates=candidates, distances=np.sum(diff * diff, axis=0))


def projected_distance_row(dataset: MultiModalDataset, W: np.ndarray, i: int) -> DistanceRow:
    return _distance_row(projections(dataset, W), dataset.labels, i)


def raw_distance_row(dataset: MultiModalDataset, i: int) -> DistanceRow:
    return _distance_row(np.vstack(dataset.modalities), dataset.labels, i)


def solve_row(row: DistanceRow, K: int) -> RowSolution:
    """
    Closed-form minimiser of sum_k (d_k s_k + gamma s_k^2) over the simplex with
    gamma = (K/2) d_(K+1) - (1/2) sum_{k<=K} d_(k) on ascending distances.
    Distance ties are broken by ascending subject index.
    """
    p = row.distances.shape[0]
    if p < K + 1:
        raise NeighborCountError(row.index, p, K)
    order = np.lexsort((row.candidates, row.distances))
    nearest = row.distances[order[:K]]
    next_distance = row.distances[order[K]]
    gamma = 0.5 * float(np.sum(next_distance - nearest))
    weights = np.zeros(p)
    if gamma > 0.0:
        mean_nearest = float(nearest.mean())
        eta = 1.0 / K + mean_nearest / (2.0 * gamma)
        weights[order[:K]] = np.maximum(1.0 / K + (mean_nearest - nearest) / (2.0 * gamma), 0.0)
    else:
        # first K+1 distances equal: the uniform prior is the limit solution
        eta = 1.0 / K
        weights[order[:K]] = 1.0 / K
    return RowSolution(weights=weights, gamma=gamma, eta=eta)


def solve_row_fixed_gamma(row: DistanceRow, K: int, gamma: float) -> RowSolution:
    """
    Minimiser of sum_k (d_k s_k + gamma s_k^2) over the simplex with at most K
    nonzero entries, for a gamma held from an earlier update. The K nearest
    candidates carry the support and -d/(2 gamma) is projected onto their simplex.
    """
    p = row.distances.shape[0]
    if p < K:
        raise NeighborCountError(row.index, p, K)
    order = np.lexsort((row.candidates, row.distances))[:K]
    weights = np.zeros(p)
    if gamma <= 0.0:
        weights[order[0]] = 1.0
        return RowSolution(weights=weights, gamma=0.0, eta=1.0)
    target = -row.distances[order] / (2.0 * gamma)
    ranked = np.sort(target)[::-1]
    cumulative = np.cumsum(ranked) - 1.0
    rho = np.flatnonzero(ranked - cumulative / np.arange(1, K + 1) > 0.0)[-1]
    theta = cumulative[rho] / (rho + 1)
    weights[order] = np.maximum(target - theta, 0.0)
    return RowSolution(weights=weights, gamma=float(gamma), eta=float(-theta))


def row_objective(distances: np.ndarray, weights: np.ndarray, gamma: float) -> float:
    return float(np.sum(distances * weights + gamma * weights * weights))


def _effective_k(row: DistanceRow, K: int, clamp_k: bool) -> int:
    p = row.candidates.shape[0]
    if p >= K + 1:
        return K
    if not clamp_k:
        raise NeighborCountError(row.index, p, K)
    return 0 if p == 0 else max(p - 1, 1)


def _assemble(features: np.ndarray, labels: np.ndarray, K: int, clamp_k: bool, source: str,
              gammas: typing.Optional[np.ndarray] = None) -> SimilarityMatrix:
    n = labels.shape[0]
    values = np.zeros((n, n))
    learned = np.zeros(n)
    effective_k = np.full(n, K, dtype=int)
    clamped, isolated = [], []
    for i in range(n):
        row = _distance_row(features, labels, i)
        k = _effective_k(row, K, clamp_k)
        if row.candidates.shape[0] < K + 1:
            clamped.append(i)
        effective_k[i] = k
        if k == 0:
            # no within-class peer: the row stays empty
            isolated.append(i)
            continue
        if row.candidates.shape[0] == 1:
            # a lone peer takes all the weight
            values[i, row.candidates] = 1.0
            continue
        if gammas is None:
            solution = solve_row(row, k)
        else:
            solution = solve_row_fixed_gamma(row, k, float(gammas[i]))
        values[i, row.candidates] = solution.weights
        learned[i] = solution.gamma
    if clamped:
        logger.warning(
            f"SIMILARITY | K={K} | Clamped K for {len(clamped)} subject(s) with too few within-class peers"
        )
    if isolated:
        logger.warning(
            f"SIMILARITY | K={K} | {len(isolated)} subject(s) without a within-class peer keep an empty row"
        )
    logger.debug(f"SIMILARITY | {source} | Assembled S for n={n}, mean gamma {learned.mean():.6g}")
    return SimilarityMatrix(values=values, neighbor_count=K, gammas=learned, effective_k=effective_k)


def update_similarity(dataset: MultiModalDataset, W: np.ndarray, K: int, clamp_k: bool = True,
                      gammas: typing.Optional[np.ndarray] = None) -> SimilarityMatrix:
    """S on projected distances; gamma_i is re-derived per row unless gammas holds them fixed."""
    return _assemble(projections(dataset, W), dataset.labels, K, clamp_k, "projected", gammas)


def initial_similarity(dataset: MultiModalDataset, K: int, clamp_k: bool = True) -> SimilarityMatrix:
    return _assemble(np.vstack(dataset.modalities), dataset.labels, K, clamp_k, "raw")
