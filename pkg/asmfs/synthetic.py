"""
Seeded multi-modality datasets with a planted informative feature set, plus
brute-force oracles that share no code with the solvers they check.
"""
import json
import os
import typing

import numpy as np

from shared.asmfs_protocol import SyntheticSpec
from shared.data_model import MultiModalDataset, save_dataset
from shared.exceptions import OracleError
from shared.log_data import get_logger
from shared.seeding import derive_rng

logger = get_logger("synthetic")

GROUND_TRUTH_FILE = "ground_truth.json"


def generate(spec: SyntheticSpec) -> typing.Tuple[MultiModalDataset, np.ndarray]:
    """
    Informative features have class means +-class_separation/2; every feature
    carries N(0, noise_sigma^2) noise drawn independently per modality. With
    correlated_noise a shared component of weight sqrt(noise_correlation)
    is mixed into every modality's noise.
    """
    positives = int(round(spec.n * spec.positive_fraction))
    labels = np.array([1] * positives + [-1] * (spec.n - positives))
    labels = derive_rng(spec.seed, "labels").permutation(labels)
    informative = np.sort(derive_rng(spec.seed, "support").choice(spec.d, spec.n_informative, replace=False))

    shared_noise = derive_rng(spec.seed, "shared_noise").standard_normal((spec.d, spec.n))
    rho = spec.noise_correlation if spec.correlated_noise else 0.0
    shift = np.outer(np.ones(spec.n_informative), labels * spec.class_separation / 2.0)
    modalities = []
    for m in range(spec.M):
        noise = derive_rng(spec.seed, "noise", m).standard_normal((spec.d, spec.n))
        if rho > 0.0:
            noise = np.sqrt(rho) * shared_noise + np.sqrt(1.0 - rho) * noise
        X = spec.noise_sigma * noise
        X[informative] += shift
        modalities.append(X)

    dataset = MultiModalDataset(
        modalities=modalities,
        labels=labels,
        modality_names=[f"modality{m + 1}" for m in range(spec.M)],
        feature_names=[f"f{i:03d}" for i in range(spec.d)],
    )
    logger.info(f"SYNTH | seed={spec.seed} | Generated n={spec.n} d={spec.d} M={spec.M}, informative {informative.tolist()}")
    return dataset, informative


def write_synthetic(dataset: MultiModalDataset, truth: np.ndarray, spec: SyntheticSpec, directory: str,
                    echo: typing.Optional[dict] = None) -> typing.List[str]:
    written = save_dataset(dataset, directory, prefix="synthetic")
    sidecar = {
        "informative_features": truth.tolist(),
        "informative_names": [dataset.feature_names[i] for i in truth],
        "spec": spec.model_dump(mode="json"),
    }
    if echo is not None:
        sidecar.update(echo)
    path = os.path.join(directory, GROUND_TRUTH_FILE)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    written.append(path)
    return written


def recovery_score(ranking: np.ndarray, truth: np.ndarray, t: typing.Optional[int] = None) -> int:
    """How many planted features appear among the top-t ranked ones (t defaults to |truth|)."""
    t = len(truth) if t is None else t
    return len(set(np.asarray(ranking)[:t].tolist()) & set(np.asarray(truth).tolist()))


def oracle_simplex_qp(d_vec: np.ndarray, gamma: float) -> np.ndarray:
    """argmin ||s + d/(2 gamma)||^2 over the probability simplex, by sort-based projection."""
    if gamma <= 0:
        raise OracleError(f"gamma must be positive, got {gamma}")
    point = -np.asarray(d_vec, dtype=float) / (2.0 * gamma)
    u = np.sort(point)[::-1]
    thresholds = (np.cumsum(u) - 1.0) / np.arange(1, point.shape[0] + 1)
    k = np.nonzero(thresholds < u)[0][-1]
    return np.clip(point - thresholds[k], a_min=0, a_max=None)


def oracle_quadratic_form(S: np.ndarray, z: np.ndarray) -> float:
    total = 0.0
    n = S.shape[0]
    for i in range(n):
        for k in range(n):
            total += S[i, k] * (z[i] - z[k]) ** 2
    return float(total)
