"""
In-memory multi-modality datasets, their CSV persistence and z-score normalisation.

Every modality matrix is stored d x n: column j is subject j's feature vector in
that modality. Labels are +1 / -1 and double as regression targets.
"""
import os
import typing
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from shared.exceptions import DatasetValidationError
from shared.log_data import get_logger

logger = get_logger("data_model")

LABEL_COLUMN = "label"
CSV_FLOAT_FORMAT = "%.17g"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MultiModalDataset:
    modalities: typing.List[np.ndarray]
    labels: typing.Optional[np.ndarray]
    modality_names: typing.List[str]
    feature_names: typing.List[str]

    def __post_init__(self):
        object.__setattr__(self, "modalities", [_frozen(m) for m in self.modalities])
        if self.labels is not None:
            labels = np.array(self.labels, dtype=int)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "modality_names", list(self.modality_names))
        object.__setattr__(self, "feature_names", list(self.feature_names))

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def n_features(self) -> int:
        return self.modalities[0].shape[0] if self.modalities else 0

    @property
    def n_subjects(self) -> int:
        return self.modalities[0].shape[1] if self.modalities else 0

    @property
    def targets(self) -> np.ndarray:
        """Labels as float regression targets."""
        return self.labels.astype(float)

    def subset(self, indices) -> "MultiModalDataset":
        indices = np.asarray(indices, dtype=int)
        return MultiModalDataset(
            modalities=[m[:, indices] for m in self.modalities],
            labels=None if self.labels is None else self.labels[indices],
            modality_names=self.modality_names,
            feature_names=self.feature_names,
        )

    def with_modalities(self, modalities, feature_names=None) -> "MultiModalDataset":
        return MultiModalDataset(
            modalities=modalities,
            labels=self.labels,
            modality_names=self.modality_names,
            feature_names=self.feature_names if feature_names is None else feature_names,
        )

    def validate(self, require_labels: bool = True, min_subjects: int = 2) -> "MultiModalDataset":
        if not self.modalities:
            raise DatasetValidationError("dataset has no modalities")
        d, n = self.modalities[0].shape
        for name, matrix in zip(self.modality_names, self.modalities):
            if matrix.ndim != 2 or matrix.shape != (d, n):
                raise DatasetValidationError(
                    f"modality '{name}' has shape {matrix.shape}, expected {(d, n)}"
                )
        if d < 1:
            raise DatasetValidationError("dataset has no features")
        if n < min_subjects:
            raise DatasetValidationError(f"dataset has {n} subjects, at least {min_subjects} required")
        if len(self.modality_names) != len(self.modalities):
            raise DatasetValidationError(
                f"{len(self.modality_names)} modality names for {len(self.modalities)} modalities"
            )
        if len(self.feature_names) != d:
            raise DatasetValidationError(f"{len(self.feature_names)} feature names for {d} features")
        for name, matrix in zip(self.modality_names, self.modalities):
            bad = np.argwhere(~np.isfinite(matrix))
            if bad.size:
                feature, subject = bad[0]
                raise DatasetValidationError(
                    f"modality '{name}' has a non-finite value at row {subject}, column '{self.feature_names[feature]}'",
                    row=int(subject),
                    column=self.feature_names[feature],
                )
        if self.labels is None:
            if require_labels:
                raise DatasetValidationError("dataset has no labels")
            return self
        if self.labels.shape != (n,):
            raise DatasetValidationError(f"{self.labels.shape[0]} labels for {n} subjects")
        outside = sorted(set(np.unique(self.labels).tolist()) - {-1, 1})
        if outside:
            raise DatasetValidationError(f"labels outside {{+1, -1}}: {outside}")
        return self


@dataclass(frozen=True)
class NormalizationStats:
    """Per-modality StandardScaler mean_ and scale_, kept so a saved model can normalise new subjects."""
    means: typing.List[np.ndarray] = field(default_factory=list)
    stds: typing.List[np.ndarray] = field(default_factory=list)

    @classmethod
    def identity(cls, n_modalities: int, n_features: int) -> "NormalizationStats":
        return cls(
            means=[np.zeros(n_features) for _ in range(n_modalities)],
            stds=[np.ones(n_features) for _ in range(n_modalities)],
        )

    def to_dict(self) -> dict:
        return {
            "means": [m.tolist() for m in self.means],
            "stds": [s.tolist() for s in self.stds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(
            means=[np.asarray(m, dtype=float) for m in data["means"]],
            stds=[np.asarray(s, dtype=float) for s in data["stds"]],
        )


def _read_matrix(path: str) -> pd.DataFrame:
    if not os.path.isfile(path):
        raise DatasetValidationError(f"file not found: {path}", path=path)
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetValidationError(f"cannot parse {path}: {e}", path=path)
    for column in frame.columns:
        # header-only files parse as object columns
        if len(frame) and not pd.api.types.is_numeric_dtype(frame[column]):
            raise DatasetValidationError(f"non-numeric value in {path}, column '{column}'", path=path, column=column)
    values = frame.to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, column = bad[0]
        raise DatasetValidationError(
            f"non-finite value in {path} at row {row}, column '{frame.columns[column]}'",
            path=path,
            row=int(row),
            column=str(frame.columns[column]),
        )
    return frame


def _read_labels(path: str) -> np.ndarray:
    frame = _read_matrix(path)
    if list(frame.columns) != [LABEL_COLUMN]:
        raise DatasetValidationError(f"{path} must have the single column '{LABEL_COLUMN}', found {list(frame.columns)}", path=path)
    values = frame[LABEL_COLUMN].to_numpy(dtype=float)
    domain = set(np.unique(values).tolist())
    if domain <= {-1.0, 1.0}:
        return values.astype(int)
    if domain <= {0.0, 1.0}:
        return np.where(values == 1.0, 1, -1)
    raise DatasetValidationError(
        f"labels in {path} must be in {{+1, -1}} or {{1, 0}}, found {sorted(domain)}", path=path
    )


def _default_modality_names(paths) -> typing.List[str]:
    names = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    if len(set(names)) != len(names):
        names = [f"modality{m}" for m in range(len(paths))]
    return names


def load_modalities(paths, modality_names=None) -> MultiModalDataset:
    """Reads modality CSVs only (no labels); header-only files give n = 0."""
    if not paths:
        raise DatasetValidationError("no modality files given")
    frames = [_read_matrix(p) for p in paths]
    first_path, first = paths[0], frames[0]
    for path, frame in zip(paths[1:], frames[1:]):
        if frame.shape != first.shape:
            raise DatasetValidationError(
                f"shape mismatch: {first_path} has {first.shape[0]} rows x {first.shape[1]} columns, "
                f"{path} has {frame.shape[0]} rows x {frame.shape[1]} columns",
                path=path,
            )
        if list(frame.columns) != list(first.columns):
            logger.warning(f"DATA | {path} | Feature names differ from {first_path}; column order defines feature identity")
    dataset = MultiModalDataset(
        modalities=[frame.to_numpy(dtype=float).T for frame in frames],
        labels=None,
        modality_names=modality_names or _default_modality_names(paths),
        feature_names=[str(c) for c in first.columns],
    )
    return dataset.validate(require_labels=False, min_subjects=0)


def load_dataset(paths, labels_path, modality_names=None) -> MultiModalDataset:
    modalities = load_modalities(paths, modality_names)
    labels = _read_labels(labels_path)
    if labels.shape[0] != modalities.n_subjects:
        raise DatasetValidationError(
            f"shape mismatch: {labels_path} has {labels.shape[0]} rows, {paths[0]} has {modalities.n_subjects} rows",
            path=labels_path,
        )
    dataset = MultiModalDataset(
        modalities=modalities.modalities,
        labels=labels,
        modality_names=modalities.modality_names,
        feature_names=modalities.feature_names,
    )
    logger.info(
        f"DATA | {labels_path} | Loaded M={dataset.n_modalities} d={dataset.n_features} n={dataset.n_subjects}"
    )
    return dataset.validate()


def save_dataset(dataset: MultiModalDataset, directory: str, prefix: str = "dataset") -> typing.List[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for name, matrix in zip(dataset.modality_names, dataset.modalities):
        path = os.path.join(directory, f"{prefix}_{name}.csv")
        pd.DataFrame(matrix.T, columns=dataset.feature_names).to_csv(
            path, index=False, float_format=CSV_FLOAT_FORMAT, encoding="utf-8"
        )
        written.append(path)
    if dataset.labels is not None:
        path = os.path.join(directory, f"{prefix}_labels.csv")
        pd.DataFrame({LABEL_COLUMN: dataset.labels}).to_csv(path, index=False, encoding="utf-8")
        written.append(path)
    return written


def zscore_fit(train: MultiModalDataset) -> NormalizationStats:
    """One StandardScaler per modality on a training split; constant features keep scale 1."""
    means, stds = [], []
    for name, matrix in zip(train.modality_names, train.modalities):
        scaler = StandardScaler().fit(matrix.T)
        constant = int(np.sum((scaler.scale_ == 1.0) & (scaler.var_ != 1.0)))
        if constant:
            logger.info(f"DATA | {name} | {constant} constant training feature(s), std set to 1")
        means.append(scaler.mean_)
        stds.append(scaler.scale_)
    return NormalizationStats(means=means, stds=stds)


def zscore_apply(data: MultiModalDataset, stats: NormalizationStats) -> MultiModalDataset:
    if len(stats.means) != data.n_modalities:
        raise DatasetValidationError(
            f"dimension mismatch: stats cover {len(stats.means)} modalities, data has {data.n_modalities}"
        )
    normalized = []
    for matrix, mean, std in zip(data.modalities, stats.means, stats.stds):
        if mean.shape[0] != matrix.shape[0]:
            raise DatasetValidationError(
                f"dimension mismatch: stats cover {mean.shape[0]} features, data has {matrix.shape[0]}"
            )
        normalized.append((matrix - mean[:, None]) / std[:, None])
    return data.with_modalities(normalized)


def concatenate_modalities(dataset: MultiModalDataset) -> MultiModalDataset:
    """Stack all modalities into one feature block of size M*d."""
    return MultiModalDataset(
        modalities=[np.vstack(dataset.modalities)],
        labels=dataset.labels,
        modality_names=["+".join(dataset.modality_names)],
        feature_names=[f"{m}:{f}" for m in dataset.modality_names for f in dataset.feature_names],
    )
