import unittest
import sys
import os
import tempfile

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

# Add the repository root to the path to import the shared modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from shared.data_model import (
    MultiModalDataset,
    NormalizationStats,
    concatenate_modalities,
    load_dataset,
    load_modalities,
    save_dataset,
    zscore_apply,
    zscore_fit,
)
from shared.exceptions import DatasetValidationError


def _write_csv(directory, name, frame):
    path = os.path.join(directory, name)
    frame.to_csv(path, index=False)
    return path


class TestLoadDataset(unittest.TestCase):
    """Test suite for CSV loading and validation"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_two_modalities_load(self):
        """Two 4x3 modality files and a labels file give d=3, n=4, M=2"""
        rng = np.random.default_rng(1)
        a = _write_csv(self.dir, "mri.csv", pd.DataFrame(rng.normal(size=(4, 3)), columns=["r1", "r2", "r3"]))
        b = _write_csv(self.dir, "pet.csv", pd.DataFrame(rng.normal(size=(4, 3)), columns=["r1", "r2", "r3"]))
        labels = _write_csv(self.dir, "labels.csv", pd.DataFrame({"label": [1, -1, 1, -1]}))
        dataset = load_dataset([a, b], labels)
        self.assertEqual(dataset.n_modalities, 2)
        self.assertEqual(dataset.n_features, 3)
        self.assertEqual(dataset.n_subjects, 4)
        self.assertEqual(dataset.modality_names, ["mri", "pet"])
        self.assertEqual(dataset.feature_names, ["r1", "r2", "r3"])

    def test_zero_one_labels_are_mapped(self):
        """Labels given as 1/0 become +1/-1"""
        a = _write_csv(self.dir, "a.csv", pd.DataFrame({"x": [1.0, 2.0, 3.0, 4.0]}))
        labels = _write_csv(self.dir, "labels.csv", pd.DataFrame({"label": [1, 0, 0, 1]}))
        dataset = load_dataset([a], labels)
        np.testing.assert_array_equal(dataset.labels, [1, -1, -1, 1])

    def test_label_outside_domain(self):
        """A label of 2 is rejected"""
        a = _write_csv(self.dir, "a.csv", pd.DataFrame({"x": [1.0, 2.0, 3.0]}))
        labels = _write_csv(self.dir, "labels.csv", pd.DataFrame({"label": [1, -1, 2]}))
        with self.assertRaises(DatasetValidationError):
            load_dataset([a], labels)

    def test_shape_mismatch_names_both_files(self):
        """Modality files with different row counts are rejected naming both files"""
        a = _write_csv(self.dir, "a.csv", pd.DataFrame({"x": [1.0, 2.0, 3.0, 4.0]}))
        b = _write_csv(self.dir, "b.csv", pd.DataFrame({"x": [1.0, 2.0, 3.0]}))
        labels = _write_csv(self.dir, "labels.csv", pd.DataFrame({"label": [1, -1, 1, -1]}))
        with self.assertRaises(DatasetValidationError) as ctx:
            load_dataset([a, b], labels)
        self.assertIn(a, ctx.exception.message)
        self.assertIn(b, ctx.exception.message)

    def test_non_finite_value_reports_row_and_column(self):
        """A NaN cell is reported with its row and column"""
        a = _write_csv(self.dir, "a.csv", pd.DataFrame({"x": [1.0, 2.0, 3.0], "y": [1.0, np.nan, 3.0]}))
        with self.assertRaises(DatasetValidationError) as ctx:
            load_modalities([a])
        self.assertEqual(ctx.exception.row, 1)
        self.assertEqual(ctx.exception.column, "y")

    def test_missing_file(self):
        """A missing labels file names the path"""
        a = _write_csv(self.dir, "a.csv", pd.DataFrame({"x": [1.0, 2.0]}))
        missing = os.path.join(self.dir, "nope.csv")
        with self.assertRaises(DatasetValidationError) as ctx:
            load_dataset([a], missing)
        self.assertIn(missing, ctx.exception.message)
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_header_only_modalities(self):
        """Header-only modality files load with zero subjects"""
        a = os.path.join(self.dir, "a.csv")
        with open(a, "w") as f:
            f.write("x,y\n")
        dataset = load_modalities([a])
        self.assertEqual(dataset.n_subjects, 0)
        self.assertEqual(dataset.n_features, 2)

    def test_save_round_trip(self):
        """save_dataset followed by load_dataset is bit-identical"""
        rng = np.random.default_rng(7)
        dataset = MultiModalDataset(
            modalities=[rng.normal(size=(3, 6)), rng.normal(size=(3, 6)) * 1e-7],
            labels=[1, -1, 1, -1, 1, -1],
            modality_names=["mri", "pet"],
            feature_names=["a", "b", "c"],
        )
        paths = save_dataset(dataset, self.dir, prefix="rt")
        loaded = load_dataset(paths[:2], paths[2], modality_names=["mri", "pet"])
        for original, restored in zip(dataset.modalities, loaded.modalities):
            np.testing.assert_array_equal(original, restored)
        np.testing.assert_array_equal(dataset.labels, loaded.labels)


class TestZscore(unittest.TestCase):
    """Test suite for z-score normalisation"""

    def _dataset(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        return MultiModalDataset(
            modalities=[matrix],
            labels=None,
            modality_names=["m"],
            feature_names=[f"f{i}" for i in range(matrix.shape[0])],
        )

    def test_training_split_is_standardised(self):
        """Training features get mean 0 and population std 1"""
        data = self._dataset(np.random.default_rng(0).normal(3.0, 2.0, size=(4, 20)))
        stats = zscore_fit(data)
        normalized = zscore_apply(data, stats).modalities[0]
        np.testing.assert_allclose(normalized.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(normalized.std(axis=1), 1.0, atol=1e-12)

    def test_matches_standard_scaler_on_transposed_matrix(self):
        """Each modality is standardised like StandardScaler on subjects x features"""
        matrix = np.random.default_rng(7).normal(-1.0, 4.0, size=(5, 30))
        data = self._dataset(matrix)
        stats = zscore_fit(data)
        expected = StandardScaler().fit_transform(matrix.T).T
        np.testing.assert_allclose(zscore_apply(data, stats).modalities[0], expected, atol=1e-12)

    def test_constant_feature_keeps_unit_std(self):
        """A constant training feature maps to zero instead of dividing by zero"""
        data = self._dataset([[5.0, 5.0, 5.0], [1.0, 2.0, 3.0]])
        stats = zscore_fit(data)
        self.assertEqual(stats.stds[0][0], 1.0)
        np.testing.assert_array_equal(zscore_apply(data, stats).modalities[0][0], [0.0, 0.0, 0.0])

    def test_test_split_uses_training_stats(self):
        """Test subjects are shifted and scaled with the training statistics"""
        train = self._dataset([[0.0, 2.0]])
        test = self._dataset([[4.0]])
        stats = zscore_fit(train)
        self.assertEqual(zscore_apply(test, stats).modalities[0][0, 0], 3.0)

    def test_dimension_mismatch(self):
        """Stats for 2 features cannot normalise 3 features"""
        stats = NormalizationStats.identity(1, 2)
        with self.assertRaises(DatasetValidationError):
            zscore_apply(self._dataset(np.zeros((3, 2))), stats)

    def test_concatenate_prefixes_names(self):
        """Concatenation stacks modalities and prefixes feature names"""
        dataset = MultiModalDataset(
            modalities=[np.ones((2, 3)), np.zeros((2, 3))],
            labels=[1, -1, 1],
            modality_names=["mri", "pet"],
            feature_names=["a", "b"],
        )
        stacked = concatenate_modalities(dataset)
        self.assertEqual(stacked.n_features, 4)
        self.assertEqual(stacked.feature_names, ["mri:a", "mri:b", "pet:a", "pet:b"])


if __name__ == '__main__':
    unittest.main()
