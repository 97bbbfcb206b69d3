import numpy as np
import pytest

from ecgauth.features import (
    FeatureModel,
    SCALE_FLOOR,
    fit_feature_model,
    project,
    read_feature_model,
    standardize,
    transform,
    write_feature_model,
)
from ecgauth.segmentation import BeatMatrix, PeakList
from ecgauth.dataset import Session

from oracles import jacobi_eigenvalues


def beat_matrix(rows):
    rows = np.asarray(rows, dtype=float)
    return BeatMatrix(
        beats=rows,
        subject="s01",
        session=Session.S1,
        origin_peaks=PeakList(100 + 300 * np.arange(rows.shape[0])),
        sample_rate_hz=300.0,
        pre_samples=75,
    )


class TestFit:
    def test_rank_one_diagonal_geometry(self):
        model = fit_feature_model(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]), k=2)
        assert model.components.shape == (2, 2)
        assert np.allclose(model.components[0], [2 ** -0.5, 2 ** -0.5], atol=1e-12)
        ratio = model.explained_variance / model.explained_variance.sum()
        assert np.allclose(ratio, [1.0, 0.0], atol=1e-12)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(0)
        model = fit_feature_model(rng.normal(0, 1, (40, 12)), k=8)
        gram = model.components @ model.components.T
        assert np.abs(gram - np.eye(8)).max() < 1e-9

    def test_eigenvalues_match_jacobi_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, (20, 6))
        model = fit_feature_model(x, k=6)
        z = standardize(x, model)
        cov = z.T @ z / z.shape[0]
        expected = jacobi_eigenvalues(cov)
        assert np.abs(model.explained_variance - expected).max() < 1e-8

    def test_variance_non_increasing(self):
        rng = np.random.default_rng(2)
        model = fit_feature_model(rng.normal(0, 1, (50, 10)), k=10)
        assert (np.diff(model.explained_variance) <= 1e-12).all()

    def test_sign_convention(self):
        rng = np.random.default_rng(3)
        model = fit_feature_model(rng.normal(0, 1, (30, 7)), k=7)
        for row in model.components:
            assert row[int(np.argmax(np.abs(row)))] > 0

    def test_excess_k_warns_and_caps(self):
        rng = np.random.default_rng(4)
        with pytest.warns(RuntimeWarning, match="beat width"):
            model = fit_feature_model(rng.normal(0, 1, (30, 5)), k=9)
        assert model.n_components == 5
        assert model.requested_components == 9

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError, match="training rows"):
            fit_feature_model(np.random.default_rng(0).normal(0, 1, (5, 8)), k=5)

    def test_constant_column_floored(self):
        x = np.random.default_rng(5).normal(0, 1, (20, 4))
        x[:, 2] = 7.0
        model = fit_feature_model(x, k=3)
        assert model.feature_scale[2] == SCALE_FLOOR

    def test_fit_deterministic(self):
        rng = np.random.default_rng(6)
        x = rng.normal(0, 1, (40, 9))
        a = fit_feature_model(x, k=5)
        b = fit_feature_model(x, k=5)
        assert np.array_equal(a.components, b.components)
        assert np.array_equal(a.explained_variance, b.explained_variance)


class TestTransform:
    def test_train_standardization_is_zscore(self):
        rng = np.random.default_rng(7)
        x = rng.normal(3, 2, (60, 8))
        model = fit_feature_model(x, k=4)
        z = standardize(x, model)
        assert np.abs(z.mean(axis=0)).max() < 1e-9
        assert np.abs(z.std(axis=0) - 1.0).max() < 1e-9

    def test_hand_column(self):
        x = np.column_stack([[1.0, 2.0, 3.0], [0.0, 1.0, 2.0]])
        model = fit_feature_model(x, k=1)
        z = standardize(x, model)
        assert np.allclose(z[:, 0], [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(8)
        x = rng.normal(0, 1, (30, 6))
        model = fit_feature_model(x, k=6)
        z = standardize(x, model)
        reconstructed = project(x, model) @ model.components
        assert np.abs(z - reconstructed).max() < 1e-8

    def test_projection_formula(self):
        rng = np.random.default_rng(9)
        x = rng.normal(0, 1, (30, 6))
        model = fit_feature_model(x, k=3)
        manual = ((x - model.feature_mean) / model.feature_scale) @ model.components.T
        assert np.array_equal(project(x, model), manual)

    def test_width_mismatch_rejected(self):
        model = fit_feature_model(np.random.default_rng(0).normal(0, 1, (20, 6)), k=3)
        with pytest.raises(ValueError, match="width"):
            project(np.zeros((2, 5)), model)

    def test_transform_labels_rows(self):
        rows = np.random.default_rng(10).normal(0, 1, (12, 6))
        model = fit_feature_model(rows, k=3)
        vectors = transform(beat_matrix(rows), model)
        assert len(vectors) == 12
        assert all(v.subject == "s01" and v.session == Session.S1 for v in vectors)
        assert vectors[0].values.shape == (3,)

    def test_linearity_after_standardization(self):
        rng = np.random.default_rng(11)
        x = rng.normal(0, 1, (20, 6))
        model = fit_feature_model(x, k=4)
        a, b = rng.normal(0, 1, (2, 6))
        lhs = standardize(a + b + model.feature_mean, model)
        rhs = standardize(a + model.feature_mean, model) + standardize(b + model.feature_mean, model)
        assert np.abs(lhs - rhs).max() < 1e-9


class TestInvariants:
    def test_test_data_never_influences_fit(self):
        rng = np.random.default_rng(12)
        train = rng.normal(0, 1, (40, 8))
        model_a = fit_feature_model(train, k=4)
        _ = project(rng.normal(0, 1, (10, 8)), model_a)
        model_b = fit_feature_model(train, k=4)
        assert np.array_equal(model_a.components, model_b.components)
        assert np.array_equal(model_a.feature_mean, model_b.feature_mean)

    def test_total_variance_equals_trace(self):
        rng = np.random.default_rng(13)
        x = rng.normal(0, 1, (50, 9))
        model = fit_feature_model(x, k=9)
        z = standardize(x, model)
        cov = z.T @ z / z.shape[0]
        assert model.explained_variance.sum() == pytest.approx(np.trace(cov), abs=1e-8)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        model = fit_feature_model(rng.normal(0, 1, (30, 7)), k=4)
        path = tmp_path / "model.txt"
        write_feature_model(path, model)
        loaded = read_feature_model(path)
        assert np.array_equal(loaded.feature_mean, model.feature_mean)
        assert np.array_equal(loaded.feature_scale, model.feature_scale)
        assert np.array_equal(loaded.components, model.components)
        assert np.array_equal(loaded.explained_variance, model.explained_variance)
        assert loaded.requested_components == model.requested_components
