import numpy as np
import pytest

from ecgauth.metrics import ScoreSet, compute_eer, compute_hter, far_frr

from oracles import sweep_eer


def scores(genuine, impostor):
    return ScoreSet(genuine=np.asarray(genuine, float), impostor=np.asarray(impostor, float))


class TestFarFrr:
    def test_hand_counted_example(self):
        far, frr = far_frr(scores([0.9, 0.4], [0.6, 0.1]), 0.5)
        assert far == 0.5
        assert frr == 0.5

    def test_threshold_below_everything(self):
        far, frr = far_frr(scores([0.9, 0.4], [0.6, 0.1]), 0.0)
        assert (far, frr) == (1.0, 0.0)

    def test_threshold_above_everything(self):
        far, frr = far_frr(scores([0.9, 0.4], [0.6, 0.1]), 2.0)
        assert (far, frr) == (0.0, 1.0)

    def test_ties_accept(self):
        far, frr = far_frr(scores([0.5], [0.5]), 0.5)
        assert far == 1.0  # impostor at the threshold is accepted
        assert frr == 0.0

    def test_monotonicity_property(self):
        rng = np.random.default_rng(0)
        s = scores(rng.normal(1, 1, 50), rng.normal(0, 1, 70))
        grid = np.linspace(-4, 5, 200)
        fars, frrs = zip(*(far_frr(s, t) for t in grid))
        assert (np.diff(fars) <= 0).all()
        assert (np.diff(frrs) >= 0).all()

    def test_empty_sets_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet(genuine=np.array([]), impostor=np.array([1.0]))


class TestComputeEer:
    def test_perfect_separation(self):
        eer, threshold = compute_eer(scores([0.9, 0.8], [0.1, 0.2]))
        assert eer == 0.0
        assert 0.2 < threshold < 0.8
        assert threshold == 0.5  # midpoint of the separating gap

    def test_identical_distributions(self):
        eer, _ = compute_eer(scores([0.3, 0.6, 0.9], [0.3, 0.6, 0.9]))
        assert eer == pytest.approx(0.5)

    def test_three_on_three_mixed(self):
        # frozen from the sweep oracle: EER 1/3 where FAR and FRR first meet
        s = scores([0.9, 0.7, 0.4], [0.8, 0.3, 0.2])
        oracle_eer, oracle_threshold = sweep_eer(s.genuine, s.impostor)
        assert oracle_eer == pytest.approx(1.0 / 3.0)
        assert oracle_threshold == pytest.approx(0.55)
        eer, threshold = compute_eer(s)
        assert eer == pytest.approx(1.0 / 3.0)
        assert threshold == pytest.approx(0.55)
        far, frr = far_frr(s, threshold)
        assert abs(far - frr) <= 1.0 / 3.0

    def test_operating_point_balance_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n_g = rng.integers(1, 30)
            n_i = rng.integers(1, 30)
            s = scores(rng.normal(0.5, 1, n_g), rng.normal(0, 1, n_i))
            eer, threshold = compute_eer(s)
            far, frr = far_frr(s, threshold)
            assert abs(far - frr) <= 1.0 / min(n_g, n_i) + 1e-12
            assert 0.0 <= eer <= 1.0

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            n_g = int(rng.integers(2, 40))
            n_i = int(rng.integers(2, 40))
            genuine = np.round(rng.normal(0.6, 0.5, n_g), 2)  # rounding forces ties
            impostor = np.round(rng.normal(0.0, 0.5, n_i), 2)
            eer, _ = compute_eer(scores(genuine, impostor))
            oracle, _ = sweep_eer(genuine, impostor)
            assert abs(eer - oracle) <= 1.0 / min(n_g, n_i) + 1e-12

    def test_rank_invariance(self):
        rng = np.random.default_rng(3)
        genuine = rng.normal(1, 1, 25)
        impostor = rng.normal(0, 1, 35)
        base, _ = compute_eer(scores(genuine, impostor))
        for transform in (lambda v: 3.0 * v + 7.0, np.tanh, lambda v: np.exp(v / 4.0)):
            mapped, _ = compute_eer(scores(transform(genuine), transform(impostor)))
            assert mapped == pytest.approx(base, abs=1e-12)

    def test_single_value_everywhere(self):
        eer, _ = compute_eer(scores([1.0, 1.0], [1.0]))
        assert eer == pytest.approx(0.5)


class TestComputeHter:
    def test_perfect_threshold(self):
        assert compute_hter(scores([0.9, 0.8], [0.1, 0.2]), 0.5) == 0.0

    def test_hand_example(self):
        assert compute_hter(scores([0.9, 0.4], [0.6, 0.1]), 0.5) == 0.5

    def test_threshold_below_everything(self):
        assert compute_hter(scores([0.9, 0.4], [0.6, 0.1]), -1.0) == 0.5
