"""Unit and property tests for the k-hot gating mechanism.

Expected values marked as frozen were computed independently: Gumbel
quantiles and the log softmax of [4, 1, 0] with 30-digit mpmath
arithmetic, the standard Gumbel mean against the Euler-Mascheroni
constant by direct Monte Carlo.
"""

import numpy as np
import pytest

from sparselocal import autodiff as ad
from sparselocal import gate as gt
from sparselocal.errors import GateExhaustedError, GateStateError, ShapeError

EULER_MASCHERONI = 0.5772156649015329


def random_gate_instance(rng, dmax=32):
    """Random weights, mask and feasible k with comfortable magnitude gaps."""
    d = int(rng.integers(2, dmax + 1))
    w = rng.normal(scale=2.0, size=d)
    mask = (rng.random(d) < 0.3).astype(int)
    if mask.all():
        mask[rng.integers(d)] = 0
    k = int(rng.integers(1, int((mask == 0).sum()) + 1))
    return w, mask, k


class TestSampleGumbel:
    def test_quantiles(self):
        class Fixed:
            def __init__(self, vals):
                self.vals = np.asarray(vals, dtype=np.float64)

            def random(self, shape):
                return self.vals

        lam = gt.sample_gumbel(2, Fixed([np.exp(-1.0), 0.5]))
        assert abs(lam[0]) <= 1e-12  # u = e^-1 maps to exactly 0
        assert abs(lam[1] - 0.36651292058166433) <= 1e-12

    def test_extreme_uniforms_stay_finite(self):
        class Degenerate:
            def random(self, shape):
                return np.array([0.0, 1.0])

        lam = gt.sample_gumbel(2, Degenerate())
        assert np.all(np.isfinite(lam))

    def test_monte_carlo_mean_matches_gumbel_location(self):
        rng = np.random.default_rng(12345)
        draws = gt.sample_gumbel(10**6, rng)
        assert abs(draws.mean() - EULER_MASCHERONI) <= 0.01


class TestMaskedLogProb:
    def test_symmetric_pair(self):
        out = gt.masked_log_prob(np.array([1.0, 1.0]), np.array([0, 0]))
        np.testing.assert_allclose(out.data, np.log([0.5, 0.5]), atol=1e-12)

    def test_single_live_entry_has_log_one(self):
        out = gt.masked_log_prob(np.array([2.0, 1.0]), np.array([0, 1]))
        assert out.data[0] == 0.0
        assert out.data[1] == gt.SENTINEL

    def test_three_way_log_softmax_of_squares(self):
        out = gt.masked_log_prob(np.array([2.0, 1.0, 0.0]), np.zeros(3, dtype=int))
        expected = [-0.06588390375742917, -3.0658839037574292, -4.065883903757429]
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_all_masked_is_exhausted(self):
        with pytest.raises(GateExhaustedError):
            gt.masked_log_prob(np.array([1.0, 2.0]), np.array([1, 1]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gt.masked_log_prob(np.ones(3), np.zeros(2, dtype=int))


class TestGateStep:
    def test_uniform_scores_give_uniform_step(self):
        log_pi = ad.Tensor(np.log(np.full(5, 0.2)))
        out = gt.gate_step(log_pi, np.zeros(5), tau=0.7)
        np.testing.assert_allclose(out.data, np.full(5, 0.2), atol=1e-12)

    def test_unit_temperature_reproduces_probabilities(self):
        log_pi = ad.Tensor(np.log([0.9, 0.1]))
        out = gt.gate_step(log_pi, np.zeros(2), tau=1.0)
        np.testing.assert_allclose(out.data, [0.9, 0.1], atol=1e-12)

    def test_low_temperature_concentrates_on_argmax(self):
        log_pi = ad.Tensor(np.log([0.9, 0.1]))
        out = gt.gate_step(log_pi, np.zeros(2), tau=0.01)
        assert out.data[0] >= 1.0 - 1e-9

    def test_sentinel_entries_are_exact_zero(self):
        log_pi = ad.Tensor(np.array([0.0, gt.SENTINEL, -1.0]))
        out = gt.gate_step(log_pi, np.ones(3), tau=0.5)
        assert out.data[1] == 0.0
        assert abs(out.data.sum() - 1.0) <= 1e-12

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError, match="temperature"):
            gt.gate_step(ad.Tensor(np.zeros(2)), np.zeros(2), tau=0.0)


class TestUpdateMask:
    def test_marks_winner(self):
        out = gt.update_mask(np.array([0, 1, 0, 0]), np.array([0.1, 0.0, 0.8, 0.1]))
        np.testing.assert_array_equal(out, [0, 1, 1, 0])

    def test_tie_takes_lowest_index(self):
        out = gt.update_mask(np.array([0, 0]), np.array([0.5, 0.5]))
        np.testing.assert_array_equal(out, [1, 0])

    def test_repeated_updates_count_up(self):
        rng = np.random.default_rng(3)
        mask = np.array([0, 1, 0, 0, 0, 0])
        start = int(mask.sum())
        for t in range(4):
            g = np.where(mask == 0, rng.random(6), 0.0)
            mask = gt.update_mask(mask, g)
            assert int(mask.sum()) == start + t + 1
            assert set(np.unique(mask)) <= {0, 1}

    def test_masked_winner_is_inconsistent(self):
        with pytest.raises(GateStateError):
            gt.update_mask(np.array([1, 0]), np.array([0.9, 0.1]))


class TestKHotGateHard:
    def test_greedy_unroll_by_squared_magnitude(self):
        # squared weights [4, 1, 9, 0]: draws pick index 2 then index 0
        res = gt.k_hot_gate(np.array([-2.0, 1.0, 3.0, 0.0]), np.zeros(4, dtype=int), 2, mode="hard")
        np.testing.assert_array_equal(res.values, [1.0, 0.0, 1.0, 0.0])
        assert res.selection_order() == [2, 0]

    def test_k_equal_d_selects_everything(self):
        res = gt.k_hot_gate(np.arange(1.0, 6.0), np.zeros(5, dtype=int), 5, mode="hard")
        np.testing.assert_array_equal(res.values, np.ones(5))

    def test_exhaustion_error_names_counts(self):
        with pytest.raises(GateExhaustedError, match="k=3.*2 features"):
            gt.k_hot_gate(np.ones(4), np.array([0, 1, 0, 1]), 3, mode="hard")

    @pytest.mark.parametrize("seed", range(50))
    def test_membership_and_sign_invariance(self, seed):
        rng = np.random.default_rng(1000 + seed)
        w, mask, k = random_gate_instance(rng)
        res = gt.k_hot_gate(w, mask, k, mode="hard")
        g = res.values
        assert set(np.unique(g)) <= {0.0, 1.0}
        assert int(g.sum()) == k
        assert float(mask @ g) == 0.0
        flipped = gt.k_hot_gate(-w, mask, k, mode="hard")
        np.testing.assert_array_equal(g, flipped.values)

    def test_final_mask_grows_by_k(self):
        rng = np.random.default_rng(7)
        w, mask, k = random_gate_instance(rng)
        res = gt.k_hot_gate(w, mask, k, mode="hard")
        assert int(res.final_mask.sum()) == int(mask.sum()) + k


class TestKHotGateSoft:
    @pytest.mark.parametrize("seed", range(30))
    def test_steps_are_simplex_vectors_and_sum_to_k(self, seed):
        rng = np.random.default_rng(2000 + seed)
        w, mask, k = random_gate_instance(rng)
        res = gt.k_hot_gate(ad.Tensor(w, requires_grad=True), mask, k, tau=1.0, mode="soft", rng=rng)
        for step in res.steps:
            vals = step.data
            assert np.all(vals >= 0)
            assert abs(vals.sum() - 1.0) <= 1e-6
        assert abs(res.values.sum() - k) <= 1e-5

    @pytest.mark.parametrize("seed", range(30))
    def test_masked_entries_stay_exact_zero(self, seed):
        rng = np.random.default_rng(3000 + seed)
        w, mask, k = random_gate_instance(rng)
        res = gt.k_hot_gate(w, mask, k, tau=0.5, mode="soft", rng=rng)
        assert np.all(res.values[mask == 1] == 0.0)

    @pytest.mark.parametrize("seed", range(30))
    def test_no_index_wins_twice(self, seed):
        rng = np.random.default_rng(4000 + seed)
        w, mask, k = random_gate_instance(rng)
        res = gt.k_hot_gate(w, mask, k, tau=1.0, mode="soft", rng=rng)
        order = res.selection_order()
        assert len(set(order)) == len(order)

    @pytest.mark.parametrize("tau", [1.0, 0.1])
    @pytest.mark.parametrize("seed", range(15))
    def test_gradient_matches_finite_differences(self, seed, tau):
        rng = np.random.default_rng(5000 + seed)
        d = 8
        w0 = rng.uniform(0.3, 2.0, size=d) * rng.choice([-1.0, 1.0], size=d)
        mask = np.zeros(d, dtype=int)
        mask[rng.integers(d)] = 1
        k = 3
        noise = gt.sample_gumbel((k, d), rng)
        c = rng.normal(size=d)

        def objective(x):
            res = gt.k_hot_gate(ad.as_tensor(x), mask, k, tau=tau, mode="soft", noise=noise)
            return (res.gate * ad.Tensor(c)).sum()

        wt = ad.Tensor(w0, requires_grad=True)
        objective(wt).backward()
        fd = ad.finite_difference_grad(lambda x: float(objective(ad.Tensor(x)).data), w0)
        assert ad.rel_error(wt.grad, fd) <= 1e-4

    def test_gradient_is_zero_for_masked_weights(self):
        rng = np.random.default_rng(42)
        w = ad.Tensor(np.array([1.0, -2.0, 0.5, 3.0]), requires_grad=True)
        mask = np.array([0, 1, 0, 0])
        noise = gt.sample_gumbel((2, 4), rng)
        res = gt.k_hot_gate(w, mask, 2, tau=0.7, mode="soft", noise=noise)
        (res.gate * ad.Tensor(np.ones(4))).sum().backward()
        assert w.grad[1] == 0.0

    def test_low_temperature_limit_is_one_hot(self):
        rng = np.random.default_rng(11)
        d = 10
        w = rng.uniform(0.3, 2.0, size=d) * rng.choice([-1.0, 1.0], size=d)
        noise = gt.sample_gumbel((3, d), rng)
        res = gt.k_hot_gate(ad.Tensor(w), np.zeros(d, dtype=int), 3, tau=1e-3, mode="soft", noise=noise)
        for step in res.steps:
            assert step.data.max() >= 1.0 - 1e-6

    def test_soft_requires_noise_source(self):
        with pytest.raises(ValueError, match="rng or pre-drawn noise"):
            gt.k_hot_gate(np.ones(4), np.zeros(4, dtype=int), 2, mode="soft")


class TestBatchedRows:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_per_vector_path(self, seed):
        rng = np.random.default_rng(6000 + seed)
        n, d, k = 5, 9, 3
        w = rng.normal(size=(n, d))
        mask = (rng.random((n, d)) < 0.2).astype(int)
        mask[:, :k] = 0  # keep every row feasible
        noise = gt.sample_gumbel((k, n, d), rng)
        batched = gt.k_hot_gate_rows(ad.Tensor(w), mask, k, tau=0.8, noise=noise)
        for i in range(n):
            single = gt.k_hot_gate(
                ad.Tensor(w[i]), mask[i], k, tau=0.8, mode="soft", noise=noise[:, i, :]
            )
            np.testing.assert_array_equal(batched.data[i], single.values)

    def test_batched_gradients_match_stacked_singles(self):
        rng = np.random.default_rng(77)
        n, d, k = 3, 6, 2
        w = rng.normal(size=(n, d))
        mask = np.zeros((n, d), dtype=int)
        noise = gt.sample_gumbel((k, n, d), rng)
        c = rng.normal(size=(n, d))

        wt = ad.Tensor(w, requires_grad=True)
        (gt.k_hot_gate_rows(wt, mask, k, tau=1.0, noise=noise) * ad.Tensor(c)).sum().backward()
        for i in range(n):
            wi = ad.Tensor(w[i], requires_grad=True)
            res = gt.k_hot_gate(wi, mask[i], k, tau=1.0, mode="soft", noise=noise[:, i, :])
            (res.gate * ad.Tensor(c[i])).sum().backward()
            np.testing.assert_allclose(wt.grad[i], wi.grad, atol=1e-12)

    def test_infeasible_row_is_reported(self):
        w = np.ones((2, 4))
        mask = np.array([[0, 0, 0, 0], [1, 1, 1, 0]])
        with pytest.raises(GateExhaustedError, match="row 1"):
            gt.k_hot_gate_rows(ad.Tensor(w), mask, 2, tau=1.0, rng=np.random.default_rng(0))
