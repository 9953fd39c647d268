import numpy as np
import pytest

from clref import nncore
from clref.errors import ContractError
from clref.fisher import DiagFisher, estimate_diag_fisher, noise_scale, precondition


def brute_force_fisher(spec, params, batch):
    """Mean of squared single-example gradients, one backward pass per example."""
    sq = [nncore.loss_and_grad(spec, params, batch.take([i]))[1] ** 2 for i in range(len(batch))]
    return np.mean(sq, axis=0)


def instance(seed, n=40):
    rng = np.random.default_rng(seed)
    spec = nncore.NetworkSpec((5, 7, 4), "relu")
    params = nncore.init_params(spec, seed)
    batch = nncore.Batch(rng.standard_normal((n, 5)), rng.integers(0, 4, n))
    return spec, params, batch


class TestEstimate:
    def test_zero_inputs_give_zero_weight_entries(self):
        spec = nncore.NetworkSpec((2, 2))
        batch = nncore.Batch(np.zeros((2, 2)), np.array([0, 1]))
        f = estimate_diag_fisher(spec, np.zeros(spec.n_params), batch)
        np.testing.assert_array_equal(f.values[:4], 0.0)
        np.testing.assert_allclose(f.values[4:], 0.25)

    def test_all_zero_when_every_gradient_vanishes(self):
        spec = nncore.NetworkSpec((1, 2))
        # huge margin on the right class: softmax saturates to the label exactly
        params = np.array([0.0, 0.0, 0.0, 1e3])
        batch = nncore.Batch(np.zeros((3, 1)), np.array([1, 1, 1]))
        f = estimate_diag_fisher(spec, params, batch)
        np.testing.assert_array_equal(f.values, 0.0)

    def test_logistic_closed_form(self):
        spec = nncore.NetworkSpec((1, 2))
        batch = nncore.Batch(np.array([[1.0]]), np.array([1]))
        f = estimate_diag_fisher(spec, np.zeros(spec.n_params), batch)
        # d CE / d w_1 = (sigma(0) - 1) * x = -0.5
        w1 = 1  # layout: W (1x2) then b (2)
        assert f.values[w1] == pytest.approx(0.25, abs=1e-15)

    def test_duplicated_data(self):
        spec, params, batch = instance(0)
        doubled = nncore.Batch(np.vstack([batch.inputs] * 2), np.concatenate([batch.labels] * 2))
        a = estimate_diag_fisher(spec, params, batch)
        b = estimate_diag_fisher(spec, params, doubled)
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        spec, params, batch = instance(seed)
        f = estimate_diag_fisher(spec, params, batch)
        np.testing.assert_allclose(f.values, brute_force_fisher(spec, params, batch), atol=1e-12)

    def test_max_examples_truncates(self):
        spec, params, batch = instance(1)
        f = estimate_diag_fisher(spec, params, batch, max_examples=10)
        np.testing.assert_allclose(f.values, brute_force_fisher(spec, params, batch.take(range(10))), atol=1e-12)

    def test_sharding_invariance(self):
        spec, params, batch = instance(2)
        whole = estimate_diag_fisher(spec, params, batch)
        shards = estimate_diag_fisher(spec, params, [batch.take(range(0, 13)), batch.take(range(13, 40))])
        chunked = estimate_diag_fisher(spec, params, batch, chunk=3)
        np.testing.assert_allclose(whole.values, shards.values, atol=1e-12)
        np.testing.assert_allclose(whole.values, chunked.values, atol=1e-12)

    def test_scale_law(self):
        # scaling inputs by c and first-layer weights by 1/c leaves every logit
        # unchanged while multiplying first-layer weight gradients by c
        spec, params, batch = instance(3)
        c = 3.0
        w = slice(0, 5 * 7)
        scaled = params.copy()
        scaled[w] /= c
        f = estimate_diag_fisher(spec, params, batch)
        g = estimate_diag_fisher(spec, scaled, nncore.Batch(batch.inputs * c, batch.labels))
        np.testing.assert_allclose(g.values[w], c ** 2 * f.values[w], rtol=1e-10)
        np.testing.assert_allclose(g.values[35:], f.values[35:], rtol=1e-10, atol=1e-15)

    def test_nonnegative_and_deterministic(self):
        spec, params, batch = instance(4)
        a = estimate_diag_fisher(spec, params, batch)
        b = estimate_diag_fisher(spec, params, batch)
        assert np.all(a.values >= 0)
        assert a.values.tobytes() == b.values.tobytes()

    def test_damping_attached_not_added(self):
        spec, params, batch = instance(5)
        f = estimate_diag_fisher(spec, params, batch, damping=0.5)
        assert f.damping == 0.5
        np.testing.assert_allclose(f.values, brute_force_fisher(spec, params, batch), atol=1e-12)

    def test_empty_stream(self):
        spec = nncore.NetworkSpec((2, 2))
        with pytest.raises(ContractError):
            estimate_diag_fisher(spec, np.zeros(spec.n_params), [])


class TestDiagFisher:
    @pytest.mark.parametrize("values,damping", [([-1.0], 1e-5), ([np.nan], 1e-5), ([1.0], 0.0)])
    def test_invariants(self, values, damping):
        with pytest.raises(ContractError):
            DiagFisher(np.array(values), damping)

    def test_mean_normalization(self):
        f = DiagFisher(np.array([1.0, 3.0]), 0.1).normalized("mean")
        np.testing.assert_allclose(f.values, [0.5, 1.5])
        assert f.damping == 0.1

    def test_all_zero_normalizes_to_identity(self):
        np.testing.assert_array_equal(DiagFisher(np.zeros(3)).normalized("max").values, np.ones(3))


class TestPrecondition:
    def test_identity(self):
        v = np.array([1.5, -2.0, 0.3])
        np.testing.assert_allclose(precondition(DiagFisher(np.ones(3), 1e-12), v), v, atol=1e-9)

    def test_value(self):
        np.testing.assert_array_equal(precondition(DiagFisher(np.array([3.0]), 1.0), [8.0]), [2.0])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        f = DiagFisher(rng.uniform(0, 5, 100), 1e-5)
        v = rng.standard_normal(100)
        np.testing.assert_allclose(precondition(f, v) * f.denominator, v, atol=1e-12)


class TestNoiseScale:
    def test_zero_gamma(self):
        np.testing.assert_array_equal(noise_scale(DiagFisher(np.ones(4)), 0.0), 0.0)

    def test_unit(self):
        np.testing.assert_allclose(noise_scale(DiagFisher(np.ones(1), 1e-12), 0.5), [1.0], atol=1e-9)

    def test_monte_carlo_variance(self):
        f = DiagFisher(np.array([0.01, 0.5, 2.0, 40.0]))
        gamma = 0.03
        sigma = noise_scale(f, gamma)
        draws = np.random.default_rng(0).standard_normal((1_000_000, 4)) * sigma
        expected = 2 * gamma / f.denominator
        np.testing.assert_allclose(draws.var(axis=0), expected, rtol=0.01)

    def test_negative_gamma(self):
        with pytest.raises(ContractError):
            noise_scale(DiagFisher(np.ones(1)), -1.0)
