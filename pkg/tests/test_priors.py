import numpy as np
import pytest

from simdps.errors import CapabilityError, DataError, ShapeError
from simdps.priors import (
    FramedDenoiser,
    GaussianPrior,
    GmmPrior,
    analytic_inpainting_posterior,
    fit_gaussian_demo,
    fit_gmm_demo,
    gaussian_denoise,
    gmm_denoise,
)
from simdps.signal import AudioSignal, GapMask, Observation, apply_mask


def random_gmm(rng, k=4, n=6, spread=1.5):
    return GmmPrior(rng.dirichlet(np.ones(k)), spread * rng.normal(size=(k, n)), rng.uniform(0.05, 0.5, k))


def direct_gmm_denoise(prior, x, sigma):
    """Posterior mean written out component by component."""
    s2 = sigma * sigma
    num, den = 0.0, 0.0
    logs = []
    for w, mu, v in zip(prior.weights, prior.means, prior.variances):
        tot = v + s2
        logs.append(np.log(w) - 0.5 * x.size * np.log(tot) - 0.5 * np.sum((x - mu) ** 2) / tot)
    logs = np.array(logs)
    r = np.exp(logs - logs.max())
    r /= r.sum()
    for rk, mu, v in zip(r, prior.means, prior.variances):
        num = num + rk * (x + (s2 / (v + s2)) * (mu - x))
    return num


def fd_jacobian(f, x, h=1e-6):
    cols = [(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)]
    return np.array(cols).T


class TestGaussian:
    def test_conjugate_mean(self):
        p = GaussianPrior(0.0, 1.0)
        assert gaussian_denoise(p, np.array([2.0]), 1.0)[0] == 1.0

    def test_limits(self, rng):
        p = GaussianPrior(rng.normal(size=5), rng.uniform(0.5, 2, 5))
        x = rng.normal(size=5)
        np.testing.assert_allclose(p.denoise(x, 1e-8), x, atol=1e-12)
        np.testing.assert_allclose(p.denoise(x, 1e8), p.mean, atol=1e-12)

    def test_vjp_is_diagonal_gain(self, rng):
        p = GaussianPrior(rng.normal(size=4), rng.uniform(0.5, 2, 4))
        x, v = rng.normal(size=4), rng.normal(size=4)
        J = fd_jacobian(lambda z: p.denoise(z, 0.7), x)
        np.testing.assert_allclose(p.vjp(x, 0.7, v), J.T @ v, rtol=1e-7)

    def test_exact_score_is_log_density_gradient(self, rng):
        p = GaussianPrior(rng.normal(size=3), rng.uniform(0.5, 2, 3))
        x = rng.normal(size=3)
        g = fd_jacobian(lambda z: np.atleast_1d(p.log_density(z, 0.4)), x)[0]
        np.testing.assert_allclose(p.exact_score(x, 0.4), g, rtol=1e-6)

    def test_rejects_bad_variance(self):
        with pytest.raises(DataError):
            GaussianPrior(0.0, 0.0)

    def test_dimension_check(self):
        with pytest.raises(ShapeError):
            GaussianPrior(np.zeros(3), np.ones(3)).denoise(np.zeros(4), 1.0)


class TestGmm:
    def test_symmetric_pair(self):
        p = GmmPrior([0.5, 0.5], [[1.0], [-1.0]], [0.1, 0.1])
        assert gmm_denoise(p, np.array([0.0]), 0.8)[0] == pytest.approx(0.0, abs=1e-15)

    def test_single_component_is_gaussian(self, rng):
        mu, v = rng.normal(size=5), 0.3
        g = GmmPrior([1.0], [mu], [v])
        x = rng.normal(size=5)
        np.testing.assert_allclose(g.denoise(x, 0.9), GaussianPrior(mu, v).denoise(x, 0.9), rtol=1e-13)

    def test_matches_direct_formula(self, rng):
        p = random_gmm(rng)
        for _ in range(20):
            x = rng.normal(size=6) * 2
            s = float(np.exp(rng.uniform(-5, 2)))
            np.testing.assert_allclose(p.denoise(x, s), direct_gmm_denoise(p, x, s), rtol=1e-10, atol=1e-12)

    def test_vjp_finite_differences(self, rng):
        p = random_gmm(rng)
        for _ in range(20):
            x = rng.normal(size=6)
            s = float(rng.uniform(0.3, 3.0))
            v = rng.normal(size=6)
            J = fd_jacobian(lambda z: direct_gmm_denoise(p, z, s), x)
            ref = J.T @ v
            err = np.linalg.norm(p.vjp(x, s, v) - ref) / np.linalg.norm(ref)
            assert err < 1e-5

    def test_exact_score_is_log_density_gradient(self, rng):
        p = random_gmm(rng)
        x = rng.normal(size=6)
        g = fd_jacobian(lambda z: np.atleast_1d(p.log_density(z, 0.6)), x)[0]
        np.testing.assert_allclose(p.exact_score(x, 0.6), g, rtol=1e-6)

    def test_no_underflow_far_from_components(self):
        p = GmmPrior([0.5, 0.5], [[0.0, 0.0], [1.0, 1.0]], [1e-4, 1e-4])
        x = np.array([1e4, -1e4])
        out = p.denoise(x, 1e-3)
        assert np.all(np.isfinite(out))
        assert np.all(np.isfinite(p.vjp(x, 1e-3, np.ones(2))))

    def test_batched(self, rng):
        p = random_gmm(rng)
        xs = rng.normal(size=(3, 6))
        np.testing.assert_allclose(p.denoise(xs, 0.5), np.stack([p.denoise(x, 0.5) for x in xs]), rtol=1e-13)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(DataError):
            GmmPrior([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0])


class TestFramed:
    def test_blockwise(self, rng):
        inner = random_gmm(rng, n=4)
        f = FramedDenoiser(inner, 4)
        x = rng.normal(size=10)
        out = f.denoise(x, 0.5)
        np.testing.assert_allclose(out[:4], inner.denoise(x[:4], 0.5), rtol=1e-13)
        pad = np.concatenate((x[8:], [0.0, 0.0]))
        np.testing.assert_allclose(out[8:], inner.denoise(pad, 0.5)[:2], rtol=1e-13)

    def test_vjp(self, rng):
        f = FramedDenoiser(random_gmm(rng, n=4), 4)
        x, v = rng.normal(size=10), rng.normal(size=10)
        J = fd_jacobian(lambda z: f.denoise(z, 0.8), x)
        np.testing.assert_allclose(f.vjp(x, 0.8, v), J.T @ v, rtol=1e-6, atol=1e-9)


def dense_posterior(mu, var, y, observed, sigma_y):
    """Condition N(mu, diag(var)) on noisy observations of the selected dims."""
    V = np.diag(var)
    H = np.eye(mu.size)[observed]
    S = H @ V @ H.T + sigma_y ** 2 * np.eye(H.shape[0])
    K = V @ H.T @ np.linalg.inv(S)
    return mu + K @ (y[observed] - H @ mu), np.diag(V - K @ H @ V)


class TestAnalyticPosterior:
    def test_exact_observation(self):
        obs = Observation(AudioSignal(np.array([0.5, 0.0]), 1.0), GapMask(2, 1, 1))
        mean, var = analytic_inpainting_posterior(GaussianPrior(0.0, 1.0), obs, sigma_y=0.0)
        assert (mean[0], var[0]) == (0.5, 0.0)
        assert (mean[1], var[1]) == (0.0, 1.0)

    def test_conjugate_update(self):
        obs = Observation(AudioSignal(np.array([2.0, 0.0]), 1.0), GapMask(2, 1, 1), 1.0)
        mean, var = analytic_inpainting_posterior(GaussianPrior(0.0, 1.0), obs)
        assert (mean[0], var[0]) == (1.0, 0.5)

    def test_matches_dense_conditioning(self, rng):
        n = 12
        mu, var = rng.normal(size=n), rng.uniform(0.2, 2, n)
        obs = apply_mask(AudioSignal(rng.normal(size=n), 1.0), GapMask(n, 3, 7), 0.3, rng=1)
        mean, post = analytic_inpainting_posterior(GaussianPrior(mu, var), obs)
        observed = obs.mask.m.astype(bool)
        m2, v2 = dense_posterior(mu, var, obs.y.samples, observed, 0.3)
        np.testing.assert_allclose(mean, m2, rtol=1e-12)
        np.testing.assert_allclose(post, v2, rtol=1e-12)


class TestDemoFits:
    def test_gaussian_fit(self, rng):
        x = rng.normal(size=10000) * 0.5
        p = fit_gaussian_demo([AudioSignal(x, 1.0)])
        assert p.mean[0] == 0 and p.var[0] == pytest.approx(np.mean(x * x))

    def test_gmm_fit_is_seeded(self, rng):
        x = AudioSignal(np.sin(0.1 * np.arange(20000)) + 0.01 * rng.normal(size=20000), 1.0)
        a = fit_gmm_demo([x], frame=16, components=8, seed=3)
        b = fit_gmm_demo([x], frame=16, components=8, seed=3)
        np.testing.assert_array_equal(a.prior.means, b.prior.means)
        assert a.frame == 16 and a.prior.n == 16

    def test_gmm_needs_a_frame(self):
        with pytest.raises(DataError):
            fit_gmm_demo([AudioSignal(np.ones(10), 1.0)], frame=64)


def test_base_denoiser_has_no_vjp():
    from simdps.diffusion import Denoiser

    class Half(Denoiser):
        def denoise(self, x, sigma):
            return x / 2

    with pytest.raises(CapabilityError):
        Half().vjp(np.zeros(2), 1.0, np.zeros(2))
    assert Half().score(np.array([2.0]), 1.0)[0] == -1.0
