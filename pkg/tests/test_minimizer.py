import numpy as np
import pytest

from smalltime import minimizer, models
from smalltime.fgauss import FbmSpec, fbm_cov


def test_heisenberg_minimizer_both_hursts():
    m = models.heisenberg()
    xi, eta = 1.0, 0.5
    for H in (0.35, 0.5):
        spec = FbmSpec(H, 2, 128)
        res = minimizer.minimize_energy(m.vf, m.a, (xi, eta, 0.0), spec,
                                        M_opt=64, n_starts=3, seed=0)
        assert res.converged and res.constraint_residual <= 1e-8
        assert res.energy == pytest.approx((xi ** 2 + eta ** 2) / 2, abs=1e-4)
        t = spec.times
        g = res.gamma_bar.evaluate(t)
        expect = np.outer(fbm_cov(1.0, t, H), [xi, eta])
        assert np.max(np.abs(g - expect)) <= 1e-3
        assert res.riesz_residual <= 1e-6
        assert res.hessian_min_eig > 0


def test_bridge1d_minimizer():
    m = models.bridge1d(a=0.0, a_prime=1.3)
    spec = FbmSpec(0.4, 1, 128)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=2, seed=1)
    assert res.energy == pytest.approx(1.3 ** 2 / 2, abs=1e-6)
    g = res.gamma_bar.evaluate(spec.times)[:, 0]
    assert np.max(np.abs(g - 1.3 * fbm_cov(1.0, spec.times, 0.4))) <= 1e-4


def test_lognormal_minimizer_via_bridge_bijection():
    m = models.lognormal(sigma=0.5, a=1.0, a_prime=1.5)
    spec = FbmSpec(0.5, 1, 128)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=2, seed=2)
    xi = np.log(1.5) / 0.5
    assert res.energy == pytest.approx(xi ** 2 / 2, rel=1e-5)
    g = res.gamma_bar.evaluate(spec.times)[:, 0]
    assert np.max(np.abs(g - xi * fbm_cov(1.0, spec.times, 0.5))) <= 1e-3


def test_multiplier_after_rotation():
    xi, eta = 1.0, 0.5
    r = float(np.hypot(xi, eta))
    m = models.heisenberg(a_prime=(r, 0.0, 0.0))
    spec = FbmSpec(0.4, 2, 128)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=3, seed=3)
    assert np.max(np.abs(res.nu_bar - np.array([r, 0.0, 0.0]))) <= 1e-3


def test_multiplier_identity_bridge_exact():
    m = models.bridge1d(a=0.0, a_prime=0.9)
    spec = FbmSpec(0.45, 1, 64)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=1, seed=4)
    rep = minimizer.multiplier_identity_check(res, m.vf, n_samples=200, seed=5)
    assert rep["max_residual"] <= 1e-9 * max(1.0, rep["gamma_norm"])


def test_multiplier_identity_heisenberg_mc():
    m = models.heisenberg()
    spec = FbmSpec(0.4, 2, 128)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=2, seed=6)
    rep = minimizer.multiplier_identity_check(res, m.vf, n_samples=1000, seed=7)
    assert rep["rms_residual"] <= 1e-3 * rep["gamma_norm"]


def test_energy_monotone_after_feasibility():
    m = models.heisenberg()
    spec = FbmSpec(0.5, 2, 64)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=1, seed=8)
    feas = [e for (e, c) in res.energy_history if c <= 1e-8]
    assert len(feas) >= 1
    assert all(feas[i + 1] <= feas[i] + 1e-12 for i in range(len(feas) - 1))


def test_grid_refinement_stability():
    m = models.heisenberg()
    spec = FbmSpec(0.5, 2, 128)
    e = {}
    for blocks in (64, 128):
        res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, M_opt=blocks,
                                        n_starts=1, seed=9, compute_hessian=False)
        e[blocks] = res.energy
    assert abs(e[64] - e[128]) <= 1e-4


def test_rotation_equivariance():
    xi, eta = 1.0, 0.5
    r = float(np.hypot(xi, eta))
    m = models.heisenberg()
    spec = FbmSpec(0.5, 2, 128)
    res_a = minimizer.minimize_energy(m.vf, m.a, (xi, eta, 0.0), spec, n_starts=1,
                                      seed=10, compute_hessian=False)
    res_b = minimizer.minimize_energy(m.vf, m.a, (r, 0.0, 0.0), spec, n_starts=1,
                                      seed=10, compute_hessian=False)
    assert abs(res_a.energy - res_b.energy) <= 1e-6


def test_hessian_quadratic_scaling():
    m = models.bridge1d(a=0.0, a_prime=1.0)
    spec = FbmSpec(0.5, 1, 64)
    res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=1, seed=11)
    h1 = minimizer.hessian_check(res, m.vf, n_dirs=4, seed=12, s0=1e-2)
    h2 = minimizer.hessian_check(res, m.vf, n_dirs=4, seed=12, s0=2e-2)
    assert h1 > 0
    assert h2 == pytest.approx(h1, rel=0.05)


def test_same_start_and_target_rejected():
    m = models.bridge1d()
    spec = FbmSpec(0.5, 1, 64)
    with pytest.raises(Exception):
        minimizer.minimize_energy(m.vf, np.array([1.0]), np.array([1.0]), spec)
