"""The acceptance suite: one callable per criterion, shared by pytest and
the CLI ``verify`` subcommand.

Every criterion returns a :class:`CriterionResult` with the measured
values and the tolerance it was judged against; nothing here is tunable
at call time except sample sizes used by the ``fast`` profile.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import ks_2samp

from . import asymptotics, fgauss, malliavin, minimizer, models, rde
from . import roughlift as rl
from .fgauss import CMElement, FbmSpec, IncrementGram, fbm_cov
from .indexsets import enumerate_exponents
from .paths import GridPath, uniform_grid


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime_s: float
    details: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} ({self.name}) {self.runtime_s:8.2f}s"

    def to_dict(self):
        def clean(v):
            if isinstance(v, (np.floating, np.integer)):
                return float(v)
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, (bool, np.bool_)):
                return bool(v)
            return v

        return {
            "number": self.number, "name": self.name, "passed": bool(self.passed),
            "runtime_s": self.runtime_s, "details": clean(self.details),
        }


def _timed(number, name, fn):
    t0 = time.perf_counter()
    passed, details = fn()
    return CriterionResult(number, name, bool(passed), time.perf_counter() - t0, details)


def _random_polyline(rng, M, d, scale=None):
    s = scale if scale is not None else M ** -0.5
    vals = np.vstack([np.zeros(d), np.cumsum(rng.normal(size=(M, d)) * s, axis=0)])
    return GridPath(uniform_grid(M), vals)


def criterion_01_index_sets():
    def run():
        details = {}
        ok = True
        got = [e.value for e in enumerate_exponents("2/5", "L1", 4)]
        want = [Fraction(x) for x in ("0", "1", "2", "5/2", "3", "7/2", "4")]
        ok &= got == want
        details["L1_H=2/5"] = [str(v) for v in got]
        got = [e.value for e in enumerate_exponents("3/10", "L1", 4.34)]
        want = [Fraction(x) for x in ("0", "1", "2", "3", "10/3", "4", "13/3")]
        ok &= got == want
        details["L1_H=3/10"] = [str(v) for v in got]
        for hurst in ("1/2", "1/3"):
            for which in ("L1", "L2", "L2p", "L3", "L3p", "L4"):
                vals = [e.value for e in enumerate_exponents(hurst, which, 10)]
                ok &= vals == [Fraction(k) for k in range(11)]
        details["natural_at_special_H"] = ok
        return ok, details

    return _timed(1, "index sets", run)


def criterion_02_chen_grouplike():
    def run():
        rng = np.random.default_rng(202)
        worst_chen = worst_sym = 0.0
        for trial in range(100):
            d = 2 if trial % 2 == 0 else 3
            x = _random_polyline(rng, 64, d)
            lift = rl.lift_grid_path(x, 3)
            worst_chen = max(worst_chen, rl.prefix_chen_defect(lift))
            worst_sym = max(worst_sym, rl.grouplike_defect(lift))
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], float)
        sq = rl.lift_grid_path(GridPath(uniform_grid(4), pts), 3)
        end = sq.prefix_sig(4)
        area = 0.5 * (end.level2[0, 1] - end.level2[1, 0])
        ok = worst_chen <= 1e-10 and worst_sym <= 1e-10 and abs(area - 1.0) <= 1e-10
        return ok, {"worst_chen": worst_chen, "worst_symmetry": worst_sym,
                    "square_area": float(area)}

    return _timed(2, "Chen / group-like", run)


def criterion_03_fbm_sampler(n_paths=100_000):
    def run():
        details = {}
        ok = True
        for H in (0.3, 0.4, 0.5):
            spec = FbmSpec(H, 1, 256)
            gram = IncrementGram(spec).matrix
            w = fgauss.sample_fbm(spec, n_paths, seed=303)
            inc = np.diff(w.values[:, :, 0], axis=1)
            idx = np.arange(0, 256, 32)
            emp = (inc[:, idx].T @ inc[:, idx]) / n_paths
            g = gram[np.ix_(idx, idx)]
            se = np.sqrt((np.outer(np.diag(g), np.diag(g)) + g ** 2) / n_paths)
            dev = np.max(np.abs(emp - g) / se)
            w2 = fgauss.sample_fbm(spec, n_paths, seed=304)
            half = w.values[:, 128, 0]
            scaled = 0.5 ** H * w2.values[:, -1, 0]
            pval = ks_2samp(half, scaled).pvalue
            details[f"H={H}"] = {"max_cov_dev_se": float(dev), "ks_pvalue": float(pval)}
            ok &= dev <= 4.0 and pval >= 0.01
        return ok, details

    return _timed(3, "fBm sampler", run)


def criterion_04_young_translation():
    def run():
        rng = np.random.default_rng(404)
        worst = 0.0
        for trial in range(50):
            d = 2 if trial % 2 == 0 else 3
            x = _random_polyline(rng, 64, d)
            g = _random_polyline(rng, 64, d, scale=0.1)
            out = rl.young_translate(rl.lift_grid_path(x, 3), g, refine=4)
            ref = rl.lift_grid_path(x + g, 3)
            worst = max(worst,
                        float(np.max(np.abs(out.prefix1 - ref.prefix1))),
                        float(np.max(np.abs(out.prefix2 - ref.prefix2))),
                        float(np.max(np.abs(out.prefix3 - ref.prefix3))))
        return worst <= 1e-8, {"worst_level_gap": worst}

    return _timed(4, "Young translation", run)


def criterion_05_solver_exactness():
    def run():
        details = {}
        m = models.heisenberg()
        rng = np.random.default_rng(505)
        worst = 0.0
        for trial in range(20):
            H = (0.3, 0.4, 0.5)[trial % 3]
            w = fgauss.sample_fbm(FbmSpec(H, 2, 64), 1, 500 + trial).path(0)
            a = rng.normal(size=3)
            lift = rl.lift_grid_path(w, 2)
            res = rde.solve_rde(m.vf, a, lift)
            exact = m.exact_endpoint(lift, a)
            worst = max(worst, float(np.max(np.abs(res.y.values - exact))))
        details["heisenberg_worst"] = worst
        ok = worst <= 1e-10

        logm = models.lognormal(sigma=0.5)
        w = fgauss.sample_fbm(FbmSpec(0.5, 1, 1024), 1, 501).path(0)
        res = rde.solve_rde(logm.vf, logm.a, rl.lift_grid_path(w, 3),
                            with_flows=True, refine=4)
        exact = logm.a[0] * np.exp(0.5 * w.values[:, 0])
        rel = float(np.max(np.abs(res.y.values[:, 0] - exact) / np.abs(exact)))
        details["lognormal_rel_err"] = rel
        ok &= rel <= 1e-6

        jk = np.einsum("tij,tjk->tik", res.J, res.K)
        m2 = models.heisenberg()
        w2 = fgauss.sample_fbm(FbmSpec(0.4, 2, 128), 1, 502).path(0)
        res2 = rde.solve_rde(m2.vf, m2.a, rl.lift_grid_path(w2, 2))
        jk2 = np.einsum("tij,tjk->tik", res2.J, res2.K)
        jkdev = max(float(np.max(np.abs(jk - np.eye(1)))),
                    float(np.max(np.abs(jk2 - np.eye(3)))))
        details["jk_identity_dev"] = jkdev
        ok &= jkdev <= 1e-6
        return ok, details

    return _timed(5, "solver exactness", run)


def criterion_06_minimizer(n_mult_samples=1000):
    def run():
        details = {}
        ok = True
        xi, eta = 1.0, 0.5
        m = models.heisenberg()
        for H in (0.35, 0.5):
            spec = FbmSpec(H, 2, 128)
            res = minimizer.minimize_energy(m.vf, m.a, (xi, eta, 0.0), spec,
                                            M_opt=64, n_starts=3, seed=606,
                                            compute_hessian=False)
            t = spec.times
            expect = np.outer(fbm_cov(1.0, t, H), [xi, eta])
            linf = float(np.max(np.abs(res.gamma_bar.evaluate(t) - expect)))
            egap = abs(res.energy - (xi ** 2 + eta ** 2) / 2)
            details[f"heisenberg_H={H}"] = {"gamma_linf": linf, "energy_gap": egap}
            ok &= linf <= 1e-3 and egap <= 1e-4

        mb = models.bridge1d(a=0.0, a_prime=1.0)
        specb = FbmSpec(0.5, 1, 128)
        resb = minimizer.minimize_energy(mb.vf, mb.a, mb.a_prime, specb,
                                         n_starts=2, seed=607, compute_hessian=False)
        gb = resb.gamma_bar.evaluate(specb.times)[:, 0]
        linf_b = float(np.max(np.abs(gb - fbm_cov(1.0, specb.times, 0.5))))
        egap_b = abs(resb.energy - 0.5)
        details["bridge"] = {"gamma_linf": linf_b, "energy_gap": egap_b}
        ok &= linf_b <= 1e-3 and egap_b <= 1e-4

        r = float(np.hypot(xi, eta))
        mr = models.heisenberg(a_prime=(r, 0.0, 0.0))
        spec = FbmSpec(0.4, 2, 128)
        resr = minimizer.minimize_energy(mr.vf, mr.a, mr.a_prime, spec,
                                         n_starts=3, seed=608, compute_hessian=False)
        nu_gap = float(np.max(np.abs(resr.nu_bar - np.array([r, 0.0, 0.0]))))
        details["nu_after_rotation_gap"] = nu_gap
        ok &= nu_gap <= 1e-3

        rep = minimizer.multiplier_identity_check(resr, mr.vf,
                                                  n_samples=n_mult_samples, seed=609)
        rel = rep["rms_residual"] / rep["gamma_norm"]
        details["multiplier_rms_rel"] = rel
        ok &= rel <= 1e-3
        return ok, details

    return _timed(6, "minimizer", run)


def criterion_07_covariance(n_mc=100_000):
    def run():
        details = {}
        ok = True
        xi, eta = 1.0, 0.5
        r = float(np.hypot(xi, eta))
        m = models.heisenberg(a_prime=(r, 0.0, 0.0))
        spec = FbmSpec(0.4, 2, 256)
        gamma = CMElement(spec, np.array([1.0]), np.array([[r], [0.0]]))
        sk = rde.solve_skeleton(m.vf, m.a, gamma)
        A = rde.skeleton_gradient(m.vf, sk)
        q = malliavin.malliavin_Q(A, spec).matrix
        struct = max(abs(q[0, 0] - 1), abs(q[1, 1] - 1), abs(q[0, 1]), abs(q[0, 2]))
        details["q_structure_dev"] = float(struct)
        ok &= struct <= 1e-3

        w = fgauss.sample_fbm(spec, n_mc, seed=707)
        phi1 = rde.pair_gradient_with_path(A, np.diff(w.values, axis=1))
        emp = (phi1.T @ phi1) / n_mc
        se = np.sqrt((np.outer(np.diag(q), np.diag(q)) + q ** 2) / n_mc)
        dev = float(np.max(np.abs(emp - q) / se))
        details["phi1_cov_max_dev_se"] = dev
        ok &= dev <= 4.0

        w1 = rl.lift_grid_path(fgauss.sample_fbm(spec, 1, 708).path(0), 3)
        res = rde.solve_scaled_shifted(m.vf, m.a, w1, gamma, 0.5, 0.4)
        c = malliavin.reduced_cov_C(res, m.vf.sigma, epsilon=0.5)
        rng = np.random.default_rng(709)
        worst = 0.0
        for _ in range(10):
            v = rng.normal(size=3)
            lhs = float(v @ c.matrix @ v)
            rhs = malliavin.reduced_quadratic_form(res, m.vf.sigma, v, epsilon=0.5)
            worst = max(worst, abs(lhs - rhs))
        details["reduced_identity_dev"] = worst
        ok &= worst <= 1e-9
        return ok, details

    return _timed(7, "covariance", run)


def criterion_08_hormander():
    def run():
        m = models.heisenberg()
        ranks, total = malliavin.hormander_rank(m.vf, np.zeros(3), max_depth=1)
        ok = ranks[0] == 2 and ranks[1] == 3
        ell = models.elliptic_identity(3)
        r2, t2 = malliavin.hormander_rank(ell.vf, np.zeros(3), max_depth=0)
        ok &= r2[0] == 3
        return ok, {"heisenberg_ranks": ranks, "elliptic_rank": r2[0]}

    return _timed(8, "Hörmander rank", run)


def criterion_09_remainder_decay():
    def run():
        details = {}
        ok = True
        for model, H, seed in [(models.lognormal(sigma=0.5), 0.4, 909),
                               (models.heisenberg(), 0.5, 910)]:
            spec = FbmSpec(H, model.d, 256)
            gamma = model.exact_gamma(spec)
            x = rl.lift_grid_path(fgauss.sample_fbm(spec, 1, seed).path(0), 3)
            terms = rde.expansion_terms(model.vf, model.a, gamma, x, H)
            epss = [2.0 ** -j for j in range(2, 7)]
            for k, kappa_next in ((0, 1.0), (1, 2.0)):
                sups = [
                    float(np.max(np.linalg.norm(
                        rde.remainder(model.vf, model.a, gamma, x, e, k, H,
                                      terms=terms).values, axis=-1)))
                    for e in epss
                ]
                slope = float(np.polyfit(np.log(epss), np.log(sups), 1)[0])
                details[f"{model.name}_k{k}_slope"] = slope
                ok &= slope >= kappa_next - 0.15
        return ok, details

    return _timed(9, "remainder decay", run)


def criterion_10_density_oracle(n_samples=100_000):
    def run():
        details = {}
        ok = True
        for H in (0.4, 0.5):
            m = models.lognormal(sigma=0.5, a=1.0, a_prime=1.5, hurst=H)
            spec = FbmSpec(H, 1, 128)
            res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=2,
                                            seed=1010, compute_hessian=False)
            est = asymptotics.estimate_density(m, 0.5, "shifted", n_samples, spec,
                                               seed=1011, minimizer_result=res)
            oracle = m.exact_density(0.5)
            rel = abs(est.estimate - oracle) / oracle
            details[f"H={H}"] = {"estimate": est.estimate, "oracle": float(oracle),
                                 "rel_err": float(rel), "se": est.se}
            ok &= rel <= 0.05
        return ok, details

    return _timed(10, "density oracle", run)


def criterion_11_rate_prefactor(n_samples=100_000):
    def run():
        H = 0.4
        m = models.lognormal(sigma=0.5, a=1.0, a_prime=1.5, hurst=H)
        spec = FbmSpec(H, 1, 128)
        res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=2,
                                        seed=1110, compute_hessian=False)
        ests = [
            asymptotics.estimate_density(m, t, "shifted", n_samples, spec,
                                         seed=1111 + i, minimizer_result=res)
            for i, t in enumerate((0.4, 0.2, 0.1))
        ]
        rep = asymptotics.fit_asymptotics(ests, 2.0 * res.energy, 1, H, drift=False)
        rate_exact = m.exact_rate()
        rate_rel = abs(rep["rate_hat"] - rate_exact) / rate_exact
        pref_gap = abs(rep["prefactor_exp_hat"] - (-H))
        ok = rate_rel <= 0.10 and pref_gap <= 0.15
        return ok, {"rate_hat": rep["rate_hat"], "rate_exact": float(rate_exact),
                    "rate_rel_err": float(rate_rel),
                    "prefactor_exp_hat": rep["prefactor_exp_hat"],
                    "prefactor_gap": float(pref_gap)}

    return _timed(11, "asymptotic rate and prefactor", run)


def criterion_12_leading_coefficient(n_sanity=1_000_000, n_full=400_000,
                                     n_density=100_000):
    def run():
        details = {}
        H = 0.5
        m = models.heisenberg()
        spec = FbmSpec(H, 2, 128)
        res = minimizer.minimize_energy(m.vf, m.a, m.a_prime, spec, n_starts=2,
                                        seed=1210, compute_hessian=False)
        sanity = asymptotics.leading_coefficient(m.vf, res, spec, n_sanity,
                                                 seed=1211, sanity=True)
        rel = abs(sanity["alpha0"] - sanity["gaussian_mass_target"]) \
            / sanity["gaussian_mass_target"]
        details["sanity"] = {"estimate": sanity["alpha0"],
                             "target": sanity["gaussian_mass_target"],
                             "rel_err": float(rel)}
        ok = rel <= 0.05

        full = asymptotics.leading_coefficient(m.vf, res, spec, n_full, seed=1212)
        ests = [
            asymptotics.estimate_density(m, t, "shifted", n_density, spec,
                                         seed=1213 + i, minimizer_result=res)
            for i, t in enumerate((0.6, 0.45, 0.3))
        ]
        rep = asymptotics.fit_asymptotics(ests, 2.0 * res.energy, 3, H, drift=False)
        gap = abs(full["alpha0"] - rep["alpha0_hat"]) / max(abs(rep["alpha0_hat"]), 1e-300)
        details["cross"] = {"alpha0_mc": full["alpha0"],
                            "alpha0_fit": rep["alpha0_hat"], "rel_gap": float(gap)}
        ok &= gap <= 0.20
        return ok, details

    return _timed(12, "leading coefficient", run)


def criterion_13_kusuoka_stroock(n_base=1000):
    def run():
        H = 0.5
        m = models.heisenberg()
        spec = FbmSpec(H, 2, 128)
        epss = [2.0 ** -j for j in range(2, 6)]
        mus = {}
        for n_samples in (n_base, 2 * n_base):
            samples_by_eps = []
            for i, eps in enumerate(epss):
                q = malliavin.sample_scaled_Q(m.vf, m.a, spec, eps, H, n_samples,
                                              seed=1313 + i)
                samples_by_eps.append(q)
            rep = malliavin.eigen_tail(samples_by_eps, epss)
            mus[n_samples] = rep["mu_hat"]
        mu1, mu2 = mus[n_base], mus[2 * n_base]
        ok = (np.isfinite(mu1) and np.isfinite(mu2) and mu1 >= 0 and mu2 >= 0
              and abs(mu2 - mu1) <= 0.30 * max(abs(mu1), 1e-12))
        return ok, {"mu_hat": mu1, "mu_hat_doubled": mu2}

    return _timed(13, "Kusuoka-Stroock diagnostic", run)


def criterion_14_determinism(workdir=None):
    def run():
        import hashlib
        import tempfile
        from pathlib import Path

        from . import cli

        base = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="smalltime-det-"))
        commands = [
            ["indices", "--hurst", "2/5", "--set", "L1", "--cutoff", "4"],
            ["simulate-fbm", "--hurst", "0.4", "--grid", "64", "--paths", "20",
             "--seed", "7"],
            ["minimize", "--model", "heisenberg", "--target", "1,0.5,0",
             "--hurst", "1/2", "--grid", "64", "--seed", "3"],
            ["density", "--model", "lognormal", "--t", "0.5", "--method", "shifted",
             "--samples", "2000", "--seed", "7", "--hurst", "2/5", "--grid", "64"],
            ["solve", "--model", "heisenberg", "--hurst", "0.4", "--grid", "64",
             "--seed", "5"],
        ]
        details = {}
        ok = True
        for idx, cmd in enumerate(commands):
            digests = []
            for workers in ("1", "3"):
                out = base / f"run{idx}_w{workers}"
                rc = cli.main(cmd + ["--workers", workers, "--out", str(out)])
                if rc != 0:
                    return False, {"failed_command": " ".join(cmd), "exit": rc}
                h = hashlib.sha256()
                for f in sorted(out.iterdir()):
                    if f.name == "manifest.json":
                        continue
                    h.update(f.name.encode())
                    h.update(f.read_bytes())
                digests.append(h.hexdigest())
            same = digests[0] == digests[1]
            details[cmd[0]] = {"identical": same, "digest": digests[0][:16]}
            ok &= same
        return ok, details

    return _timed(14, "determinism across worker counts", run)


FAST_CRITERIA = (1, 2, 4, 5, 8)

_ALL = {
    1: criterion_01_index_sets,
    2: criterion_02_chen_grouplike,
    3: criterion_03_fbm_sampler,
    4: criterion_04_young_translation,
    5: criterion_05_solver_exactness,
    6: criterion_06_minimizer,
    7: criterion_07_covariance,
    8: criterion_08_hormander,
    9: criterion_09_remainder_decay,
    10: criterion_10_density_oracle,
    11: criterion_11_rate_prefactor,
    12: criterion_12_leading_coefficient,
    13: criterion_13_kusuoka_stroock,
    14: criterion_14_determinism,
}


def run_suite(suite="full", printer=print):
    """Run the acceptance criteria; returns the list of CriterionResult."""
    numbers = FAST_CRITERIA if suite == "fast" else tuple(sorted(_ALL))
    results = []
    for num in numbers:
        res = _ALL[num]()
        results.append(res)
        if printer is not None:
            printer(res.line())
    return results
