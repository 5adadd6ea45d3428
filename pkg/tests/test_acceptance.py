"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import filecmp
import math
import time

import numpy as np
import pytest

import oracles
from fracnirenberg.cli import main
from fracnirenberg.constants import make_constants, multiplier
from fracnirenberg.exact_solutions import BubbleParams, bubble_function, flat_bubble_profile, south_pole
from fracnirenberg.extension import (FlatField, HalfSpaceGrid, PoissonExtension, discrete_energy, fd_solve,
                                     kernel_mass, neumann_trace, poisson_extend, weighted_energy)
from fracnirenberg.fractional_ops import apply_psigma_integral, apply_psigma_spectral
from fracnirenberg.identities import kazdan_warner, pohozaev
from fracnirenberg.kfunctions import parse_k
from fracnirenberg.solver import SolverConfig, blowup_diagnostics, continuation, newton_solve, residual
from fracnirenberg.sphere_spectral import GridKind, SpectralCoeffs, SphereFunction, SphereGrid, full_index, synthesize

SIGMAS = (0.25, 0.5, 0.75)


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_01_multiplier_consistency(report):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (2, 3, 4, 5):
        k = np.arange(51)
        ref = (k + n / 2) * (k + n / 2 - 1)
        got = multiplier(k, n, 1.0)
        # k = 0, n = 2 has ref = 0: measure against max(|ref|, 1) there
        worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1))))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-12 and dt < 1, f"max rel err {worst:.2e}, {dt:.2f}s")


def test_criterion_02_operator_on_constants(report):
    t0 = time.perf_counter()
    spec_err = integ_err = 0.0
    for n in (2, 3, 4):
        g = SphereGrid.zonal(n, 16)
        one = SphereFunction(g, np.ones(16))
        xi = np.zeros(n + 1)
        xi[0] = 1.0
        for s in SIGMAS:
            c = oracles.c_n_sigma(n, s)
            spec_err = max(spec_err, float(np.max(np.abs(apply_psigma_spectral(one, s).values / c - 1))))
            integ_err = max(integ_err, abs(apply_psigma_integral(one, s, xi) / c - 1))
    g = SphereGrid.full(8)
    one = SphereFunction(g, np.ones(g.shape))
    for s in SIGMAS:
        c = oracles.c_n_sigma(2, s)
        spec_err = max(spec_err, float(np.max(np.abs(apply_psigma_spectral(one, s).values / c - 1))))
        integ_err = max(integ_err, abs(apply_psigma_integral(one, s, np.array([0.6, 0.0, 0.8])) / c - 1))
    dt = time.perf_counter() - t0
    ok = spec_err <= 1e-12 and integ_err <= 1e-4 and dt < 30
    report(2, ok, f"spectral {spec_err:.1e}, integral {integ_err:.1e}, {dt:.1f}s")


def test_criterion_03_bubble_residual(report):
    t0 = time.perf_counter()
    worst = 0.0
    cases = [(2, 64, "zonal"), (2, 64, "full"), (3, 128, "zonal"), (4, 128, "zonal")]
    for n, kmax, kind in cases:
        for s in SIGMAS:
            cfg = SolverConfig(n, s, 1.0, 0.0, kmax, grid_kind=kind)
            g = cfg.make_grid()
            c = make_constants(n, s).c_n_sigma
            for lam in (1.0, 2.0, 5.0):
                v = bubble_function(g, BubbleParams("sphere", south_pole(n), lam, s))
                rel = np.abs(residual(v, cfg).values) / (c * v.values ** cfg.p)
                worst = max(worst, float(np.max(rel)))
    dt = time.perf_counter() - t0
    report(3, worst <= 1e-6 and dt < 60, f"max rel residual {worst:.2e}, {dt:.1f}s")


def test_criterion_04_dual_operator_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    km = 8
    g = SphereGrid.full(km + 1)
    worst = 0.0
    for trial in range(10):
        s = SIGMAS[trial % 3]
        c = rng.normal(size=(km + 1, 2 * km + 1)) * full_index(km) / (1 + np.arange(km + 1))[:, None]
        c[0, km] += 3.0
        v = synthesize(SpectralCoeffs(2, GridKind.FULL, km, c), g)
        pv = apply_psigma_spectral(v, s)
        pts = rng.normal(size=(6, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        ref = pv.evaluate(pts)
        got = np.array([apply_psigma_integral(v, s, P) for P in pts])
        worst = max(worst, float(np.max(np.abs(got - ref)) / np.max(np.abs(ref))))
    dt = time.perf_counter() - t0
    report(4, worst <= 1e-3 and dt < 120, f"max rel L-inf gap {worst:.2e}, {dt:.1f}s")


def _liouville(n, s):
    c = make_constants(n, s)
    a, A = c.alpha, c.a_liouville
    prof = flat_bubble_profile(1.0, n, s, A)
    dprof = lambda r: A * (-a) * 2 * r * (1 + r * r) ** (-a - 1)
    return FlatField.radial(n, prof, dprof), c


def test_criterion_05_kernel_and_neumann_trace(report):
    t0 = time.perf_counter()
    mass_err = 0.0
    for n in (2, 3, 4):
        for s in SIGMAS:
            c = make_constants(n, s)
            mass_err = max(mass_err, abs(kernel_mass(c) - 1), abs(kernel_mass(c, t=5.0) - 1))
    trace_err = 0.0
    for n, s in [(2, 0.25), (2, 0.5), (2, 0.75), (3, 0.5)]:
        u, c = _liouville(n, s)
        g = HalfSpaceGrid.radial_grid(n, s, R=4, nr=21, gamma=5 if s >= 0.5 else None)
        U = poisson_extend(u, g, s)
        r = g.x_axes[0]
        inner = r <= 2
        tr = neumann_trace(U, 3)[inner]
        trace_err = max(trace_err, float(np.max(np.abs(tr / u.profile(r[inner]) ** c.p_critical - 1))))
    dt = time.perf_counter() - t0
    ok = mass_err <= 1e-8 and trace_err <= 1e-3 and dt < 120
    report(5, ok, f"kernel mass {mass_err:.1e}, Neumann trace {trace_err:.1e}, {dt:.1f}s")


def test_criterion_06_energy_identity(report):
    # literal target: energy = N_s^2 ||u||^2_{H^s}
    gaps, single = {}, {}
    for s in SIGMAS:
        n = 2
        c = make_constants(n, s)
        a = c.alpha
        u = FlatField.radial(n, lambda r: (1 + r * r) ** (-a), lambda r: -2 * a * r * (1 + r * r) ** (-a - 1))
        U = poisson_extend(u, HalfSpaceGrid.radial_grid(n, s, R=2, nr=3, T=1, J=2), s)
        E = weighted_energy(U, method="quadrature", box=10.0, far_amplitude=1.0)
        ref = oracles.hsigma_seminorm_sq(n, s)
        gaps[s] = abs(E / (c.N_sigma ** 2 * ref) - 1)
        single[s] = abs(E / (c.N_sigma * ref) - 1)
    # minimality against same-trace competitors
    n, s = 2, 0.5
    u, _ = _liouville(n, s)
    g = HalfSpaceGrid.radial_grid(n, s, R=2.0, nr=9, T=1.0, J=8)
    res = fd_solve(g, s, lambda x, t: u.profile(np.abs(x)) / (1 + t), trace=u.profile)
    base = np.concatenate([res.field.trace[:, None], res.field.values], axis=1)
    t = np.concatenate([[0.0], g.t_nodes])
    E0 = discrete_energy(g, s, base, t)
    rng = np.random.default_rng(7)
    free = np.zeros(base.shape, dtype=bool)
    free[:-1, 1:-1] = True
    violations = sum(discrete_energy(g, s, base + free * rng.normal(size=base.shape) * rng.uniform(1e-4, 1), t)
                     - E0 < -1e-10 for _ in range(20))
    ok = max(gaps.values()) <= 0.02 and violations == 0
    detail = ("N^2 form " + ", ".join(f"s={s}: {v:.1%}" for s, v in gaps.items())
              + f"; N form max {max(single.values()):.1e}; minimality violations {violations}/20")
    report(6, ok, detail)


def test_criterion_07_kazdan_warner(report):
    const_ok, witness_ok = True, True
    for g in (SphereGrid.zonal(2, 65), SphereGrid.zonal(3, 65), SphereGrid.full(33)):
        for lam in (1.0, 2.0, 5.0):
            v = bubble_function(g, BubbleParams("sphere", south_pole(g.n), lam, 0.5))
            rep = kazdan_warner(parse_k("constant:1", g.n).sphere_function(g), v, 0.5)
            const_ok &= max(abs(c) for c in rep.components) <= rep.quadrature_estimate_error
    g = SphereGrid.zonal(2, 129)
    K = parse_k("coordinate:3 offset:2", 2).sphere_function(g)
    for lam in (1.0, 2.0, 5.0, 10.0):
        rep = kazdan_warner(K, bubble_function(g, BubbleParams("sphere", south_pole(2), lam, 0.5)), 0.5)
        witness_ok &= rep.components[2] > 0
    ratios = []
    for kind, kmax, f in [("zonal", 64, lambda P: 1 + 0.2 * P[..., -1] ** 2),
                          ("full", 32, lambda P: 1 + 0.2 * P[..., -1] ** 2 + 0.1 * P[..., 0] ** 2)]:
        cfg = SolverConfig(2, 0.5, 1.0, kmax=kmax, grid_kind=kind)
        g = cfg.make_grid()
        Kf = SphereFunction.from_callable(g, f)
        r = newton_solve(SolverConfig(2, 0.5, Kf, kmax=kmax, grid_kind=kind), grid=g)
        rep = kazdan_warner(Kf, r.v, 0.5)
        ratios.append(max(abs(c) for c in rep.components) / rep.quadrature_estimate_error)
    ok = const_ok and witness_ok and max(ratios) <= 10
    report(7, ok, f"constant K zero {const_ok}, witness positive {witness_ok}, "
                  f"solver max component / self-estimate {max(ratios):.2f}")


def test_criterion_08_pohozaev(report):
    worst, decreasing = 0.0, True
    for n, s in [(2, 0.25), (2, 0.5), (2, 0.75), (3, 0.5)]:
        c = make_constants(n, s)
        u = FlatField.radial(n, flat_bubble_profile(1.0, n, s, c.a_liouville))
        g = HalfSpaceGrid.radial_grid(n, s, R=4, nr=9, T=2.0, J=64)
        U = poisson_extend(u, g, s)
        Uf = poisson_extend(u, g.refined(), s)
        for R in (0.5, 1.0):
            a = pohozaev(U, 1.0, R, c.p_critical)
            b = pohozaev(Uf, 1.0, R, c.p_critical)
            worst = max(worst, abs(a.sum) / a.scale)
            decreasing &= abs(b.sum) / b.scale < abs(a.sum) / a.scale
    report(8, worst <= 1e-2 and decreasing, f"max |sum|/scale {worst:.1e}, decreasing {decreasing}")


def test_criterion_09_fd_cross_check_and_maximum_principle(report):
    n, s = 2, 0.5
    u, c = _liouville(n, s)
    ev = PoissonExtension(u, s)

    def bnd(x, t):
        X = np.zeros(x.shape + (n + 1,))
        X[..., 0], X[..., -1] = x, t
        out = np.empty(x.shape)
        z = t <= 0
        out[z] = u.profile(np.abs(x[z]))
        if (~z).any():
            out[~z] = ev.at(X[~z])
        return out

    g0 = g = HalfSpaceGrid.radial_grid(n, s, R=2.0, nr=9, T=1.0, J=8)
    X = np.zeros(g0.shape + (n + 1,))
    X[..., 0] = g0.x_axes[0][:, None]
    X[..., -1] = g0.t_nodes[None, :]
    exact = ev.at(X)
    errs = []
    for lev in range(3):
        res = fd_solve(g, s, bnd, trace=u.profile)
        step = 2 ** lev
        errs.append(np.max(np.abs(res.field.values[::step, step - 1::step] - exact)))
        g = g.refined()
    order = float(np.min(np.log2(np.array(errs[:-1]) / np.array(errs[1:]))))

    passed = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        s_t = SIGMAS[seed % 3]
        cf = rng.normal(size=4)
        f = lambda x: cf[0] + cf[1] * np.cos(2 * x) + cf[2] * x * x / 4 + cf[3] * np.sin(3 * x)
        h = lambda x, t: cf[0] + cf[1] * np.cos(2 * x + t) + cf[2] * (x * x - t) / 4 + cf[3] * np.sin(3 * x) * np.exp(-t)
        gg = HalfSpaceGrid.radial_grid(2, s_t, R=2.0, nr=9, T=1.0, J=8)
        r = fd_solve(gg, s_t, h, trace=f)
        vals = np.concatenate([r.field.trace[:, None], r.field.values], axis=1)
        x = gg.x_axes[0]
        t = np.concatenate([[0.0], gg.t_nodes])
        b = np.concatenate([f(x), h(x[-1] + 0 * t, t), h(x, t[-1] + 0 * x)])
        slack = 1e-12
        passed += bool(vals.min() >= b.min() - slack and vals.max() <= b.max() + slack)
    report(9, order >= 1 and passed == 100, f"observed order {order:.2f}, maximum principle {passed}/100")


def test_criterion_10_blowup_study(report):
    t0 = time.perf_counter()
    cfg = SolverConfig(2, 0.5, "bump:north,1.0,0.5", kmax=256)
    fam = continuation(cfg, [0.5, 0.4, 0.3, 0.2, 0.15, 0.1, 0.07, 0.05])
    assert fam.failure is None, fam.failure
    diags = [blowup_diagnostics(r, cfg) for r in fam]
    last = diags[-1]
    single = len(last.peaks) == 1
    misfit = last.peaks[0]["profile_misfit"] if single else math.inf
    simple = all(d.wbar_critical_points == 1 for d in diags[-3:])
    tm2 = np.array([d.tau_times_m2 for d in diags if d.tau_times_m2 is not None])
    tm2_ratio = float(tm2.max() / np.median(tm2)) if tm2.size else math.inf
    norms = np.array([r.critical_norm for r in fam])
    norm_ratio = float(norms.max() / norms.min())
    dt = time.perf_counter() - t0
    ok = single and misfit <= 0.05 and simple and tm2_ratio <= 10 and norm_ratio <= 3 and dt < 600
    report(10, ok, f"peaks {len(last.peaks)}, misfit {misfit:.3f}, wbar simple {simple}, "
                   f"tau m^2 max/median {tm2_ratio:.2f}, critical norm max/min {norm_ratio:.2f}, {dt:.0f}s")


RUNS = [
    ["eigs", "--n", "3", "--sigma", "0.3", "--kmax", "12"],
    ["apply", "--kmax", "24", "--points", "5", "--sigma", "0.75"],
    ["verify-bubble", "--lambda", "5", "--kmax", "64", "--grid", "full"],
    ["extend", "--nr", "7", "--J", "8", "--sigma", "0.25"],
    ["solve", "--K", "bump:north,1.0,0.5", "--tau", "0.5", "--kmax", "32"],
    ["blowup-study", "--tau_schedule", "0.5,0.4,0.3", "--kmax", "64"],
]


def test_criterion_11_determinism(tmp_path, report):
    bad = []
    for i, argv in enumerate(RUNS):
        dirs = []
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "8")):
            d = tmp_path / f"{i}{tag}"
            assert main(argv + ["--out", str(d), "--threads", threads]) == 0
            dirs.append(d)
        for f in sorted(p.name for p in dirs[0].glob("*.csv")):
            for other in dirs[1:]:
                if not filecmp.cmp(dirs[0] / f, other / f, shallow=False):
                    bad.append(f"{argv[0]}:{f}")
    report(11, not bad, f"{len(RUNS)} commands x 3 runs, mismatches {bad or 'none'}")
