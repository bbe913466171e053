"""One test per acceptance criterion; each prints a PASS/FAIL line."""
import time

import numpy as np
import pytest

from spikehom.core import ScalarField, l2_norm, problem_from_dict
from spikehom.experiments import (MSAOptions, delta_sweep, enumerate_optimum, epsilon_sweep,
                                  optimize_msa, region_fractions, separable_optimum)
from spikehom.homogenization import (CheckerboardSpec, cell_elliptic_numeric, cell_functional,
                                     certify_corrector_bound, checkerboard_weak_limits,
                                     homogenized_scalar, laminate_closed_form, weak_pairing_test)
from spikehom.optimality import (condition_rhs, duality_gap, rank_one_sup, rank_one_sup_oracle)
from spikehom.pde import solve_adjoint, solve_state, solve_variational

from conftest import ACCEPTANCE_LINES, PI, config, make_problem


def report(k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def fields(spec):
    cf = spec.control_fields
    labels = spec.controls.labels
    get = lambda key, default: spec.control_field(cf.get(key, default))
    ub = get("baseline", labels[0])
    return ub, get("u2", labels[-1]), get("u3", labels[-1]), get("u4", cf.get("baseline", labels[0]))


def test_criterion_1_rank_one_sup():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for n in (1, 2, 3, 5):
        for _ in range(1000):
            xi, eta = rng.normal(size=(2, n))
            worst = max(worst, abs(rank_one_sup(xi, eta) - rank_one_sup_oracle(xi, eta, 100_000)))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-6 and elapsed < 5.0,
           f"max |formula - oracle| = {worst:.2e} (tol 1e-6), {elapsed:.2f} s (limit 5 s)")


def test_criterion_2_corrector_certification():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    failures, worst_ratio = 0, 0.0
    for _ in range(100):
        base = CheckerboardSpec.random(rng, 0.2, 0.5, 2.0)
        for d in (0.2, 0.1, 0.05, 0.025):
            rep = certify_corrector_bound(base.with_delta(d))
            failures += not rep.ok
            worst_ratio = max(worst_ratio, rep.error[0] / rep.tight_bound[0],
                              rep.error[2] / rep.tight_bound[2],
                              (rep.error[1] + rep.k2_discretization) / rep.bound)
    elapsed = time.perf_counter() - t0
    report(2, failures == 0 and elapsed < 120,
           f"{400 - failures}/400 certified, worst error/bound {worst_ratio:.3f}, {elapsed:.1f} s (limit 120 s)")


def test_criterion_3_homogenized_laminate():
    a = (1.0, 1.0, 2.0, 2.0)
    closed = laminate_closed_form(a, 0.5)
    regimes = [homogenized_scalar(a, 0.5, k) for k in (1, 2, 3)]
    mu = np.array(checkerboard_weak_limits(0.5))
    cb = CheckerboardSpec(a, a, a, 0.5, 1.0, 2.0)
    numeric = float(mu @ np.array(a) + 0.5 * cell_functional(cb, cell_elliptic_numeric(cb, 256)))
    spread = max(regimes) - min(regimes)
    ok = (abs(closed - 4 / 3) <= 1e-8 and abs(regimes[1] - 4 / 3) <= 1e-4
          and abs(numeric - 4 / 3) <= 1e-4 and spread <= 1e-6)
    report(3, ok, f"closed form {closed:.12f}, numeric cells {regimes[1]:.12f} / {numeric:.12f}, "
                  f"regime spread {spread:.1e}")


def _heat_error(nt, nx):
    spec = make_problem([{"name": "a", "A": "1", "f": "0", "f0": "0"}], nt=nt, nx=nx, T=0.1,
                        z0=f"sin({PI}*x)")
    z = solve_state(spec, spec.control_field("a"))
    T, X = spec.grid.mesh()
    exact = np.exp(-np.pi ** 2 * T) * np.sin(np.pi * X)
    return l2_norm(ScalarField(spec.grid, z.values - exact, dirichlet=False))


def test_criterion_4_solver_order():
    e200 = _heat_error(200, 200)
    errs = [_heat_error(int(round(0.1 * nx * nx)), nx) for nx in (100, 200, 400)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = e200 <= 1e-3 and all(3.2 <= r <= 4.8 for r in ratios)
    report(4, ok, f"L2 error at 200x200 {e200:.2e} (tol 1e-3), "
                  f"Richardson ratios {ratios[0]:.3f}, {ratios[1]:.3f} (window [3.2, 4.8])")


def test_criterion_5_homogenization_limit():
    spec = problem_from_dict(config("laminate"))
    assert (spec.grid.nt, spec.grid.nx) == (400, 400)
    t0 = time.perf_counter()
    rep = epsilon_sweep(spec, *fields(spec), 0.5, [0.2, 0.1, 0.05, 0.025], r=1.0, threads=4)
    elapsed = time.perf_counter() - t0
    gaps = rep.column("l2_gap")
    ok = rep.summary["monotone_with_slack"] and rep.summary["final_relative_gap"] <= 0.05 and elapsed < 300
    report(5, ok, f"gaps {', '.join(f'{g:.3e}' for g in gaps)}; final relative gap "
                  f"{rep.summary['final_relative_gap']:.2%} (limit 5%), {elapsed:.1f} s")


def test_criterion_6_first_variation():
    spec = problem_from_dict(config("two_label"))
    ub, u2, u3, u4 = fields(spec)
    rep = delta_sweep(spec, ub, u2, u3, u4, [0.1, 0.05, 0.02, 0.01])
    fv = rep.summary["first_variation"]
    q = rep.column("quotient")
    errs = rep.column("error")
    rel = errs[-1] / abs(fv)
    monotone = all(b < a for a, b in zip(errs, errs[1:])) and (
        all(b > a for a, b in zip(q, q[1:])) or all(b < a for a, b in zip(q, q[1:])))
    report(6, rel <= 0.10 and monotone,
           f"first variation {fv:.6f}, quotients {', '.join(f'{v:.6f}' for v in q)}, "
           f"relative error at 0.01 {rel:.2%} (limit 10%)")


ACCEPTANCE_PROBLEMS = ["two_label", "laminate", "affine_8x8", "diffusion_only", "heat"]


def test_criterion_7_duality():
    gaps = {}
    for name in ACCEPTANCE_PROBLEMS:
        spec = problem_from_dict(config(name))
        ub, u2, u3, _ = fields(spec)
        z = solve_state(spec, ub)
        psi = solve_adjoint(spec, ub, z)
        Z = solve_variational(spec, ub, u2, u3, z)
        gaps[name] = duality_gap(spec, ub, z, psi, Z, u2, u3)
    worst = max(gaps.values())
    report(7, worst <= 1e-8, "gaps " + ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()) + " (tol 1e-8)")


def test_criterion_8_nonnegativity():
    rng = np.random.default_rng(8)
    worst = np.inf
    for i in range(100_000):
        n = (1, 2, 3, 5)[i % 4]
        M1, M2 = rng.normal(size=(2, n, n))
        Abar = M1 @ M1.T + 0.05 * np.eye(n)
        Av = M2 @ M2.T + 0.05 * np.eye(n)
        xi, eta = rng.normal(size=(2, n))
        worst = min(worst, condition_rhs(Abar, Av, xi, eta))
    # n = 1: absolute error on admissible coefficients in [0.5, 2] with O(1)
    # gradients, relative error on a wide range
    scalar_err, scalar_rel = 0.0, 0.0
    for _ in range(10_000):
        abar, av = rng.uniform(0.5, 2.0, 2)
        xi, eta = rng.normal(size=2)
        expected = (abar - av) ** 2 / av * max(xi * eta, 0.0)
        scalar_err = max(scalar_err, abs(condition_rhs(abar, av, xi, eta) - expected))
        abar, av = rng.uniform(0.01, 100.0, 2)
        xi, eta = rng.normal(size=2) * 10
        expected = (abar - av) ** 2 / av * max(xi * eta, 0.0)
        scalar_rel = max(scalar_rel, abs(condition_rhs(abar, av, xi, eta) - expected) / max(1.0, expected))
    report(8, worst >= -1e-12 and scalar_err <= 1e-12 and scalar_rel <= 1e-12,
           f"min rhs {worst:.2e} over 1e5 SPD inputs, n=1 formula error {scalar_err:.1e} "
           f"(relative {scalar_rel:.1e} on a wide range)")


def test_criterion_9_optimizer_soundness():
    # exact enumeration: the affine problem's cost is a sum of per-cell terms, so a
    # per-cell search is exhaustive; brute force confirms this on a 3x3 grid
    cfg = config("affine_8x8")
    tiny = dict(cfg, grid=dict(cfg["grid"], nt=3, nx=3))
    tiny_spec = problem_from_dict(tiny)
    _, J_brute = enumerate_optimum(tiny_spec)
    _, J_sep_tiny = separable_optimum(tiny_spec)
    spec = problem_from_dict(cfg)
    _, J_enum = separable_optimum(spec)
    res = optimize_msa(spec, fields(spec)[0])
    cost_gap = abs(res.cost - J_enum)

    fine = problem_from_dict(config("diffusion_only"))
    res2 = optimize_msa(fine, fields(fine)[0], MSAOptions(tol=1e-9))
    r_min = res2.report.min_residual
    ok = abs(J_brute - J_sep_tiny) <= 1e-12 and cost_gap <= 1e-3 and r_min >= -1e-6
    report(9, ok, f"8x8 MSA cost {res.cost:.6f} vs enumeration {J_enum:.6f} (gap {cost_gap:.1e}), "
                  f"fine-grid min residual {r_min:.2e} ({res2.status}, "
                  f"{fine.grid.nt}x{fine.grid.nx})")


def test_criterion_10_weak_limits():
    spec = problem_from_dict(config("laminate"))
    g = spec.grid
    worst = 0.0
    for delta in (0.3, 0.5, 0.7):
        mu = np.array(checkerboard_weak_limits(delta))
        for eps in (0.2, 0.1, 0.05, 0.025):
            err = np.max(np.abs(region_fractions(g, delta, eps) - mu))
            worst = max(worst, err * eps * g.nx / 2)
    pairing = weak_pairing_test(0.3, [0.2, 0.1, 0.05, 0.025])
    decays = all(b < a for a, b in zip(pairing.gaps, pairing.gaps[1:]))
    report(10, worst <= 1.0 and decays,
           f"worst fraction error {worst:.2f} x counting bound, pairing gaps "
           f"{', '.join(f'{v:.2e}' for v in pairing.gaps)}")
