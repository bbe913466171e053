"""Spike controls, epsilon and delta sweeps, and a successive-approximation optimizer."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ControlField, ProblemSpec, ScalarField, inner_product, l2_norm
from .homogenization import checkerboard_region, checkerboard_weak_limits
from .io import write_json, write_rows_csv
from .optimality import condition_scan, evaluate_cost, first_variation
from .pde import (DEFAULT_OPTIONS, SolverOptions, solve_adjoint, solve_homogenized_state,
                  solve_state, solve_variational)

log = logging.getLogger(__name__)


def regime_of(r: float) -> int:
    """Cell-problem type for the time-scale exponent ``r``."""
    if r <= 0:
        raise ValueError("r must be positive")
    return 1 if r < 2 else (2 if r == 2 else 3)


@dataclass(frozen=True, eq=False)
class SpikeSpec:
    ubar: ControlField
    u2: ControlField
    u3: ControlField
    u4: ControlField
    delta: float
    eps: float
    r: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.eps > 0 and self.r > 0):
            raise ValueError("eps and r must be positive")
        g = self.ubar.grid
        if any(v.grid != g for v in (self.u2, self.u3, self.u4)):
            raise ValueError("all base controls must share one grid")

    @property
    def controls(self):
        return (self.ubar, self.u2, self.u3, self.u4)


class ResolutionError(ValueError):
    pass


MIN_CELLS_PER_PERIOD = 4


def spike_regions(grid, delta, eps, r) -> np.ndarray:
    """Checkerboard region index of every cell center, ``(nt, nx)``."""
    if eps / grid.h < MIN_CELLS_PER_PERIOD - 1e-9:
        raise ResolutionError(f"eps={eps} is resolved by only {eps / grid.h:.2f} cells "
                              f"(need at least {MIN_CELLS_PER_PERIOD})")
    if eps ** r / grid.dt < MIN_CELLS_PER_PERIOD - 1e-9:
        log.warning("time period eps^r=%.3g spans only %.2f steps; the spike control aliases in time",
                    eps ** r, eps ** r / grid.dt)
    tc, xc = np.meshgrid(grid.t_centers, grid.x_centers, indexing="ij")
    return checkerboard_region(tc / eps ** r, xc / eps, delta)


def build_spike_control(spike: SpikeSpec) -> ControlField:
    """Per cell, the base control named by the checkerboard region of its center."""
    region = spike_regions(spike.ubar.grid, spike.delta, spike.eps, spike.r)
    stacked = np.stack([v.choice for v in spike.controls])
    s, j = np.indices(region.shape)
    return spike.ubar.replace(stacked[region, s, j])


def region_fractions(grid, delta, eps, r=1.0) -> np.ndarray:
    region = spike_regions(grid, delta, eps, r)
    return np.bincount(region.ravel(), minlength=4) / region.size


def fitted_slope(params, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(params)``."""
    p, v = np.asarray(params, float), np.asarray(values, float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(p[ok]), np.log(v[ok]), 1)[0])


@dataclass
class SweepReport:
    parameter: str
    values: list
    rows: list
    slopes: dict
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError(f"{self.parameter} list must be strictly decreasing")

    def column(self, key) -> list:
        return [r[key] for r in self.rows]

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "values": self.values, "rows": self.rows,
                "slopes": self.slopes, "summary": self.summary}

    def write(self, stem) -> tuple:
        return (write_rows_csv(self.rows, f"{stem}.csv"), write_json(self, f"{stem}.json"))


def _check_decreasing(values, name, lo=0.0, hi=np.inf):
    values = [float(v) for v in values]
    if not values:
        raise ValueError(f"empty {name} list")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} list must be strictly decreasing")
    if any(not (lo < v < hi) for v in values):
        raise ValueError(f"{name} values must lie in ({lo}, {hi})")
    return values


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


_PAIRING_TESTS = {
    "sin_sin": "sin(3.141592653589793*t)*sin(3.141592653589793*x)",
    "exp_sum": "exp(t + x)",
    "poly": "1 + t*t - 2*x + 3*t*x",
}


def _pairing_fields(grid):
    from .expr import parse_expression
    T, X = grid.mesh()
    return {k: ScalarField(grid, parse_expression(v)(t=T, x=X), dirichlet=False)
            for k, v in _PAIRING_TESTS.items()}


def epsilon_sweep(spec: ProblemSpec, ubar, u2, u3, u4, delta: float, eps_list: Sequence[float],
                  r: float = 1.0, opts: SolverOptions = DEFAULT_OPTIONS, threads: int = 1,
                  slack: float = 0.10) -> SweepReport:
    """Distance between spike-control states and the homogenized state as ``eps`` shrinks."""
    eps_list = _check_decreasing(eps_list, "eps")
    zd = solve_homogenized_state(spec, ubar, u2, u3, u4, delta, regime=regime_of(r), opts=opts)
    norm = l2_norm(zd)
    tests = _pairing_fields(spec.grid)
    ref = {k: inner_product(zd, h) for k, h in tests.items()}

    def one(eps):
        u = build_spike_control(SpikeSpec(ubar, u2, u3, u4, delta, eps, r))
        z = solve_state(spec, u, opts)
        gap = l2_norm(z - zd)
        pair = max(abs(inner_product(z, h) - ref[k]) for k, h in tests.items())
        counts = np.bincount(spike_regions(spec.grid, delta, eps, r).ravel(), minlength=4)
        return {"eps": eps, "l2_gap": gap, "relative_gap": gap / norm if norm > 0 else gap,
                "pairing_gap": pair, "sup_norm": z.sup_norm(),
                **{f"fraction_{m + 1}": float(counts[m] / counts.sum()) for m in range(4)}}

    rows = _map(one, eps_list, threads)
    gaps = [row["l2_gap"] for row in rows]
    summary = {
        "delta": delta, "r": r, "regime": regime_of(r), "homogenized_l2_norm": norm,
        "monotone_with_slack": all(b < (1 + slack) * a for a, b in zip(gaps, gaps[1:])),
        "strictly_decreasing": all(b < a for a, b in zip(gaps, gaps[1:])),
        "final_relative_gap": rows[-1]["relative_gap"], "slack": slack,
    }
    slopes = {"l2_gap": fitted_slope(eps_list, gaps),
              "pairing_gap": fitted_slope(eps_list, [row["pairing_gap"] for row in rows])}
    return SweepReport("eps", eps_list, rows, slopes, summary)


def homogenized_cost(spec, controls, delta, z) -> float:
    """``sum_m mu_m J(z, u_m)`` for the four base controls."""
    return sum(m * evaluate_cost(spec, v, z) for m, v in zip(checkerboard_weak_limits(delta), controls))


def delta_sweep(spec: ProblemSpec, ubar, u2, u3, u4, delta_list: Sequence[float],
                opts: SolverOptions = DEFAULT_OPTIONS, threads: int = 1,
                claimed_optimal: bool = False, tol: float = 1e-6) -> SweepReport:
    """Difference quotients ``(J^delta - J)/delta`` against the first variation."""
    delta_list = _check_decreasing(delta_list, "delta", 0.0, 1.0)
    zbar = solve_state(spec, ubar, opts)
    Jbar = evaluate_cost(spec, ubar, zbar)
    Z = solve_variational(spec, ubar, u2, u3, zbar, opts)
    fv = first_variation(spec, ubar, zbar, Z, u2, u3, opts)

    def one(d):
        zd = solve_homogenized_state(spec, ubar, u2, u3, u4, d, opts=opts)
        q = (homogenized_cost(spec, (ubar, u2, u3, u4), d, zd) - Jbar) / d
        return {"delta": d, "quotient": q, "error": abs(q - fv),
                "relative_error": abs(q - fv) / abs(fv) if fv != 0 else abs(q - fv),
                "state_quotient_gap": l2_norm(ScalarField(spec.grid, (zd.values - zbar.values) / d - Z.values))}

    rows = _map(one, delta_list, threads)
    errs = [row["error"] for row in rows]
    summary = {"J_bar": Jbar, "first_variation": fv,
               "monotone_error": all(b <= a for a, b in zip(errs, errs[1:])),
               "final_relative_error": rows[-1]["relative_error"]}
    if claimed_optimal:
        summary["sign_check"] = all(row["quotient"] >= -tol for row in rows)
    slopes = {"error": fitted_slope(delta_list, errs),
              "state_quotient_gap": fitted_slope(delta_list, [row["state_quotient_gap"] for row in rows])}
    return SweepReport("delta", delta_list, rows, slopes, summary)


# ---------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class MSAOptions:
    max_outer: int = 50
    relax_fraction: float = 0.2
    tol: float = 1e-6
    cost_slack: float = 1e-10

    def __post_init__(self):
        if self.max_outer < 0:
            raise ValueError("max_outer must be >= 0")
        if not 0 < self.relax_fraction <= 1:
            raise ValueError("relax_fraction must lie in (0, 1]")
        if not self.tol >= 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class MSAResult:
    control: ControlField
    report: object  # ConditionReport of the final control
    trace: list
    status: str  # converged | max_outer | stalled

    @property
    def cost(self) -> float:
        return self.trace[-1]["cost"]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def costs(self) -> list:
        return [row["cost"] for row in self.trace if row["accepted"]]


def optimize_msa(spec: ProblemSpec, u_init: ControlField, msa: MSAOptions = MSAOptions(),
                 opts: SolverOptions = DEFAULT_OPTIONS) -> MSAResult:
    """Successive approximations driven by the augmented maximum condition.

    Each outer step moves the cells with the largest gain
    ``max_v[H(v) + rhs(v)] - H(u)`` to their maximizing label.  Only steps that
    do not increase the cost are accepted; a rejected step halves the fraction
    of cells moved.
    """
    u = u_init
    z = solve_state(spec, u, opts)
    J = evaluate_cost(spec, u, z)
    frac = msa.relax_fraction
    report = None
    trace = []
    status = "max_outer"
    for it in range(msa.max_outer + 1):
        if report is None:
            psi = solve_adjoint(spec, u, z, opts)
            report = condition_scan(spec, u, z, psi, msa.tol, opts)
            if not trace:
                trace.append({"iteration": 0, "cost": J, "min_residual": report.min_residual,
                              "changed": 0, "relax_fraction": frac, "accepted": True})
        if report.satisfied:
            status = "converged"
            break
        if it == msa.max_outer:
            break
        gain = -report.residual
        cand = np.flatnonzero(report.violating.ravel())
        k = max(1, int(math.ceil(frac * cand.size)))
        order = cand[np.argsort(-gain.ravel()[cand], kind="stable")][:k]
        choice = u.choice.copy().ravel()
        choice[order] = report.argmax.ravel()[order]
        trial = u.replace(choice.reshape(u.choice.shape))
        zt = solve_state(spec, trial, opts)
        Jt = evaluate_cost(spec, trial, zt)
        accepted = Jt <= J + msa.cost_slack
        row = {"iteration": it + 1, "cost": Jt if accepted else J, "trial_cost": Jt,
               "changed": int(k), "relax_fraction": frac, "accepted": bool(accepted)}
        if accepted:
            u, z, J = trial, zt, Jt
            frac = msa.relax_fraction
        else:
            if k == 1:
                row["min_residual"] = report.min_residual
                trace.append(row)
                status = "stalled"
                log.info("MSA stalled at iteration %d: single-cell update increases the cost", it + 1)
                break
            frac /= 2
        row.setdefault("min_residual", float("nan"))
        trace.append(row)
        if accepted:
            psi = solve_adjoint(spec, u, z, opts)
            report = condition_scan(spec, u, z, psi, msa.tol, opts)
            row["min_residual"] = report.min_residual
    return MSAResult(u, report, trace, status)


# ---------------------------------------------------------------------------
# enumeration oracles

def enumerate_optimum(spec: ProblemSpec, opts: SolverOptions = DEFAULT_OPTIONS, limit: int = 1 << 16):
    """Brute force over every label assignment (tiny grids only)."""
    g, L = spec.grid, len(spec.controls)
    n_cells = g.nt * g.nx
    if L ** n_cells > limit:
        raise ValueError(f"{L}^{n_cells} assignments exceed the enumeration limit {limit}")
    best, best_u = np.inf, None
    base = spec.constant_control(0)
    for labels in itertools.product(range(L), repeat=n_cells):
        u = base.replace(np.array(labels).reshape(g.nt, g.nx))
        J = evaluate_cost(spec, u, solve_state(spec, u, opts))
        if J < best:
            best, best_u = J, u
    return best_u, best


def separable_optimum(spec: ProblemSpec, opts: SolverOptions = DEFAULT_OPTIONS, check: bool = True):
    """Exact optimum when the cost is affine in the per-cell label indicators.

    This holds when ``A`` does not depend on the control, ``f`` is affine in ``z``
    with control-independent slope, and ``f0`` is affine in ``z`` with
    control-independent slope.  Then ``J(u) = J(u0) + sum_cells dJ_cell(label)``,
    so minimizing each cell separately is the same as enumerating every
    assignment.  With ``check`` the additivity is verified on a random assignment.
    """
    g, L = spec.grid, len(spec.controls)
    base = spec.constant_control(0)
    J0 = evaluate_cost(spec, base, solve_state(spec, base, opts))
    dJ = np.zeros((L, g.nt, g.nx))
    for lab in range(1, L):
        for s in range(g.nt):
            for j in range(g.nx):
                choice = base.choice.copy()
                choice[s, j] = lab
                u = base.replace(choice)
                dJ[lab, s, j] = evaluate_cost(spec, u, solve_state(spec, u, opts)) - J0
    best = np.argmin(dJ, axis=0)
    u_best = base.replace(best)
    J_pred = J0 + float(np.take_along_axis(dJ, best[None], 0).sum())
    J_best = evaluate_cost(spec, u_best, solve_state(spec, u_best, opts))
    if check:
        rng = np.random.default_rng(spec.seed)
        rnd = rng.integers(0, L, size=(g.nt, g.nx))
        pred = J0 + float(np.take_along_axis(dJ, rnd[None], 0).sum())
        u = base.replace(rnd)
        actual = evaluate_cost(spec, u, solve_state(spec, u, opts))
        scale = max(1.0, abs(actual))
        if abs(pred - actual) > 1e-9 * scale or abs(J_pred - J_best) > 1e-9 * max(1.0, abs(J_best)):
            raise ValueError("cost is not additive over cells; separable enumeration does not apply")
    return u_best, J_best
