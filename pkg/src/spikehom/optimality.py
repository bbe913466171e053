"""Hamiltonian algebra, the augmented maximum condition, cost and first variation.

Pointwise quantities work for any algebra dimension ``n``.  Grid functions
(cost, first variation, duality, condition scan) use the 1D discretization of
:mod:`spikehom.pde`; the cell Hamiltonian of slab ``s``, cell ``j`` pairs
``psi[s]`` with ``zbar[s+1]`` so that the discrete duality identity is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .core import ControlField, ProblemSpec, ScalarField, _same_grid
from .pde import (DEFAULT_OPTIONS, SolverOptions, _label_values, corner_label_weights,
                  cost_gradient, label_face_diffusion, select_faces)

EIG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# pointwise algebra

@dataclass(frozen=True)
class HamiltonianArgs:
    t: float
    x: float
    z: float
    psi: float
    xi: np.ndarray
    eta: np.ndarray
    v: object  # label name or index

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if xi.shape != eta.shape or xi.ndim != 1:
            raise ValueError("xi and eta must be vectors of equal length")
        if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(eta))):
            raise ValueError("xi and eta must be finite")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)


def hamiltonian(args: HamiltonianArgs, spec: ProblemSpec) -> float:
    """``psi f - f0 - <A xi, eta>`` for the control ``args.v``."""
    idx = spec.controls.index(args.v) if isinstance(args.v, str) else int(args.v)
    c = spec.controls[idx]
    if args.xi.size != c.n:
        raise ValueError(f"gradient dimension {args.xi.size} != algebra dimension {c.n}")
    A = c.A_matrix(args.t, args.x)
    f = float(c.f(t=args.t, x=args.x, z=args.z))
    f0 = float(c.f0(t=args.t, x=args.x, z=args.z))
    return args.psi * f - f0 - float(args.xi @ A @ args.eta)


def rank_one_sup(xi, eta) -> float:
    """``sup_{|mu|=1} (xi.mu)(eta.mu)`` in positive-part form ``(|xi||eta| + xi.eta)/2``.

    For ``n = 1`` this is ``max(xi*eta, 0)``.
    """
    xi, eta = np.atleast_1d(np.asarray(xi, float)), np.atleast_1d(np.asarray(eta, float))
    return 0.5 * (np.linalg.norm(xi) * np.linalg.norm(eta) + float(xi @ eta))


def rank_one_sup_scalar_raw(xi: float, eta: float) -> float:
    """Unrestricted supremum for ``n = 1``: the only unit vectors are ``+-1``."""
    return float(xi) * float(eta)


def rank_one_sup_oracle(xi, eta, grid: int = 100_000) -> float:
    """Maximize ``max(xi.mu mu.eta, 0)`` over ``grid`` unit directions.

    Components of ``mu`` orthogonal to ``span{xi, eta}`` only shrink the
    product, so the search runs over a uniform half circle in that plane.
    """
    xi, eta = np.atleast_1d(np.asarray(xi, float)), np.atleast_1d(np.asarray(eta, float))
    n = xi.size
    if n == 1:
        return max(float(xi[0] * eta[0]), 0.0)
    nx_, ne = np.linalg.norm(xi), np.linalg.norm(eta)
    if nx_ == 0 or ne == 0:
        return 0.0
    e1 = xi / nx_
    w = eta - (eta @ e1) * e1
    if np.linalg.norm(w) <= 1e-14 * ne:
        # eta parallel to xi: any direction orthogonal to e1 completes the plane
        k = int(np.argmin(np.abs(e1)))
        w = np.eye(n)[k] - e1[k] * e1
    e2 = w / np.linalg.norm(w)
    a1, a2 = xi @ e1, xi @ e2
    b1, b2 = eta @ e1, eta @ e2
    cc, cs, ss = _half_circle(grid)
    vals = (a1 * b1) * cc + (a1 * b2 + a2 * b1) * cs + (a2 * b2) * ss
    return max(float(vals.max()), 0.0)


@lru_cache(maxsize=4)
def _half_circle(grid: int):
    """``cos^2``, ``cos sin`` and ``sin^2`` on ``grid`` uniform angles in ``[0, pi)``."""
    th = np.linspace(0.0, np.pi, grid, endpoint=False)
    c, s = np.cos(th), np.sin(th)
    return c * c, c * s, s * s


@dataclass(frozen=True)
class LaminateDirection:
    """Unit lamination direction ``e`` or trace-one PSD matrix ``P``."""

    e: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.P is not None:
            P = np.asarray(self.P, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1]:
                raise ValueError("P must be square")
            if not np.allclose(P, P.T, atol=1e-12, rtol=0):
                raise ValueError("P must be symmetric")
            if np.linalg.eigvalsh(P).min() < -1e-12 or abs(np.trace(P) - 1) > 1e-12:
                raise ValueError("P must be positive semidefinite with trace 1")
            object.__setattr__(self, "P", P)
        if self.e is not None:
            e = np.atleast_1d(np.asarray(self.e, dtype=float))
            if abs(np.linalg.norm(e) - 1) > 1e-12:
                raise ValueError("e must be a unit vector")
            object.__setattr__(self, "e", e)

    def vector(self, n: int) -> np.ndarray:
        return self.e if self.e is not None else np.eye(n)[0]


def _spd_inv_sqrt(A: np.ndarray, lam_floor: float = 0.0) -> np.ndarray:
    w, V = np.linalg.eigh(A)
    if w.min() <= 0:
        raise ValueError("matrix is not positive definite")
    w = np.maximum(w, max(lam_floor, w.max()) * EIG_FLOOR)
    return (V / np.sqrt(w)) @ V.T


def theta(Abar, A2, A3, direction: LaminateDirection = LaminateDirection()) -> np.ndarray:
    """``A2 + A3 - 2 Abar`` minus the laminate correction through ``direction``."""
    Abar, A2, A3 = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (Abar, A2, A3))
    n = Abar.shape[0]
    D = A3 - Abar
    base = A2 + A3 - 2 * Abar
    if direction.P is not None:
        R = _spd_inv_sqrt(A3)
        out = base - D @ R @ direction.P @ R @ D
    else:
        e = direction.vector(n)
        den = float(e @ A3 @ e)
        if den <= 0:
            raise ValueError("A3 is not positive definite along e")
        out = base - np.outer(D @ e, e @ D) / den
    return 0.5 * (out + out.T)


def phi_correction(Adiff, B, xi, eta, nu) -> float:
    """``(eta.A nu)(nu.A xi) / (nu.B nu)``."""
    Adiff, B = np.atleast_2d(np.asarray(Adiff, float)), np.atleast_2d(np.asarray(B, float))
    xi, eta, nu = (np.atleast_1d(np.asarray(v, float)) for v in (xi, eta, nu))
    den = float(nu @ B @ nu)
    if not den > 0:
        raise ValueError("degenerate denominator nu.B nu")
    return float((eta @ Adiff @ nu) * (nu @ Adiff @ xi) / den)


def condition_rhs(Abar, Av, xi, eta, lam: float = 0.0) -> float:
    """Nonnegative correction ``rank_one_sup(R(Abar-Av)xi, R(Abar-Av)eta)``, ``R = Av^{-1/2}``."""
    Abar, Av = np.atleast_2d(np.asarray(Abar, float)), np.atleast_2d(np.asarray(Av, float))
    R = _spd_inv_sqrt(Av, lam)
    D = Abar - Av
    xi, eta = np.atleast_1d(np.asarray(xi, float)), np.atleast_1d(np.asarray(eta, float))
    return max(rank_one_sup(R @ D @ xi, R @ D @ eta), 0.0)


def condition_rhs_scalar(abar, av, xi, eta):
    """``n = 1`` form ``(abar - av)^2 / av * max(xi*eta, 0)``, vectorized."""
    return (abar - av) ** 2 / av * np.maximum(xi * eta, 0.0)


# ---------------------------------------------------------------------------
# grid functionals

def evaluate_cost(spec: ProblemSpec, u: ControlField, z: ScalarField) -> float:
    """Cell-by-cell trapezoidal integral of ``f0(t, x, z, u)``."""
    _same_grid(u, z)
    g = spec.grid
    T, X = g.mesh()
    f0 = _label_values(spec, "f0", T, X, z.values)
    return float(g.dt * g.h * np.einsum("lkj,lkj->", corner_label_weights(u), f0))


def cost_difference(spec, weights_delta, z) -> float:
    g = spec.grid
    T, X = g.mesh()
    f0 = _label_values(spec, "f0", T, X, z)
    return float(g.dt * g.h * np.einsum("lkj,lkj->", weights_delta, f0))


def first_variation(spec: ProblemSpec, ubar: ControlField, zbar: ScalarField, Z: ScalarField,
                    u2: ControlField, u3: ControlField, opts: SolverOptions = DEFAULT_OPTIONS) -> float:
    """``int f0_z(zbar, ubar) Z + f0(zbar, u2) + f0(zbar, u3) - 2 f0(zbar, ubar)``."""
    _same_grid(zbar, Z)
    G = cost_gradient(spec, ubar, zbar.values, opts)
    dW = corner_label_weights(u2) + corner_label_weights(u3) - 2 * corner_label_weights(ubar)
    return float(np.sum(G * Z.values)) + cost_difference(spec, dW, zbar.values)


def cell_gradients(grid, zbar: ScalarField, psi: ScalarField):
    """One-sided cell gradients of ``zbar[s+1]`` and ``psi[s]`` (shape ``(nt, nx)``)."""
    dz = np.diff(zbar.values[1:], axis=1) / grid.h
    dpsi = np.diff(psi.values[:-1], axis=1) / grid.h
    return dz, dpsi


def cell_hamiltonians(spec: ProblemSpec, zbar: ScalarField, psi: ScalarField,
                      opts: SolverOptions = DEFAULT_OPTIONS, faces=None) -> np.ndarray:
    """Discrete Hamiltonian density of every label on every cell, ``(L, nt, nx)``."""
    g = spec.grid
    z = zbar.values
    T1, X1 = np.meshgrid(g.t[1:], g.x, indexing="ij")
    f = _label_values(spec, "f", T1, X1, z[1:])  # (L, nt, nx+1)
    pf = psi.values[:-1][None] * f
    Hf = 0.5 * (pf[:, :, :-1] + pf[:, :, 1:])
    T, X = g.mesh()
    f0 = _label_values(spec, "f0", T, X, z)  # (L, nt+1, nx+1)
    Hf0 = 0.25 * (f0[:, :-1, :-1] + f0[:, :-1, 1:] + f0[:, 1:, :-1] + f0[:, 1:, 1:])
    if faces is None:
        faces = label_face_diffusion(spec, opts)
    dz, dpsi = cell_gradients(g, zbar, psi)
    return Hf - Hf0 - faces * (dz * dpsi)[None]


def _pick(values, u: ControlField):
    s, j = np.indices(u.choice.shape)
    return values[u.choice, s, j]


def duality_gap(spec: ProblemSpec, ubar: ControlField, zbar: ScalarField, psi: ScalarField,
                Z: ScalarField, u2: ControlField, u3: ControlField,
                opts: SolverOptions = DEFAULT_OPTIONS, return_parts: bool = False):
    """Difference between the first variation via ``Z`` and its Hamiltonian form.

    The Hamiltonian form is ``sum dt h [2H(ubar) - H(u2) - H(u3) - Phi]`` with
    ``Phi`` the rank-one correction along the lamination direction.
    """
    g = spec.grid
    via_Z = first_variation(spec, ubar, zbar, Z, u2, u3, opts)
    faces = label_face_diffusion(spec, opts)
    H = cell_hamiltonians(spec, zbar, psi, opts, faces)
    dz, dpsi = cell_gradients(g, zbar, psi)
    abar, a3 = select_faces(faces, ubar), select_faces(faces, u3)
    phi = (a3 - abar) ** 2 / a3 * dz * dpsi
    via_H = float(g.dt * g.h * np.sum(2 * _pick(H, ubar) - _pick(H, u2) - _pick(H, u3) - phi))
    gap = abs(via_Z - via_H)
    return (gap, via_Z, via_H) if return_parts else gap


# ---------------------------------------------------------------------------
# condition scan

@dataclass
class ConditionReport:
    residual: np.ndarray  # (nt, nx), H(ubar) - max_v [H(v) + rhs(v)]
    maxcond_residual: np.ndarray  # (nt, nx), H(ubar) - max_v H(v)
    argmax: np.ndarray  # (nt, nx) label index attaining the augmented max
    tolerance: np.ndarray  # per-cell tolerance
    labels: list
    t_centers: np.ndarray
    x_centers: np.ndarray
    tol: float = 1e-6
    violation_limit: int = 1000

    @property
    def min_residual(self) -> float:
        return float(self.residual.min())

    @property
    def min_maxcond(self) -> float:
        return float(self.maxcond_residual.min())

    @property
    def violating(self) -> np.ndarray:
        return self.residual < -self.tolerance

    @property
    def satisfied(self) -> bool:
        return not bool(np.any(self.violating))

    def violations(self) -> list:
        s, j = np.nonzero(self.violating)
        order = np.argsort(self.residual[s, j], kind="stable")[: self.violation_limit]
        return [{"t": float(self.t_centers[s[i]]), "x": float(self.x_centers[j[i]]),
                 "argmax_label": self.labels[int(self.argmax[s[i], j[i]])],
                 "residual": float(self.residual[s[i], j[i]])} for i in order]

    def histogram(self, bins: int = 10) -> list:
        counts, edges = np.histogram(self.residual, bins=bins)
        return [{"lo": float(edges[i]), "hi": float(edges[i + 1]), "count": int(counts[i])}
                for i in range(bins)]

    def to_dict(self) -> dict:
        return {"min_residual": self.min_residual, "min_maxcond_residual": self.min_maxcond,
                "tol": self.tol, "satisfied": self.satisfied,
                "n_violations": int(self.violating.sum()), "violations": self.violations(),
                "histogram": self.histogram()}


def condition_scan(spec: ProblemSpec, ubar: ControlField, zbar: ScalarField, psi: ScalarField,
                   tol: float = 1e-6, opts: SolverOptions = DEFAULT_OPTIONS,
                   return_values: bool = False):
    """Per-cell residual of the augmented maximum condition.

    A cell violates the condition when its residual is below
    ``-tol * max(1, |H(ubar)|)``.
    """
    if spec.n != 1:
        raise ValueError("grid scan is one-dimensional (n = 1)")
    g = spec.grid
    faces = label_face_diffusion(spec, opts)
    H = cell_hamiltonians(spec, zbar, psi, opts, faces)
    dz, dpsi = cell_gradients(g, zbar, psi)
    abar = select_faces(faces, ubar)
    rhs = condition_rhs_scalar(abar[None], faces, dz[None], dpsi[None])
    Hbar = _pick(H, ubar)
    aug = H + rhs
    argmax = np.argmax(aug, axis=0)
    residual = Hbar - aug.max(axis=0)
    report = ConditionReport(residual, Hbar - H.max(axis=0), argmax,
                             tol * np.maximum(1.0, np.abs(Hbar)), spec.controls.labels,
                             g.t_centers, g.x_centers, tol)
    return (report, H, rhs) if return_values else report
