"""Implicit-Euler solvers for the state, adjoint and variational equations (1D).

Discretization
--------------
Step ``s`` (``s = 0..nt-1``) advances ``z[s] -> z[s+1]`` using the controls of
slab ``s`` and coefficients evaluated at ``t_{s+1}``::

    (z[s+1] - z[s]) / dt - D_s z[s+1] = F_s(z[s+1])

``D_s`` is the three-point divergence operator whose face ``j`` (between nodes
``j`` and ``j+1``) carries the face-averaged coefficient of cell ``(s, j)``.
The reaction ``F_s`` at node ``j`` is the mean of ``f`` over the controls of
the two adjacent cells (lumped mass).  The cost is the trapezoidal rule on
every space-time cell with that cell's control.

The adjoint field is the exact transpose of the linearized stepper:
``psi[s]`` is the multiplier of step ``s`` and ``psi[nt] = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lapack

from .core import ControlField, ProblemSpec, ScalarField, SpaceTimeGrid, _same_grid
from .expr import EvaluationError

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class PicardError(SolverError):
    pass


class BlowUpError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    face_average: str = "harmonic"
    fd_step_z: float = 1e-6

    def __post_init__(self):
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")
        if not self.fd_step_z > 0:
            raise ValueError("fd_step_z must be positive")
        if self.face_average not in ("harmonic", "arithmetic"):
            raise ValueError("face_average must be 'harmonic' or 'arithmetic'")


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class SolveInfo:
    sup_norm: float
    picard_iterations: np.ndarray
    max_residual: float


@dataclass(frozen=True, eq=False)
class LinearParabolicData:
    """Coefficients of ``dZ/dt - div(a grad Z) - c Z = g`` in step indexing.

    ``diffusion`` is ``(nt, nx)`` on faces; ``reaction`` and ``source`` are
    ``(nt, nx+1)`` nodal values for step ``s`` (time ``t_{s+1}``).
    """

    grid: SpaceTimeGrid
    diffusion: np.ndarray
    reaction: np.ndarray
    source: np.ndarray
    initial: Optional[np.ndarray] = None

    def __post_init__(self):
        g = self.grid
        if self.diffusion.shape != (g.nt, g.nx):
            raise ValueError("diffusion must have shape (nt, nx)")
        if self.reaction.shape != (g.nt, g.nx + 1) or self.source.shape != (g.nt, g.nx + 1):
            raise ValueError("reaction/source must have shape (nt, nx+1)")
        if not np.all(self.diffusion > 0):
            raise ValueError("diffusion must be positive")


# ---------------------------------------------------------------------------
# tridiagonal algebra

def thomas(lower, diag, upper, rhs) -> np.ndarray:
    """Thomas recurrence; ``lower``/``upper`` have length ``len(diag) - 1``."""
    n = len(diag)
    c = np.empty(n - 1)
    d = np.empty(n)
    if n > 1:
        c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i - 1] * c[i - 1]
        if i < n - 1:
            c[i] = upper[i] / m
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m
    out = np.empty(n)
    out[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


class _Tridiagonal:
    """LU-factored tridiagonal matrix (LAPACK gttrf/gttrs)."""

    def __init__(self, lower, diag, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.diag = np.asarray(diag, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if len(self.diag) < 3:
            # the LAPACK wrapper needs at least three unknowns
            self._lu = None
            self._dense = np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)
            if np.linalg.cond(self._dense) > 1e15:
                raise SolverError("singular tridiagonal system")
            return
        self._lu = lapack.dgttrf(self.lower, self.diag, self.upper)
        if self._lu[-1] != 0:
            raise SolverError("singular tridiagonal system")

    def solve(self, rhs) -> np.ndarray:
        if self._lu is None:
            return np.linalg.solve(self._dense, np.asarray(rhs, dtype=float))
        dl, d, du, du2, ipiv, _ = self._lu
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, np.asarray(rhs, dtype=float))
        if info != 0:
            raise SolverError("tridiagonal solve failed")
        return x

    def matvec(self, v) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.upper * v[1:]
        out[1:] += self.lower * v[:-1]
        return out


def _step_matrix(a_faces, c_nodes, dt, h) -> _Tridiagonal:
    """``I/dt - D - diag(c)`` on interior nodes."""
    inv_h2 = 1.0 / (h * h)
    diag = 1.0 / dt + (a_faces[:-1] + a_faces[1:]) * inv_h2 - c_nodes[1:-1]
    off = -a_faces[1:-1] * inv_h2
    return _Tridiagonal(off, diag, off)


def divergence(a_faces, z_row, h) -> np.ndarray:
    """``div(a grad z)`` at all nodes of a row (zero at the boundary nodes)."""
    flux = a_faces * np.diff(z_row) / h
    out = np.zeros_like(z_row)
    out[1:-1] = (flux[1:] - flux[:-1]) / h
    return out


# ---------------------------------------------------------------------------
# control-dependent coefficient assembly

def face_average(left, right, kind: str = "harmonic"):
    if kind == "harmonic":
        return 2.0 * left * right / (left + right)
    return 0.5 * (left + right)


def _require_1d(spec: ProblemSpec):
    if spec.n != 1:
        raise ValueError("time-stepping solvers are one-dimensional in space (n = 1)")


def label_face_diffusion(spec: ProblemSpec, opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Face coefficients per label, shape ``(L, nt, nx)`` at times ``t_{s+1}``."""
    _require_1d(spec)
    g = spec.grid
    T, X = np.meshgrid(g.t[1:], g.x, indexing="ij")
    out = np.empty((len(spec.controls), g.nt, g.nx))
    for i, c in enumerate(spec.controls):
        a = c.a(T, X)
        if np.any(a <= 0):
            raise SolverError(f"control {c.name!r}: nonpositive diffusion")
        out[i] = face_average(a[:, :-1], a[:, 1:], opts.face_average)
    return out


def select_faces(label_faces: np.ndarray, u: ControlField) -> np.ndarray:
    s, j = np.indices(u.choice.shape)
    return label_faces[u.choice, s, j]


def node_label_weights(u: ControlField) -> np.ndarray:
    """``(L, nt, nx+1)``: half the number of slab-``s`` cells beside node ``j``
    that carry label ``l`` (lumped-mass weights for the reaction term)."""
    L = u.n_labels
    nt, nx = u.choice.shape
    W = np.zeros((L, nt, nx + 1))
    for lab in range(L):
        m = (u.choice == lab).astype(float)
        W[lab, :, :-1] += 0.5 * m
        W[lab, :, 1:] += 0.5 * m
    W[:, :, 0] = W[:, :, -1] = 0.0
    return W


def corner_label_weights(u: ControlField) -> np.ndarray:
    """``(L, nt+1, nx+1)``: quarter count of adjacent cells with label ``l``
    (trapezoidal rule applied cell by cell)."""
    L = u.n_labels
    nt, nx = u.choice.shape
    W = np.zeros((L, nt + 1, nx + 1))
    for lab in range(L):
        m = 0.25 * (u.choice == lab)
        W[lab, :-1, :-1] += m
        W[lab, :-1, 1:] += m
        W[lab, 1:, :-1] += m
        W[lab, 1:, 1:] += m
    return W


def mix_weights(weights, mus) -> np.ndarray:
    out = np.zeros_like(weights[0])
    for w, mu in zip(weights, mus):
        out += mu * w
    return out


def _label_values(spec, attr, T, X, Z) -> np.ndarray:
    return np.stack([getattr(c, attr)(t=T, x=X, z=Z) for c in spec.controls])


def _label_dz(spec, attr, T, X, Z, step) -> np.ndarray:
    """Central difference in ``z`` of ``f`` or ``f0`` for every label."""
    return (_label_values(spec, attr, T, X, Z + step) - _label_values(spec, attr, T, X, Z - step)) / (2 * step)


# ---------------------------------------------------------------------------
# steppers

def _march_semilinear(spec: ProblemSpec, diffusion: np.ndarray, weights: np.ndarray,
                      opts: SolverOptions):
    """Picard-iterated implicit Euler with reaction ``sum_l W_l f_l``."""
    g = spec.grid
    dt, h, x = g.dt, g.h, g.x
    z = np.zeros((g.nt + 1, g.nx + 1))
    z[0] = spec.initial_values()
    zeros = np.zeros(g.nx + 1)
    iters = np.zeros(g.nt, dtype=int)
    worst = 0.0
    active = [lab for lab in range(weights.shape[0]) if np.any(weights[lab])]

    def reaction(s, row):
        t = g.t[s + 1]
        out = np.zeros(g.nx + 1)
        try:
            for lab in active:
                out += weights[lab, s] * spec.controls[lab].f(t=t, x=x, z=row)
        except EvaluationError as exc:
            raise BlowUpError(f"reaction evaluation failed at step {s + 1}: {exc}") from exc
        out[0] = out[-1] = 0.0
        return out

    for s in range(g.nt):
        mat = _step_matrix(diffusion[s], zeros, dt, h)
        base = z[s, 1:-1] / dt
        row = z[s].copy()
        F = reaction(s, row)
        for it in range(1, opts.picard_max_iter + 1):
            new = np.zeros(g.nx + 1)
            new[1:-1] = mat.solve(base + F[1:-1])
            if not np.all(np.isfinite(new)):
                raise BlowUpError(f"non-finite state at step {s + 1}")
            F = reaction(s, new)
            resid = dt * np.max(np.abs(mat.matvec(new[1:-1]) - base - F[1:-1]), initial=0.0)
            scale = max(1.0, np.max(np.abs(new)))
            row = new
            if resid <= opts.picard_tol * scale:
                break
        else:
            raise PicardError(f"Picard iteration did not converge at step {s + 1} "
                              f"(residual {resid:.3e}); reduce dt or check the growth condition")
        z[s + 1] = row
        iters[s] = it
        worst = max(worst, resid)
    info = SolveInfo(float(np.max(np.abs(z))), iters, worst)
    return z, info


def _march_linear(grid, diffusion, reaction, source, initial=None) -> np.ndarray:
    dt, h = grid.dt, grid.h
    Z = np.zeros((grid.nt + 1, grid.nx + 1))
    if initial is not None:
        Z[0] = initial
        Z[0, 0] = Z[0, -1] = 0.0
    for s in range(grid.nt):
        mat = _step_matrix(diffusion[s], reaction[s], dt, h)
        Z[s + 1, 1:-1] = mat.solve(Z[s, 1:-1] / dt + source[s, 1:-1])
    if not np.all(np.isfinite(Z)):
        raise BlowUpError("non-finite value in linear solve")
    return Z


def _march_adjoint(grid, diffusion, reaction, load) -> np.ndarray:
    """Backward sweep of ``B_s psi[s] = psi[s+1]/dt + load[s]``, ``psi[nt] = 0``."""
    dt, h = grid.dt, grid.h
    P = np.zeros((grid.nt + 1, grid.nx + 1))
    for s in range(grid.nt - 1, -1, -1):
        mat = _step_matrix(diffusion[s], reaction[s], dt, h)
        P[s, 1:-1] = mat.solve(P[s + 1, 1:-1] / dt + load[s, 1:-1])
    if not np.all(np.isfinite(P)):
        raise BlowUpError("non-finite value in adjoint solve")
    return P


def solve_linear(data: LinearParabolicData) -> ScalarField:
    return ScalarField(data.grid, _march_linear(data.grid, data.diffusion, data.reaction,
                                                data.source, data.initial))


def forward_operator(grid, diffusion, reaction, Z) -> np.ndarray:
    """Apply the discrete linearized operator to ``Z`` (with ``Z[0]`` as given)."""
    out = np.zeros((grid.nt, grid.nx + 1))
    for s in range(grid.nt):
        out[s] = (Z[s + 1] - Z[s]) / grid.dt - divergence(diffusion[s], Z[s + 1], grid.h) \
            - reaction[s] * Z[s + 1]
        out[s, 0] = out[s, -1] = 0.0
    return out


def adjoint_operator(grid, diffusion, reaction, P) -> np.ndarray:
    """Transpose of :func:`forward_operator` for ``Z[0] = 0`` and ``P[nt] = 0``.

    Result row ``s`` pairs with ``Z[s+1]``.
    """
    out = np.zeros((grid.nt, grid.nx + 1))
    for s in range(grid.nt):
        nxt = P[s + 1] if s + 1 < grid.nt else 0.0
        out[s] = (P[s] - nxt) / grid.dt - divergence(diffusion[s], P[s], grid.h) - reaction[s] * P[s]
        out[s, 0] = out[s, -1] = 0.0
    return out


def step_pairing(grid, a, b) -> float:
    """``sum_s dt h sum_interior a[s] b[s]`` in step indexing."""
    return float(grid.dt * grid.h * np.sum(a[: grid.nt, 1:-1] * b[: grid.nt, 1:-1]))


# ---------------------------------------------------------------------------
# public solvers

def reaction_derivative(spec, weights, z, opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """``(nt, nx+1)`` lumped ``f_z`` at ``z[s+1]`` for every step."""
    g = spec.grid
    T, X = np.meshgrid(g.t[1:], g.x, indexing="ij")
    fz = _label_dz(spec, "f", T, X, z[1:], opts.fd_step_z)
    c = np.einsum("lsj,lsj->sj", weights, fz)
    c[:, 0] = c[:, -1] = 0.0
    return c


def reaction_values(spec, weights, z) -> np.ndarray:
    g = spec.grid
    T, X = np.meshgrid(g.t[1:], g.x, indexing="ij")
    F = np.einsum("lsj,lsj->sj", weights, _label_values(spec, "f", T, X, z[1:]))
    F[:, 0] = F[:, -1] = 0.0
    return F


def cost_gradient(spec, u: ControlField, z, opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """``dJ/dz`` at every node, shape ``(nt+1, nx+1)``."""
    g = spec.grid
    T, X = g.mesh()
    f0z = _label_dz(spec, "f0", T, X, z, opts.fd_step_z)
    G = g.dt * g.h * np.einsum("lkj,lkj->kj", corner_label_weights(u), f0z)
    G[:, 0] = G[:, -1] = 0.0
    return G


def solve_state(spec: ProblemSpec, u: ControlField, opts: SolverOptions = DEFAULT_OPTIONS,
                return_info: bool = False):
    """State for the control ``u`` with ``z(0) = z0`` and zero Dirichlet data."""
    if u.grid != spec.grid:
        raise ValueError("control field grid does not match the problem grid")
    diffusion = select_faces(label_face_diffusion(spec, opts), u)
    z, info = _march_semilinear(spec, diffusion, node_label_weights(u), opts)
    log.debug("state sup-norm %.6g, max Picard iterations %d", info.sup_norm, info.picard_iterations.max())
    field = ScalarField(spec.grid, z)
    return (field, info) if return_info else field


def solve_homogenized_state(spec: ProblemSpec, ubar: ControlField, u2: ControlField,
                            u3: ControlField, u4: ControlField, delta: float,
                            Q: Optional[np.ndarray] = None, regime: int = 1,
                            opts: SolverOptions = DEFAULT_OPTIONS, return_info: bool = False):
    """Limit state of the spike family: leading coefficient ``Q`` (faces) and
    the ``(1-d)^2, d(1-d), d(1-d), d^2`` mixture of the four reactions."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if Q is None:
        from .homogenization import homogenized_face_field
        Q = homogenized_face_field(spec, ubar, u2, u3, u4, delta, regime=regime, opts=opts)
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (spec.grid.nt, spec.grid.nx):
        raise ValueError("Q must have shape (nt, nx)")
    mus = (1 - delta) ** 2, delta * (1 - delta), delta * (1 - delta), delta ** 2
    W = mix_weights([node_label_weights(v) for v in (ubar, u2, u3, u4)], mus)
    z, info = _march_semilinear(spec, Q, W, opts)
    field = ScalarField(spec.grid, z)
    return (field, info) if return_info else field


def linearization(spec: ProblemSpec, ubar: ControlField, zbar: ScalarField,
                  opts: SolverOptions = DEFAULT_OPTIONS):
    """Face diffusion and lumped ``f_z`` of the state operator at ``(zbar, ubar)``."""
    _same_grid(ubar, zbar)
    diffusion = select_faces(label_face_diffusion(spec, opts), ubar)
    reaction = reaction_derivative(spec, node_label_weights(ubar), zbar.values, opts)
    return diffusion, reaction


def solve_adjoint(spec: ProblemSpec, u: ControlField, z: ScalarField,
                  opts: SolverOptions = DEFAULT_OPTIONS) -> ScalarField:
    g = spec.grid
    diffusion, reaction = linearization(spec, u, z, opts)
    G = cost_gradient(spec, u, z.values, opts)
    load = -G[1:] / (g.dt * g.h)
    return ScalarField(g, _march_adjoint(g, diffusion, reaction, load))


def theta_faces(label_faces, ubar: ControlField, u2: ControlField, u3: ControlField) -> np.ndarray:
    """Scalar Theta on each face: ``a2 + a3 - 2a - (a3 - a)^2 / a3``."""
    a = select_faces(label_faces, ubar)
    a2 = select_faces(label_faces, u2)
    a3 = select_faces(label_faces, u3)
    return a2 + a3 - 2 * a - (a3 - a) ** 2 / a3


def variational_source(spec, ubar, u2, u3, zbar: ScalarField,
                       opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """``div(Theta grad zbar) + f(u2) + f(u3) - 2 f(ubar)`` in step indexing."""
    g = spec.grid
    th = theta_faces(label_face_diffusion(spec, opts), ubar, u2, u3)
    z = zbar.values
    S = np.stack([divergence(th[s], z[s + 1], g.h) for s in range(g.nt)])
    Wd = node_label_weights(u2) + node_label_weights(u3) - 2 * node_label_weights(ubar)
    S += reaction_values(spec, Wd, z)
    S[:, 0] = S[:, -1] = 0.0
    return S


def solve_variational(spec: ProblemSpec, ubar: ControlField, u2: ControlField, u3: ControlField,
                      zbar: ScalarField, opts: SolverOptions = DEFAULT_OPTIONS) -> ScalarField:
    """Linearized state equation with ``Z(0) = 0``."""
    diffusion, reaction = linearization(spec, ubar, zbar, opts)
    S = variational_source(spec, ubar, u2, u3, zbar, opts)
    return ScalarField(spec.grid, _march_linear(spec.grid, diffusion, reaction, S))
