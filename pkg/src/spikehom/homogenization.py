"""Periodic cell problems on the four-cell checkerboard and homogenized coefficients.

The unit cell ``[0,1)^2`` in ``(s, y)`` is split at ``delta`` in both
directions.  Region numbering::

    m = 1 : s >= delta, y >= delta
    m = 2 : s <  delta, y >= delta
    m = 3 : s >= delta, y <  delta
    m = 4 : s <  delta, y <  delta

A fractional part equal to zero belongs to the lower sub-interval ``[0, delta)``.
Regime ``k = 1`` is the elliptic corrector (frozen ``s``), ``k = 2`` the
time-periodic parabolic corrector and ``k = 3`` the corrector of the
``s``-averaged coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack

def checkerboard_weak_limits(delta: float) -> tuple:
    """Weak limits ``(mu_1, .., mu_4)`` of the four region indicators."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return ((1 - delta) ** 2, delta * (1 - delta), delta * (1 - delta), delta ** 2)


# (s-lower, y-lower) -> region index 0..3
_REGION = np.array([[0, 2], [1, 3]])  # [s_low][y_low]


def frac(a):
    return a - np.floor(a)


def checkerboard_region(s, y, delta) -> np.ndarray:
    """Region index ``0..3`` (for ``m = 1..4``) of the point ``(s, y)``."""
    s_low = (frac(np.asarray(s, dtype=float)) < delta).astype(int)
    y_low = (frac(np.asarray(y, dtype=float)) < delta).astype(int)
    return _REGION[s_low, y_low]


def oscillating_coefficient(A4: Sequence, delta: float, eps: float, r: float, t, x):
    """Value of the four-cell coefficient at ``(t/eps^r, x/eps)``.

    ``A4`` holds the four values (scalars or matrices) or callables of
    ``(t, x)`` in region order.
    """
    if eps <= 0 or r <= 0:
        raise ValueError("eps and r must be positive")
    m = int(checkerboard_region(t / eps ** r, x / eps, delta))
    v = A4[m]
    return v(t, x) if callable(v) else v


class CertificationError(AssertionError):
    pass


class CellProblemError(RuntimeError):
    pass


@dataclass(frozen=True)
class CheckerboardSpec:
    a: tuple
    b: tuple
    c: tuple
    delta: float
    lam: float
    Lam: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 4:
                raise ValueError(f"{name} needs four values")
            object.__setattr__(self, name, v)
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.lam <= self.Lam:
            raise ValueError("need 0 < lambda <= Lambda")
        tol = 1e-12
        if any(not (self.lam - tol <= a <= self.Lam + tol) for a in self.a):
            raise ValueError("a_m must lie in [lambda, Lambda]")
        if any(abs(v) > self.Lam + tol for v in self.b + self.c):
            raise ValueError("|b_m| and |c_m| must not exceed Lambda")

    @classmethod
    def random(cls, rng: np.random.Generator, delta: float, lam: float = 0.5, Lam: float = 2.0):
        return cls(tuple(rng.uniform(lam, Lam, 4)), tuple(rng.uniform(-Lam, Lam, 4)),
                   tuple(rng.uniform(-Lam, Lam, 4)), delta, lam, Lam)

    def with_delta(self, delta: float) -> "CheckerboardSpec":
        return CheckerboardSpec(self.a, self.b, self.c, delta, self.lam, self.Lam)

    @property
    def target(self) -> float:
        """Limit of the functional as ``delta -> 0``."""
        a, b, c = self.a, self.b, self.c
        return -(b[2] - b[0]) * (c[2] - c[0]) / a[2]

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b), "c": list(self.c), "delta": self.delta,
                "lambda": self.lam, "Lambda": self.Lam}


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Corrector gradient ``d phi / dy`` on the unit cell.

    Closed-form regimes store the four region values in ``pieces``.  The
    numerical regime stores ``grad`` with shape ``(ns, ny)``: the mean
    y-gradient over y-cell ``i`` at the end of s-step ``m``.
    """

    regime: int
    delta: float
    pieces: Optional[tuple] = None
    grad: Optional[np.ndarray] = None
    ns: int = 0
    ny: int = 0
    periods: int = 0

    @property
    def exact(self) -> bool:
        return self.pieces is not None

    def sample(self, ns: int = 256, ny: int = 256) -> np.ndarray:
        """Values at the centers of an ``ns x ny`` grid."""
        if self.exact:
            s = (np.arange(ns) + 0.5) / ns
            y = (np.arange(ny) + 0.5) / ny
            S, Y = np.meshgrid(s, y, indexing="ij")
            return np.asarray(self.pieces)[checkerboard_region(S, Y, self.delta)]
        if (ns, ny) != self.grad.shape:
            raise ValueError("numerical CellSolution can only be sampled on its own grid")
        return self.grad.copy()

    def y_means(self) -> np.ndarray:
        """``int_0^1 d phi/dy dy`` for each s-row (zero by periodicity)."""
        d = self.delta
        if self.exact:
            p = self.pieces
            return np.array([d * p[2] + (1 - d) * p[0], d * p[3] + (1 - d) * p[1]])
        return self.grad.mean(axis=1)


def _region_areas(delta):
    return np.array(checkerboard_weak_limits(delta))


# ---------------------------------------------------------------------------
# closed forms

def _elliptic_pieces(a, b, delta):
    th1 = (b[2] - b[0]) / ((1 - delta) * a[2] + delta * a[0])
    th2 = (b[3] - b[1]) / ((1 - delta) * a[3] + delta * a[1])
    return (th1 * delta, th2 * delta, -th1 * (1 - delta), -th2 * (1 - delta))


def _averaged_pieces(a, b, delta):
    d = delta
    num = (1 - d) * (b[2] - b[0]) + d * (b[3] - b[1])
    den = d * (1 - d) * a[0] + d * d * a[1] + (1 - d) ** 2 * a[2] + d * (1 - d) * a[3]
    hi, lo = d * num / den, -(1 - d) * num / den
    return (hi, hi, lo, lo)


def cell_elliptic(spec: CheckerboardSpec) -> CellSolution:
    """Corrector of ``d/dy (b + a d phi/dy) = 0`` at each frozen ``s``."""
    return CellSolution(1, spec.delta, pieces=_elliptic_pieces(spec.a, spec.b, spec.delta))


def cell_averaged(spec: CheckerboardSpec) -> CellSolution:
    """Corrector of the problem with ``s``-averaged ``a`` and ``b``."""
    return CellSolution(3, spec.delta, pieces=_averaged_pieces(spec.a, spec.b, spec.delta))


# ---------------------------------------------------------------------------
# numerical cell problems

class _CyclicTridiagonal:
    """Periodic tridiagonal solver via Sherman-Morrison on a tridiagonal core."""

    def __init__(self, lower, diag, upper):
        # row i: lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] (indices mod n)
        n = len(diag)
        self.n = n
        alpha, beta = lower[0], upper[-1]  # A[0, n-1], A[n-1, 0]
        gamma = -diag[0]
        d = np.array(diag, dtype=float)
        d[0] -= gamma
        d[-1] -= alpha * beta / gamma
        self._lu = lapack.dgttrf(np.asarray(lower[1:], float), d, np.asarray(upper[:-1], float))
        self.gamma, self.alpha, self.beta = gamma, alpha, beta
        u = np.zeros(n)
        u[0], u[-1] = gamma, beta
        self._q = self._core(u)
        self._vq = self._q[0] + alpha / gamma * self._q[-1]

    def _core(self, rhs):
        dl, d, du, du2, ipiv, _ = self._lu
        x, _ = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
        return x

    def solve(self, rhs):
        y = self._core(rhs)
        vy = y[0] + self.alpha / self.gamma * y[-1]
        return y - (vy / (1.0 + self._vq)) * self._q


def _overlap_low(n: int, delta: float) -> np.ndarray:
    """Fraction of each of ``n`` equal sub-intervals of ``[0,1)`` lying in ``[0, delta)``."""
    edges = np.arange(n + 1) / n
    return np.clip((np.minimum(edges[1:], delta) - edges[:-1]) * n, 0.0, 1.0)


@dataclass(frozen=True)
class _SubcellLayout:
    """Exact subcell bookkeeping: ``ws`` (ns,), ``wy`` (ny,) lower fractions."""

    ws: np.ndarray
    wy: np.ndarray

    @staticmethod
    def build(ns, ny, delta):
        return _SubcellLayout(_overlap_low(ns, delta), _overlap_low(ny, delta))


def _row_coefficients(a, b, wy):
    """For s-lower (row 1) and s-upper (row 0): harmonic a and matching b per y-cell.

    Within a y-cell the flux ``b + a g`` is constant, which gives
    ``a_eff = 1 / sum(w/a)`` and ``b_eff = a_eff * sum(w b / a)``.
    """
    out_a, out_b = np.empty((2, len(wy))), np.empty((2, len(wy)))
    for s_low in (0, 1):
        m_hi, m_lo = _REGION[s_low, 0], _REGION[s_low, 1]
        inv = (1 - wy) / a[m_hi] + wy / a[m_lo]
        ah = 1.0 / inv
        out_a[s_low] = ah
        out_b[s_low] = ah * ((1 - wy) * b[m_hi] / a[m_hi] + wy * b[m_lo] / a[m_lo])
    return out_a, out_b


def _subcell_gradients(a, b, ah, bh, G, s_low):
    """Gradient on the upper/lower y-part of each cell given the mean gradient ``G``."""
    flux = ah[s_low] * G + bh[s_low]
    m_hi, m_lo = _REGION[s_low, 0], _REGION[s_low, 1]
    return (flux - b[m_hi]) / a[m_hi], (flux - b[m_lo]) / a[m_lo]


def _parabolic_grad(a, b, delta, ns, ny, tol=1e-10, max_periods=1000):
    lay = _SubcellLayout.build(ns, ny, delta)
    ah, bh = _row_coefficients(a, b, lay.wy)
    ds, hy = 1.0 / ns, 1.0 / ny
    cache = {}

    def step_data(w):
        key = round(float(w), 15)
        if key not in cache:
            A = (1 - w) * ah[0] + w * ah[1]  # coefficient of cell i (between node i and i+1)
            B = (1 - w) * bh[0] + w * bh[1]
            Am = np.roll(A, 1)  # cell i-1
            diag = 1.0 / ds + (A + Am) / hy ** 2
            lower = -Am / hy ** 2
            upper = -A / hy ** 2
            # d/dy of B at node i: (B_i - B_{i-1}) / hy
            src = (B - np.roll(B, 1)) / hy
            cache[key] = (_CyclicTridiagonal(lower, diag, upper), src)
        return cache[key]

    phi = np.zeros(ny)
    grad = np.empty((ns, ny))
    for period in range(1, max_periods + 1):
        start = phi.copy()
        for m in range(ns):
            solver, src = step_data(lay.ws[m])
            phi = solver.solve(phi / ds + src)
            grad[m] = (np.roll(phi, -1) - phi) / hy
        change = np.max(np.abs(phi - start))
        if not np.all(np.isfinite(phi)):
            break
        if change <= tol and period > 1:
            return grad, lay, ah, bh, period
    raise CellProblemError(f"time-periodic cell problem did not converge in {max_periods} periods")


def cell_parabolic(spec: CheckerboardSpec, grid=(256, 256), tol: float = 1e-10,
                   max_periods: int = 1000) -> CellSolution:
    """Time-periodic corrector of ``d_s phi - d_y(b + a d_y phi) = 0``.

    Implicit Euler in ``s`` over one period, repeated from ``phi = 0`` until the
    period map is stationary to ``tol`` in the sup norm.
    """
    ns, ny = grid
    if ns < 16 or ny < 16:
        raise ValueError("cell grid needs ns, ny >= 16")
    grad, _, _, _, periods = _parabolic_grad(spec.a, spec.b, spec.delta, ns, ny, tol, max_periods)
    return CellSolution(2, spec.delta, grad=grad, ns=ns, ny=ny, periods=periods)


def cell_elliptic_numeric(spec: CheckerboardSpec, ny: int = 256) -> CellSolution:
    """Generic periodic finite-volume solve of the frozen-``s`` problem.

    Independent of the closed form; used as its oracle.  Returns the mean
    gradient per y-cell on a ``(2, ny)`` grid (rows: ``s >= delta``, ``s < delta``).
    """
    wy = _overlap_low(ny, spec.delta)
    ah, bh = _row_coefficients(spec.a, spec.b, wy)
    hy = 1.0 / ny
    grad = np.empty((2, ny))
    for row in (0, 1):
        A, B = ah[row], bh[row]
        L = np.zeros((ny, ny))
        idx = np.arange(ny)
        L[idx, idx] += A + np.roll(A, 1)
        L[idx, (idx + 1) % ny] -= A
        L[idx, (idx - 1) % ny] -= np.roll(A, 1)
        L /= hy ** 2
        rhs = (B - np.roll(B, 1)) / hy
        phi = np.linalg.lstsq(L, rhs, rcond=None)[0]
        grad[row] = (np.roll(phi, -1) - phi) / hy
    return CellSolution(1, spec.delta, grad=grad, ns=2, ny=ny)


# ---------------------------------------------------------------------------
# functional and bounds

def _functional_pieces(pieces, c, delta):
    return float(np.dot(_region_areas(delta), np.asarray(pieces) * np.asarray(c)) / delta)


def _functional_grid(a, b, c, delta, grad, ns, ny):
    lay = _SubcellLayout.build(ns, ny, delta)
    ah, bh = _row_coefficients(a, b, lay.wy)
    total = 0.0
    for s_low in (0, 1):
        g_hi, g_lo = _subcell_gradients(a, b, ah, bh, grad, s_low)
        ws = lay.ws if s_low else 1 - lay.ws
        m_hi, m_lo = _REGION[s_low, 0], _REGION[s_low, 1]
        per_cell = (1 - lay.wy) * c[m_hi] * g_hi + lay.wy * c[m_lo] * g_lo
        total += np.sum(ws[:, None] * per_cell)
    return float(total / (ns * ny) / delta)


def cell_functional(spec: CheckerboardSpec, sol: CellSolution) -> float:
    """``(1/delta) * int int c d phi/dy ds dy`` on the unit cell."""
    if abs(sol.delta - spec.delta) > 0:
        raise ValueError("cell solution was built for a different delta")
    if sol.exact:
        return _functional_pieces(sol.pieces, spec.c, spec.delta)
    if sol.regime == 1:
        return _elliptic_numeric_functional(spec, sol)
    return _functional_grid(spec.a, spec.b, spec.c, spec.delta, sol.grad, sol.ns, sol.ny)


def _elliptic_numeric_functional(spec, sol):
    wy = _overlap_low(sol.ny, spec.delta)
    ah, bh = _row_coefficients(spec.a, spec.b, wy)
    d = spec.delta
    total = 0.0
    for s_low, weight in ((0, 1 - d), (1, d)):
        g_hi, g_lo = _subcell_gradients(spec.a, spec.b, ah, bh, sol.grad[s_low], s_low)
        m_hi, m_lo = _REGION[s_low, 0], _REGION[s_low, 1]
        total += weight * np.mean((1 - wy) * spec.c[m_hi] * g_hi + wy * spec.c[m_lo] * g_lo)
    return float(total / d)


def corrector_l2(spec: CheckerboardSpec, sol: CellSolution) -> float:
    """``||d phi/dy||`` in ``L^2([0,1]^2)``."""
    if sol.exact:
        return float(np.sqrt(np.dot(_region_areas(spec.delta), np.square(sol.pieces))))
    lay = _SubcellLayout.build(sol.ns, sol.ny, spec.delta)
    ah, bh = _row_coefficients(spec.a, spec.b, lay.wy)
    total = 0.0
    for s_low in (0, 1):
        g_hi, g_lo = _subcell_gradients(spec.a, spec.b, ah, bh, sol.grad, s_low)
        ws = lay.ws if s_low else 1 - lay.ws
        total += np.sum(ws[:, None] * ((1 - lay.wy) * g_hi ** 2 + lay.wy * g_lo ** 2))
    return float(np.sqrt(total / (sol.ns * sol.ny)))


def corrector_distance(spec: CheckerboardSpec, sol: CellSolution, ref: CellSolution) -> float:
    """``||d(phi - phi_ref)/dy||_{L^2}`` for a numerical ``sol`` and exact ``ref``."""
    if not ref.exact or sol.exact:
        raise ValueError("need a numerical solution and an exact reference")
    lay = _SubcellLayout.build(sol.ns, sol.ny, spec.delta)
    ah, bh = _row_coefficients(spec.a, spec.b, lay.wy)
    total = 0.0
    for s_low in (0, 1):
        g_hi, g_lo = _subcell_gradients(spec.a, spec.b, ah, bh, sol.grad, s_low)
        r_hi, r_lo = ref.pieces[_REGION[s_low, 0]], ref.pieces[_REGION[s_low, 1]]
        ws = lay.ws if s_low else 1 - lay.ws
        total += np.sum(ws[:, None] * ((1 - lay.wy) * (g_hi - r_hi) ** 2 + lay.wy * (g_lo - r_lo) ** 2))
    return float(np.sqrt(total / (sol.ns * sol.ny)))


@dataclass(frozen=True)
class CorrectorBounds:
    lam: float
    Lam: float

    def sqrt_rate(self, delta):
        """Uniform constant times ``sqrt(delta)`` (all regimes)."""
        L, l = self.Lam, self.lam
        return 56 * L ** 3 * np.sqrt(L) / (l ** 2 * np.sqrt(l)) * np.sqrt(delta)

    def elliptic(self, delta):
        return 12 * self.Lam ** 2 / self.lam * delta

    def averaged(self, delta):
        return 20 * self.Lam ** 3 / self.lam ** 2 * delta

    def elliptic_pointwise(self, delta):
        return 2 * self.Lam / self.lam * delta

    def parabolic_energy(self, delta):
        return 2 * np.sqrt(2) * self.Lam * np.sqrt(delta) / self.lam

    def parabolic_vs_elliptic(self, delta):
        L, l = self.Lam, self.lam
        return 8 * L * np.sqrt(L) / (l * np.sqrt(l)) * delta


@dataclass
class CertReport:
    delta: float
    functional: list
    target: float
    error: list
    bound: float
    tight_bound: list  # per k; None where no tighter bound applies
    passed: list
    margin: list
    k2_discretization: float
    spec: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "k": [1, 2, 3], "functional": self.functional,
                "target": self.target, "error": self.error, "bound": self.bound,
                "tight_bound": self.tight_bound, "pass": self.passed, "margin": self.margin,
                "k2_discretization": self.k2_discretization, "spec": self.spec}

    def failure_message(self) -> str:
        bad = [f"k={k} margin {m:.3e}" for k, m, p in zip((1, 2, 3), self.margin, self.passed) if not p]
        return f"delta={self.delta}: " + ", ".join(bad)


def certify_corrector_bound(spec: CheckerboardSpec, grid=(256, 256), raise_on_fail: bool = False) -> CertReport:
    """Check the three corrector functionals against their ``delta -> 0`` limit.

    Regimes 1 and 3 are exact.  Regime 2 is numerical; the grid-doubling
    difference is added to its error before comparing with the bound.
    """
    d = spec.delta
    bounds = CorrectorBounds(spec.lam, spec.Lam)
    target = spec.target
    f1 = cell_functional(spec, cell_elliptic(spec))
    f3 = cell_functional(spec, cell_averaged(spec))
    f2 = cell_functional(spec, cell_parabolic(spec, grid))
    f2_fine = cell_functional(spec, cell_parabolic(spec, (2 * grid[0], 2 * grid[1])))
    disc = abs(f2_fine - f2)
    fun = [f1, f2_fine, f3]
    err = [abs(f - target) for f in fun]
    C = float(bounds.sqrt_rate(d))
    tight = [float(bounds.elliptic(d)), None, float(bounds.averaged(d))]
    margins = [min(C, tight[0]) - err[0], C - (err[1] + disc), min(C, tight[2]) - err[2]]
    passed = [bool(m >= 0) for m in margins]
    rep = CertReport(d, fun, target, err, C, tight, passed, [float(m) for m in margins],
                     float(disc), spec.to_dict())
    if raise_on_fail and not rep.ok:
        raise CertificationError(rep.failure_message())
    return rep


# ---------------------------------------------------------------------------
# homogenized coefficients

def _corrector_functional(a, b, c, delta, regime, grid):
    if regime == 1:
        return _functional_pieces(_elliptic_pieces(a, b, delta), c, delta)
    if regime == 3:
        return _functional_pieces(_averaged_pieces(a, b, delta), c, delta)
    if regime == 2:
        grad, *_ = _parabolic_grad(a, b, delta, grid[0], grid[1])
        return _functional_grid(a, b, c, delta, grad, grid[0], grid[1])
    raise ValueError("regime must be 1, 2 or 3")


def homogenized_scalar(a4: Sequence[float], delta: float, regime: int = 1, grid=(256, 256)) -> float:
    """Effective scalar coefficient of the four-cell checkerboard."""
    a4 = tuple(float(v) for v in a4)
    mu = np.array(checkerboard_weak_limits(delta))
    return float(mu @ np.array(a4) + delta * _corrector_functional(a4, a4, a4, delta, regime, grid))


def laminate_closed_form(a4: Sequence[float], delta: float) -> float:
    """Regime-1 effective coefficient: s-weighted harmonic means in y."""
    a1, a2, a3, a4_ = a4
    def hm(up, low):
        return 1.0 / ((1 - delta) / up + delta / low)
    return (1 - delta) * hm(a1, a3) + delta * hm(a2, a4_)


def homogenized_tensor(A4: Sequence[np.ndarray], delta: float, regime: int = 1,
                       grid=(256, 256)) -> np.ndarray:
    """Effective matrix for region matrices ``A4``; oscillation is along ``y_1``."""
    A4 = [np.atleast_2d(np.asarray(A, dtype=float)) for A in A4]
    n = A4[0].shape[0]
    mu = checkerboard_weak_limits(delta)
    Q = sum(m * A for m, A in zip(mu, A4))
    a = tuple(A[0, 0] for A in A4)
    for j in range(n):
        b = tuple(A[0, j] for A in A4)
        if regime == 2:
            grad, *_ = _parabolic_grad(a, b, delta, grid[0], grid[1])
        for i in range(n):
            c = tuple(A[i, 0] for A in A4)
            if regime == 2:
                F = _functional_grid(a, b, c, delta, grad, grid[0], grid[1])
            else:
                F = _corrector_functional(a, b, c, delta, regime, grid)
            Q[i, j] += delta * F
    return 0.5 * (Q + Q.T)


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    """Per-point effective matrices, shape ``points + (n, n)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2 or v.shape[-1] != v.shape[-2]:
            raise ValueError("need trailing (n, n) matrices")
        if not np.allclose(v, np.swapaxes(v, -1, -2), atol=1e-12, rtol=0):
            raise ValueError("homogenized tensor must be symmetric")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    def scalar(self) -> np.ndarray:
        return self.values[..., 0, 0]


def homogenized_q(A4_points: np.ndarray, delta: float, regime: int = 1, grid=(256, 256)) -> HomogenizedTensor:
    """Effective tensor at many points; ``A4_points`` has shape ``(P, 4, n, n)``."""
    A = np.asarray(A4_points, dtype=float)
    if A.ndim == 2:  # scalar values per point: (P, 4)
        A = A[..., None, None]
    cache = {}
    out = np.empty((A.shape[0],) + A.shape[2:])
    for p in range(A.shape[0]):
        key = A[p].tobytes()
        if key not in cache:
            cache[key] = homogenized_tensor(list(A[p]), delta, regime, grid)
        out[p] = cache[key]
    return HomogenizedTensor(out)


def homogenized_face_field(spec, ubar, u2, u3, u4, delta: float, regime: int = 1,
                           opts=None, grid=(256, 256)) -> np.ndarray:
    """Effective face coefficients ``(nt, nx)`` for a four-control checkerboard."""
    from .pde import DEFAULT_OPTIONS, label_face_diffusion, select_faces

    opts = opts or DEFAULT_OPTIONS
    faces = label_face_diffusion(spec, opts)
    a = [select_faces(faces, v) for v in (ubar, u2, u3, u4)]
    if regime == 1:
        return laminate_closed_form(a, delta)
    if regime == 3:
        mu = checkerboard_weak_limits(delta)
        num = (1 - delta) * (a[2] - a[0]) + delta * (a[3] - a[1])
        den = (delta * (1 - delta) * a[0] + delta ** 2 * a[1] + (1 - delta) ** 2 * a[2]
               + delta * (1 - delta) * a[3])
        # corrector functional with b = c = a
        F = -(1 - delta) * num * num / den
        return sum(m * v for m, v in zip(mu, a)) + delta * F
    if regime != 2:
        raise ValueError("regime must be 1, 2 or 3")
    stacked = np.stack(a, axis=-1).reshape(-1, 4)
    q = homogenized_q(stacked, delta, 2, grid).scalar()
    return q.reshape(a[0].shape)


# ---------------------------------------------------------------------------
# weak limits

_SMOOTH_TESTS = {
    "one": lambda t, x: np.ones_like(t * x),
    "sin_sin": lambda t, x: np.sin(np.pi * t) * np.sin(np.pi * x),
    "exp_sum": lambda t, x: np.exp(t + x),
    "poly": lambda t, x: 1 + t * t - 2 * x + 3 * t * x,
}


@dataclass
class WeakPairingReport:
    delta: float
    r: float
    eps: list
    gaps: list  # per eps: max over tests and regions of |int zeta_m h - mu_m int h|
    detail: dict

    def to_dict(self) -> dict:
        return {"delta": self.delta, "r": self.r, "eps": self.eps, "gaps": self.gaps, "detail": self.detail}


def weak_pairing_test(delta: float, eps_list: Sequence[float], r: float = 1.0,
                      tests: Optional[dict] = None, resolution: int = 2048) -> WeakPairingReport:
    """Pair the region indicators at ``(t/eps^r, x/eps)`` with smooth ``h`` on the unit box."""
    tests = tests or _SMOOTH_TESTS
    mu = np.array(checkerboard_weak_limits(delta))
    c = (np.arange(resolution) + 0.5) / resolution
    T, X = np.meshgrid(c, c, indexing="ij")
    w = 1.0 / resolution ** 2
    H = {name: fn(T, X) for name, fn in tests.items()}
    gaps, detail = [], {name: [] for name in tests}
    for eps in eps_list:
        region = checkerboard_region(T / eps ** r, X / eps, delta)
        worst = 0.0
        for name, h in H.items():
            total = h.sum() * w
            g = [abs(float(h[region == m].sum() * w - mu[m] * total)) for m in range(4)]
            detail[name].append(g)
            worst = max(worst, max(g))
        gaps.append(worst)
    return WeakPairingReport(delta, r, list(eps_list), gaps, detail)
