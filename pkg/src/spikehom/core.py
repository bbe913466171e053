"""Grids, fields, control sets and the problem definition.

Nodes are indexed ``(k, j)`` with ``t_k = k*dt`` and ``x_j = x_lo + j*h``.
A control is piecewise constant on space-time cells ``(k, j)`` covering
``[t_k, t_{k+1}] x [x_j, x_{j+1}]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .expr import EvaluationError, ExpressionError, ExpressionProgram, parse_expression

SLACK = 1e-12


class ConfigError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    T: float
    x_lo: float
    x_hi: float
    nt: int
    nx: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T}")
        if not (np.isfinite(self.x_lo) and np.isfinite(self.x_hi) and self.x_hi > self.x_lo):
            raise ValueError("need x_hi > x_lo")
        if int(self.nt) != self.nt or self.nt < 2:
            raise ValueError(f"nt must be an integer >= 2, got {self.nt}")
        if int(self.nx) != self.nx or self.nx < 3:
            raise ValueError(f"nx must be an integer >= 3, got {self.nx}")
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx + 1)

    @property
    def t_centers(self) -> np.ndarray:
        return (np.arange(self.nt) + 0.5) * self.dt

    @property
    def x_centers(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.nx) + 0.5) * self.h

    def mesh(self):
        """Node coordinates as two ``(nt+1, nx+1)`` arrays."""
        return np.meshgrid(self.t, self.x, indexing="ij")

    def with_resolution(self, nt: int, nx: int) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.T, self.x_lo, self.x_hi, nt, nx)

    def to_dict(self) -> dict:
        return {"T": self.T, "x_lo": self.x_lo, "x_hi": self.x_hi, "nt": self.nt, "nx": self.nx}


@dataclass(frozen=True)
class Control:
    """One admissible control value with its coefficient programs."""

    name: str
    A: tuple  # n x n ExpressionPrograms in (t, x); symmetric
    f: ExpressionProgram
    f0: ExpressionProgram

    @property
    def n(self) -> int:
        return len(self.A)

    def A_matrix(self, t, x) -> np.ndarray:
        """Matrix values with shape ``broadcast(t, x).shape + (n, n)``."""
        n = self.n
        shape = np.broadcast_shapes(np.shape(t), np.shape(x))
        out = np.empty(shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                out[..., i, j] = self.A[i][j](t=t, x=x)
                out[..., j, i] = out[..., i, j]
        return out

    def a(self, t, x) -> np.ndarray:
        """Scalar coefficient for n = 1."""
        return self.A[0][0](t=t, x=x)


@dataclass(frozen=True)
class ControlSet:
    controls: tuple
    lam: float
    Lam: float

    def __post_init__(self):
        if len(self.controls) == 0:
            raise ValueError("control set must be nonempty")
        if not (self.lam > 0 and self.lam <= self.Lam):
            raise ValueError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        names = [c.name for c in self.controls]
        if len(set(names)) != len(names):
            raise ValueError("control names must be unique")
        ns = {c.n for c in self.controls}
        if len(ns) != 1:
            raise ValueError("all controls must share the algebra dimension")

    @property
    def labels(self) -> list:
        return [c.name for c in self.controls]

    @property
    def n(self) -> int:
        return self.controls[0].n

    def __len__(self):
        return len(self.controls)

    def __getitem__(self, i) -> Control:
        return self.controls[i]

    def index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise ConfigError(f"unknown control label {name!r}") from None


@dataclass(frozen=True, eq=False)
class ControlField:
    grid: SpaceTimeGrid
    choice: np.ndarray  # (nt, nx) label indices
    n_labels: int

    def __post_init__(self):
        choice = np.asarray(self.choice)
        if choice.shape != (self.grid.nt, self.grid.nx):
            raise ValueError(f"choice shape {choice.shape} != {(self.grid.nt, self.grid.nx)}")
        if not np.issubdtype(choice.dtype, np.integer):
            if not np.all(choice == np.round(choice)):
                raise ValueError("labels must be integers")
        choice = choice.astype(np.int64)
        if choice.size and (choice.min() < 0 or choice.max() >= self.n_labels):
            raise ValueError("control label index out of range")
        choice.setflags(write=False)
        object.__setattr__(self, "choice", choice)

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, label: int, n_labels: int) -> "ControlField":
        return cls(grid, np.full((grid.nt, grid.nx), label, dtype=np.int64), n_labels)

    def replace(self, choice) -> "ControlField":
        return ControlField(self.grid, np.asarray(choice), self.n_labels)

    def __eq__(self, other):
        return (isinstance(other, ControlField) and self.grid == other.grid
                and np.array_equal(self.choice, other.choice))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: SpaceTimeGrid
    values: np.ndarray  # (nt+1, nx+1)
    dirichlet: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.nt + 1, self.grid.nx + 1):
            raise ValueError(f"field shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.dirichlet and (np.any(v[:, 0] != 0) or np.any(v[:, -1] != 0)):
            raise ValueError("Dirichlet field must vanish on the lateral boundary")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "ScalarField":
        return cls(grid, np.zeros((grid.nt + 1, grid.nx + 1)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values, self.dirichlet and other.dirichlet)


@dataclass(frozen=True)
class ProblemSpec:
    grid: SpaceTimeGrid
    controls: ControlSet
    z0: ExpressionProgram
    M: float
    seed: int = 0
    checkerboard: Optional[dict] = None
    control_fields: dict = field(default_factory=dict)  # raw config descriptors

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("growth constant M must be positive")
        z0 = self.z0(x=self.grid.x)
        if not np.all(np.isfinite(z0)):
            raise ValueError("z0 must be bounded on the grid")

    @property
    def lam(self) -> float:
        return self.controls.lam

    @property
    def Lam(self) -> float:
        return self.controls.Lam

    @property
    def n(self) -> int:
        return self.controls.n

    def initial_values(self) -> np.ndarray:
        z0 = self.z0(x=self.grid.x)
        z0[0] = z0[-1] = 0.0
        return z0

    def with_grid(self, grid: SpaceTimeGrid) -> "ProblemSpec":
        return ProblemSpec(grid, self.controls, self.z0, self.M, self.seed,
                           self.checkerboard, self.control_fields)

    def constant_control(self, label) -> ControlField:
        idx = self.controls.index(label) if isinstance(label, str) else int(label)
        return ControlField.constant(self.grid, idx, len(self.controls))

    def control_field(self, descriptor) -> ControlField:
        """Build a control field from a label name or a region descriptor.

        A descriptor is ``{"default": label, "regions": [{"label": l,
        "where": expr}]}``; a region applies at cell centers where ``expr(t, x)
        > 0``, later regions overriding earlier ones.
        """
        if isinstance(descriptor, str):
            return self.constant_control(descriptor)
        if isinstance(descriptor, dict) and "default" in descriptor:
            choice = np.full((self.grid.nt, self.grid.nx), self.controls.index(descriptor["default"]))
            tc, xc = np.meshgrid(self.grid.t_centers, self.grid.x_centers, indexing="ij")
            for reg in descriptor.get("regions", []):
                try:
                    mask = parse_expression(reg["where"])(t=tc, x=xc) > 0
                    choice[mask] = self.controls.index(reg["label"])
                except KeyError as exc:
                    raise ConfigError(f"region needs 'label' and 'where': missing {exc}") from None
            return ControlField(self.grid, choice, len(self.controls))
        raise ConfigError(f"bad control descriptor {descriptor!r}")


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")


def _trap_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n + 1, step)
    w[0] = w[-1] = step / 2
    return w


def quadrature_weights(grid: SpaceTimeGrid) -> np.ndarray:
    """Tensor trapezoidal weights on the ``(nt+1, nx+1)`` nodes."""
    return np.outer(_trap_weights(grid.nt, grid.dt), _trap_weights(grid.nx, grid.h))


def inner_product(a: ScalarField, b: ScalarField) -> float:
    _same_grid(a, b)
    return float(np.sum(quadrature_weights(a.grid) * a.values * b.values))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


# --------------------------------------------------------------------------
# assumption validation

@dataclass
class ValidationReport:
    passed: bool
    lambda_declared: float
    Lambda_declared: float
    M: float
    rayleigh_min: float
    rayleigh_max: float
    growth_max: float
    failures: list

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "lambda": self.lambda_declared,
            "Lambda": self.Lambda_declared,
            "M": self.M,
            "rayleigh_min": self.rayleigh_min,
            "rayleigh_max": self.rayleigh_max,
            "growth_max": self.growth_max,
            "failures": self.failures,
        }


def _z_samples(rng, samples):
    mags = 10.0 ** np.arange(-2, 7)
    fixed = np.concatenate([[0.0], mags, -mags])
    return np.concatenate([fixed, rng.uniform(-100, 100, samples)])


def validate_assumptions(spec: ProblemSpec, samples: int = 256) -> ValidationReport:
    """Sample the ellipticity bounds and the one-sided growth condition.

    The Rayleigh quotient extremes at each sampled ``(t, x)`` are the
    eigenvalues of ``A``; witnesses are the corresponding eigenvectors.
    ``z f - M (z^2 + 1)`` is sampled on a random set plus fixed large
    magnitudes up to ``1e6``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    g = spec.grid
    rng = np.random.default_rng(spec.seed)
    ts = np.concatenate([[0.0, g.T], rng.uniform(0, g.T, samples)])
    xs = np.concatenate([[g.x_lo, g.x_hi], rng.uniform(g.x_lo, g.x_hi, samples)])
    zs = _z_samples(rng, samples)
    failures = []
    rq_min, rq_max, growth_max = np.inf, -np.inf, -np.inf
    lam, Lam = spec.lam, spec.Lam
    for c in spec.controls:
        try:
            Am = c.A_matrix(ts, xs)
        except EvaluationError as exc:
            failures.append({"control": c.name, "check": "A", "error": str(exc)})
            continue
        w, V = np.linalg.eigh(Am)
        lo, hi = w[:, 0], w[:, -1]
        rq_min, rq_max = min(rq_min, lo.min()), max(rq_max, hi.max())
        i = int(np.argmin(lo))
        if lo[i] < lam - SLACK:
            failures.append({"control": c.name, "check": "lower_ellipticity", "t": ts[i], "x": xs[i],
                             "value": float(lo[i]), "witness_xi": _canon(V[i][:, 0])})
        i = int(np.argmax(hi))
        if hi[i] > Lam + SLACK:
            failures.append({"control": c.name, "check": "upper_ellipticity", "t": ts[i], "x": xs[i],
                             "value": float(hi[i]), "witness_xi": _canon(V[i][:, -1])})
        # every z sample at every (t, x) sample
        T_ = np.tile(ts, zs.size)
        X_ = np.tile(xs, zs.size)
        Z_ = np.repeat(zs, ts.size)
        try:
            with np.errstate(over="ignore"):
                excess = Z_ * c.f(t=T_, x=X_, z=Z_) - spec.M * (Z_ ** 2 + 1)
        except EvaluationError as exc:
            failures.append({"control": c.name, "check": "growth", "error": str(exc)})
            continue
        i = int(np.argmax(excess))
        growth_max = max(growth_max, float(excess[i]))
        if excess[i] > SLACK:
            failures.append({"control": c.name, "check": "growth", "t": float(T_[i]), "x": float(X_[i]),
                             "z": float(Z_[i]), "value": float(excess[i])})
        try:
            c.f0(t=T_, x=X_, z=np.clip(Z_, -100, 100))
        except EvaluationError as exc:
            failures.append({"control": c.name, "check": "f0_finite", "error": str(exc)})
    return ValidationReport(not failures, lam, Lam, spec.M, float(rq_min), float(rq_max),
                            float(growth_max), failures)


def _canon(v: np.ndarray) -> list:
    k = int(np.argmax(np.abs(v)))
    v = v if v[k] >= 0 else -v
    return [float(round(c, 15)) for c in v]


# --------------------------------------------------------------------------
# configuration

def _program(src, what, allowed) -> ExpressionProgram:
    try:
        p = parse_expression(src)
    except ExpressionError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    extra = p.variables - set(allowed)
    if extra:
        raise ConfigError(f"{what} may only use {sorted(allowed)}, found {sorted(extra)}")
    return p


def _build_control(item: dict, n: int) -> Control:
    try:
        name = str(item["name"])
        A = item["A"]
    except KeyError as exc:
        raise ConfigError(f"control entry missing {exc}") from None
    if not isinstance(A, list):
        A = [[A]]
    if len(A) != n or any(not isinstance(r, list) or len(r) != n for r in A):
        raise ConfigError(f"control {name!r}: A must be {n}x{n}")
    progs = [[_program(A[i][j], f"{name}.A[{i}][{j}]", ("t", "x")) for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if progs[i][j] != progs[j][i]:
                raise ConfigError(f"control {name!r}: A must be symmetric ({i},{j})")
    sym = tuple(tuple(progs[min(i, j)][max(i, j)] for j in range(n)) for i in range(n))
    f = _program(item.get("f", "0"), f"{name}.f", ("t", "x", "z"))
    f0 = _program(item.get("f0", "0"), f"{name}.f0", ("t", "x", "z"))
    return Control(name, sym, f, f0)


def problem_from_dict(cfg: dict) -> ProblemSpec:
    try:
        g = cfg["grid"]
        grid = SpaceTimeGrid(float(g["T"]), float(g["x_lo"]), float(g["x_hi"]), g["nt"], g["nx"])
        n = int(cfg.get("n", 1))
        controls = ControlSet(tuple(_build_control(c, n) for c in cfg["controls"]),
                              float(cfg["lambda"]), float(cfg["Lambda"]))
        z0 = _program(cfg.get("z0", "0"), "z0", ("x",))
        return ProblemSpec(grid, controls, z0, float(cfg.get("M", 1.0)), int(cfg.get("seed", 0)),
                           cfg.get("checkerboard"), dict(cfg.get("control_fields", {})))
    except KeyError as exc:
        raise ConfigError(f"config missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_problem(path) -> ProblemSpec:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return problem_from_dict(cfg)


def make_controls(items: Sequence[dict], lam: float, Lam: float, n: int = 1) -> ControlSet:
    return ControlSet(tuple(_build_control(c, n) for c in items), lam, Lam)
