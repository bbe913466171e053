import json
from pathlib import Path

import numpy as np
import pytest

from spikehom.core import problem_from_dict

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
PI = "3.141592653589793"


def config(name: str) -> dict:
    return json.loads((CONFIGS / f"{name}.json").read_text(encoding="utf-8"))


def make_problem(controls, nt=20, nx=20, T=1.0, z0="0", lam=1.0, Lam=1.0, M=1.0, **extra):
    cfg = {"grid": {"T": T, "x_lo": 0.0, "x_hi": 1.0, "nt": nt, "nx": nx},
           "controls": controls, "z0": z0, "lambda": lam, "Lambda": Lam, "M": M}
    cfg.update(extra)
    return problem_from_dict(cfg)


@pytest.fixture
def two_label():
    """Semilinear two-label problem with u-dependent diffusion (coarse grid)."""
    cfg = config("two_label")
    cfg["grid"].update(nt=40, nx=40)
    return problem_from_dict(cfg)


@pytest.fixture
def two_label_fields(two_label):
    spec = two_label
    cf = spec.control_fields
    return (spec.control_field(cf["baseline"]), spec.control_field(cf["u2"]),
            spec.control_field(cf["u3"]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
