"""Command-line entry point.

Every subcommand reads one JSON problem config, writes its outputs into
``--out`` and records a ``manifest.json`` there.  Exit codes: 0 success,
1 a checked condition failed, 2 usage or config error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConfigError, load_problem, validate_assumptions
from .expr import EvaluationError, ExpressionError
from .io import dumps, write_field_csv, write_json, write_rows_csv

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("spikehom")


def float_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


class CheckFailed(Exception):
    pass


class Run:
    """Collects outputs and timings for the manifest."""

    def __init__(self, args, spec):
        self.args = args
        self.spec = spec
        self.out = Path(args.out)
        self.outputs = []
        self.timings = {}
        self.params = {}

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def timed(self, label, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*a, **kw)
        finally:
            self.timings[label] = time.perf_counter() - t0

    def manifest(self, status="ok") -> dict:
        return {"command": self.args.command, "config": self.args.config,
                "parameters": self.params, "outputs": self.outputs, "timings_s": self.timings,
                "version": __version__, "status": status}


# ---------------------------------------------------------------------------
# helpers

def _fields(spec, *names):
    """Control fields named in the config's ``control_fields`` section.

    Defaults: ``baseline`` is the first label, ``u2`` and ``u3`` the second
    label (or the baseline for a singleton set), ``u4`` the baseline.
    """
    cf = spec.control_fields
    labels = spec.controls.labels
    alt = labels[1] if len(labels) > 1 else labels[0]
    defaults = {"baseline": labels[0], "u2": alt, "u3": alt}
    out = []
    for name in names:
        if name in cf:
            out.append(spec.control_field(cf[name]))
        elif name == "u4":
            out.append(spec.control_field(cf.get("baseline", labels[0])))
        elif name in defaults:
            out.append(spec.control_field(defaults[name]))
        else:
            out.append(spec.control_field(name))
    return out


def _opts(args):
    from .pde import SolverOptions
    return SolverOptions(face_average=args.face_average)


def _control_rows(spec, u):
    g = spec.grid
    labels = spec.controls.labels
    return [{"t": float(g.t_centers[s]), "x": float(g.x_centers[j]), "label": labels[u.choice[s, j]]}
            for s in range(g.nt) for j in range(g.nx)]


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(run: Run):
    run.params["samples"] = run.args.samples
    rep = run.timed("validate", validate_assumptions, run.spec, run.args.samples)
    write_json(rep, run.path("validation.json"))
    if not rep.passed:
        raise CheckFailed(f"assumption check failed: {rep.failures[0]}")


def cmd_solve(run: Run):
    from .optimality import evaluate_cost
    from .pde import solve_state
    (u,) = _fields(run.spec, run.args.control)
    z, info = run.timed("state", solve_state, run.spec, u, _opts(run.args), return_info=True)
    write_field_csv(z, run.path("state.csv"))
    write_json({"sup_norm": info.sup_norm, "max_picard_iterations": int(info.picard_iterations.max()),
                "max_step_residual": info.max_residual, "cost": evaluate_cost(run.spec, u, z),
                "grid": run.spec.grid.to_dict()}, run.path("state.json"))


def cmd_adjoint(run: Run):
    from .pde import solve_adjoint, solve_state
    (u,) = _fields(run.spec, run.args.control)
    z = run.timed("state", solve_state, run.spec, u, _opts(run.args))
    psi = run.timed("adjoint", solve_adjoint, run.spec, u, z, _opts(run.args))
    write_field_csv(z, run.path("state.csv"))
    write_field_csv(psi, run.path("adjoint.csv"))
    write_json({"state_sup_norm": z.sup_norm(), "adjoint_sup_norm": psi.sup_norm()},
               run.path("adjoint.json"))


def cmd_variational(run: Run):
    from .optimality import duality_gap
    from .pde import solve_adjoint, solve_state, solve_variational
    spec, opts = run.spec, _opts(run.args)
    ubar, u2, u3 = _fields(spec, "baseline", "u2", "u3")
    z = run.timed("state", solve_state, spec, ubar, opts)
    psi = run.timed("adjoint", solve_adjoint, spec, ubar, z, opts)
    Z = run.timed("variational", solve_variational, spec, ubar, u2, u3, z, opts)
    gap, fv, fv_h = duality_gap(spec, ubar, z, psi, Z, u2, u3, opts, return_parts=True)
    write_field_csv(Z, run.path("variational.csv"))
    write_json({"first_variation": fv, "hamiltonian_form": fv_h, "duality_gap": gap,
                "sup_norm": Z.sup_norm()}, run.path("variational.json"))


def cmd_homogenize(run: Run):
    from .homogenization import homogenized_face_field, homogenized_scalar, laminate_closed_form
    spec, args = run.spec, run.args
    delta = args.delta
    run.params.update(delta=delta, regime=args.regime)
    if not 0 < delta < 1:
        raise ConfigError("--delta must lie in (0, 1)")
    result = {"delta": delta, "regime": args.regime}
    cb = spec.checkerboard
    if cb is not None:
        a = [float(v) for v in cb.get("a", [])]
        if len(a) != 4:
            raise ConfigError("checkerboard.a needs four values")
        result["checkerboard_a"] = a
        result["q"] = {str(k): homogenized_scalar(a, delta, k) for k in (1, 2, 3)}
        result["q_closed_form"] = laminate_closed_form(a, delta)
    ubar, u2, u3, u4 = _fields(spec, "baseline", "u2", "u3", "u4")
    Q = run.timed("Q", homogenized_face_field, spec, ubar, u2, u3, u4, delta, args.regime, _opts(args))
    g = spec.grid
    rows = [{"t": float(g.t[s + 1]), "x": float(g.x_centers[j]), "q": float(Q[s, j])}
            for s in range(g.nt) for j in range(g.nx)]
    write_rows_csv(rows, run.path("Q.csv"))
    result.update(q_min=float(Q.min()), q_max=float(Q.max()))
    write_json(result, run.path("homogenize.json"))


def _checkerboards(spec, seed, deltas, count):
    from .homogenization import CheckerboardSpec
    cb = spec.checkerboard if spec is not None else None
    if cb is not None:
        base = dict(a=cb["a"], b=cb.get("b", cb["a"]), c=cb.get("c", cb["a"]),
                    lam=float(cb.get("lambda", spec.lam)), Lam=float(cb.get("Lambda", spec.Lam)))
        return [[CheckerboardSpec(base["a"], base["b"], base["c"], d, base["lam"], base["Lam"])
                 for d in deltas]]
    rng = np.random.default_rng(seed)
    lam = float(spec.lam) if spec is not None else 0.5
    Lam = float(spec.Lam) if spec is not None else 2.0
    out = []
    for _ in range(count):
        first = CheckerboardSpec.random(rng, deltas[0], lam, Lam)
        out.append([first.with_delta(d) for d in deltas])
    return out


def cmd_certify(run: Run):
    from .homogenization import certify_corrector_bound
    args = run.args
    run.params.update(delta_list=args.delta_list, specs=args.specs, seed=args.seed)
    if any(not 0 < d < 1 for d in args.delta_list):
        raise ConfigError("delta values must lie in (0, 1)")
    families = _checkerboards(run.spec, args.seed, args.delta_list, args.specs)
    reports = []
    for fam in families:
        for cb in fam:
            reports.append(certify_corrector_bound(cb, (args.cell_grid, args.cell_grid)))
    rows = [{"delta": r.delta, "k": k, "functional": r.functional[k - 1], "target": r.target,
             "error": r.error[k - 1], "margin": r.margin[k - 1], "pass": r.passed[k - 1]}
            for r in reports for k in (1, 2, 3)]
    write_rows_csv(rows, run.path("certify.csv"))
    write_json({"reports": reports, "all_pass": all(r.ok for r in reports)}, run.path("certify.json"))
    bad = [r for r in reports if not r.ok]
    for r in reports:
        print(f"delta={r.delta:g} pass={all(r.passed)} margins={[f'{m:.3g}' for m in r.margin]}")
    if bad:
        raise CheckFailed(bad[0].failure_message())


def cmd_maxcond(run: Run):
    from .optimality import condition_scan
    from .pde import solve_adjoint, solve_state
    spec, opts = run.spec, _opts(run.args)
    (u,) = _fields(spec, run.args.control)
    tol = run.args.tol if run.args.tol is not None else 1e-6
    run.params["tol"] = tol
    z = run.timed("state", solve_state, spec, u, opts)
    psi = run.timed("adjoint", solve_adjoint, spec, u, z, opts)
    rep = run.timed("scan", condition_scan, spec, u, z, psi, tol, opts)
    write_json(rep, run.path("maxcond.json"))
    if not rep.satisfied:
        raise CheckFailed(f"maximum condition violated on {int(rep.violating.sum())} cells "
                          f"(min residual {rep.min_residual:.3e})")


def cmd_spike(run: Run):
    from .experiments import epsilon_sweep
    args = run.args
    run.params.update(delta=args.delta, eps_list=args.eps_list, r=args.r)
    ubar, u2, u3, u4 = _fields(run.spec, "baseline", "u2", "u3", "u4")
    rep = run.timed("sweep", epsilon_sweep, run.spec, ubar, u2, u3, u4, args.delta, args.eps_list,
                    args.r, _opts(args), args.threads)
    write_rows_csv(rep.rows, run.path("spike_sweep.csv"))
    write_json(rep, run.path("spike_sweep.json"))


def cmd_delta_sweep(run: Run):
    from .experiments import delta_sweep
    args = run.args
    tol = args.tol if args.tol is not None else 1e-6
    run.params.update(delta_list=args.delta_list, claimed_optimal=args.claimed_optimal, tol=tol)
    ubar, u2, u3, u4 = _fields(run.spec, "baseline", "u2", "u3", "u4")
    rep = run.timed("sweep", delta_sweep, run.spec, ubar, u2, u3, u4, args.delta_list, _opts(args),
                    args.threads, args.claimed_optimal, tol)
    write_rows_csv(rep.rows, run.path("delta_sweep.csv"))
    write_json(rep, run.path("delta_sweep.json"))
    if args.claimed_optimal and not rep.summary["sign_check"]:
        raise CheckFailed("negative difference quotient at a control claimed optimal")


def cmd_optimize(run: Run):
    from .experiments import MSAOptions, optimize_msa
    args = run.args
    tol = args.tol if args.tol is not None else 1e-6
    msa = MSAOptions(args.max_outer, args.relax_fraction, tol)
    run.params.update(max_outer=msa.max_outer, relax_fraction=msa.relax_fraction, tol=tol)
    (u0,) = _fields(run.spec, run.args.control)
    res = run.timed("optimize", optimize_msa, run.spec, u0, msa, _opts(args))
    write_rows_csv(res.trace, run.path("cost_trace.csv"))
    write_rows_csv(_control_rows(run.spec, res.control), run.path("control.csv"))
    write_json({"status": res.status, "cost": res.cost, "condition": res.report,
                "iterations": len(res.trace) - 1}, run.path("optimize.json"))
    if not res.converged:
        raise CheckFailed(f"optimizer finished with status {res.status!r}")


COMMANDS = {
    "validate": cmd_validate, "solve": cmd_solve, "adjoint": cmd_adjoint,
    "variational": cmd_variational, "homogenize": cmd_homogenize,
    "certify-lemma22": cmd_certify, "verify-maxcond": cmd_maxcond, "spike": cmd_spike,
    "delta-sweep": cmd_delta_sweep, "optimize": cmd_optimize,
}

# subcommands that can run without a problem config
_CONFIG_OPTIONAL = {"certify-lemma22"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="problem JSON file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--tol", type=float, default=None, help="condition/optimizer tolerance")
    common.add_argument("--face-average", choices=("harmonic", "arithmetic"), default="harmonic")
    common.add_argument("--dry-run", action="store_true", help="print the manifest and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spikehom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("validate", parents=[common], help="sample the standing assumptions")
    s.add_argument("--samples", type=int, default=256)
    for name, helptext in (("solve", "solve the state equation"),
                           ("adjoint", "solve state and adjoint"),
                           ("verify-maxcond", "scan the augmented maximum condition")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--control", default="baseline", help="control field name or label")
    sub.add_parser("variational", parents=[common], help="linearized state and first variation")
    s = sub.add_parser("homogenize", parents=[common], help="homogenized coefficient")
    s.add_argument("--delta", type=float, default=0.5)
    s.add_argument("--regime", type=int, choices=(1, 2, 3), default=1)
    s = sub.add_parser("certify-lemma22", parents=[common], help="certify the corrector-functional bound")
    s.add_argument("--delta-list", type=float_list, required=True)
    s.add_argument("--specs", type=int, default=1, help="random checkerboards when the config has none")
    s.add_argument("--cell-grid", type=int, default=256)
    s = sub.add_parser("spike", parents=[common], help="epsilon sweep of spike controls")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--eps-list", type=float_list, required=True)
    s.add_argument("--r", type=float, default=1.0)
    s = sub.add_parser("delta-sweep", parents=[common], help="difference quotients vs first variation")
    s.add_argument("--delta-list", type=float_list, required=True)
    s.add_argument("--claimed-optimal", action="store_true")
    s = sub.add_parser("optimize", parents=[common], help="successive-approximation optimizer")
    s.add_argument("--control", default="baseline", help="initial control")
    s.add_argument("--max-outer", type=int, default=50)
    s.add_argument("--relax-fraction", type=float, default=0.2)
    return p


def main(argv=None) -> int:
    from .homogenization import CellProblemError, CertificationError
    from .pde import SolverError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = None
        if args.config is not None:
            spec = load_problem(args.config)
            if args.seed is not None:
                spec = replace(spec, seed=args.seed)
        elif args.command not in _CONFIG_OPTIONAL:
            raise ConfigError("--config is required")
        if args.seed is None:
            args.seed = spec.seed if spec is not None else 0
        run = Run(args, spec)
        if args.dry_run:
            run.params["dry_run"] = True
            sys.stdout.write(dumps(run.manifest("dry-run")))
            return EXIT_OK
        status, code = "ok", EXIT_OK
        try:
            COMMANDS[args.command](run)
        except (CheckFailed, CertificationError) as exc:
            status, code = "check-failed", EXIT_CHECK
            print(f"spikehom: {exc}", file=sys.stderr)
        manifest_path = run.out / "manifest.json"
        run.outputs.append(str(manifest_path))
        write_json(run.manifest(status), manifest_path)
        return code
    except (ConfigError, ExpressionError) as exc:
        print(f"spikehom: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, CellProblemError, EvaluationError) as exc:
        print(f"spikehom: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"spikehom: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
