"""
Command-line entry point.

    hjsys <subcommand> --scenario PATH [--out DIR] [--grid N] [--horizon T] [--seed S] [--threads K]
    hjsys gallery NAME [--out DIR] ...

Every run writes ``report.json`` (results plus the list of assertions),
``series/*.csv``, ``fields/*.bin`` with ``.json`` headers and ``figures/*.png``
into the output directory (``HJSYS_OUT`` overrides ``--out``).  The exit
status is 0 when every assertion passed, 1 when one failed and 2 when a run
aborted with an error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import coupling as cpl
from . import io
from .control import ControlProblem, cross_validate, dp_value, feedback_policy, periodic_interp, simulate_pdmp
from .ergodic import (Check, default_schedule, ergodic_bounds, solve_discounted, stationary_residual,
                      vanishing_discount)
from .errors import HJSysError, PreconditionFailed
from .evolutive import solve_until
from .expressions import parse_expression
from .grid import DiscreteSystem, TorusGrid, VectorGridField
from .longtime import (Verdict, aubry_ode_check, detect_convergence, joint_limits_m2, monitor_lambda_functional,
                       monitor_max_functional)
from .model import compute_sets, lambda_on_cells
from .scenario import Scenario, gallery_path, scenario_from_dict

logger = logging.getLogger("hjsys")

COMMANDS = ("analyze-coupling", "evolve", "ergodic", "longtime", "control")


@dataclass
class RunOutput:
    """What a command produces before it is written to disk."""

    report: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    series: dict[str, list[dict]] = field(default_factory=dict)
    fields: dict[str, VectorGridField] = field(default_factory=dict)
    figures: list = field(default_factory=list)  # callables taking the figures dir

    def check(self, name: str, value: float, bound: float, passed: bool | None = None) -> None:
        value = float(value)
        ok = value <= bound if passed is None else bool(passed)
        self.checks.append(Check(name, value, float(bound), bool(ok)))


def scalar_well_reference(x: np.ndarray) -> np.ndarray:
    """Stationary profile for ``|u'| = 1 - cos(2 pi x)`` on the unit circle vanishing at 0."""
    s = np.sin(2 * np.pi * x) / (2 * np.pi)
    return np.minimum(x - s, 1 - x + s)


def _expect(sc: Scenario) -> dict:
    return sc.run.get("expect") or {}


def _vector_check(out: RunOutput, name: str, got, want, tol: float) -> None:
    got = np.atleast_1d(np.asarray(got, dtype=float))
    want = np.atleast_1d(np.asarray(want, dtype=float))
    out.check(name, float(np.max(np.abs(got - want))), tol)


# --------------------------------------------------------------------------
# commands


def cmd_analyze_coupling(sc: Scenario) -> RunOutput:
    out = RunOutput()
    grid = sc.grid
    fld = sc.problem.coupling_on(grid)
    mono = cpl.check_monotone_coupling(fld)
    rep = {"monotonicity": mono.to_json(), "constant": fld.constant}
    if fld.constant:
        D = fld.at(0)
        wit = cpl.is_irreducible(D)
        rep["irreducibility"] = {
            "irreducible": wit.irreducible,
            "chains": {f"{i}->{j}": list(c) for (i, j), c in (wit.chains or {}).items()},
            "separating_set": sorted(wit.separating_set) if wit.separating_set else None,
        }
        if mono.holds:
            dec = cpl.m_decompose(D)
            rep["m_decomposition"] = {"s": dec.s, "B": dec.B, "rho": dec.rho}
            out.check("m_matrix_s_ge_rho", dec.rho - dec.s, 1e-9)
        ok, r = cpl.nonzero_spectrum_check(D, cpl.EIG_TOL)
        rep["spectrum"] = {"nonzero_real_parts_positive": ok, "r": r}
        if mono.holds and wit.irreducible:
            pd = cpl.perron_left_null_vector(D, cpl.PerronMode.GENERAL)
            rep["perron"] = {"lambda": pd.lambda_vec, "kernel_dim": pd.kernel_dim}
            residual = D.T @ pd.lambda_vec
            out.check("perron_DT_lambda_nonnegative", float(-residual.min()), 1e-10)
            if np.max(np.abs(D.sum(axis=1))) <= cpl.EIG_TOL:
                A, gap = cpl.exp_limit_projector(D)
                rep["exp_limit"] = {"projector": A, "r": gap}
                out.check("perron_DT_lambda_zero", float(np.max(np.abs(residual))), 1e-10)
    else:
        irred = [cpl.is_irreducible(mat).irreducible for mat in fld.matrices]
        rep["irreducible_cells"] = int(sum(irred))
        rep["cells"] = fld.ncells
        if mono.holds and all(irred):
            rep["lambda_max_adjacent_jump"] = fld.lambda_continuity(range(fld.ncells), cpl.PerronMode.GENERAL)
    rep["sets"] = compute_sets(sc.problem, grid, sc.run["eps_set"]).to_json()
    out.report["coupling"] = rep
    return out


def _system(sc: Scenario):
    grid = sc.grid
    u0 = sc.problem.sample_initial(grid).values
    return DiscreteSystem(sc.problem, grid, u_ref=u0), u0


def _trajectory_rows(log, drift: float) -> list[dict]:
    rows = log.series_rows()
    for r in rows:
        for k in list(r):
            if k.startswith(("sup_", "inf_")):
                r[k] += drift * r["t"]
    return rows


def cmd_evolve(sc: Scenario) -> RunOutput:
    out = RunOutput()
    system, u0 = _system(sc)
    T = float(sc.run["horizon"])
    log = solve_until(system, u0, T, sample_every=float(sc.run["sample_every"]), keep_snapshots=False)
    final = log.final.field.values + sc.drift * T
    fld = VectorGridField(system.grid, final, T)
    out.report["evolve"] = {
        "horizon": T, "dt": log.dt, "steps": log.final.step_count, "thetas": system.thetas,
        "final_sup": final.reshape(system.m, -1).max(axis=1), "final_inf": final.reshape(system.m, -1).min(axis=1),
        "drift": sc.drift,
    }
    out.check("theta_dominates_final_gradients", 0.0, 0.0, system.theta_ok(log.final.field.values))
    rows = _trajectory_rows(log, sc.drift)
    out.series["trajectory"] = rows
    out.fields["final"] = fld
    out.figures.append(lambda d: _plot_field(fld, d / "final.png", f"{sc.name}: u(., {T:g})", sc.problem.labels))
    out.figures.append(lambda d: _plot_series(rows, "t", [k for k in rows[0] if k.startswith("sup_")],
                                              d / "sup.png", "sup norms"))
    return out


def cmd_ergodic(sc: Scenario) -> RunOutput:
    out = RunOutput()
    system, _ = _system(sc)
    exp = _expect(sc)
    lams = default_schedule(float(sc.run["lambda0"]), int(sc.run["levels"]))
    res = vanishing_discount(system, lams, tol=float(sc.run["tol"]), eps_set=sc.run["eps_set"])
    c = res.c_estimate - sc.drift
    corr = res.corrector.values
    anchor_vals = corr.reshape(system.m, -1)[:, res.anchor]
    diffs = anchor_vals[0] - anchor_vals[1:]
    rep = res.to_json()
    rep["c_estimate"] = c
    rep["corrector_difference"] = diffs
    rep["stationary_residual"] = stationary_residual(system, corr, res.c_estimate)
    out.checks.extend(res.checks)
    if sc.run["discount"] is not None:
        lam = float(sc.run["discount"])
        sol = solve_discounted(system, lam, tol=float(sc.run["tol"]))
        vals = sol.field.values.reshape(system.m, -1)
        rep["discounted"] = {"lambda": lam, "value_at_anchor": vals[:, res.anchor],
                             "spread": vals.max(axis=1) - vals.min(axis=1), "iterations": sol.iterations,
                             "residual": sol.residual}
        out.fields["discounted"] = sol.field
        if "discounted" in exp:
            _vector_check(out, "discounted_solution", vals[:, res.anchor], exp["discounted"], exp["discounted_tol"])
    try:
        lower, upper = ergodic_bounds(system)
    except PreconditionFailed as exc:
        rep["bounds"] = {"skipped": str(exc)}
    else:
        ok = lower - 1e-2 <= -c[0] <= upper + 1e-2
        rep["bounds"] = {"lower": lower, "upper": upper, "minus_c1": -c[0], "pass": ok}
        out.check("ergodic_bounds", -c[0], upper + 1e-2, ok)
        out.check("c_components_equal", float(np.ptp(c)), 1e-6 * (1 + float(np.max(np.abs(c)))))
    if "c" in exp:
        _vector_check(out, "c_estimate", c, exp["c"], exp["c_tol"])
    if "corrector_difference" in exp:
        _vector_check(out, "corrector_difference", diffs, exp["corrector_difference"], exp["corrector_difference_tol"])
    out.report["ergodic"] = rep
    rows = res.trace_rows()
    out.series["ergodic_trace"] = rows
    out.fields["corrector"] = res.corrector
    out.figures.append(lambda d: _plot_field(res.corrector, d / "corrector.png", f"{sc.name}: corrector",
                                             sc.problem.labels))
    out.figures.append(lambda d: _plot_series(rows, "lambda", [k for k in rows[0] if k.startswith("lambda_v")],
                                              d / "discount_trace.png", "lambda v(x*)", logx=True))
    return out


def cmd_longtime(sc: Scenario) -> RunOutput:
    out = RunOutput()
    system, u0 = _system(sc)
    grid = system.grid
    exp = _expect(sc)
    T = float(sc.run["horizon"])
    window = float(sc.run["window"])
    log = solve_until(system, u0, T, sample_every=float(sc.run["sample_every"]))
    masks = compute_sets(sc.problem, grid, sc.run["eps_set"])
    conv = detect_convergence(log, system, window, sc.run["osc_tol"], 0.0, masks.A_mask)
    rep = {"convergence": conv.to_json(), "sets": masks.to_json(), "thetas": system.thetas, "dt": log.dt,
           "drift": sc.drift}
    rows = _trajectory_rows(log, sc.drift)
    out.series["trajectory"] = rows
    out.series["oscillation"] = [{"t_end": t, "oscillation": o} for t, o in conv.oscillation_series]
    out.check("theta_dominates_final_gradients", 0.0, 0.0, system.theta_ok(log.final.field.values))

    if "verdict" in exp:
        out.check("verdict", 0.0, 0.0, conv.verdict.value == exp["verdict"])
    if conv.verdict is Verdict.NON_CONVERGENT:
        out.check("non_convergence_only_off_hypotheses", 0.0, 0.0,
                  masks.A_empty or (sc.audit is not None and not sc.audit.convergence_hypotheses))
    if "min_oscillation" in exp:
        out.check("oscillation_lower_bound", -conv.oscillation, -float(exp["min_oscillation"]))

    if conv.verdict is Verdict.CONVERGED:
        u_inf = conv.u_infinity
        out.fields["u_infinity"] = u_inf
        out.check("stationarity_residual", conv.stationarity_residual, float(exp.get("residual_tol", 5e-2)))
        if conv.equality_deviation is not None:
            out.check("components_agree_on_A", conv.equality_deviation, conv.equality_tol)

    if not masks.A_empty:
        cells = masks.A_cells()
        try:
            lam = lambda_on_cells(sc.problem, grid, cells)
        except HJSysError as exc:
            rep["functionals"] = {"skipped": str(exc)}
        else:
            mono_tol = float(sc.run["mono_tol"])
            lt = monitor_lambda_functional(log, masks.A_mask, lam, mono_tol)
            mt = monitor_max_functional(log, masks.A_mask, mono_tol)
            rep["functionals"] = {"lambda": lt.to_json(), "max": mt.to_json()}
            out.check("lambda_functional_nonincreasing", lt.worst_increase, mono_tol)
            out.check("max_functional_nonincreasing", mt.worst_increase, mono_tol)
            out.series["functionals"] = [
                {"t": float(t), "cell": int(cell), "lambda_value": float(lt.values[k, j]),
                 "max_value": float(mt.values[k, j])}
                for k, t in enumerate(lt.times) for j, cell in enumerate(cells)
            ]
            if system.m == 2 and conv.u_infinity is not None:
                flat = conv.u_infinity.values.reshape(2, -1)[:, cells]
                larger = (flat[1] > flat[0]).astype(int)
                joint = joint_limits_m2(lt.limit, mt.limit, lam, larger)
                rep["functionals"]["joint_limit_gap"] = float(np.max(np.abs(joint - flat)))
            times = lt.times
            out.figures.append(lambda d: _plot_functionals(times, {"lambda": lt.values, "max": mt.values},
                                                           d / "functionals.png", "functionals on A"))
        if sc.run["t0"] is not None:
            cell = int(cells[0])
            D = system.coupling.at(cell)
            dev = aubry_ode_check(log, cell, D, float(sc.run["t0"]), masks.A_mask)
            rep["aubry_ode"] = {"cell": cell, "t0": float(sc.run["t0"]), "deviation": dev}
            out.check("aubry_ode_deviation", dev, float(exp.get("aubry_tol", 5e-2)))

    reference = sc.run["reference"]
    x = grid.axis()
    if reference == "scalar_well" and conv.u_infinity is not None:
        ref = scalar_well_reference(x)
        u = conv.u_infinity.values[0]
        err = float(np.max(np.abs(u - ref)))
        half = grid.n // 2
        rep["reference"] = {"kind": reference, "sup_error": err, "u_half_minus_u_zero": float(u[half] - u[0])}
        if "reference_error" in exp:
            out.check("reference_error", err, float(exp["reference_error"]))
            out.check("u_half_minus_u_zero", abs(float(u[half] - u[0]) - 0.5), float(exp["reference_error"]))
        out.figures.append(lambda d: _plot_field(conv.u_infinity, d / "u_infinity.png", f"{sc.name}: limit",
                                                 sc.problem.labels, reference=ref))
    elif reference == "traveling_sine":
        errs = [float(np.max(np.abs(s - np.sin(x - t)))) for t, s in zip(log.times, log.snapshots) if t <= 1 + 1e-12]
        err = max(errs)
        rep["reference"] = {"kind": reference, "sup_error_t_le_1": err,
                            "final_error": float(np.max(np.abs(log.final.field.values - np.sin(x - T))))}
        if "reference_error" in exp:
            out.check("reference_error", err, float(exp["reference_error"]))
    elif reference is not None and reference != "scalar_well":
        raise PreconditionFailed(f"unknown reference {reference!r}")

    final = VectorGridField(grid, log.final.field.values + sc.drift * T, T)
    out.fields["final"] = final
    out.figures.append(lambda d: _plot_field(final, d / "final.png", f"{sc.name}: u(., {T:g})", sc.problem.labels))
    osc_rows = out.series["oscillation"]
    if osc_rows:
        out.figures.append(lambda d: _plot_series(osc_rows, "t_end", ["oscillation"], d / "oscillation.png",
                                                  "oscillation per window", logy=True))
    out.report["longtime"] = rep
    return out


def cmd_control(sc: Scenario) -> RunOutput:
    out = RunOutput()
    prob = sc.control
    if prob is None:
        raise PreconditionFailed("the control command needs a control scenario (with 'gamma')")
    exp = _expect(sc)
    spec = sc.spec
    grid = sc.grid
    dt = sc.run["dt"]
    dp = dp_value(prob, grid, dt)
    x0 = np.atleast_1d(np.asarray(spec.get("x0", [0.0] * prob.dim), dtype=float))
    i0 = int(spec.get("i0", 0))
    pts = tuple(np.array([v]) for v in x0)
    dp_at = float(periodic_interp(dp.values[-1][i0], grid, pts)[0])
    policy = sc.policy if sc.policy is not None else feedback_policy(dp)
    mc = simulate_pdmp(prob, policy, x0, i0, seed=int(sc.run["seed"]), n_paths=int(spec.get("paths", 10_000)),
                       dt=dp.dt)
    rep = {"mc": mc.to_json(), "dp": {"value_at_start": dp_at, "dt": dp.dt, "grid": grid.to_json()},
           "start": {"x0": x0, "i0": i0}, "policy": policy.kind.value}
    if "mc_reference" in exp:
        k = float(exp.get("mc_sigmas", 3))
        out.check("mc_within_sigmas", abs(mc.mean - float(exp["mc_reference"])), k * mc.stderr)
    if "dp_reference" in exp:
        out.check("dp_reference", abs(dp_at - float(exp["dp_reference"])), float(exp["dp_tol"]))
    xv = sc.run.get("xval")
    if xv:
        T = float(xv.get("horizon", prob.T))
        sigma = tuple(float(s) if not isinstance(s, str) else parse_expression(s) for s in xv.get("sigma", prob.sigma))
        f = tuple(float(s) if not isinstance(s, str) else parse_expression(s) for s in xv.get("f", prob.f))
        xprob = ControlProblem(sigma, f, prob.gamma, T, prob.u0, prob.period, prob.dim)
        n = int(xv.get("grid", grid.n))
        coarse = cross_validate(xprob, TorusGrid(prob.dim, n, prob.period))
        fine = cross_validate(xprob, TorusGrid(prob.dim, 2 * n, prob.period))
        d0 = float(coarse.max_per_mode.max())
        d1 = float(fine.max_per_mode.max())
        rep["cross_validation"] = {"grid": n, "coarse": coarse.to_json(), "refined": fine.to_json(),
                                   "ratio": d1 / d0 if d0 > 0 else 0.0}
        if "xval_tol" in exp:
            out.check("dp_pde_discrepancy", d0, float(exp["xval_tol"]))
        out.check("discrepancy_shrinks_under_refinement", d1, d0, d1 <= 0.75 * d0 or d0 <= 1e-12)
        out.series["cross_validation"] = [
            {"t": float(t), "grid": g, **{f"mode_{i + 1}": float(v) for i, v in enumerate(row)}}
            for g, cv in ((n, coarse), (2 * n, fine)) for t, row in zip(cv.times, cv.discrepancy)
        ]
    out.fields["dp_value"] = VectorGridField(grid, dp.values[-1], float(dp.times[-1]))
    fld = out.fields["dp_value"]
    out.figures.append(lambda d: _plot_field(fld, d / "dp_value.png", f"{sc.name}: DP value at T"))
    out.report["control"] = rep
    return out


HANDLERS = {
    "analyze-coupling": cmd_analyze_coupling,
    "evolve": cmd_evolve,
    "ergodic": cmd_ergodic,
    "longtime": cmd_longtime,
    "control": cmd_control,
}


# plotting is imported lazily so library users never pay for matplotlib
def _plot_field(*args, **kwargs):
    from .plotting import plot_field

    return plot_field(*args, **kwargs)


def _plot_series(*args, **kwargs):
    from .plotting import plot_series

    return plot_series(*args, **kwargs)


def _plot_functionals(*args, **kwargs):
    from .plotting import plot_functionals

    return plot_functionals(*args, **kwargs)


# --------------------------------------------------------------------------
# orchestration


def run_scenario(sc: Scenario, command: str, out_dir: Path, figures: bool = True) -> int:
    """Run ``command`` on ``sc`` and write all artifacts; returns the exit status."""
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"scenario": sc.spec, "name": sc.name, "command": command, "warnings": sc.warnings,
              "audit": sc.audit.to_json() if sc.audit is not None else None}
    start = time.perf_counter()
    try:
        result = HANDLERS[command](sc)
    except HJSysError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["assertions"] = []
        report["exit_status"] = 2
        io.write_json(out_dir / "report.json", report)
        logger.error("%s: %s: %s", sc.name, type(exc).__name__, exc)
        return 2
    report.update(result.report)
    report["assertions"] = [c.to_json() for c in result.checks]
    failed = [c.name for c in result.checks if not c.passed]
    status = 1 if failed else 0
    report["failed_assertions"] = failed
    report["exit_status"] = status
    for name, rows in result.series.items():
        io.write_rows_csv(out_dir / "series" / f"{name}.csv", rows)
    for name, fld in result.fields.items():
        io.write_field_binary(out_dir / "fields" / name, fld)
    if figures:
        for draw in result.figures:
            draw(out_dir / "figures")
    io.write_json(out_dir / "report.json", report)
    logger.info("%s %s finished in %.2fs (status %d)", sc.name, command, time.perf_counter() - start, status)
    for name in failed:
        logger.error("assertion failed: %s", name)
    return status


def _load(path, overrides: dict, name: str | None = None) -> Scenario:
    data = json.loads(Path(path).read_text())
    data = copy.deepcopy(data)
    run = data.setdefault("run", {})
    for key, value in overrides.items():
        if value is not None:
            if key == "seed":
                data.pop("seed", None)
            run[key] = value
    return scenario_from_dict(data, name=name or data.get("name", Path(path).stem))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (HJSYS_OUT overrides)")
    common.add_argument("--grid", type=int, default=None, help="cells per axis")
    common.add_argument("--horizon", type=float, default=None, help="time horizon")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="hjsys", description="Weakly coupled Hamilton-Jacobi systems on the torus.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--scenario", required=True, help="scenario JSON file")
    g = sub.add_parser("gallery", parents=[common], help="run a bundled example scenario")
    g.add_argument("name", choices=["ex49", "ex56", "scalar-nr", "two-well", "control-xval"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"grid": args.grid, "horizon": args.horizon, "seed": args.seed}
    out_root = os.environ.get("HJSYS_OUT") or args.out
    try:
        if args.command == "gallery":
            from importlib import resources

            with resources.as_file(gallery_path(args.name)) as p:
                sc = _load(p, overrides, name=args.name)
            command = sc.run["command"]
        else:
            sc = _load(args.scenario, overrides)
            command = args.command
    except (HJSysError, OSError, json.JSONDecodeError) as exc:
        print(f"hjsys: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out_root) if out_root else Path("hjsys_out") / sc.name
    with threadpool_limits(limits=args.threads):
        status = run_scenario(sc, command, out_dir, figures=not args.no_figures)
    print(f"{sc.name} {command}: {'ok' if status == 0 else 'FAILED'} -> {out_dir / 'report.json'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
