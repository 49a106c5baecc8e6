"""
JSON scenario files.

A scenario declares a problem and how to run it::

    {
      "name": "two-well",
      "m": 2, "dim": 1, "period": 1,
      "hamiltonians": [{"kind": "eikonal", "sigma": "1", "f": "1 - cos(2*pi*x)"}, ...],
      "coupling": [[1, -1], [-1, 1]],
      "u0": ["0", "0"]  or  {"random_fourier": {"modes": 3, "amplitude": 1}},
      "run": {"command": "longtime", "grid": 512, "horizon": 50, ...}
    }

Control scenarios replace ``hamiltonians``/``coupling`` by ``gamma`` (switching
rates), ``sigma`` and ``f`` (one expression per mode) and add ``policy``,
``paths``, ``x0`` and ``i0``.  Matrix entries and ``period`` may be numbers
or expressions; coupling entries that mention ``x``/``y`` make the coupling
vary in space.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .control import ControlProblem, PolicyKind, PolicySpec
from .errors import AuditFatal, ExpressionSyntaxError, PreconditionFailed, SchemaError
from .expressions import parse_expression
from .grid import TorusGrid
from .model import AssumptionAudit, HamiltonianKind, HamiltonianSpec, ModelProblem, assumption_audit

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

RUN_DEFAULTS = {
    "command": "evolve",
    "grid": 128,
    "horizon": 10.0,
    "sample_every": 0.1,
    "window": 5.0,
    "osc_tol": None,
    "mono_tol": 1e-3,
    "seed": 0,
    "lambda0": 0.5,
    "levels": 12,
    "tol": 1e-10,
    "discount": None,
    "eps_set": None,
    "shift_costs": False,
    "reference": None,
    "t0": None,
    "dt": None,
    "xval": None,
    "expect": {},
}

NUMERIC_RUN_KEYS = ("horizon", "window", "sample_every", "osc_tol", "mono_tol", "lambda0", "tol", "discount",
                    "eps_set", "t0", "dt")

GALLERY = {
    "ex49": "ex49.json",
    "ex56": "ex56.json",
    "scalar-nr": "namah_roquejoffre_scalar.json",
    "two-well": "two_well.json",
    "control-xval": "control_xval.json",
}


@dataclass
class Scenario:
    name: str
    kind: str  # "model" or "control"
    problem: ModelProblem
    run: dict
    spec: dict
    control: ControlProblem | None = None
    policy: PolicySpec | None = None
    audit: AssumptionAudit | None = None
    warnings: list[str] = field(default_factory=list)
    drift: float = 0.0

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.problem.dim, int(self.run["grid"]), self.problem.period)


class RandomFourier:
    """Random trigonometric polynomial, a smooth (hence Lipschitz) periodic function."""

    def __init__(self, modes: int, amplitude: float, seed: int, period: float, dim: int):
        rng = np.random.default_rng(seed)
        self.period = period
        self.terms = []
        for k in range(1, modes + 1):
            for _ in range(dim):
                wave = rng.integers(-k, k + 1, size=dim)
                wave[rng.integers(dim)] = k
                self.terms.append((amplitude * rng.normal() / k, wave, rng.uniform(0, 2 * np.pi)))

    def __call__(self, *coords):
        out = np.zeros(np.shape(coords[0]))
        for amp, wave, phase in self.terms:
            arg = sum(w * c for w, c in zip(wave, coords)) * (2 * np.pi / self.period)
            out = out + amp * np.sin(arg + phase)
        return out


def _expr(value, what: str):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise SchemaError(f"{what}: expected a number or expression, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    try:
        e = parse_expression(value)
    except ExpressionSyntaxError as exc:
        raise SchemaError(f"{what}: {exc} (at position {exc.position})") from exc
    return e


def _constant(value, what: str) -> float:
    e = _expr(value, what)
    return e if isinstance(e, float) else float(e(np.zeros(1))[0])


def _canon(value):
    """Plain numbers, strings stripped; used for the canonical spec."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (int, float)):
        return int(value) if isinstance(value, int) else float(value)
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, list):
        return [_canon(v) for v in value]
    if isinstance(value, dict):
        return {k: _canon(v) for k, v in value.items()}
    return value


def _matrix(raw, m: int, what: str):
    if not isinstance(raw, list) or len(raw) != m or any(not isinstance(r, list) or len(r) != m for r in raw):
        shape = (len(raw), len(raw[0]) if raw and isinstance(raw[0], list) else "?") if isinstance(raw, list) else "?"
        raise SchemaError(f"{what} must be {m}x{m}, got shape {shape}")
    entries = [[_expr(v, f"{what}[{i}][{j}]") for j, v in enumerate(row)] for i, row in enumerate(raw)]
    if all(isinstance(v, float) for row in entries for v in row):
        return np.array(entries, dtype=float)

    def field_fn(*coords):
        shape = np.shape(coords[0])
        out = np.empty(shape + (m, m))
        for i in range(m):
            for j in range(m):
                v = entries[i][j]
                out[..., i, j] = v if isinstance(v, float) else v(*coords)
        return out

    return field_fn


def _initial(raw, m: int, seed: int, period: float, dim: int):
    if raw is None:
        return (0.0,) * m
    if isinstance(raw, dict):
        if set(raw) != {"random_fourier"}:
            raise SchemaError(f"u0: unknown generator {sorted(raw)}")
        opts = raw["random_fourier"]
        modes = int(opts.get("modes", 3))
        amp = float(opts.get("amplitude", 1.0))
        return tuple(RandomFourier(modes, amp, seed * 1009 + i, period, dim) for i in range(m))
    if not isinstance(raw, list):
        raise SchemaError("u0 must be a list of expressions or a generator object")
    if len(raw) != m:
        raise AuditFatal(f"{len(raw)} initial data for m={m}")
    return tuple(_expr(v, f"u0[{i}]") for i, v in enumerate(raw))


def _hamiltonian(raw: dict, i: int, dim: int) -> HamiltonianSpec:
    if not isinstance(raw, dict):
        raise SchemaError(f"hamiltonians[{i}] must be an object")
    try:
        kind = HamiltonianKind(raw.get("kind", "eikonal"))
    except ValueError as exc:
        raise SchemaError(f"hamiltonians[{i}].kind: {exc}") from exc
    if kind is HamiltonianKind.CUSTOM:
        raise SchemaError("custom Hamiltonians cannot be declared in scenario files")
    f = _expr(raw.get("f", 0.0), f"hamiltonians[{i}].f")
    sigma = _expr(raw.get("sigma", 1.0), f"hamiltonians[{i}].sigma")
    shift = raw.get("shift")
    if kind is HamiltonianKind.SHIFTED_EIKONAL:
        shift = np.atleast_1d(np.asarray(shift if shift is not None else [0.0] * dim, dtype=float))
        if shift.size != dim:
            raise SchemaError(f"hamiltonians[{i}].shift must have {dim} entries")
        shift = tuple(shift)
    return HamiltonianSpec(kind, f=f, sigma=sigma, shift=shift, label=raw.get("label", ""))


def _policy(raw) -> PolicySpec | None:
    raw = raw or {"kind": "zero"}
    try:
        kind = PolicyKind(raw.get("kind", "zero"))
    except ValueError as exc:
        raise SchemaError(f"policy.kind: {exc}") from exc
    if kind is PolicyKind.FEEDBACK:
        # the direction table comes from the DP solve at run time
        return None
    target = raw.get("target")
    return PolicySpec(kind, target=tuple(np.atleast_1d(target).astype(float)) if target is not None else None)


def scenario_from_dict(data: dict, name: str | None = None, audit: bool = True) -> Scenario:
    """Validate ``data`` and build a :class:`Scenario` with defaults filled in."""
    if not isinstance(data, dict):
        raise SchemaError("scenario must be a JSON object")
    data = copy.deepcopy(data)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version}")
    run_raw = data.get("run", {})
    if not isinstance(run_raw, dict):
        raise SchemaError("run must be an object")
    unknown = set(run_raw) - set(RUN_DEFAULTS)
    if unknown:
        raise SchemaError(f"unknown run settings {sorted(unknown)}")
    run = {**copy.deepcopy(RUN_DEFAULTS), **run_raw}
    if "seed" in data:
        run["seed"] = data.pop("seed")
    run_spec = copy.deepcopy(run)
    for key in NUMERIC_RUN_KEYS:
        if run[key] is not None:
            run[key] = _constant(run[key], f"run.{key}")
    is_control = "gamma" in data
    dim = int(data.get("dim", 1))
    if dim not in (1, 2):
        raise SchemaError(f"dim must be 1 or 2, got {dim}")
    period = _constant(data.get("period", 1.0), "period")
    if "m" not in data:
        raise SchemaError("missing required key 'm'")
    m = data["m"]
    if not isinstance(m, int) or m < 1:
        raise SchemaError(f"m must be a positive integer, got {m!r}")
    seed = int(run["seed"])
    u0 = _initial(data.get("u0"), m, seed, period, dim)

    ctrl = policy = None
    if is_control:
        for key in ("sigma", "f"):
            if not isinstance(data.get(key), list):
                raise SchemaError(f"control scenario needs a list '{key}'")
            if len(data[key]) != m:
                raise AuditFatal(f"{len(data[key])} entries in '{key}' for m={m}")
        gamma = _matrix(data["gamma"], m, "gamma")
        if callable(gamma):
            raise SchemaError("switching rates must be constant")
        sigma = tuple(_expr(v, f"sigma[{i}]") for i, v in enumerate(data["sigma"]))
        f = tuple(_expr(v, f"f[{i}]") for i, v in enumerate(data["f"]))
        try:
            ctrl = ControlProblem(sigma, f, gamma, float(run["horizon"]), u0, period, dim)
        except ValueError as exc:
            raise SchemaError(str(exc)) from exc
        policy = _policy(data.get("policy"))
        problem = ctrl.to_model_problem()
    else:
        hams = data.get("hamiltonians")
        if not isinstance(hams, list):
            raise SchemaError("missing list 'hamiltonians'")
        if len(hams) != m:
            raise AuditFatal(f"{len(hams)} Hamiltonians for m={m}")
        if "coupling" not in data:
            raise SchemaError("missing key 'coupling'")
        coupling = _matrix(data["coupling"], m, "coupling")
        hs = tuple(_hamiltonian(h, i, dim) for i, h in enumerate(hams))
        problem = ModelProblem(hs, coupling, period, dim, u0)

    spec = _canon(data)
    spec["schema_version"] = SCHEMA_VERSION
    spec["run"] = _canon(run_spec)
    sc = Scenario(name or data.get("name", "scenario"), "control" if is_control else "model", problem, run, spec,
                  ctrl, policy, drift=float(data.get("cost_shift", 0.0)))
    if audit:
        sc.audit = assumption_audit(problem, sc.grid)
        sc.warnings = [f"assumption '{k}' fails on the grid" for k in sc.audit.failed if k != "row_sums_zero"]
        for w in sc.warnings:
            logger.warning("%s: %s", sc.name, w)
    if run.get("shift_costs"):
        sc = shift_costs_preprocessor(sc)
    return sc


def load_scenario(path, audit: bool = True) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data, name=data.get("name", path.stem) if isinstance(data, dict) else None, audit=audit)


def dump_scenario(scenario: Scenario) -> dict:
    """Canonical JSON form; loading it again gives the same canonical form."""
    return copy.deepcopy(scenario.spec)


def gallery_path(name: str):
    if name not in GALLERY:
        raise SchemaError(f"unknown gallery entry {name!r}; choose from {sorted(GALLERY)}")
    return resources.files("hjsys") / "scenarios" / GALLERY[name]


def load_gallery(name: str, audit: bool = True) -> Scenario:
    with resources.as_file(gallery_path(name)) as p:
        sc = load_scenario(p, audit=audit)
    sc.name = name
    return sc


def shift_costs_preprocessor(scenario: Scenario) -> Scenario:
    """Subtract a common cost minimum ``fbar`` from every ``f_i``.

    Needs zero row sums everywhere and a cell where every ``f_i`` attains the
    same minimum ``fbar >= 0``.  A solution ``w`` of the shifted system gives
    the original one as ``w + fbar t``; ``drift`` records ``fbar``.
    """
    if scenario.kind != "model":
        raise PreconditionFailed("cost shifting applies to model scenarios")
    problem = scenario.problem
    grid = scenario.grid
    rows = problem.coupling_on(grid).row_sums()
    if np.max(np.abs(rows)) > 1e-12:
        raise PreconditionFailed("cost shifting needs zero row sums everywhere")
    costs = problem.costs_on(grid).reshape(problem.m, -1)
    mins = costs.min(axis=1)
    fbar = float(mins[0])
    tol = 1e-9 * (1 + np.abs(costs).max())
    if np.any(np.abs(mins - fbar) > tol):
        raise PreconditionFailed(f"cost minima differ: {mins.tolist()}")
    if fbar < -tol:
        raise PreconditionFailed(f"common minimum {fbar:g} is negative")
    common = np.all(costs <= mins[:, None] + tol, axis=0)
    if not common.any():
        raise PreconditionFailed("the costs attain their minimum at different points")
    if fbar == 0.0:
        return scenario
    new_costs = tuple(_shifted(h.f, fbar) for h in problem.hamiltonians)
    spec = copy.deepcopy(scenario.spec)
    for h in spec.get("hamiltonians", []):
        text = h.get("f", 0.0)
        h["f"] = f"({text}) - {fbar!r}" if isinstance(text, str) else float(text) - fbar
    spec["run"]["shift_costs"] = False
    spec["cost_shift"] = fbar
    return replace(scenario, problem=problem.with_costs(new_costs), spec=spec, drift=scenario.drift + fbar)


def _shifted(f, fbar: float):
    if callable(f):
        return lambda *coords: f(*coords) - fbar
    return float(f) - fbar
