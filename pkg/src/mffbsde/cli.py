"""Command-line entry point.

Every run is described by one JSON file (schema ``mffbsde-run-v1``); the
subcommand selects the pipeline and ``--out`` the output directory, which
receives ``solution.csv``, ``diagnostics.json``, ``report.json`` and
``manifest.json``. Exit codes: 0 success, 2 validation error, 3 solver
non-convergence, 4 condition-check failure under ``--strict``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import lq
from .backward import solve_mf_bsde
from .conditions import (check_domination, check_monotonicity, scalar_example, scalar_example_weights)
from .continuation import ContinuationConfig, fbsde_residual, solve
from .core import (BudgetExceeded, ConvergenceError, DomainError, DominationWeights,
                   LinearCoefficients, MFFBSDEError, NumericError, PerturbationTriple,
                   RankError, TimeGrid, m2_norm)
from .forward import solve_mf_sde
from .noise import MonteCarloBackend, RegressionConfig, TreeBackend

SCHEMA_RUN = "mffbsde-run-v1"

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_CONDITIONS = 0, 2, 3, 4

COMMANDS = ("solve-sde", "solve-bsde", "solve-fbsde", "verify-conditions",
            "lq-forward", "lq-backward", "report")

_matrix = {"type": "array", "items": {"type": ["array", "number"]}}
_vector = {"type": "array", "items": {"type": "number"}}
_tensor = {"type": "array"}

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "grid"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_RUN},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "grid": {
            "type": "object", "required": ["N"], "additionalProperties": False,
            "properties": {"t0": {"type": "number"}, "T": {"type": "number"},
                           "N": {"type": "integer", "minimum": 1}},
        },
        "backend": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["tree", "mc"]},
                "d": {"type": "integer", "minimum": 1},
                "paths": {"type": "integer", "minimum": 2},
                "features": {"enum": ["poly1", "poly2"]},
                "ridge": {"type": "number", "minimum": 0},
            },
        },
        "coefficients": {
            "type": "object",
            "oneOf": [
                {"required": ["linear"]},
                {"required": ["scalar_example"]},
            ],
            "properties": {
                "linear": {
                    "type": "object", "required": ["n"], "additionalProperties": False,
                    "properties": {
                        "n": {"type": "integer", "minimum": 1},
                        "psi": {"type": "object", "additionalProperties": False,
                                "properties": {"matrix": _matrix, "offset": _vector}},
                        "phi": {"type": "object", "additionalProperties": False,
                                "properties": {"matrix": _matrix, "bar": _matrix,
                                               "offset": _vector}},
                        "gamma": {"type": "object", "additionalProperties": False,
                                  "properties": {"matrix": _matrix, "bar": _matrix,
                                                 "offset": _vector}},
                    },
                },
                "scalar_example": {
                    "type": "object", "required": ["k1", "k2"], "additionalProperties": False,
                    "properties": {"k1": {"type": "number"}, "k2": {"type": "number"},
                                   "force": {"type": "boolean"}},
                },
            },
        },
        "weights": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "mu": {"type": "number", "minimum": 0},
                "nu": {"type": "number", "minimum": 0},
                **{k: _matrix for k in ("H", "P", "Pt", "A", "At", "B", "Bt", "C", "Ct")},
            },
        },
        "perturbation": {
            "type": "object", "additionalProperties": False,
            "properties": {"xi": _vector, "eta": _vector},
        },
        "continuation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "delta_init": {"oneOf": [{"type": "number", "exclusiveMinimum": 0,
                                          "maximum": 1}, {"const": "auto"}]},
                "delta_min": {"type": "number", "exclusiveMinimum": 0},
                "fixpoint_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "inner_tol_ratio": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["nested", "direct"]},
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "adaptive": {"type": "boolean"},
                "grow": {"type": "number", "minimum": 1},
                "fast_iters": {"type": "integer", "minimum": 1},
                "probe_pairs": {"type": "integer", "minimum": 3},
            },
        },
        "conditions": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "sample_budget": {"type": "integer", "minimum": 1},
                "orientation": {"enum": ["iii", "iii_prime"]},
                "box_radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "sde": {
            "type": "object", "required": ["n"], "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 1}, "A": _matrix,
                           "Abar": _matrix, "alpha": _vector, "C": _tensor,
                           "Cbar": _tensor, "beta": _tensor, "x0": _vector},
        },
        "bsde": {
            "type": "object", "required": ["n"], "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 1}, "A": _matrix,
                           "Abar": _matrix, "B": _tensor, "Bbar": _tensor,
                           "alpha": _vector, "y_T": _vector},
        },
        "lq": {
            "type": "object", "required": ["problem"], "additionalProperties": False,
            "properties": {
                "action": {"enum": ["solve", "oracle", "compare"]},
                "delta_gap": {"type": "number", "minimum": 0},
                "problem": {"type": "object", "required": ["n", "m"]},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "grid": {"t0": 0.0, "T": 1.0},
    "backend": {"kind": "tree", "d": 1, "paths": 10_000, "features": "poly2", "ridge": 1e-8},
    "continuation": {"delta_init": 1.0, "delta_min": 1e-3, "fixpoint_tol": 1e-10,
                     "max_iters": 200, "inner_tol_ratio": 0.1, "mode": "nested",
                     "damping": 0.5, "adaptive": True, "grow": 1.5, "fast_iters": 8,
                     "probe_pairs": 5},
    "conditions": {"sample_budget": 10_000, "orientation": "iii", "box_radius": 5.0},
}


class ConfigError(DomainError):
    """Invalid run configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConditionFailure(MFFBSDEError):
    """A structural condition check failed under ``--strict``."""


# ---------------------------------------------------------------------------
# configuration


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _shape_error(path, arr, shape):
    return f"{path}: expected shape {tuple(shape)}, got {tuple(np.shape(arr))}"


def _check_shape(errors, path, value, shape):
    if value is None:
        return
    try:
        arr = np.asarray(value, dtype=float)
    except (ValueError, TypeError):
        errors.append(f"{path}: ragged or non-numeric array")
        return
    if arr.shape != tuple(shape):
        if arr.ndim >= 1 and len(shape) >= 1 and arr.shape[0] != shape[0]:
            errors.append(f"{path}: expected {shape[0]} rows, got {arr.shape[0]}")
        else:
            errors.append(_shape_error(path, arr, shape))


def _dimension_check(cfg: dict) -> list:
    errors = []
    d = cfg["backend"]["d"]
    lin = cfg.get("coefficients", {}).get("linear")
    n = None
    if lin is not None:
        n = lin["n"]
        D = n * (2 + d)
        for blk, keys, shape in (("psi", ("matrix",), (n, n)), ("phi", ("matrix", "bar"), (n, n)),
                                 ("gamma", ("matrix", "bar"), (D, D))):
            for key in keys:
                _check_shape(errors, f"coefficients.linear.{blk}.{key}",
                             lin.get(blk, {}).get(key), shape)
        for blk, size in (("psi", n), ("phi", n), ("gamma", D)):
            _check_shape(errors, f"coefficients.linear.{blk}.offset",
                         lin.get(blk, {}).get("offset"), (size,))
    elif "scalar_example" in cfg.get("coefficients", {}):
        n = 1
        if d != 1:
            errors.append("backend.d: the scalar example needs d = 1")
    if n is not None:
        for key in ("xi", "eta"):
            _check_shape(errors, f"perturbation.{key}", cfg.get("perturbation", {}).get(key), (n,))
        w = cfg.get("weights", {})
        for key in ("H", "P", "Pt", "A", "At", "B", "Bt"):
            if key in w and (np.ndim(w[key]) != 2 or np.shape(w[key])[1] != n):
                errors.append(f"weights.{key}: expected {n} columns")
        for key in ("C", "Ct"):
            if key in w and (np.ndim(w[key]) != 2 or np.shape(w[key])[1] != n * d):
                errors.append(f"weights.{key}: expected {n * d} columns")
    for sect, shapes in (("sde", {"A": "nn", "Abar": "nn", "alpha": "n", "C": "dnn",
                                  "Cbar": "dnn", "beta": "dn", "x0": "n"}),
                         ("bsde", {"A": "nn", "Abar": "nn", "B": "dnn", "Bbar": "dnn",
                                   "alpha": "n", "y_T": "n"})):
        if sect in cfg:
            dims = {"n": cfg[sect]["n"], "d": d}
            for key, sym in shapes.items():
                _check_shape(errors, f"{sect}.{key}", cfg[sect].get(key),
                             tuple(dims[c] for c in sym))
    return errors


def validate_config(raw: dict) -> dict:
    """Schema-validate, fill defaults and dimension-check a run description."""
    validator = jsonschema.Draft202012Validator(RUN_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError(
            f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in errors)
    cfg = _merge(DEFAULTS, raw)
    dim_errors = _dimension_check(cfg)
    if dim_errors:
        raise ConfigError(dim_errors)
    return cfg


def load_config(path) -> dict:
    """Read and validate a run configuration file."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from None
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()


def substream_seed(root: int, label: str) -> int:
    """Independent seed for the named sub-stream of the root seed."""
    ss = np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# building objects from a config


def make_backend(cfg: dict):
    g = cfg["grid"]
    grid = TimeGrid(float(g["t0"]), float(g["T"]), int(g["N"]))
    b = cfg["backend"]
    if b["kind"] == "tree":
        return TreeBackend(grid, b["d"])
    reg = RegressionConfig(features=b["features"], ridge=float(b["ridge"]))
    return MonteCarloBackend(substream_seed(cfg["seed"], "simulation"), b["paths"], grid,
                             b["d"], reg)


def make_coefficients(cfg: dict):
    """``(coefficients, default weights or None)``."""
    section = cfg.get("coefficients")
    if section is None:
        raise ConfigError(["coefficients: required for this command"])
    if "scalar_example" in section:
        e = section["scalar_example"]
        coeffs, mu, nu = scalar_example(e["k1"], e["k2"], force=e.get("force", False))
        return coeffs, (mu, nu)
    lin = section["linear"]
    n, d = lin["n"], cfg["backend"]["d"]
    psi, phi, gam = lin.get("psi", {}), lin.get("phi", {}), lin.get("gamma", {})
    return LinearCoefficients(n, d, psi_mat=psi.get("matrix"), psi_off=psi.get("offset"),
                              phi_mat=phi.get("matrix"), phi_bar=phi.get("bar"),
                              phi_off=phi.get("offset"), gamma_mat=gam.get("matrix"),
                              gamma_bar=gam.get("bar"), gamma_off=gam.get("offset")), None


def make_weights(cfg: dict, coeffs, admissible) -> DominationWeights:
    w = dict(cfg.get("weights", {}))
    if admissible is not None and not (set(w) - {"mu", "nu"}):
        mu = w.get("mu", admissible[0] if "nu" not in w else 0.0)
        return scalar_example_weights(mu=mu, nu=w.get("nu", 0.0))
    if not w.get("mu") and not w.get("nu"):
        raise ConfigError(["weights: one of mu, nu must be positive"])
    return DominationWeights.build(coeffs.n, coeffs.d, **w)


def make_continuation(cfg: dict) -> ContinuationConfig:
    c = dict(cfg["continuation"])
    c["probe_seed"] = substream_seed(cfg["seed"], "probes") % (2 ** 32)
    return ContinuationConfig(**c)


def make_perturbation(cfg: dict, backend, n: int):
    p = cfg.get("perturbation")
    if not p:
        return None
    eta = np.broadcast_to(np.asarray(p.get("eta", np.zeros(n)), float), (backend.n_paths, n))
    return PerturbationTriple.from_parts(backend.grid, np.asarray(p.get("xi", np.zeros(n)), float),
                                         eta.copy(), gamma=np.zeros((n, backend.d)))


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


def _canonical(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _write_json(path: Path, obj):
    path.write_text(_canonical(obj))


def write_solution_csv(path: Path, x=None, y=None, z=None):
    """Rows ``(step, scenario, x..., y..., z...)``; ``z`` is blank at the last step."""
    ref = x if x is not None else y
    N1, P = ref.shape[:2]
    header = ["step", "scenario"]
    if x is not None:
        header += [f"x{i + 1}" for i in range(x.shape[2])]
    if y is not None:
        header += [f"y{i + 1}" for i in range(y.shape[2])]
    if z is not None:
        header += [f"z{i + 1}_{j + 1}" for i in range(z.shape[2]) for j in range(z.shape[3])]
    fmt = lambda v: repr(float(v))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(N1):
            for p in range(P):
                row = [k, p]
                if x is not None:
                    row += [fmt(v) for v in x[k, p]]
                if y is not None:
                    row += [fmt(v) for v in y[k, p]]
                if z is not None:
                    row += ([fmt(v) for v in z[k, p].ravel()] if k < z.shape[0]
                            else [""] * (z.shape[2] * z.shape[3]))
                w.writerow(row)


def _diag_dict(diag) -> dict:
    out = diag.to_dict()
    out.pop("seconds", None)        # timing would break byte-identical reruns
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_solve_sde(cfg, backend, args):
    section = cfg.get("sde")
    if section is None:
        raise ConfigError(["sde: required for solve-sde"])
    n, d = section["n"], backend.d
    get = lambda k, shape: np.zeros(shape) if section.get(k) is None else np.asarray(section[k], float)
    A, Ab, al = get("A", (n, n)), get("Abar", (n, n)), get("alpha", (n,))
    C, Cb, be = get("C", (d, n, n)), get("Cbar", (d, n, n)), get("beta", (d, n))
    b = lambda k, x, xb: x @ A.T + Ab @ xb + al
    sig = lambda k, x, xb: np.stack([x @ C[i].T + Cb[i] @ xb + be[i] for i in range(d)], -1)
    x = solve_mf_sde(b, sig, get("x0", (n,)), backend)
    report = {"x_T_mean": backend.mean(x[-1]), "x_T_second_moment":
              backend.mean(np.sum(x[-1] ** 2, axis=-1))}
    return {"x": x}, {"solver": "explicit Euler"}, report


def cmd_solve_bsde(cfg, backend, args):
    section = cfg.get("bsde")
    if section is None:
        raise ConfigError(["bsde: required for solve-bsde"])
    n, d = section["n"], backend.d
    get = lambda k, shape: np.zeros(shape) if section.get(k) is None else np.asarray(section[k], float)
    A, Ab, al = get("A", (n, n)), get("Abar", (n, n)), get("alpha", (n,))
    B, Bb = get("B", (d, n, n)), get("Bbar", (d, n, n))

    def g(k, y, yb, z, zb):
        out = y @ A.T + Ab @ yb + al
        for i in range(d):
            out = out + z[:, :, i] @ B[i].T + Bb[i] @ zb[:, i]
        return out

    y, z = solve_mf_bsde(g, get("y_T", (n,)), backend)
    return {"y": y, "z": z}, {"solver": "implicit backward Euler"}, {"y0": backend.mean(y[0])}


def _verify(cfg, coeffs, weights, backend):
    c = cfg["conditions"]
    times = tuple(backend.grid.times[:-1])
    if isinstance(coeffs, LinearCoefficients) and not coeffs.time_dependent:
        times = times[:1]
    seed = substream_seed(cfg["seed"], "sampling-verifier") % (2 ** 32)
    dom = check_domination(coeffs, weights, c["sample_budget"], seed, c["box_radius"], times)
    mono = check_monotonicity(coeffs, weights, c["sample_budget"], seed, c["orientation"],
                              box_radius=c["box_radius"], times=times)
    return {"domination": dom, "monotonicity": mono, "pass": bool(dom["pass"] and mono["pass"])}


def cmd_verify(cfg, backend, args):
    coeffs, adm = make_coefficients(cfg)
    weights = make_weights(cfg, coeffs, adm)
    return {}, {}, _verify(cfg, coeffs, weights, backend)


def cmd_solve_fbsde(cfg, backend, args):
    coeffs, adm = make_coefficients(cfg)
    weights = make_weights(cfg, coeffs, adm)
    report = {}
    if args.strict:
        report["conditions"] = _verify(cfg, coeffs, weights, backend)
        if not report["conditions"]["pass"]:
            return {}, {}, report
    pert = make_perturbation(cfg, backend, coeffs.n)
    theta, diag = solve(coeffs, weights, make_continuation(cfg), backend, pert)
    report.update({"y0": backend.mean(theta.y[0]), "x_T_mean": backend.mean(theta.x[-1]),
                   "m2_norm": m2_norm(theta),
                   "residual": fbsde_residual(coeffs, theta, backend, pert)})
    return {"x": theta.x, "y": theta.y, "z": theta.z}, _diag_dict(diag), report


def _lq_common(cfg, backend, forward: bool):
    section = cfg.get("lq")
    if section is None:
        raise ConfigError(["lq: required for lq commands"])
    data = dict(section["problem"])
    data.setdefault("d", backend.d)
    if data["d"] != backend.d:
        raise ConfigError([f"lq.problem.d: {data['d']} does not match backend.d {backend.d}"])
    cls = lq.ForwardLQProblem if forward else lq.BackwardLQProblem
    try:
        prob = cls.from_dict(data)
    except DomainError as exc:
        raise ConfigError([f"lq.problem: {exc}"]) from None
    return prob, section.get("action", "solve"), section.get("delta_gap", 1e-6)


def _control_dict(c):
    if isinstance(c, lq.ControlFLQ):
        return {"xi": c.xi, "u_mean": c.u.mean(axis=1)}
    return {"eta_mean": c.eta.mean(axis=0), "u_mean": c.u.mean(axis=1)}


def _cmd_lq(cfg, backend, args, forward: bool):
    prob, action, delta_gap = _lq_common(cfg, backend, forward)
    check = lq.check_pd_flq if forward else lq.check_pd_blq
    pd = check(prob, delta_gap, backend.grid)
    report = {"pd": {"pass": pd.passed, "checks": pd.checks}, "action": action}
    if not pd.passed:
        msg = f"definiteness condition fails: {pd.failures} (witness {pd.witness})"
        raise ConditionFailure(msg) if args.strict else DomainError(msg)
    cost = lq.cost_flq if forward else lq.cost_blq
    stat = lq.stationarity_flq if forward else lq.stationarity_blq
    arrays, diagnostics = {}, {}
    if action in ("solve", "compare"):
        solver = lq.solve_flq if forward else lq.solve_blq
        control, theta, diag = solver(prob, backend, make_continuation(cfg), delta_gap)
        report["fbsde"] = {"control": _control_dict(control),
                           "J": cost(prob, control, backend),
                           "residuals": stat(prob, control, backend)}
        arrays = {"x": theta.x, "y": theta.y, "z": theta.z}
        diagnostics = _diag_dict(diag)
    if action in ("oracle", "compare"):
        oracle = lq.oracle_flq if forward else lq.oracle_blq
        oc, J, info = oracle(prob, backend)
        report["oracle"] = {"control": _control_dict(oc), "J": J, "info": info,
                            "residuals": stat(prob, oc, backend)}
    if action == "compare":
        report["J_gap"] = abs(report["fbsde"]["J"] - report["oracle"]["J"])
    return arrays, diagnostics, report


def cmd_lq_forward(cfg, backend, args):
    return _cmd_lq(cfg, backend, args, True)


def cmd_lq_backward(cfg, backend, args):
    return _cmd_lq(cfg, backend, args, False)


HANDLERS = {"solve-sde": cmd_solve_sde, "solve-bsde": cmd_solve_bsde,
            "solve-fbsde": cmd_solve_fbsde, "verify-conditions": cmd_verify,
            "lq-forward": cmd_lq_forward, "lq-backward": cmd_lq_backward}


def cmd_report(out: Path) -> int:
    """Print a short summary of an existing output directory."""
    try:
        manifest = json.loads((out / "manifest.json").read_text())
        report = json.loads((out / "report.json").read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: cannot read run directory {out}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"command: {manifest.get('command')}  exit: {manifest.get('exit_code')}  "
          f"seed: {manifest.get('seed')}  config: {manifest.get('config_hash', '')[:12]}")
    for key in sorted(report):
        val = report[key]
        if isinstance(val, (dict, list)):
            val = json.dumps(val, sort_keys=True)
            if len(val) > 100:
                val = val[:97] + "..."
        print(f"  {key}: {val}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry points


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mffbsde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, type=Path, help="output directory")
        if name == "report":
            continue
        p.add_argument("--config", required=True, type=Path, help="run description (JSON)")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--backend", choices=("tree", "mc"), help="override backend.kind")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap (recorded; results do not depend on it)")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 when a condition check fails")
    return parser


def _exit_code_for(exc) -> int:
    if isinstance(exc, ConditionFailure):
        return EXIT_CONDITIONS
    if isinstance(exc, (ConvergenceError, NumericError, RankError)):
        return EXIT_SOLVER
    return EXIT_INVALID


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    out: Path = args.out
    if args.command == "report":
        return cmd_report(out)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError(["--seed: must be an unsigned 64-bit integer"])
            cfg["seed"] = args.seed
        if args.backend is not None:
            cfg["backend"]["kind"] = args.backend
        if args.threads < 1:
            raise ConfigError(["--threads: must be positive"])
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    out.mkdir(parents=True, exist_ok=True)
    arrays, diagnostics, report, error = {}, {}, {}, None
    code = EXIT_OK
    try:
        backend = make_backend(cfg)
        arrays, diagnostics, report = HANDLERS[args.command](cfg, backend, args)
        cond = report.get("conditions", report if args.command == "verify-conditions" else None)
        if args.strict and cond is not None and not cond.get("pass", True):
            code = EXIT_CONDITIONS
    except ConditionFailure as exc:
        code, error = EXIT_CONDITIONS, str(exc)
    except (MFFBSDEError, BudgetExceeded, ValueError) as exc:
        code, error = _exit_code_for(exc), f"{type(exc).__name__}: {exc}"
        if isinstance(exc, ConvergenceError) and exc.diagnostics is not None:
            diagnostics = _diag_dict(exc.diagnostics)
    if error:
        report["error"] = error
        print(f"error: {error}", file=sys.stderr)
    if arrays:
        write_solution_csv(out / "solution.csv", arrays.get("x"), arrays.get("y"), arrays.get("z"))
    _write_json(out / "diagnostics.json", diagnostics)
    _write_json(out / "report.json", report)
    manifest = {"schema": SCHEMA_RUN, "version": __version__, "command": args.command,
                "seed": cfg["seed"], "config_hash": config_hash(cfg), "config": cfg,
                "threads": args.threads, "strict": args.strict, "exit_code": code,
                "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
                + ["manifest.json"],
                "diagnostics": {k: diagnostics.get(k) for k in
                                ("converged", "residual", "iterations", "base_solves")
                                if k in diagnostics}}
    _write_json(out / "manifest.json", manifest)
    print(f"{args.command}: exit {code} ({time.perf_counter() - started:.2f} s), "
          f"outputs in {out}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
