"""Command-line entry point: ``ifslab <command> --system FILE --seed N [options]``.

Every command writes a JSON report bundle (and CSV tables where useful) into
``--out``.  Bundles are deterministic given the configuration and seed: keys are
sorted, no timestamps are recorded and files are written atomically.

Exit codes: 0 all gates pass, 2 configuration error, 3 hypothesis-verification
failure, 4 diagnostic-gate failure, 5 internal numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import brackets as br
from . import empirical as emp
from . import norms as nm
from . import simulator as sim
from .errors import ConfigError, IfsError, MissingArtifacts
from .handles import Affine, Const, Logistic, Ramp
from .rng import stream
from .system import IfsSystem, load_system, probe_points, validate_system
from .verifier import verify

SCHEMA = "ifslab-report/1"
COMMANDS = ("verify", "norms", "simulate", "invariant", "decay", "clt", "eclt", "brackets", "report")

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_GATE, EXIT_NUMERIC = 0, 2, 3, 4, 5

# default run length per command
DEFAULT_N = {"verify": 1000, "norms": 1000, "simulate": 10**4, "invariant": 10**6, "decay": 10**6, "clt": 10**4, "eclt": 10**4, "brackets": 10**6}
DEFAULT_REPS = {"clt": 2000, "eclt": 500}

DEFAULTS = {
    "burn_in": 1000,
    "alpha": nm.DEFAULT_ALPHA,
    "beta": nm.DEFAULT_BETA,
    "r": nm.DEFAULT_R,
    "gamma": br.DEFAULT_GAMMA,
    "c": br.DEFAULT_C_INTEGRAL,
    "samples": 1000,
    "n_max": 12,
    "grid": None,  # nodes per axis; 50 for d=1, 20 for d=2
    "mean_ref": "estimate",
    "ref_factor": 1000,
    "kernel_factor": 100,
    "gaussian_reps": 10_000,
    "eps_ladder": list(br.DEFAULT_LADDER),
    "deltas": [0.2, 0.1, 0.05, 0.02],
    "probes": 10_000,
    "tolerances": {},
}

# report files produced by each command, and the claim each one supports
CLAIMS = {
    "verify": "contraction_and_regularity_conditions",
    "invariant": "attractive_invariant_measure",
    "decay": "geometric_decay_of_iterates",
    "clt": "central_limit_for_additive_functionals",
    "eclt": "empirical_process_gaussian_limit",
    "brackets": "modulus_condition_and_bracket_scaling",
}


@dataclass
class RunConfig:
    command: str
    system_path: str | None
    seed: int
    n: int
    burn_in: int
    reps: int
    alpha: float
    beta: float
    r: float
    gamma: float
    c: float
    output_dir: str
    extra: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Every resolved setting except the output location."""
        out = {k: getattr(self, k) for k in ("command", "system_path", "seed", "n", "burn_in", "reps", "alpha", "beta", "r", "gamma", "c")}
        out.update(self.extra)
        return out


# --- serialization ---------------------------------------------------------------------


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_text(header: list, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- configuration -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifslab", description="Diagnostics for iterated function systems with place-dependent probabilities.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--system", help="system JSON file, or a bundled name (half, tilt, expanding)")
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--n", type=int, help="run length; the default depends on the command")
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--out", help="output directory (default: ./ifslab-out)")
    p.add_argument("--config", help="JSON file with any of the settings above plus advanced keys; flags win")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in ("system", "seed", "n", "burn_in", "reps", "alpha", "beta", "r", "gamma", "c", "out"):
        v = getattr(args, key)
        if v is not None:
            doc[key] = v
    cmd = args.command
    if doc.get("seed") is None:
        raise ConfigError("--seed is required")
    if cmd != "report" and not doc.get("system"):
        raise ConfigError("--system is required")
    merged = {**DEFAULTS, **doc}
    unknown = set(merged) - set(DEFAULTS) - {"system", "seed", "n", "reps", "out"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(
            command=cmd,
            system_path=merged.get("system"),
            seed=int(merged["seed"]),
            n=int(merged.get("n") or DEFAULT_N.get(cmd, 0)),
            burn_in=int(merged["burn_in"]),
            reps=int(merged.get("reps") or DEFAULT_REPS.get(cmd, 0)),
            alpha=float(merged["alpha"]),
            beta=float(merged["beta"]),
            r=float(merged["r"]),
            gamma=float(merged["gamma"]),
            c=float(merged["c"]),
            output_dir=str(merged.get("out") or "ifslab-out"),
            extra={k: merged[k] for k in DEFAULTS if k not in ("burn_in", "alpha", "beta", "r", "gamma", "c")},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed setting: {exc}") from exc
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: RunConfig) -> None:
    nm.NormParams(cfg.alpha, cfg.beta)  # raises ConfigError
    if not 1.0 < cfg.r < 2.0:
        raise ConfigError(f"r must lie in (1, 2), got {cfg.r}")
    if cfg.gamma <= 1.0:
        raise ConfigError(f"gamma must exceed 1, got {cfg.gamma}")
    if cfg.c < 0:
        raise ConfigError(f"c must be nonnegative, got {cfg.c}")
    if cfg.n < 1 and cfg.command != "report":
        raise ConfigError("n must be positive")
    if cfg.burn_in < 0 or cfg.reps < 0:
        raise ConfigError("burn_in and reps must be nonnegative")
    if cfg.extra["mean_ref"] not in ("estimate", "uniform"):
        raise ConfigError("mean_ref must be 'estimate' or 'uniform'")


def _load(cfg: RunConfig) -> IfsSystem:
    try:
        system = load_system(cfg.system_path)
    except IfsError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load system {cfg.system_path!r}: {exc}") from exc
    report = validate_system(system, seed=cfg.seed)
    if report.violations:
        raise ConfigError("invalid system: " + "; ".join(report.violations))
    return system


def _system_meta(system: IfsSystem) -> dict:
    text = json.dumps(_plain(system.to_dict()), sort_keys=True)
    return {"name": system.name, "dimension": system.dimension, "sha256": hashlib.sha256(text.encode()).hexdigest()}


def _first_coordinate(system: IfsSystem) -> Affine:
    w = np.zeros(system.dimension)
    w[0] = 1.0
    return Affine(w, 0.0, system.domain_box)


def _sub_seed(cfg: RunConfig, label: str) -> int:
    return int(stream(cfg.seed, "cli", label).integers(2**63))


# --- commands ------------------------------------------------------------------------------
# each returns (payload, gates, exit code on gate failure, extra files)


def cmd_verify(cfg, system):
    rep = verify(system, samples=cfg.extra["samples"], seed=cfg.seed)
    return rep.to_dict(), rep.gates, EXIT_HYPOTHESIS, {}


def _handle_family(system: IfsSystem) -> dict:
    box = system.domain_box
    d = system.dimension
    mid = 0.5 * (box.lo + box.hi)
    mid = mid[[0, d - 1]]
    width = float(np.min(box.hi - box.lo))
    return {
        "constant": Const(1.0),
        "first_coordinate": _first_coordinate(system),
        "ramp": Ramp(float(mid[0]), 0.1 * width, 0),
        "logistic": Logistic(float(mid[0]), 0.25 * width, d - 1),
    }


def cmd_norms(cfg, system):
    params = nm.NormParams(cfg.alpha, cfg.beta, system.base_point, system.metric)
    box = system.domain_box
    points = probe_points(box, cfg.n, cfg.seed)
    pairs = nm.sample_pairs(box, cfg.n, cfg.seed, metric=system.metric)
    rows, gates = {}, {}
    for name, f in _handle_family(system).items():
        lip = nm.lipschitz_norm(f, points, pairs, system.metric)
        rows[name] = {
            "n_beta": nm.n_beta(f, params, points),
            "m_alpha_beta": nm.m_alpha_beta(f, params, pairs),
            "weighted_norm": nm.weighted_norm(f, params, points, pairs),
            "lipschitz_norm": lip,
            "declared_lipschitz_norm": f.lip_norm,
        }
        gates[f"{name}_sampled_within_declared"] = bool(lip <= f.lip_norm * (1 + 1e-9))
    payload = {
        "norms": rows,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "points": int(points.shape[0]),
        "pairs": int(pairs.shape[0]),
        "method": "max over lattice + seeded uniform points and pairs in the domain box",
    }
    return payload, gates, EXIT_GATE, {}


def cmd_simulate(cfg, system):
    traj = sim.simulate(system, None, cfg.n, cfg.burn_in, cfg.seed)
    d = system.dimension
    # index column: the map that produced the state (blank for the first recorded state)
    produced_by = ["", *(int(i) for i in traj.indices)]
    rows = ([k, i, *map(float, x)] for k, (i, x) in enumerate(zip(produced_by, traj.states)))
    table = _csv_text(["step", "index", *[f"x{c}" for c in range(d)]], rows)
    payload = {
        "n": cfg.n,
        "burn_in": cfg.burn_in,
        "start": traj.start,
        "mean": traj.states.mean(axis=0),
        "index_frequencies": np.bincount(traj.indices, minlength=system.k) / cfg.n,
        "method": "chain simulation with one uniform per step",
    }
    return payload, {"finite": bool(np.all(np.isfinite(traj.states)))}, EXIT_NUMERIC, {"trajectory.csv": table}


def _cdf_nodes(system: IfsSystem) -> np.ndarray:
    return system.domain_box.lattice(101 if system.dimension == 1 else 21)


def cmd_invariant(cfg, system):
    nu = sim.estimate_invariant(system, cfg.n, cfg.burn_in, cfg.seed)
    nodes = _cdf_nodes(system)
    F = nu.cdf(nodes)
    d = system.dimension
    table = _csv_text([*[f"t{c}" for c in range(d)], "F"], ([*map(float, t), float(v)] for t, v in zip(nodes, F)))
    payload = {
        "n": nu.n,
        "burn_in": cfg.burn_in,
        "first_moment": nu.first_moment,
        "first_moment_stderr": nu.stderr(lambda x: system.dist(x, system.base_point)),
        "start_bias_bound": nu.bias_bound,
        "cdf_nodes": int(nodes.shape[0]),
        "method": "empirical measure of one post-burn-in path",
    }
    gates = {"finite_first_moment": math.isfinite(nu.first_moment), "burn_in_bias_small": bool(nu.bias_bound < 1e-6)}
    return payload, gates, EXIT_GATE, {"invariant_cdf.csv": table}


def cmd_decay(cfg, system):
    nu = sim.estimate_invariant(system, cfg.n, cfg.burn_in, cfg.seed)
    f = _first_coordinate(system)
    pts = system.domain_box.lattice(11 if system.dimension == 1 else 5)
    rep = sim.decay_report(system, f, nu, cfg.extra["n_max"], pts, seed=_sub_seed(cfg, "decay"))
    table = _csv_text(["n", "deviation"], ([k, float(v)] for k, v in enumerate(rep.deviations)))
    payload = rep.to_dict() | {"test_points": int(pts.shape[0]), "nu_hat_n": nu.n, "function": "first coordinate"}
    return payload, {"geometric_decay": rep.passed}, EXIT_GATE, {"decay.csv": table}


def cmd_clt(cfg, system):
    f = _first_coordinate(system)
    rep = emp.clt_diagnostic(
        system, f, cfg.n, cfg.reps, cfg.seed, burn_in=cfg.burn_in, ref_n=cfg.extra["ref_factor"] * cfg.n, tolerances=cfg.extra["tolerances"]
    )
    table = _csv_text(["replication", "standardized_sum"], ([i, float(z)] for i, z in enumerate(rep.standardized)))
    payload = rep.to_dict() | {"function": "first coordinate", "reference_n": cfg.extra["ref_factor"] * cfg.n}
    return payload, rep.gates, EXIT_GATE, {"clt_replications.csv": table}


def _mean_reference(cfg, system, grid):
    if cfg.extra["mean_ref"] == "uniform":
        box = system.domain_box
        return emp.MeanReference.analytic(br.UniformCdf(box).cdf)
    return emp.MeanReference.long_run(system, grid, cfg.extra["ref_factor"] * cfg.n, _sub_seed(cfg, "mean-ref"), cfg.burn_in)


def cmd_eclt(cfg, system):
    if system.dimension > 2:
        raise ConfigError("threshold grids are limited to d <= 2")
    pilot = sim.simulate(system, None, 10**5, cfg.burn_in, _sub_seed(cfg, "grid"))
    per_axis = cfg.extra["grid"] or (50 if system.dimension == 1 else 20)
    grid = emp.quantile_grid(pilot, per_axis, system.domain_box)
    mean_ref = _mean_reference(cfg, system, grid)
    ref = sim.simulate(system, None, cfg.extra["kernel_factor"] * cfg.n, cfg.burn_in, _sub_seed(cfg, "kernel"))
    kernel = emp.covariance_kernel(ref, grid)
    tol = cfg.extra["tolerances"].get("eclt_relative", 0.10)
    rep = emp.eclt_diagnostic(system, grid, cfg.n, cfg.reps, cfg.seed, mean_ref, kernel=kernel, gaussian_reps=cfg.extra["gaussian_reps"], burn_in=cfg.burn_in, tolerance=tol)
    files = {
        "eclt_replications.csv": _csv_text(["replication", "ks_statistic"], ([i, float(v)] for i, v in enumerate(rep.ks_stats))),
        "kernel.csv": _csv_text([f"node{j}" for j in range(grid.m)], ([float(v) for v in row] for row in kernel.matrix)),
    }
    payload = rep.to_dict() | {
        "grid_nodes": grid.m,
        "mean_reference": mean_ref.method,
        "kernel": {
            "reference_n": kernel.n,
            "lag_cutoff": kernel.lag_cutoff,
            "settled": kernel.settled,
            "min_eigenvalue": kernel.min_eigenvalue(),
            "trace": float(np.trace(kernel.matrix)),
            "asymmetry_before_symmetrizing": kernel.asymmetry,
        },
    }
    gates = {"quantiles_match": rep.passed, "kernel_psd_within_tolerance": bool(kernel.min_eigenvalue() >= -0.01 * np.trace(kernel.matrix) / grid.m)}
    return payload, gates, EXIT_GATE, files


def cmd_brackets(cfg, system):
    if system.dimension > 2:
        raise ConfigError("rectangle covers are limited to d <= 2")
    d = system.dimension
    nu = sim.estimate_invariant(system, cfg.n, cfg.burn_in, cfg.seed)
    src = br.EmpiricalCdf(nu.support, system.domain_box)
    modulus = br.modulus_of_continuity(src, cfg.extra["deltas"], gammas=(cfg.gamma,))
    C_fit = modulus.fitted_min_C[cfg.gamma]
    gamma_a, C_a = br.budget_from_modulus(C_fit, cfg.gamma, cfg.r, d)
    measure_n = cfg.n if d == 1 else min(cfg.n, 10**4)
    measure = sim.simulate(system, None, measure_n, cfg.burn_in, _sub_seed(cfg, "bracket-measure")).states
    rows, counts, covers, all_valid = [], [], [], True
    for eps in cfg.extra["eps_ladder"]:
        cover = br.build_rectangle_cover(src, eps, cfg.r, gamma_a, C_a, d)
        probes = br.probe_sample(cover, system.domain_box, cfg.extra["probes"], _sub_seed(cfg, f"probes-{eps}"))
        val = br.validate_cover(cover, probes, measure)
        counts.append(cover.count)
        all_valid &= val.passed and cover.lip_norm_bound <= cover.A_budget
        covers.append(cover.to_dict() | {"validity": val.to_dict()})
        rows.append([float(eps), cover.count, float(cover.eta), float(val.lr_max), val.sandwich_violations, val.lr_violations])
    slope = br.check_scaling(cfg.extra["eps_ladder"], counts, d, cfg.r)
    integral = br.check_bracketing_integral(cfg.extra["eps_ladder"], counts, cfg.c, gamma_a, C_a)
    payload = {
        "modulus": modulus.to_dict() | {"source_n": nu.n},
        "budget": {"gamma": gamma_a, "C": C_a, "from_modulus_C": C_fit, "method": "norm budget implied by the fitted modulus bound"},
        "covers": covers,
        "scaling": slope.to_dict(),
        "integral": integral.to_dict(),
        "measure_n": measure_n,
        "method": "quantile thresholds with ramp smoothing; counts are upper bounds on minimal bracketing numbers",
    }
    gates = {
        "modulus_bound": modulus.bound_holds[cfg.gamma],
        "covers_valid": bool(all_valid),
        "scaling": slope.passed,
        "integral": integral.passed,
    }
    table = _csv_text(["eps", "count", "eta", "lr_gap_max", "sandwich_violations", "lr_violations"], rows)
    files = {"bracket_counts.csv": table, "modulus.json": None}
    files["modulus.json"] = dumps({"schema": SCHEMA, "modulus": payload["modulus"]})
    code = EXIT_HYPOTHESIS if not gates["modulus_bound"] else EXIT_GATE
    return payload, gates, code, files


def cmd_report(cfg):
    out = Path(cfg.output_dir)
    claims, found = {}, 0
    for cmd, claim in CLAIMS.items():
        path = out / f"{cmd}.json"
        if not path.exists():
            claims[claim] = {"status": "not run", "source": f"{cmd}.json"}
            continue
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise MissingArtifacts(f"{path.name} is not valid JSON: {exc}") from exc
        if doc.get("schema") != SCHEMA:
            raise MissingArtifacts(f"{path.name} has schema {doc.get('schema')!r}, expected {SCHEMA!r}")
        found += 1
        claims[claim] = {"status": "pass" if doc.get("passed") else "fail", "gates": doc.get("gates", {}), "source": f"{cmd}.json", "seed": doc["config"]["seed"]}
    if found == 0:
        raise MissingArtifacts(f"no command reports found in {out}")
    ran = [c for c in claims.values() if c["status"] != "not run"]
    payload = {"claims": claims, "commands_run": len(ran), "method": "aggregation of per-command report bundles"}
    gates = {name: c["status"] == "pass" for name, c in claims.items() if c["status"] != "not run"}
    return payload, gates, EXIT_GATE, {}


HANDLERS = {
    "verify": cmd_verify,
    "norms": cmd_norms,
    "simulate": cmd_simulate,
    "invariant": cmd_invariant,
    "decay": cmd_decay,
    "clt": cmd_clt,
    "eclt": cmd_eclt,
    "brackets": cmd_brackets,
}


@dataclass
class ReportBundle:
    config: dict
    payload: dict
    gates: dict
    system: dict | None = None
    schema: str = SCHEMA

    @property
    def passed(self) -> bool:
        return all(self.gates.values())

    def to_dict(self) -> dict:
        doc = {"schema": self.schema, "config": self.config, "payload": self.payload, "gates": self.gates, "passed": self.passed}
        if self.system is not None:
            doc["system"] = self.system
        return doc


def run(cfg: RunConfig) -> tuple[ReportBundle, int]:
    """Execute one command and write its artifacts; returns the bundle and exit status."""
    if cfg.command == "report":
        payload, gates, fail_code, files = cmd_report(cfg)
        bundle = ReportBundle(cfg.echo(), payload, gates)
    else:
        system = _load(cfg)
        payload, gates, fail_code, files = HANDLERS[cfg.command](cfg, system)
        bundle = ReportBundle(cfg.echo(), payload, gates, _system_meta(system))
    out = Path(cfg.output_dir)
    for name, text in files.items():
        atomic_write(out / name, text)
    atomic_write(out / f"{cfg.command}.json", dumps(bundle.to_dict()))
    return bundle, EXIT_OK if bundle.passed else fail_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        bundle, code = run(cfg)
    except (ConfigError, MissingArtifacts) as exc:
        print(f"ifslab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IfsError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"ifslab: numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    status = "PASS" if code == EXIT_OK else "FAIL"
    failed = [k for k, v in bundle.gates.items() if not v]
    print(f"{cfg.command}: {status}" + (f" (failed gates: {', '.join(failed)})" if failed else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
