"""Batch front door: one JSON config in, report files out.

Invocation::

    semiflow-lab <command> <config.json> [--output-dir D] [--seed N]

Commands: solve, jet, fdcheck, nagumo, lifetime, alpha, certify, daorder.
Outputs are written atomically (temp file + rename): ``report.json`` always,
``trajectory.csv`` / ``jets.json`` where applicable.  All floats are
formatted with 17 significant digits and every random draw flows from the
single configured seed, so identical config+seed produce byte-identical
reports.

Exit codes: 0 success (certify: certified), 1 a check failed its verdict,
2 malformed config or infrastructure error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import models as model_zoo
from .errors import ConfigError, SemiflowLabError
from .manifold import jacobian, lifetime_estimate, nagumo_check, tangent_basis
from .mild_solver import gronwall_certificate, solve
from .realization import (CertifyThresholds, VectorFieldSet, build_alpha,
                          certify)
from .semigroup import domain_order_estimate
from .sensitivity import fd_check, propagate_jet
from .state_space import read_state_csv

COMMANDS = ("solve", "jet", "fdcheck", "nagumo", "lifetime", "alpha",
            "certify", "daorder")


# ---------------------------------------------------------------------------
# deterministic JSON

def _format_float(x: float) -> str:
    if x != x:
        return '"nan"'
    if x == float("inf"):
        return '"inf"'
    if x == float("-inf"):
        return '"-inf"'
    return format(x, ".17g")


def _dump(obj, out: List[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _dump(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, item in enumerate(seq):
            if i:
                out.append(",")
            _dump(item, out)
        out.append("]")
    else:
        raise ConfigError(f"cannot serialize {type(obj).__name__}")


def dumps_17g(obj) -> str:
    out: List[str] = []
    _dump(obj, out)
    return "".join(out)


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# config

@dataclass
class RunConfig:
    command: str
    model_name: str
    model_params: Dict
    T: float = 0.5
    n_steps: int = 100
    tol: float = 1e-10
    thresholds: Dict = field(default_factory=dict)
    ladders: Dict = field(default_factory=dict)
    output_dir: str = "."
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    seed: int = 0
    chart: str = "invariant"
    chart_files: Optional[Dict] = None
    directions: str = "chart_tangent"
    u0: Optional[List[float]] = None
    tube_tol: float = 1e-3
    fd_time: float = 0.25
    k_max: int = 3
    gronwall_pairs: int = 0
    perturbation_scale: float = 1e-3


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_config(command: str, raw: Dict) -> RunConfig:
    _require(command in COMMANDS, f"unknown command {command!r}")
    _require(isinstance(raw, dict), "config root must be a JSON object")
    model = raw.get("model", {})
    _require(isinstance(model, dict) and "name" in model,
             "config needs model.name")
    numeric = raw.get("numeric", {})
    _require(isinstance(numeric, dict), "numeric must be an object")
    cfg = RunConfig(
        command=command,
        model_name=str(model["name"]),
        model_params=dict(model.get("params", {})),
        T=float(numeric.get("T", 0.5)),
        n_steps=int(numeric.get("n_steps", 100)),
        tol=float(numeric.get("tol", 1e-10)),
        thresholds=dict(numeric.get("thresholds", {})),
        ladders=dict(numeric.get("ladders", {})),
        output_dir=str(raw.get("output", {}).get("directory", ".")),
        formats=list(raw.get("output", {}).get("formats", ["csv", "json"])),
        seed=int(raw.get("seed", 0)),
        chart=str(raw.get("chart", "invariant")),
        chart_files=raw.get("chart_files"),
        directions=str(raw.get("directions", "chart_tangent")),
        u0=raw.get("u0"),
        tube_tol=float(numeric.get("tube_tol", 1e-3)),
        fd_time=float(numeric.get("fd_time", 0.25)),
        k_max=int(numeric.get("k_max", 3)),
        gronwall_pairs=int(numeric.get("gronwall_pairs", 0)),
        perturbation_scale=float(numeric.get("perturbation_scale", 1e-3)),
    )
    _require(cfg.T > 0, "numeric.T: must be > 0")
    _require(cfg.n_steps >= 2, "numeric.n_steps: must be >= 2")
    _require(cfg.tol > 0, "numeric.tol: must be > 0")
    _require(set(cfg.formats) <= {"csv", "json"},
             "output.formats: must be a subset of [csv, json]")
    return cfg


def _resolve_chart(cfg: RunConfig, model):
    if cfg.chart_files:
        from .manifold import linear_chart
        offset = read_state_csv(cfg.chart_files["offset"],
                                model.grid.extension_margin)
        basis = [read_state_csv(p, model.grid.extension_margin)
                 for p in cfg.chart_files["basis"]]
        return linear_chart(offset, basis, cfg.chart_files["box"],
                            bool(cfg.chart_files.get("boundary", False)),
                            name="csv_chart")
    return model_zoo.model_chart(model, cfg.chart)


def _trajectory_csv(report) -> str:
    lines = ["t,xi,value"]
    for t, state in zip(report.times, report.states):
        for xi, v in zip(state.grid.nodes, state.values):
            lines.append(f"{format(t, '.17g')},{format(xi, '.17g')},"
                         f"{format(v, '.17g')}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# command handlers; each returns (exit_code, report_dict, extra_files)

def _run_solve(cfg: RunConfig, model):
    rep = solve(model.semigroup, model.P, model.x0, cfg.T, cfg.n_steps,
                cfg.tol, seed=cfg.seed)
    M, C = rep.gronwall_constants
    report = {
        "command": "solve",
        "horizon": rep.horizon,
        "residual": rep.residual,
        "M": M,
        "C": C,
        "bound": M * float(np.exp(M * C * rep.horizon)),
        "M_is_estimate": rep.m_is_estimate,
        "truncation_radius": rep.truncation_radius,
        "picard_iterations": rep.picard_iterations_per_step,
        "margin_nodes_extrapolated": rep.margin_nodes_extrapolated,
    }
    extras = {}
    if "csv" in cfg.formats:
        extras["trajectory.csv"] = _trajectory_csv(rep)
    return 0, report, extras


def _jet_directions(cfg: RunConfig, model):
    if cfg.directions not in ("chart_tangent", "axes"):
        raise ConfigError(f"unknown directions spec {cfg.directions!r}")
    if cfg.directions == "chart_tangent" and model.known_invariant_chart:
        chart = model.known_invariant_chart
        return tangent_basis(chart, chart.center).directions
    n = model.grid.n_nodes
    eye = np.eye(n)
    return [model.x0.with_values(eye[i], margin_used=0.0)
            for i in range(min(n, 4))]


def _run_jet(cfg: RunConfig, model):
    dirs = _jet_directions(cfg, model)
    order = 2 if model.P.hessian_apply is not None else 1
    jets = propagate_jet(model.semigroup, model.P, model.x0, dirs, cfg.T,
                         order=order, n_steps=cfg.n_steps, tol=cfg.tol,
                         seed=cfg.seed)
    entries = []
    for jet in jets.jets:
        entry = {
            "t": jet.time,
            "base_csv_ref": f"trajectory.csv:t={format(jet.time, '.17g')}",
            "first": [psi.values for psi in jet.first],
            "second": ([[s.values for s in row] for row in jet.second]
                       if jet.second is not None else None),
        }
        entries.append(entry)
    report = {
        "command": "jet",
        "order": order,
        "n_directions": len(dirs),
        "horizon": cfg.T,
        "sup_first_variation": max(
            float(np.abs(psi.values).max()) for jet in jets.jets
            for psi in jet.first),
    }
    extras = {}
    if "json" in cfg.formats:
        extras["jets.json"] = dumps_17g(entries) + "\n"
    if "csv" in cfg.formats:
        extras["trajectory.csv"] = _trajectory_csv(jets.base_report)
    return 0, report, extras


def _run_fdcheck(cfg: RunConfig, model):
    dirs = _jet_directions(cfg, model)
    ladder = cfg.ladders.get("eps", [0.04, 0.02, 0.01, 0.005, 0.0025])
    rep = fd_check(model.semigroup, model.P, model.x0, dirs[0], cfg.fd_time,
                   ladder, n_steps=cfg.n_steps, tol=cfg.tol, seed=cfg.seed)
    report = {
        "command": "fdcheck",
        "best_error": rep.best_error,
        "observed_order": rep.observed_order,
        "eps_ladder": rep.eps_ladder,
        "errors": rep.errors,
        "saturated": rep.saturated,
    }
    return 0, report, {}


def _run_nagumo(cfg: RunConfig, model):
    chart = _resolve_chart(cfg, model)
    u = np.asarray(cfg.u0, dtype=float) if cfg.u0 else chart.center
    tol = float(cfg.thresholds.get("tangency_tol", 1e-3))
    rep = nagumo_check(chart, u, model.semigroup, model.P, tol)
    report = {
        "command": "nagumo",
        "residual": rep.residual,
        "verdict": rep.verdict,
        "inward_component": rep.inward_component,
        "tangency_tol": tol,
        "point_params": rep.point_params,
        "note": "consistent with invariance at the stated tolerance only",
    }
    return (0 if rep.verdict != "violating" else 1), report, {}


def _run_lifetime(cfg: RunConfig, model):
    chart = _resolve_chart(cfg, model)
    u0 = np.asarray(cfg.u0, dtype=float) if cfg.u0 else chart.center
    rep = lifetime_estimate(chart, u0, model.semigroup, model.P, cfg.T,
                            cfg.n_steps, cfg.tol, cfg.tube_tol, seed=cfg.seed)
    report = {
        "command": "lifetime",
        "T_exit": rep.T_exit,
        "exit_kind": rep.exit_kind,
        "tube_tol": rep.tube_tol,
        "max_distance": float(rep.distances.max()) if rep.distances.size else 0.0,
    }
    return (0 if rep.exit_kind == "interior_ok" else 1), report, {}


def _run_alpha(cfg: RunConfig, model):
    fields = VectorFieldSet(model.semigroup, model.P, model.sigmas)
    d = fields.d
    radius = float(cfg.thresholds.get("alpha_box_radius", 0.05))
    box = [[-radius, radius]] * d + [[0.0, radius]]
    chart = build_alpha(fields, model.x0, box, seed=cfg.seed)
    J = jacobian(chart, np.zeros(d + 1))
    cols = [s.eval(model.x0, 0.0).values for s in fields.sigmas]
    cols.append(fields.mu(model.x0).values)
    rel_errors = [
        float(np.linalg.norm(J[:, i] - cols[i])
              / max(np.linalg.norm(cols[i]), 1e-300))
        for i in range(d + 1)
    ]
    sv = np.linalg.svd(J / np.linalg.norm(J, axis=0), compute_uv=False)
    report = {
        "command": "alpha",
        "param_dim": d + 1,
        "jacobian_column_rel_errors": rel_errors,
        "rank_margin": float(sv.min()),
        "box_radius": radius,
    }
    return 0, report, {}


def _run_certify(cfg: RunConfig, model):
    fields = VectorFieldSet(model.semigroup, model.P, model.sigmas)
    th = CertifyThresholds(
        rank_tol=float(cfg.thresholds.get("rank_tol", 1e-6)),
        tangency_tol=float(cfg.thresholds.get("tangency_tol", 1e-3)),
        order_ratio_bound=float(cfg.thresholds.get("order_ratio_bound", 0.75)),
        sigma_min_tol=float(cfg.thresholds.get("sigma_min_tol", 0.5)),
        k_max=cfg.k_max,
        t_probe=float(cfg.thresholds.get("t_probe", 0.1)),
        order_ladder=tuple(cfg.ladders.get("order", (0.2, 0.1, 0.05, 0.025))),
    )
    chart = _resolve_chart(cfg, model) if (
        model.known_invariant_chart or cfg.chart_files) else None
    rep = certify(fields, chart=chart, x0=model.x0, thresholds=th,
                  solver_tol=cfg.tol, seed=cfg.seed)
    gron = None
    if cfg.gronwall_pairs > 0:
        rng = np.random.default_rng(cfg.seed)
        ok = 0
        for _ in range(cfg.gronwall_pairs):
            xa, xb = model_zoo.perturbation_pair(model, cfg.perturbation_scale,
                                                 rng)
            cert = gronwall_certificate(model.semigroup, model.P, xa, xb,
                                        cfg.T, cfg.n_steps, cfg.tol,
                                        seed=cfg.seed)
            ok += bool(cert.holds)
        gron = {"pairs": cfg.gronwall_pairs, "holds": ok,
                "all_hold": ok == cfg.gronwall_pairs}
    report = {
        "command": "certify",
        "verdict": rep.verdict,
        "sampled_region": rep.sampled_region,
        "checks": [
            {"name": c.name, "margin": c.margin, "threshold": c.threshold,
             "pass": c.passed, "direction": c.direction}
            for c in rep.checks
        ],
        "independence_margin": rep.independence_margin,
        "alpha_rank_margin": rep.alpha_rank_margin,
        "tangency_residuals": [t.residual for t in rep.tangency],
        "domain_orders": [e.order_passed for e in rep.domain_orders],
        "sigma_min_curve": rep.sigma_min_curve,
        "boundary_sigma_parallel": rep.boundary_sigma_parallel,
        "gronwall": gron,
    }
    code = 0 if rep.certified and (gron is None or gron["all_hold"]) else 1
    return code, report, {}


def _run_daorder(cfg: RunConfig, model):
    ladder = cfg.ladders.get("order", [0.2, 0.1, 0.05, 0.025])
    est = domain_order_estimate(model.semigroup, model.x0, cfg.k_max, ladder)
    report = {
        "command": "daorder",
        "order_passed": est.order_passed,
        "max_order_tested": est.max_order_tested,
        "divergence_profile": {
            str(r): {"quotient_norms": p.quotient_norms,
                     "difference_norms": p.difference_norms,
                     "ratios": p.ratios,
                     "converged": p.converged}
            for r, p in est.divergence_profile.items()
        },
    }
    return 0, report, {}


_HANDLERS = {
    "solve": _run_solve,
    "jet": _run_jet,
    "fdcheck": _run_fdcheck,
    "nagumo": _run_nagumo,
    "lifetime": _run_lifetime,
    "alpha": _run_alpha,
    "certify": _run_certify,
    "daorder": _run_daorder,
}


def run(cfg: RunConfig) -> int:
    model = model_zoo.instantiate(cfg.model_name, cfg.model_params)
    code, report, extras = _HANDLERS[cfg.command](cfg, model)
    report["model"] = cfg.model_name
    report["seed"] = cfg.seed
    os.makedirs(cfg.output_dir, exist_ok=True)
    if "json" in cfg.formats:
        write_atomic(os.path.join(cfg.output_dir, "report.json"),
                     dumps_17g(report) + "\n")
    for name, text in extras.items():
        write_atomic(os.path.join(cfg.output_dir, name), text)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="semiflow-lab",
        description="semiflow laboratory: solve, probe and certify")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="path to the JSON run configuration")
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                print(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}",
                      file=sys.stderr)
                return 2
        cfg = parse_config(args.command, raw)
        if args.output_dir is not None:
            cfg.output_dir = args.output_dir
        if args.seed is not None:
            cfg.seed = args.seed
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except SemiflowLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
