"""Command-line surface: simulate, certify, sweep, and the canned demos.

Every subcommand exits 0 on success; failures print a machine-readable
error JSON ({"error": <type>, "message": <text>}) to stdout and exit 1.
Outputs are CSV (arc samples, sweep tables) and JSON (event logs,
summaries, certification reports).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import demo as demo_mod
from .analysis import summarize_arc, sweep
from .certificates import (
    LyapunovCertificate,
    QuadraticLyapunovData,
    epsilon_star_search,
    max_dwell_time,
    select_analysis_parameters,
)
from .errors import EtcsimError
from .scenario import load_scenario_file
from .simulate import integrate_arc

__all__ = ["main"]


def _write_arc(arc, policy, event_tol, outdir: Path, prefix: str = "arc") -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    arc.to_csv(outdir / f"{prefix}.csv")
    arc.events_to_json(outdir / f"{prefix}_events.json")
    summary = summarize_arc(arc, policy, event_tol).to_dict()
    with open(outdir / f"{prefix}_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def _cmd_simulate(args) -> int:
    scenario = load_scenario_file(args.scenario)
    q0 = scenario.initial_state()
    arc = integrate_arc(scenario.plant, scenario.policy, q0, scenario.solver,
                        cert=scenario.cert, params=scenario.params)
    summary = _write_arc(arc, scenario.policy, scenario.solver.event_tol,
                         Path(args.out))
    print(json.dumps(summary))
    return 0


def _cmd_certify(args) -> int:
    with open(args.lyapunov) as fh:
        cfg = json.load(fh)
    data = QuadraticLyapunovData.from_dict(cfg)
    cert = LyapunovCertificate.derive(data)
    consts = cert.constants
    sigma = float(cfg.get("sigma", 0.5))
    mode = cfg.get("mode", "practical")
    dwell_bound = max_dwell_time(consts.m_err, consts.n_err,
                                 consts.gamma1_bar, consts.alpha1)
    t_star = cfg.get("t_star")
    params = select_analysis_parameters(
        consts, sigma, t_star=float(t_star) if t_star is not None else None,
        mode=mode,
    )
    eps_kwargs = {}
    if mode == "dwell":
        eps_kwargs = {"d": params.d_weight, "dwell_ode": params.dwell_ode}
    params = params.with_epsilon_star(
        epsilon_star_search(consts, sigma, params.mu, mode, **eps_kwargs))
    report = {
        "constants": consts.to_dict(),
        "dwell_bound": dwell_bound,
        "feasible_t_star_range": [0.0, dwell_bound],
        "parameters": params.to_dict(),
    }
    text = json.dumps(report, indent=2)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "certificate.json").write_text(text + "\n")
    print(text)
    return 0


def _cmd_sweep(args) -> int:
    scenario = load_scenario_file(args.scenario)
    with open(args.grid) as fh:
        grid = json.load(fh)
    result = sweep(scenario, grid)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    result.to_csv(outdir / "sweep.csv")
    with open(outdir / "sweep.json", "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
        fh.write("\n")
    errors = sum(1 for c in result.cells if c.error is not None)
    print(json.dumps({"cells": len(result.cells), "errors": errors}))
    return 0


def _cmd_demo(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    certification = demo_mod.demo_certification()
    cert = certification.cert
    name = args.name
    if name == "compare":
        sc_a = demo_mod.demo_scenario("compare")
        sc_b = demo_mod.demo_scenario("compare_periodic")
        result = None
        arcs = {}
        for sc, tag in ((sc_a, "time_regularized"), (sc_b, "periodic")):
            arc = integrate_arc(sc.plant, sc.policy, sc.q0, sc.solver,
                                cert=cert)
            arcs[tag] = arc
            _write_arc(arc, sc.policy, sc.solver.event_tol, outdir, tag)
        comparison = {
            "t_star": sc_a.policy.t_star,
            "jumps_time_regularized": arcs["time_regularized"].jump_count,
            "jumps_periodic": arcs["periodic"].jump_count,
            "final_norm_time_regularized":
                arcs["time_regularized"].final_state().xy_norm(),
            "final_norm_periodic": arcs["periodic"].final_state().xy_norm(),
        }
        with open(outdir / "comparison.json", "w") as fh:
            json.dump(comparison, fh, indent=2)
            fh.write("\n")
        print(json.dumps(comparison))
        return 0
    sc = demo_mod.demo_scenario(name)
    params = certification.dwell if name == "dwell" else None
    arc = integrate_arc(sc.plant, sc.policy, sc.q0, sc.solver, cert=cert,
                        params=params)
    summary = _write_arc(arc, sc.policy, sc.solver.event_tol, outdir)
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etcsim",
        description="Event-triggered control of two-time-scale systems: "
                    "simulation, certification, and analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one scenario")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("certify", help="derive constants and parameters")
    p.add_argument("lyapunov", help="Lyapunov data JSON file")
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--grid", required=True, help="grid JSON file")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("demo", help="run a canned linear-demo scenario")
    p.add_argument("name", choices=["zeno", "deadzone", "dwell", "compare"])
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EtcsimError, OSError, json.JSONDecodeError, KeyError,
            ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
