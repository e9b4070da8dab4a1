"""``grid-attack`` command line.

Exit codes: 0 success, 1 infeasible attack or solver failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attack import target_state
from .errors import GridAttackError, InputError, InfeasibleAttackError, SolveError
from .estimation import load_weights
from .experiment import (
    Scenario,
    measurements_for,
    resolve_seed,
    run_attack,
    run_detect,
    run_estimate,
    run_forecast,
    run_montecarlo,
    run_simulate,
    write_report,
)
from .forecasting import DEFAULT_DELTA, DEFAULT_ORDER, load_history, random_walk_history
from .network import build_jacobian, load_case

log = logging.getLogger("grid_attack")

COMMANDS = ("estimate", "simulate", "attack", "montecarlo", "forecast", "detect")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grid-attack",
        description="Forge topology errors on a DC state estimator by analog data injection.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--case", help="case JSON file or bundled case name (ieee14, tri3)")
    parser.add_argument("--measurements", help="measurement JSON file (canonical layout)")
    parser.add_argument("--scenario", help="scenario / attack spec JSON, or a bundled scenario name")
    parser.add_argument("--weights", help='weight JSON file {"sigma": [...]}')
    parser.add_argument("--seed", type=int, help="master seed (falls back to $GRID_ATTACK_SEED)")
    parser.add_argument("--trials", type=int, help="Monte Carlo trial count")
    parser.add_argument("--out", help="output directory; report.json goes to stdout when omitted")
    parser.add_argument("--format", choices=("json", "csv"), default="csv")
    parser.add_argument("--plots", action="store_true", help="also render PNG figures into --out")
    parser.add_argument("--sigma", type=float, help="measurement noise std dev for simulation")
    parser.add_argument("--history", help="state history JSON for forecast")
    parser.add_argument("--order", type=int, default=DEFAULT_ORDER, help="AR order")
    parser.add_argument("--delta", type=float, help="worthiness threshold, radians")
    parser.add_argument("--target", help="target state JSON (list or {\"state\": [...]})")
    parser.add_argument("--correct-topology", action="store_true",
                        help="montecarlo: ignore the scenario's error and check E[r] = 0")
    parser.add_argument("--workers", type=int, default=1, help="threads for Monte Carlo chunks")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _case(args, scenario):
    ref = args.case or (scenario.case_ref if scenario else None)
    if ref is None:
        raise InputError("no case given: pass --case or name one in the scenario")
    return load_case(ref)


def _read_target(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read target file {path}: {exc}") from exc
    return np.asarray(doc["state"] if isinstance(doc, dict) else doc, dtype=float)


def dispatch(args) -> int:
    scenario = Scenario.load(args.scenario) if args.scenario else None
    case = _case(args, scenario)
    seed = resolve_seed(args.seed, scenario)
    m = len(build_jacobian(case).layout)
    R = load_weights(args.weights, m)
    sigma = args.sigma if args.sigma is not None else (scenario.noise_sigma if scenario else 0.01)

    if args.command == "estimate":
        z = measurements_for(case, args.measurements, seed, sigma)
        report = run_estimate(case, z, R, seed)
    elif args.command == "detect":
        z = measurements_for(case, args.measurements, seed, sigma)
        report = run_detect(case, z, R, seed)
    elif args.command == "simulate":
        state = scenario.operating_state(case) if scenario else None
        report = run_simulate(case, seed, sigma, state)
    elif args.command == "attack":
        if scenario is None:
            raise InputError("attack needs --scenario")
        z = None
        if args.measurements:
            z = measurements_for(case, args.measurements, seed, sigma)
        report = run_attack(case, scenario, R, seed, z)
    elif args.command == "montecarlo":
        trials = args.trials or (scenario.trials if scenario else 10_000)
        with_error = False if args.correct_topology else None
        report = run_montecarlo(case, scenario, R, seed, trials, with_error, args.workers)
    else:  # forecast
        if args.history:
            history = load_history(args.history)
        else:
            steps = scenario.history_steps if scenario else 200
            history = random_walk_history(case, steps, seed)
        delta = args.delta if args.delta is not None else (
            scenario.attack_spec(case).delta if scenario and scenario.has_error else DEFAULT_DELTA)
        target = None
        if args.target:
            target = _read_target(args.target)
        elif scenario is not None and scenario.has_error:
            spec = scenario.attack_spec(case)
            z = measurements_for(case, args.measurements, seed, sigma, scenario.operating_state(case))
            target = target_state(case, spec.error, R, z)
        report = run_forecast(case, history, args.order, delta, seed, target)

    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        written = write_report(report, args.out, args.format)
        if args.plots:
            from . import plotting

            written += plotting.render(report.figures, args.out)
        for p in written:
            log.info("wrote %s", p)
    else:
        sys.stdout.write(report.to_json())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except InfeasibleAttackError as exc:
        print(f"error: {exc} (meters {list(exc.indices)})", file=sys.stderr)
        return 1
    except SolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, GridAttackError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
