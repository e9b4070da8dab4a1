"""Scenario files, end-to-end runs and report assembly.

Every ``run_*`` function returns a :class:`Report`: a JSON-serialisable dict
plus named tables that :func:`write_report` dumps as CSV files.  Reports hold
no timestamps or host data, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .attack import DEFAULT_HALFWIDTH, LEAST_EFFORT, AttackSpec, build_problem, solve, verify_attack
from .errors import CaseParseError, ConnectivityError, InputError, SingularSystemError
from .estimation import (
    WeightModel,
    chi_square_test,
    estimate,
    normalized_residues,
    residue_covariance,
)
from .forecasting import (
    DEFAULT_DELTA,
    DEFAULT_ORDER,
    StateHistory,
    attack_worth_check,
    fit_yule_walker,
    forecast,
    random_walk_history,
)
from .network import (
    CLOSED,
    OPEN,
    GridCase,
    MeasurementLayout,
    MeasurementVector,
    build_jacobian,
    case_to_dict,
    dc_power_flow,
    dump_measurements,
    load_measurements,
    simulate_measurements,
)
from .topology import EXCLUSION, INCLUSION, TopologyError, build_error_model, expected_residue

log = logging.getLogger(__name__)

DEFAULT_SEED = 0
DEFAULT_NOISE = 0.01
LOW_SAMPLE = 100


def bundled_scenario_path(name: str) -> Path:
    return Path(str(resources.files("grid_attack") / "data" / "scenarios" / f"{name}.json"))


def _read_json(path, what: str) -> dict:
    p = Path(path)
    if not p.exists() and p.suffix == "" and bundled_scenario_path(str(path)).exists():
        p = bundled_scenario_path(str(path))
    try:
        return json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise CaseParseError(f"{what} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{what} file {path} is not valid JSON: {exc}") from exc


def parse_error(doc: dict, case: GridCase) -> TopologyError:
    try:
        f, t = doc["branch"]
        kind = doc.get("kind", INCLUSION)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad error description {doc!r}") from exc
    return TopologyError.between(case, int(f), int(t), kind)


def attack_spec_from_dict(doc: dict, case: GridCase) -> AttackSpec:
    """Build an AttackSpec from the file form (1-based measurement indices)."""
    if "error" not in doc or "epsilon" not in doc:
        raise InputError("attack spec needs 'error' and 'epsilon'")
    bounds = doc.get("bounds", {})
    overrides = {int(k) - 1: (float(v[0]), float(v[1])) for k, v in bounds.get("overrides", {}).items()}
    eps_over = {int(k) - 1: float(v) for k, v in doc.get("epsilon_overrides", {}).items()}
    return AttackSpec(
        error=parse_error(doc["error"], case),
        epsilon=float(doc["epsilon"]),
        delta=float(doc.get("delta", DEFAULT_DELTA)),
        locked=frozenset(int(i) - 1 for i in doc.get("locked", [])),
        default_halfwidth=float(bounds.get("default_halfwidth", DEFAULT_HALFWIDTH)),
        bound_overrides=overrides,
        epsilon_overrides=eps_over,
        selection=doc.get("selection", LEAST_EFFORT),
    )


@dataclass
class Scenario:
    doc: dict
    case_ref: str | None = None
    state: np.ndarray | None = None  # explicit operating state, radians
    noise_sigma: float = DEFAULT_NOISE
    seed: int | None = None
    trials: int = 10_000
    forecast_order: int = DEFAULT_ORDER
    history_steps: int = 200
    history_step_std: float = 0.002

    @classmethod
    def load(cls, path) -> Scenario:
        return cls.from_dict(_read_json(path, "scenario"))

    @classmethod
    def from_dict(cls, doc: dict) -> Scenario:
        noise = doc.get("noise", {})
        fc = doc.get("forecast", {})
        op = doc.get("operating_point", {})
        state = op.get("state")
        sc = cls(
            doc=doc,
            case_ref=doc.get("case"),
            state=None if state is None else np.asarray(state, dtype=float),
            noise_sigma=float(noise.get("sigma", DEFAULT_NOISE)),
            seed=noise.get("seed"),
            trials=int(doc.get("trials", 10_000)),
            forecast_order=int(fc.get("order", DEFAULT_ORDER)),
            history_steps=int(fc.get("steps", 200)),
            history_step_std=float(fc.get("step_std", 0.002)),
        )
        if sc.trials < 1:
            raise InputError("trial count must be at least 1")
        return sc

    def operating_state(self, case: GridCase) -> np.ndarray:
        if self.state is not None:
            if self.state.shape != (case.n_buses - 1,):
                raise InputError("scenario state has the wrong dimension")
            return self.state
        return dc_power_flow(case)

    def attack_spec(self, case: GridCase) -> AttackSpec:
        return attack_spec_from_dict(self.doc, case)

    @property
    def has_error(self) -> bool:
        return "error" in self.doc


def resolve_seed(cli_seed: int | None, scenario: Scenario | None = None) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("GRID_ATTACK_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"GRID_ATTACK_SEED must be an integer, got {env!r}") from exc
    if scenario is not None and scenario.seed is not None:
        return int(scenario.seed)
    return DEFAULT_SEED


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"not serialisable: {type(obj)}")


@dataclass
class Report:
    data: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    figures: dict = field(default_factory=dict)  # inputs for the plotting module

    def to_json(self) -> str:
        body = dict(self.data)
        body["warnings"] = list(self.warnings)
        return json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n"


def write_report(report: Report, out_dir, fmt: str = "csv") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(report.to_json())
    if fmt == "csv":
        for name, rows in report.tables.items():
            if not rows:
                continue
            path = out / f"{name}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: _fmt(v) for k, v in row.items()})
            written.append(path)
    return written


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _vec(v) -> list:
    return [None if not np.isfinite(x) else float(x) for x in np.asarray(v, dtype=float)]


def _meter_rows(case, layout):
    return [
        {"index": i + 1, "label": m.label(case), "kind": m.kind}
        for i, m in enumerate(layout.entries)
    ]


def _provenance(command, case, seed, *extra):
    return {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(command, case_to_dict(case), seed, *extra),
        "package_version": __version__,
    }


def measurements_for(case, z_path, seed, sigma, state=None) -> MeasurementVector:
    """Measurements from a file, or simulated at the operating point."""
    if z_path is not None:
        return load_measurements(z_path, MeasurementLayout.canonical(case))
    x = dc_power_flow(case) if state is None else state
    return simulate_measurements(case, x, sigma, seed)


# ---------------------------------------------------------------- estimate --

def run_estimate(case: GridCase, z: MeasurementVector, R: WeightModel, seed=None,
                 significance: float = 0.05) -> Report:
    H = build_jacobian(case)
    res = estimate(H, R, z)
    rn = normalized_residues(res)
    chi = chi_square_test(res, significance)
    warnings = []
    if res.condition > 1e12:
        warnings.append(f"gain matrix condition number {res.condition:.3g}")
    state_deg = np.degrees(res.state)
    data = {
        "provenance": _provenance("estimate", case, seed, z.values, R.variances),
        "layout": [m.label(case) for m in H.layout.entries],
        "state_buses": list(H.state_order),
        "state_rad": _vec(res.state),
        "state_deg": _vec(state_deg),
        "measurements": _vec(z.values),
        "residue": _vec(res.residue),
        "normalized_residue": _vec(rn),
        "objective": res.objective,
        "gain_condition": res.condition,
        "chi_square": {
            "passed": chi.passed,
            "statistic": chi.statistic,
            "threshold": chi.threshold,
            "dof": chi.dof,
            "significance": chi.significance,
        },
    }
    rows = _meter_rows(case, H.layout)
    for row, zi, ri, ni in zip(rows, z.values, res.residue, rn):
        row.update(measurement=zi, residue=ri, normalized_residue=ni)
    states = [{"bus": b, "angle_deg": a} for b, a in zip(H.state_order, state_deg)]
    return Report(data, {"residues": rows, "states": states}, warnings,
                  {"kind": "estimate", "labels": data["layout"], "residue": res.residue, "normalized": rn})


def run_simulate(case: GridCase, seed: int, sigma: float, state=None) -> Report:
    x = dc_power_flow(case) if state is None else np.asarray(state, dtype=float)
    z = simulate_measurements(case, x, sigma, seed)
    data = {
        "provenance": _provenance("simulate", case, seed, sigma, x),
        "true_state_rad": _vec(x),
        "sigma": sigma,
        **dump_measurements(z),
    }
    rows = _meter_rows(case, z.layout)
    for row, v in zip(rows, z.values):
        row["measurement"] = v
    return Report(data, {"measurements": rows})


# ------------------------------------------------------------------ attack --

def run_attack(case: GridCase, scenario: Scenario, R: WeightModel, seed: int,
               z: MeasurementVector | None = None) -> Report:
    spec = scenario.attack_spec(case)
    x_true = scenario.operating_state(case)
    if z is None:
        z = simulate_measurements(case, x_true, scenario.noise_sigma, seed)
    warnings = []

    problem = build_problem(spec, case, R, z)

    history = random_walk_history(case, scenario.history_steps, seed,
                                  step_std=scenario.history_step_std)
    ar = fit_yule_walker(history, scenario.forecast_order)
    x_fc = forecast(ar, history)
    worth = attack_worth_check(problem.target_state, x_fc, spec.delta)
    if not worth.worthwhile:
        warnings.append(
            f"forged state is only {worth.gap:.4g} rad from the forecast (delta {spec.delta:g}); "
            "attack may not be worthwhile"
        )

    result = solve(problem)
    ver = verify_attack(result, case, R, spec)
    H = problem.model.H_t
    labels = [m.label(case) for m in H.layout.entries]
    top = [int(i) + 1 for i in ver.ranking[:len(ver.incident)]]
    x_pre = estimate(H, R, z).state
    chi_post = chi_square_test(estimate(H, R, result.z_a))

    data = {
        "provenance": _provenance("attack", case, seed, scenario.doc, R.variances, z.values),
        "layout": labels,
        "error": {"branch": case.branches[spec.error.branch].label, "kind": spec.error.kind},
        "epsilon": spec.epsilon,
        "delta": spec.delta,
        "locked": sorted(i + 1 for i in spec.locked),
        "selection": result.selection,
        "z_t": _vec(problem.z_t),
        "z_a": _vec(result.z_a),
        "attack_vector": _vec(result.a),
        "attacked_meters": [int(i) + 1 for i in np.flatnonzero(np.abs(result.a) > 1e-9)],
        "objective": result.objective,
        "solver": {
            "iterations": result.iterations,
            "projected_gradient_norm": result.pg_norm,
            "kkt_violation": result.kkt,
            "bvls_objective": result.bvls_objective,
        },
        "target_state_deg": _vec(np.degrees(problem.target_state)),
        "post_attack_state_deg": _vec(np.degrees(result.post_state)),
        "pre_attack_state_deg": _vec(np.degrees(x_pre)),
        "forecast_state_deg": _vec(np.degrees(x_fc)),
        "state_gap_deg": _vec(ver.state_gap_deg),
        "max_state_gap_deg": ver.max_state_gap_deg,
        "residue": _vec(ver.residue),
        "expected_residue": _vec(ver.expected_residue),
        "normalized_residue": _vec(ver.normalized),
        "residue_gap_inf": ver.residue_gap_inf,
        "design_residue_gap_inf": ver.design_gap_inf,
        "locked_max_abs_attack": ver.locked_max_abs,
        "detection": {
            "top_normalized": top,
            "incident_meters": [i + 1 for i in ver.incident],
            "top_are_incident": ver.top_incident,
            "chi_square_post_attack": {"passed": chi_post.passed, "statistic": chi_post.statistic,
                                       "threshold": chi_post.threshold},
        },
        "worthiness": {"gap_rad": worth.gap, "delta": worth.delta, "worthwhile": worth.worthwhile,
                       "ar_order": ar.order},
        "checks": {
            "locked_zero": ver.locked_ok,
            "state_gap_below_0_01_deg": ver.max_state_gap_deg < 0.01,
            "residue_within_epsilon": ver.residue_ok,
        },
    }

    rows = _meter_rows(case, H.layout)
    meas = [dict(r, z_t=a, z_a=b, locked=bool(lk))
            for r, a, b, lk in zip(rows, problem.z_t, result.z_a, problem.locked)]
    av = [dict(r, attack=a) for r, a in zip(rows, result.a)]
    res_rows = [dict(r, residue=a, expected=b, normalized=c)
                for r, a, b, c in zip(rows, ver.residue, ver.expected_residue, ver.normalized)]
    states = [
        {"bus": b, "theoretical_deg": t, "post_attack_deg": p, "gap_deg": g}
        for b, t, p, g in zip(H.state_order, np.degrees(problem.target_state),
                              np.degrees(result.post_state), ver.state_gap_deg)
    ]
    figures = {
        "kind": "attack",
        "labels": labels,
        "z_t": problem.z_t,
        "z_a": result.z_a,
        "a": result.a,
        "locked": problem.locked,
        "residue": ver.residue,
        "expected": ver.expected_residue,
        "incident": ver.incident,
        "buses": H.state_order,
        "theoretical_deg": np.degrees(problem.target_state),
        "post_deg": np.degrees(result.post_state),
        "gap_deg": ver.state_gap_deg,
    }
    tables = {"measurements": meas, "attack_vector": av, "residues": res_rows, "states": states}
    return Report(data, tables, warnings, figures)


# -------------------------------------------------------------- montecarlo --

def _trial_noise(seed: int, indices, m: int) -> np.ndarray:
    return np.array([
        np.random.default_rng(np.random.SeedSequence([seed, int(i)])).standard_normal(m)
        for i in indices
    ]).reshape(len(indices), m)


def residue_trials(H_gen, H_est, R: WeightModel, x, trials: int, seed: int, workers: int = 1,
                   chunk: int = 1000):
    """Residue statistics of ``trials`` noisy snapshots.

    Data come from ``H_gen`` and are estimated with ``H_est``.  Trial ``i``
    draws its noise from ``SeedSequence([seed, i])``; chunks are summed, so
    results do not depend on ``workers``.
    Returns the per-meter residue sum and the per-trial weighted residue sums.
    """
    Hg = getattr(H_gen, "matrix", H_gen)
    He = getattr(H_est, "matrix", H_est)
    m = Hg.shape[0]
    M = estimate(He, R, np.zeros(m)).hat_matrix
    P = np.eye(m) - M
    base = Hg @ np.asarray(x, dtype=float)
    sigma = R.sigma
    w = R.inv

    def work(start):
        idx = range(start, min(start + chunk, trials))
        Z = base + _trial_noise(seed, idx, m) * sigma
        Rz = Z @ P.T
        return Rz.sum(axis=0), (Rz**2 * w).sum(axis=1)

    starts = range(0, trials, chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    total = np.sum([p[0] for p in parts], axis=0)
    stats = np.concatenate([p[1] for p in parts])
    return total, stats


def run_montecarlo(case: GridCase, scenario: Scenario | None, R: WeightModel, seed: int,
                   trials: int, with_error: bool | None = None, workers: int = 1,
                   significance: float = 0.05) -> Report:
    from scipy import stats as sps

    if trials < 1:
        raise InputError("trial count must be at least 1")
    x = scenario.operating_state(case) if scenario else dc_power_flow(case)
    if with_error is None:
        with_error = bool(scenario and scenario.has_error)
    warnings = []
    if trials < LOW_SAMPLE:
        warnings.append(f"low sample: {trials} trials (< {LOW_SAMPLE}) gives weak statistics")

    if with_error:
        spec = scenario.attack_spec(case)
        model = build_error_model(case, spec.error, R)
        H_gen, H_est = model.H_t, model.H_e
        expected = expected_residue(model, x)
        mode = "topology_error"
        err = {"branch": case.branches[spec.error.branch].label, "kind": spec.error.kind}
    else:
        H_gen = H_est = build_jacobian(case)
        expected = np.zeros(H_gen.shape[0])
        mode = "correct_topology"
        err = None

    total, chi = residue_trials(H_gen, H_est, R, x, trials, seed, workers)
    mean = total / trials
    omega = np.diag(residue_covariance(H_est, R))
    tol = 4.0 * np.sqrt(np.clip(omega, 0.0, None) / trials)
    dev = np.abs(mean - expected)
    within = dev <= tol + 1e-15
    dof = H_gen.shape[0] - H_gen.shape[1]
    threshold = float(sps.chi2.ppf(1 - significance, dof))
    reject = float(np.mean(chi > threshold))

    data = {
        "provenance": _provenance("montecarlo", case, seed, scenario.doc if scenario else None,
                                  R.variances, trials, mode),
        "mode": mode,
        "error": err,
        "trials": trials,
        "layout": [m.label(case) for m in H_gen.layout.entries],
        "sample_mean_residue": _vec(mean),
        "expected_residue": _vec(expected),
        "tolerance": _vec(tol),
        "within_tolerance": [bool(v) for v in within],
        "all_within": bool(within.all()),
        "chi_square": {"significance": significance, "threshold": threshold,
                       "rejection_rate": reject},
    }
    rows = _meter_rows(case, H_gen.layout)
    table = [dict(r, sample_mean=a, expected=b, tolerance=c, within=bool(d))
             for r, a, b, c, d in zip(rows, mean, expected, tol, within)]
    return Report(data, {"montecarlo": table}, warnings,
                  {"kind": "montecarlo", "labels": data["layout"], "mean": mean,
                   "expected": expected, "tolerance": tol})


# ---------------------------------------------------------------- forecast --

def run_forecast(case: GridCase, history: StateHistory, p: int, delta: float, seed=None,
                 target=None) -> Report:
    if history.snapshots.shape[1] != case.n_buses - 1:
        raise InputError(
            f"history has {history.snapshots.shape[1]} state variables, case needs {case.n_buses - 1}"
        )
    model = fit_yule_walker(history, p)
    x_fc = forecast(model, history)
    data = {
        "provenance": _provenance("forecast", case, seed, history.snapshots, p, delta,
                                  None if target is None else np.asarray(target)),
        "order": p,
        "snapshots": len(history),
        "timestep_s": history.timestep,
        "state_buses": list(case.state_buses),
        "coefficients": model.coefficients.tolist(),
        "noise_variance": _vec(model.noise_variance),
        "forecast_rad": _vec(x_fc),
    }
    if model.order == 1:
        data["transition_diagonal"] = _vec(np.diag(model.transition_matrix()))
    if target is not None:
        v = attack_worth_check(target, x_fc, delta)
        data["worthiness"] = {"gap_rad": v.gap, "delta": v.delta, "worthwhile": v.worthwhile}
    rows = [{"bus": b, "forecast_rad": f, **{f"phi_{j + 1}": c for j, c in enumerate(model.coefficients[i])}}
            for i, (b, f) in enumerate(zip(case.state_buses, x_fc))]
    return Report(data, {"forecast": rows})


# ------------------------------------------------------------------ detect --

def run_detect(case: GridCase, z: MeasurementVector, R: WeightModel, seed=None,
               significance: float = 0.05) -> Report:
    """Bad-data and single-branch topology-error screening of one snapshot.

    Each branch is toggled in turn; the toggle that best explains the data
    (lowest weighted residue sum) is reported as the suspected error.
    """
    base = run_estimate(case, z, R, seed, significance)
    H = build_jacobian(case)
    res = estimate(H, R, z)
    rn = normalized_residues(res)
    hypotheses = []
    for k, br in enumerate(case.branches):
        flipped = OPEN if br.status == CLOSED else CLOSED
        try:
            alt = estimate(build_jacobian(case, {k: flipped}), R, z)
        except (ConnectivityError, SingularSystemError):  # disconnecting toggles
            continue
        kind = INCLUSION if br.status == CLOSED else EXCLUSION
        meters = H.layout.branch_meters(case, k)
        hypotheses.append({
            "branch": br.label,
            "kind": kind,
            "objective": alt.objective,
            "improvement": res.objective - alt.objective,
            "incident_normalized_sum": float(np.nansum(rn[list(meters)])),
        })
    hypotheses.sort(key=lambda h: h["objective"])
    data = dict(base.data)
    data["provenance"] = _provenance("detect", case, seed, z.values, R.variances)
    imax = int(np.nanargmax(rn)) if np.any(np.isfinite(rn)) else None
    data["largest_normalized"] = None if imax is None else {
        "index": imax + 1, "label": base.data["layout"][imax], "value": float(rn[imax])}
    data["topology_hypotheses"] = hypotheses
    data["suspected_error"] = hypotheses[0] if hypotheses and not data["chi_square"]["passed"] else None
    tables = dict(base.tables)
    tables["hypotheses"] = hypotheses
    return Report(data, tables, base.warnings, base.figures)
