"""Synthesis of analog data-injection attacks that mimic a topology error.

The attacker estimates the state the grid would show under the forged
topology, then searches for measurements whose estimate under the real
Jacobian reproduces that state while the residue stays within ``epsilon``
of the topology-error signature.  Both the residue constraint and the
meter bounds are per-coordinate intervals, so the search is a
bounded-variable least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleAttackError, InputError
from .estimation import WeightModel, estimate, normalized_residues
from .network import GridCase, as_array
from .solver import BVLSResult, kkt_violation, solve_bvls
from .topology import TopologyError, TopologyErrorModel, build_error_model, expected_residue

DEFAULT_HALFWIDTH = 2.0
LEAST_EFFORT = "least_effort"
FIRST_OPTIMUM = "first_optimum"
SELECTIONS = (LEAST_EFFORT, FIRST_OPTIMUM)


@dataclass(frozen=True)
class AttackSpec:
    """Attack configuration.  Measurement indices here are 0-based."""

    error: TopologyError
    epsilon: float
    delta: float = 0.01
    locked: frozenset[int] = frozenset()
    default_halfwidth: float = DEFAULT_HALFWIDTH
    bound_overrides: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    epsilon_overrides: Mapping[int, float] = field(default_factory=dict)
    selection: str = LEAST_EFFORT

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise InputError(f"selection must be one of {SELECTIONS}")
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")
        if not self.default_halfwidth >= 0:
            raise InputError("default bound half-width must be non-negative")
        for k, (lo, hi) in self.bound_overrides.items():
            if lo > hi:
                raise InputError(f"bounds for measurement {k + 1} have lower > upper")
        for k, e in self.epsilon_overrides.items():
            if not e > 0:
                raise InputError(f"epsilon override for measurement {k + 1} must be positive")
        object.__setattr__(self, "locked", frozenset(int(i) for i in self.locked))

    def epsilons(self, m: int) -> np.ndarray:
        eps = np.full(m, float(self.epsilon))
        for k, e in self.epsilon_overrides.items():
            eps[k] = e
        return eps

    def bounds(self, z_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Meter bounds z_a_min, z_a_max; locked meters are pinned to z_t."""
        lo = z_t - self.default_halfwidth
        hi = z_t + self.default_halfwidth
        for k, (a, b) in self.bound_overrides.items():
            lo[k], hi[k] = a, b
        locked = sorted(self.locked)
        lo[locked] = z_t[locked]
        hi[locked] = z_t[locked]
        return lo, hi

    def check_indices(self, m: int) -> None:
        bad = [i for i in (*self.locked, *self.bound_overrides, *self.epsilon_overrides)
               if not 0 <= i < m]
        if bad:
            raise InputError(f"measurement indices out of range 1..{m}: {sorted(i + 1 for i in bad)}")


@dataclass(frozen=True)
class AttackProblem:
    model: TopologyErrorModel
    weights: WeightModel
    z_t: np.ndarray
    target_state: np.ndarray
    rhs: np.ndarray  # (H_t^T R^-1 H_t) x_target
    residue_center: np.ndarray  # H_t x_target + (I - M_e) D x_target
    expected_residue: np.ndarray  # (I - M_e) D x_target
    lower: np.ndarray
    upper: np.ndarray
    epsilon: np.ndarray
    locked: np.ndarray  # boolean mask
    selection: str = LEAST_EFFORT

    @property
    def operator(self) -> np.ndarray:
        """H_t^T R^-1, the map from measurements to the normal-equation right-hand side."""
        return self.model.H_t.matrix.T * self.weights.inv[None, :]

    def objective(self, z_a) -> float:
        return float(np.linalg.norm(self.rhs - self.operator @ np.asarray(z_a, dtype=float)))


@dataclass(frozen=True)
class AttackResult:
    problem: AttackProblem
    z_a: np.ndarray
    a: np.ndarray
    objective: float
    post_state: np.ndarray
    state_gap_deg: np.ndarray
    iterations: int
    pg_norm: float
    kkt: float
    history: tuple[float, ...]
    bvls_objective: float
    selection: str


def least_effort(A, w, z_ref, lower, upper):
    """Sparsest-in-L1 point of ``{z in box : A z = w}`` measured from ``z_ref``.

    Returns None when the linear program fails.
    """
    m = len(z_ref)
    k = A.shape[0]
    eye = np.eye(m)
    cost = np.r_[np.zeros(m), np.ones(m)]
    A_ub = np.block([[eye, -eye], [-eye, -eye]])
    b_ub = np.r_[z_ref, -z_ref]
    A_eq = np.c_[A, np.zeros((k, m))]
    bounds = list(zip(lower, upper)) + [(0, None)] * m
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=w, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    z = np.clip(res.x[:m], lower, upper)
    # polish on the support: one least-squares step restricted to moved meters
    support = np.abs(z - z_ref) > 1e-12
    support &= (z > lower) & (z < upper)
    if support.any():
        step = np.linalg.lstsq(A[:, support], w - A @ z, rcond=None)[0]
        trial = z.copy()
        trial[support] += step
        if np.all(trial >= lower) and np.all(trial <= upper):
            if np.linalg.norm(A @ trial - w) <= np.linalg.norm(A @ z - w):
                z = trial
    return z


def target_state(case: GridCase, error: TopologyError, R: WeightModel, z_t,
                 model: TopologyErrorModel | None = None) -> np.ndarray:
    """WLS estimate of the state under the forged (erroneous) topology."""
    model = model or build_error_model(case, error, R)
    return estimate(model.H_e, R, z_t).state


def build_problem(spec: AttackSpec, case: GridCase, R: WeightModel, z_t) -> AttackProblem:
    zt = as_array(z_t).copy()
    m = len(zt)
    spec.check_indices(m)
    model = build_error_model(case, spec.error, R)
    x_tgt = target_state(case, spec.error, R, zt, model)
    H = model.H_t.matrix
    sig = expected_residue(model, x_tgt)
    center = H @ x_tgt + sig
    rhs = H.T @ (R.inv * (H @ x_tgt))
    eps = spec.epsilons(m)
    zmin, zmax = spec.bounds(zt)
    lower = np.maximum(zmin, center - eps)
    upper = np.minimum(zmax, center + eps)
    locked = np.zeros(m, dtype=bool)
    locked[sorted(spec.locked)] = True

    empty = np.flatnonzero(lower > upper)
    if empty.size:
        idx = [int(i) + 1 for i in empty]
        kinds = ["locked" if locked[i] else "bounded" for i in empty]
        detail = ", ".join(f"z{i} ({k})" for i, k in zip(idx, kinds))
        raise InfeasibleAttackError(
            f"attack infeasible: residue window of width {eps[empty].min():g} excludes "
            f"the allowed values of {detail}",
            idx,
        )
    # locked meters stay exactly at z_t
    lower[locked] = zt[locked]
    upper[locked] = zt[locked]
    return AttackProblem(model, R, zt, x_tgt, rhs, center, sig, lower, upper, eps, locked,
                         spec.selection)


def solve(problem: AttackProblem, max_iter: int | None = None) -> AttackResult:
    A = problem.operator
    z0 = np.clip(problem.residue_center, problem.lower, problem.upper)
    kwargs = {} if max_iter is None else {"max_iter": max_iter}
    res: BVLSResult = solve_bvls(A, problem.rhs, problem.lower, problem.upper, z0=z0, **kwargs)
    z_a = res.z.copy()
    if problem.selection == LEAST_EFFORT:
        # A z is unique over the optimal set, so this keeps the objective
        As = A / res.scale
        alt = least_effort(As, As @ z_a, problem.z_t, problem.lower, problem.upper)
        if alt is not None and problem.objective(alt) <= res.objective * (1 + 1e-6) + 1e-9:
            z_a = alt
    z_a[problem.locked] = problem.z_t[problem.locked]
    a = z_a - problem.z_t
    a[problem.locked] = 0.0
    post = estimate(problem.model.H_t, problem.weights, z_a).state
    kkt = kkt_violation(A / res.scale, problem.rhs / res.scale, problem.lower, problem.upper, z_a)
    return AttackResult(
        problem=problem,
        z_a=z_a,
        a=a,
        objective=problem.objective(z_a),
        post_state=post,
        state_gap_deg=np.degrees(np.abs(post - problem.target_state)),
        iterations=res.iterations,
        pg_norm=res.pg_norm,
        kkt=kkt,
        history=tuple(res.history),
        bvls_objective=res.objective,
        selection=problem.selection,
    )


@dataclass(frozen=True)
class AttackVerification:
    max_state_gap_deg: float
    state_gap_deg: np.ndarray
    residue: np.ndarray
    expected_residue: np.ndarray
    residue_gap_inf: float  # realised post-attack residue vs signature
    design_gap_inf: float  # ||(z_a - H_t x_target) - signature||_inf
    epsilon: float
    locked_max_abs: float
    normalized: np.ndarray
    ranking: np.ndarray  # 0-based meters by descending normalized residue
    incident: tuple[int, ...]  # 0-based meters touched by the forged branch
    top_incident: bool

    @property
    def residue_ok(self) -> bool:
        return self.residue_gap_inf <= self.epsilon

    @property
    def locked_ok(self) -> bool:
        return self.locked_max_abs == 0.0


def verify_attack(result: AttackResult, case: GridCase, R: WeightModel, spec: AttackSpec) -> AttackVerification:
    prob = result.problem
    H_t = prob.model.H_t
    est = estimate(H_t, R, result.z_a)
    gap = np.degrees(np.abs(est.state - prob.target_state))
    sig = prob.expected_residue
    design = (result.z_a - H_t.matrix @ prob.target_state) - sig
    rn = normalized_residues(est)
    ranking = np.argsort(-np.nan_to_num(rn, nan=-np.inf), kind="stable")
    incident = H_t.layout.branch_meters(case, spec.error.branch)
    k = len(incident)
    locked = sorted(spec.locked)
    return AttackVerification(
        max_state_gap_deg=float(gap.max(initial=0.0)),
        state_gap_deg=gap,
        residue=est.residue,
        expected_residue=sig,
        residue_gap_inf=float(np.max(np.abs(est.residue - sig), initial=0.0)),
        design_gap_inf=float(np.max(np.abs(design), initial=0.0)),
        epsilon=float(spec.epsilon),
        locked_max_abs=float(np.max(np.abs(result.a[locked]), initial=0.0)),
        normalized=rn,
        ranking=ranking,
        incident=incident,
        top_incident=set(ranking[:k].tolist()) <= set(incident),
    )
