"""Single-branch topology errors: Jacobian mismatch and residue signature.

Convention: ``H_t`` is the Jacobian the real-time estimator runs with and
``H_e`` the one of the hypothesised (forged) topology.  For an inclusion
error the branch is closed in ``H_t`` and open in ``H_e``; an exclusion
error is the mirror image, so swapping the kind negates ``D``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .estimation import WeightModel, hat_matrix
from .network import CLOSED, OPEN, GridCase, Jacobian, MeasurementLayout, build_jacobian

INCLUSION = "inclusion"
EXCLUSION = "exclusion"
DETECT_TOL = 1e-8


@dataclass(frozen=True)
class TopologyError:
    branch: int  # 0-based index into case.branches
    kind: str = INCLUSION

    def __post_init__(self):
        if self.kind not in (INCLUSION, EXCLUSION):
            raise InputError(f"error kind must be inclusion or exclusion, not {self.kind!r}")

    @classmethod
    def between(cls, case: GridCase, from_bus: int, to_bus: int, kind: str = INCLUSION):
        return cls(case.branch_index(from_bus, to_bus), kind)

    def topologies(self) -> tuple[dict[int, str], dict[int, str]]:
        """(true, erroneous) status overrides for the affected branch."""
        if self.kind == INCLUSION:
            return {self.branch: CLOSED}, {self.branch: OPEN}
        return {self.branch: OPEN}, {self.branch: CLOSED}


@dataclass(frozen=True)
class TopologyErrorModel:
    case: GridCase
    error: TopologyError
    H_t: Jacobian
    H_e: Jacobian
    D: np.ndarray
    M_e: np.ndarray
    L: np.ndarray

    def detectable_for(self, x, tol: float = DETECT_TOL) -> bool:
        return is_detectable(self, x, tol)


def _check_branch(case: GridCase, error: TopologyError):
    if not 0 <= error.branch < len(case.branches):
        raise InputError(f"branch index {error.branch} out of range")


def incidence_matrix(case: GridCase, error: TopologyError) -> np.ndarray:
    """Measurement-to-branch incidence L (one column for a single-branch error)."""
    _check_branch(case, error)
    layout = MeasurementLayout.canonical(case)
    br = case.branches[error.branch]
    L = np.zeros((len(layout), 1))
    L[layout.injection(br.from_bus), 0] = 1.0
    L[layout.flow_from(error.branch), 0] = 1.0
    L[layout.injection(br.to_bus), 0] = -1.0
    L[layout.flow_to(error.branch), 0] = -1.0
    return L


def jacobian_mismatch(case: GridCase, error: TopologyError) -> np.ndarray:
    """D = H_t - H_e.  Needs no connectivity, unlike the full error model."""
    _check_branch(case, error)
    true_topo, err_topo = error.topologies()
    H_t = build_jacobian(case, true_topo, require_connected=False)
    H_e = build_jacobian(case, err_topo, require_connected=False)
    return H_t.matrix - H_e.matrix


def flow_error(case: GridCase, error: TopologyError, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    br = case.branches[error.branch]
    col = {b: j for j, b in enumerate(case.state_buses)}
    theta_from = x[col[br.from_bus]] if br.from_bus in col else 0.0
    theta_to = x[col[br.to_bus]] if br.to_bus in col else 0.0
    sign = 1.0 if error.kind == INCLUSION else -1.0
    return np.array([sign * br.susceptance * (theta_from - theta_to)])


def build_error_model(case: GridCase, error: TopologyError, R: WeightModel) -> TopologyErrorModel:
    _check_branch(case, error)
    true_topo, err_topo = error.topologies()
    H_t = build_jacobian(case, true_topo)
    H_e = build_jacobian(case, err_topo)
    D = H_t.matrix - H_e.matrix
    M_e = hat_matrix(H_e, R)
    return TopologyErrorModel(case, error, H_t, H_e, D, M_e, incidence_matrix(case, error))


def branch_flow_error(model: TopologyErrorModel, x) -> np.ndarray:
    """Branch flow error f with ``D x = L f`` (one entry per modelled branch)."""
    return flow_error(model.case, model.error, x)


def expected_residue(model: TopologyErrorModel, x) -> np.ndarray:
    """(I - M_e) D x: mean residue of an estimator running on H_e fed by H_t."""
    d = model.D @ np.asarray(x, dtype=float)
    return d - model.M_e @ d


def is_detectable(model: TopologyErrorModel, x, tol: float = DETECT_TOL) -> bool:
    return bool(np.max(np.abs(expected_residue(model, x)), initial=0.0) > tol)
