"""Weighted least-squares state estimation and bad-data statistics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import CaseParseError, InputError, LayoutMismatchError, SingularSystemError
from .network import as_array, as_matrix

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.01
CRITICAL_FLOOR = 1e-10
CONDITION_WARN = 1e12


@dataclass(frozen=True)
class WeightModel:
    """Diagonal measurement covariance R, stored as variances."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        if v.ndim != 1 or not np.all(v > 0):
            raise InputError("measurement variances must be a vector of positive numbers")
        object.__setattr__(self, "variances", v)

    @classmethod
    def uniform(cls, m: int, sigma: float = DEFAULT_SIGMA) -> WeightModel:
        return cls(np.full(m, float(sigma) ** 2))

    @classmethod
    def from_sigma(cls, sigma) -> WeightModel:
        return cls(np.asarray(sigma, dtype=float) ** 2)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def inv(self) -> np.ndarray:
        """Diagonal of R^-1."""
        return 1.0 / self.variances

    def __len__(self):
        return len(self.variances)


def load_weights(path, m: int) -> WeightModel:
    """Read ``{"sigma": [...]}``; ``path=None`` gives the default uniform model."""
    if path is None:
        return WeightModel.uniform(m)
    try:
        doc = json.loads(Path(path).read_text())
        sigma = np.asarray(doc["sigma"], dtype=float)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise CaseParseError(f"cannot read weight file {path}: {exc}") from exc
    if sigma.shape != (m,):
        raise LayoutMismatchError(f"layout mismatch: {sigma.size} sigmas for {m} meters")
    return WeightModel.from_sigma(sigma)


def gain_factor(H: np.ndarray, w: np.ndarray):
    """Cholesky factor of the gain matrix H^T R^-1 H."""
    G = H.T @ (w[:, None] * H)
    try:
        cho = scipy.linalg.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "gain matrix H^T R^-1 H is singular; H is rank deficient"
        ) from exc
    cond = np.linalg.cond(G)
    if cond > CONDITION_WARN:
        log.warning("gain matrix condition number %.3g exceeds %.0e", cond, CONDITION_WARN)
    return cho, cond


@dataclass(frozen=True)
class EstimationResult:
    state: np.ndarray
    residue: np.ndarray
    hat_matrix: np.ndarray
    residue_covariance: np.ndarray
    objective: float
    variances: np.ndarray
    condition: float

    @property
    def dof(self) -> int:
        m, n = len(self.residue), len(self.state)
        return m - n


def estimate(H, R: WeightModel, z) -> EstimationResult:
    """WLS estimate ``x = (H^T R^-1 H)^-1 H^T R^-1 z`` with residue diagnostics."""
    Hm = as_matrix(H)
    zv = as_array(z)
    if Hm.shape[0] != len(zv) or len(R) != len(zv):
        raise LayoutMismatchError(
            f"layout mismatch: H has {Hm.shape[0]} rows, z has {len(zv)}, R has {len(R)}"
        )
    w = R.inv
    cho, cond = gain_factor(Hm, w)
    x = scipy.linalg.cho_solve(cho, Hm.T @ (w * zv))
    r = zv - Hm @ x
    # one refinement step on the normal equations sharpens H^T R^-1 r = 0
    x = x + scipy.linalg.cho_solve(cho, Hm.T @ (w * r))
    r = zv - Hm @ x
    G_inv_Ht = scipy.linalg.cho_solve(cho, Hm.T)
    HGH = Hm @ G_inv_Ht
    M = HGH * w[None, :]
    omega = np.diag(R.variances) - HGH
    omega = 0.5 * (omega + omega.T)
    return EstimationResult(
        state=x,
        residue=r,
        hat_matrix=M,
        residue_covariance=omega,
        objective=float(np.sum(w * r**2)),
        variances=R.variances,
        condition=float(cond),
    )


def residue_covariance(H, R: WeightModel) -> np.ndarray:
    """Omega = R - H (H^T R^-1 H)^-1 H^T."""
    Hm = as_matrix(H)
    cho, _ = gain_factor(Hm, R.inv)
    omega = np.diag(R.variances) - Hm @ scipy.linalg.cho_solve(cho, Hm.T)
    return 0.5 * (omega + omega.T)


def hat_matrix(H, R: WeightModel) -> np.ndarray:
    Hm = as_matrix(H)
    w = R.inv
    cho, _ = gain_factor(Hm, w)
    return (Hm @ scipy.linalg.cho_solve(cho, Hm.T)) * w[None, :]


def normalized_residues(result: EstimationResult, floor: float = CRITICAL_FLOOR) -> np.ndarray:
    """|r_i| / sqrt(Omega_ii); NaN marks critical meters whose Omega_ii <= floor."""
    d = np.diag(result.residue_covariance)
    out = np.full(len(d), np.nan)
    ok = d > floor
    out[ok] = np.abs(result.residue[ok]) / np.sqrt(d[ok])
    return out


@dataclass(frozen=True)
class ChiSquareVerdict:
    passed: bool
    statistic: float
    threshold: float
    dof: int
    significance: float


def chi_square_test(result: EstimationResult, significance: float = 0.05) -> ChiSquareVerdict:
    """Global bad-data gate: J = sum r_i^2 / sigma_i^2 against chi^2_{m-n}."""
    dof = result.dof
    if dof <= 0:
        raise InputError("chi-square test needs more measurements than states")
    stat = float(np.sum(result.residue**2 / result.variances))
    threshold = float(stats.chi2.ppf(1.0 - significance, dof))
    return ChiSquareVerdict(stat <= threshold, stat, threshold, dof, significance)
