"""Per-variable AR(p) state forecasting with Yule-Walker fits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import CaseParseError, FittingError, InputError
from .network import dc_power_flow

DEFAULT_ORDER = 2
DEFAULT_DELTA = 0.01
VARIANCE_RTOL = 1e-12


@dataclass(frozen=True)
class StateHistory:
    snapshots: np.ndarray  # (T, n) time-ordered
    timestep: float = 1.0

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.snapshots, dtype=float))
        if s.ndim != 2 or s.shape[0] == 0:
            raise InputError("history must be a non-empty list of state vectors")
        if not self.timestep > 0:
            raise InputError("timestep must be positive")
        object.__setattr__(self, "snapshots", s)

    def __len__(self):
        return self.snapshots.shape[0]


@dataclass(frozen=True)
class ARModel:
    order: int
    coefficients: np.ndarray  # (n, p); column j holds phi_{j+1}
    noise_variance: np.ndarray  # (n,)
    means: np.ndarray | None = None  # process mean removed before fitting

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        object.__setattr__(self, "coefficients", phi)
        object.__setattr__(self, "noise_variance", np.asarray(self.noise_variance, dtype=float))
        means = np.zeros(phi.shape[0]) if self.means is None else np.asarray(self.means, dtype=float)
        object.__setattr__(self, "means", means)

    def transition_matrix(self) -> np.ndarray:
        """Diagonal state transition F for p = 1."""
        if self.order != 1:
            raise InputError("a single transition matrix exists only for p = 1")
        return np.diag(self.coefficients[:, 0])


def autocorrelation(series, nlags: int) -> np.ndarray:
    """rho_0..rho_nlags with the biased (1/N) estimator on the demeaned series."""
    x = np.asarray(series, dtype=float)
    level = np.max(np.abs(x), initial=0.0)
    x = x - x.mean()
    n = len(x)
    c0 = x @ x / n
    # round-off from demeaning a constant series is not variance
    if not c0 > (VARIANCE_RTOL * level) ** 2:
        raise FittingError("series has zero variance; Toeplitz system is singular")
    acov = np.array([x[: n - k] @ x[k:] / n for k in range(nlags + 1)])
    return acov / c0


def yule_walker_coefficients(rho) -> np.ndarray:
    """Solve the Toeplitz system [rho_|i-j|] phi = rho_{1..p} (rho_0 == 1 implied)."""
    rho = np.asarray(rho, dtype=float)
    p = len(rho)
    first_col = np.concatenate(([1.0], rho[:-1]))
    try:
        phi = scipy.linalg.solve_toeplitz(first_col, rho)
    except np.linalg.LinAlgError as exc:
        raise FittingError(f"autocorrelation matrix of order {p} is not invertible") from exc
    if not np.all(np.isfinite(phi)):
        raise FittingError(f"autocorrelation matrix of order {p} is not invertible")
    return phi


def fit_yule_walker(history: StateHistory, p: int = DEFAULT_ORDER) -> ARModel:
    if p < 1:
        raise InputError("AR order must be at least 1")
    s = history.snapshots
    if len(s) < p + 1:
        raise FittingError(f"need at least {p + 1} snapshots to fit AR({p}), got {len(s)}")
    n = s.shape[1]
    phi = np.empty((n, p))
    noise = np.empty(n)
    for i in range(n):
        try:
            rho = autocorrelation(s[:, i], p)
        except FittingError as exc:
            raise FittingError(f"state variable {i}: {exc}") from exc
        phi[i] = yule_walker_coefficients(rho[1:])
        var = s[:, i].var()
        noise[i] = var * (1.0 - phi[i] @ rho[1:])
    return ARModel(p, phi, noise, s.mean(axis=0))


def forecast(model: ARModel, history: StateHistory) -> np.ndarray:
    """One-step prediction mu + sum_j phi_j (x_{t-j} - mu), per state variable.

    Hand-built models carry mu = 0, which is the plain AR recursion.
    """
    s = history.snapshots
    p = model.order
    if len(s) < p:
        raise InputError(f"forecast with AR({p}) needs {p} snapshots, got {len(s)}")
    lags = s[::-1][:p].T - model.means[:, None]  # column j is x_{t-1-j}
    return model.means + np.sum(model.coefficients * lags, axis=1)


@dataclass(frozen=True)
class WorthVerdict:
    worthwhile: bool
    gap: float
    delta: float


def attack_worth_check(target, forecast_state, delta: float = DEFAULT_DELTA) -> WorthVerdict:
    """Is the forged state far enough from the forecast? (Euclidean gap > delta)."""
    a = np.asarray(target, dtype=float)
    b = np.asarray(forecast_state, dtype=float)
    if a.shape != b.shape:
        raise InputError("target and forecast dimensions differ")
    gap = float(np.linalg.norm(a - b))
    return WorthVerdict(gap > delta, gap, float(delta))


def load_history(path) -> StateHistory:
    try:
        doc = json.loads(Path(path).read_text())
        return StateHistory(np.asarray(doc["snapshots"], dtype=float), float(doc.get("timestep_s", 1.0)))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise CaseParseError(f"cannot read history file {path}: {exc}") from exc


def dump_history(history: StateHistory) -> dict:
    return {"timestep_s": history.timestep, "snapshots": history.snapshots.tolist()}


def random_walk_history(case, steps: int, seed, step_std: float = 0.002, timestep: float = 1.0,
                        injections=None) -> StateHistory:
    """Angles under operating injections scaled by a seeded multiplicative random walk.

    The walk is anchored so that the last snapshot is the operating point itself.
    """
    rng = np.random.default_rng(seed)
    base = case.injection_vector(injections)
    walk = np.cumsum(rng.normal(0.0, step_std, size=(steps, len(base))), axis=0)
    scale = 1.0 + walk - walk[-1]
    snaps = np.array([dc_power_flow(case, base * k) for k in scale])
    return StateHistory(snaps, timestep)
