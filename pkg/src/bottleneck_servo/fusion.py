"""Unscented Kalman filter over the 6-vector bottleneck state, and the
moving-variance window used to decide when wrist estimates are stable."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleWrap, NonSPDCovariance

N_STATE = 6


@dataclass(frozen=True)
class UkfParams:
    alpha: float = 1e-1
    beta: float = 2.0
    kappa: float = 0.0
    jitter: float = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    priorSigmaRotDeg: float = 3.0
    priorSigmaTransM: float = 0.03
    processSigmaRotDeg: float = 0.1
    processSigmaTransM: float = 0.001
    measSigmaRotDeg: float = 1.5
    measSigmaTransM: float = 0.006
    measRefMatches: int = 60
    measRefRmsM: float = 0.006
    alpha: float = 1e-1
    beta: float = 2.0
    kappa: float = 0.0
    window: int = 10

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @property
    def ukf(self) -> UkfParams:
        return UkfParams(self.alpha, self.beta, self.kappa)

    def prior_cov(self) -> np.ndarray:
        return _diag6(np.deg2rad(self.priorSigmaRotDeg), self.priorSigmaTransM)

    def process_cov(self) -> np.ndarray:
        return _diag6(np.deg2rad(self.processSigmaRotDeg), self.processSigmaTransM)

    def meas_cov(self, n_inliers: int, rms: float) -> np.ndarray:
        """Measurement covariance inflated for few matches or large residuals."""
        k = max(1.0, rms / self.measRefRmsM) ** 2 * max(1.0, self.measRefMatches / max(n_inliers, 1))
        return k * _diag6(np.deg2rad(self.measSigmaRotDeg), self.measSigmaTransM)


def _diag6(sr: float, st: float) -> np.ndarray:
    return np.diag([sr**2] * 3 + [st**2] * 3)


@dataclass(frozen=True, eq=False)
class BeliefState:
    mean: np.ndarray
    cov: np.ndarray


def _check_spd(P: np.ndarray) -> None:
    if P.shape != (N_STATE, N_STATE) or not np.all(np.isfinite(P)):
        raise NonSPDCovariance("covariance must be a finite 6x6 matrix")
    if not np.allclose(P, P.T, atol=1e-12, rtol=0):
        raise NonSPDCovariance("covariance not symmetric")
    if np.linalg.eigvalsh(P).min() <= 0:
        raise NonSPDCovariance("covariance not positive definite")


def ukf_init(prior, prior_cov) -> BeliefState:
    P = np.array(prior_cov, dtype=float)
    _check_spd(P)
    return BeliefState(np.array(prior, dtype=float), P)


def nearest_rotvec(r: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Equivalent axis-angle representation of ``r`` closest to ``ref``."""
    th = np.linalg.norm(r)
    if th < 1e-12:
        return r
    u = r / th
    alt = (th - 2 * np.pi) * u
    return alt if np.linalg.norm(alt - ref) < np.linalg.norm(r - ref) else r


def canonical_rotvec(r: np.ndarray) -> np.ndarray:
    th = np.linalg.norm(r)
    if th <= np.pi:
        return r
    u = r / th
    th = np.mod(th + np.pi, 2 * np.pi) - np.pi
    return th * u


def _sigma_points(x: np.ndarray, P: np.ndarray, p: UkfParams):
    n = len(x)
    lam = p.alpha**2 * (n + p.kappa) - n
    S = np.linalg.cholesky((n + lam) * P)
    X = np.vstack([x, x + S.T, x - S.T])
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1 - p.alpha**2 + p.beta)
    return X, wm, wc


def _symmetrize(P: np.ndarray, jitter: float) -> np.ndarray:
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P).min() <= 0:
        P = P + jitter * np.eye(len(P)) + max(0.0, -np.linalg.eigvalsh(P).min()) * np.eye(len(P))
    return P


def ukf_step(
    belief: BeliefState,
    measurement,
    meas_cov,
    process_cov,
    params: UkfParams = UkfParams(),
    h=None,
) -> BeliefState:
    """One predict/update cycle. Process model is identity (static bottleneck).

    ``h`` maps a state 6-vector to measurement space (identity by default).
    Rotation residuals are taken along the shortest arc.
    """
    z = np.asarray(measurement, dtype=float)
    R = np.asarray(meas_cov, dtype=float)
    Q = np.asarray(process_cov, dtype=float)
    if np.linalg.norm(z[:3]) >= np.pi:
        raise AngleWrap("measurement rotation at or beyond pi")
    _check_spd(belief.cov)

    x = belief.mean
    P = _symmetrize(belief.cov + Q, params.jitter)
    X, wm, wc = _sigma_points(x, P, params)
    if np.any(np.linalg.norm(X[:, :3], axis=1) >= np.pi):
        raise AngleWrap("sigma point crossed the pi boundary")
    Z = X if h is None else np.array([h(xi) for xi in X])
    zhat = wm @ Z
    dZ = Z - zhat
    dX = X - x
    S = (wc[:, None] * dZ).T @ dZ + R
    C = (wc[:, None] * dX).T @ dZ
    K = np.linalg.solve(S.T, C.T).T
    innov = z - zhat
    innov[:3] = nearest_rotvec(z[:3], zhat[:3]) - zhat[:3]
    mean = x + K @ innov
    mean[:3] = canonical_rotvec(mean[:3])
    cov = P - K @ S @ K.T
    cov = _symmetrize(cov, params.jitter)
    return BeliefState(mean, cov)


@dataclass
class VarianceWindow:
    size: int = 10
    buffer: deque = field(default_factory=deque)

    def __post_init__(self):
        self.buffer = deque(self.buffer, maxlen=self.size)

    @property
    def variance(self) -> np.ndarray:
        """Unbiased per-component variance; +inf until two samples exist."""
        if len(self.buffer) < 2:
            return np.full(N_STATE, np.inf)
        return np.var(np.array(self.buffer), axis=0, ddof=1)

    def clear(self) -> None:
        self.buffer.clear()


def push_variance(win: VarianceWindow, estimate) -> VarianceWindow:
    win.buffer.append(np.array(estimate, dtype=float))
    return win
