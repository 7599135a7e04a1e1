"""Match matrices, priors, likelihoods and log-posteriors.

Both models share the match-matrix prior and the Gamma prior on the
precision ``tau``. The Procrustes model removes rotation and translation by
registration; the Configuration model carries them as a :class:`Pose`.
All densities are on the log scale and unnormalised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geom import EulerAngles, euler_to_matrix, haar_log_density, procrustes_sq_dist

UNMATCHED = -1
LOG_2PI = math.log(2.0 * math.pi)
M_DIM = 3


@dataclass(frozen=True)
class MatchMatrix:
    """Row-assignment form of an ``M x (N + 1)`` match matrix.

    ``assign[i]`` is the (0-based) index of the ``mu`` point matched by row
    ``i`` of ``X``, or ``UNMATCHED``. Many-to-one matches are allowed.
    """

    assign: np.ndarray
    n_targets: int

    def __post_init__(self):
        raw = np.asarray(self.assign)
        if raw.dtype.kind == "f" and not np.all(raw == np.round(raw)):
            raise ValueError("assignments must be integers")
        if raw.dtype.kind not in "iuf" and raw.size:
            raise ValueError("assignments must be integers")
        a = np.array(raw, dtype=np.int64).reshape(-1)
        n = int(self.n_targets)
        if n < 1:
            raise ValueError("n_targets must be >= 1")
        if a.size and (a.min() < UNMATCHED or a.max() >= n):
            raise ValueError(f"assignments must lie in [-1, {n - 1}]")
        a.setflags(write=False)
        object.__setattr__(self, "assign", a)
        object.__setattr__(self, "n_targets", n)

    @classmethod
    def unmatched(cls, n_rows: int, n_targets: int) -> "MatchMatrix":
        return cls(np.full(n_rows, UNMATCHED), n_targets)

    @classmethod
    def from_pairs(cls, pairs, n_rows: int, n_targets: int) -> "MatchMatrix":
        a = np.full(n_rows, UNMATCHED)
        for i, j in pairs:
            a[i] = j
        return cls(a, n_targets)

    @classmethod
    def from_dense(cls, dense) -> "MatchMatrix":
        dense = np.asarray(dense)
        if dense.ndim != 2 or not np.all((dense == 0) | (dense == 1)) or not np.all(dense.sum(axis=1) == 1):
            raise ValueError("every row of a match matrix must sum to 1")
        n = dense.shape[1] - 1
        cols = dense.argmax(axis=1)
        return cls(np.where(cols == n, UNMATCHED, cols), n)

    @property
    def shape(self):
        return self.assign.size, self.n_targets

    @property
    def n_matched(self) -> int:
        return int(np.count_nonzero(self.assign != UNMATCHED))

    @property
    def matched_rows(self) -> np.ndarray:
        return np.flatnonzero(self.assign != UNMATCHED)

    def columns(self) -> np.ndarray:
        """Column index per row in the dense ``N + 1`` layout."""
        return np.where(self.assign == UNMATCHED, self.n_targets, self.assign)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.assign.size, self.n_targets + 1), dtype=np.int64)
        out[np.arange(self.assign.size), self.columns()] = 1
        return out

    def with_row(self, i: int, j: int) -> "MatchMatrix":
        a = self.assign.copy()
        a[i] = j
        return MatchMatrix(a, self.n_targets)

    def __eq__(self, other):
        return (
            isinstance(other, MatchMatrix)
            and self.n_targets == other.n_targets
            and np.array_equal(self.assign, other.assign)
        )

    def __hash__(self):
        return hash((self.n_targets, self.assign.tobytes()))


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters shared by both models.

    Defaults are the protein-data profile: ``tau ~ Gamma(1, rate=36)``,
    ``psi = 0.2``, ``gamma ~ N(0, 50^2 I)`` and ``|A| = 25500``.
    ``schmidler_q`` uses ``Q = 3p`` in the Procrustes likelihood.
    """

    alpha0: float = 1.0
    beta0: float = 36.0
    psi: float = 0.2
    volume_A: float = 25500.0
    mu_gamma: tuple = (0.0, 0.0, 0.0)
    sigma_gamma: float = 50.0
    schmidler_q: bool = False

    def __post_init__(self):
        if not self.alpha0 > 0 or not self.beta0 > 0:
            raise ValueError("alpha0 and beta0 must be positive")
        if not 0.0 <= self.psi <= 1.0:
            raise ValueError("psi must lie in [0, 1]")
        if not self.volume_A > 0:
            raise ValueError("volume_A must be positive")
        if not self.sigma_gamma > 0:
            raise ValueError("sigma_gamma must be positive")
        mg = tuple(float(v) for v in self.mu_gamma)
        if len(mg) != 3:
            raise ValueError("mu_gamma must be a 3-vector")
        object.__setattr__(self, "mu_gamma", mg)

    @property
    def log_volume(self) -> float:
        return math.log(self.volume_A)


@dataclass(frozen=True)
class Pose:
    """Rotation (as Euler angles) and translation of the Configuration model."""

    angles: EulerAngles = field(default_factory=EulerAngles)
    gamma: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        g = tuple(float(v) for v in np.asarray(self.gamma, dtype=float).reshape(3))
        object.__setattr__(self, "gamma", g)

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.angles)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.gamma)


@dataclass(frozen=True)
class ModelState:
    lambda_: MatchMatrix
    tau: float
    pose: Optional[Pose] = None
    # cached registration (Procrustes sampler); not part of the state proper
    fit: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def replace(self, **kw) -> "ModelState":
        return replace(self, **kw)


def q_dim(p: int, m: int = M_DIM) -> int:
    """Dimension of the Procrustes tangent space for ``p`` matched points."""
    return p * m - m * (m - 1) // 2 - m


def gaussian_dims(p: int, cfg: ModelConfig) -> Optional[int]:
    """Dimension of the Procrustes Gaussian factor, or ``None`` if it is absent.

    With fewer than two matched points there is no shape information, so the
    factor is dropped (it equals 1). The Schmidler variant keeps it for p = 1.
    """
    if cfg.schmidler_q:
        return M_DIM * p if p >= 1 else None
    return q_dim(p) if p >= 2 else None


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")


def _check_dims(X, mu, lam: MatchMatrix):
    if lam.assign.size != X.shape[0] or lam.n_targets != mu.shape[0]:
        raise ValueError(
            f"match matrix is {lam.shape} but data are ({X.shape[0]}, {mu.shape[0]})"
        )


def log_lik_procrustes_from_d2(d2: float, p: int, M: int, tau: float, cfg: ModelConfig) -> float:
    out = -(M - p) * cfg.log_volume
    Q = gaussian_dims(p, cfg)
    if Q is not None:
        out += 0.5 * Q * (math.log(tau) - LOG_2PI) - 0.5 * tau * d2
    return out


def log_lik_procrustes(X, mu, lambda_: MatchMatrix, tau: float, cfg: ModelConfig) -> float:
    _check_tau(tau)
    X = np.asarray(X, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    _check_dims(X, mu, lambda_)
    rows = lambda_.matched_rows
    p = rows.size
    d2 = procrustes_sq_dist(X[rows], mu[lambda_.assign[rows]]) if p >= 2 else 0.0
    return log_lik_procrustes_from_d2(d2, p, X.shape[0], tau, cfg)


def config_residual_sq(X, mu, lambda_: MatchMatrix, pose: Pose) -> float:
    rows = lambda_.matched_rows
    if rows.size == 0:
        return 0.0
    r = X[rows] @ pose.rotation + pose.translation - mu[lambda_.assign[rows]]
    return float((r * r).sum())


def log_lik_config_from_r2(r2: float, p: int, M: int, tau: float, cfg: ModelConfig) -> float:
    return 1.5 * p * (math.log(tau) - LOG_2PI) - 0.5 * tau * r2 - (M - p) * cfg.log_volume


def log_lik_config(X, mu, lambda_: MatchMatrix, tau: float, pose: Pose, cfg: ModelConfig) -> float:
    _check_tau(tau)
    X = np.asarray(X, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    _check_dims(X, mu, lambda_)
    r2 = config_residual_sq(X, mu, lambda_, pose)
    return log_lik_config_from_r2(r2, lambda_.n_matched, X.shape[0], tau, cfg)


def _xlogy(n: float, x: float) -> float:
    if n == 0:
        return 0.0
    return n * math.log(x) if x > 0 else -math.inf


def log_prior_lambda_counts(p: int, M: int, N: int, cfg: ModelConfig) -> float:
    return _xlogy(p, (1.0 - cfg.psi) / N) + _xlogy(M - p, cfg.psi)


def log_prior_lambda(lambda_: MatchMatrix, cfg: ModelConfig) -> float:
    M, N = lambda_.shape
    return log_prior_lambda_counts(lambda_.n_matched, M, N, cfg)


def log_prior_tau(tau: float, cfg: ModelConfig) -> float:
    a, b = cfg.alpha0, cfg.beta0
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(tau) - b * tau


def log_prior_gamma(gamma, cfg: ModelConfig) -> float:
    diff = np.asarray(gamma, dtype=float) - np.asarray(cfg.mu_gamma)
    s2 = cfg.sigma_gamma**2
    return -1.5 * (LOG_2PI + math.log(s2)) - 0.5 * float(diff @ diff) / s2


def log_posterior(state: ModelState, X, mu, cfg: ModelConfig, model_kind: str = "procrustes") -> float:
    """Unnormalised log posterior of ``state`` under ``model_kind``.

    For the Configuration model the rotation prior is the Haar density in
    Euler coordinates, so the value is a density on the angle box.
    """
    lam, tau = state.lambda_, state.tau
    if model_kind == "procrustes":
        ll = log_lik_procrustes(X, mu, lam, tau, cfg)
        extra = 0.0
    elif model_kind == "configuration":
        if state.pose is None:
            raise ValueError("configuration state needs a pose")
        ll = log_lik_config(X, mu, lam, tau, state.pose, cfg)
        extra = log_prior_gamma(state.pose.gamma, cfg) + haar_log_density(state.pose.angles)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    return ll + log_prior_tau(tau, cfg) + log_prior_lambda(lam, cfg) + extra


def g_weight(x_i, mu_j, tau: float, cfg: ModelConfig, n_targets: int) -> float:
    """Log of the single-row weight used by the fast match update.

    ``mu_j`` is a 3-vector, or ``None`` for the unmatched column.
    """
    if mu_j is None:
        return _xlogy(1, cfg.psi) - cfg.log_volume
    d = np.asarray(x_i, dtype=float) - np.asarray(mu_j, dtype=float)
    return (
        _xlogy(1, (1.0 - cfg.psi) / n_targets)
        + 1.5 * (math.log(tau) - LOG_2PI)
        - 0.5 * tau * float(d @ d)
    )
