"""MCMC for the Procrustes size-and-shape model.

Each iteration is one Gibbs draw of ``tau`` followed by
``ProposalConfig.lambda_updates`` single-row Metropolis-Hastings proposals on
the match matrix. After every accepted match change the matched points are
re-registered by partial Procrustes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geom import procrustes_arrays, procrustes_sq_dist
from .model import (
    LOG_2PI,
    UNMATCHED,
    MatchMatrix,
    ModelConfig,
    ModelState,
    gaussian_dims,
    log_lik_procrustes_from_d2,
    log_prior_lambda_counts,
    log_prior_tau,
)
from .trace import ChainTrace, MoveStats, TraceRecorder


@dataclass(frozen=True)
class ProposalConfig:
    p_reject: float = 0.2
    use_fast_ratio: bool = False
    rng_seed: int = 0
    lambda_updates: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p_reject <= 1.0:
            raise ValueError("p_reject must lie in [0, 1]")
        if self.lambda_updates < 1:
            raise ValueError("lambda_updates must be >= 1")


@dataclass(frozen=True)
class Registration:
    """Partial Procrustes registration of the current matched subset.

    ``x_registered`` holds every row of X (matched or not) moved by the fitted
    transform. With fewer than two matched points it is X unchanged.
    """

    rotation: np.ndarray
    translation: np.ndarray
    d2: float
    x_registered: np.ndarray
    degenerate: bool


def register(X: np.ndarray, mu: np.ndarray, assign: np.ndarray) -> Registration:
    rows = np.flatnonzero(assign >= 0)
    if rows.size < 2:
        return Registration(np.eye(3), np.zeros(3), 0.0, X, True)
    R, t, d2, degenerate = procrustes_arrays(X[rows], mu[assign[rows]])
    return Registration(R, t, d2, X @ R + t, degenerate)


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def propose_row(assign: np.ndarray, n_targets: int, p_reject: float, rng):
    """Draw a single-row move. Returns ``(row, new_col, log q-ratio)``.

    ``log q-ratio`` is ``log q(new -> old) - log q(old -> new)``.
    """
    M = assign.shape[0]
    N = n_targets
    i = int(rng.random() * M)
    old = int(assign[i])
    if old == UNMATCHED:
        return i, int(rng.random() * N), _log(p_reject * N)
    if rng.random() < p_reject:
        return i, UNMATCHED, -_log(p_reject * N)
    if N == 1:
        return i, old, 0.0
    j = int(rng.random() * (N - 1))
    if j >= old:
        j += 1
    return i, j, 0.0


def propose_lambda(lambda_: MatchMatrix, prop_cfg: ProposalConfig, rng):
    """Single-row proposal; returns ``(lambda*, log q-ratio)``."""
    i, j, log_q = propose_row(lambda_.assign, lambda_.n_targets, prop_cfg.p_reject, rng)
    return lambda_.with_row(i, j), log_q


def tau_conditional(p: int, d2: float, cfg: ModelConfig):
    """(shape, rate) of the full conditional of ``tau``."""
    Q = gaussian_dims(p, cfg)
    if Q is None:
        return cfg.alpha0, cfg.beta0
    return cfg.alpha0 + 0.5 * Q, cfg.beta0 + 0.5 * d2


def _row_log_g(x, mu_j, tau, log_match, log_unmatch):
    if mu_j is None:
        return log_unmatch
    d0 = x[0] - mu_j[0]
    d1 = x[1] - mu_j[1]
    d2 = x[2] - mu_j[2]
    return log_match + 1.5 * (math.log(tau) - LOG_2PI) - 0.5 * tau * (d0 * d0 + d1 * d1 + d2 * d2)


class ProcrustesChain:
    """Mutable chain state with the cached registration.

    The public functions below wrap this class for one-off use; the run loop
    and the big-jump initialiser drive it directly.
    """

    def __init__(self, X, mu, cfg: ModelConfig, prop_cfg: ProposalConfig, init: MatchMatrix, tau: float, rng):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.mu = np.ascontiguousarray(mu, dtype=np.float64)
        M, N = self.X.shape[0], self.mu.shape[0]
        if init.shape != (M, N):
            raise ValueError(f"initial match matrix is {init.shape}, data are ({M}, {N})")
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.M, self.N = M, N
        self.cfg = cfg
        self.prop_cfg = prop_cfg
        self.rng = rng
        self.assign = np.array(init.assign, dtype=np.int64)
        self.tau = float(tau)
        self.p = int(np.count_nonzero(self.assign >= 0))
        self.reg = register(self.X, self.mu, self.assign)
        self.moves = {"lambda": MoveStats()}
        self._log_match = _log((1.0 - cfg.psi) / N)
        self._log_unmatch = _log(cfg.psi) - cfg.log_volume

    # -- state views -------------------------------------------------------
    @property
    def lambda_(self) -> MatchMatrix:
        return MatchMatrix(self.assign, self.N)

    @property
    def state(self) -> ModelState:
        return ModelState(self.lambda_, self.tau, None, self.reg)

    @property
    def x_registered(self) -> np.ndarray:
        return self.reg.x_registered

    def columns(self) -> np.ndarray:
        return np.where(self.assign < 0, self.N, self.assign)

    def log_target(self, assign=None, d2=None) -> float:
        """log pi(Lambda | X, mu, tau) up to a constant (likelihood x prior)."""
        if assign is None:
            assign, d2, p = self.assign, self.reg.d2, self.p
        else:
            rows = np.flatnonzero(assign >= 0)
            p = rows.size
            if d2 is None:
                d2 = procrustes_sq_dist(self.X[rows], self.mu[assign[rows]]) if p >= 2 else 0.0
        return log_lik_procrustes_from_d2(d2, p, self.M, self.tau, self.cfg) + log_prior_lambda_counts(
            p, self.M, self.N, self.cfg
        )

    def log_posterior(self) -> float:
        return self.log_target() + log_prior_tau(self.tau, self.cfg)

    # -- updates -----------------------------------------------------------
    def gibbs_tau(self) -> float:
        shape, rate = tau_conditional(self.p, self.reg.d2, self.cfg)
        self.tau = float(self.rng.gamma(shape, 1.0 / rate))
        return self.tau

    def set_assign(self, assign: np.ndarray) -> None:
        self.assign = np.array(assign, dtype=np.int64)
        self.p = int(np.count_nonzero(self.assign >= 0))
        self.reg = register(self.X, self.mu, self.assign)

    def lambda_step(self) -> bool:
        """One single-row MH update. Returns True if the match matrix changed."""
        stats = self.moves["lambda"]
        stats.proposed += 1
        i, j, log_q = propose_row(self.assign, self.N, self.prop_cfg.p_reject, self.rng)
        old = int(self.assign[i])
        if j == old:
            stats.accepted += 1
            return False
        if self.prop_cfg.use_fast_ratio:
            x = self.reg.x_registered[i]
            lm, lu = self._log_match, self._log_unmatch
            log_r = (
                _row_log_g(x, None if j < 0 else self.mu[j], self.tau, lm, lu)
                - _row_log_g(x, None if old < 0 else self.mu[old], self.tau, lm, lu)
                + log_q
            )
            reg = None
        else:
            new = self.assign.copy()
            new[i] = j
            # full fit of the proposal, kept so an accept needs no second SVD
            reg = register(self.X, self.mu, new)
            log_r = self.log_target(new, reg.d2) - self.log_target() + log_q
        if log_r >= 0.0 or math.log(1.0 - self.rng.random()) < log_r:
            self.assign[i] = j
            self.p += (j >= 0) - (old >= 0)
            self.reg = reg if reg is not None else register(self.X, self.mu, self.assign)
            stats.accepted += 1
            return True
        return False

    def step(self, update_tau: bool = True) -> bool:
        if update_tau:
            self.gibbs_tau()
        changed = False
        for _ in range(self.prop_cfg.lambda_updates):
            changed |= self.lambda_step()
        return changed


def _as_rng(rng, prop_cfg):
    return rng if rng is not None else np.random.default_rng(prop_cfg.rng_seed)


def gibbs_tau(state: ModelState, X, mu, cfg: ModelConfig, rng) -> float:
    """Draw tau from its Gamma full conditional given the match matrix."""
    X = np.asarray(X, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    reg = state.fit if isinstance(state.fit, Registration) else register(X, mu, state.lambda_.assign)
    shape, rate = tau_conditional(state.lambda_.n_matched, reg.d2, cfg)
    return float(rng.gamma(shape, 1.0 / rate))


def mh_lambda_step(state: ModelState, X, mu, cfg: ModelConfig, prop_cfg: ProposalConfig, rng):
    """One MH update of the match matrix. Returns ``(new_state, accepted)``."""
    chain = ProcrustesChain(X, mu, cfg, prop_cfg, state.lambda_, state.tau, rng)
    before = chain.moves["lambda"].accepted
    chain.lambda_step()
    return chain.state, chain.moves["lambda"].accepted > before


def run_chain(
    X,
    mu,
    cfg: ModelConfig,
    prop_cfg: ProposalConfig,
    n_iter: int,
    init: MatchMatrix,
    *,
    tau_init: Optional[float] = None,
    burn_in: int = 0,
    thin: int = 1,
    update_tau: bool = True,
    rng=None,
    callback: Optional[Callable] = None,
    check_every: int = 1000,
    chain: Optional[ProcrustesChain] = None,
) -> ChainTrace:
    """Run the Procrustes sampler for ``n_iter`` iterations.

    ``callback(iteration, chain)`` is invoked every ``check_every``
    iterations; a truthy return stops the run early. Passing ``chain``
    continues an existing chain (e.g. after the big-jump initialisation).
    """
    if chain is None:
        rng = _as_rng(rng, prop_cfg)
        tau = cfg.alpha0 / cfg.beta0 if tau_init is None else tau_init
        chain = ProcrustesChain(X, mu, cfg, prop_cfg, init, tau, rng)
    rec = TraceRecorder(n_iter, burn_in, thin, chain.M, chain.N)
    for it in range(1, n_iter + 1):
        changed = chain.step(update_tau)
        rec.accumulate(it, chain.columns, changed)
        if rec.wants(it):
            rec.record(it, chain.tau, chain.assign, chain.log_posterior())
        if callback is not None and it % check_every == 0 and callback(it, chain):
            break
    return rec.finish(chain.moves, chain.state)
