"""MCMC for the Configuration model.

Rotation and translation are explicit parameters. One iteration is, in
order: Gibbs ``tau``, Gibbs ``gamma``, random-walk MH on the three Euler
angles, then one single-row MH update of the match matrix. The match update
uses the single-row weights, which give the exact posterior ratio here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geom import HALF_PI, EulerAngles, euler_matrix, wrap_angle
from .model import (
    MatchMatrix,
    ModelConfig,
    ModelState,
    Pose,
    log_lik_config_from_r2,
    log_prior_gamma,
    log_prior_lambda_counts,
    log_prior_tau,
)
from .sampler_procrustes import ProposalConfig, _log, _row_log_g, propose_row
from .trace import ChainTrace, MoveStats, TraceRecorder


@dataclass(frozen=True)
class AngleProposalConfig:
    """Half-widths of the uniform random-walk steps on each Euler angle."""

    width12: float = 0.2
    width13: float = 0.1
    width23: float = 0.2

    def __post_init__(self):
        if min(self.width12, self.width13, self.width23) <= 0:
            raise ValueError("angle proposal widths must be positive")


class ConfigurationChain:
    def __init__(
        self,
        X,
        mu,
        cfg: ModelConfig,
        prop_cfg: ProposalConfig,
        ap: AngleProposalConfig,
        init: MatchMatrix,
        pose: Pose,
        tau: float,
        rng,
    ):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.mu = np.ascontiguousarray(mu, dtype=np.float64)
        M, N = self.X.shape[0], self.mu.shape[0]
        if init.shape != (M, N):
            raise ValueError(f"initial match matrix is {init.shape}, data are ({M}, {N})")
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.M, self.N = M, N
        self.cfg, self.prop_cfg, self.ap = cfg, prop_cfg, ap
        self.rng = rng
        self.assign = np.array(init.assign, dtype=np.int64)
        self.tau = float(tau)
        a = pose.angles
        self.angles = [a.theta12, a.theta13, a.theta23]
        self._log_cos13 = _log(math.cos(a.theta13))
        self.gamma = np.array(pose.gamma, dtype=np.float64)
        self.R = euler_matrix(*self.angles)
        self.XR = self.X @ self.R
        self._refresh_rows()
        self._mu_gamma = np.asarray(cfg.mu_gamma, dtype=np.float64)
        self._inv_s2 = 1.0 / cfg.sigma_gamma**2
        self._log_match = _log((1.0 - cfg.psi) / N)
        self._log_unmatch = _log(cfg.psi) - cfg.log_volume
        self.moves = {"angles": MoveStats(), "lambda": MoveStats()}

    def _refresh_rows(self):
        self.rows = np.flatnonzero(self.assign >= 0)
        self.p = self.rows.size
        self.targets = self.mu[self.assign[self.rows]]

    # -- views -------------------------------------------------------------
    @property
    def pose(self) -> Pose:
        return Pose(EulerAngles(*self.angles), tuple(self.gamma))

    @property
    def lambda_(self) -> MatchMatrix:
        return MatchMatrix(self.assign, self.N)

    @property
    def state(self) -> ModelState:
        return ModelState(self.lambda_, self.tau, self.pose)

    def columns(self) -> np.ndarray:
        return np.where(self.assign < 0, self.N, self.assign)

    def x_transformed(self) -> np.ndarray:
        return self.XR + self.gamma

    def residual_sq(self, XR=None) -> float:
        if self.p == 0:
            return 0.0
        XR = self.XR if XR is None else XR
        r = XR[self.rows] + self.gamma - self.targets
        return float((r * r).sum())

    def log_posterior(self) -> float:
        return (
            log_lik_config_from_r2(self.residual_sq(), self.p, self.M, self.tau, self.cfg)
            + log_prior_tau(self.tau, self.cfg)
            + log_prior_lambda_counts(self.p, self.M, self.N, self.cfg)
            + log_prior_gamma(self.gamma, self.cfg)
            + self._log_cos13
            - math.log(8.0 * math.pi**2)
        )

    # -- updates -----------------------------------------------------------
    def gibbs_tau(self) -> float:
        shape = self.cfg.alpha0 + 1.5 * self.p
        rate = self.cfg.beta0 + 0.5 * self.residual_sq()
        self.tau = float(self.rng.gamma(shape, 1.0 / rate))
        return self.tau

    def gamma_conditional(self):
        """Mean and (scalar) variance of the Gaussian full conditional of gamma."""
        prec = self.p * self.tau + self._inv_s2
        s = self._mu_gamma * self._inv_s2
        if self.p:
            s = s + self.tau * (self.targets - self.XR[self.rows]).sum(axis=0)
        return s / prec, 1.0 / prec

    def gibbs_gamma(self) -> np.ndarray:
        mean, var = self.gamma_conditional()
        self.gamma = mean + math.sqrt(var) * self.rng.standard_normal(3)
        return self.gamma

    def angle_step(self) -> bool:
        stats = self.moves["angles"]
        stats.proposed += 1
        rng, ap = self.rng, self.ap
        d12 = (2.0 * rng.random() - 1.0) * ap.width12
        d13 = (2.0 * rng.random() - 1.0) * ap.width13
        d23 = (2.0 * rng.random() - 1.0) * ap.width23
        u = rng.random()
        t13 = self.angles[1] + d13
        if not -HALF_PI < t13 < HALF_PI:
            return False
        new = [wrap_angle(self.angles[0] + d12), t13, wrap_angle(self.angles[2] + d23)]
        R = euler_matrix(*new)
        XR = self.X @ R
        log_cos = math.log(math.cos(t13))
        # the Haar factor cos(theta13) enters once, through the rotation prior
        log_r = -0.5 * self.tau * (self.residual_sq(XR) - self.residual_sq()) + log_cos - self._log_cos13
        if log_r >= 0.0 or math.log(1.0 - u) < log_r:
            self.angles, self.R, self.XR, self._log_cos13 = new, R, XR, log_cos
            stats.accepted += 1
            return True
        return False

    def lambda_step(self) -> bool:
        stats = self.moves["lambda"]
        stats.proposed += 1
        i, j, log_q = propose_row(self.assign, self.N, self.prop_cfg.p_reject, self.rng)
        old = int(self.assign[i])
        u = self.rng.random()
        if j == old:
            stats.accepted += 1
            return False
        x = self.XR[i] + self.gamma
        lm, lu = self._log_match, self._log_unmatch
        log_r = (
            _row_log_g(x, None if j < 0 else self.mu[j], self.tau, lm, lu)
            - _row_log_g(x, None if old < 0 else self.mu[old], self.tau, lm, lu)
            + log_q
        )
        if log_r >= 0.0 or math.log(1.0 - u) < log_r:
            self.assign[i] = j
            self._refresh_rows()
            stats.accepted += 1
            return True
        return False

    def step(self, update_tau=True, update_gamma=True, update_angles=True, update_lambda=True) -> bool:
        if update_tau:
            self.gibbs_tau()
        if update_gamma:
            self.gibbs_gamma()
        if update_angles:
            self.angle_step()
        changed = False
        if update_lambda:
            for _ in range(self.prop_cfg.lambda_updates):
                changed |= self.lambda_step()
        return changed


def _chain_from_state(state: ModelState, X, mu, cfg, prop_cfg=None, ap=None, rng=None):
    pose = state.pose if state.pose is not None else Pose()
    return ConfigurationChain(
        X,
        mu,
        cfg,
        prop_cfg or ProposalConfig(),
        ap or AngleProposalConfig(),
        state.lambda_,
        pose,
        state.tau,
        rng,
    )


def gibbs_tau_config(state: ModelState, X, mu, cfg: ModelConfig, rng) -> float:
    return _chain_from_state(state, X, mu, cfg, rng=rng).gibbs_tau()


def gibbs_gamma(state: ModelState, X, mu, cfg: ModelConfig, rng) -> np.ndarray:
    return _chain_from_state(state, X, mu, cfg, rng=rng).gibbs_gamma()


def mh_angles(state: ModelState, X, mu, cfg: ModelConfig, ap: AngleProposalConfig, rng):
    """One MH update of the Euler angles. Returns ``(new_state, accepted)``."""
    chain = _chain_from_state(state, X, mu, cfg, ap=ap, rng=rng)
    accepted = chain.angle_step()
    if not accepted:
        return state, False
    return chain.state, True


def mh_lambda_config(state: ModelState, X, mu, cfg: ModelConfig, prop_cfg: ProposalConfig, rng):
    """One single-row match update. Returns ``(new_state, accepted)``."""
    chain = _chain_from_state(state, X, mu, cfg, prop_cfg=prop_cfg, rng=rng)
    before = chain.moves["lambda"].accepted
    chain.lambda_step()
    return chain.state, chain.moves["lambda"].accepted > before


def run_chain_config(
    X,
    mu,
    cfg: ModelConfig,
    prop_cfg: ProposalConfig,
    ap: AngleProposalConfig,
    n_iter: int,
    init: MatchMatrix,
    pose: Optional[Pose] = None,
    *,
    tau_init: Optional[float] = None,
    burn_in: int = 0,
    thin: int = 1,
    update_tau: bool = True,
    update_gamma: bool = True,
    update_angles: bool = True,
    update_lambda: bool = True,
    rng=None,
    callback: Optional[Callable] = None,
    check_every: int = 1000,
) -> ChainTrace:
    """Run the Configuration sampler; see :func:`run_chain` for the callback."""
    rng = rng if rng is not None else np.random.default_rng(prop_cfg.rng_seed)
    pose = Pose() if pose is None else pose
    tau = cfg.alpha0 / cfg.beta0 if tau_init is None else tau_init
    chain = ConfigurationChain(X, mu, cfg, prop_cfg, ap, init, pose, tau, rng)
    rec = TraceRecorder(n_iter, burn_in, thin, chain.M, chain.N, with_pose=True)
    flags = (update_tau, update_gamma, update_angles, update_lambda)
    for it in range(1, n_iter + 1):
        changed = chain.step(*flags)
        rec.accumulate(it, chain.columns, changed)
        if rec.wants(it):
            rec.record(it, chain.tau, chain.assign, chain.log_posterior(), chain.angles, chain.gamma)
        if callback is not None and it % check_every == 0 and callback(it, chain):
            break
    return rec.finish(chain.moves, chain.state)

