"""Big-jump burn-in moves for the Procrustes sampler.

The four moves (nearness, rotation, translation, flip) re-assign every
matched row at once. They are not reversible, so they are only used during
an initialisation phase whose output is discarded before inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geom import axis_rotation
from .model import MatchMatrix, ModelConfig, ModelState
from .sampler_procrustes import ProcrustesChain, ProposalConfig
from .trace import MoveStats

AXES = ("x", "y", "z")
JUMP_KINDS = ("nearness", "rotation", "translation", "flip")


@dataclass(frozen=True)
class JumpConfig:
    p_n: float = 0.001
    p_r: float = 0.02
    p_t: float = 0.09
    p_f: float = 0.01
    sigma_T: float = 2.2
    n_settle: int = 850
    n_initialisation: int = 1_000_000
    delay: int = 0

    def __post_init__(self):
        probs = (self.p_n, self.p_r, self.p_t, self.p_f)
        if min(probs) < 0 or sum(probs) >= 1:
            raise ValueError("jump probabilities must be nonnegative with sum < 1")
        if not self.sigma_T > 0:
            raise ValueError("sigma_T must be positive")
        if self.n_settle < 0 or self.n_initialisation < 0 or self.delay < 0:
            raise ValueError("n_settle, n_initialisation and delay must be >= 0")


def _assign_of(lambda_):
    return lambda_.assign if isinstance(lambda_, MatchMatrix) else np.asarray(lambda_)


def nearest_assign(X: np.ndarray, mu: np.ndarray, assign: np.ndarray) -> np.ndarray:
    """Array form of :func:`nearness`. Ties go to the lowest mu index."""
    out = np.array(assign, dtype=np.int64)
    rows = np.flatnonzero(out >= 0)
    if rows.size:
        diff = X[rows, None, :] - mu[None, :, :]
        out[rows] = np.argmin((diff * diff).sum(axis=2), axis=1)
    return out


def nearness(X, mu, lambda_: MatchMatrix) -> MatchMatrix:
    """Re-match every matched row of ``X`` to its nearest ``mu`` point.

    ``X`` should already be in the frame of ``mu`` (registered coordinates).
    Unmatched rows stay unmatched.
    """
    X = np.asarray(X, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return MatchMatrix(nearest_assign(X, mu, lambda_.assign), lambda_.n_targets)


def jump_rotation(X, mu, lambda_: MatchMatrix, rng, theta: Optional[float] = None, axis: Optional[str] = None):
    """Rotate ``X`` about a random coordinate axis by ``U[-pi, pi]``, then nearness."""
    if axis is None:
        axis = AXES[int(rng.random() * 3)]
    if theta is None:
        theta = (2.0 * rng.random() - 1.0) * math.pi
    X = np.asarray(X, dtype=np.float64)
    return nearness(X @ axis_rotation(axis, theta), mu, lambda_)


def jump_flip(X, mu, lambda_: MatchMatrix, rng, axis: Optional[str] = None):
    return jump_rotation(X, mu, lambda_, rng, theta=math.pi, axis=axis)


def jump_translation(X, mu, lambda_: MatchMatrix, sigma_T: float, rng, shift=None):
    if not sigma_T > 0:
        raise ValueError("sigma_T must be positive")
    if shift is None:
        shift = sigma_T * rng.standard_normal(3)
    X = np.asarray(X, dtype=np.float64)
    return nearness(X + np.asarray(shift, dtype=np.float64), mu, lambda_)


class JumpScheduler:
    """Decides, per iteration, whether to propose a big jump and which one.

    Keeps the settle counter: a big jump may only be chosen once ``n_settle``
    default updates have been proposed since the previous one.
    """

    def __init__(self, jump_cfg: JumpConfig):
        self.cfg = jump_cfg
        self.since_jump = jump_cfg.n_settle
        self.log = []  # (iteration, kind) of every big-jump proposal
        c = jump_cfg
        self._cum = np.cumsum([c.p_n, c.p_r, c.p_t, c.p_f])

    def choose(self, it: int, rng) -> Optional[str]:
        if it <= self.cfg.delay or self.since_jump < self.cfg.n_settle:
            self.since_jump += 1
            return None
        u = rng.random()
        k = int(np.searchsorted(self._cum, u, side="right"))
        if k >= len(JUMP_KINDS):
            self.since_jump += 1
            return None
        self.since_jump = 0
        self.log.append((it, JUMP_KINDS[k]))
        return JUMP_KINDS[k]


def propose_jump(chain: ProcrustesChain, kind: str, jump_cfg: JumpConfig) -> np.ndarray:
    X = chain.x_registered
    lam = MatchMatrix(chain.assign, chain.N)
    rng = chain.rng
    if kind == "nearness":
        return nearness(X, chain.mu, lam).assign
    if kind == "rotation":
        return jump_rotation(X, chain.mu, lam, rng).assign
    if kind == "flip":
        return jump_flip(X, chain.mu, lam, rng).assign
    if kind == "translation":
        return jump_translation(X, chain.mu, lam, jump_cfg.sigma_T, rng).assign
    raise ValueError(f"unknown jump {kind!r}")


def big_jump_step(chain: ProcrustesChain, kind: str, jump_cfg: JumpConfig) -> bool:
    """Propose ``kind`` and accept with the plain posterior ratio (no q-ratio)."""
    stats = chain.moves.setdefault(kind, MoveStats())
    stats.proposed += 1
    new = propose_jump(chain, kind, jump_cfg)
    u = chain.rng.random()
    if np.array_equal(new, chain.assign):
        stats.accepted += 1
        return False
    log_r = chain.log_target(new) - chain.log_target()
    if log_r >= 0.0 or math.log(1.0 - u) < log_r:
        chain.set_assign(new)
        stats.accepted += 1
        return True
    return False


def run_initialization(
    chain: ProcrustesChain,
    jump_cfg: JumpConfig,
    *,
    update_tau: bool = True,
    callback: Optional[Callable] = None,
    check_every: int = 1000,
    scheduler: Optional[JumpScheduler] = None,
) -> JumpScheduler:
    """Drive ``chain`` through the initialisation phase in place.

    Each iteration draws tau, then makes either one default single-row update
    or one big jump. ``callback(iteration, chain)`` works as in ``run_chain``.
    """
    sched = scheduler or JumpScheduler(jump_cfg)
    for it in range(1, jump_cfg.n_initialisation + 1):
        if update_tau:
            chain.gibbs_tau()
        kind = sched.choose(it, chain.rng)
        if kind is None:
            chain.lambda_step()
        else:
            big_jump_step(chain, kind, jump_cfg)
        if callback is not None and it % check_every == 0 and callback(it, chain):
            break
    return sched


def initialization_phase(
    X,
    mu,
    state: ModelState,
    cfg: ModelConfig,
    jump_cfg: JumpConfig,
    prop_cfg: ProposalConfig,
    rng,
) -> ModelState:
    """Run the big-jump initialisation from ``state`` and return the end state."""
    chain = ProcrustesChain(X, mu, cfg, prop_cfg, state.lambda_, state.tau, rng)
    run_initialization(chain, jump_cfg)
    return chain.state
