"""Simulation study, convergence monitoring and posterior summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geom import PointSet, procrustes_arrays
from .init_jumps import JumpConfig, run_initialization
from .model import UNMATCHED, MatchMatrix, ModelConfig, log_prior_lambda_counts, log_prior_tau
from .sampler_config import AngleProposalConfig, run_chain_config
from .sampler_procrustes import ProcrustesChain, ProposalConfig, run_chain
from .trace import ChainTrace, SummedMatchMatrix

MODEL_KINDS = ("procrustes", "configuration")

# Weak precision prior for synthetic studies; the protein profile
# (beta0 = 36) swamps perturbations of sd 0.1-1.
SIM_MODEL_CONFIG = dict(alpha0=1.0, beta0=0.1, psi=0.2)


@dataclass(frozen=True)
class SimConfig:
    L: float = 10.0
    d_min: float = 2.0
    M: int = 20
    N: int = 24
    n_ones: int = 12
    s: float = 0.1
    n_iter: int = 100_000
    K: int = 100

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not 0 < self.d_min < self.L:
            raise ValueError("need 0 < d_min < L")
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive")
        if not 0 <= self.n_ones < self.M or self.n_ones > self.N:
            raise ValueError("need 0 <= n_ones < M and n_ones <= N")
        if not 0 <= self.s < self.d_min:
            raise ValueError("need 0 <= s < d_min")
        if self.n_iter < 1 or self.K < 1:
            raise ValueError("n_iter and K must be positive")

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** 3


@dataclass(frozen=True)
class GroundTruth:
    pairs: tuple
    unmatched: tuple

    def __post_init__(self):
        rows = [i for i, _ in self.pairs]
        if len(set(rows)) != len(rows) or set(rows) & set(self.unmatched):
            raise ValueError("ground-truth rows must be distinct across pairs and unmatched")

    def match_matrix(self, M: int, N: int) -> MatchMatrix:
        return MatchMatrix.from_pairs(self.pairs, M, N)


def sample_separated_points(n, L, d_min, rng, max_tries=1_000_000) -> np.ndarray:
    """Uniform points in ``[-L, L]^3``, each at least ``d_min`` from the others."""
    pts = np.empty((n, 3))
    d2_min = d_min * d_min
    for k in range(n):
        for _ in range(max_tries):
            c = rng.uniform(-L, L, 3)
            if k == 0:
                break
            diff = pts[:k] - c
            if (diff * diff).sum(axis=1).min() >= d2_min:
                break
        else:
            raise RuntimeError(
                f"could not place point {k + 1} of {n} at separation {d_min} in {max_tries} tries"
            )
        pts[k] = c
    return pts


def generate_sim_instance(sc: SimConfig, rng, mu: Optional[PointSet] = None):
    """Draw ``(mu, X, truth)``. Passing ``mu`` keeps it fixed and redraws X only."""
    if mu is None:
        mu = PointSet(sample_separated_points(sc.N, sc.L, sc.d_min, rng), [f"mu{j}" for j in range(sc.N)])
    m = np.asarray(mu)
    X = np.empty((sc.M, 3))
    X[: sc.n_ones] = m[: sc.n_ones] + sc.s * rng.standard_normal((sc.n_ones, 3))
    X[sc.n_ones :] = rng.uniform(-sc.L, sc.L, (sc.M - sc.n_ones, 3))
    truth = GroundTruth(
        tuple((i, i) for i in range(sc.n_ones)), tuple(range(sc.n_ones, sc.M))
    )
    return mu, PointSet(X, [f"x{i}" for i in range(sc.M)]), truth


def correct_match_count(lambda_: MatchMatrix, truth: GroundTruth) -> int:
    a = lambda_.assign
    return sum(1 for i, j in truth.pairs if a[i] == j)


def _correct_count_array(assign: np.ndarray, truth: GroundTruth) -> int:
    return sum(1 for i, j in truth.pairs if assign[i] == j)


def convergence_monitor(trace: ChainTrace, truth: GroundTruth, threshold: int, check_every: int = 1000):
    """First recorded iteration divisible by ``check_every`` that reaches ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    for k, it in enumerate(trace.iteration):
        if it % check_every == 0 and _correct_count_array(trace.assignments[k], truth) >= threshold:
            return int(it)
    return None


def match_probabilities(smm: SummedMatchMatrix) -> np.ndarray:
    if smm.total <= 0:
        raise ValueError("no match matrices accumulated")
    return smm.counts / smm.total


def threshold_match_matrix(smm: SummedMatchMatrix) -> MatchMatrix:
    """Row-wise argmax of the summed matrices; ties go to the lowest column."""
    if smm.total <= 0:
        raise ValueError("no match matrices accumulated")
    cols = np.argmax(smm.counts, axis=1)
    N = smm.n_targets
    return MatchMatrix(np.where(cols == N, UNMATCHED, cols), N)


def sim_model_config(sc: SimConfig, **overrides) -> ModelConfig:
    kw = dict(SIM_MODEL_CONFIG, volume_A=sc.volume)
    kw.update(overrides)
    return ModelConfig(**kw)


def run_model(kind, X, mu, cfg, prop_cfg, n_iter, init, rng, ap=None, **kw) -> ChainTrace:
    if kind == "procrustes":
        return run_chain(X, mu, cfg, prop_cfg, n_iter, init, rng=rng, **kw)
    if kind == "configuration":
        return run_chain_config(X, mu, cfg, prop_cfg, ap or AngleProposalConfig(), n_iter, init, rng=rng, **kw)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class SimulationResult:
    """Per-point mean and variance (over K replicates) of success proportions.

    Success is "matched to its true partner" for rows below ``n_ones`` and
    "unmatched" for the rest. Variances are NaN when K == 1.
    """

    proportions: np.ndarray  # (K, M)
    n_ones: int
    s: float
    model_kind: str
    variance_defined: bool = True

    @property
    def mean(self) -> np.ndarray:
        return self.proportions.mean(axis=0)

    @property
    def variance(self) -> np.ndarray:
        if self.proportions.shape[0] < 2:
            return np.full(self.proportions.shape[1], np.nan)
        return self.proportions.var(axis=0, ddof=1)

    @property
    def matched_mean(self) -> float:
        return float(self.mean[: self.n_ones].mean())

    @property
    def unmatched_mean(self) -> float:
        return float(self.mean[self.n_ones :].mean())

    def rows(self):
        mean, var = self.mean, self.variance
        for i in range(mean.size):
            yield {
                "point_index": i,
                "true_role": "matched" if i < self.n_ones else "unmatched",
                "mean_proportion": float(mean[i]),
                "variance": float(var[i]),
                "s": self.s,
                "model_kind": self.model_kind,
            }


def success_proportions(smm: SummedMatchMatrix, truth: GroundTruth) -> np.ndarray:
    probs = match_probabilities(smm)
    M = probs.shape[0]
    out = np.empty(M)
    for i, j in truth.pairs:
        out[i] = probs[i, j]
    for i in truth.unmatched:
        out[i] = probs[i, -1]
    return out


def simulation_study(
    sc: SimConfig,
    model_kind: str,
    rng,
    *,
    cfg: Optional[ModelConfig] = None,
    prop_cfg: Optional[ProposalConfig] = None,
    ap: Optional[AngleProposalConfig] = None,
    mu: Optional[PointSet] = None,
) -> SimulationResult:
    """Hold mu fixed, redraw X ``K`` times, run from the true match each time.

    Replicate ``k`` uses its own stream spawned from ``rng``, so results do
    not depend on the order replicates are run in.
    """
    cfg = cfg or sim_model_config(sc)
    prop_cfg = prop_cfg or ProposalConfig()
    rng = np.random.default_rng(rng)
    if mu is None:
        mu, _, _ = generate_sim_instance(sc, rng)
    streams = rng.spawn(sc.K)
    props = np.empty((sc.K, sc.M))
    for k, sub in enumerate(streams):
        data_rng, chain_rng = sub.spawn(2)
        _, X, truth = generate_sim_instance(sc, data_rng, mu=mu)
        init = truth.match_matrix(sc.M, sc.N)
        tr = run_model(model_kind, np.asarray(X), np.asarray(mu), cfg, prop_cfg, sc.n_iter, init, chain_rng, ap)
        props[k] = success_proportions(tr.summed, truth)
    return SimulationResult(props, sc.n_ones, sc.s, model_kind, variance_defined=sc.K > 1)


def simulation_sweep(
    sc: SimConfig,
    s_values: Sequence[float],
    model_kinds: Sequence[str] = MODEL_KINDS,
    seed: int = 0,
    **kw,
) -> list:
    """Run :func:`simulation_study` over perturbation sds and models.

    One mu is drawn from ``seed`` and shared by every cell; every cell reuses
    the same replicate streams (common random numbers across ``s``).
    """
    mu, _, _ = generate_sim_instance(sc, np.random.default_rng([seed, 0]))
    out = []
    for s in s_values:
        cell = SimConfig(**{**sc.__dict__, "s": s})
        for kind in model_kinds:
            study_rng = np.random.default_rng([seed, 1])
            out.append(simulation_study(cell, kind, study_rng, mu=mu, **kw))
    return out


def random_match_matrix(M: int, N: int, rng) -> MatchMatrix:
    """Each row uniform over the N + 1 columns."""
    cols = rng.integers(0, N + 1, size=M)
    return MatchMatrix(np.where(cols == N, UNMATCHED, cols), N)


@dataclass
class ConvergenceResult:
    hits: list  # first checkpoint reaching the threshold, or None, per instance
    jump_rates: dict = field(default_factory=dict)

    @property
    def n_converged(self) -> int:
        return sum(h is not None for h in self.hits)


def convergence_study(
    sc: SimConfig,
    n_instances: int,
    max_iter: int,
    *,
    threshold: int = 10,
    check_every: int = 1000,
    jump_cfg: Optional[JumpConfig] = None,
    cfg: Optional[ModelConfig] = None,
    prop_cfg: Optional[ProposalConfig] = None,
    seed: int = 0,
) -> ConvergenceResult:
    """Procrustes runs from random match matrices, stopped at first convergence.

    With ``jump_cfg`` the first ``jump_cfg.n_initialisation`` iterations use
    big jumps. Instance ``k`` (data and start) depends only on ``seed`` and
    ``k``, so runs with and without jumps see identical problems.
    """
    cfg = cfg or sim_model_config(sc)
    prop_cfg = prop_cfg or ProposalConfig()
    hits = []
    totals = {}
    for k, sub in enumerate(np.random.default_rng(seed).spawn(n_instances)):
        data_rng, init_rng, chain_rng = sub.spawn(3)
        mu, X, truth = generate_sim_instance(sc, data_rng)
        init = random_match_matrix(sc.M, sc.N, init_rng)
        X, mu = np.asarray(X), np.asarray(mu)
        X = X - X.mean(axis=0)
        mu = mu - mu.mean(axis=0)
        chain = ProcrustesChain(X, mu, cfg, prop_cfg, init, cfg.alpha0 / cfg.beta0, chain_rng)
        hit = []

        def check(it, ch, offset=0):
            if _correct_count_array(ch.assign, truth) >= threshold:
                hit.append(offset + it)
                return True
            return False

        done = 0
        if jump_cfg is not None and jump_cfg.n_initialisation > 0:
            phase = JumpConfig(**{**jump_cfg.__dict__, "n_initialisation": min(jump_cfg.n_initialisation, max_iter)})
            run_initialization(chain, phase, callback=check, check_every=check_every)
            done = phase.n_initialisation
        if not hit and done < max_iter:
            run_chain(
                X, mu, cfg, prop_cfg, max_iter - done, init, chain=chain,
                callback=lambda it, ch: check(it, ch, done), check_every=check_every,
            )
        hits.append(hit[0] if hit else None)
        for name, st in chain.moves.items():
            t = totals.setdefault(name, [0, 0])
            t[0] += st.proposed
            t[1] += st.accepted
    rates = {name: (a / p if p else float("nan")) for name, (p, a) in totals.items()}
    return ConvergenceResult(hits, rates)


# -- Laplace-link diagnostic ------------------------------------------------


@dataclass
class LaplaceEstimate:
    log_pi_c: float
    log_pi_p: float
    mc_se: float  # standard error of exp(log_pi_c - max) on the log scale (delta method)
    n_matched: int


def _log_gamma_integral(r: np.ndarray, tau: float, mu_g: np.ndarray, s2: float) -> np.ndarray:
    """log of int N(gamma; mu_g, s2 I) prod_k N(r_k; gamma, I/tau) d gamma.

    ``r`` has shape (n, p, 3): per rotation sample, the residuals mu_k - x_k R.
    """
    p = r.shape[1]
    r_bar = r.mean(axis=1)
    within = ((r - r_bar[:, None, :]) ** 2).sum(axis=(1, 2))
    v = s2 + 1.0 / (p * tau)
    dev = ((r_bar - mu_g) ** 2).sum(axis=1)
    return (
        1.5 * p * math.log(tau / (2 * math.pi))
        - 0.5 * tau * within
        + 1.5 * math.log(2 * math.pi / (p * tau))
        - 1.5 * math.log(2 * math.pi * v)
        - 0.5 * dev / v
    )


def _haar_sample(n, rng):
    """Uniform Euler-box samples with Haar importance weights (mean 1)."""
    t12 = rng.uniform(-math.pi, math.pi, n)
    t13 = rng.uniform(-math.pi / 2, math.pi / 2, n)
    t23 = rng.uniform(-math.pi, math.pi, n)
    c1, s1 = np.cos(t12), np.sin(t12)
    c2, s2 = np.cos(t13), np.sin(t13)
    c3, s3 = np.cos(t23), np.sin(t23)
    R = np.empty((n, 3, 3))
    R[:, 0, 0] = c1 * c2
    R[:, 0, 1] = s1 * c3 - c1 * s2 * s3
    R[:, 0, 2] = c1 * s2 * c3 + s1 * s3
    R[:, 1, 0] = -s1 * c2
    R[:, 1, 1] = c1 * c3 + s1 * s2 * s3
    R[:, 1, 2] = c1 * s3 - s1 * s2 * c3
    R[:, 2, 0] = -s2
    R[:, 2, 1] = -c2 * s3
    R[:, 2, 2] = c2 * c3
    return R, 0.5 * math.pi * c2


def _logmeanexp(logw: np.ndarray):
    m = logw.max()
    if not np.isfinite(m):
        raise FloatingPointError("all Monte Carlo weights underflowed")
    w = np.exp(logw - m)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(w.size) / mean if w.size > 1 else float("nan")
    return m + math.log(mean), se


def laplace_diagnostic(
    X,
    mu,
    lambdas: Sequence[MatchMatrix],
    tau: float,
    cfg: ModelConfig,
    n_mc: int,
    rng,
    *,
    gamma_mode: str = "analytic",
) -> list:
    """Integrated versus maximised (Gamma, gamma) posterior values per candidate.

    ``log_pi_c`` integrates the Configuration posterior over Haar-distributed
    rotations (Monte Carlo) and over the translation -- in closed form by
    default, or by sampling its prior with ``gamma_mode="prior"``.
    ``log_pi_p`` plugs in the partial Procrustes optimum. Both omit
    constants shared by every candidate apart from the tau, Lambda priors.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be >= 1000")
    if gamma_mode not in ("analytic", "prior"):
        raise ValueError("gamma_mode must be 'analytic' or 'prior'")
    X = np.asarray(X, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    M, N = X.shape[0], mu.shape[0]
    mu_g = np.asarray(cfg.mu_gamma)
    s2 = cfg.sigma_gamma**2
    R, w = _haar_sample(n_mc, rng)
    log_w = np.log(w)
    out = []
    for lam in lambdas:
        rows = lam.matched_rows
        p = rows.size
        base = (
            log_prior_tau(tau, cfg)
            + log_prior_lambda_counts(p, M, N, cfg)
            - (M - p) * cfg.log_volume
        )
        if p == 0:
            out.append(LaplaceEstimate(base, base, 0.0, 0))
            continue
        A, B = X[rows], mu[lam.assign[rows]]
        if p == 1:
            d2 = 0.0
        else:
            _, _, d2, _ = procrustes_arrays(A, B)
        log_p = base + 1.5 * p * math.log(tau / (2 * math.pi)) - 0.5 * tau * d2
        # residuals mu_k - x_k R for every sampled rotation: (n, p, 3)
        r = B[None, :, :] - np.einsum("pi,nij->npj", A, R)
        if gamma_mode == "analytic":
            logf = _log_gamma_integral(r, tau, mu_g, s2)
        else:
            g = mu_g + math.sqrt(s2) * rng.standard_normal((n_mc, 3))
            e = r - g[:, None, :]
            logf = 1.5 * p * math.log(tau / (2 * math.pi)) - 0.5 * tau * (e * e).sum(axis=(1, 2))
        log_c, se = _logmeanexp(logf + log_w)
        out.append(LaplaceEstimate(base + log_c, log_p, se, p))
    return out


def truth_candidates(truth: GroundTruth, M: int, N: int, rng, n_wrong: int = 3) -> list:
    """Nested sub-matches of the truth plus a few corrupted variants."""
    pairs = list(truth.pairs)
    cands = [MatchMatrix.from_pairs(pairs[:k], M, N) for k in range(len(pairs) + 1)]
    for _ in range(n_wrong):
        a = truth.match_matrix(M, N).assign.copy()
        rows = rng.choice(len(pairs), size=min(3, len(pairs)), replace=False)
        for i in rows:
            a[pairs[i][0]] = (pairs[i][1] + 1 + int(rng.integers(N - 1))) % N
        cands.append(MatchMatrix(a, N))
    return cands
