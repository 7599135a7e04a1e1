"""scikit-learn style front end for the two matching samplers.

``fit(X, y)`` takes the random configuration ``X`` (M x 3) and the fixed
configuration ``y`` (N x 3, the template ``mu``). After fitting, ``predict``
returns the threshold match (index into ``y`` or -1 per row of ``X``),
``predict_proba`` the posterior match probabilities and ``transform`` maps
coordinates of ``X`` into the frame of ``y``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .experiments import match_probabilities, random_match_matrix, threshold_match_matrix
from .geom import RigidTransform, matrix_to_euler, procrustes_arrays
from .init_jumps import JumpConfig, run_initialization
from .io import volume_bounding_box
from .model import MatchMatrix, ModelConfig, Pose
from .sampler_config import AngleProposalConfig, run_chain_config
from .sampler_procrustes import ProcrustesChain, ProposalConfig, run_chain
from .validation import check_generator, check_match_matrix, check_points


def _registration(X, mu, lam: MatchMatrix) -> RigidTransform:
    rows = lam.matched_rows
    if rows.size < 2:
        if rows.size == 1:
            return RigidTransform(np.eye(3), mu[lam.assign[rows[0]]] - X[rows[0]])
        return RigidTransform()
    R, t, _, _ = procrustes_arrays(X[rows], mu[lam.assign[rows]])
    return RigidTransform(R, t)


class _BaseMatcher(TransformerMixin, BaseEstimator):
    def _model_config(self, volume):
        return ModelConfig(
            alpha0=self.alpha0,
            beta0=self.beta0,
            psi=self.psi,
            volume_A=volume,
            **self._extra_model_kw(),
        )

    def _extra_model_kw(self):
        return {}

    def _start(self, X, mu, init, rng):
        M, N = X.shape[0], mu.shape[0]
        init = self.init if init is None else init
        if isinstance(init, str):
            if init == "unmatched":
                return MatchMatrix.unmatched(M, N)
            if init == "random":
                return random_match_matrix(M, N, rng)
            raise ValueError(f"init must be 'unmatched', 'random' or a match matrix, got {init!r}")
        return check_match_matrix(init, M, N)

    def fit(self, X, y, init=None):
        """Sample the match posterior of ``X`` against the fixed set ``y``."""
        X_raw, self.x_ids_ = check_points(X, "X")
        mu_raw, self.mu_ids_ = check_points(y, "y")
        self.n_features_in_ = 3
        rng = check_generator(self.random_state)
        if self.center:
            Xc = X_raw - X_raw.mean(axis=0)
            muc = mu_raw - mu_raw.mean(axis=0)
        else:
            Xc, muc = X_raw, mu_raw
        self.volume_A_ = self.volume_A if self.volume_A is not None else volume_bounding_box(X_raw, mu_raw)
        cfg = self._model_config(self.volume_A_)
        lam0 = self._start(Xc, muc, init, rng)
        self.trace_ = self._run(Xc, muc, cfg, lam0, rng)
        self.summed_match_ = self.trace_.summed
        self.match_probabilities_ = match_probabilities(self.summed_match_)
        self.threshold_match_ = threshold_match_matrix(self.summed_match_)
        self.registration_ = _registration(X_raw, mu_raw, self.threshold_match_)
        self.tau_mean_ = float(self.trace_.tau.mean()) if len(self.trace_) else float("nan")
        self.sigma_mean_ = float((1.0 / np.sqrt(self.trace_.tau)).mean()) if len(self.trace_) else float("nan")
        self.acceptance_rates_ = self.trace_.acceptance_rates()
        return self

    def _check_same_X(self, X):
        if X is not None:
            arr, _ = check_points(X, "X")
            if arr.shape[0] != len(self.x_ids_):
                raise ValueError("matching is transductive: predict on the X passed to fit, or refit")

    def predict(self, X=None):
        """Threshold match: per row of X, the index into y or -1 (unmatched)."""
        check_is_fitted(self, "threshold_match_")
        self._check_same_X(X)
        return self.threshold_match_.assign.copy()

    def fit_predict(self, X, y, **fit_params):
        return self.fit(X, y, **fit_params).predict()

    def predict_proba(self, X=None):
        """Posterior match probabilities, shape (M, N + 1); last column = unmatched."""
        check_is_fitted(self, "match_probabilities_")
        self._check_same_X(X)
        return self.match_probabilities_.copy()

    def transform(self, X):
        """Apply the registration of the threshold match to coordinates ``X``."""
        check_is_fitted(self, "registration_")
        arr, _ = check_points(X, "X")
        return arr @ self.registration_.rotation + self.registration_.translation


class ProcrustesMatcher(_BaseMatcher):
    """Bayesian matching under the Procrustes size-and-shape likelihood.

    Parameters
    ----------
    n_iter, burn_in, thin : int
        Sampling iterations after any initialisation phase; the first
        ``burn_in`` are discarded, then every ``thin``-th is kept in the trace.
        Match probabilities use every post-burn-in iteration.
    alpha0, beta0 : float
        Shape and rate of the Gamma prior on the precision ``tau``.
    psi : float
        Prior probability that a row of X is unmatched.
    volume_A : float or None
        Volume of the region holding unmatched points. ``None`` uses the
        bounding-box product of the two sets.
    p_reject : float
        Probability that a matched row is proposed as unmatched.
    fast_ratio : bool
        Use the single-row approximate acceptance ratio on registered
        coordinates instead of the exact posterior ratio.
    schmidler_q : bool
        Use ``Q = 3p`` Gaussian dimensions.
    big_jumps : bool
        Run the big-jump initialisation for ``n_initialisation`` iterations
        before sampling.
    p_n, p_r, p_t, p_f, sigma_T, n_settle, n_initialisation, jump_delay
        Big-jump schedule; see :class:`bayesalign.init_jumps.JumpConfig`.
    init : {"unmatched", "random"} or match matrix
    center : bool
        Centre both sets before sampling.
    random_state : int, Generator or None

    Attributes
    ----------
    trace_ : ChainTrace
    match_probabilities_ : ndarray of shape (M, N + 1)
    threshold_match_ : MatchMatrix
    registration_ : RigidTransform
        Partial Procrustes fit of the threshold match, in input coordinates.
    tau_mean_, sigma_mean_ : float
    acceptance_rates_ : dict
    jump_log_ : list of (iteration, kind), only with ``big_jumps``

    Examples
    --------
    >>> import numpy as np
    >>> rng = np.random.default_rng(0)
    >>> mu = rng.uniform(-5, 5, (6, 3))
    >>> X = mu[:4] + 0.05 * rng.standard_normal((4, 3))
    >>> m = ProcrustesMatcher(n_iter=3000, beta0=0.1, random_state=0)
    >>> m.fit(X, mu, init=np.arange(4)).predict()
    array([0, 1, 2, 3])
    """

    def __init__(
        self,
        n_iter=10000,
        *,
        burn_in=0,
        thin=1,
        alpha0=1.0,
        beta0=36.0,
        psi=0.2,
        volume_A=None,
        p_reject=0.2,
        lambda_updates=1,
        fast_ratio=False,
        schmidler_q=False,
        big_jumps=False,
        p_n=0.001,
        p_r=0.02,
        p_t=0.09,
        p_f=0.01,
        sigma_T=2.2,
        n_settle=850,
        n_initialisation=1_000_000,
        jump_delay=0,
        init="random",
        center=True,
        random_state=None,
    ):
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.psi = psi
        self.volume_A = volume_A
        self.p_reject = p_reject
        self.lambda_updates = lambda_updates
        self.fast_ratio = fast_ratio
        self.schmidler_q = schmidler_q
        self.big_jumps = big_jumps
        self.p_n = p_n
        self.p_r = p_r
        self.p_t = p_t
        self.p_f = p_f
        self.sigma_T = sigma_T
        self.n_settle = n_settle
        self.n_initialisation = n_initialisation
        self.jump_delay = jump_delay
        self.init = init
        self.center = center
        self.random_state = random_state

    def _extra_model_kw(self):
        return {"schmidler_q": self.schmidler_q}

    def jump_config(self) -> JumpConfig:
        return JumpConfig(
            p_n=self.p_n,
            p_r=self.p_r,
            p_t=self.p_t,
            p_f=self.p_f,
            sigma_T=self.sigma_T,
            n_settle=self.n_settle,
            n_initialisation=self.n_initialisation,
            delay=self.jump_delay,
        )

    def _run(self, X, mu, cfg, lam0, rng):
        prop = ProposalConfig(self.p_reject, self.fast_ratio, 0, self.lambda_updates)
        chain = ProcrustesChain(X, mu, cfg, prop, lam0, cfg.alpha0 / cfg.beta0, rng)
        self.jump_log_ = []
        if self.big_jumps:
            self.jump_log_ = run_initialization(chain, self.jump_config()).log
        return run_chain(X, mu, cfg, prop, self.n_iter, lam0, burn_in=self.burn_in, thin=self.thin, chain=chain)


class ConfigurationMatcher(_BaseMatcher):
    """Bayesian matching with rotation and translation as model parameters.

    Parameters match :class:`ProcrustesMatcher` where shared, plus:

    mu_gamma, sigma_gamma
        Mean and sd of the Gaussian prior on the translation.
    width12, width13, width23 : float
        Half-widths of the uniform angle proposals (radians).
    pose_init : {"procrustes", "identity"}
        Start the pose at the Procrustes fit of the initial match (when it has
        at least two matched rows) or at the identity.

    Attributes
    ----------
    pose_trace_ : tuple of ndarrays (angles, gamma), one row per trace row
    """

    def __init__(
        self,
        n_iter=10000,
        *,
        burn_in=0,
        thin=1,
        alpha0=1.0,
        beta0=36.0,
        psi=0.2,
        volume_A=None,
        mu_gamma=(0.0, 0.0, 0.0),
        sigma_gamma=50.0,
        p_reject=0.2,
        lambda_updates=1,
        width12=0.2,
        width13=0.1,
        width23=0.2,
        pose_init="procrustes",
        init="random",
        center=True,
        random_state=None,
    ):
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.psi = psi
        self.volume_A = volume_A
        self.mu_gamma = mu_gamma
        self.sigma_gamma = sigma_gamma
        self.p_reject = p_reject
        self.lambda_updates = lambda_updates
        self.width12 = width12
        self.width13 = width13
        self.width23 = width23
        self.pose_init = pose_init
        self.init = init
        self.center = center
        self.random_state = random_state

    def _extra_model_kw(self):
        return {"mu_gamma": tuple(self.mu_gamma), "sigma_gamma": self.sigma_gamma}

    def _initial_pose(self, X, mu, lam0):
        if self.pose_init == "identity" or lam0.n_matched < 2:
            return Pose()
        if self.pose_init != "procrustes":
            raise ValueError(f"pose_init must be 'procrustes' or 'identity', got {self.pose_init!r}")
        t = _registration(X, mu, lam0)
        return Pose(matrix_to_euler(t.rotation), tuple(t.translation))

    def _run(self, X, mu, cfg, lam0, rng):
        prop = ProposalConfig(self.p_reject, True, 0, self.lambda_updates)
        ap = AngleProposalConfig(self.width12, self.width13, self.width23)
        tr = run_chain_config(
            X, mu, cfg, prop, ap, self.n_iter, lam0, self._initial_pose(X, mu, lam0),
            burn_in=self.burn_in, thin=self.thin, rng=rng,
        )
        self.pose_trace_ = (tr.angles, tr.gamma)
        return tr
