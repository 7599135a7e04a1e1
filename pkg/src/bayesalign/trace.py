"""Chain output containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import MatchMatrix


@dataclass
class SummedMatchMatrix:
    """Running sum of dense match matrices.

    Accumulation is by dwell time: the chain adds a state once with the
    number of iterations it stayed there, which keeps per-iteration cost flat.
    """

    counts: np.ndarray
    total: int = 0

    @classmethod
    def zeros(cls, n_rows: int, n_targets: int) -> "SummedMatchMatrix":
        return cls(np.zeros((n_rows, n_targets + 1), dtype=np.int64), 0)

    @property
    def n_targets(self) -> int:
        return self.counts.shape[1] - 1

    def add(self, lambda_: MatchMatrix, weight: int = 1) -> None:
        self.add_columns(lambda_.columns(), weight)

    def add_columns(self, columns: np.ndarray, weight: int = 1) -> None:
        if weight <= 0:
            return
        self.counts[np.arange(self.counts.shape[0]), columns] += weight
        self.total += weight

    def check(self) -> None:
        if not np.all(self.counts.sum(axis=1) == self.total):
            raise AssertionError("summed match matrix rows disagree with total")


@dataclass
class MoveStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


@dataclass
class ChainTrace:
    """Per-iteration record of a chain.

    Rows are kept for iterations ``burn_in + thin, burn_in + 2 thin, ...``
    (1-based). ``summed`` covers every post-burn-in iteration regardless of
    thinning.
    """

    iteration: np.ndarray
    tau: np.ndarray
    n_matched: np.ndarray
    log_posterior: np.ndarray
    assignments: np.ndarray
    summed: SummedMatchMatrix
    moves: dict = field(default_factory=dict)
    angles: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    final_state: object = None

    def __len__(self):
        return self.iteration.size

    def match_matrix(self, k: int) -> MatchMatrix:
        return MatchMatrix(self.assignments[k], self.summed.n_targets)

    def acceptance_rates(self) -> dict:
        return {name: s.rate for name, s in self.moves.items()}


class TraceRecorder:
    """Preallocated buffers filled as a chain runs."""

    def __init__(self, n_iter, burn_in, thin, n_rows, n_targets, with_pose=False):
        if n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if burn_in < 0 or burn_in >= n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if thin < 1:
            raise ValueError("thin must be >= 1")
        self.burn_in = burn_in
        self.thin = thin
        n = (n_iter - burn_in) // thin
        self.n = n
        self.k = 0
        self.iteration = np.zeros(n, dtype=np.int64)
        self.tau = np.zeros(n)
        self.n_matched = np.zeros(n, dtype=np.int64)
        self.log_posterior = np.zeros(n)
        self.assignments = np.zeros((n, n_rows), dtype=np.int32)
        self.angles = np.zeros((n, 3)) if with_pose else None
        self.gamma = np.zeros((n, 3)) if with_pose else None
        self.summed = SummedMatchMatrix.zeros(n_rows, n_targets)
        self._cols = None
        self._dwell = 0

    def wants(self, it: int) -> bool:
        """Whether 1-based iteration ``it`` is a recorded row."""
        j = it - self.burn_in
        return j > 0 and j % self.thin == 0

    def accumulate(self, it: int, cols_fn, changed: bool) -> None:
        if it <= self.burn_in:
            return
        if self._cols is None:
            self._cols = cols_fn()
        elif changed:
            self.summed.add_columns(self._cols, self._dwell)
            self._cols = cols_fn()
            self._dwell = 0
        self._dwell += 1

    def record(self, it, tau, assign, log_post, angles=None, gamma=None) -> None:
        k = self.k
        self.iteration[k] = it
        self.tau[k] = tau
        self.n_matched[k] = int(np.count_nonzero(assign >= 0))
        self.log_posterior[k] = log_post
        self.assignments[k] = assign
        if self.angles is not None:
            self.angles[k] = angles
            self.gamma[k] = gamma
        self.k += 1

    def finish(self, moves, final_state) -> ChainTrace:
        if self._cols is not None:
            self.summed.add_columns(self._cols, self._dwell)
            self._dwell = 0
            self._cols = None
        k = self.k
        return ChainTrace(
            iteration=self.iteration[:k],
            tau=self.tau[:k],
            n_matched=self.n_matched[:k],
            log_posterior=self.log_posterior[:k],
            assignments=self.assignments[:k],
            summed=self.summed,
            moves=moves,
            angles=None if self.angles is None else self.angles[:k],
            gamma=None if self.gamma is None else self.gamma[:k],
            final_state=final_state,
        )
