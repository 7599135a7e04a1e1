"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array

from .geom import PointSet
from .model import UNMATCHED, MatchMatrix


def check_points(X, name="X"):
    """Return ``(coords, ids)`` for a PointSet or an ``(n, 3)`` array-like."""
    if isinstance(X, PointSet):
        return X.points.copy(), X.ids
    arr = check_array(X, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1, input_name=name)
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns (x, y, z); got {arr.shape[1]}")
    ids = tuple(str(i) for i in range(arr.shape[0]))
    return arr, ids


def check_generator(random_state) -> np.random.Generator:
    """Turn None, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(random_state)
    raise ValueError(f"cannot build a Generator from {random_state!r}")


def check_match_matrix(init, M: int, N: int) -> MatchMatrix:
    if isinstance(init, MatchMatrix):
        lam = init
    else:
        a = np.asarray(init)
        if a.ndim == 2:
            lam = MatchMatrix.from_dense(a)
        else:
            lam = MatchMatrix(np.where(a < 0, UNMATCHED, a), N)
    if lam.shape != (M, N):
        raise ValueError(f"initial match matrix is {lam.shape}; data need ({M}, {N})")
    return lam
