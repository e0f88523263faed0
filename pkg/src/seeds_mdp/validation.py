"""Input checks shared by the estimators, the harness and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .mdp import LayeredMdp, validate_mdp


def check_mdp(mdp) -> LayeredMdp:
    if not isinstance(mdp, LayeredMdp):
        raise TypeError(f"expected a LayeredMdp, got {type(mdp).__name__}")
    problems = validate_mdp(mdp)
    if problems:
        raise ValueError("invalid MDP: " + "; ".join(problems[:5]))
    return mdp


def check_loss_sequence(losses, mdp: LayeredMdp) -> np.ndarray:
    """Validate a ``(T, N, A)`` loss array.

    A single ``(N, A)`` table is promoted to one episode; for single-state
    MDPs (bandits) a ``(T, A)`` array is read as T episodes.
    """
    arr = check_array(losses, ensure_2d=False, allow_nd=True, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None] if arr.shape == mdp.shape else arr[:, None, :] if mdp.n_states == 1 else arr[None]
    if arr.ndim != 3 or arr.shape[1:] != mdp.shape:
        raise ValueError(f"losses have shape {arr.shape}, expected (T, {mdp.n_states}, {mdp.n_actions})")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("losses must lie in [0, 1]")
    return arr


def check_positive(value, name, *, integer=False):
    if integer:
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
        return int(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)
