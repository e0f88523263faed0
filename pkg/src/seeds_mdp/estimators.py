"""scikit-learn style wrappers around the two learners.

``fit(losses, mdp)`` plays the learner online against the loss sequence in
the given MDP; the fitted attributes hold the final occupancy measure, the
last executed policy and the per-episode log.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .harness import compute_regret
from .occupancy import action_probabilities, marginalize
from .rng import RngStream
from .seeds import SeedsParams, run_seeds, seeds_params
from .seeds_ut import SeedsUtParams, run_seeds_ut, seedsut_params
from .validation import check_loss_sequence, check_mdp, check_positive


class _OnlineLearner(BaseEstimator):
    def _stream(self):
        rs = self.random_state
        if isinstance(rs, RngStream):
            return rs
        return RngStream(0 if rs is None else int(rs))

    def predict(self, states):
        """Action of the last executed policy at each (global) state index."""
        check_is_fitted(self, "policy_")
        return self.policy_.actions[np.asarray(states, dtype=np.int64)]

    def predict_proba(self, states):
        """Pr[a|s] under the final occupancy measure."""
        check_is_fitted(self, "occupancy_")
        return action_probabilities(self.occupancy_)[np.asarray(states, dtype=np.int64)]

    def score(self, losses, mdp):
        """Negative total regret of the fitted run (higher is better)."""
        check_is_fitted(self, "record_")
        losses = check_loss_sequence(losses, mdp)
        return -compute_regret(self.record_, mdp, losses, self.beta).total


class SEEDS(_OnlineLearner):
    """Super-episode OMD learner for a known transition function.

    ``eta`` and ``tau`` default to the tuned rates for the horizon of the
    loss sequence passed to ``fit``.
    """

    def __init__(self, *, beta=1.0, eta=None, tau=None, c_eta=1.0, c_tau=1.0, lazy=False, tol=1e-9, random_state=None):
        self.beta = beta
        self.eta = eta
        self.tau = tau
        self.c_eta = c_eta
        self.c_tau = c_tau
        self.lazy = lazy
        self.tol = tol
        self.random_state = random_state

    def _params(self, T, mdp) -> SeedsParams:
        beta = check_positive(self.beta, "beta")
        p = seeds_params(T, mdp.H, mdp.n_states_total, mdp.n_actions, beta, self.c_eta, self.c_tau)
        eta = p.eta if self.eta is None else check_positive(self.eta, "eta")
        tau = p.tau if self.tau is None else check_positive(self.tau, "tau", integer=True)
        return SeedsParams(eta, tau, beta, self.c_eta, self.c_tau)

    def fit(self, losses, mdp):
        mdp = check_mdp(mdp)
        losses = check_loss_sequence(losses, mdp)
        self.params_ = self._params(losses.shape[0], mdp)
        self.record_ = run_seeds(mdp, losses, self.params_, rng=self._stream(), lazy=self.lazy, tol=self.tol)
        self.occupancy_ = self.record_.meta["final_q"]
        self.policy_ = self.record_.policies[-1]
        self.n_switches_ = self.record_.n_switches
        return self


class SEEDSUT(_OnlineLearner):
    """Super-episode OMD learner that does not know the transition function.

    The MDP passed to ``fit`` only simulates episodes; the learner uses its
    layer sizes and the observed trajectories.
    """

    def __init__(self, *, beta=1.0, delta=0.1, eta=None, tau=None, gamma=None, c_eta=1.0, c_tau=1.0, c_gamma=1.0,
                 upper_method="exact", tol=1e-8, random_state=None):
        self.beta = beta
        self.delta = delta
        self.eta = eta
        self.tau = tau
        self.gamma = gamma
        self.c_eta = c_eta
        self.c_tau = c_tau
        self.c_gamma = c_gamma
        self.upper_method = upper_method
        self.tol = tol
        self.random_state = random_state

    def _params(self, T, mdp) -> SeedsUtParams:
        beta = check_positive(self.beta, "beta")
        p = seedsut_params(T, mdp.H, mdp.n_states_total, mdp.n_actions, beta, self.delta, self.c_eta, self.c_tau, self.c_gamma)
        return SeedsUtParams(
            p.eta if self.eta is None else check_positive(self.eta, "eta"),
            p.tau if self.tau is None else check_positive(self.tau, "tau", integer=True),
            p.gamma if self.gamma is None else check_positive(self.gamma, "gamma"),
            beta, self.delta, self.c_eta, self.c_tau, self.c_gamma,
        )

    def fit(self, losses, mdp):
        mdp = check_mdp(mdp)
        losses = check_loss_sequence(losses, mdp)
        self.params_ = self._params(losses.shape[0], mdp)
        self.record_ = run_seeds_ut(mdp, losses, self.params_, rng=self._stream(), tol=self.tol, upper_method=self.upper_method)
        self.triple_occupancy_ = self.record_.meta["final_q3"]
        self.occupancy_ = marginalize(self.triple_occupancy_)
        self.counts_ = self.record_.meta["counts"]
        self.policy_ = self.record_.policies[-1]
        self.n_switches_ = self.record_.n_switches
        return self
