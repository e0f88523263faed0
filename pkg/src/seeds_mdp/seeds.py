"""SEEDS: super-episode mirror descent over occupancy measures with known
transitions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import DeterministicPolicy, LayeredMdp, occupancy_of_policy, simulate_episodes
from .occupancy import OccupancyMeasure, policy_from_occupancy
from .omd import DEFAULT_TOL, ProjectionReport, project_known
from .record import ExperimentRecord
from .rng import RngStream, as_generator

Q_FLOOR = 1e-300


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SeedsParams:
    eta: float
    tau: int
    beta: float = 1.0
    c_eta: float = 1.0
    c_tau: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if int(self.tau) < 1:
            raise ValueError("tau must be >= 1")


def seeds_params(T, H, S, A, beta=1.0, c_eta=1.0, c_tau=1.0) -> SeedsParams:
    """Learning rate and super-episode length at the rates tuned for known P."""
    if min(T, H, S, A, beta) <= 0:
        raise ValueError("T, H, S, A and beta must be positive")
    eta = c_eta * beta ** (-1 / 3) * H ** (2 / 3) * (S * A) ** (-1 / 3) * T ** (-2 / 3)
    tau = max(1, _round_half_up(c_tau * beta ** (2 / 3) * (H * S * A) ** (-1 / 3) * T ** (1 / 3)))
    return SeedsParams(eta, tau, beta, c_eta, c_tau)


@dataclass
class VisitBuffer:
    """Observations of the current super-episode (bandit feedback only)."""

    episodes: list = field(default_factory=list)
    states: list = field(default_factory=list)  # global indices, (n, H)
    actions: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    next_states: list = field(default_factory=list)  # layer-local, (n, H + 1)

    def add(self, episodes, states_global, actions, losses, local_states=None):
        self.episodes.append(np.asarray(episodes))
        self.states.append(np.asarray(states_global))
        self.actions.append(np.asarray(actions))
        self.losses.append(np.asarray(losses, dtype=float))
        if local_states is not None:
            self.next_states.append(np.asarray(local_states))

    def loss_sums(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        for s, a, l in zip(self.states, self.actions, self.losses):
            np.add.at(out, (s.ravel(), a.ravel()), l.ravel())
        return out

    def visit_counts(self, shape) -> np.ndarray:
        out = np.zeros(shape, dtype=np.int64)
        for s, a in zip(self.states, self.actions):
            np.add.at(out, (s.ravel(), a.ravel()), 1)
        return out


@dataclass
class SeedsState:
    u: int
    q_hat: OccupancyMeasure
    current_policy: DeterministicPolicy
    visit_buffer: VisitBuffer = field(default_factory=VisitBuffer)
    report: ProjectionReport | None = None


def estimate_loss_seeds(state: SeedsState) -> np.ndarray:
    """Importance-weighted super-episode loss: observed loss sums over q_hat."""
    q = state.q_hat.q
    sums = state.visit_buffer.loss_sums(q.shape)
    visited = state.visit_buffer.visit_counts(q.shape) > 0
    if np.any(visited & (q < Q_FLOOR)):
        raise ValueError("visited a pair whose occupancy is below the positivity floor")
    return np.where(visited, sums / np.where(visited, q, 1.0), 0.0)


def seeds_update(state: SeedsState, lhat, params: SeedsParams, mdp: LayeredMdp, rng, *, lazy=False, tol=DEFAULT_TOL) -> SeedsState:
    q_prev = state.q_hat.q
    with np.errstate(divide="ignore"):
        log_w = np.log(q_prev) - params.eta * np.asarray(lhat, dtype=float)
    q_new, report = project_known(None, mdp, tol, log_weights=log_w)
    if lazy and np.abs(q_new.q - q_prev).sum() <= 1e-12:
        policy = state.current_policy
    else:
        policy = policy_from_occupancy(q_new, rng)
    return SeedsState(state.u + 1, q_new, policy, VisitBuffer(), report)


def initial_occupancy(mdp: LayeredMdp) -> OccupancyMeasure:
    return occupancy_of_policy(mdp, np.full(mdp.shape, 1.0 / mdp.n_actions))


def _split_rng(rng):
    stream = rng if isinstance(rng, RngStream) else None
    if stream is None and (rng is None or isinstance(rng, (int, np.integer))):
        stream = RngStream(0 if rng is None else int(rng))
    if stream is not None:
        return stream.child(0).generator(), stream.child(1).generator()
    gen = as_generator(rng)
    return gen, gen


def _resolve_losses(adversary, mdp, T):
    if isinstance(adversary, np.ndarray) or isinstance(adversary, (list, tuple)):
        losses = np.asarray(adversary, dtype=float)
    else:
        from .adversary import generate_losses

        losses = generate_losses(adversary, mdp, T)
    if T is not None:
        losses = losses[:T]
    if losses.ndim != 3 or losses.shape[1:] != mdp.shape:
        raise ValueError(f"loss sequence has shape {losses.shape}, expected (T, {mdp.n_states}, {mdp.n_actions})")
    return losses


def play_super_episode(record, mdp, policy, losses, u, start, stop, env_gen, prev_policy, occ_cache=None):
    """Run episodes ``start..stop-1`` with a frozen policy and log them."""
    states, actions, observed = simulate_episodes(mdp, policy, losses[start:stop], env_gen)
    if occ_cache is None:
        occ = occupancy_of_policy(mdp, policy)
    else:
        occ = occ_cache.get(policy)
        if occ is None:
            occ = occ_cache[policy] = occupancy_of_policy(mdp, policy)
    record.episode_u[start:stop] = u
    record.expected_loss[start:stop] = np.einsum("tsa,sa->t", losses[start:stop], occ.q)
    record.realized_loss[start:stop] = observed.sum(axis=1)
    if prev_policy is not None and policy != prev_policy:
        record.switched[start] = 1
    return states, actions, observed


def run_seeds(mdp: LayeredMdp, adversary, params: SeedsParams, T=None, rng=0, *, lazy=False, tol=DEFAULT_TOL, keep_history=False) -> ExperimentRecord:
    """Play SEEDS against an oblivious loss sequence.

    ``adversary`` is an ``AdversarySpec`` or a ``(T, N, A)`` loss array.
    """
    losses = _resolve_losses(adversary, mdp, T)
    T = losses.shape[0]
    tau = int(params.tau)
    learner_gen, env_gen = _split_rng(rng)
    q = initial_occupancy(mdp)
    state = SeedsState(0, q, policy_from_occupancy(q, learner_gen))
    record = ExperimentRecord(T=T, tau=tau, q_history=[] if keep_history else None)
    record.meta.update(algorithm="seeds", eta=params.eta, beta=params.beta)
    prev = None
    occ_cache = {}
    for u in range(math.ceil(T / tau)):
        start, stop = u * tau, min((u + 1) * tau, T)
        record.policies.append(state.current_policy)
        if keep_history:
            record.q_history.append(state.q_hat.q.copy())
        states, actions, observed = play_super_episode(record, mdp, state.current_policy, losses, u, start, stop, env_gen, prev, occ_cache)
        prev = state.current_policy
        state.visit_buffer.add(np.arange(start, stop), states[:, :-1] + mdp.offsets[:-1], actions, observed)
        lhat = estimate_loss_seeds(state)
        state = seeds_update(state, lhat, params, mdp, learner_gen, lazy=lazy, tol=tol)
        record.reports.append(state.report)
    if keep_history:
        record.q_history.append(state.q_hat.q.copy())
    record.meta["final_q"] = state.q_hat
    return record
