"""SEEDS-UT: the super-episode learner when transitions are unknown.

The learner keeps a triple occupancy q(s', s, a), visit counts, an
empirical-Bernstein confidence set around the empirical transitions, and
divides observed losses by an upper occupancy bound plus ``gamma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import DeterministicPolicy, LayeredMdp
from .occupancy import TripleOccupancy, marginalize, policy_from_occupancy
from .omd import DEFAULT_TOL, ProjectionReport, project_confidence
from .record import ExperimentRecord
from .seeds import VisitBuffer, _resolve_losses, _round_half_up, _split_rng, play_super_episode


@dataclass(frozen=True)
class SeedsUtParams:
    eta: float
    tau: int
    gamma: float
    beta: float = 1.0
    delta: float = 0.1
    c_eta: float = 1.0
    c_tau: float = 1.0
    c_gamma: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if int(self.tau) < 1:
            raise ValueError("tau must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def seedsut_params(T, H, S, A, beta=1.0, delta=0.1, c_eta=1.0, c_tau=1.0, c_gamma=1.0) -> SeedsUtParams:
    if min(T, H, S, A, beta) <= 0:
        raise ValueError("T, H, S, A and beta must be positive")
    eta = c_eta * beta ** (-1 / 3) * H ** (1 / 3) * (S * A) ** (-1 / 3) * T ** (-2 / 3)
    tau = max(1, _round_half_up(c_tau * beta ** (2 / 3) * H ** (-2 / 3) * (S * A) ** (-1 / 3) * T ** (1 / 3)))
    gamma = c_gamma * beta ** (1 / 3) * H ** (2 / 3) * (S * A) ** (-2 / 3) * T ** (-1 / 2)
    return SeedsUtParams(eta, tau, gamma, beta, delta, c_eta, c_tau, c_gamma)


@dataclass(frozen=True)
class Counts:
    """Triple visit counts ``M[h]`` of shape ``(S_h, A, S_{h+1})``; ``N`` is their row sum."""

    M: tuple[np.ndarray, ...]

    @classmethod
    def zeros(cls, layer_sizes, n_actions) -> "Counts":
        return cls(tuple(np.zeros((layer_sizes[h], n_actions, layer_sizes[h + 1]), dtype=np.int64) for h in range(len(layer_sizes) - 1)))

    @property
    def N(self) -> tuple[np.ndarray, ...]:
        return tuple(m.sum(axis=2) for m in self.M)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.M) + (self.M[-1].shape[2],)


def update_counts(counts: Counts, states, actions=None) -> Counts:
    """Add the transitions of a batch of episodes.

    ``states`` are layer-local with shape ``(n, H + 1)``; ``actions`` have
    shape ``(n, H)``. A list of :class:`Trajectory` objects is accepted too.
    """
    if isinstance(states, (list, tuple)) and actions is None:
        if not states:
            return counts
        actions = np.array([tr.actions for tr in states])
        states = np.array([tr.states for tr in states])
    states = np.asarray(states)
    actions = np.asarray(actions)
    M = tuple(m.copy() for m in counts.M)
    if states.size == 0:
        return Counts(M)
    for h, m in enumerate(M):
        np.add.at(m, (states[:, h], actions[:, h], states[:, h + 1]), 1)
    return Counts(M)


def confidence_radius(p_bar, n, log_term):
    """2 sqrt(p ln / max(n-1, 1)) + 14 ln / (3 max(n-1, 1))."""
    denom = np.maximum(np.asarray(n, dtype=float) - 1.0, 1.0)
    return 2.0 * np.sqrt(np.asarray(p_bar) * log_term / denom) + 14.0 * log_term / (3.0 * denom)


@dataclass(frozen=True)
class ConfidenceSet:
    p_bar: tuple[np.ndarray, ...]
    eps: tuple[np.ndarray, ...]
    delta: float
    counts: Counts

    def bounds(self):
        """Per-entry transition intervals clipped to [0, 1]; unvisited rows are vacuous."""
        lo, hi = [], []
        for p, e, n in zip(self.p_bar, self.eps, self.counts.N):
            l = np.clip(p - e, 0.0, 1.0)
            u = np.clip(p + e, 0.0, 1.0)
            empty = (n == 0)[..., None]
            lo.append(np.where(empty, 0.0, l))
            hi.append(np.where(empty, 1.0, u))
        return tuple(lo), tuple(hi)

    def contains(self, P, slack: float = 0.0) -> bool:
        lo, hi = self.bounds()
        return all(np.all(np.asarray(p) >= l - slack) and np.all(np.asarray(p) <= u + slack) for p, l, u in zip(P, lo, hi))

    @classmethod
    def vacuous(cls, layer_sizes, n_actions, delta=0.1) -> "ConfidenceSet":
        counts = Counts.zeros(layer_sizes, n_actions)
        p_bar = tuple(np.full(m.shape, 1.0 / m.shape[2]) for m in counts.M)
        eps = tuple(np.ones(m.shape) for m in counts.M)
        return cls(p_bar, eps, delta, counts)

    @classmethod
    def exact(cls, P, delta=0.1) -> "ConfidenceSet":
        """Zero-radius set around ``P``, with every row marked as visited."""
        M = tuple(np.ones(np.asarray(p).shape, dtype=np.int64) for p in P)
        return cls(tuple(np.asarray(p, dtype=float) for p in P), tuple(np.zeros(np.asarray(p).shape) for p in P), delta, Counts(M))


def build_confidence_set(counts: Counts, T, delta, *, n_states=None, joint=False) -> ConfidenceSet:
    """Empirical transitions and their radii.

    ``n_states`` defaults to the total number of states (terminal included).
    With ``joint=True`` the square-root term uses the joint frequency of the
    triple within its layer instead of the conditional P_bar(s'|s, a).
    """
    sizes = counts.layer_sizes
    S = sum(sizes) if n_states is None else n_states
    A = counts.M[0].shape[1]
    log_term = math.log(T * S * A / delta)
    p_bar, eps = [], []
    for m, n in zip(counts.M, counts.N):
        pb = m / np.maximum(n, 1)[..., None]
        inner = m / max(int(m.sum()), 1) if joint else pb
        p_bar.append(pb)
        eps.append(np.broadcast_to(confidence_radius(inner, n[..., None], log_term), m.shape).copy())
    return ConfidenceSet(tuple(p_bar), tuple(eps), delta, counts)


def _max_over_box(lo, hi, values):
    """max p . values over {lo <= p <= hi, sum p = 1} for each row of lo/hi."""
    order = np.argsort(-values, kind="stable")
    slack = (hi - lo)[:, order]
    room = 1.0 - lo.sum(axis=1, keepdims=True)
    before = np.cumsum(slack, axis=1) - slack
    take = np.clip(room - before, 0.0, slack)
    return lo @ values + take @ values[order]


def max_reach(cset: ConfidenceSet) -> np.ndarray:
    """Largest probability of reaching each non-terminal state over all
    policies and all transition functions in the set (backward DP per target)."""
    lo, hi = cset.bounds()
    sizes = cset.counts.layer_sizes
    H = len(sizes) - 1
    out = [np.ones(1)]
    for k in range(1, H):
        reach = np.zeros(sizes[k])
        for target in range(sizes[k]):
            V = np.zeros(sizes[k])
            V[target] = 1.0
            for h in reversed(range(k)):
                S, A, Sn = lo[h].shape
                rows = _max_over_box(lo[h].reshape(S * A, Sn), hi[h].reshape(S * A, Sn), V)
                V = rows.reshape(S, A).max(axis=1)
            reach[target] = V[0]
        out.append(reach)
    return np.concatenate(out)


def greedy_reach(cset: ConfidenceSet) -> np.ndarray:
    """Layerwise relaxation g(s') = min(1, sum_s g(s) max_a p_plus(s'|s, a))."""
    _, hi = cset.bounds()
    g = [np.ones(1)]
    for h in range(len(hi) - 1):
        g.append(np.minimum(1.0, g[-1] @ hi[h].max(axis=1)))
    return np.concatenate(g)


def upper_occupancy(cset: ConfidenceSet, gamma: float, method: str = "exact") -> np.ndarray:
    """Upper occupancy bound plus gamma, as an ``(N, A)`` table."""
    if method == "exact":
        reach = max_reach(cset)
    elif method == "greedy":
        reach = greedy_reach(cset)
    else:
        raise ValueError(f"unknown upper-occupancy method {method!r}")
    A = cset.counts.M[0].shape[1]
    return np.repeat(reach[:, None], A, axis=1) + gamma


@dataclass
class SeedsUtState:
    u: int
    q3_hat: TripleOccupancy
    current_policy: DeterministicPolicy
    counts: Counts
    cset: ConfidenceSet
    upper_q: np.ndarray
    visit_buffer: VisitBuffer = field(default_factory=VisitBuffer)
    report: ProjectionReport | None = None


def estimate_loss_ut(state: SeedsUtState) -> np.ndarray:
    shape = state.upper_q.shape
    sums = state.visit_buffer.loss_sums(shape)
    return sums / state.upper_q


def seedsut_update(state: SeedsUtState, lhat, params: SeedsUtParams, T, rng, *, n_states=None, tol=DEFAULT_TOL, upper_method="exact", joint=False) -> SeedsUtState:
    batch = state.visit_buffer.next_states
    counts = state.counts
    if batch:
        counts = update_counts(counts, np.concatenate(batch), np.concatenate(state.visit_buffer.actions))
    cset = build_confidence_set(counts, T, params.delta, n_states=n_states, joint=joint)
    lhat = np.asarray(lhat, dtype=float)
    log_w, off = [], 0
    with np.errstate(divide="ignore"):
        for b in state.q3_hat.q3:
            n = b.shape[0]
            log_w.append(np.log(b) - params.eta * lhat[off : off + n][:, :, None])
            off += n
    q3, report = project_confidence(None, cset, tol, log_weights=log_w)
    policy = policy_from_occupancy(marginalize(q3), rng)
    upper = upper_occupancy(cset, params.gamma, upper_method)
    return SeedsUtState(state.u + 1, q3, policy, counts, cset, upper, VisitBuffer(), report)


def run_seeds_ut(mdp: LayeredMdp, adversary, params: SeedsUtParams, T=None, rng=0, *, tol=1e-8, upper_method="exact", joint=False, kl_coordinates="triple", keep_history=False) -> ExperimentRecord:
    """Play SEEDS-UT. ``mdp`` drives the simulator only; the learner sees its
    layer sizes and the trajectories it generates."""
    if kl_coordinates != "triple":
        raise ValueError("only kl_coordinates='triple' is supported")
    losses = _resolve_losses(adversary, mdp, T)
    T = losses.shape[0]
    tau = int(params.tau)
    sizes, A = mdp.layer_sizes, mdp.n_actions
    learner_gen, env_gen = _split_rng(rng)
    q3 = TripleOccupancy.uniform(sizes, A)
    cset = ConfidenceSet.vacuous(sizes, A, params.delta)
    state = SeedsUtState(
        0, q3, policy_from_occupancy(marginalize(q3), learner_gen), cset.counts, cset,
        upper_occupancy(cset, params.gamma, upper_method),
    )
    record = ExperimentRecord(T=T, tau=tau, q_history=[] if keep_history else None)
    record.meta.update(algorithm="seeds_ut", eta=params.eta, beta=params.beta, gamma=params.gamma)
    record.meta["csets"] = [] if keep_history else None
    prev = None
    offsets = mdp.offsets[:-1]
    for u in range(math.ceil(T / tau)):
        start, stop = u * tau, min((u + 1) * tau, T)
        record.policies.append(state.current_policy)
        if keep_history:
            record.q_history.append(state.q3_hat)
            record.meta["csets"].append(state.cset)
        states, actions, observed = play_super_episode(record, mdp, state.current_policy, losses, u, start, stop, env_gen, prev)
        prev = state.current_policy
        state.visit_buffer.add(np.arange(start, stop), states[:, :-1] + offsets, actions, observed, states)
        lhat = estimate_loss_ut(state)
        state = seedsut_update(state, lhat, params, T, learner_gen, n_states=mdp.n_states_total, tol=tol, upper_method=upper_method, joint=joint)
        record.reports.append(state.report)
    record.meta["final_q3"] = state.q3_hat
    record.meta["counts"] = state.counts
    return record
