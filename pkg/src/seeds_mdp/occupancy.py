"""Occupancy measures over pairs and triples, feasibility checks, policy
extraction and the best-fixed-policy comparator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .rng import as_generator

if TYPE_CHECKING:  # pragma: no cover
    from .mdp import DeterministicPolicy, LayeredMdp

ZERO_MASS = 1e-15
TRANSITION_FLOOR = 1e-12
LOG_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """q(s, a) stored as an ``(N, A)`` table over non-terminal states."""

    q: np.ndarray
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        n = sum(self.layer_sizes[:-1])
        if self.q.ndim != 2 or self.q.shape[0] != n:
            raise ValueError(f"occupancy table has shape {self.q.shape}, expected ({n}, A)")
        object.__setattr__(self, "_offsets", [0, *np.cumsum(self.layer_sizes[:-1]).tolist()])

    @property
    def H(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def offsets(self) -> np.ndarray:
        return np.array(self._offsets)

    def layer(self, h: int) -> np.ndarray:
        return self.q[self._offsets[h] : self._offsets[h + 1]]

    def state_mass(self) -> np.ndarray:
        return self.q.sum(axis=1)

    def to_nested(self) -> list:
        return [self.layer(h).tolist() for h in range(self.H)]

    @classmethod
    def from_nested(cls, nested, layer_sizes) -> "OccupancyMeasure":
        return cls(np.concatenate([np.asarray(b, dtype=float) for b in nested], axis=0), layer_sizes)


@dataclass(frozen=True, eq=False)
class TripleOccupancy:
    """q(s', s, a) stored per layer as arrays of shape ``(S_h, A, S_{h+1})``."""

    q3: tuple[np.ndarray, ...]

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.q3)
        for h in range(len(blocks) - 1):
            if blocks[h].shape[2] != blocks[h + 1].shape[0]:
                raise ValueError(f"layer {h} and {h + 1} triple blocks do not chain")
        object.__setattr__(self, "q3", blocks)

    @property
    def H(self) -> int:
        return len(self.q3)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.q3) + (self.q3[-1].shape[2],)

    @property
    def n_actions(self) -> int:
        return self.q3[0].shape[1]

    def to_nested(self) -> list:
        return [b.tolist() for b in self.q3]

    @classmethod
    def uniform(cls, layer_sizes, n_actions: int) -> "TripleOccupancy":
        blocks = []
        for h in range(len(layer_sizes) - 1):
            shape = (layer_sizes[h], n_actions, layer_sizes[h + 1])
            blocks.append(np.full(shape, 1.0 / np.prod(shape)))
        return cls(tuple(blocks))


@dataclass(frozen=True)
class ResidualReport:
    normalization: float
    flow: float
    transition: float = 0.0
    interval: float = 0.0

    @property
    def max(self) -> float:
        return max(self.normalization, self.flow, self.transition, self.interval)

    def feasible(self, tol: float = 1e-8) -> bool:
        return self.max < tol


def marginalize(q3: TripleOccupancy) -> OccupancyMeasure:
    return OccupancyMeasure(np.concatenate([b.sum(axis=2) for b in q3.q3], axis=0), q3.layer_sizes)


def triple_from_pairs(q: OccupancyMeasure, P) -> TripleOccupancy:
    """q(s', s, a) = q(s, a) P(s'|s, a)."""
    return TripleOccupancy(tuple(q.layer(h)[:, :, None] * np.asarray(P[h]) for h in range(q.H)))


def induced_transition(q3: TripleOccupancy):
    """Transition function generated by a triple occupancy.

    Returns ``(P_hat, zero_rows)``; rows whose mass is below the floor come
    back uniform and are flagged ``True`` in ``zero_rows``.
    """
    P_hat, flags = [], []
    for block in q3.q3:
        mass = block.sum(axis=2, keepdims=True)
        empty = mass[..., 0] < TRANSITION_FLOOR
        safe = np.where(mass < TRANSITION_FLOOR, 1.0, mass)
        rows = np.where(empty[..., None], 1.0 / block.shape[2], block / safe)
        P_hat.append(rows)
        flags.append(empty)
    return tuple(P_hat), tuple(flags)


def validate_occupancy(q, P=None) -> ResidualReport:
    """Max absolute residual of each constraint family.

    Pair measures without ``P`` only carry the normalization check; flow for
    pair measures is measured through ``P``. For triples, the induced
    transition is compared to ``P`` on rows with mass above the floor.
    """
    if isinstance(q, TripleOccupancy):
        norm = max(abs(b.sum() - 1.0) for b in q.q3)
        flow = 0.0
        for h in range(1, q.H):
            inflow = q.q3[h - 1].sum(axis=(0, 1))
            outflow = q.q3[h].sum(axis=(1, 2))
            flow = max(flow, float(np.abs(inflow - outflow).max()))
        trans = 0.0
        if P is not None:
            for block, Ph in zip(q.q3, P):
                mass = block.sum(axis=2)
                live = mass >= TRANSITION_FLOOR
                if live.any():
                    ratio = block[live] / mass[live][:, None]
                    trans = max(trans, float(np.abs(ratio - np.asarray(Ph)[live]).max()))
        return ResidualReport(float(norm), flow, trans)

    occ = q if isinstance(q, OccupancyMeasure) else None
    if occ is None:
        raise TypeError("expected an OccupancyMeasure or TripleOccupancy")
    norm = max(abs(occ.layer(h).sum() - 1.0) for h in range(occ.H))
    flow = 0.0
    if P is not None:
        for h in range(1, occ.H):
            inflow = np.einsum("sa,sat->t", occ.layer(h - 1), np.asarray(P[h - 1]))
            flow = max(flow, float(np.abs(inflow - occ.layer(h).sum(axis=1)).max()))
    return ResidualReport(float(norm), flow)


def action_probabilities(q: OccupancyMeasure) -> np.ndarray:
    """Pr[a|s] = q(s,a) / sum_b q(s,b); uniform where the state has no mass."""
    mass = q.q.sum(axis=1, keepdims=True)
    uniform = np.full_like(q.q, 1.0 / q.q.shape[1])
    return np.where(mass < ZERO_MASS, uniform, q.q / np.where(mass < ZERO_MASS, 1.0, mass))


def policy_from_occupancy(q: OccupancyMeasure, rng) -> "DeterministicPolicy":
    """Draw one deterministic policy, each state's action sampled independently."""
    from .mdp import DeterministicPolicy

    gen = as_generator(rng)
    probs = action_probabilities(q)
    cdf = np.cumsum(probs, axis=1)
    u = gen.random(probs.shape[0])
    actions = (u[:, None] >= cdf[:, :-1]).sum(axis=1)
    return DeterministicPolicy(actions)


def best_fixed_policy(mdp: "LayeredMdp", aggregate_loss):
    """Backward DP for the deterministic policy minimising <q, L>.

    Ties go to the lowest action index. Returns ``(policy, value)``.
    """
    from .mdp import DeterministicPolicy

    L = np.asarray(aggregate_loss, dtype=float)
    if L.shape != mdp.shape:
        raise ValueError(f"aggregate loss has shape {L.shape}, expected {mdp.shape}")
    actions = np.zeros(mdp.n_states, dtype=np.int64)
    V = np.zeros(1)
    for h in reversed(range(mdp.H)):
        sl = mdp.layer_slice(h)
        Q = L[sl] + mdp.P[h] @ V
        best = Q.min(axis=1, keepdims=True)
        near = Q <= best + 1e-12 * (1.0 + np.abs(best))
        actions[sl] = near.argmax(axis=1)
        V = Q[np.arange(Q.shape[0]), actions[sl]]
    return DeterministicPolicy(actions), float(V[0])


def best_fixed_occupancy(mdp: "LayeredMdp", aggregate_loss):
    """Comparator occupancy for the regret: ``(OccupancyMeasure, value)``."""
    from .mdp import occupancy_of_policy

    policy, value = best_fixed_policy(mdp, aggregate_loss)
    return occupancy_of_policy(mdp, policy), value


def kl_unnormalized(q, q_ref) -> float:
    """sum q ln(q / q_ref) - sum (q - q_ref), with 0 ln 0 = 0."""
    a = q.q if isinstance(q, OccupancyMeasure) else np.asarray(q, dtype=float)
    b = q_ref.q if isinstance(q_ref, OccupancyMeasure) else np.asarray(q_ref, dtype=float)
    live = a > ZERO_MASS
    log_term = np.sum(a[live] * (np.log(a[live]) - np.log(np.maximum(b[live], LOG_FLOOR))))
    return float(log_term - np.sum(a - b))
