"""Layered episodic MDPs: representation, simulation and policy occupancy."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .occupancy import OccupancyMeasure
from .rng import as_generator

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LayeredMdp:
    """Loop-free MDP with ``H`` decision layers plus a terminal layer.

    ``P[h]`` has shape ``(S_h, A, S_{h+1})``. Non-terminal states are indexed
    globally: layer ``h`` occupies ``offsets[h]:offsets[h + 1]``.
    """

    layer_sizes: tuple[int, ...]
    n_actions: int
    P: tuple[np.ndarray, ...]
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("layer_sizes needs at least two positive entries")
        if int(self.n_actions) < 1:
            raise ValueError("n_actions must be >= 1")
        P = []
        for h, block in enumerate(self.P):
            arr = np.array(block, dtype=float)
            expected = (sizes[h], int(self.n_actions), sizes[h + 1])
            if arr.shape != expected:
                raise ValueError(f"P[{h}] has shape {arr.shape}, expected {expected}")
            arr.setflags(write=False)
            P.append(arr)
        if len(P) != len(sizes) - 1:
            raise ValueError(f"expected {len(sizes) - 1} transition blocks, got {len(P)}")
        offsets = np.concatenate([[0], np.cumsum(sizes[:-1])]).astype(int)
        offsets.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "n_actions", int(self.n_actions))
        object.__setattr__(self, "P", tuple(P))
        object.__setattr__(self, "offsets", offsets)

    @property
    def H(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_states(self) -> int:
        """Number of non-terminal states (rows of every pair table)."""
        return int(self.offsets[-1])

    @property
    def n_states_total(self) -> int:
        return int(sum(self.layer_sizes))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions

    def layer_slice(self, h: int) -> slice:
        return slice(int(self.offsets[h]), int(self.offsets[h + 1]))

    def layer_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.H), self.layer_sizes[: self.H])

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "layer_sizes": list(self.layer_sizes),
            "A": self.n_actions,
            "P": [p.tolist() for p in self.P],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LayeredMdp":
        for key in ("layer_sizes", "A", "P"):
            if key not in doc:
                raise ValueError(f"mdp document is missing field '{key}'")
        mdp = cls(tuple(doc["layer_sizes"]), doc["A"], tuple(np.asarray(p, dtype=float) for p in doc["P"]))
        if "H" in doc and int(doc["H"]) != mdp.H:
            raise ValueError(f"field 'H'={doc['H']} disagrees with layer_sizes (H={mdp.H})")
        return mdp


def save_mdp(mdp: LayeredMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1) + "\n")


def load_mdp(path) -> LayeredMdp:
    return LayeredMdp.from_dict(json.loads(Path(path).read_text()))


def validate_mdp(mdp: LayeredMdp) -> list[str]:
    """Return a list of violated invariants; empty when the MDP is valid."""
    problems = []
    if mdp.layer_sizes[0] != 1:
        problems.append(f"initial layer must be a singleton, has {mdp.layer_sizes[0]} states")
    if mdp.layer_sizes[-1] != 1:
        problems.append(f"terminal layer H={mdp.H} must be a singleton, has {mdp.layer_sizes[-1]} states")
    for h, block in enumerate(mdp.P):
        for s, a in zip(*np.nonzero(block.min(axis=2) < 0)):
            problems.append(f"negative probability at (h={h}, s={s}, a={a})")
        sums = block.sum(axis=2)
        for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)):
            problems.append(f"row (h={h}, s={s}, a={a}) sums to {sums[s, a]:.12g}")
    return problems


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """One action index per non-terminal state (global indexing)."""

    actions: np.ndarray

    def __post_init__(self):
        arr = np.array(self.actions, dtype=np.int64).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "actions", arr)

    def __eq__(self, other):
        if not isinstance(other, DeterministicPolicy):
            return NotImplemented
        return np.array_equal(self.actions, other.actions)

    def __hash__(self):
        return hash(self.actions.tobytes())

    def __getitem__(self, s):
        return int(self.actions[s])

    def digest(self) -> str:
        return hashlib.blake2b(self.actions.tobytes(), digest_size=8).hexdigest()

    def action_table(self, n_actions: int) -> np.ndarray:
        table = np.zeros((self.actions.size, n_actions))
        table[np.arange(self.actions.size), self.actions] = 1.0
        return table


@dataclass(frozen=True)
class Trajectory:
    """One episode. ``states`` holds layer-local indices for layers 0..H."""

    states: tuple[int, ...]
    actions: tuple[int, ...]
    losses: tuple[float, ...]
    episode_index: int = 0

    def steps(self, mdp: LayeredMdp) -> list[tuple[int, int, float]]:
        return [
            (int(mdp.offsets[h]) + s, a, l)
            for h, (s, a, l) in enumerate(zip(self.states[:-1], self.actions, self.losses))
        ]


def simulate_episodes(mdp: LayeredMdp, policy: DeterministicPolicy, losses, rng):
    """Run ``len(losses)`` episodes of a fixed policy, vectorised over episodes.

    ``losses`` has shape ``(n, N, A)``; only the losses of visited pairs are
    returned. Returns ``(states, actions, observed)`` with shapes ``(n, H+1)``,
    ``(n, H)`` and ``(n, H)``; states are layer-local.
    """
    gen = as_generator(rng)
    losses = np.asarray(losses, dtype=float)
    n = losses.shape[0]
    H = mdp.H
    states = np.zeros((n, H + 1), dtype=np.int64)
    actions = np.zeros((n, H), dtype=np.int64)
    observed = np.zeros((n, H))
    rows = np.arange(n)
    u = gen.random((n, H))
    for h in range(H):
        g = mdp.offsets[h] + states[:, h]
        a = policy.actions[g]
        actions[:, h] = a
        observed[:, h] = losses[rows, g, a]
        cdf = np.cumsum(mdp.P[h][states[:, h], a], axis=1)
        nxt = (u[:, h, None] >= cdf[:, :-1]).sum(axis=1)
        states[:, h + 1] = nxt
    return states, actions, observed


def run_episode(mdp: LayeredMdp, policy: DeterministicPolicy, loss, rng, episode_index: int = 0) -> Trajectory:
    states, actions, observed = simulate_episodes(mdp, policy, np.asarray(loss, dtype=float)[None], rng)
    return Trajectory(
        tuple(int(s) for s in states[0]),
        tuple(int(a) for a in actions[0]),
        tuple(float(x) for x in observed[0]),
        episode_index,
    )


def occupancy_of_policy(mdp: LayeredMdp, policy) -> OccupancyMeasure:
    """Forward pass computing q(s, a) for a deterministic or stochastic policy.

    ``policy`` is a :class:`DeterministicPolicy` or an ``(N, A)`` table of
    action probabilities.
    """
    if isinstance(policy, DeterministicPolicy):
        pi = policy.action_table(mdp.n_actions)
    else:
        pi = np.asarray(policy, dtype=float)
        if pi.shape != mdp.shape:
            raise ValueError(f"policy table has shape {pi.shape}, expected {mdp.shape}")
    q = np.zeros(mdp.shape)
    reach = np.ones(1)
    for h in range(mdp.H):
        sl = mdp.layer_slice(h)
        q[sl] = reach[:, None] * pi[sl]
        reach = np.einsum("sa,sat->t", q[sl], mdp.P[h])
    return OccupancyMeasure(q, mdp.layer_sizes)


def expected_episode_loss(q, loss) -> float:
    """Inner product of an occupancy measure with a loss table."""
    qa = q.q if isinstance(q, OccupancyMeasure) else np.asarray(q)
    la = np.asarray(loss, dtype=float)
    if qa.shape != la.shape:
        raise ValueError(f"shape mismatch: occupancy {qa.shape} vs loss {la.shape}")
    return float(np.sum(qa * la))


def random_mdp(layer_sizes, n_actions: int, rng, support: float = 1.0) -> LayeredMdp:
    """Dirichlet transitions; ``support`` < 1 zeroes out a random share of entries."""
    gen = as_generator(rng)
    P = []
    for h in range(len(layer_sizes) - 1):
        shape = (layer_sizes[h], n_actions, layer_sizes[h + 1])
        block = gen.dirichlet(np.ones(shape[2]), size=shape[:2])
        if support < 1.0 and shape[2] > 1:
            mask = gen.random(shape) < support
            mask[np.arange(shape[0])[:, None], np.arange(shape[1])[None], block.argmax(axis=2)] = True
            block = block * mask
            block /= block.sum(axis=2, keepdims=True)
        P.append(block)
    return LayeredMdp(tuple(layer_sizes), n_actions, tuple(P))


def chain_mdp(H: int, n_actions: int = 2) -> LayeredMdp:
    """Single-state layers; every action moves forward with probability one."""
    return LayeredMdp((1,) * (H + 1), n_actions, tuple(np.ones((1, n_actions, 1)) for _ in range(H)))
