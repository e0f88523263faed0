"""Oblivious loss sequences and benchmark MDP constructors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import LayeredMdp
from .rng import RngStream

KINDS = ("stochastic", "piecewise", "alternating", "worst_case_swap")


@dataclass(frozen=True)
class AdversarySpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}; expected one of {KINDS}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> "AdversarySpec":
        if "kind" not in doc:
            raise ValueError("adversary is missing field 'kind'")
        return cls(doc["kind"], dict(doc.get("params", {})), int(doc.get("seed", 0)))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def _shape(mdp):
    return mdp.shape if isinstance(mdp, LayeredMdp) else tuple(mdp)


def _table(value, shape, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), shape)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"adversary parameter '{name}' must lie in [0, 1]")
    return arr


def default_swap_period(T: int) -> int:
    return max(1, int(round(T ** (2 / 3))))


def chain_index(mdp) -> np.ndarray:
    """Position of each non-terminal state inside its layer."""
    if not isinstance(mdp, LayeredMdp):
        return np.zeros(_shape(mdp)[0], dtype=int)
    return np.concatenate([np.arange(n) for n in mdp.layer_sizes[: mdp.H]])


def generate_losses(spec: AdversarySpec, mdp, T: int) -> np.ndarray:
    """Full ``(T, N, A)`` loss sequence, a pure function of ``(spec, shape, T)``.

    ``mdp`` may be a :class:`LayeredMdp` or an ``(N, A)`` shape tuple.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    N, A = _shape(mdp)
    gen = RngStream(spec.seed, 7).generator()
    p = spec.params
    noise = float(p.get("noise", 0.1))
    if spec.kind == "stochastic":
        means = _table(p["means"], (N, A), "means") if "means" in p else gen.random((N, A))
        draws = means[None] + noise * gen.standard_normal((T, N, A))
        return np.clip(draws, 0.0, 1.0)
    if spec.kind == "piecewise":
        period = int(p.get("period", max(1, T // 10)))
        n_blocks = -(-T // period)
        means = gen.random((n_blocks, N, A))
        block = np.arange(T) // period
        return np.clip(means[block] + noise * gen.standard_normal((T, N, A)), 0.0, 1.0)
    if spec.kind == "alternating":
        period = int(p.get("period", 1))
        L0 = _table(p["L0"], (N, A), "L0") if "L0" in p else gen.random((N, A))
        L1 = _table(p["L1"], (N, A), "L1") if "L1" in p else gen.random((N, A))
        odd = (np.arange(T) // period) % 2 == 1
        return np.where(odd[:, None, None], L1[None], L0[None])
    # worst_case_swap: one loss-free arm per block, rotating; chains are staggered
    period = int(p.get("period", default_swap_period(T)))
    low, high = float(p.get("low", 0.0)), float(p.get("high", 1.0))
    block = np.arange(T) // period
    stagger = chain_index(mdp) if p.get("stagger", True) else np.zeros(N, dtype=int)
    good = (block[:, None] + stagger[None]) % A
    out = np.full((T, N, A), high)
    t_idx, s_idx = np.meshgrid(np.arange(T), np.arange(N), indexing="ij")
    out[t_idx, s_idx, good] = low
    return out


def lower_bound_mdp(S: int, H: int, A: int) -> LayeredMdp:
    """Parallel bandit chains: s_0 fans out uniformly over (S-2)/(H-1) chain
    heads, each chain state moves to the same position in the next layer
    whatever the action, and the last layer moves to s_H."""
    if H < 2:
        raise ValueError("the chain construction needs H >= 2")
    if S < H + 1 or (S - 2) % (H - 1) != 0:
        raise ValueError(f"S - 2 must be a positive multiple of H - 1 (got S={S}, H={H})")
    k = (S - 2) // (H - 1)
    blocks = [np.full((1, A, k), 1.0 / k)]
    for _ in range(1, H - 1):
        blocks.append(np.broadcast_to(np.eye(k)[:, None, :], (k, A, k)).copy())
    blocks.append(np.ones((k, A, 1)))
    return LayeredMdp((1,) + (k,) * (H - 1) + (1,), A, tuple(blocks))
