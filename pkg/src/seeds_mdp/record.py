"""Per-episode experiment log shared by the learners and the harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = ("t", "u", "policy_hash", "expected_loss", "realized_loss", "switched")


@dataclass
class ExperimentRecord:
    """Everything a run produced, one row per episode.

    ``switched[t]`` is 1 when the policy of episode ``t`` differs from the one
    of episode ``t - 1`` (always 0 for the first episode), so its sum is the
    number of switches.
    """

    T: int
    tau: int
    policies: list = field(default_factory=list)  # one per super-episode
    episode_u: np.ndarray = None
    expected_loss: np.ndarray = None
    realized_loss: np.ndarray = None
    switched: np.ndarray = None
    reports: list = field(default_factory=list)
    q_history: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.episode_u is None:
            self.episode_u = np.zeros(self.T, dtype=np.int64)
            self.expected_loss = np.zeros(self.T)
            self.realized_loss = np.zeros(self.T)
            self.switched = np.zeros(self.T, dtype=np.int64)

    @property
    def n_switches(self) -> int:
        return int(self.switched.sum())

    @property
    def n_super_episodes(self) -> int:
        return len(self.policies)

    def policy_at(self, t: int):
        return self.policies[int(self.episode_u[t])]

    def policy_hashes(self) -> list[str]:
        digests = [p.digest() for p in self.policies]
        return [digests[u] for u in self.episode_u]

    def rows(self):
        for t, (u, h, e, r, s) in enumerate(
            zip(self.episode_u, self.policy_hashes(), self.expected_loss, self.realized_loss, self.switched)
        ):
            yield t + 1, int(u) + 1, h, float(e), float(r), int(s)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(CSV_HEADER) + "\n")
            for t, u, h, e, r, s in self.rows():
                fh.write(f"{t},{u},{h},{e:.17g},{r:.17g},{s}\n")
