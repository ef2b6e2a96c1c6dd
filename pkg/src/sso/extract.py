"""Mine pairs of similar same-length subtrajectories from recent experience."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    CandidatePair,
    SSOConfig,
    SubtrajRef,
    Trajectory,
    TrajectoryStore,
    discounted_return,
)
from .embedding import CachedEmbedder

# similarities closer than this are treated as ties (smallest start wins)
TIE_TOL = 1e-12


@dataclass(frozen=True)
class CandidateSet:
    pairs: tuple[CandidatePair, ...]
    source_iteration: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def enumerate_subtrajs(traj: Trajectory, min_len: int, max_len: int) -> list[SubtrajRef]:
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    n = len(traj)
    return [
        SubtrajRef(traj.id, start, length)
        for length in range(min_len, min(max_len, n) + 1)
        for start in range(n - length + 1)
    ]


def _unit_rows(embedder: CachedEmbedder, texts: Sequence[str]) -> np.ndarray:
    rows = np.stack([e.values for e in embedder.embed_many(texts)])
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class _PairTable:
    """Windowed positional similarities between two trajectories.

    ``window(L)`` returns (state, action) matrices whose [i, j] entry is the
    mean cosine of the length-L subtrajectories starting at i in ``x`` and j
    in ``y``. Sums accumulate k = 0..L in order, matching a direct loop.
    """

    def __init__(self, x: Trajectory, y: Trajectory, embedder: CachedEmbedder):
        xs = _unit_rows(embedder, [x.state(i) for i in range(len(x) + 1)])
        ys = _unit_rows(embedder, [y.state(i) for i in range(len(y) + 1)])
        xa = _unit_rows(embedder, [s.action for s in x.steps])
        ya = _unit_rows(embedder, [s.action for s in y.steps])
        self.state = np.clip(xs @ ys.T, -1.0, 1.0)
        self.action = np.clip(xa @ ya.T, -1.0, 1.0)
        self.nx, self.ny = len(x), len(y)

    def window(self, length: int) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.nx - length + 1, self.ny - length + 1
        s_sum = np.zeros((rows, cols))
        a_sum = np.zeros((rows, cols))
        for k in range(length + 1):
            s_sum = s_sum + self.state[k : k + rows, k : k + cols]
            if k < length:
                a_sum = a_sum + self.action[k : k + rows, k : k + cols]
        return s_sum / (length + 1), a_sum / length


def _score_matrix(state: np.ndarray, action: np.ndarray, match_on: str) -> np.ndarray:
    if match_on == "state":
        return state
    if match_on == "action":
        return action
    return (state + action) / 2


def _argmax_first(values: np.ndarray) -> int:
    best = values.max()
    return int(np.flatnonzero(values >= best - TIE_TOL)[0])


def most_similar_subtraj(
    target: SubtrajRef,
    past: Trajectory,
    store: TrajectoryStore,
    embedder: CachedEmbedder,
    match_on: str = "combined",
) -> Optional[SubtrajRef]:
    if len(past) < target.length:
        return None
    latest = store[target.trajectory_id]
    state, action = _PairTable(latest, past, embedder).window(target.length)
    row = _score_matrix(state[target.start], action[target.start], match_on)
    return SubtrajRef(past.id, _argmax_first(row), target.length)


def extract_candidates(
    latest: Trajectory,
    archive: Sequence[Trajectory],
    config: SSOConfig,
    store: TrajectoryStore,
    embedder: CachedEmbedder,
    iteration: int = 0,
) -> CandidateSet:
    """Pair each subtrajectory of ``latest`` with its best match in every archived trajectory."""
    returns = {latest.id: [discounted_return(latest, t, config.gamma) for t in range(len(latest))]}
    pairs: list[CandidatePair] = []
    max_len = min(config.max_len, len(latest))
    for past in archive:
        if past.id == latest.id:
            continue
        table = _PairTable(latest, past, embedder)
        past_returns = [discounted_return(past, t, config.gamma) for t in range(len(past))]
        for length in range(config.min_len, max_len + 1):
            if len(past) < length:
                continue
            state, action = table.window(length)
            scores = _score_matrix(state, action, config.match_on)
            for i in range(state.shape[0]):
                j = _argmax_first(scores[i])
                pairs.append(
                    CandidatePair(
                        a=SubtrajRef(latest.id, i, length),
                        b=SubtrajRef(past.id, j, length),
                        state_sim=float(state[i, j]),
                        action_sim=float(action[i, j]),
                        reward_value=(returns[latest.id][i] + past_returns[j]) / 2,
                    )
                )
    pairs.sort(key=lambda p: (p.a.length, p.a.start, p.b.trajectory_id))
    return CandidateSet(tuple(pairs), iteration)
