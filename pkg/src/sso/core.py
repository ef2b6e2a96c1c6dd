"""Trajectory value types, subtrajectory views and shared arithmetic."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import ConfigError


@dataclass(frozen=True)
class Step:
    observation: str
    action: str
    reward: float = 0.0
    self_reported_skill: Optional[str] = None

    def __post_init__(self):
        if not self.observation.strip() or not self.action.strip():
            raise ValueError("observation and action must be non-empty")
        if not math.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward!r}")


@dataclass(frozen=True)
class Trajectory:
    """One finished episode: states s_0..s_T-1 with their actions, plus s_T."""

    id: str
    steps: tuple[Step, ...]
    terminal_observation: str

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def episode_score(self) -> float:
        return sum(s.reward for s in self.steps)

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def state(self, i: int) -> str:
        """State i, where state len(steps) is the terminal observation."""
        if i == len(self.steps):
            return self.terminal_observation
        return self.steps[i].observation

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "steps": [asdict(s) for s in self.steps],
            "terminal_observation": self.terminal_observation,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Trajectory":
        steps = tuple(
            Step(
                observation=s["observation"],
                action=s["action"],
                reward=float(s["reward"]),
                self_reported_skill=s.get("self_reported_skill"),
            )
            for s in obj["steps"]
        )
        return cls(id=obj["id"], steps=steps, terminal_observation=obj["terminal_observation"])


@dataclass(frozen=True, order=True)
class SubtrajRef:
    """Index view of L actions (and L+1 states) inside a stored trajectory."""

    trajectory_id: str
    start: int
    length: int

    @property
    def end(self) -> int:
        """Index of the resulting state (exclusive end of the action span)."""
        return self.start + self.length

    def covers(self) -> set[tuple[str, int]]:
        return {(self.trajectory_id, i) for i in range(self.start, self.end)}

    def to_json(self) -> list:
        return [self.trajectory_id, self.start, self.length]

    @classmethod
    def from_json(cls, obj) -> "SubtrajRef":
        tid, start, length = obj
        return cls(str(tid), int(start), int(length))


@dataclass(frozen=True)
class CandidatePair:
    a: SubtrajRef
    b: SubtrajRef
    state_sim: float
    action_sim: float
    reward_value: float
    score: float = 0.0

    def __post_init__(self):
        if self.a.length != self.b.length:
            raise ValueError("pair members must have equal length")
        if self.a.trajectory_id == self.b.trajectory_id:
            raise ValueError("pair members must come from different trajectories")

    @property
    def length(self) -> int:
        return self.a.length

    @property
    def key(self) -> tuple[SubtrajRef, SubtrajRef]:
        """Order-insensitive identity of the pair."""
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)

    def to_json(self) -> dict:
        return {
            "a": self.a.to_json(),
            "b": self.b.to_json(),
            "state_sim": self.state_sim,
            "action_sim": self.action_sim,
            "reward_value": self.reward_value,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidatePair":
        return cls(
            a=SubtrajRef.from_json(obj["a"]),
            b=SubtrajRef.from_json(obj["b"]),
            state_sim=float(obj["state_sim"]),
            action_sim=float(obj["action_sim"]),
            reward_value=float(obj["reward_value"]),
            score=float(obj["score"]),
        )


MATCH_MODES = ("combined", "state", "action")


@dataclass
class SSOConfig:
    """Hyperparameters for skill construction, refinement and retrieval."""

    min_len: int = 2
    max_len: int = 5
    n_past: int = 10
    gamma: float = 0.9
    epsilon: float = 0.0
    w_state: float = 1.0
    w_action: float = 1.0
    w_reward: float = 0.1
    w_length: float = 0.01
    max_retrieved: int = 3
    beam_width: int = 10
    temp_train: float = 0.7
    temp_test: float = 0.0
    generation_retries: int = 2
    # which similarity the extraction argmax ranks on
    match_on: str = "combined"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 2 <= self.min_len <= self.max_len:
            raise ConfigError(f"need 2 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        for name in ("w_state", "w_action", "w_reward", "w_length"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.max_retrieved < 1:
            raise ConfigError("max_retrieved must be >= 1")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.n_past < 1:
            raise ConfigError("n_past must be >= 1")
        if self.generation_retries < 0:
            raise ConfigError("generation_retries must be >= 0")
        if self.match_on not in MATCH_MODES:
            raise ConfigError(f"match_on must be one of {MATCH_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SSOConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**obj)


def discounted_return(traj: Trajectory | Sequence[float], t: int, gamma: float) -> float:
    """Sum of rewards from step t onward, weighted by gamma**i."""
    rewards = traj.rewards if isinstance(traj, Trajectory) else list(traj)
    if not 0 <= t < len(rewards):
        raise IndexError(f"step {t} out of range for {len(rewards)} steps")
    return sum(rewards[t + i] * gamma**i for i in range(len(rewards) - t))


def overlaps(p: CandidatePair, q: CandidatePair) -> bool:
    cells = p.a.covers() | p.b.covers()
    return not cells.isdisjoint(q.a.covers() | q.b.covers())


_WS = re.compile(r"\s+")
_PLACEHOLDER = re.compile(r"\[[^\]]*\]")


def normalize_text(text: str) -> str:
    """Canonical form for subgoal matching.

    Lowercases, collapses whitespace, unifies bracketed placeholders and
    strips surrounding quotes and trailing punctuation.
    """
    out = _PLACEHOLDER.sub("[x]", text.lower())
    out = _WS.sub(" ", out).strip().lstrip("\"'`").strip()
    return out.rstrip(".!?,;: \"'`").strip()


class TrajectoryStore:
    """Append-only archive of finished trajectories, in completion order."""

    def __init__(self, trajectories: Iterable[Trajectory] = ()):
        self._by_id: dict[str, Trajectory] = {}
        for traj in trajectories:
            self.append(traj)

    def append(self, traj: Trajectory) -> None:
        if traj.id in self._by_id:
            raise ValueError(f"duplicate trajectory id {traj.id!r}")
        self._by_id[traj.id] = traj

    def __getitem__(self, trajectory_id: str) -> Trajectory:
        return self._by_id[trajectory_id]

    def __contains__(self, trajectory_id: object) -> bool:
        return trajectory_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self._by_id.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrajectoryStore):
            return NotImplemented
        return list(self) == list(other)

    def recent(self, n: int) -> list[Trajectory]:
        return list(self._by_id.values())[-n:] if n > 0 else []

    def _checked(self, ref: SubtrajRef) -> Trajectory:
        traj = self._by_id[ref.trajectory_id]
        if ref.start < 0 or ref.length < 1 or ref.end > len(traj):
            raise IndexError(f"{ref} exceeds trajectory of {len(traj)} steps")
        return traj

    def subtraj_states(self, ref: SubtrajRef) -> list[str]:
        traj = self._checked(ref)
        return [traj.state(i) for i in range(ref.start, ref.end + 1)]

    def subtraj_actions(self, ref: SubtrajRef) -> list[str]:
        traj = self._checked(ref)
        return [traj.steps[i].action for i in range(ref.start, ref.end)]

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for traj in self:
                fh.write(json.dumps(traj.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "TrajectoryStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    store.append(Trajectory.from_json(json.loads(line)))
        return store
