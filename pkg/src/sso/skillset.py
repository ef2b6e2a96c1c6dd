"""The live skill collection: retrieval, refinement and persistence."""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

from .core import (
    CandidatePair,
    SSOConfig,
    SubtrajRef,
    Trajectory,
    TrajectoryStore,
    discounted_return,
    normalize_text,
)
from .embedding import CachedEmbedder, Embedding, cosine
from .errors import ConfigError, SkillSetLoadError, SSOError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class Skill:
    id: str
    name: str
    subgoal: str
    instructions: tuple[str, ...]
    source_pair: CandidatePair
    initial_state_embeddings: tuple[Embedding, Embedding]
    created_iteration: int
    executed_count: int = 0
    observed_value: float = 0.0
    # iteration of every recorded execution, for lifecycle reporting
    executions: list[int] = field(default_factory=list)
    pruned_iteration: Optional[int] = None

    @property
    def length(self) -> int:
        return self.source_pair.length

    def relevance(self, state: Embedding) -> float:
        return max(cosine(e, state) for e in self.initial_state_embeddings)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "subgoal": self.subgoal,
            "instructions": list(self.instructions),
            "source_pair": self.source_pair.to_json(),
            "initial_state_embeddings": [e.values.tolist() for e in self.initial_state_embeddings],
            "created_iteration": self.created_iteration,
            "executed_count": self.executed_count,
            "observed_value": self.observed_value,
            "executions": list(self.executions),
            "pruned_iteration": self.pruned_iteration,
        }

    @classmethod
    def from_json(cls, obj: Any, where: str) -> "Skill":
        get = _Fields(obj, where)
        try:
            pair = CandidatePair.from_json(get("source_pair", dict))
        except (KeyError, TypeError, ValueError) as exc:
            raise SkillSetLoadError(f"{where}.source_pair", str(exc)) from exc
        raw_embs = get("initial_state_embeddings", list)
        if len(raw_embs) != 2:
            raise SkillSetLoadError(f"{where}.initial_state_embeddings", "expected two vectors")
        try:
            embs = tuple(Embedding(v) for v in raw_embs)
        except (TypeError, ValueError) as exc:
            raise SkillSetLoadError(f"{where}.initial_state_embeddings", str(exc)) from exc
        pruned = obj.get("pruned_iteration")
        return cls(
            id=get("id", str),
            name=get("name", str),
            subgoal=get("subgoal", str),
            instructions=tuple(get("instructions", list)),
            source_pair=pair,
            initial_state_embeddings=embs,
            created_iteration=get("created_iteration", int),
            executed_count=get("executed_count", int),
            observed_value=float(get("observed_value", (int, float))),
            executions=[int(i) for i in get("executions", list)],
            pruned_iteration=None if pruned is None else int(pruned),
        )


class _Fields:
    """Typed field access that reports the offending path on failure."""

    def __init__(self, obj: Any, where: str):
        if not isinstance(obj, dict):
            raise SkillSetLoadError(where, "expected an object")
        self.obj, self.where = obj, where

    def __call__(self, name: str, kind):
        if name not in self.obj:
            raise SkillSetLoadError(f"{self.where}.{name}" if self.where else name, "missing")
        val = self.obj[name]
        if not isinstance(val, kind) or (kind is int and isinstance(val, bool)):
            raise SkillSetLoadError(f"{self.where}.{name}" if self.where else name, f"wrong type {type(val).__name__}")
        return val


class FrozenSkillSetError(SSOError):
    """Raised when a frozen skill set is mutated (e.g. mid-episode)."""


class SkillSet:
    def __init__(self, config: SSOConfig | None = None, trajectories: TrajectoryStore | None = None):
        self.config = config or SSOConfig()
        self.skills: dict[str, Skill] = {}
        self.retired: dict[str, Skill] = {}
        self.trajectories = trajectories if trajectories is not None else TrajectoryStore()
        self.sampled_pairs: list[CandidatePair] = []
        self.iteration = 0
        self.next_id = 1
        self.epoch = 0
        self._frozen = 0

    def __len__(self) -> int:
        return len(self.skills)

    def __contains__(self, skill_id: object) -> bool:
        return skill_id in self.skills

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SkillSet):
            return NotImplemented
        return (
            self.config == other.config
            and self.skills == other.skills
            and self.retired == other.retired
            and self.trajectories == other.trajectories
            and self.sampled_pairs == other.sampled_pairs
            and self.iteration == other.iteration
            and self.next_id == other.next_id
        )

    # mutation guard

    @contextlib.contextmanager
    def frozen(self) -> Iterator["SkillSet"]:
        self._frozen += 1
        try:
            yield self
        finally:
            self._frozen -= 1

    def _mutating(self) -> None:
        if self._frozen:
            raise FrozenSkillSetError("skill set is frozen")
        self.epoch += 1

    # construction

    def add_trajectory(self, traj: Trajectory) -> None:
        self._mutating()
        self.trajectories.append(traj)

    def add_skill(self, draft, embedder: CachedEmbedder, iteration: int | None = None) -> Skill:
        """Create a live skill from a generated draft with a source pair."""
        self._mutating()
        pair = draft.source_pair
        if pair is None:
            raise ValueError("draft has no source pair")
        firsts = [self.trajectories.subtraj_states(ref)[0] for ref in (pair.a, pair.b)]
        embs = embedder.embed_many(firsts)
        skill = Skill(
            id=f"skill-{self.next_id:04d}",
            name=draft.name,
            subgoal=draft.subgoal,
            instructions=tuple(draft.instructions),
            source_pair=pair,
            initial_state_embeddings=(embs[0], embs[1]),
            created_iteration=self.iteration if iteration is None else iteration,
        )
        self.next_id += 1
        self.skills[skill.id] = skill
        return skill

    def record_sampled(self, pairs) -> None:
        self._mutating()
        known = {p.key for p in self.sampled_pairs}
        for p in pairs:
            if p.key not in known:
                self.sampled_pairs.append(p)
                known.add(p.key)

    def live_pairs(self) -> dict[tuple[SubtrajRef, SubtrajRef], str]:
        return {s.source_pair.key: s.id for s in self.skills.values()}

    def carryover_pairs(self) -> list[CandidatePair]:
        """Previously sampled pairs that still back a live skill."""
        live = self.live_pairs()
        return [p for p in self.sampled_pairs if p.key in live]

    def subgoals(self) -> list[str]:
        return [s.subgoal for s in self.skills.values()]

    # retrieval

    def rank(self, state_text: str, embedder: CachedEmbedder) -> list[tuple[Skill, float]]:
        if not self.skills:
            return []
        state = embedder.embed(state_text)
        scored = [(s, s.relevance(state)) for s in self.skills.values()]
        # rounding absorbs last-bit noise so exact ties fall to the tie-break
        scored.sort(key=lambda x: (-round(x[1], 12), x[0].created_iteration, x[0].id))
        return scored

    def retrieve(self, state_text: str, k: int | None, embedder: CachedEmbedder) -> list[Skill]:
        k = self.config.max_retrieved if k is None else k
        if k < 1:
            raise ConfigError("k must be >= 1")
        return [s for s, _ in self.rank(state_text, embedder)[:k]]

    # refinement

    def record_execution(
        self, skill_id: str, traj: Trajectory, t: int, gamma: float, iteration: int | None = None
    ) -> Optional[float]:
        skill = self.skills.get(skill_id)
        if skill is None:
            if skill_id in self.retired:
                log.debug("execution credited to pruned skill %r; ignored", skill_id)
            else:
                log.warning("execution credited to unknown skill %r; ignored", skill_id)
            return None
        self._mutating()
        skill.observed_value += discounted_return(traj, t, gamma)
        skill.executed_count += 1
        skill.executions.append(self.iteration if iteration is None else iteration)
        return skill.observed_value

    def prune(self, skill_id: str, iteration: int | None = None) -> None:
        self._mutating()
        skill = self.skills.pop(skill_id)
        skill.pruned_iteration = self.iteration if iteration is None else iteration
        self.retired[skill_id] = skill

    def refine(self, traj: Trajectory, config: SSOConfig | None = None, iteration: int | None = None) -> list[str]:
        """Credit self-reported executions and drop skills at or below epsilon."""
        config = config or self.config
        pruned: list[str] = []
        for t, step in enumerate(traj.steps):
            if not step.self_reported_skill:
                continue
            value = self.record_execution(step.self_reported_skill, traj, t, config.gamma, iteration)
            if value is not None and value <= config.epsilon:
                self.prune(step.self_reported_skill, iteration)
                pruned.append(step.self_reported_skill)
        return pruned

    # persistence

    def to_json(self, archive: str | None = None) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "iteration": self.iteration,
            "next_id": self.next_id,
            "skills": [s.to_json() for s in self.skills.values()],
            "retired": [s.to_json() for s in self.retired.values()],
            "sampled_pairs": [p.to_json() for p in self.sampled_pairs],
            "archive": archive,
        }

    def save(self, path: str | Path) -> None:
        """Write the skill set as JSON plus a sibling trajectory JSONL."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        archive = path.with_name(path.stem + ".trajectories.jsonl")
        self.trajectories.save_jsonl(archive)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(archive.name), fh, indent=1, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "SkillSet":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SkillSetLoadError("<document>", f"invalid JSON: {exc}") from exc
        get = _Fields(obj, "")
        version = get("schema_version", int)
        if version != SCHEMA_VERSION:
            raise SkillSetLoadError("schema_version", f"unsupported version {version}")
        try:
            config = SSOConfig.from_dict(get("config", dict))
        except (ConfigError, TypeError) as exc:
            raise SkillSetLoadError("config", str(exc)) from exc
        archive = obj.get("archive")
        store = TrajectoryStore()
        if archive:
            archive_path = path.parent / archive
            if not archive_path.exists():
                raise SkillSetLoadError("archive", f"{archive_path} not found")
            store = TrajectoryStore.load_jsonl(archive_path)
        out = cls(config, store)
        out.iteration = get("iteration", int)
        out.next_id = get("next_id", int)
        for i, raw in enumerate(get("skills", list)):
            skill = Skill.from_json(raw, f"skills[{i}]")
            out.skills[skill.id] = skill
        for i, raw in enumerate(get("retired", list)):
            skill = Skill.from_json(raw, f"retired[{i}]")
            out.retired[skill.id] = skill
        for i, raw in enumerate(get("sampled_pairs", list)):
            try:
                out.sampled_pairs.append(CandidatePair.from_json(raw))
            except (KeyError, TypeError, ValueError) as exc:
                raise SkillSetLoadError(f"sampled_pairs[{i}]", str(exc)) from exc
        return out

    def export_markdown(self) -> str:
        lines = ["# Skills", ""]
        for s in self.skills.values():
            lines.append(f"## {s.subgoal}")
            lines.append("")
            lines.append(
                f"- id: {s.id}; created: {s.created_iteration}; executed: {s.executed_count}; "
                f"observed value: {s.observed_value:.2f}"
            )
            lines.append("")
            lines += [f"{i}. {ins}" for i, ins in enumerate(s.instructions, 1)]
            lines.append("")
        return "\n".join(lines)

    def check_invariants(self) -> None:
        sampled = {p.key for p in self.sampled_pairs}
        for s in self.skills.values():
            assert s.source_pair.key in sampled, f"{s.id} source pair not in sampled_pairs"
        norms = [normalize_text(s.subgoal) for s in self.skills.values()]
        assert len(norms) == len(set(norms)), "duplicate live subgoals"
        for s in self.skills.values():
            assert math.isfinite(s.observed_value)
