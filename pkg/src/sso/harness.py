"""Training loop, evaluation protocols and statistics output."""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

from .actor import Actor
from .core import SSOConfig, Step, Trajectory
from .embedding import CachedEmbedder
from .env import Environment, VariantSpec
from .errors import EnvError, TransportError
from .extract import extract_candidates
from .generate import Transcript, dedup_skills, generate_skill
from .llm import ChatClient
from .select import SelectionState, partition_selection, sample_skill_pairs, score_pair
from .skillset import SkillSet

log = logging.getLogger(__name__)


@dataclass
class IterationStats:
    iteration: int
    skill_set_size: int
    skills_created: int
    skills_pruned: int
    executed_unique_skills: int
    episode_score: float
    mean_skill_length: float


STATS_COLUMNS = [f.name for f in fields(IterationStats)]
LIFECYCLE_COLUMNS = ["skill_id", "created_iteration", "executions", "pruned_iteration"]


class SkillGenerator:
    """Bundles the chat client and settings used to write new skills."""

    def __init__(
        self,
        client: ChatClient,
        config: SSOConfig,
        action_templates: Sequence[str] = (),
        transcript: Optional[Transcript] = None,
        semantic_dedup: bool = False,
    ):
        self.client = client
        self.config = config
        self.action_templates = tuple(action_templates)
        self.transcript = transcript
        self.semantic_dedup = semantic_dedup

    def __call__(self, pairs, skillset: SkillSet):
        drafts = []
        for pair in pairs:
            draft = generate_skill(
                pair, skillset.trajectories, self.client, self.config, self.action_templates, self.transcript
            )
            if draft is not None:
                drafts.append(draft)
        return dedup_skills(
            drafts, skillset.subgoals(), self.client if self.semantic_dedup else None, self.config.temp_test
        )


@dataclass
class ConstructResult:
    selection: SelectionState
    created: list[str] = field(default_factory=list)
    candidates: int = 0


def construct(
    skillset: SkillSet,
    trajectory: Trajectory,
    generator: SkillGenerator,
    embedder: CachedEmbedder,
    iteration: int | None = None,
) -> ConstructResult:
    """Archive the trajectory, then extract, score, sample and generate."""
    config = skillset.config
    skillset.add_trajectory(trajectory)
    archive = [t for t in skillset.trajectories.recent(config.n_past + 1) if t.id != trajectory.id][-config.n_past :]
    candidates = extract_candidates(trajectory, archive, config, skillset.trajectories, embedder, skillset.iteration)
    scored = [score_pair(p, config) for p in candidates]
    carryover = [score_pair(p, config) for p in skillset.carryover_pairs()]
    selection = sample_skill_pairs(scored, carryover, config)
    skillset.record_sampled(selection.chosen)
    new_pairs, _retained = partition_selection(selection, skillset.live_pairs())
    created = [skillset.add_skill(d, embedder, iteration).id for d in generator(new_pairs, skillset)]
    return ConstructResult(selection, created, len(candidates))


def rollout(
    env: Environment,
    actor: Actor,
    skillset: SkillSet,
    variant: VariantSpec,
    embedder: CachedEmbedder,
    trajectory_id: str,
    episode_seed: int = 0,
) -> Trajectory:
    """Play one episode with retrieved skills in context; the set stays frozen."""
    k = skillset.config.max_retrieved
    epoch = skillset.epoch
    with skillset.frozen():
        obs = env.reset(variant)
        actor.begin_episode(env.task_description, episode_seed)
        steps: list[Step] = []
        while not obs.done:
            skills = skillset.retrieve(obs.text, k, embedder)
            decision = actor.act(obs, skills)
            nxt = env.step(decision.action)
            steps.append(Step(obs.text, decision.action, nxt.reward, decision.targeted_subgoal))
            obs = nxt
    assert skillset.epoch == epoch, "skill set mutated during an episode"
    if not steps:
        raise EnvError("episode ended before any action")
    return Trajectory(trajectory_id, tuple(steps), obs.text)


def _mean_length(skillset: SkillSet) -> float:
    if not skillset.skills:
        return 0.0
    return statistics.fmean(s.length for s in skillset.skills.values())


def train(
    env: Environment,
    actor: Actor,
    skillset: SkillSet,
    variants: Sequence[VariantSpec],
    iterations: int,
    generator: SkillGenerator,
    embedder: CachedEmbedder,
    on_iteration: Callable[[IterationStats, SkillSet], None] | None = None,
    failures: list[tuple[int, Exception]] | None = None,
) -> tuple[SkillSet, list[IterationStats]]:
    """Rollout, construct, refine; one stats row per completed iteration.

    Variants are visited round-robin. Aborted iterations produce no row; when
    ``failures`` is given, each abort is appended to it as (iteration, error).
    """
    series: list[IterationStats] = []
    if iterations and not variants:
        raise ValueError("no variants to train on")
    for n in range(iterations):
        skillset.iteration += 1
        it = skillset.iteration
        variant = variants[n % len(variants)]
        size_before = len(skillset)
        try:
            traj = rollout(env, actor, skillset, variant, embedder, f"traj-{len(skillset.trajectories) + 1:04d}", it)
        except (EnvError, TransportError) as exc:
            log.error("iteration %d aborted during rollout: %s", it, exc)
            if failures is not None:
                failures.append((it, exc))
            continue
        try:
            result = construct(skillset, traj, generator, embedder, it)
        except TransportError as exc:
            log.error("iteration %d: skill construction failed: %s", it, exc)
            if failures is not None:
                failures.append((it, exc))
            result = ConstructResult(SelectionState())
        pruned = skillset.refine(traj, iteration=it)
        executed = {s.self_reported_skill for s in traj.steps if s.self_reported_skill}
        stats = IterationStats(
            iteration=it,
            skill_set_size=len(skillset),
            skills_created=len(result.created),
            skills_pruned=len(pruned),
            executed_unique_skills=len(executed),
            episode_score=traj.episode_score,
            mean_skill_length=_mean_length(skillset),
        )
        assert stats.skill_set_size == size_before + stats.skills_created - stats.skills_pruned
        log.info(
            "iter %d: score %.1f, skills %d (+%d/-%d), candidates %d",
            it,
            stats.episode_score,
            stats.skill_set_size,
            stats.skills_created,
            stats.skills_pruned,
            result.candidates,
        )
        series.append(stats)
        if on_iteration is not None:
            on_iteration(stats, skillset)
    return skillset, series


@dataclass
class EvalTable:
    scores: dict[int, list[float]]  # variant seed -> attempt scores

    @property
    def per_variant(self) -> dict[int, float]:
        return {seed: statistics.fmean(vals) for seed, vals in self.scores.items()}

    @property
    def mean(self) -> float:
        per = self.per_variant
        return statistics.fmean(per.values()) if per else 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant_seed", "attempt", "score"])
            for seed, vals in self.scores.items():
                for i, v in enumerate(vals, 1):
                    w.writerow([seed, i, v])
            w.writerow(["mean", "", self.mean])


def evaluate(
    env: Environment,
    actor: Actor,
    skillset: SkillSet,
    variants: Sequence[VariantSpec],
    attempts: int,
    embedder: CachedEmbedder,
) -> EvalTable:
    """Frozen-skill evaluation; nothing is archived, constructed or refined."""
    scores: dict[int, list[float]] = {}
    for variant in variants:
        for attempt in range(attempts):
            seed = 10_000 * (attempt + 1) + variant.seed
            try:
                traj = rollout(env, actor, skillset, variant, embedder, f"eval-{variant.seed}-{attempt}", seed)
            except (EnvError, TransportError) as exc:
                log.error("evaluation episode %s/%d failed: %s", variant.seed, attempt, exc)
                continue
            scores.setdefault(variant.seed, []).append(traj.episode_score)
    return EvalTable(scores)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_stats(series: Sequence[IterationStats], skillset: SkillSet | None, out_dir: str | Path) -> list[Path]:
    """Write stats.csv (one row per iteration) and lifecycle.csv (one row per skill)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats_path, life_path = out / "stats.csv", out / "lifecycle.csv"
    with open(stats_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for row in series:
            d = asdict(row)
            w.writerow([_fmt(d[c]) for c in STATS_COLUMNS])
    skills = []
    if skillset is not None:
        skills = sorted([*skillset.skills.values(), *skillset.retired.values()], key=lambda s: s.id)
    with open(life_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LIFECYCLE_COLUMNS)
        for s in skills:
            w.writerow([s.id, s.created_iteration, ";".join(map(str, s.executions)), _fmt(s.pruned_iteration)])
    return [stats_path, life_path]


def read_stats(path: str | Path) -> list[IterationStats]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(
            IterationStats(
                iteration=int(r["iteration"]),
                skill_set_size=int(r["skill_set_size"]),
                skills_created=int(r["skills_created"]),
                skills_pruned=int(r["skills_pruned"]),
                executed_unique_skills=int(r["executed_unique_skills"]),
                episode_score=float(r["episode_score"]),
                mean_skill_length=float(r["mean_skill_length"]),
            )
        )
    return out


def mine(skillset: SkillSet, trajectories: Sequence[Trajectory], generator: SkillGenerator, embedder: CachedEmbedder):
    """Offline construction over an existing archive, in archive order."""
    created: list[str] = []
    for traj in trajectories:
        skillset.iteration += 1
        created += construct(skillset, traj, generator, embedder, skillset.iteration).created
    return created
