import csv
import random

import pytest
from factories import traj

from sso.actor import ScriptedActor
from sso.core import SSOConfig, TrajectoryStore
from sso.embedding import CachedEmbedder, TrigramEmbedder
from sso.env import MINILAB_TEMPLATES, MiniLab, VariantSpec
from sso.errors import EnvError, TransportError
from sso.generate import OfflineSkillWriter
from sso.harness import (
    IterationStats,
    SkillGenerator,
    emit_stats,
    evaluate,
    mine,
    read_stats,
    rollout,
    train,
)
from sso.skillset import FrozenSkillSetError, SkillSet


def setup(config=None):
    config = config or SSOConfig()
    return (
        MiniLab(),
        SkillSet(config),
        SkillGenerator(OfflineSkillWriter(), config, MINILAB_TEMPLATES),
        CachedEmbedder(TrigramEmbedder()),
    )


def test_zero_iterations_is_a_no_op():
    env, ss, gen, emb = setup()
    out, series = train(env, ScriptedActor(0), ss, [VariantSpec("minilab", 0)], 0, gen, emb)
    assert out is ss and series == [] and len(ss) == 0 and len(ss.trajectories) == 0


def test_first_iteration_has_nothing_to_pair_with():
    env, ss, gen, emb = setup()
    _, series = train(env, ScriptedActor(0), ss, [VariantSpec("minilab", 0)], 1, gen, emb)
    assert len(ss) == 0 and len(ss.trajectories) == 1
    assert series[0].skills_created == 0 and series[0].iteration == 1


def test_accounting_identity_on_fuzzed_runs(tmp_path):
    for seed in range(4):
        env, ss, gen, emb = setup()
        variants = [VariantSpec("minilab", s) for s in random.Random(seed).sample(range(50), 3)]
        _, series = train(env, ScriptedActor(seed), ss, variants, 12, gen, emb)
        emit_stats(series, ss, tmp_path / str(seed))
        rows = list(csv.DictReader(open(tmp_path / str(seed) / "lifecycle.csv")))
        created = sum(s.skills_created for s in series)
        pruned = sum(s.skills_pruned for s in series)
        assert len(rows) == created
        assert sum(1 for r in rows if r["pruned_iteration"]) == pruned
        assert len(ss) == created - pruned == series[-1].skill_set_size
        for prev, cur in zip(series, series[1:]):
            assert cur.skill_set_size == prev.skill_set_size + cur.skills_created - cur.skills_pruned
        ss.check_invariants()


class RecordingActor(ScriptedActor):
    def __init__(self, seed, skillset=None):
        super().__init__(seed)
        self.offered = []
        self.skillset = skillset

    def act(self, observation, skills):
        self.offered.append(len(skills))
        if self.skillset is not None:
            self.skillset.record_sampled([])  # any mutation attempt
        return super().act(observation, skills)


def test_payload_never_exceeds_max_retrieved():
    env, ss, gen, emb = setup(SSOConfig(max_retrieved=2))
    actor = RecordingActor(1)
    train(env, actor, ss, [VariantSpec("minilab", 0), VariantSpec("minilab", 1)], 10, gen, emb)
    assert len(ss) > 2
    assert max(actor.offered) == 2


def test_skill_set_is_frozen_during_episodes():
    env, ss, gen, emb = setup()
    actor = RecordingActor(0, skillset=ss)
    with pytest.raises(FrozenSkillSetError):
        rollout(env, actor, ss, VariantSpec("minilab", 0), emb, "t")


class FlakyEnv(MiniLab):
    def __init__(self, fail_on):
        super().__init__()
        self.fail_on = fail_on
        self.resets = 0

    def reset(self, variant):
        self.resets += 1
        self.fail_now = self.resets in self.fail_on
        return super().reset(variant)

    def step(self, action):
        if self.fail_now and self.steps == 3:
            raise EnvError("simulator crashed")
        return super().step(action)


def test_env_failure_aborts_iteration_and_continues():
    _, ss, gen, emb = setup()
    failures = []
    _, series = train(FlakyEnv({2}), ScriptedActor(0), ss, [VariantSpec("minilab", 0)], 4, gen, emb, failures=failures)
    assert [s.iteration for s in series] == [1, 3, 4]
    assert len(ss.trajectories) == 3  # partial trajectory discarded
    assert [it for it, _ in failures] == [2]


class DownGenerator(SkillGenerator):
    def __call__(self, pairs, skillset):
        if pairs:
            raise TransportError("endpoint unavailable")
        return []


def test_transport_failure_during_construction_is_logged(caplog):
    env, ss, _, emb = setup()
    gen = DownGenerator(OfflineSkillWriter(), ss.config)
    failures = []
    _, series = train(env, ScriptedActor(0), ss, [VariantSpec("minilab", 0)], 3, gen, emb, failures=failures)
    assert len(series) == 3 and len(ss) == 0
    assert failures and all(isinstance(e, TransportError) for _, e in failures)
    assert "skill construction failed" in caplog.text


def trained_set(iterations=15):
    env, ss, gen, emb = setup()
    train(env, ScriptedActor(0), ss, [VariantSpec("minilab", s) for s in range(3)], iterations, gen, emb)
    return env, ss, emb


def test_evaluate_is_frozen_and_repeatable():
    env, ss, emb = trained_set()
    snapshot = ss.to_json()
    variants = [VariantSpec("minilab", s, "test") for s in (100, 101, 102)]
    a = evaluate(env, ScriptedActor(3), ss, variants, 3, emb)
    b = evaluate(env, ScriptedActor(3), ss, variants, 3, emb)
    assert a.scores == b.scores
    assert ss.to_json() == snapshot
    assert set(a.per_variant) == {100, 101, 102}
    assert a.mean == pytest.approx(sum(a.per_variant.values()) / 3)


def test_trained_set_beats_empty_set_on_shared_seeds():
    env, ss, emb = trained_set(20)
    variants = [VariantSpec("minilab", s, "test") for s in range(3)]
    trained = evaluate(env, ScriptedActor(5), ss, variants, 4, emb)
    empty = evaluate(env, ScriptedActor(5), SkillSet(), variants, 4, emb)
    assert trained.mean > empty.mean


def test_emit_stats_empty_series(tmp_path):
    emit_stats([], None, tmp_path)
    assert (tmp_path / "stats.csv").read_text() == (
        "iteration,skill_set_size,skills_created,skills_pruned,executed_unique_skills,episode_score,mean_skill_length\n"
    )
    assert (tmp_path / "lifecycle.csv").read_text() == "skill_id,created_iteration,executions,pruned_iteration\n"


def test_emit_stats_lifecycle_rows(tmp_path):
    from test_skillset import skill, with_skills

    a, b = skill("skill-0001", "g1", created=1), skill("skill-0002", "g2", created=1)
    ss = with_skills(a, b)
    a.executions = [1, 2]
    ss.prune("skill-0001", iteration=2)
    series = [
        IterationStats(1, 2, 2, 0, 0, 10.0, 2.0),
        IterationStats(2, 1, 0, 1, 1, 40.0, 2.0),
        IterationStats(3, 1, 0, 0, 0, 100.0, 2.0),
    ]
    emit_stats(series, ss, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "lifecycle.csv")))
    assert len(rows) == 2
    assert rows[0] == {"skill_id": "skill-0001", "created_iteration": "1", "executions": "1;2", "pruned_iteration": "2"}
    assert rows[1]["pruned_iteration"] == ""
    assert read_stats(tmp_path / "stats.csv") == series


def test_mine_builds_skills_from_an_archive():
    env, ss, gen, emb = setup()
    source = SkillSet(ss.config)
    train(env, ScriptedActor(0), source, [VariantSpec("minilab", 0)], 6, gen, emb)
    archive = list(source.trajectories)
    fresh = SkillSet(ss.config)
    created = mine(fresh, archive, gen, emb)
    assert created and len(fresh.trajectories) == 6
    assert set(created) == set(fresh.skills)


def test_store_ids_follow_archive_size():
    env, ss, gen, emb = setup()
    ss.trajectories.append(traj("traj-0001", ["a"], ["b"]))
    train(env, ScriptedActor(0), ss, [VariantSpec("minilab", 0)], 2, gen, emb)
    assert [t.id for t in ss.trajectories] == ["traj-0001", "traj-0002", "traj-0003"]
    assert isinstance(ss.trajectories, TrajectoryStore)
