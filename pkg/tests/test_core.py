import math

import pytest
from factories import traj
from hypothesis import given
from hypothesis import strategies as st
from oracles import discounted_sum

from sso.core import (
    CandidatePair,
    SSOConfig,
    Step,
    SubtrajRef,
    Trajectory,
    TrajectoryStore,
    discounted_return,
    normalize_text,
    overlaps,
)
from sso.errors import ConfigError

rewards_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=25)
gamma_st = st.floats(0.01, 1.0)


def test_discounted_return_examples():
    assert discounted_return([0, 10, 0, 90], 0, 0.9) == pytest.approx(74.61, abs=1e-12)
    assert discounted_return([0, 0, 0], 1, 0.5) == 0.0
    assert discounted_return([1, 1, 1], 0, 1.0) == 3.0


def test_discounted_return_accepts_trajectory():
    t = traj("a", ["s0", "s1", "s2", "s3"], ["x", "y", "z", "w"], [0, 10, 0, 90])
    assert discounted_return(t, 0, 0.9) == pytest.approx(74.61)
    assert discounted_return(t, 3, 0.9) == 90


@pytest.mark.parametrize("t", [-1, 4, 10])
def test_discounted_return_out_of_range(t):
    with pytest.raises(IndexError):
        discounted_return([1, 2, 3, 4], t, 0.9)


@given(rewards_st, gamma_st, st.data())
def test_discounted_return_matches_summation(rewards, gamma, data):
    t = data.draw(st.integers(0, len(rewards) - 1))
    assert math.isclose(discounted_return(rewards, t, gamma), discounted_sum(rewards, t, gamma), abs_tol=1e-12)


@given(rewards_st, gamma_st, st.data())
def test_discounted_return_recursion(rewards, gamma, data):
    if len(rewards) < 2:
        return
    t = data.draw(st.integers(0, len(rewards) - 2))
    lhs = discounted_return(rewards, t, gamma)
    rhs = rewards[t] + gamma * discounted_return(rewards, t + 1, gamma)
    assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9)


def test_step_validation():
    with pytest.raises(ValueError):
        Step("", "go")
    with pytest.raises(ValueError):
        Step("room", "  ")
    with pytest.raises(ValueError):
        Step("room", "go", float("nan"))
    with pytest.raises(ValueError):
        Step("room", "go", float("inf"))


def test_trajectory_score_is_reward_sum():
    t = traj("a", ["s0", "s1", "s2"], ["x", "y", "z"], [1.5, 0, 98.5])
    assert t.episode_score == pytest.approx(100.0, abs=1e-9)
    assert t.rewards == [1.5, 0.0, 98.5]


def test_trajectory_json_round_trip():
    t = traj("a", ["s0", "s1"], ["x", "y"], [1, 2], terminal="end", skills=["skill-0001", None])
    assert Trajectory.from_json(t.to_json()) == t


@pytest.fixture
def abc_store():
    t = traj("t1", ["A", "B", "C"], ["x", "y", "z"], terminal="D")
    return TrajectoryStore([t])


def test_subtraj_views(abc_store):
    assert abc_store.subtraj_states(SubtrajRef("t1", 1, 2)) == ["B", "C", "D"]
    assert abc_store.subtraj_states(SubtrajRef("t1", 0, 3)) == ["A", "B", "C", "D"]
    assert abc_store.subtraj_actions(SubtrajRef("t1", 1, 2)) == ["y", "z"]
    assert abc_store.subtraj_actions(SubtrajRef("t1", 0, 3)) == ["x", "y", "z"]


def test_subtraj_view_bounds(abc_store):
    with pytest.raises(IndexError):
        abc_store.subtraj_states(SubtrajRef("t1", 2, 2))
    with pytest.raises(IndexError):
        abc_store.subtraj_actions(SubtrajRef("t1", 2, 2))
    with pytest.raises(KeyError):
        abc_store.subtraj_states(SubtrajRef("nope", 0, 2))


def test_length_one_refs_rejected_by_config():
    # a length-1 view is materializable, but no config admits it
    with pytest.raises(ConfigError):
        SSOConfig(min_len=1)


def test_store_is_append_only(abc_store):
    with pytest.raises(ValueError):
        abc_store.append(traj("t1", ["A"], ["x"]))
    t = abc_store["t1"]
    with pytest.raises(Exception):
        t.steps[0].observation = "changed"  # frozen


def test_store_jsonl_round_trip(tmp_path, abc_store):
    abc_store.append(traj("t2", ["P", "Q"], ["u", "v"], [0.5, 2.0], skills=[None, "skill-0003"]))
    path = tmp_path / "archive.jsonl"
    abc_store.save_jsonl(path)
    assert TrajectoryStore.load_jsonl(path) == abc_store
    assert [t.id for t in abc_store.recent(1)] == ["t2"]
    assert abc_store.recent(0) == []


def pair(a, b):
    return CandidatePair(SubtrajRef(*a), SubtrajRef(*b), 0.0, 0.0, 0.0)


def test_overlap_examples():
    p = pair(("traj1", 0, 3), ("trajx", 0, 3))
    q = pair(("traj1", 2, 3), ("trajy", 0, 3))
    assert overlaps(p, q)
    p2 = pair(("traj1", 0, 3), ("trajx", 5, 3))
    q2 = pair(("traj2", 0, 3), ("trajy", 0, 3))
    assert not overlaps(p2, q2)
    p3 = pair(("traj1", 0, 2), ("traj2", 3, 2))
    q3 = pair(("traj3", 0, 2), ("traj2", 4, 2))
    assert overlaps(p3, q3)


ref_st = st.builds(SubtrajRef, st.sampled_from(["a", "b", "c"]), st.integers(0, 8), st.integers(1, 4))


@st.composite
def pairs_st(draw):
    a = draw(ref_st)
    b = draw(ref_st.filter(lambda r: r.trajectory_id != a.trajectory_id).map(lambda r: SubtrajRef(r.trajectory_id, r.start, a.length)))
    return CandidatePair(a, b, 0.0, 0.0, 0.0)


def _cells(p):
    out = set()
    for r in (p.a, p.b):
        out |= {(r.trajectory_id, i) for i in range(r.start, r.start + r.length)}
    return out


@given(pairs_st(), pairs_st())
def test_overlap_matches_cell_intersection(p, q):
    assert overlaps(p, q) == bool(_cells(p) & _cells(q))
    assert overlaps(p, q) == overlaps(q, p)
    assert overlaps(p, p)


def test_candidate_pair_invariants():
    with pytest.raises(ValueError):
        CandidatePair(SubtrajRef("a", 0, 2), SubtrajRef("b", 0, 3), 0, 0, 0)
    with pytest.raises(ValueError):
        CandidatePair(SubtrajRef("a", 0, 2), SubtrajRef("a", 4, 2), 0, 0, 0)
    p = CandidatePair(SubtrajRef("a", 0, 2), SubtrajRef("b", 1, 2), 0.5, 0.25, 3.0, 1.0)
    assert CandidatePair.from_json(p.to_json()) == p
    swapped = CandidatePair(p.b, p.a, 0.5, 0.25, 3.0)
    assert swapped.key == p.key


def test_config_defaults_follow_hyperparameter_table():
    c = SSOConfig()
    assert (c.min_len, c.max_len, c.n_past) == (2, 5, 10)
    assert (c.gamma, c.epsilon) == (0.9, 0.0)
    assert (c.w_state, c.w_action, c.w_reward, c.w_length) == (1.0, 1.0, 0.1, 0.01)
    assert (c.max_retrieved, c.temp_train, c.temp_test) == (3, 0.7, 0.0)


@pytest.mark.parametrize(
    "bad",
    [
        {"min_len": 1},
        {"min_len": 4, "max_len": 3},
        {"gamma": 0.0},
        {"gamma": 1.01},
        {"w_reward": -0.1},
        {"max_retrieved": 0},
        {"beam_width": 0},
        {"match_on": "both"},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SSOConfig(**bad)


def test_config_dict_round_trip_and_unknown_keys():
    c = SSOConfig(gamma=0.5, beam_width=3)
    assert SSOConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError):
        SSOConfig.from_dict({"gama": 0.5})


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("You focus on the thermometer.", "you focus on the thermometer"),
        ("you focus on  the\tthermometer", "you focus on the thermometer"),
        ("on the stove is: a substance called liquid [substance]", "on the stove is: a substance called liquid [x]"),
        ('"It\'s not clear how to read that."', "it's not clear how to read that"),
    ],
)
def test_normalize_text(raw, expected):
    assert normalize_text(raw) == expected
