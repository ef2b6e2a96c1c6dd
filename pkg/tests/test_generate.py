import logging

import pytest
from factories import traj

from sso.core import CandidatePair, SSOConfig, SubtrajRef, TrajectoryStore
from sso.errors import TransportError
from sso.generate import (
    OfflineSkillWriter,
    SkillDraft,
    Transcript,
    dedup_skills,
    generate_skill,
    parse_instructions,
    parse_skill_listing,
    parse_target,
    render_generation_prompts,
)
from sso.llm import ChatRequest
from sso.prompts import GENERATION_TARGET, render_skill_block

TEMPLATES = ["look around", "go OBJ", "focus on OBJ", "wait"]

MELTING_INSTRUCTIONS = [
    "Focus on the thermometer",
    "Focus on the substance you want to heat",
    "Move the focused substance to the stove",
    "Activate the stove",
]
MELTING_SUBGOAL = "The stove is turned on. on the stove is: a substance called liquid [substance]."
MELTING_LISTING = (
    "Subgoal: The stove is turned on. on the stove is:\n"
    "    a substance called liquid [substance].\n"
    "1. Focus on the thermometer\n"
    "2. Focus on the substance you want to heat\n"
    "3. Move the focused substance to the stove\n"
    "4. Activate the stove"
)


def build_golden_store():
    a = traj(
        "traj-a",
        [
            "You are in the hallway.\nA door leads to the kitchen.",
            "You move to the kitchen.\nYou see a stove and a thermometer.",
            "You focus on the thermometer.\nYou see a stove and a thermometer.",
        ],
        ["go kitchen", "focus on thermometer", "wait"],
        terminal="Time passes.\nYou see a stove and a thermometer.",
    )
    b = traj(
        "traj-b",
        [
            "You are in the art studio.\nA door leads to the kitchen.",
            "You move to the kitchen.\nYou see a stove, a sink and a thermometer.",
        ],
        ["go kitchen", "focus on thermometer"],
        terminal="You focus on the thermometer.\nYou see a stove, a sink and a thermometer.",
    )
    return TrajectoryStore([a, b])


GOLDEN_PAIR = CandidatePair(SubtrajRef("traj-a", 0, 2), SubtrajRef("traj-b", 0, 2), 0.9, 1.0, 10.0)


@pytest.fixture
def golden_store():
    return build_golden_store()


@pytest.fixture
def golden_pair():
    return GOLDEN_PAIR


def test_generation_prompts_match_golden(golden_store, golden_pair, golden):
    turns = render_generation_prompts(golden_pair, golden_store, TEMPLATES)
    for i, turn in enumerate(turns, 1):
        assert turn == golden(f"generation_turn{i}.txt")


def test_generation_prompts_pure_and_symmetric_examples(golden_store):
    p = CandidatePair(SubtrajRef("traj-a", 0, 2), SubtrajRef("traj-b", 0, 2), 0, 0, 0)
    assert render_generation_prompts(p, golden_store, TEMPLATES) == render_generation_prompts(p, golden_store, TEMPLATES)
    twin_store = TrajectoryStore(
        [traj("x", ["s0", "s1"], ["go", "look"], terminal="s2"), traj("y", ["s0", "s1"], ["go", "look"], terminal="s2")]
    )
    turn1 = render_generation_prompts(CandidatePair(SubtrajRef("x", 0, 2), SubtrajRef("y", 0, 2), 0, 0, 0), twin_store, TEMPLATES)[0]
    ex1 = turn1.split("Example 1:\n")[1].split("\n\nExample 2:\n")[0]
    ex2 = turn1.split("Example 2:\n")[1].split("\n\nGenerate a summary")[0]
    assert ex1 == ex2


def test_empty_action_templates_warn(golden_store, golden_pair, caplog):
    with caplog.at_level(logging.WARNING):
        turn2 = render_generation_prompts(golden_pair, golden_store, [])[1]
    assert turn2.endswith("Action templates: ")
    assert "empty action template list" in caplog.text


class ScriptedChat:
    model = "stub"

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def chat(self, request):
        self.requests.append(request)
        return self.replies.pop(0)


def test_generate_skill_parses_melting_example(golden_store, golden_pair):
    numbered = "\n".join(f"{i}. {s}" for i, s in enumerate(MELTING_INSTRUCTIONS, 1))
    chat = ScriptedChat(
        [
            "Both examples heat a substance.\nSkill name: heat substance",
            f"Skill heat substance instructions:\n{numbered}",
            f"Skill heat substance target: {MELTING_SUBGOAL}",
        ]
    )
    draft = generate_skill(golden_pair, golden_store, chat, SSOConfig())
    assert draft.instructions == tuple(MELTING_INSTRUCTIONS)
    assert draft.subgoal.startswith("The stove is turned on")
    assert draft.name == "heat substance"
    assert draft.source_pair == golden_pair
    # turn order and conversation growth
    assert [len(r.messages) for r in chat.requests] == [1, 3, 5]
    assert all(r.temperature == 0.7 for r in chat.requests)
    assert chat.requests[2].messages[-1][1] == GENERATION_TARGET


def test_generate_skill_discards_after_retries(golden_store, golden_pair, tmp_path):
    chat = ScriptedChat(["summary", "I would rather not.", "Still no list here.", "nope"])
    transcript = Transcript(tmp_path / "gen.jsonl")
    assert generate_skill(golden_pair, golden_store, chat, SSOConfig(generation_retries=2), TEMPLATES, transcript) is None
    assert len(chat.requests) == 4  # turn 1, turn 2, two reminders
    assert transcript.records[-1]["discarded"] == "unparseable instructions"
    assert (tmp_path / "gen.jsonl").read_text().count("\n") == 1


def test_generate_skill_retries_target_turn(golden_store, golden_pair):
    chat = ScriptedChat(["s", "1. go kitchen\n2. wait", "the target is a kitchen", "Skill k target: You are in the kitchen."])
    draft = generate_skill(golden_pair, golden_store, chat, SSOConfig())
    assert draft.subgoal == "You are in the kitchen."
    assert draft.instructions == ("go kitchen", "wait")


def test_generate_skill_propagates_transport_errors(golden_store, golden_pair):
    class Down:
        model = "down"

        def chat(self, request):
            raise TransportError("503")

    with pytest.raises(TransportError):
        generate_skill(golden_pair, golden_store, Down(), SSOConfig())


def test_offline_writer_is_its_own_oracle(golden_store, golden_pair):
    draft = generate_skill(golden_pair, golden_store, OfflineSkillWriter(), SSOConfig(), TEMPLATES)
    assert draft.instructions == tuple(golden_store.subtraj_actions(golden_pair.a))
    final_state = golden_store.subtraj_states(golden_pair.a)[-1]
    assert draft.subgoal == final_state.splitlines()[0]


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Skill heat instructions:\n1. go kitchen\n2. wait", ("heat", ["go kitchen", "wait"])),
        ("Skill [heat] instructions:\n1) go kitchen\n2) wait\n\nDone.", ("heat", ["go kitchen", "wait"])),
        ("Step 1: go kitchen\nStep 2: wait", (None, ["go kitchen", "wait"])),
        ("Sure!\n1. move thermometer to stove\n   if it is not there\n2. wait", (None, ["move thermometer to stove if it is not there", "wait"])),
        ("no list at all", (None, [])),
    ],
)
def test_parse_instructions(text, expected):
    assert parse_instructions(text) == expected


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Skill heat target: The stove is on.", ("heat", "The stove is on.")),
        ("Skill [heat] target: [The stove is on.]", ("heat", "The stove is on.")),
        ("Skill heat target: a substance called liquid [substance]", ("heat", "a substance called liquid [substance]")),
        ("Skill heat target:\nThe stove is on.", ("heat", "The stove is on.")),
        ("nothing useful", (None, None)),
    ],
)
def test_parse_target(text, expected):
    assert parse_target(text) == expected


def test_melting_listing_parses():
    subgoal, instructions = parse_skill_listing(MELTING_LISTING)
    assert len(instructions) == 4
    assert instructions[0] == "Focus on the thermometer"
    assert subgoal.startswith("The stove is turned on")
    assert subgoal == MELTING_SUBGOAL


def test_actor_block_round_trip():
    block = render_skill_block(MELTING_SUBGOAL, MELTING_INSTRUCTIONS)
    assert block.startswith("Instructions for reaching the subgoal The stove is turned on")
    assert parse_instructions(block)[1] == MELTING_INSTRUCTIONS


def test_skill_draft_invariants():
    with pytest.raises(ValueError):
        SkillDraft("n", (), "goal")
    with pytest.raises(ValueError):
        SkillDraft("n", ("ok", " "), "goal")
    with pytest.raises(ValueError):
        SkillDraft("n", ("ok",), "two\nlines")


def d(subgoal):
    return SkillDraft("n", ("wait",), subgoal)


def test_dedup_examples():
    assert dedup_skills([d("You focus on the thermometer")], ["you focus on  the thermometer"]) == []
    both = [d("you move to the kitchen"), d("you focus on the thermometer")]
    assert dedup_skills(both, []) == both
    batch = [d("a one"), d("b two"), d("c three"), d("B  Two."), d("e five")]
    kept = dedup_skills(batch, [])
    assert len(kept) == 4
    assert [k.subgoal for k in kept] == ["a one", "b two", "c three", "e five"]


def test_dedup_llm_mode_and_fallback():
    drafts = [d("the stove is on"), d("the stove has been activated")]
    chat = ScriptedChat(["Duplicates: 2"])
    assert dedup_skills(drafts, ["heat is on"], chat) == drafts[:1]
    assert "New subgoals:" in chat.requests[0].messages[0][1]

    class Down:
        model = "down"

        def chat(self, request):
            raise TransportError("offline")

    assert dedup_skills(drafts, [], Down()) == drafts
    # deterministic pass runs first: the LLM never sees normalized duplicates
    chat2 = ScriptedChat(["Duplicates: none"])
    assert dedup_skills([d("x y"), d("X  y")], [], chat2) == [d("x y")]
    assert "2." not in chat2.requests[0].messages[0][1]


def test_offline_writer_answers_dedup():
    w = OfflineSkillWriter()
    from sso.generate import DEDUP_PROMPT

    reply = w.chat(ChatRequest(w.model, (("user", DEDUP_PROMPT.format(existing="- a", new="1. b")),), 0.0))
    assert reply == "Duplicates: none"
