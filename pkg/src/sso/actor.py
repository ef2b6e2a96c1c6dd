"""Actor prompt rendering, output parsing and the two actor kinds."""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .core import normalize_text
from .env import EnvObservation
from .errors import ActorParseError
from .llm import ChatClient, ChatRequest
from .prompts import (
    ACTOR_EXAMPLE,
    ACTOR_HEADER,
    ACTOR_INSTRUCTIONS,
    ACTOR_SKILLS_INTRO,
    FORMAT_REMINDER,
    format_action_templates,
    render_skill_block,
)
from .skillset import Skill

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActorDecision:
    action: str
    targeted_subgoal: Optional[str] = None  # skill id
    reflection: str = ""

    def __post_init__(self):
        if not self.action.strip():
            raise ValueError("action must be non-empty")


def render_actor_prompt(
    task_description: str,
    admissible_actions: Sequence[str],
    skills: Sequence[Skill],
    state_text: str,
) -> str:
    sections = [
        ACTOR_HEADER,
        task_description,
        ACTOR_INSTRUCTIONS,
        ACTOR_EXAMPLE,
        format_action_templates(admissible_actions),
    ]
    if skills:
        sections.append(ACTOR_SKILLS_INTRO)
        sections += [render_skill_block(s.subgoal, s.instructions) for s in skills]
    sections.append(state_text)
    return "\n\n".join(sections)


_SUBGOAL = re.compile(r"^\s*current subgoal\s*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_ACTION = re.compile(r"^\s*next action\s*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)


def _after(match: re.Match, text: str) -> str:
    """Rest of the matched line, or the next non-empty line if it is blank."""
    value = match.group(1).strip()
    if value:
        return value
    for line in text[match.end() :].splitlines():
        if line.strip():
            return line.strip()
    return ""


def parse_actor_output(text: str, offered_skills: Sequence[Skill]) -> ActorDecision:
    """Extract (reflection, targeted skill id, action) from model output.

    The subgoal resolves to a skill id only on a normalized exact match with
    an offered subgoal; anything else (including "none") resolves to None.
    """
    actions = list(_ACTION.finditer(text))
    if not actions:
        raise ActorParseError("missing 'Next action:' line")
    action_match = actions[-1]
    action = _after(action_match, text).strip("`\"' ")
    if not action:
        raise ActorParseError("empty 'Next action:' line")

    subgoals = [m for m in _SUBGOAL.finditer(text) if m.start() < action_match.start()]
    target = None
    reflection = text[: action_match.start()]
    if subgoals:
        sub = subgoals[-1]
        reflection = text[: sub.start()]
        cited = normalize_text(_after(sub, text).strip("[]"))
        for skill in offered_skills:
            if normalize_text(skill.subgoal) == cited:
                target = skill.id
                break
    return ActorDecision(action=action, targeted_subgoal=target, reflection=reflection.strip())


def render_decision(decision: ActorDecision, offered_skills: Sequence[Skill]) -> str:
    """Model-style output text for a decision (inverse of parse_actor_output)."""
    subgoal = "none"
    for s in offered_skills:
        if s.id == decision.targeted_subgoal:
            subgoal = s.subgoal
    reflection = decision.reflection or "The last action had the effect shown in the state."
    return f"{reflection}\nCurrent subgoal: {subgoal}\nNext action: {decision.action}"


class Actor(Protocol):
    def begin_episode(self, task_description: str, seed: int) -> None: ...

    def act(self, observation: EnvObservation, skills: Sequence[Skill]) -> ActorDecision: ...


def scripted_policy(
    observation: EnvObservation,
    skills: Sequence[Skill],
    rng: random.Random,
    progress: dict[str, int],
) -> ActorDecision:
    """Follow a retrieved skill when its next instruction is valid, else explore.

    ``progress`` maps skill id to instructions already executed this episode
    and is updated in place.
    """
    valid = observation.valid_actions or observation.admissible_action_templates
    allowed = {normalize_text(a): a for a in valid}
    for skill in skills:
        done = progress.get(skill.id, 0)
        if done >= len(skill.instructions):
            continue
        action = allowed.get(normalize_text(skill.instructions[done]))
        if action is not None:
            progress[skill.id] = done + 1
            return ActorDecision(action, skill.id, f"Following the instructions for {skill.subgoal}.")
    return ActorDecision(rng.choice(list(valid)), None, "Exploring.")


class ScriptedActor:
    """Offline actor: seeded exploration plus literal skill following."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)
        self.progress: dict[str, int] = {}

    def begin_episode(self, task_description: str, seed: int) -> None:
        self.rng = random.Random(f"{self.seed}-{seed}")
        self.progress = {}

    def act(self, observation: EnvObservation, skills: Sequence[Skill]) -> ActorDecision:
        return scripted_policy(observation, skills, self.rng, self.progress)


class ChatActor:
    """LLM actor; one fresh single-turn prompt per step."""

    def __init__(self, client: ChatClient, temperature: float, noop_action: str = "wait", transcript=None):
        self.client = client
        self.temperature = temperature
        self.noop_action = noop_action
        self.transcript = transcript
        self.task_description = ""

    def begin_episode(self, task_description: str, seed: int) -> None:
        self.task_description = task_description

    def act(self, observation: EnvObservation, skills: Sequence[Skill]) -> ActorDecision:
        prompt = render_actor_prompt(
            self.task_description, observation.admissible_action_templates, skills, observation.text
        )
        messages: list[tuple[str, str]] = [("user", prompt)]
        for attempt in range(2):
            reply = self.client.chat(ChatRequest(self.client.model, tuple(messages), self.temperature))
            if self.transcript is not None:
                self.transcript.write({"prompt": messages[-1][1], "response": reply, "attempt": attempt})
            try:
                return parse_actor_output(reply, skills)
            except ActorParseError as exc:
                log.info("actor output unparseable (%s)", exc)
                messages += [("assistant", reply), ("user", FORMAT_REMINDER)]
        return ActorDecision(self.noop_action, None, "Output could not be parsed.")
