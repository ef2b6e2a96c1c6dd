"""Prompt templates for the actor and for skill generation.

Line breaks and trailing spaces are significant: rendered prompts are
compared byte-for-byte against golden files.
"""

from __future__ import annotations

import logging
from typing import Sequence

log = logging.getLogger(__name__)


def _lines(*lines: str) -> str:
    return "\n".join(lines)


ACTOR_HEADER = _lines(
    "You are playing a text-based game in which you must interact with your ",
    "surroundings to complete a task. You will occasionally be given posisible ",
    "subgoals. You may choose to target one of these subgoals or ignore them.",
)

ACTOR_INSTRUCTIONS = _lines(
    "Given the state, reflect on what has happened so far, explain your plan to ",
    "accomplish the task, output which of the given subgoals you are targeting next ",
    '(match one of the subgoals in the prompt word for word or output "none"), and ',
    "then output the next action to execute (use one of the action templates below).",
)

ACTOR_EXAMPLE = _lines(
    "For example:",
    "The last action had the effect of... To accomplish the task, I will need to...",
    "Current subgoal: [subgoal]",
    "Next action: [action]",
)

ACTOR_SKILLS_INTRO = _lines(
    "The following instructions contain potentially useful information about ",
    "reaching subgoals:",
)

SKILL_BLOCK_HEADER = "Instructions for reaching the subgoal {subgoal}:"
SKILL_BLOCK_ITEM = "    {n}. {instruction}"

FORMAT_REMINDER = _lines(
    "Your last response could not be parsed. End your response with exactly two lines:",
    "Current subgoal: [subgoal]",
    "Next action: [action]",
)

GENERATION_INTRO = _lines(
    "You are an expert planning system. You are creating reusable skills to execute ",
    "when completing various tasks. You create skills by looking at successful ",
    "examples of task completions. A skill is composed of a list of instructions and ",
    "a target state. After creating a skill, it will be used to execute actions in ",
    "an environment. The environment will return a set of observations that ",
    "summarize the new environment state. These observations will be used in ",
    "conjunction with the skill's target state to determine whether the last skill ",
    "was successful.",
)

GENERATION_CONSIDER = _lines(
    "Consider the example trajectories of states and actions below. You'll be asked ",
    "to analyze the similarities between each. Pay attention to the wording of the ",
    "state observations and actions. Then you'll be asked to generate the common ",
    "instructions, and target state for them.",
)

GENERATION_SUMMARY = _lines(
    "Generate a summary of what is happening in the examples above and the ",
    "similarities between them. Provide a name for the skill that is being executed ",
    "in the examples above. Do not generate skill instructions or target yet.",
)

GENERATION_INSTRUCTIONS = _lines(
    "Generate a numbered list of instructions for completing the skill. The ",
    "instructions should be similar to the actions in the examples. Instructions ",
    "should use the action templates provided below. Create generic instructions ",
    "that would be valid for every example but specific enough to be useful in the ",
    "examples. Do not mention the examples in the instructions. Use the output ",
    "format:",
    "Skill [skill name] instructions:",
    "1. instruction 1",
    "2. instruction 2",
    "...",
)

GENERATION_TARGET = _lines(
    "Generate a single target observation that would indicate the success of the ",
    "skill. The target should be similar to one of the observations in the final ",
    "states. Create a generic target that would be valid for every example. Do not ",
    "mention the examples in the target. Use the output format:",
    "Skill [skill name] target: [target observation]",
)

INSTRUCTIONS_REMINDER = _lines(
    "Your response did not follow the output format. Respond using exactly:",
    "Skill [skill name] instructions:",
    "1. instruction 1",
    "2. instruction 2",
    "...",
)

TARGET_REMINDER = _lines(
    "Your response did not follow the output format. Respond using exactly:",
    "Skill [skill name] target: [target observation]",
)


def format_action_templates(templates: Sequence[str]) -> str:
    if not templates:
        log.warning("rendering prompt with an empty action template list")
    return ", ".join(templates)


def render_skill_block(subgoal: str, instructions: Sequence[str]) -> str:
    lines = [SKILL_BLOCK_HEADER.format(subgoal=subgoal)]
    lines += [SKILL_BLOCK_ITEM.format(n=i, instruction=ins) for i, ins in enumerate(instructions, 1)]
    return "\n".join(lines)


def render_subtrajectory(states: Sequence[str], actions: Sequence[str]) -> str:
    """Initial State / Trajectory / Final State block for one subtrajectory.

    Each action is followed by the first line of the state it produced.
    """
    lines = ["Initial State:", states[0], "", "Trajectory:"]
    for action, nxt in zip(actions, states[1:]):
        lines.append(f"Action: {action}")
        lines.append(f"Observation: {nxt.splitlines()[0] if nxt else ''}")
    lines += ["", "Final State:", states[-1]]
    return "\n".join(lines)
