"""Turn selected subtrajectory pairs into skills via a three-turn chat."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import CandidatePair, SSOConfig, TrajectoryStore, normalize_text
from .errors import TransportError
from .llm import ChatClient, ChatRequest
from .prompts import (
    GENERATION_CONSIDER,
    GENERATION_INSTRUCTIONS,
    GENERATION_INTRO,
    GENERATION_SUMMARY,
    GENERATION_TARGET,
    INSTRUCTIONS_REMINDER,
    TARGET_REMINDER,
    format_action_templates,
    render_subtrajectory,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SkillDraft:
    name: str
    instructions: tuple[str, ...]
    subgoal: str
    source_pair: Optional[CandidatePair] = None

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if not self.instructions or not all(i.strip() for i in self.instructions):
            raise ValueError("a skill needs at least one non-empty instruction")
        if not self.subgoal.strip() or "\n" in self.subgoal:
            raise ValueError("subgoal must be a single non-empty line")


class Transcript:
    """Append-only JSONL log of prompts and responses."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def render_generation_prompts(
    pair: CandidatePair, store: TrajectoryStore, action_templates: Sequence[str]
) -> tuple[str, str, str]:
    examples = [
        render_subtrajectory(store.subtraj_states(ref), store.subtraj_actions(ref)) for ref in (pair.a, pair.b)
    ]
    turn1 = "\n\n".join(
        [
            GENERATION_INTRO,
            GENERATION_CONSIDER,
            f"Example 1:\n{examples[0]}",
            f"Example 2:\n{examples[1]}",
            GENERATION_SUMMARY,
        ]
    )
    turn2 = f"{GENERATION_INSTRUCTIONS}\n\nAction templates: {format_action_templates(action_templates)}"
    return turn1, turn2, GENERATION_TARGET


_NUMBERED = re.compile(r"^\s*(?:step\s*)?(\d+)\s*[.):]\s*(.*\S)\s*$", re.IGNORECASE)
_INSTR_HEADER = re.compile(r"^\s*skill\s*(.*?)\s*instructions\s*:\s*$", re.IGNORECASE)
_TARGET_LINE = re.compile(r"^\s*skill\s*(.*?)\s*target\s*:\s*(.*?)\s*$", re.IGNORECASE)


def _clean_name(raw: str) -> str:
    return raw.strip().strip("[]\"'*").strip()


def _numbered_items(lines: Iterable[str]) -> list[str]:
    items: list[str] = []
    for line in lines:
        m = _NUMBERED.match(line)
        if m:
            items.append(m.group(2).strip())
        elif items and line.strip() and line[:1].isspace():
            items[-1] = f"{items[-1]} {line.strip()}"
        elif items and not line.strip():
            break
        elif items:
            break
    return items


def parse_instructions(text: str) -> tuple[Optional[str], list[str]]:
    """Parse "Skill <name> instructions:" followed by a numbered list.

    Accepts "1." / "1)" / "Step 1:" numbering. The header is optional.
    """
    lines = text.splitlines()
    for idx, line in enumerate(lines):
        m = _INSTR_HEADER.match(line)
        if m:
            return _clean_name(m.group(1)) or None, _numbered_items(lines[idx + 1 :])
    for idx, line in enumerate(lines):
        if _NUMBERED.match(line):
            return None, _numbered_items(lines[idx:])
    return None, []


def parse_target(text: str) -> tuple[Optional[str], Optional[str]]:
    """Parse "Skill <name> target: <observation>" into (name, subgoal)."""
    lines = text.splitlines()
    for idx, line in enumerate(lines):
        m = _TARGET_LINE.match(line)
        if not m:
            continue
        target = m.group(2)
        if not target:
            target = next((nxt.strip() for nxt in lines[idx + 1 :] if nxt.strip()), "")
        target = target.strip()
        if target.startswith("[") and target.endswith("]") and target.count("[") == 1:
            target = target[1:-1].strip()
        return _clean_name(m.group(1)) or None, target or None
    return None, None


def parse_skill_listing(text: str) -> tuple[str, list[str]]:
    """Parse a "Subgoal: ..." line (possibly wrapped) plus numbered instructions."""
    lines = text.splitlines()
    subgoal_parts: list[str] = []
    body_start = len(lines)
    for idx, line in enumerate(lines):
        if _NUMBERED.match(line):
            body_start = idx
            break
        stripped = line.strip()
        if stripped.lower().startswith("subgoal:"):
            stripped = stripped[len("subgoal:") :].strip()
        if stripped:
            subgoal_parts.append(stripped)
    return " ".join(subgoal_parts), _numbered_items(lines[body_start:])


def generate_skill(
    pair: CandidatePair,
    store: TrajectoryStore,
    chat_client: ChatClient,
    config: SSOConfig,
    action_templates: Sequence[str] = (),
    transcript: Optional[Transcript] = None,
) -> Optional[SkillDraft]:
    """Run the summary / instructions / target turns; ``None`` discards the pair."""
    turn1, turn2, turn3 = render_generation_prompts(pair, store, action_templates)
    messages: list[tuple[str, str]] = []

    def ask(prompt: str) -> str:
        messages.append(("user", prompt))
        reply = chat_client.chat(ChatRequest(chat_client.model, tuple(messages), config.temp_train))
        messages.append(("assistant", reply))
        return reply

    ask(turn1)  # summary and name; conditions later turns only

    name, instructions = parse_instructions(ask(turn2))
    for _ in range(config.generation_retries):
        if instructions:
            break
        name, instructions = parse_instructions(ask(INSTRUCTIONS_REMINDER))

    subgoal = None
    if instructions:
        tname, subgoal = parse_target(ask(turn3))
        for _ in range(config.generation_retries):
            if subgoal:
                break
            tname, subgoal = parse_target(ask(TARGET_REMINDER))
        name = name or tname

    record = {"pair": pair.to_json(), "messages": [{"role": r, "content": c} for r, c in messages]}
    if not instructions or not subgoal:
        record["discarded"] = "unparseable instructions" if not instructions else "unparseable target"
        if transcript is not None:
            transcript.write(record)
        log.info("discarding pair %s: %s", pair.key, record["discarded"])
        return None
    draft = SkillDraft(name=name or subgoal, instructions=tuple(instructions), subgoal=subgoal, source_pair=pair)
    record["draft"] = {"name": draft.name, "instructions": list(draft.instructions), "subgoal": draft.subgoal}
    if transcript is not None:
        transcript.write(record)
    return draft


DEDUP_PROMPT = (
    "Below are existing skill subgoals followed by new candidate subgoals.\n\n"
    "Existing subgoals:\n{existing}\n\n"
    "New subgoals:\n{new}\n\n"
    "List the numbers of the new subgoals that are semantically identical to an "
    "existing subgoal or to an earlier new subgoal. Use the output format:\n"
    "Duplicates: [comma separated numbers or none]"
)
_DUPLICATES = re.compile(r"duplicates\s*:\s*(.*)", re.IGNORECASE)


def dedup_skills(
    drafts: Sequence[SkillDraft],
    existing_subgoals: Iterable[str],
    chat_client: Optional[ChatClient] = None,
    temperature: float = 0.0,
) -> list[SkillDraft]:
    """Drop drafts whose subgoal duplicates an existing or earlier subgoal.

    Normalized string equality always applies; with a chat client the model
    is additionally asked to flag semantic duplicates.
    """
    existing = list(existing_subgoals)
    seen = {normalize_text(s) for s in existing}
    kept: list[SkillDraft] = []
    for draft in drafts:
        key = normalize_text(draft.subgoal)
        if key in seen:
            log.debug("dropping duplicate subgoal %r", draft.subgoal)
            continue
        seen.add(key)
        kept.append(draft)
    if chat_client is None or not kept:
        return kept

    prompt = DEDUP_PROMPT.format(
        existing="\n".join(f"- {s}" for s in existing) or "- none",
        new="\n".join(f"{i}. {d.subgoal}" for i, d in enumerate(kept, 1)),
    )
    try:
        reply = chat_client.chat(ChatRequest(chat_client.model, (("user", prompt),), temperature))
    except TransportError as exc:
        log.warning("semantic dedup unavailable (%s); using normalized matching only", exc)
        return kept
    m = _DUPLICATES.search(reply)
    if not m:
        return kept
    flagged = {int(n) for n in re.findall(r"\d+", m.group(1))}
    return [d for i, d in enumerate(kept, 1) if i not in flagged]


class OfflineSkillWriter:
    """Deterministic chat stand-in for skill generation.

    Instructions are Example 1's actions verbatim; the target is the first
    line of Example 1's final state. Dedup questions get "Duplicates: none".
    """

    model = "offline-skill-writer"

    def __init__(self):
        self.calls = 0

    def chat(self, request: ChatRequest) -> str:
        self.calls += 1
        first = request.messages[0][1]
        last = request.messages[-1][1]
        if first.startswith("Below are existing skill subgoals"):
            return "Duplicates: none"
        actions, final_state = self._example_one(first)
        subgoal = final_state.splitlines()[0].strip() if final_state.strip() else "done"
        name = normalize_text(subgoal) or "skill"
        if len(request.messages) == 1:
            return f"Both examples repeat the same actions.\nSkill name: {name}"
        if last in (GENERATION_TARGET, TARGET_REMINDER):
            return f"Skill {name} target: {subgoal}"
        numbered = "\n".join(f"{i}. {a}" for i, a in enumerate(actions, 1))
        return f"Skill {name} instructions:\n{numbered}"

    @staticmethod
    def _example_one(prompt: str) -> tuple[list[str], str]:
        block = prompt.split("Example 1:\n", 1)[1].split("\n\nExample 2:\n", 1)[0]
        traj_part, final_part = block.split("\n\nFinal State:\n", 1)
        actions = [line[len("Action: ") :] for line in traj_part.splitlines() if line.startswith("Action: ")]
        return actions, final_part
