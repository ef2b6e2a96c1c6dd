"""Score candidate pairs and pick a high-scoring non-overlapping subset."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .core import CandidatePair, SSOConfig, SubtrajRef


@dataclass(frozen=True)
class SelectionState:
    chosen: tuple[CandidatePair, ...] = ()
    total_score: float = 0.0

    def __len__(self) -> int:
        return len(self.chosen)


def score_value(p: CandidatePair, config: SSOConfig) -> float:
    return (
        config.w_state * p.state_sim
        + config.w_action * p.action_sim
        + config.w_reward * p.reward_value
        + config.w_length * p.length
    )


def score_pair(p: CandidatePair, config: SSOConfig) -> CandidatePair:
    return replace(p, score=score_value(p, config))


def _sort_key(p: CandidatePair):
    return (-p.score, p.a, p.b)


def _conflict_masks(pairs: list[CandidatePair]) -> list[int]:
    """Bitmask per pair of every pair (itself included) sharing a covered step."""
    by_cell: dict[tuple[str, int], int] = {}
    for idx, p in enumerate(pairs):
        for cell in p.a.covers() | p.b.covers():
            by_cell[cell] = by_cell.get(cell, 0) | (1 << idx)
    masks = [0] * len(pairs)
    for idx, p in enumerate(pairs):
        for cell in p.a.covers() | p.b.covers():
            masks[idx] |= by_cell[cell]
    return masks


def sample_skill_pairs(
    candidates: Iterable[CandidatePair],
    carryover: Iterable[CandidatePair],
    config: SSOConfig,
) -> SelectionState:
    """Beam search over score-sorted pairs for a max-total non-overlapping set.

    Pairs are visited best-first; each beam state branches into "take" (if
    compatible) and "skip". States that leave the same set of later pairs
    available are interchangeable for the rest of the search, so only the
    higher-scoring one survives. The top ``beam_width`` states by total
    score are kept after every pair. Width 1 therefore reduces to greedy.
    """
    merged: dict[tuple[SubtrajRef, SubtrajRef], CandidatePair] = {}
    for p in list(carryover) + list(candidates):
        merged.setdefault(p.key, p)
    # pairs that cannot raise the total are never taken
    pairs = sorted((p for p in merged.values() if p.score > 0), key=_sort_key)
    if not pairs:
        return SelectionState()

    conflicts = _conflict_masks(pairs)
    n = len(pairs)
    full = (1 << n) - 1
    # beam entries: (total, chosen indices, blocked mask)
    beam: list[tuple[float, tuple[int, ...], int]] = [(0.0, (), 0)]
    for j in range(n):
        later = full & ~((1 << (j + 1)) - 1)
        pool: dict[int, tuple[float, tuple[int, ...], int]] = {}
        for total, chosen, blocked in beam:
            options = [(total, chosen, blocked)]
            if not (blocked >> j) & 1:
                options.append((total + pairs[j].score, chosen + (j,), blocked | conflicts[j]))
            for opt in options:
                signature = later & ~opt[2]
                cur = pool.get(signature)
                if cur is None or (opt[0], _neg(opt[1])) > (cur[0], _neg(cur[1])):
                    pool[signature] = opt
        beam = sorted(pool.values(), key=lambda s: (-s[0], s[1]))[: config.beam_width]

    total, chosen, _ = beam[0]
    picked = tuple(pairs[i] for i in chosen)
    return SelectionState(picked, sum(p.score for p in picked))


def _neg(indices: tuple[int, ...]) -> tuple[int, ...]:
    # prefer lexicographically smaller index tuples on exact score ties
    return tuple(-i for i in indices)


def partition_selection(
    selection: SelectionState | Iterable[CandidatePair],
    existing_skill_pairs: Mapping[tuple[SubtrajRef, SubtrajRef], str],
) -> tuple[list[CandidatePair], list[CandidatePair]]:
    """Split selected pairs into (needs generation, already backs a live skill)."""
    chosen = selection.chosen if isinstance(selection, SelectionState) else tuple(selection)
    new = [p for p in chosen if p.key not in existing_skill_pairs]
    retained = [p for p in chosen if p.key in existing_skill_pairs]
    return new, retained
