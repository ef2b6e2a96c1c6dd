"""Skill set optimization: mine, retrieve and refine in-context skills for LLM agents."""

from .core import (
    CandidatePair,
    SSOConfig,
    Step,
    SubtrajRef,
    Trajectory,
    TrajectoryStore,
    discounted_return,
)
from .embedding import CachedEmbedder, Embedding, TrigramEmbedder, cosine, test_embedder
from .errors import (
    ActorParseError,
    CassetteMiss,
    ConfigError,
    EmbeddingError,
    EnvError,
    SkillSetLoadError,
    SSOError,
    TransportError,
)
from .extract import CandidateSet, extract_candidates
from .select import SelectionState, sample_skill_pairs, score_pair
from .skillset import Skill, SkillSet

__version__ = "0.1.0"

__all__ = [
    "ActorParseError",
    "CachedEmbedder",
    "CandidatePair",
    "CandidateSet",
    "CassetteMiss",
    "ConfigError",
    "Embedding",
    "EmbeddingError",
    "EnvError",
    "SSOConfig",
    "SSOError",
    "SelectionState",
    "Skill",
    "SkillSet",
    "SkillSetLoadError",
    "Step",
    "SubtrajRef",
    "Trajectory",
    "TrajectoryStore",
    "TransportError",
    "TrigramEmbedder",
    "cosine",
    "discounted_return",
    "extract_candidates",
    "sample_skill_pairs",
    "score_pair",
    "test_embedder",
]
