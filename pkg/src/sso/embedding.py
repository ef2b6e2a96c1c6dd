"""Text embeddings, cosine similarity and subtrajectory similarity."""

from __future__ import annotations

import hashlib
import logging
import threading
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import SubtrajRef, TrajectoryStore
from .errors import EmbeddingError

log = logging.getLogger(__name__)


class Embedding:
    """Immutable, non-zero, finite embedding vector."""

    __slots__ = ("values",)

    def __init__(self, values: Iterable[float] | np.ndarray):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite entries")
        if not np.any(arr):
            raise ValueError("zero vector is not a valid embedding")
        arr.setflags(write=False)
        self.values = arr

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def unit(self) -> np.ndarray:
        return self.values / np.linalg.norm(self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.values.dtype == other.values.dtype and self.values.tobytes() == other.values.tobytes()

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    val = float(np.dot(a.values, b.values) / (np.linalg.norm(a.values) * np.linalg.norm(b.values)))
    return min(1.0, max(-1.0, val))


class EmbeddingProvider(Protocol):
    model: str

    def embed_batch(self, texts: Sequence[str]) -> list[Sequence[float]]: ...


TRIGRAM_DIM = 256
# blake2b personalization acting as the fixed hash seed
TRIGRAM_SEED = b"sso-trigram-v1"


def test_embedder(text: str, dim: int = TRIGRAM_DIM) -> Embedding:
    """Hashed character-trigram counts, L2-normalized.

    The text is framed with STX/ETX so that every non-empty string has at
    least one trigram. Each trigram's UTF-8 bytes are hashed with 8-byte
    blake2b personalized by ``TRIGRAM_SEED``; the bucket is the digest
    (little-endian) modulo ``dim``.
    """
    if not text:
        raise ValueError("cannot embed empty text")
    framed = "\x02" + text + "\x03"
    counts = np.zeros(dim, dtype=np.float64)
    for i in range(len(framed) - 2):
        digest = hashlib.blake2b(framed[i : i + 3].encode("utf-8"), digest_size=8, person=TRIGRAM_SEED).digest()
        counts[int.from_bytes(digest, "little") % dim] += 1.0
    return Embedding(counts / np.linalg.norm(counts))


# keep pytest from collecting the embedder as a test
test_embedder.__test__ = False


class TrigramEmbedder:
    """Offline deterministic provider backed by :func:`test_embedder`."""

    def __init__(self, dim: int = TRIGRAM_DIM):
        self.dim = dim
        self.model = f"trigram-{dim}"
        self.calls = 0

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        self.calls += 1
        return [test_embedder(t, self.dim).values for t in texts]


def _cache_key(model: str, text: str) -> str:
    return hashlib.sha256(model.encode("utf-8") + b"\x00" + text.encode("utf-8")).hexdigest()


class CachedEmbedder:
    """Memoizing front for a provider; keyed by (model id, exact text bytes).

    ``requested`` counts texts actually sent to the provider.
    """

    def __init__(self, provider: EmbeddingProvider, cache_path: str | Path | None = None):
        self.provider = provider
        self.model = provider.model
        self.cache_path = Path(cache_path) if cache_path else None
        self._cache: dict[str, Embedding] = {}
        self._lock = threading.Lock()
        self._dim: int | None = None
        self.requested = 0
        if self.cache_path and self.cache_path.exists():
            self.load(self.cache_path)

    def __len__(self) -> int:
        return len(self._cache)

    def embed(self, text: str) -> Embedding:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[Embedding]:
        for t in texts:
            if not t:
                raise ValueError("cannot embed empty text")
        keys = [_cache_key(self.model, t) for t in texts]
        missing: dict[str, str] = {}
        for k, t in zip(keys, texts):
            if k not in self._cache and k not in missing:
                missing[k] = t
        if missing:
            try:
                vectors = self.provider.embed_batch(list(missing.values()))
            except EmbeddingError:
                raise
            except Exception as exc:
                raise EmbeddingError(f"{self.model}: {exc}") from exc
            if len(vectors) != len(missing):
                raise EmbeddingError(f"{self.model}: expected {len(missing)} vectors, got {len(vectors)}")
            self.requested += len(missing)
            with self._lock:
                for k, vec in zip(missing, vectors):
                    emb = Embedding(vec)
                    if self._dim is None:
                        self._dim = emb.dim
                    elif emb.dim != self._dim:
                        raise EmbeddingError(f"{self.model}: dimension changed {self._dim} -> {emb.dim}")
                    self._cache[k] = emb
        return [self._cache[k] for k in keys]

    def save(self, path: str | Path | None = None) -> None:
        path = Path(path or self.cache_path)
        keys = sorted(self._cache)
        matrix = np.stack([self._cache[k].values for k in keys]) if keys else np.zeros((0, 0))
        with open(path, "wb") as fh:
            np.savez(fh, keys=np.array(keys, dtype="U64"), vectors=matrix, model=np.array(self.model))

    def load(self, path: str | Path) -> None:
        with np.load(path, allow_pickle=False) as data:
            if str(data["model"]) != self.model:
                log.warning("embedding cache %s was built for %s, not %s; ignoring", path, data["model"], self.model)
                return
            for k, row in zip(data["keys"], data["vectors"]):
                emb = Embedding(row)
                self._cache[str(k)] = emb
                self._dim = emb.dim


def subtraj_similarity(
    a: SubtrajRef, b: SubtrajRef, store: TrajectoryStore, embedder: CachedEmbedder
) -> tuple[float, float]:
    """Positional mean cosine over the L+1 states and the L actions."""
    if a.length != b.length:
        raise ValueError(f"length mismatch: {a.length} vs {b.length}")
    sa = embedder.embed_many(store.subtraj_states(a))
    sb = embedder.embed_many(store.subtraj_states(b))
    aa = embedder.embed_many(store.subtraj_actions(a))
    ab = embedder.embed_many(store.subtraj_actions(b))
    state_sim = sum(cosine(x, y) for x, y in zip(sa, sb)) / len(sa)
    action_sim = sum(cosine(x, y) for x, y in zip(aa, ab)) / len(aa)
    return state_sim, action_sim


def combined_similarity(state_sim: float, action_sim: float, match_on: str = "combined") -> float:
    if match_on == "state":
        return state_sim
    if match_on == "action":
        return action_sim
    return (state_sim + action_sim) / 2
