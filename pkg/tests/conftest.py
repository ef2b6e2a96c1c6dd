from pathlib import Path

import pytest
from hypothesis import settings

from sso.embedding import CachedEmbedder, TrigramEmbedder

GOLDEN = Path(__file__).parent / "golden"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def embedder():
    return CachedEmbedder(TrigramEmbedder())


@pytest.fixture
def golden():
    def read(name: str) -> str:
        return (GOLDEN / name).read_text(encoding="utf-8")

    return read
