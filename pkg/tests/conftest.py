from __future__ import annotations

import pytest

from occuprobe.demography import default_registry
from occuprobe.extract import Lexicon, load_lexicon


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon()


@pytest.fixture
def tiny_lexicon():
    """Small controlled gazetteer for synthetic corpora."""
    titles = {
        "nurse", "nurse practitioner", "teacher", "plumber", "maid",
        "waitress", "waiter", "salesman", "salesperson",
        "assistant professor", "professor", "security guard", "cook",
        "clerk", "monk", "nun",
    }
    return Lexicon(
        titles=titles,
        merge_map={"nurse practitioner": "nurse"},
        protected={
            "waitress", "waiter", "salesman", "salesperson",
            "assistant professor", "professor",
        },
    )
