import numpy as np
import pytest

from kbctransfer.data import add_reciprocals, build_store


@pytest.fixture
def tiny_store():
    train = [
        ("barack obama", "born in", "honolulu"),
        ("barack obama", "lived in", "chicago"),
        ("michelle obama", "lived in", "chicago"),
        ("michelle obama", "married to", "barack obama"),
        ("honolulu", "located in", "hawaii"),
        ("chicago", "located in", "illinois"),
    ]
    valid = [("barack obama", "lived in", "honolulu")]
    test = [("michelle obama", "born in", "chicago")]
    return add_reciprocals(build_store(train, valid, test))


def random_store(rng, n_entities=12, n_relations=3, n_triples=40, valid=6, test=6):
    """Random store over two-word names; split sizes are upper bounds after dedup."""
    words = [f"w{i}" for i in range(10)]
    ents = [f"{words[i % 10]} e{i}" for i in range(n_entities)]
    rels = [f"{words[(i * 3) % 10]} r{i}" for i in range(n_relations)]
    rows = {(int(rng.integers(n_entities)), int(rng.integers(n_relations)), int(rng.integers(n_entities)))
            for _ in range(n_triples + valid + test)}
    rows = sorted(rows)
    rng.shuffle(rows)
    named = [(ents[h], rels[r], ents[t]) for h, r, t in rows]
    n_tr = max(1, len(named) - valid - test)
    return add_reciprocals(build_store(named[:n_tr], named[n_tr:n_tr + valid], named[n_tr + valid:]))


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    """Remember one acceptance outcome for the end-of-run summary."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
