import numpy as np
import pytest

from ten_dst.corpus import Vocab, build_vocab
from ten_dst.model import ModelConfig, ModelParams
from ten_dst.state import Dialogue, Ontology, Turn, fold_turn_labels

TINY = ModelConfig(emb_dim=4, gae_hidden=3, hist_hidden=5)
# wider init so every gradient is well above finite-difference roundoff
GRAD_CHECK = ModelConfig(emb_dim=4, gae_hidden=3, hist_hidden=5, init_range=0.5, emb_init_std=0.5)


@pytest.fixture
def onto():
    return Ontology({"food": ["italian", "chinese", "dontcare"], "area": ["north", "south"]})


def make_dialogue(ontology, turns, did="toy"):
    """``turns``: list of (action phrases, utterance, turn-label dict)."""
    labels = [ontology.state(y) for _, _, y in turns]
    states = fold_turn_labels(labels)
    return Dialogue(did, tuple(
        Turn(action=tuple(tuple(p.split()) for p in a), utterance=tuple(u.split()), state=x, turn_label=y)
        for (a, u, _), x, y in zip(turns, states, labels)))


@pytest.fixture
def toy_dialogue(onto):
    return make_dialogue(onto, [
        (["welcome"], "i want italian food", {"food": "italian"}),
        (["inform food italian", "request area"], "north please", {"area": "north"}),
    ])


@pytest.fixture
def toy_params(onto, toy_dialogue):
    return ModelParams.init(onto, build_vocab([toy_dialogue]), TINY, seed=3)


@pytest.fixture
def grad_params(onto, toy_dialogue):
    return ModelParams.init(onto, build_vocab([toy_dialogue]), GRAD_CHECK, seed=3)


def numeric_grad(f, value: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. the array ``value`` (mutated in place)."""
    g = np.zeros_like(value)
    it = np.nditer(value, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = value[i]
        value[i] = old + eps
        hi = f()
        value[i] = old - eps
        lo = f()
        value[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom < 1e-12 else float(np.linalg.norm(a - b) / denom)


def empty_vocab():
    return Vocab([])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
