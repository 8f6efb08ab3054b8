"""Corpus files, vocabulary and the synthetic dialogue generator.

File format (JSON lines, UTF-8). Line 1 is a header::

    {"format": "ten-dst-corpus", "version": 1, "ontology": "ontology.json"}

every further line is one dialogue::

    {"id": "d0001", "turns": [{"action": [["request", "food"]],
                               "utterance": ["i", "want", "thai", "food"],
                               "state": {"food": "thai"},
                               "turn_label": {"food": "thai"},
                               "flags": []}, ...]}

Slots missing from ``state``/``turn_label`` are ``unknown``. ``turn_label``
and ``flags`` are optional; missing labels are derived with the
minimal-change convention and marked as derived.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .state import (
    UNKNOWN,
    Dialogue,
    InconsistentDialogue,
    Ontology,
    OntologyError,
    StateConfig,
    Turn,
    aggregate_state,
    derive_turn_labels,
    tokenize,
)

log = logging.getLogger(__name__)

CORPUS_FORMAT = "ten-dst-corpus"
CORPUS_VERSION = 1
OOV = "<oov>"

DEFAULT_SLOTS = {
    "food": ["italian", "chinese", "indian", "french", "thai", "dontcare"],
    "area": ["north", "south", "east", "west", "dontcare"],
    "pricerange": ["cheap", "moderate", "expensive", "dontcare"],
}

# flags attached to generated turns
FLAG_HEDGE = "hedge"
FLAG_CONFIRM = "confirm"
FLAG_HISTORY = "history_required"
FLAG_NOISE = "noise"

DONTCARE = "dontcare"


class CorpusError(ValueError):
    pass


def default_ontology() -> Ontology:
    return Ontology(DEFAULT_SLOTS)


# ---------------------------------------------------------------- file I/O

def _state_from_json(obj, ontology: Ontology, where: str) -> StateConfig:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: state must be an object")
    try:
        return ontology.state(obj)
    except OntologyError as e:
        raise CorpusError(f"{where}: {e}") from None


def dialogue_from_json(obj: dict, ontology: Ontology, where: str = "record") -> Dialogue:
    try:
        did = str(obj["id"])
        raw_turns = obj["turns"]
    except (KeyError, TypeError):
        raise CorpusError(f"{where}: dialogue needs 'id' and 'turns'") from None
    states, labels, parts = [], [], []
    for i, t in enumerate(raw_turns):
        tw = f"{where}, dialogue {did!r}, turn {i}"
        try:
            action = tuple(tokenize(p) for p in t.get("action", []))
            utterance = tokenize(t["utterance"])
        except (KeyError, TypeError, AttributeError):
            raise CorpusError(f"{tw}: turn needs 'utterance' and optional 'action'") from None
        if any(len(p) == 0 for p in action):
            raise CorpusError(f"{tw}: empty action phrase")
        states.append(_state_from_json(t.get("state", {}), ontology, tw))
        labels.append(_state_from_json(t["turn_label"], ontology, tw) if "turn_label" in t else None)
        parts.append((action, utterance, tuple(t.get("flags", ()))))
    derived = [False] * len(states)
    if states and any(y is None for y in labels):
        fill = derive_turn_labels(states)
        for i, y in enumerate(labels):
            if y is None:
                labels[i] = fill[i]
                derived[i] = True
    turns = tuple(
        Turn(action=a, utterance=u, state=x, turn_label=y, label_derived=d, flags=f)
        for (a, u, f), x, y, d in zip(parts, states, labels, derived)
    )
    dlg = Dialogue(did, turns)
    try:
        dlg.check_consistent()
    except InconsistentDialogue as e:
        raise CorpusError(f"{where}: {e}") from None
    return dlg


def dialogue_to_json(d: Dialogue, with_gold: bool = True) -> dict:
    turns = []
    for t in d.turns:
        rec = {"action": [list(p) for p in t.action], "utterance": list(t.utterance),
               "state": t.state.as_dict(include_unknown=False)}
        if with_gold and t.turn_label is not None and not t.label_derived:
            rec["turn_label"] = t.turn_label.as_dict(include_unknown=False)
        if with_gold and t.flags:
            rec["flags"] = list(t.flags)
        turns.append(rec)
    return {"id": d.id, "turns": turns}


def load_corpus(path, ontology: Ontology | None = None) -> list[Dialogue]:
    """Read and validate a corpus file.

    Without ``ontology`` the header's ontology reference is resolved relative
    to the corpus file.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty file (missing header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}:1: bad header: {e}") from None
    if header.get("format") != CORPUS_FORMAT:
        raise CorpusError(f"{path}:1: not a corpus file (format={header.get('format')!r})")
    if header.get("version") != CORPUS_VERSION:
        raise CorpusError(f"{path}:1: unsupported corpus version {header.get('version')!r}")
    if ontology is None:
        ref = header.get("ontology")
        if not ref:
            raise CorpusError(f"{path}:1: header names no ontology and none was given")
        ontology = Ontology.load(path.parent / ref)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from None
        out.append(dialogue_from_json(obj, ontology, where=f"{path}:{lineno}"))
    return out


def save_corpus(path, dialogues: Iterable[Dialogue], ontology_ref: str = "ontology.json",
                with_gold: bool = True, **header_extra) -> None:
    header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "ontology": ontology_ref}
    header.update(header_extra)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_json(d, with_gold)) + "\n")


def split_corpus(dialogues: Sequence[Dialogue], seed: int,
                 fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)):
    """Seeded train/validation/test split by dialogue."""
    n = len(dialogues)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    pick = lambda idx: [dialogues[i] for i in sorted(idx)]
    return (pick(order[:n_train]), pick(order[n_train:n_train + n_valid]),
            pick(order[n_train + n_valid:]))


# ---------------------------------------------------------------- vocabulary

class Vocab:
    """Sorted token list with the out-of-vocabulary token at index 0."""

    def __init__(self, tokens: Iterable[str]):
        toks = sorted(set(tokens) - {OOV})
        self.tokens = [OOV] + toks
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index.get(t, 0) for t in tokens], dtype=np.intp)


def build_vocab(dialogues: Sequence[Dialogue]) -> Vocab:
    if not dialogues:
        raise CorpusError("build_vocab: empty corpus")
    tokens = set()
    for d in dialogues:
        for t in d.turns:
            tokens.update(t.utterance)
            for p in t.action:
                tokens.update(p)
    return Vocab(tokens)


# ---------------------------------------------------------------- generator

@dataclass
class SynthConfig:
    seed: int = 0
    n_dialogues: int = 500
    slots: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SLOTS.items()})
    min_turns: int = 3
    max_turns: int = 7
    p_inform: float = 0.65
    p_confirm: float = 0.2
    p_noise: float = 0.0
    p_silent: float = 0.15

    def validate(self) -> None:
        for name in ("p_inform", "p_confirm", "p_noise", "p_silent"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if not 1 <= self.min_turns <= self.max_turns:
            raise ValueError(f"need 1 <= min_turns <= max_turns, got {self.min_turns}, {self.max_turns}")
        if self.n_dialogues < 0:
            raise ValueError("n_dialogues must be >= 0")
        for s, vals in self.slots.items():
            if not [v for v in vals if v != DONTCARE]:
                raise ValueError(f"slot {s!r} has no real values")

    @property
    def ontology(self) -> Ontology:
        return Ontology(self.slots)


_INFORM = [["i", "want", "{v}", "{s}"], ["{v}", "{s}", "please"],
           ["how", "about", "{v}"], ["i", "am", "looking", "for", "{v}"]]
_DONTCARE = [["i", "dontcare", "about", "the", "{s}"], ["{s}", "dontcare"]]
_HEDGE = [["maybe", "{v}", "i", "am", "not", "sure"], ["not", "sure", "perhaps", "{v}", "{s}"]]
_YES = [["yes"], ["yea"], ["right"], ["yes", "please"]]
_NO = [["no"], ["no", "thanks"]]
_SILENT = [["thank", "you"], ["hello"], ["okay"], ["what", "else", "do", "you", "have"]]
_VAGUE = [["restaurant", "and", "it", "should", "be"], ["hmm", "let", "me", "think"]]
_NOISE = ["um", "uh", "well", "so", "okay"]


def _fill(template, s, v):
    out = []
    for tok in template:
        out.extend(tok.replace("{s}", s).replace("{v}", v).split())
    return tuple(out)


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.onto = cfg.ontology
        self.rng = np.random.default_rng(cfg.seed)

    def choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def pick_value(self, slot, current):
        real = [v for v in self.onto.values(slot) if v != DONTCARE and v != current]
        if DONTCARE in self.onto.values(slot) and current != DONTCARE and self.rng.random() < 0.1:
            return DONTCARE
        return self.choice(real)

    def system_action(self, t, prev_label, x_prev):
        if t == 0:
            return (("welcome",),)
        phrases = []
        for s in self.onto.slots:
            if prev_label is not None and prev_label[s] != UNKNOWN:
                phrases.append(("inform", s, prev_label[s]))
        unfilled = [s for s in self.onto.slots if x_prev[s] == UNKNOWN]
        if unfilled:
            phrases.append(("request", self.choice(unfilled)))
        else:
            phrases.append(("offer", "restaurant"))
        return tuple(phrases)

    def inform_utterance(self, slot, value, requested):
        if value == DONTCARE:
            if requested == slot and self.rng.random() < 0.5:
                return ("dontcare",)
            return _fill(self.choice(_DONTCARE), slot, value)
        if requested == slot and self.rng.random() < 0.3:
            return tuple(value.split())
        return _fill(self.choice(_INFORM), slot, value)

    def noisy(self, utt):
        if self.cfg.p_noise > 0 and self.rng.random() < self.cfg.p_noise:
            utt = list(utt)
            for _ in range(int(self.rng.integers(1, 3))):
                utt.insert(int(self.rng.integers(len(utt) + 1)), self.choice(_NOISE))
            return tuple(utt), True
        return utt, False

    def dialogue(self, did):
        cfg, onto = self.cfg, self.onto
        n_turns = int(self.rng.integers(cfg.min_turns, cfg.max_turns + 1))
        weights = np.array([cfg.p_inform, cfg.p_confirm, cfg.p_silent])
        weights = weights / weights.sum() if weights.sum() > 0 else np.array([1.0, 0.0, 0.0])
        x = onto.unknown_state()
        prev_label = None
        pending = None  # (kind, slot, value) awaiting the system's confirmation
        turns = []
        for t in range(n_turns):
            flags = []
            label = {}
            if pending is not None:
                kind, slot, value = pending
                pending = None
                if kind == "hedge":
                    action = (("confirm", slot),)
                    flags += [FLAG_CONFIRM, FLAG_HISTORY]
                else:
                    action = (("any", slot, "right"),)
                    flags.append(FLAG_CONFIRM)
                if self.rng.random() < 0.8:
                    utt = self.choice(_YES)
                    label[slot] = value
                else:
                    utt = self.choice(_NO)
            else:
                action = self.system_action(t, prev_label, x)
                requested = next((p[1] for p in action if p[0] == "request"), None)
                behaviour = self.rng.choice(3, p=weights)
                if behaviour == 1 and t < n_turns - 1:
                    slot = requested if requested and self.rng.random() < 0.5 else self.choice(onto.slots)
                    if DONTCARE in onto.values(slot) and x[slot] != DONTCARE and self.rng.random() < 0.35:
                        # the next system turn asks whether any value is fine
                        pending = ("dontcare", slot, DONTCARE)
                        utt = self.choice(_VAGUE)
                    else:
                        value = self.choice([v for v in onto.values(slot) if v not in (DONTCARE, x[slot])])
                        pending = ("hedge", slot, value)
                        utt = _fill(self.choice(_HEDGE), slot, value)
                        flags.append(FLAG_HEDGE)
                elif behaviour == 2:
                    utt = self.choice(_SILENT)
                else:
                    slot = requested if requested and self.rng.random() < 0.7 else self.choice(onto.slots)
                    label[slot] = self.pick_value(slot, x[slot])
                    utt = self.inform_utterance(slot, label[slot], requested)
                    others = [s for s in onto.slots if s != slot]
                    if self.rng.random() < 0.25:
                        s2 = self.choice(others)
                        label[s2] = self.pick_value(s2, x[s2])
                        utt = utt + ("and",) + self.inform_utterance(s2, label[s2], None)
            utt, noised = self.noisy(tuple(utt))
            if noised:
                flags.append(FLAG_NOISE)
            y = onto.state(label)
            x = aggregate_state(x, y)
            turns.append(Turn(action=tuple(action), utterance=utt, state=x, turn_label=y,
                              flags=tuple(flags)))
            prev_label = y
        return Dialogue(did, tuple(turns))


def generate_synthetic(cfg: SynthConfig) -> list[Dialogue]:
    """Seeded template dialogues; deterministic given ``cfg``."""
    cfg.validate()
    gen = _Generator(cfg)
    width = max(4, len(str(cfg.n_dialogues)))
    return [gen.dialogue(f"d{i:0{width}d}") for i in range(cfg.n_dialogues)]
