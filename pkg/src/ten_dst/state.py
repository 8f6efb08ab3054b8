"""Ontology, slot-value states and the deterministic aggregation calculus.

A state assigns every slot one value from that slot's value set extended with
``unknown`` (always index 0). Aggregation ``x ◁ y`` keeps ``x(s)`` where
``y(s)`` is ``unknown`` and takes ``y(s)`` otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

UNKNOWN = "unknown"
ONTOLOGY_FORMAT = "ten-dst-ontology"
ONTOLOGY_VERSION = 1


class OntologyError(ValueError):
    """Slot or value not in the ontology, or a malformed ontology."""


class Ontology:
    """Ordered slots, each with an ordered value list; ``unknown`` is added at index 0."""

    def __init__(self, slot_values: Mapping[str, Sequence[str]]):
        slots = tuple(slot_values)
        if len(set(slots)) != len(slots):
            raise OntologyError("duplicate slot names")
        star = []
        for s in slots:
            vals = tuple(slot_values[s])
            if UNKNOWN in vals:
                raise OntologyError(f"slot {s!r}: {UNKNOWN!r} is implicit and must not be listed")
            if len(set(vals)) != len(vals):
                raise OntologyError(f"slot {s!r}: duplicate values")
            star.append((UNKNOWN,) + vals)
        self.slots = slots
        self._values = tuple(star)
        self._index = {
            s: (i, {v: j for j, v in enumerate(vs)}) for i, (s, vs) in enumerate(zip(slots, star))
        }

    def __repr__(self):
        return f"Ontology({ {s: list(self.values(s)) for s in self.slots} })"

    def __hash__(self):
        return hash((self.slots, self._values))

    def __eq__(self, other):
        return isinstance(other, Ontology) and (self.slots, self._values) == (other.slots, other._values)

    def slot_index(self, slot: str) -> int:
        try:
            return self._index[slot][0]
        except KeyError:
            raise OntologyError(f"unknown slot {slot!r}") from None

    def star_values(self, slot: str) -> tuple[str, ...]:
        """Value set including ``unknown`` at index 0."""
        return self._values[self.slot_index(slot)]

    def values(self, slot: str) -> tuple[str, ...]:
        return self.star_values(slot)[1:]

    def size(self, slot: str) -> int:
        return len(self.star_values(slot))

    def value_index(self, slot: str, value: str) -> int:
        self.slot_index(slot)
        try:
            return self._index[slot][1][value]
        except KeyError:
            raise OntologyError(f"value {value!r} not in slot {slot!r}") from None

    def value_name(self, slot: str, index: int) -> str:
        vals = self.star_values(slot)
        if not 0 <= index < len(vals):
            raise OntologyError(f"value index {index} out of range for slot {slot!r}")
        return vals[index]

    def unknown_state(self) -> "StateConfig":
        return StateConfig(self, (0,) * len(self.slots))

    def state(self, assignment: Mapping[str, str] | None = None) -> "StateConfig":
        """Build a state; slots absent from ``assignment`` are ``unknown``."""
        assignment = dict(assignment or {})
        for s in assignment:
            self.slot_index(s)
        return StateConfig(self, tuple(
            self.value_index(s, assignment.get(s, UNKNOWN)) for s in self.slots))

    def to_json(self) -> dict:
        return {
            "format": ONTOLOGY_FORMAT,
            "version": ONTOLOGY_VERSION,
            "slots": [{"name": s, "values": list(self.values(s))} for s in self.slots],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Ontology":
        if obj.get("format") != ONTOLOGY_FORMAT:
            raise OntologyError(f"not an ontology document (format={obj.get('format')!r})")
        if obj.get("version") != ONTOLOGY_VERSION:
            raise OntologyError(f"unsupported ontology version {obj.get('version')!r}")
        return cls({rec["name"]: rec["values"] for rec in obj["slots"]})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Ontology":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StateConfig:
    """Total slot -> value assignment, stored as value indices."""

    ontology: Ontology = field(repr=False)
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.ontology.slots):
            raise OntologyError("state does not cover every slot")
        for s, i in zip(self.ontology.slots, self.indices):
            self.ontology.value_name(s, i)

    def __getitem__(self, slot: str) -> str:
        return self.ontology.value_name(slot, self.indices[self.ontology.slot_index(slot)])

    def index(self, slot: str) -> int:
        return self.indices[self.ontology.slot_index(slot)]

    def as_dict(self, include_unknown: bool = True) -> dict[str, str]:
        d = {s: self[s] for s in self.ontology.slots}
        if not include_unknown:
            d = {s: v for s, v in d.items() if v != UNKNOWN}
        return d

    def is_unknown(self) -> bool:
        return not any(self.indices)

    def __repr__(self):
        return f"StateConfig({self.as_dict()})"


def aggregate_value(v: str, v_new: str, slot: str, ontology: Ontology) -> str:
    ontology.value_index(slot, v)
    ontology.value_index(slot, v_new)
    return v if v_new == UNKNOWN else v_new


def aggregate_state(x: StateConfig, y: StateConfig) -> StateConfig:
    if x.ontology != y.ontology:
        raise OntologyError("aggregate_state: states over different ontologies")
    return StateConfig(x.ontology, tuple(a if b == 0 else b for a, b in zip(x.indices, y.indices)))


def indicator_g(v_prev: str, v_turn: str, v: str, slot: str, ontology: Ontology) -> int:
    """1 iff ``v_prev ◁ v_turn == v``."""
    ontology.value_index(slot, v)
    return int(aggregate_value(v_prev, v_turn, slot, ontology) == v)


def fold_turn_labels(labels: Sequence[StateConfig]) -> list[StateConfig]:
    """States obtained by aggregating turn labels from the all-unknown start."""
    if not labels:
        return []
    x = labels[0].ontology.unknown_state()
    out = []
    for y in labels:
        x = aggregate_state(x, y)
        out.append(x)
    return out


def derive_turn_labels(states: Sequence[StateConfig]) -> list[StateConfig]:
    """Minimal-change turn labels: a slot is labeled only when its value changes."""
    if not states:
        raise ValueError("derive_turn_labels: empty state sequence")
    onto = states[0].ontology
    prev = onto.unknown_state()
    out = []
    for x in states:
        if x.ontology != onto:
            raise OntologyError("derive_turn_labels: mixed ontologies")
        out.append(StateConfig(onto, tuple(
            b if b != a else 0 for a, b in zip(prev.indices, x.indices))))
        prev = x
    return out


Tokens = tuple[str, ...]


@dataclass(frozen=True)
class Turn:
    action: tuple[Tokens, ...]
    utterance: Tokens
    state: StateConfig
    turn_label: StateConfig | None = None
    label_derived: bool = False
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]

    def __len__(self):
        return len(self.turns)

    @property
    def states(self) -> list[StateConfig]:
        return [t.state for t in self.turns]

    @property
    def turn_labels(self) -> list[StateConfig]:
        if any(t.turn_label is None for t in self.turns):
            raise ValueError(f"dialogue {self.id!r} lacks turn labels")
        return [t.turn_label for t in self.turns]

    def check_consistent(self) -> None:
        """Raise if some turn violates ``x_t = x_{t-1} ◁ y_t``."""
        if not self.turns or any(t.turn_label is None for t in self.turns):
            return
        prev = self.turns[0].state.ontology.unknown_state()
        for i, t in enumerate(self.turns):
            if aggregate_state(prev, t.turn_label) != t.state:
                raise InconsistentDialogue(self.id, i)
            prev = t.state


class InconsistentDialogue(ValueError):
    def __init__(self, dialogue_id: str, turn_index: int):
        super().__init__(
            f"dialogue {dialogue_id!r}: turn {turn_index} state is not the previous "
            f"state aggregated with its turn label")
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index


def tokenize(text: str | Iterable[str]) -> Tokens:
    if isinstance(text, str):
        return tuple(text.lower().split())
    return tuple(str(t).lower() for t in text)
