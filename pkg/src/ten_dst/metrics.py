"""Joint goal accuracy, turn-level accuracy and per-turn accuracy curves.

All metrics compare hard predictions only. Inputs are nested: one sequence of
states (or turn labels) per dialogue, aligned with the gold sequences.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

from .state import StateConfig

Nested = Sequence[Sequence[StateConfig]]


def _aligned(pred: Nested, gold: Nested):
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted dialogues vs {len(gold)} gold")
    for i, (p, g) in enumerate(zip(pred, gold)):
        if len(p) != len(g):
            raise ValueError(f"dialogue {i}: {len(p)} predicted turns vs {len(g)} gold")
        yield from zip(p, g)


def joint_goal_accuracy(pred_states: Nested, gold_states: Nested) -> float:
    pairs = list(_aligned(pred_states, gold_states))
    if not pairs:
        raise ValueError("joint_goal_accuracy: no turns")
    return sum(p.indices == g.indices for p, g in pairs) / len(pairs)


def turn_level_accuracy(pred_labels: Nested, gold_labels: Nested) -> tuple[dict[str, float], float]:
    """Per-slot match rates and the all-slots-simultaneously rate."""
    pairs = list(_aligned(pred_labels, gold_labels))
    if not pairs:
        raise ValueError("turn_level_accuracy: no turns")
    slots = pairs[0][1].ontology.slots
    per_slot = {s: sum(p.indices[i] == g.indices[i] for p, g in pairs) / len(pairs)
                for i, s in enumerate(slots)}
    all_rate = sum(p.indices == g.indices for p, g in pairs) / len(pairs)
    return per_slot, all_rate


def per_turn_curve(pred_states: Nested, gold_states: Nested) -> dict[int, tuple[float, int]]:
    """Joint accuracy by 1-based turn index -> (fraction, number of turns).

    Only turn indices that occur in some dialogue are present.
    """
    hits: dict[int, int] = {}
    counts: dict[int, int] = {}
    _ = list(_aligned(pred_states, gold_states))
    for p_seq, g_seq in zip(pred_states, gold_states):
        for t, (p, g) in enumerate(zip(p_seq, g_seq), start=1):
            counts[t] = counts.get(t, 0) + 1
            hits[t] = hits.get(t, 0) + (p.indices == g.indices)
    return {t: (hits[t] / counts[t], counts[t]) for t in sorted(counts)}


def curve_csv(curve: dict[int, tuple[float, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["turn", "joint_goal_accuracy", "count"])
    for t, (acc, n) in curve.items():
        w.writerow([t, repr(acc), n])
    return buf.getvalue()


@dataclass
class EvalReport:
    joint_goal_accuracy: float
    per_turn_joint: dict[int, tuple[float, int]]
    n_dialogues: int
    n_turns: int
    per_slot_turn_level: dict[str, float] | None = None
    all_slots_turn_level: float | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, float, int]]:
        """(metric, key, value, count) cells."""
        out = [("joint_goal_accuracy", "all", self.joint_goal_accuracy, self.n_turns)]
        if self.per_slot_turn_level is not None:
            for s, v in self.per_slot_turn_level.items():
                out.append(("turn_level_accuracy", s, v, self.n_turns))
            out.append(("turn_level_accuracy", "all", self.all_slots_turn_level, self.n_turns))
        for t, (v, n) in self.per_turn_joint.items():
            out.append(("per_turn_joint", str(t), v, n))
        for k, v in self.extra.items():
            out.append((k, "all", v, self.n_turns))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "key", "value", "count"])
        for m, k, v, n in self.rows():
            w.writerow([m, k, repr(float(v)), n])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"dialogues: {self.n_dialogues}   turns: {self.n_turns}",
                 f"joint goal accuracy       {self.joint_goal_accuracy:.4f}"]
        if self.per_slot_turn_level is not None:
            for s, v in self.per_slot_turn_level.items():
                lines.append(f"turn-level accuracy {s:<10} {v:.4f}")
            lines.append(f"turn-level accuracy {'all':<10} {self.all_slots_turn_level:.4f}")
        for k, v in self.extra.items():
            lines.append(f"{k:<25} {v:.4f}")
        lines.append("per-turn joint goal accuracy:")
        for t, (v, n) in self.per_turn_joint.items():
            lines.append(f"  turn {t:>3}  {v:.4f}  (n={n})")
        return "\n".join(lines)


def evaluate(pred_states: Nested, gold_states: Nested,
             pred_labels: Nested | None = None, gold_labels: Nested | None = None) -> EvalReport:
    jga = joint_goal_accuracy(pred_states, gold_states)
    report = EvalReport(
        joint_goal_accuracy=jga,
        per_turn_joint=per_turn_curve(pred_states, gold_states),
        n_dialogues=len(gold_states),
        n_turns=sum(len(g) for g in gold_states),
    )
    if pred_labels is not None and gold_labels is not None:
        report.per_slot_turn_level, report.all_slots_turn_level = turn_level_accuracy(
            pred_labels, gold_labels)
    return report
