"""Sum-product aggregation of turn-level distributions on the per-slot chain.

For one slot the factor graph is a chain ``x_0 - g - x_1 - g - ...`` where
each factor ``g(x_{t-1}, y_t, x_t)`` is the 0/1 graph of ``◁`` and ``y_t``
carries the turn-level distribution ``alpha_t``. Messages:

* ``beta_t  = alpha_t``                       (turn label into the factor)
* ``gamma_t = mu_{t-1}``                      (previous state into the factor)
* ``mu_t(v) = sum_{v', v''} g(v', v'', v) gamma_t(v') beta_t(v'')``

Because ``g`` is a function graph the double sum collapses to
``mu(unknown) = gamma(unknown) beta(unknown)`` and
``mu(v) = beta(v) + gamma(v) beta(unknown)`` otherwise; :func:`bp_step`
uses that form, :func:`bp_step_double_sum` and :func:`brute_force_marginal`
are the slow references it is checked against.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .state import Ontology, StateConfig, aggregate_state

NORMALIZED_ATOL = 1e-9
RENORMALIZE_ATOL = 1e-6
BRUTE_FORCE_LIMIT = 10 ** 7


class DistributionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Probability vector over one slot's values (index 0 is ``unknown``)."""

    probs: np.ndarray
    slot: str

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise DistributionError(f"slot {self.slot!r}: expected a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DistributionError(f"slot {self.slot!r}: negative or non-finite probability")
        total = p.sum()
        if abs(total - 1.0) > RENORMALIZE_ATOL:
            raise DistributionError(f"slot {self.slot!r}: probabilities sum to {total!r}")
        if abs(total - 1.0) > NORMALIZED_ATOL:
            p /= total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    def top(self, k: int, ontology: Ontology) -> list[tuple[str, float]]:
        order = np.argsort(-self.probs, kind="stable")[:k]
        return [(ontology.value_name(self.slot, int(i)), float(self.probs[i])) for i in order]


def bp_init(slot: str, ontology: Ontology) -> DiscreteDist:
    """Point mass on ``unknown``: the state before the first turn."""
    p = np.zeros(ontology.size(slot))
    p[0] = 1.0
    return DiscreteDist(p, slot)


def _check_pair(gamma: DiscreteDist, beta: DiscreteDist) -> None:
    if gamma.slot != beta.slot:
        raise DistributionError(f"slot mismatch: {gamma.slot!r} vs {beta.slot!r}")
    if len(gamma) != len(beta):
        raise DistributionError(f"slot {gamma.slot!r}: size mismatch {len(gamma)} vs {len(beta)}")


def bp_message(gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Closed-form outgoing message on raw probability vectors."""
    mu = gamma * beta[0]
    mu[1:] += beta[1:]
    return mu


def bp_step(gamma: DiscreteDist, beta: DiscreteDist) -> DiscreteDist:
    """Outgoing state message given the incoming state and turn messages."""
    _check_pair(gamma, beta)
    return DiscreteDist(bp_message(gamma.probs, beta.probs), gamma.slot)


def bp_step_double_sum(gamma: DiscreteDist, beta: DiscreteDist) -> DiscreteDist:
    """Literal double sum over the indicator factor; O(V^2) reference."""
    _check_pair(gamma, beta)
    V = len(gamma)
    unknown = 0
    mu = np.zeros(V)
    for v in range(V):
        for v1 in range(V):
            for v2 in range(V):
                agg = v1 if v2 == unknown else v2
                if agg == v:
                    mu[v] += gamma.probs[v1] * beta.probs[v2]
    return DiscreteDist(mu, gamma.slot)


def run_chain(alphas: Sequence[DiscreteDist], slot: str) -> list[DiscreteDist]:
    """State marginals ``Q_1 .. Q_T`` for one slot."""
    if not alphas:
        return []
    for a in alphas:
        if a.slot != slot:
            raise DistributionError(f"slot mismatch: {a.slot!r} vs {slot!r}")
        if len(a) != len(alphas[0]):
            raise DistributionError(f"slot {slot!r}: turn distributions differ in size")
    Q = kernels.bp_chain_forward(np.ascontiguousarray(np.stack([a.probs for a in alphas])))
    return [DiscreteDist(q, slot) for q in Q]


def brute_force_marginal(alphas: Sequence[DiscreteDist], slot: str, t: int) -> DiscreteDist:
    """Exact marginal of ``x_t`` by enumerating every label and state path.

    Sums ``prod_tau alpha_tau(y_tau) * g(x_{tau-1}, y_tau, x_tau)`` over all
    ``y_1..y_t`` and ``x_1..x_{t-1}`` with ``x_0 = unknown``.
    """
    if not 1 <= t <= len(alphas):
        raise ValueError(f"turn index {t} outside 1..{len(alphas)}")
    probs = [np.asarray(a.probs) for a in alphas[:t]]
    V = probs[0].size
    if V ** (2 * t) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force over {V}^{2 * t} terms exceeds {BRUTE_FORCE_LIMIT}")
    out = np.zeros(V)
    for labels in itertools.product(range(V), repeat=t):
        weight = 1.0
        for tau, y in enumerate(labels):
            weight *= probs[tau][y]
        if weight == 0.0:
            continue
        for mids in itertools.product(range(V), repeat=t - 1):
            for x_t in range(V):
                path = (0,) + mids + (x_t,)
                if all(path[i + 1] == (path[i] if labels[i] == 0 else labels[i])
                       for i in range(t)):
                    out[x_t] += weight
    return DiscreteDist(out, slot)


def aggregate_hard(x_prev: StateConfig, alphas: Mapping[str, DiscreteDist]) -> StateConfig:
    """Per-slot argmax (lowest index wins ties) folded into ``x_prev`` with ◁."""
    onto = x_prev.ontology
    y = StateConfig(onto, tuple(alphas[s].argmax() for s in onto.slots))
    return aggregate_state(x_prev, y)


@dataclass
class MessageRecord:
    turn: int
    slot: str
    beta: DiscreteDist | None
    gamma: DiscreteDist | None
    mu: DiscreteDist


@dataclass
class MessageTrace:
    dialogue_id: str
    records: list[MessageRecord] = field(default_factory=list)

    def marginal(self, turn: int, slot: str) -> DiscreteDist:
        for r in self.records:
            if r.turn == turn and r.slot == slot:
                return r.mu
        raise KeyError((turn, slot))

    def dump(self, ontology: Ontology, top_k: int = 3) -> str:
        """Tab-separated dump: turn, slot, message, then top-k ``value=prob``."""
        lines = ["turn\tslot\tmessage\ttop"]
        for r in self.records:
            for label, dist in (("beta", r.beta), ("gamma", r.gamma), ("mu", r.mu)):
                if dist is None:
                    continue
                top = " ".join(f"{v}={p:.4f}" for v, p in dist.top(top_k, ontology))
                lines.append(f"{r.turn}\t{r.slot}\t{label}\t{top}")
        return "\n".join(lines) + "\n"


def trace_chain(dialogue_id: str, alphas: Mapping[str, Sequence[DiscreteDist]],
                ontology: Ontology) -> MessageTrace:
    """Run every slot's chain, recording all messages; turn 0 holds ``mu_0``."""
    trace = MessageTrace(dialogue_id)
    for slot in ontology.slots:
        mu = bp_init(slot, ontology)
        trace.records.append(MessageRecord(0, slot, None, None, mu))
        for t, alpha in enumerate(alphas[slot], start=1):
            gamma = mu
            mu = bp_step(gamma, alpha)
            trace.records.append(MessageRecord(t, slot, alpha, gamma, mu))
    trace.records.sort(key=lambda r: (r.turn, ontology.slot_index(r.slot)))
    return trace
