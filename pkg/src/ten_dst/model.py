"""Neural encoders and classifier heads.

Per turn ``t`` and slot ``s``:

* utterance tokens -> bidirectional GRU states -> attention with ``theta_s``
  gives ``u_t(s)``;
* each system-action phrase -> bidirectional GRU states -> attention with
  ``phi_s`` gives ``c_t^i(s)``; the phrases are pooled with weights
  ``softmax_i(u_t(s) . c_t^i(s))`` into ``a_t(s)`` (zero when there are none);
* ``z_t(s) = [u_t(s); a_t(s)]``;
* a GRU shared across slots runs over ``z_1(s) .. z_T(s)`` giving ``h_t(s)``.

Heads (all ``softmax(features @ W_s)`` without bias):

========== ========== ============= ================================
variant    features   parameter     predicts
========== ========== ============= ================================
ten, ten-x ``h_t(s)`` classifier    turn label ``y_t(s)`` (alpha)
ten-xh     ``z_t(s)`` xh_classifier turn label ``y_t(s)``
ten-y      ``h_t(s)`` y_classifier  state ``x_t(s)`` directly
========== ========== ============= ================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GRUParams, Tensor
from .belief import DiscreteDist, run_chain
from .corpus import Vocab
from .state import Dialogue, Ontology, StateConfig, fold_turn_labels

VARIANTS = ("ten", "ten-x", "ten-y", "ten-xh")


def normalize_variant(name: str) -> str:
    v = name.strip().lower().replace("–", "-").replace("_", "-")
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    return v


@dataclass
class ModelConfig:
    emb_dim: int = 32
    gae_hidden: int = 25  # per direction; GAE output is twice this
    hist_hidden: int = 50
    init_range: float = 0.08
    emb_init_std: float = 0.1

    def validate(self) -> None:
        for k, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"model config {k} must be positive, got {v}")

    @property
    def gae_dim(self) -> int:
        return 2 * self.gae_hidden

    @property
    def z_dim(self) -> int:
        return 2 * self.gae_dim


class EmbeddingTable:
    def __init__(self, vocab: Vocab, matrix: Tensor):
        if matrix.shape[0] != len(vocab):
            raise ValueError(f"embedding rows {matrix.shape[0]} != vocab size {len(vocab)}")
        self.vocab = vocab
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, tokens: Sequence[str]) -> Tensor:
        return ad.take(self.matrix, self.vocab.encode(tokens))


def load_embedding_file(path, vocab: Vocab, matrix: np.ndarray) -> int:
    """Overwrite rows of ``matrix`` from a ``token v1 ... vk`` text file.

    Returns the number of vocabulary tokens found.
    """
    found = 0
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            tok, vals = parts[0], parts[1:]
            if len(vals) != matrix.shape[1]:
                raise ValueError(f"{path}:{lineno}: expected {matrix.shape[1]} values, got {len(vals)}")
            if tok in vocab:
                matrix[vocab.index[tok]] = np.array(vals, dtype=np.float64)
                found += 1
    return found


@dataclass
class GaeParams:
    """Bidirectional GRU shared by all slots plus one attention vector per slot."""

    fwd: GRUParams
    bwd: GRUParams
    attention: dict[str, Tensor]

    @property
    def out_dim(self) -> int:
        return self.fwd.hidden_size + self.bwd.hidden_size


@dataclass
class ModelParams:
    ontology: Ontology
    config: ModelConfig
    embeddings: EmbeddingTable
    utterance_gae: GaeParams
    action_gae: GaeParams
    history: GRUParams
    classifier: dict[str, Tensor]
    xh_classifier: dict[str, Tensor]
    y_classifier: dict[str, Tensor]

    @classmethod
    def init(cls, ontology: Ontology, vocab: Vocab, config: ModelConfig | None = None,
             seed: int = 0) -> "ModelParams":
        config = config or ModelConfig()
        config.validate()
        rng = np.random.default_rng(seed)
        a = config.init_range

        def gae(role: str) -> GaeParams:
            return GaeParams(
                fwd=GRUParams.init(f"{role}.fwd", config.emb_dim, config.gae_hidden, rng, a),
                bwd=GRUParams.init(f"{role}.bwd", config.emb_dim, config.gae_hidden, rng, a),
                attention={s: ad.parameter(rng.uniform(-a, a, config.gae_dim), f"{role}.attention.{s}")
                           for s in ontology.slots},
            )

        emb = ad.parameter(rng.normal(0.0, config.emb_init_std, (len(vocab), config.emb_dim)),
                           "embeddings")
        utterance_gae = gae("utterance_gae")
        action_gae = gae("action_gae")
        history = GRUParams.init("history", config.z_dim, config.hist_hidden, rng, a)

        def heads(name: str, rows: int) -> dict[str, Tensor]:
            return {s: ad.parameter(rng.uniform(-a, a, (rows, ontology.size(s))), f"{name}.{s}")
                    for s in ontology.slots}

        return cls(
            ontology=ontology, config=config, embeddings=EmbeddingTable(vocab, emb),
            utterance_gae=utterance_gae, action_gae=action_gae, history=history,
            classifier=heads("classifier", config.hist_hidden),
            xh_classifier=heads("xh_classifier", config.z_dim),
            y_classifier=heads("y_classifier", config.hist_hidden),
        )

    @property
    def vocab(self) -> Vocab:
        return self.embeddings.vocab

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embeddings": self.embeddings.matrix}
        for gae in (self.utterance_gae, self.action_gae):
            for g in (gae.fwd, gae.bwd):
                for t in g.tensors().values():
                    out[t.name] = t
            for t in gae.attention.values():
                out[t.name] = t
        for t in self.history.tensors().values():
            out[t.name] = t
        for heads in (self.classifier, self.xh_classifier, self.y_classifier):
            for t in heads.values():
                out[t.name] = t
        return out


# ---------------------------------------------------------------- encoders

def gae_states(embedded: Tensor, fwd: GRUParams, bwd: GRUParams) -> Tensor:
    """Bidirectional GRU states, forward and backward halves concatenated per position."""
    if embedded.shape[0] == 0:
        raise ValueError("GAE input sequence is empty")
    return ad.concat([ad.gru_sequence(embedded, fwd), ad.gru_sequence(embedded, bwd, reverse=True)],
                     axis=1)


def attend(states: Tensor, theta: Tensor) -> Tensor:
    """Attention pooling ``sum_i softmax(states @ theta)_i states_i``."""
    return ad.scale_sum(ad.softmax(ad.matmul(states, theta)), states)


def gae_encode(embedded: Tensor, fwd: GRUParams, bwd: GRUParams, theta: Tensor) -> Tensor:
    return attend(gae_states(embedded, fwd, bwd), theta)


def encode_utterance(utterance_states: Tensor, slot: str, params: ModelParams) -> Tensor:
    return attend(utterance_states, params.utterance_gae.attention[slot])


def encode_action(phrase_states: Sequence[Tensor], slot: str, u_bar: Tensor,
                  params: ModelParams) -> Tensor:
    if not phrase_states:
        return ad.constant(np.zeros(params.action_gae.out_dim))
    phi = params.action_gae.attention[slot]
    C = ad.stack([attend(D, phi) for D in phrase_states])
    return ad.scale_sum(ad.softmax(ad.matmul(C, u_bar)), C)


def action_utterance_encoding(u_bar: Tensor, a_bar: Tensor) -> Tensor:
    return ad.concat([u_bar, a_bar])


def history_step(h_prev, z: Tensor, params: ModelParams) -> Tensor:
    """One step of the slot-shared history GRU (composed form)."""
    return ad.gru_cell(h_prev, z, params.history)


def predict_turn_label(features: Tensor, weights: Tensor) -> Tensor:
    """``softmax(features @ weights)``; rows of ``features`` are independent."""
    if features.shape[-1] != weights.shape[0]:
        raise ValueError(
            f"classifier head expects {weights.shape[0]}-dim features, got {features.shape[-1]}")
    return ad.softmax(ad.matmul(features, weights))


@dataclass
class DialogueEncoding:
    z: dict[str, Tensor]  # slot -> (T, z_dim)
    h: dict[str, Tensor] | None  # slot -> (T, hist_hidden)


def encode_dialogue(params: ModelParams, dialogue: Dialogue, with_history: bool = True) -> DialogueEncoding:
    slots = params.ontology.slots
    emb = params.embeddings
    ug, ag = params.utterance_gae, params.action_gae
    z_rows: dict[str, list[Tensor]] = {s: [] for s in slots}
    for i, turn in enumerate(dialogue.turns):
        if not turn.utterance:
            raise ValueError(f"dialogue {dialogue.id!r}, turn {i}: empty utterance")
        U = gae_states(emb.lookup(turn.utterance), ug.fwd, ug.bwd)
        phrases = []
        for p in turn.action:
            if not p:
                raise ValueError(f"dialogue {dialogue.id!r}, turn {i}: empty action phrase")
            phrases.append(gae_states(emb.lookup(p), ag.fwd, ag.bwd))
        for s in slots:
            u_bar = encode_utterance(U, s, params)
            a_bar = encode_action(phrases, s, u_bar, params)
            z_rows[s].append(action_utterance_encoding(u_bar, a_bar))
    z = {s: ad.stack(z_rows[s]) for s in slots}
    h = {s: ad.gru_sequence(z[s], params.history) for s in slots} if with_history else None
    return DialogueEncoding(z, h)


def dialogue_heads(params: ModelParams, dialogue: Dialogue, variant: str) -> dict[str, Tensor]:
    """Per-slot ``(T, V)`` head output for ``variant``: turn-label
    distributions for ten/ten-x/ten-xh, state distributions for ten-y."""
    variant = normalize_variant(variant)
    enc = encode_dialogue(params, dialogue, with_history=variant != "ten-xh")
    out = {}
    for s in params.ontology.slots:
        if variant == "ten-xh":
            out[s] = predict_turn_label(enc.z[s], params.xh_classifier[s])
        elif variant == "ten-y":
            out[s] = predict_turn_label(enc.h[s], params.y_classifier[s])
        else:
            out[s] = predict_turn_label(enc.h[s], params.classifier[s])
    return out


# ---------------------------------------------------------------- inference

@dataclass
class Prediction:
    dialogue_id: str
    states: list[StateConfig]
    labels: list[StateConfig] | None  # argmax turn labels (None for ten-y)
    alphas: dict[str, np.ndarray] | None  # slot -> (T, V) turn-label distributions
    marginals: dict[str, np.ndarray] | None = field(default=None)  # slot -> (T, V)


def argmax_states(ontology: Ontology, dists: dict[str, np.ndarray]) -> list[StateConfig]:
    T = next(iter(dists.values())).shape[0]
    idx = {s: np.argmax(dists[s], axis=1) for s in ontology.slots}
    return [StateConfig(ontology, tuple(int(idx[s][t]) for s in ontology.slots)) for t in range(T)]


def predict_from_heads(ontology: Ontology, dialogue_id: str, variant: str,
                       heads: dict[str, np.ndarray]) -> Prediction:
    """Hard states (and turn labels) from per-slot head outputs."""
    variant = normalize_variant(variant)
    if variant == "ten-y":
        return Prediction(dialogue_id, argmax_states(ontology, heads), None, None, heads)
    labels = argmax_states(ontology, heads)
    if variant == "ten":
        marg = {s: np.stack([q.probs for q in run_chain(
            [DiscreteDist(a, s) for a in heads[s]], s)]) for s in ontology.slots}
        return Prediction(dialogue_id, argmax_states(ontology, marg), labels, heads, marg)
    return Prediction(dialogue_id, fold_turn_labels(labels), labels, heads)


def predict_dialogue(params: ModelParams, dialogue: Dialogue, variant: str) -> Prediction:
    heads = {s: t.value for s, t in dialogue_heads(params, dialogue, variant).items()}
    return predict_from_heads(params.ontology, dialogue.id, variant, heads)
