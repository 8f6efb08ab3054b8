"""Losses, the training loop and warm starting.

Per-dialogue cross-entropy losses, summed over slots and turns:

* ``ten``    ``-log Q_t(x_t(s))``  with ``Q`` from the belief chain over alpha
* ``ten-y``  ``-log Q~_t(x_t(s))`` with ``Q~`` predicted directly from ``h_t(s)``
* ``ten-x``  ``-log alpha_t(y_t(s))``
* ``ten-xh`` ``-log alpha~_t(y_t(s))`` with alpha~ predicted from ``z_t(s)``

Training is sequential: one Adam step per dialogue, dialogues shuffled each
epoch, the best validation joint-goal-accuracy epoch kept.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .checkpoint import CheckpointError, load_into, read_arrays, save_checkpoint
from .corpus import Vocab, build_vocab
from .metrics import joint_goal_accuracy, turn_level_accuracy
from .model import (
    ModelConfig,
    ModelParams,
    Prediction,
    dialogue_heads,
    load_embedding_file,
    normalize_variant,
    predict_from_heads,
)
from .state import Dialogue, Ontology

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
METRIC_COLUMNS = ["epoch", "split", "loss", "joint_goal_accuracy", "turn_level_accuracy"]


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    variant: str = "ten-x"
    epochs: int = 30
    lr: float = 0.001
    seed: int = 0
    emb_dim: int = 32
    gae_hidden: int = 25
    hist_hidden: int = 50
    init_from: str | None = None
    patience: int | None = None
    embeddings: str | None = None

    def validate(self) -> None:
        self.variant = normalize_variant(self.variant)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return ModelConfig(emb_dim=self.emb_dim, gae_hidden=self.gae_hidden,
                           hist_hidden=self.hist_hidden)


# ---------------------------------------------------------------- losses

@dataclass
class LossOutput:
    loss: Tensor
    heads: dict[str, Tensor]
    clamped: int = 0


def variant_loss(params: ModelParams, dialogue: Dialogue, variant: str) -> LossOutput:
    variant = normalize_variant(variant)
    onto = params.ontology
    heads = dialogue_heads(params, dialogue, variant)
    T = len(dialogue)
    rows = np.arange(T)
    use_labels = variant in ("ten-x", "ten-xh")
    targets = dialogue.turn_labels if use_labels else dialogue.states
    total = None
    clamped = 0
    for s in onto.slots:
        dist = ad.bp_chain(heads[s]) if variant == "ten" else heads[s]
        gold = np.array([x.index(s) for x in targets], dtype=np.intp)
        picked = ad.take(dist, (rows, gold))
        clamped += int(np.sum(picked.value < LOG_FLOOR))
        term = ad.scale(ad.total(ad.log(picked, floor=LOG_FLOOR)), -1.0)
        total = term if total is None else ad.add(total, term)
    if clamped:
        log.warning("dialogue %s: %d probabilities below %g clamped in the log",
                    dialogue.id, clamped, LOG_FLOOR)
    return LossOutput(total, heads, clamped)


def loss_ten(dialogue: Dialogue, params: ModelParams) -> Tensor:
    return variant_loss(params, dialogue, "ten").loss


def loss_ten_y(dialogue: Dialogue, params: ModelParams) -> Tensor:
    return variant_loss(params, dialogue, "ten-y").loss


def loss_ten_x(dialogue: Dialogue, params: ModelParams) -> Tensor:
    return variant_loss(params, dialogue, "ten-x").loss


def loss_ten_xh(dialogue: Dialogue, params: ModelParams) -> Tensor:
    return variant_loss(params, dialogue, "ten-xh").loss


def variant_parameter_names(params: ModelParams, variant: str) -> list[str]:
    """Names of the parameters that ``variant``'s loss depends on."""
    variant = normalize_variant(variant)
    head = {"ten": "classifier.", "ten-x": "classifier.", "ten-xh": "xh_classifier.",
            "ten-y": "y_classifier."}[variant]
    names = []
    for n in params.named_parameters():
        if n.startswith(("classifier.", "xh_classifier.", "y_classifier.")):
            if n.startswith(head):
                names.append(n)
        elif n.startswith("history.") and variant == "ten-xh":
            continue
        else:
            names.append(n)
    return names


# ---------------------------------------------------------------- evaluation

def predictions(params: ModelParams, dialogues: Sequence[Dialogue], variant: str) -> list[Prediction]:
    out = []
    for d in dialogues:
        heads = {s: t.value for s, t in dialogue_heads(params, d, variant).items()}
        out.append(predict_from_heads(params.ontology, d.id, variant, heads))
    return out


def _scores(preds: Sequence[Prediction], dialogues: Sequence[Dialogue]) -> tuple[float, float | None]:
    jga = joint_goal_accuracy([p.states for p in preds], [d.states for d in dialogues])
    if preds[0].labels is None:
        return jga, None
    _, tla = turn_level_accuracy([p.labels for p in preds], [d.turn_labels for d in dialogues])
    return jga, tla


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: ModelParams
    best_epoch: int
    best_valid_jga: float | None
    metrics: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def metrics_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                    for k in METRIC_COLUMNS})
    return buf.getvalue()


def warm_start_names(params: ModelParams, arrays: dict, variant: str) -> list[str]:
    return [n for n in variant_parameter_names(params, variant) if n in arrays]


def init_params(config: TrainConfig, ontology: Ontology, train_set: Sequence[Dialogue]) -> ModelParams:
    """Fresh parameters, or a warm start from ``config.init_from``."""
    if config.init_from is None:
        if config.variant == "ten":
            log.warning("training ten from a cold start; warm starting from a trained "
                        "ten-x checkpoint (init_from) is recommended")
        vocab = build_vocab(train_set) if train_set else Vocab([])
        params = ModelParams.init(ontology, vocab, config.model_config(), seed=config.seed)
        if config.embeddings is not None:
            n = load_embedding_file(config.embeddings, vocab, params.embeddings.matrix.value)
            log.info("loaded %d embedding rows from %s", n, config.embeddings)
        return params
    if not Path(config.init_from).exists():
        raise CheckpointError(f"warm-start checkpoint {config.init_from} not found")
    arrays, meta = read_arrays(config.init_from)
    if Ontology.from_json(meta["ontology"]) != ontology:
        raise CheckpointError(f"{config.init_from}: checkpoint ontology differs from the corpus ontology")
    model_cfg = ModelConfig(**meta["model"])
    params = ModelParams.init(ontology, Vocab(meta["vocab"]), model_cfg, seed=config.seed)
    copied = load_into(params, arrays, warm_start_names(params, arrays, config.variant),
                       source=config.init_from)
    log.info("warm start: %d parameters from %s", len(copied), config.init_from)
    return params


def train(train_set: Sequence[Dialogue], valid_set: Sequence[Dialogue], config: TrainConfig,
          ontology: Ontology, out_dir=None) -> TrainResult:
    config.validate()
    variant = config.variant
    params = init_params(config, ontology, train_set)
    named = params.named_parameters()
    trainable = {n: named[n] for n in variant_parameter_names(params, variant)}
    if variant in ("ten-x", "ten-xh") and any(t.label_derived for d in train_set for t in d.turns):
        log.warning("%s is training on derived (non-gold) turn labels", variant)
    if not train_set:
        log.warning("empty training corpus; parameters are left unchanged")

    adam = AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    rows: list[dict] = []

    def validate(epoch: int) -> float | None:
        if not valid_set:
            return None
        losses = [float(variant_loss(params, d, variant).loss.value) for d in valid_set]
        preds = predictions(params, valid_set, variant)
        jga, tla = _scores(preds, valid_set)
        rows.append({"epoch": epoch, "split": "valid", "loss": float(np.mean(losses)),
                     "joint_goal_accuracy": jga, "turn_level_accuracy": tla})
        return jga

    best_jga = validate(0)
    best_epoch = 0
    best_values = {n: t.value.copy() for n, t in named.items()}
    stale = 0
    for epoch in range(1, config.epochs + 1):
        if not train_set:
            break
        losses, preds, seen = [], [], []
        for i in rng.permutation(len(train_set)):
            d = train_set[i]
            ad.zero_grad(trainable.values())
            out = variant_loss(params, d, variant)
            value = float(out.loss.value)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, dialogue {d.id!r}")
            ad.backward(out.loss)
            try:
                ad.adam_step({n: t.value for n, t in trainable.items()},
                             {n: t.grad for n, t in trainable.items()}, adam)
            except FloatingPointError as e:
                raise NumericError(f"epoch {epoch}, dialogue {d.id!r}: {e}") from None
            losses.append(value)
            seen.append(d)
            preds.append(predict_from_heads(
                ontology, d.id, variant, {s: h.value for s, h in out.heads.items()}))
        jga, tla = _scores(preds, seen)
        rows.append({"epoch": epoch, "split": "train", "loss": float(np.mean(losses)),
                     "joint_goal_accuracy": jga, "turn_level_accuracy": tla})
        v = validate(epoch)
        log.info("epoch %d: train loss %.4f jga %.4f%s", epoch, rows[-1 if v is None else -2]["loss"],
                 jga, "" if v is None else f", valid jga {v:.4f}")
        if v is None or best_jga is None or v > best_jga:
            best_jga, best_epoch, stale = v, epoch, 0
            best_values = {n: t.value.copy() for n, t in named.items()}
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                log.info("early stop after epoch %d (best %d)", epoch, best_epoch)
                break
    for n, t in named.items():
        t.value = best_values[n]
        t.grad = np.zeros_like(t.value)
    result = TrainResult(params, best_epoch, best_jga, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out / "checkpoint.ckpt"
        save_checkpoint(params, result.checkpoint, variant=variant,
                        train=asdict(config), best_epoch=best_epoch)
        (out / "metrics.csv").write_text(result.metrics_csv())
    return result
