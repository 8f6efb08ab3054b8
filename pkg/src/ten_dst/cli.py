"""Command-line interface: ``ten-dst {generate,train,eval,predict,inspect}``.

Every setting can come from a JSON config file (``--config``) and be
overridden by a flag; the resolved settings are written to
``<out-dir>/config.json``. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .belief import DistributionError, DiscreteDist, run_chain
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import CorpusError, SynthConfig, generate_synthetic, load_corpus, save_corpus, split_corpus
from .metrics import curve_csv, evaluate, turn_level_accuracy
from .model import argmax_states, dialogue_heads, normalize_variant
from .state import Dialogue, InconsistentDialogue, Ontology, OntologyError, fold_turn_labels
from .training import NumericError, TrainConfig, predictions, train

log = logging.getLogger("ten_dst")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Option:
    name: str
    kind: type
    default: Any
    help: str


_T, _S = TrainConfig(), SynthConfig()
OPTIONS = [
    Option("out_dir", str, None, "output directory"),
    Option("corpus_dir", str, None, "directory holding train/valid/test.jsonl"),
    Option("train", str, None, "training corpus file"),
    Option("valid", str, None, "validation corpus file"),
    Option("data", str, None, "corpus file to evaluate, predict or inspect"),
    Option("ontology", str, None, "ontology file (default: the one named in the corpus header)"),
    Option("checkpoint", str, None, "model checkpoint"),
    Option("init_from", str, None, "checkpoint to warm start from (ten: a trained ten-x model)"),
    Option("embeddings", str, None, "plain-text embedding file: token v1 ... vk per line"),
    Option("variant", str, None, "ten, ten-x, ten-y or ten-xh"),
    Option("seed", int, 0, "seed for generation, initialisation and shuffling"),
    Option("epochs", int, _T.epochs, "training epochs"),
    Option("lr", float, _T.lr, "Adam learning rate"),
    Option("patience", int, None, "early-stop after this many epochs without improvement"),
    Option("emb_dim", int, _T.emb_dim, "token embedding size"),
    Option("gae_hidden", int, _T.gae_hidden, "encoder GRU size per direction"),
    Option("hist_hidden", int, _T.hist_hidden, "history GRU size"),
    Option("n_dialogues", int, _S.n_dialogues, "dialogues to generate"),
    Option("min_turns", int, _S.min_turns, "shortest generated dialogue"),
    Option("max_turns", int, _S.max_turns, "longest generated dialogue"),
    Option("p_inform", float, _S.p_inform, "per-turn probability of informing a slot"),
    Option("p_confirm", float, _S.p_confirm, "per-turn probability of a hedge/confirm episode"),
    Option("p_noise", float, _S.p_noise, "per-turn probability of distractor tokens"),
    Option("p_silent", float, _S.p_silent, "per-turn probability of a turn that informs nothing"),
    Option("dialogue_id", str, None, "dialogue to inspect"),
    Option("alphas", str, None, "JSON file {dialogue_id: {slot: [[p, ...] per turn]}} used instead of "
           "the checkpoint's turn-level distributions"),
    Option("top_k", int, 3, "values shown per distribution"),
    Option("log_level", str, "info", "debug, info, warning or error"),
]
_BY_NAME = {o.name: o for o in OPTIONS}

_COMMON = ["out_dir", "seed", "log_level"]
COMMAND_OPTIONS = {
    "generate": _COMMON + ["n_dialogues", "min_turns", "max_turns", "p_inform", "p_confirm",
                           "p_noise", "p_silent"],
    "train": _COMMON + ["corpus_dir", "train", "valid", "ontology", "init_from", "embeddings",
                        "variant", "epochs", "lr", "patience", "emb_dim", "gae_hidden", "hist_hidden"],
    "eval": _COMMON + ["corpus_dir", "data", "ontology", "checkpoint", "variant"],
    "predict": _COMMON + ["corpus_dir", "data", "ontology", "checkpoint", "variant"],
    "inspect": _COMMON + ["corpus_dir", "data", "ontology", "checkpoint", "alphas", "dialogue_id", "top_k"],
}
# eval and predict fall back to the variant stored in the checkpoint
COMMAND_DEFAULTS = {"train": {"variant": _T.variant}}


def resolve_config(command: str, file_values: dict, flag_values: dict) -> dict:
    """Defaults, then config-file values, then flags. Unknown keys are errors."""
    unknown = sorted(set(file_values) - set(_BY_NAME))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for name in COMMAND_OPTIONS[command]:
        opt = _BY_NAME[name]
        value = COMMAND_DEFAULTS.get(command, {}).get(name, opt.default)
        if name in file_values and file_values[name] is not None:
            value = file_values[name]
        if flag_values.get(name) is not None:
            value = flag_values[name]
        if value is not None:
            try:
                value = opt.kind(value)
            except (TypeError, ValueError):
                raise UsageError(f"{name}: expected {opt.kind.__name__}, got {value!r}") from None
        out[name] = value
    return out


def _echo(cfg: dict, command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


def _require(cfg: dict, *names: str) -> None:
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join(
            "--" + n.replace("_", "-") for n in missing))


def _corpus_path(cfg: dict, key: str, split: str) -> str | None:
    if cfg.get(key) is not None:
        return cfg[key]
    if cfg.get("corpus_dir") is not None:
        return str(Path(cfg["corpus_dir"]) / f"{split}.jsonl")
    return None


def _ontology_for(path: str, cfg: dict) -> Ontology:
    if cfg.get("ontology") is not None:
        return Ontology.load(cfg["ontology"])
    header = json.loads(Path(path).read_text(encoding="utf-8").split("\n", 1)[0])
    return Ontology.load(Path(path).parent / header["ontology"])


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: dict) -> int:
    _require(cfg, "out_dir")
    synth = SynthConfig(seed=cfg["seed"], n_dialogues=cfg["n_dialogues"], min_turns=cfg["min_turns"],
                        max_turns=cfg["max_turns"], p_inform=cfg["p_inform"], p_confirm=cfg["p_confirm"],
                        p_noise=cfg["p_noise"], p_silent=cfg["p_silent"])
    synth.validate()
    out = Path(cfg["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        synth.ontology.save(out / "ontology.json")
        splits = split_corpus(generate_synthetic(synth), seed=cfg["seed"])
        for name, part in zip(("train", "valid", "test"), splits):
            save_corpus(out / f"{name}.jsonl", part, "ontology.json")
    except OSError as e:
        raise CorpusError(f"cannot write to {out}: {e}") from None
    _echo(cfg, "generate", out)
    print(f"wrote {sum(map(len, splits))} dialogues ({', '.join(str(len(p)) for p in splits)}) to {out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _require(cfg, "out_dir")
    train_path, valid_path = _corpus_path(cfg, "train", "train"), _corpus_path(cfg, "valid", "valid")
    if train_path is None:
        raise UsageError("missing required setting: --train or --corpus-dir")
    ontology = _ontology_for(train_path, cfg)
    train_set = load_corpus(train_path, ontology)
    valid_set = load_corpus(valid_path, ontology) if valid_path and Path(valid_path).exists() else []
    tc = TrainConfig(variant=cfg["variant"], epochs=cfg["epochs"], lr=cfg["lr"], seed=cfg["seed"],
                     emb_dim=cfg["emb_dim"], gae_hidden=cfg["gae_hidden"], hist_hidden=cfg["hist_hidden"],
                     init_from=cfg["init_from"], patience=cfg["patience"], embeddings=cfg["embeddings"])
    out = Path(cfg["out_dir"])
    _echo(cfg, "train", out)
    result = train(train_set, valid_set, tc, ontology, out)
    best = "n/a" if result.best_valid_jga is None else f"{result.best_valid_jga:.4f}"
    print(f"best epoch {result.best_epoch}, validation joint goal accuracy {best}; "
          f"checkpoint {result.checkpoint}")
    return EXIT_OK


def _model_and_data(cfg: dict, split: str = "test"):
    _require(cfg, "checkpoint")
    params, meta = load_checkpoint(cfg["checkpoint"])
    path = _corpus_path(cfg, "data", split)
    if path is None:
        raise UsageError("missing required setting: --data or --corpus-dir")
    ontology = Ontology.load(cfg["ontology"]) if cfg.get("ontology") else None
    data = load_corpus(path, ontology)
    corpus_onto = data[0].turns[0].state.ontology if data and data[0].turns else (ontology or params.ontology)
    if corpus_onto != params.ontology:
        raise CheckpointError(f"{cfg['checkpoint']}: ontology does not match the corpus {path}")
    variant = cfg.get("variant") or meta.get("variant", "ten-x")
    return params, meta, data, normalize_variant(variant)


def cmd_eval(cfg: dict) -> int:
    params, meta, data, variant = _model_and_data(cfg)
    if not data:
        raise CorpusError("evaluation corpus is empty")
    preds = predictions(params, data, variant)
    pred_states = [p.states for p in preds]
    gold_states = [d.states for d in data]
    labels = preds[0].labels is not None
    report = evaluate(pred_states, gold_states,
                      [p.labels for p in preds] if labels else None,
                      [d.turn_labels for d in data] if labels else None)
    slot_state_acc, _ = turn_level_accuracy(pred_states, gold_states)
    print(f"variant {variant}")
    print(report.table())
    if cfg.get("out_dir"):
        out = Path(cfg["out_dir"])
        _echo(cfg, "eval", out)
        (out / "metrics.csv").write_text(report.to_csv())
        rows = ["slot,state_accuracy,turn_level_accuracy"]
        for s in params.ontology.slots:
            tl = "" if report.per_slot_turn_level is None else repr(report.per_slot_turn_level[s])
            rows.append(f"{s},{slot_state_acc[s]!r},{tl}")
        (out / "per_slot.csv").write_text("\n".join(rows) + "\n")
        (out / "per_turn.csv").write_text(curve_csv(report.per_turn_joint))
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    _require(cfg, "out_dir")
    params, meta, data, variant = _model_and_data(cfg)
    preds = predictions(params, data, variant)
    out_dialogues = [
        Dialogue(d.id, tuple(dataclasses.replace(t, state=x, turn_label=None, label_derived=False, flags=())
                        for t, x in zip(d.turns, p.states)))
        for d, p in zip(data, preds)]
    out = Path(cfg["out_dir"])
    _echo(cfg, "predict", out)
    params.ontology.save(out / "ontology.json")
    save_corpus(out / "predictions.jsonl", out_dialogues, "ontology.json", with_gold=False,
                variant=variant)
    print(f"wrote predictions for {len(out_dialogues)} dialogues to {out / 'predictions.jsonl'}")
    return EXIT_OK


# ---------------------------------------------------------------- inspector

@dataclass
class InspectRow:
    turn: int
    slot: str
    alpha_top: list[tuple[str, float]]
    y_hat: str
    q_top: list[tuple[str, float]]
    x_hat: str
    ten_x: str
    ten: str
    gold: str | None


@dataclass
class Inspection:
    dialogue_id: str
    turns: list[tuple[str, str]]
    rows: list[InspectRow] = field(default_factory=list)

    def column(self, name: str, slot: str) -> list[str]:
        return [getattr(r, name) for r in self.rows if r.slot == slot]

    def render(self) -> str:
        fmt = lambda top: " ".join(f"{v}:{p:.2f}" for v, p in top)
        lines = [f"dialogue {self.dialogue_id}"]
        header = ("turn", "slot", "alpha (top-k)", "argmax y", "Q (top-k)", "argmax x",
                  "ten-x state", "ten state", "gold")
        table = [header]
        for r in self.rows:
            table.append((str(r.turn), r.slot, fmt(r.alpha_top), r.y_hat, fmt(r.q_top), r.x_hat,
                          r.ten_x, r.ten, "" if r.gold is None else r.gold))
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        current = None
        for i, row in enumerate(table):
            if i and row[0] != current:
                current = row[0]
                action, utterance = self.turns[int(current) - 1]
                lines.append(f"-- turn {current}  system: {action or '-'}  user: {utterance or '-'}")
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        return "\n".join(lines) + "\n"


def inspect_alphas(dialogue: Dialogue, alphas: dict[str, np.ndarray], ontology: Ontology,
                   top_k: int = 3) -> Inspection:
    """Side-by-side hard (``ten-x``) and soft (``ten``) aggregation of ``alphas``."""
    T = len(dialogue)
    dists = {s: [DiscreteDist(a, s) for a in np.asarray(alphas[s], dtype=np.float64)] for s in ontology.slots}
    for s, ds in dists.items():
        if len(ds) != T:
            raise DistributionError(f"slot {s!r}: {len(ds)} turn distributions for {T} turns")
    marg = {s: run_chain(dists[s], s) for s in ontology.slots}
    labels = argmax_states(ontology, {s: np.stack([d.probs for d in dists[s]]) for s in ontology.slots})
    hard = fold_turn_labels(labels)
    soft = argmax_states(ontology, {s: np.stack([q.probs for q in marg[s]]) for s in ontology.slots})
    turns = [(" | ".join(" ".join(p) for p in t.action), " ".join(t.utterance)) for t in dialogue.turns]
    ins = Inspection(dialogue.id, turns)
    for t in range(T):
        for s in ontology.slots:
            gold = dialogue.turns[t].state
            ins.rows.append(InspectRow(
                turn=t + 1, slot=s,
                alpha_top=dists[s][t].top(top_k, ontology), y_hat=labels[t][s],
                q_top=marg[s][t].top(top_k, ontology), x_hat=soft[t][s],
                ten_x=hard[t][s], ten=soft[t][s],
                gold=None if gold is None else gold[s]))
    return ins


def cmd_inspect(cfg: dict) -> int:
    _require(cfg, "dialogue_id")
    did = cfg["dialogue_id"]
    if cfg.get("alphas") is None:
        params, _, data, _ = _model_and_data(cfg)
        ontology = params.ontology
    else:
        path = _corpus_path(cfg, "data", "test")
        if path is None:
            raise UsageError("missing required setting: --data or --corpus-dir")
        ontology = _ontology_for(path, cfg)
        data = load_corpus(path, ontology)
    match = [d for d in data if d.id == did]
    if not match:
        raise CorpusError(f"no dialogue with id {did!r}")
    d = match[0]
    if cfg.get("alphas") is None:
        alphas = {s: t.value for s, t in dialogue_heads(params, d, "ten-x").items()}
    else:
        try:
            alphas = json.loads(Path(cfg["alphas"]).read_text(encoding="utf-8"))[did]
        except KeyError:
            raise CorpusError(f"{cfg['alphas']}: no distributions for dialogue {did!r}") from None
        missing = [s for s in ontology.slots if s not in alphas]
        if missing:
            raise CorpusError(f"{cfg['alphas']}: no distributions for slot(s) {', '.join(missing)}")
    ins = inspect_alphas(d, alphas, ontology, cfg["top_k"])
    text = ins.render()
    print(text, end="")
    if cfg.get("out_dir"):
        out = Path(cfg["out_dir"])
        _echo(cfg, "inspect", out)
        (out / f"inspect_{d.id}.txt").write_text(text)
    return EXIT_OK


HELP = {
    "generate": "write a seeded synthetic corpus (train/valid/test) and its ontology",
    "train": "train a model variant; writes the best checkpoint and a metric log",
    "eval": "score a checkpoint on a corpus; prints and writes metric tables",
    "predict": "write per-turn predicted states as a corpus file without gold fields",
    "inspect": "per-turn, per-slot view of turn-level and aggregated distributions",
}
COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "inspect": cmd_inspect}


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ten-dst", description="Dialogue state tracking with belief-propagated "
                     "aggregation of turn-level predictions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="JSON config file; flags override its values")
        for opt in COMMAND_OPTIONS[name]:
            o = _BY_NAME[opt]
            fallback = COMMAND_DEFAULTS.get(name, {}).get(opt, o.default)
            default = "" if fallback is None else f" (default {fallback})"
            p.add_argument("--" + opt.replace("_", "-"), dest=opt, type=o.kind, default=None,
                           help=o.help + default)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = {}
        if args.config:
            try:
                file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise UsageError(f"cannot read config {args.config}: {e}") from None
            if not isinstance(file_values, dict):
                raise UsageError(f"{args.config}: config must be a JSON object")
        cfg = resolve_config(args.command, file_values, flags)
        logging.basicConfig(level=cfg["log_level"].upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"ten-dst: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as e:
        print(f"ten-dst: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, OntologyError, CheckpointError, InconsistentDialogue, DistributionError,
            OSError, ValueError) as e:
        print(f"ten-dst: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
