import logging

import numpy as np
import pytest

from ten_dst import autodiff as ad
from ten_dst.checkpoint import CheckpointError, load_checkpoint
from ten_dst.corpus import SynthConfig, generate_synthetic, split_corpus
from ten_dst.model import dialogue_heads, encode_dialogue
from ten_dst.state import Dialogue
from ten_dst.training import (
    NumericError,
    TrainConfig,
    init_params,
    loss_ten,
    loss_ten_x,
    loss_ten_xh,
    loss_ten_y,
    train,
    variant_loss,
    variant_parameter_names,
)

from conftest import make_dialogue, numeric_grad, rel_error

TINY_TRAIN = dict(emb_dim=6, gae_hidden=4, hist_hidden=6)


@pytest.fixture(scope="module")
def small_corpus():
    cfg = SynthConfig(seed=2, n_dialogues=30, max_turns=4)
    return cfg.ontology, split_corpus(generate_synthetic(cfg), seed=2)


class TestLosses:
    def test_ten_x_loss_oracle(self, toy_params, toy_dialogue):
        heads = dialogue_heads(toy_params, toy_dialogue, "ten-x")
        expected = 0.0
        for s in toy_params.ontology.slots:
            for t, y in enumerate(toy_dialogue.turn_labels):
                expected -= np.log(heads[s].value[t, y.index(s)])
        assert float(loss_ten_x(toy_dialogue, toy_params).value) == pytest.approx(expected, rel=1e-12)

    def test_ten_loss_uses_chain_marginals(self, toy_params, toy_dialogue):
        heads = dialogue_heads(toy_params, toy_dialogue, "ten")
        expected = 0.0
        for s in toy_params.ontology.slots:
            a = heads[s].value
            q = a[0]
            for t, x in enumerate(toy_dialogue.states):
                if t:
                    q = q * a[t, 0] + np.r_[0.0, a[t, 1:]]
                expected -= np.log(q[x.index(s)])
        assert float(loss_ten(toy_dialogue, toy_params).value) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("fn", [loss_ten, loss_ten_x, loss_ten_y, loss_ten_xh])
    def test_gradients_match_finite_differences(self, grad_params, toy_dialogue, fn):
        named = grad_params.named_parameters()
        ad.zero_grad(named.values())
        ad.backward(fn(toy_dialogue, grad_params))
        for name in ("embeddings", "utterance_gae.fwd.Wx", "action_gae.attention.area"):
            num = numeric_grad(lambda: float(fn(toy_dialogue, grad_params).value), named[name].value)
            assert rel_error(named[name].grad, num) < 1e-6, name

    def test_clamp_counted(self, toy_params, toy_dialogue, caplog):
        # aim the "italian" column at the second turn's history vector; gold there is unknown
        h2 = encode_dialogue(toy_params, toy_dialogue).h["food"].value[1]
        toy_params.classifier["food"].value[:] = 0.0
        toy_params.classifier["food"].value[:, 1] = 1e8 * h2 / (h2 @ h2)
        with caplog.at_level(logging.WARNING):
            out = variant_loss(toy_params, toy_dialogue, "ten-x")
        assert out.clamped >= 1 and np.isfinite(out.loss.value)
        assert "clamped" in caplog.text


class TestLossProperties:
    def _zero(self, params, group):
        for t in getattr(params, group).values():
            t.value[:] = 0.0

    @pytest.mark.parametrize("fn,group", [(loss_ten_x, "classifier"), (loss_ten_y, "y_classifier"),
                                          (loss_ten_xh, "xh_classifier")])
    def test_uniform_heads(self, toy_params, toy_dialogue, onto, fn, group):
        self._zero(toy_params, group)
        expected = len(toy_dialogue) * sum(np.log(onto.size(s)) for s in onto.slots)
        assert float(fn(toy_dialogue, toy_params).value) == pytest.approx(expected, rel=1e-12)

    def test_single_turn_ten_equals_ten_x(self, toy_params, onto):
        d = make_dialogue(onto, [(["welcome"], "i want italian food", {"food": "italian"})])
        assert float(loss_ten(d, toy_params).value) == pytest.approx(float(loss_ten_x(d, toy_params).value), rel=1e-13)

    def test_non_negative(self, toy_params, toy_dialogue):
        for fn in (loss_ten, loss_ten_x, loss_ten_y, loss_ten_xh):
            assert float(fn(toy_dialogue, toy_params).value) >= 0.0

    def test_ten_xh_has_no_temporal_path(self, toy_params, onto):
        turns = [(["welcome"], "i want italian food", {"food": "italian"}),
                 (["request area"], "north please", {"area": "north"}),
                 (["request pricerange"], "south please", {"area": "south"})]
        d = make_dialogue(onto, turns)
        swapped = make_dialogue(onto, [turns[1], turns[0], turns[2]])
        assert float(loss_ten_xh(d, toy_params).value) == pytest.approx(float(loss_ten_xh(swapped, toy_params).value), rel=1e-13)
        assert float(loss_ten_x(d, toy_params).value) != pytest.approx(float(loss_ten_x(swapped, toy_params).value), rel=1e-9)


class TestParameterSubsets:
    def test_variant_subsets(self, toy_params):
        xh = variant_parameter_names(toy_params, "ten-xh")
        assert "xh_classifier.food" in xh and not any(n.startswith(("history.", "classifier.")) for n in xh)
        ten = variant_parameter_names(toy_params, "ten")
        assert "classifier.food" in ten and "history.Wx" in ten and "y_classifier.food" not in ten

    def test_warm_start_mapping(self, small_corpus, tmp_path):
        onto, (tr, va, _) = small_corpus
        src = train(tr, va, TrainConfig(variant="ten-x", epochs=1, **TINY_TRAIN), onto, tmp_path)
        warm = init_params(TrainConfig(variant="ten", init_from=str(tmp_path / "checkpoint.ckpt"), seed=9),
                           onto, tr)
        a, b = src.params.named_parameters(), warm.named_parameters()
        fresh = init_params(TrainConfig(variant="ten-y", seed=9, **TINY_TRAIN), onto, tr).named_parameters()
        for name in a:
            if name.startswith(("xh_classifier.", "y_classifier.")):
                assert np.array_equal(b[name].value, fresh[name].value), name
            else:
                assert np.array_equal(a[name].value, b[name].value), name


class TestTrainLoop:
    def test_loss_decreases_and_logs(self, small_corpus, tmp_path):
        onto, (tr, va, _) = small_corpus
        res = train(tr, va, TrainConfig(variant="ten-x", epochs=3, lr=0.01, **TINY_TRAIN), onto, tmp_path)
        train_rows = [r for r in res.metrics if r["split"] == "train"]
        assert train_rows[-1]["loss"] < train_rows[0]["loss"]
        assert [(r["epoch"], r["split"]) for r in res.metrics][:3] == [(0, "valid"), (1, "train"), (1, "valid")]
        csv = (tmp_path / "metrics.csv").read_text().splitlines()
        assert csv[0] == "epoch,split,loss,joint_goal_accuracy,turn_level_accuracy"
        params, meta = load_checkpoint(tmp_path / "checkpoint.ckpt")
        assert meta["variant"] == "ten-x" and meta["best_epoch"] == res.best_epoch

    def test_best_epoch_restored(self, small_corpus, tmp_path):
        onto, (tr, va, _) = small_corpus
        res = train(tr, va, TrainConfig(variant="ten-xh", epochs=2, **TINY_TRAIN), onto, tmp_path)
        valid = {r["epoch"]: r["joint_goal_accuracy"] for r in res.metrics if r["split"] == "valid"}
        assert res.best_valid_jga == max(valid.values())
        assert valid[res.best_epoch] == res.best_valid_jga

    def test_deterministic(self, small_corpus):
        onto, (tr, va, _) = small_corpus
        cfg = lambda: TrainConfig(variant="ten-y", epochs=2, seed=7, **TINY_TRAIN)
        assert train(tr, va, cfg(), onto).metrics_csv() == train(tr, va, cfg(), onto).metrics_csv()

    def test_empty_corpus_leaves_parameters(self, small_corpus, caplog):
        onto, (_, va, _) = small_corpus
        with caplog.at_level(logging.WARNING):
            res = train([], [], TrainConfig(epochs=1, **TINY_TRAIN), onto)
        assert "empty training corpus" in caplog.text
        assert res.best_epoch == 0 and [r for r in res.metrics if r["split"] == "train"] == []

    def test_cold_start_ten_warns(self, small_corpus, caplog):
        onto, (tr, va, _) = small_corpus
        with caplog.at_level(logging.WARNING):
            train(tr[:3], [], TrainConfig(variant="ten", epochs=1, **TINY_TRAIN), onto)
        assert "cold start" in caplog.text

    def test_missing_warm_start(self, small_corpus, tmp_path):
        onto, (tr, va, _) = small_corpus
        with pytest.raises(CheckpointError, match="not found"):
            train(tr, va, TrainConfig(variant="ten", init_from=str(tmp_path / "nope.ckpt")), onto)

    def test_non_finite_loss_aborts(self, small_corpus, monkeypatch):
        onto, (tr, va, _) = small_corpus
        import ten_dst.training as training

        real = training.variant_loss

        def poisoned(params, d, variant):
            out = real(params, d, variant)
            out.loss.value = np.array(np.nan)
            return out

        monkeypatch.setattr(training, "variant_loss", poisoned)
        with pytest.raises(NumericError, match="epoch 1, dialogue"):
            train(tr, [], TrainConfig(epochs=1, **TINY_TRAIN), onto)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1).validate()
        with pytest.raises(ValueError):
            TrainConfig(variant="bogus").validate()
