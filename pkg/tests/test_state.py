import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ten_dst.state import (
    UNKNOWN,
    Dialogue,
    InconsistentDialogue,
    Ontology,
    OntologyError,
    StateConfig,
    Turn,
    aggregate_state,
    aggregate_value,
    derive_turn_labels,
    fold_turn_labels,
    indicator_g,
    tokenize,
)

ONTO = Ontology({"food": ["italian", "chinese", "dontcare"], "pricerange": ["cheap", "moderate"],
                 "area": ["north", "south"]})


def states(onto=ONTO):
    return st.tuples(*[st.integers(0, onto.size(s) - 1) for s in onto.slots]).map(
        lambda idx: StateConfig(onto, idx))


class TestOntology:
    def test_unknown_prepended(self):
        assert ONTO.star_values("food") == (UNKNOWN, "italian", "chinese", "dontcare")
        assert ONTO.values("food") == ("italian", "chinese", "dontcare")
        assert ONTO.value_index("area", UNKNOWN) == 0
        assert ONTO.size("pricerange") == 3

    def test_rejects_listed_unknown_and_duplicates(self):
        with pytest.raises(OntologyError):
            Ontology({"food": ["unknown", "thai"]})
        with pytest.raises(OntologyError):
            Ontology({"food": ["thai", "thai"]})

    def test_unknown_slot_and_value(self):
        with pytest.raises(OntologyError, match="slot"):
            ONTO.slot_index("parking")
        with pytest.raises(OntologyError):
            ONTO.value_index("food", "korean")

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "o.json"
        ONTO.save(path)
        assert Ontology.load(path) == ONTO
        assert json.loads(path.read_text())["slots"][0]["name"] == "food"

    def test_state_defaults_to_unknown(self):
        x = ONTO.state({"food": "chinese"})
        assert x["food"] == "chinese" and x["area"] == UNKNOWN
        assert ONTO.unknown_state().is_unknown()


class TestAggregation:
    def test_worked_example(self):
        x = ONTO.state({"food": "italian", "pricerange": "moderate"})
        y = ONTO.state({"food": "chinese"})
        assert aggregate_state(x, y).as_dict() == {"food": "chinese", "pricerange": "moderate", "area": UNKNOWN}

    def test_value_rule(self):
        assert aggregate_value("italian", UNKNOWN, "food", ONTO) == "italian"
        assert aggregate_value("italian", "dontcare", "food", ONTO) == "dontcare"
        assert aggregate_value(UNKNOWN, UNKNOWN, "food", ONTO) == UNKNOWN

    def test_indicator_table(self):
        vals = ONTO.star_values("area")
        for a in vals:
            for b in vals:
                hits = [v for v in vals if indicator_g(a, b, v, "area", ONTO)]
                assert hits == [a if b == UNKNOWN else b]

    @given(states())
    def test_unknown_is_right_identity(self, x):
        assert aggregate_state(x, ONTO.unknown_state()) == x

    @given(states())
    def test_idempotent(self, x):
        assert aggregate_state(x, x) == x

    @given(states(), states(), states())
    def test_associative(self, x, y, z):
        assert aggregate_state(aggregate_state(x, y), z) == aggregate_state(x, aggregate_state(y, z))

    @given(st.lists(states(), min_size=1, max_size=6))
    def test_derived_labels_fold_back(self, xs_raw):
        # any label sequence folds to states; deriving labels from those states recovers them
        xs = fold_turn_labels(xs_raw)
        assert fold_turn_labels(derive_turn_labels(xs)) == xs

    def test_derive_minimal_change(self):
        xs = [ONTO.state({"food": "italian"}), ONTO.state({"food": "italian", "area": "north"})]
        ys = derive_turn_labels(xs)
        assert ys[1].as_dict(include_unknown=False) == {"area": "north"}

    def test_mixed_ontologies_rejected(self):
        other = Ontology({"food": ["italian"]})
        with pytest.raises(OntologyError):
            aggregate_state(ONTO.unknown_state(), other.unknown_state())


class TestDialogue:
    def _turn(self, x, y):
        return Turn(action=(("welcome",),), utterance=("hi",), state=x, turn_label=y)

    def test_consistency_check_names_turn(self):
        x1 = ONTO.state({"food": "italian"})
        bad = Dialogue("d", (self._turn(x1, x1), self._turn(x1, ONTO.state({"area": "north"}))))
        with pytest.raises(InconsistentDialogue) as exc:
            bad.check_consistent()
        assert exc.value.turn_index == 1 and "d" in str(exc.value)

    def test_labels_required(self):
        d = Dialogue("d", (self._turn(ONTO.unknown_state(), None),))
        with pytest.raises(ValueError):
            d.turn_labels

    def test_tokenize(self):
        assert tokenize("I want  Italian") == ("i", "want", "italian")
        assert tokenize(["A", "b"]) == ("a", "b")
