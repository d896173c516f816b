"""The interpretive reference evaluator and the differential harness."""

import pytest

from mds.conformance import build_hierarchy
from mds.law_lang import parse_law
from mds.model import EventKind, FlowKind
from mds.oracle import (OracleEvent, generate_system, oracle_evaluate,
                        oracle_flow, run_differential, run_trial)

LAW_TEXTS = {
    "Top": """
law Top {
  categorical rule veto on sent if op == "veto" {
    block;
  }
  default rule shut on arrived if flow == inflow {
    block;
  }
  default rule open on sent if flow == outflow {
    permit;
  }
  allow-override shut may-permit;
}
""",
    "Sub": """
law Sub extends Top {
  profile [branch];
  override shut permit on arrived if op == "pass" {
    increment state.seen by 1;
  }
}
""",
}


@pytest.fixture(scope="module")
def laws():
    return {name: parse_law(text) for name, text in LAW_TEXTS.items()}


class TestOracleFlow:
    @pytest.mark.parametrize("sender,target,kind", [
        ("M", "M", FlowKind.INNER),
        ("M", "N", FlowKind.OUTFLOW),
        ("N", "M", FlowKind.INFLOW),
        ("M", None, FlowKind.EXPORT),
        (None, "M", FlowKind.IMPORT),
    ])
    def test_table(self, sender, target, kind):
        assert oracle_flow("M", sender, target) is kind


class TestOracleEvaluate:
    def test_categorical_blocks_first(self, laws):
        verdict, token, _ = oracle_evaluate(
            laws, "Sub", {}, {},
            OracleEvent(EventKind.SENT, "veto", FlowKind.OUTFLOW, "Top"))
        assert (verdict, token) == ("block", "Top:veto")

    def test_default_body_when_no_override(self, laws):
        verdict, token, _ = oracle_evaluate(
            laws, "Sub", {}, {},
            OracleEvent(EventKind.ARRIVED, "nope", FlowKind.INFLOW, "Top"))
        assert (verdict, token) == ("block", "Top:shut")

    def test_override_substitutes_and_mutates_copy(self, laws):
        state = {"seen": 4}
        verdict, token, new_state = oracle_evaluate(
            laws, "Sub", state, {},
            OracleEvent(EventKind.ARRIVED, "pass", FlowKind.INFLOW, "Top"))
        assert (verdict, token) == ("permit", "Sub:shut")
        assert new_state["seen"] == 5
        assert state["seen"] == 4  # caller's dict untouched

    def test_builtin_fallback_tokens(self, laws):
        verdict, token, _ = oracle_evaluate(
            laws, "Sub", {}, {},
            OracleEvent(EventKind.ARRIVED, "x", FlowKind.IMPORT, "w",
                        peer_outside=True))
        assert (verdict, token) == ("block", "default:import")
        verdict, token, _ = oracle_evaluate(
            laws, "Sub", {}, {},
            OracleEvent(EventKind.SENT, "x", FlowKind.INNER, "Sub"))
        assert (verdict, token) == ("permit", "default:inner")
        verdict, token, _ = oracle_evaluate(
            laws, "Sub", {}, {}, OracleEvent(EventKind.ADOPTED))
        assert (verdict, token) == ("permit", "default:adopted")


class TestGenerator:
    def test_respects_size_caps(self):
        for seed in range(60):
            system = generate_system(seed, max_modules=4, max_components=8,
                                     max_messages=60)
            assert 1 <= len(system.laws) <= 4
            assert len(system.components) <= 8
            assert len(system.script) <= 60

    def test_generated_hierarchies_conform(self):
        for seed in range(60):
            system = generate_system(seed)
            h, violations = build_hierarchy(list(system.laws.values()))
            assert h is not None, (seed, violations)
            assert h.root == system.root

    def test_trials_are_reproducible(self):
        a = generate_system(1234)
        b = generate_system(1234)
        assert a.laws.keys() == b.laws.keys()
        assert a.script == b.script
        assert run_trial(a) == run_trial(b)


class TestDifferential:
    def test_quick_batch_agrees(self):
        report = run_differential(trials=150, seed=2)
        assert report.disagreements == [], report.disagreements[:3]
        assert report.trials == 150
        assert report.agreement == 1.0
        assert report.events_compared > 1000
