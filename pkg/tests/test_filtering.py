import json
import logging

import pytest

from spark.backends import MockBackend
from spark.errors import (
    DecisionParseError,
    PartialReviewError,
    UsageError,
)
from spark.filtering import (
    PERSONAS,
    FilterDecision,
    ReviewCritique,
    clamp_utility,
    filter_batch,
    generate_reviews,
    parse_decision_obj,
    review_request,
    synthesize_decision,
)
from spark.ideagen import IdeaProposal

DECISION_MARK = "Generate your decision"


def decision_json(decision="ACCEPT", utility=0.8, reasoning="Sound and useful."):
    return json.dumps(
        {"Decision reasoning": reasoning, "Decision": decision, "Utility": utility}
    )


def make_idea(idea_id="idea_1", title="Recall-Aware Kernels"):
    return IdeaProposal(
        input_concepts=["sparse attention"],
        new_concepts=["global token budget"],
        plan="p",
        title=title,
        abstract="We study recall collapse.",
        idea_id=idea_id,
        evidence_ref="ev_abc",
    )


def reviews_for(idea_id="idea_1", n=3):
    return [ReviewCritique(idea_id, i, f"Critique number {i}.") for i in range(1, n + 1)]


class TestDecisionParsing:
    def test_three_key_schema(self):
        got = parse_decision_obj(json.loads(decision_json()), "idea_1")
        assert got == FilterDecision("idea_1", "Sound and useful.", "ACCEPT", 0.8)

    def test_published_rejection_example(self):
        # utility well under the bar reads as a rejection with low score
        raw = '{ "Decision reasoning": "Detailed critique…", "Decision": "REJECT", "Utility": 0.35 }'
        got = parse_decision_obj(json.loads(raw), "idea_1")
        assert got.decision == "REJECT"
        assert got.utility == 0.35

    def test_decision_token_normalized(self):
        got = parse_decision_obj(json.loads(decision_json(decision="  accept ")), "i")
        assert got.decision == "ACCEPT"

    @pytest.mark.parametrize(
        "obj",
        [
            {"Decision reasoning": "", "Decision": "ACCEPT", "Utility": 0.5},
            {"Decision reasoning": "r", "Decision": "MAYBE", "Utility": 0.5},
            {"Decision reasoning": "r", "Decision": "ACCEPT", "Utility": True},
            {"Decision reasoning": "r", "Decision": "ACCEPT", "Utility": "high"},
            {"Decision": "ACCEPT", "Utility": 0.5},
        ],
    )
    def test_unusable_objects(self, obj):
        assert parse_decision_obj(obj, "idea_1") is None

    def test_clamp_warns(self, caplog):
        hot = FilterDecision("idea_1", "r", "ACCEPT", 1.4)
        with caplog.at_level(logging.WARNING, logger="spark.filtering"):
            assert clamp_utility(hot).utility == 1.0
        assert any("clamped" in r.message for r in caplog.records)
        cold = FilterDecision("idea_1", "r", "REJECT", -0.2)
        assert clamp_utility(cold).utility == 0.0
        ok = FilterDecision("idea_1", "r", "ACCEPT", 0.5)
        assert clamp_utility(ok) is ok

    def test_wire_dict_keys_and_to_dict(self):
        d = FilterDecision("idea_1", "r", "ACCEPT", 0.8)
        assert list(d.wire_dict()) == ["Decision reasoning", "Decision", "Utility"]
        assert d.to_dict() == {
            "idea_id": "idea_1",
            "Decision reasoning": "r",
            "Decision": "ACCEPT",
            "Utility": 0.8,
        }
        assert FilterDecision.from_dict(d.to_dict()) == d

    def test_from_dict_rejects_garbage(self):
        with pytest.raises(DecisionParseError):
            FilterDecision.from_dict({"idea_id": "x", "Decision": "ACCEPT"})


class TestReviews:
    def test_personas_rotate_with_reviewer_index(self):
        prompts = [review_request(make_idea(), i).system_prompt for i in (1, 2, 3, 4)]
        assert PERSONAS[0] in prompts[0]
        assert PERSONAS[1] in prompts[1]
        assert PERSONAS[2] in prompts[2]
        assert PERSONAS[0] in prompts[3]
        assert "Reviewer 1" in prompts[0]

    def test_exactly_n_reviews_in_index_order(self):
        backend = MockBackend(
            [
                {"match": "Reviewer 2", "response": "Second opinion."},
                {"match": "Reviewer", "response": "General critique."},
            ]
        )
        got = generate_reviews(make_idea(), 3, backend)
        assert [r.reviewer_index for r in got] == [1, 2, 3]
        assert got[1].text == "Second opinion."
        assert {r.idea_id for r in got} == {"idea_1"}

    def test_empty_review_text_fails_with_survivors_listed(self):
        backend = MockBackend(
            [
                {"match": "Reviewer 2", "response": "   "},
                {"match": "Reviewer", "response": "Fine."},
            ]
        )
        with pytest.raises(PartialReviewError) as info:
            generate_reviews(make_idea(), 3, backend)
        assert info.value.completed == [1, 3]

    def test_review_count_validated(self):
        with pytest.raises(UsageError):
            generate_reviews(make_idea(), 0, MockBackend())


class TestDecision:
    def test_reviews_reach_the_decider(self):
        backend = MockBackend([{"match": DECISION_MARK, "response": decision_json()}])
        got = synthesize_decision(make_idea(), reviews_for(), backend)
        assert got.decision == "ACCEPT"
        prompt = backend.chat_calls[0].user_prompt
        assert "Review 1:\nCritique number 1." in prompt
        assert "Review 3:" in prompt

    def test_needs_reviews(self):
        with pytest.raises(UsageError):
            synthesize_decision(make_idea(), [], MockBackend())

    def test_unusable_decision_fails(self):
        backend = MockBackend([{"match": DECISION_MARK, "response": "no json"}])
        with pytest.raises(DecisionParseError):
            synthesize_decision(make_idea(), reviews_for(), backend)

    def test_out_of_range_utility_clamped(self):
        backend = MockBackend([{"match": DECISION_MARK, "response": decision_json(utility=3.5)}])
        assert synthesize_decision(make_idea(), reviews_for(), backend).utility == 1.0


class TestFilterBatch:
    def test_results_follow_input_order(self):
        ideas = [make_idea("idea_1", "First Title"), make_idea("idea_2", "Second Title")]
        reviewer = MockBackend([{"match": "Reviewer", "response": "Critique."}])
        decider = MockBackend(
            [
                {"match": "Second Title", "response": decision_json(decision="REJECT", utility=0.2)},
                {"match": DECISION_MARK, "response": decision_json()},
            ]
        )
        got = filter_batch(ideas, reviewer, decider)
        assert [d.idea_id for d in got.decisions] == ["idea_1", "idea_2"]
        assert [d.decision for d in got.decisions] == ["ACCEPT", "REJECT"]
        assert len(got.reviews) == 6
        assert got.errors == []

    def test_per_idea_failure_becomes_error_entry(self, caplog):
        ideas = [make_idea("idea_1", "Good Title"), make_idea("idea_2", "Bad Title")]
        reviewer = MockBackend(
            [
                {"match": "Bad Title", "response": ""},
                {"match": "Reviewer", "response": "Critique."},
            ]
        )
        decider = MockBackend([{"match": DECISION_MARK, "response": decision_json()}])
        with caplog.at_level(logging.WARNING, logger="spark.filtering"):
            got = filter_batch(ideas, reviewer, decider)
        assert [d.idea_id for d in got.decisions] == ["idea_1"]
        assert len(got.errors) == 1
        assert got.errors[0]["idea_id"] == "idea_2"
        assert got.errors[0]["kind"] == "partial_review"
        assert len(got.decisions) + len(got.errors) == len(ideas)

    def test_empty_batch_rejected(self):
        with pytest.raises(UsageError):
            filter_batch([], MockBackend(), MockBackend())
