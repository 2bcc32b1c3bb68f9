import json
import logging

import pytest

from spark.backends import MockBackend
from spark.errors import (
    ExtractionError,
    IdeaParseError,
    IdeaValidationError,
    RefinementLimitError,
    UsageError,
)
from spark.filtering import FilterDecision
from spark.ideagen import (
    ConceptSet,
    IdeaProposal,
    build_idea_prompt,
    dedupe_concepts,
    extract_concepts_and_problems,
    generate_idea,
    refine_idea,
    refinement_query,
)
from spark.xplor import EvidenceSet, EvidenceSnippet, Xplor, XplorConfig

from conftest import DIM, TWO_DOC_TEXTS, build_corpus, relevance_json

CONCEPTS_MARK = "mapping a research area"
IDEA_MARK = "Generate a novel research idea"
REFINE_MARK = "Revise the idea to address the feedback."
REPAIR_MARK = "Return only valid JSON."
SCORE_MARK = "Summarize chunk relevance."


def idea_json(title="Recall-Aware Kernels", input_concepts=("sparse attention",), **overrides):
    obj = {
        "input_concepts": list(input_concepts),
        "new_concepts": ["global token budget"],
        "plan": "Reason about the failure. Then propose the fix.",
        "title": title,
        "abstract": "We study recall collapse and propose a hybrid kernel.",
    }
    obj.update(overrides)
    return json.dumps(obj)


def concept_set():
    return ConceptSet(
        concepts=["sparse attention", "recall probes"],
        open_problems=["Why does recall collapse past the window? [paper_1]"],
        domain_tag="ML systems",
    )


def evidence_with(snippets):
    ev = EvidenceSet(question="q")
    ev.snippets = list(snippets)
    return ev.seal()


def snip(source, summary, cid=None):
    return EvidenceSnippet(
        chunk_id=cid or f"{source}:0000",
        source_id=source,
        source_kind="paper",
        summary=summary,
        score=8,
        iteration=1,
    )


class TestDedupeConcepts:
    def test_caps_word_count(self):
        long = "one two three four five six seven eight nine ten"
        assert dedupe_concepts([long]) == ["one two three four five six seven eight"]

    def test_case_insensitive_dedupe_keeps_first_spelling(self):
        assert dedupe_concepts(["Graph Neural Nets", "graph neural nets", "KGs"]) == [
            "Graph Neural Nets",
            "KGs",
        ]

    def test_drops_blanks_and_collapses_whitespace(self):
        assert dedupe_concepts(["  ", "a \t b", ""]) == ["a b"]


class TestExtraction:
    def response(self, problems=None, concepts=None, domain="NLP"):
        return json.dumps(
            {
                "concepts": concepts if concepts is not None else ["attention", "recall"],
                "open_problems": problems
                if problems is not None
                else ["Recall collapses at range [paper_1]"],
                "domain": domain,
            }
        )

    def test_happy_path(self):
        backend = MockBackend([{"match": CONCEPTS_MARK, "response": self.response()}])
        got = extract_concepts_and_problems(evidence_with([snip("paper_1", "summary one")]), backend)
        assert got.concepts == ["attention", "recall"]
        assert got.open_problems == ["Recall collapses at range [paper_1]"]
        assert got.domain_tag == "NLP"
        assert "[Source: paper_1] summary one" in backend.chat_calls[0].user_prompt

    def test_uncited_problem_dropped(self, caplog):
        backend = MockBackend(
            [
                {
                    "match": CONCEPTS_MARK,
                    "response": self.response(
                        problems=["No citation here", "Cited one [paper_1]"]
                    ),
                }
            ]
        )
        with caplog.at_level(logging.WARNING, logger="spark.ideagen"):
            got = extract_concepts_and_problems(
                evidence_with([snip("paper_1", "s")]), backend
            )
        assert got.open_problems == ["Cited one [paper_1]"]
        assert any("without a known source" in r.message for r in caplog.records)

    def test_unknown_source_citation_does_not_count(self):
        backend = MockBackend(
            [{"match": CONCEPTS_MARK, "response": self.response(problems=["Cites [paper_9]"])}]
        )
        with pytest.raises(ExtractionError):
            extract_concepts_and_problems(evidence_with([snip("paper_1", "s")]), backend)

    def test_no_concepts_fails(self):
        backend = MockBackend([{"match": CONCEPTS_MARK, "response": self.response(concepts=[])}])
        with pytest.raises(ExtractionError):
            extract_concepts_and_problems(evidence_with([snip("paper_1", "s")]), backend)

    def test_garbage_fails_after_repair(self):
        backend = MockBackend([{"match": CONCEPTS_MARK, "response": "no json"}])
        with pytest.raises(ExtractionError):
            extract_concepts_and_problems(evidence_with([snip("paper_1", "s")]), backend)
        assert len(backend.chat_calls) == 2

    def test_empty_evidence_rejected(self):
        with pytest.raises(UsageError):
            extract_concepts_and_problems(EvidenceSet(question="q"), MockBackend())


class TestIdeaPrompt:
    def test_includes_problem_and_concepts(self):
        req = build_idea_prompt("the problem", concept_set(), domain="ML systems")
        assert "Problem: the problem" in req.user_prompt
        assert "sparse attention, recall probes" in req.user_prompt
        assert "Domain: ML systems" in req.user_prompt

    def test_blank_domain_leaves_no_gap(self):
        req = build_idea_prompt("p", concept_set())
        assert "Domain:" not in req.user_prompt
        assert "\n\n\n" not in req.user_prompt

    def test_needs_concepts(self):
        with pytest.raises(UsageError):
            build_idea_prompt("p", ConceptSet(concepts=[], open_problems=[]))


class TestGenerateIdea:
    def request(self):
        return build_idea_prompt("the problem", concept_set())

    def test_parses_and_canonicalizes_concepts(self):
        backend = MockBackend(
            [{"match": IDEA_MARK, "response": idea_json(input_concepts=["SPARSE ATTENTION"])}]
        )
        idea = generate_idea(
            self.request(),
            backend,
            allowed_concepts=concept_set().concepts,
            idea_id="idea_1",
            evidence_ref="ev_abc",
            problem="the problem",
        )
        assert idea.input_concepts == ["sparse attention"]
        assert idea.idea_id == "idea_1"
        assert idea.generation == 0
        assert idea.wire_dict() == json.loads(idea_json(input_concepts=["sparse attention"]))

    def test_unknown_input_concept_is_validation_error(self):
        backend = MockBackend(
            [{"match": IDEA_MARK, "response": idea_json(input_concepts=["hallucinated"])}]
        )
        with pytest.raises(IdeaValidationError):
            generate_idea(self.request(), backend, concept_set().concepts, "idea_1")
        # schema was valid, so no repair retry happened
        assert len(backend.chat_calls) == 1

    def test_missing_field_retries_then_fails(self):
        broken = json.dumps({"title": "only a title"})
        backend = MockBackend([{"match": IDEA_MARK, "response": broken}])
        with pytest.raises(IdeaParseError):
            generate_idea(self.request(), backend, concept_set().concepts, "idea_1")
        assert len(backend.chat_calls) == 2

    def test_repair_retry_recovers(self):
        backend = MockBackend(
            [
                {"match": REPAIR_MARK, "response": idea_json()},
                {"match": IDEA_MARK, "response": "prose, not json"},
            ]
        )
        idea = generate_idea(self.request(), backend, concept_set().concepts, "idea_1")
        assert idea.title == "Recall-Aware Kernels"

    def test_overlong_title_rejected(self):
        backend = MockBackend([{"match": IDEA_MARK, "response": idea_json(title="t" * 301)}])
        with pytest.raises(IdeaParseError):
            generate_idea(self.request(), backend, concept_set().concepts, "idea_1")


class TestRefinementQuery:
    def test_title_plus_first_sentence(self):
        idea = IdeaProposal([], [], "p", "My Title", "a", "idea_1", "ev")
        got = refinement_query(idea, "Too vague about data. Also lacks a baseline.")
        assert got == "My Title: Too vague about data."

    def test_blank_reasoning_falls_back_to_title(self):
        idea = IdeaProposal([], [], "p", "My Title", "a", "idea_1", "ev")
        assert refinement_query(idea, "   ") == "My Title"


def rejection(utility=0.3, reasoning="Not grounded in prior measurements. Needs baselines."):
    return FilterDecision(idea_id="idea_1", reasoning=reasoning, decision="REJECT", utility=utility)


def parent_idea(generation=0):
    return IdeaProposal(
        input_concepts=["sparse attention"],
        new_concepts=["global token budget"],
        plan="p",
        title="Recall-Aware Kernels",
        abstract="We study recall collapse.",
        idea_id="idea_1",
        evidence_ref="ev_parent",
        generation=generation,
        problem="the problem",
    )


class TestRefineIdea:
    def xplor(self, embedder, entries, score=9):
        corpus, index = build_corpus(TWO_DOC_TEXTS, embedder)
        backend = MockBackend(
            [{"match": SCORE_MARK, "response": relevance_json("fresh finding", score)}] + entries,
            embedding_dim=DIM,
        )
        cfg = XplorConfig(max_iterations=1, min_evidence=1, min_distinct_sources=1)
        return Xplor(corpus, index, backend, embedder, config=cfg), backend

    def test_accepted_useful_idea_refuses_refinement(self, embedder):
        xplor, backend = self.xplor(embedder, [])
        accept = FilterDecision("idea_1", "fine", "ACCEPT", 0.9)
        with pytest.raises(UsageError):
            refine_idea(parent_idea(), accept, xplor, backend, concept_set(), "idea_2")

    def test_generation_limit(self, embedder):
        xplor, backend = self.xplor(embedder, [])
        with pytest.raises(RefinementLimitError):
            refine_idea(
                parent_idea(generation=2), rejection(), xplor, backend, concept_set(), "idea_2"
            )

    def test_refines_with_fresh_evidence(self, embedder):
        response = idea_json(
            title="Recall-Aware Kernels v2", input_concepts=["global token budget"]
        )
        xplor, backend = self.xplor(embedder, [{"match": REFINE_MARK, "response": response}])
        refined, evidence = refine_idea(
            parent_idea(), rejection(), xplor, backend, concept_set(), "idea_2"
        )
        assert refined.idea_id == "idea_2"
        assert refined.parent_id == "idea_1"
        assert refined.generation == 1
        assert refined.problem == "the problem"
        # prior new_concepts become legal inputs for the revision
        assert refined.input_concepts == ["global token budget"]
        assert evidence.snippets
        assert refined.evidence_ref == evidence.evidence_id

        prompt = next(c for c in backend.chat_calls if REFINE_MARK in c.user_prompt).user_prompt
        assert "Title: Recall-Aware Kernels" in prompt
        assert "Not grounded in prior measurements." in prompt
        assert "[Source: " in prompt

    def test_low_utility_accept_still_refines(self, embedder):
        response = idea_json(title="v2")
        xplor, backend = self.xplor(embedder, [{"match": REFINE_MARK, "response": response}])
        weak = FilterDecision("idea_1", "Marginal. Needs work.", "ACCEPT", 0.2)
        refined, _ = refine_idea(parent_idea(), weak, xplor, backend, concept_set(), "idea_2")
        assert refined.title == "v2"

    def test_keeps_parent_evidence_ref_when_retrieval_dry(self, embedder):
        response = idea_json(title="v2")
        xplor, backend = self.xplor(
            embedder, [{"match": REFINE_MARK, "response": response}], score=0
        )
        refined, evidence = refine_idea(
            parent_idea(), rejection(), xplor, backend, concept_set(), "idea_2"
        )
        assert evidence.snippets == []
        assert refined.evidence_ref == "ev_parent"
        prompt = next(c for c in backend.chat_calls if REFINE_MARK in c.user_prompt).user_prompt
        assert "Additional evidence:\nnone" in prompt
