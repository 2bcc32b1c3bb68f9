import json
import logging

import pytest

from spark.backends import MockBackend
from spark.corpus import Chunk
from spark.errors import (
    FollowupGenerationError,
    PipelineIncompleteError,
    ScoringParseError,
    SynthesisError,
    UsageError,
)
from spark.search import FailingSearchClient, FixtureSearchClient
from spark.xplor import (
    EvidenceSet,
    EvidenceSnippet,
    Xplor,
    XplorConfig,
    _strip_sources_block,
    generate_followup_query,
    score_chunk_relevance,
    synthesize_answer,
)

from conftest import DIM, TWO_DOC_TEXTS, build_corpus, relevance_json

SCORE_MARK = "Summarize chunk relevance."
FOLLOWUP_MARK = "Generate specific follow-up query."
SYNTH_MARK = "Answer using ONLY context."
REPAIR_MARK = "Return only valid JSON."
DIFFER_MARK = "must be different from all of these"


def make_chunk(text="chunk body", cid="paper_1:0000"):
    return Chunk(id=cid, doc_id="paper_1", ordinal=0, char_start=0, char_end=len(text), text=text)


def snippet(cid, source, summary="s", score=8, iteration=1):
    return EvidenceSnippet(
        chunk_id=cid,
        source_id=source,
        source_kind="paper",
        summary=summary,
        score=score,
        iteration=iteration,
    )


class TestConfig:
    def test_defaults(self):
        cfg = XplorConfig()
        assert cfg.min_evidence == 5
        assert cfg.min_distinct_sources == 2
        assert cfg.max_iterations == 5
        assert cfg.inclusion_threshold == 6

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"min_evidence": 0},
            {"max_iterations": 0},
            {"mmr_select": -1},
            {"mmr_lambda": 1.5},
            {"scale_max": 0},
            {"inclusion_threshold": 11},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(UsageError):
            XplorConfig(**kwargs)


class TestScoreChunk:
    def test_parses_summary_and_score(self):
        backend = MockBackend([{"match": SCORE_MARK, "response": relevance_json("useful", 7)}])
        got = score_chunk_relevance("q", make_chunk(), backend)
        assert got.summary == "useful"
        assert got.score == 7
        assert got.chunk_id == "paper_1:0000"

    def test_rounds_float_scores(self):
        backend = MockBackend([{"match": SCORE_MARK, "response": relevance_json("s", 6.6)}])
        assert score_chunk_relevance("q", make_chunk(), backend).score == 7

    def test_clamps_out_of_range_with_warning(self, caplog):
        backend = MockBackend([{"match": SCORE_MARK, "response": relevance_json("s", 14)}])
        with caplog.at_level(logging.WARNING, logger="spark.xplor"):
            got = score_chunk_relevance("q", make_chunk(), backend)
        assert got.score == 10
        assert any("clamped" in r.message for r in caplog.records)

    def test_repair_retry_recovers(self):
        # first call yields prose, the retry (carrying the repair note) yields JSON
        backend = MockBackend(
            [
                {"match": REPAIR_MARK, "response": relevance_json("fixed", 5)},
                {"match": SCORE_MARK, "response": "not json at all"},
            ]
        )
        got = score_chunk_relevance("q", make_chunk(), backend)
        assert (got.summary, got.score) == ("fixed", 5)
        assert len(backend.chat_calls) == 2

    def test_unusable_json_raises(self):
        backend = MockBackend([{"match": SCORE_MARK, "response": '{"summary": "", "relevance": 3}'}])
        with pytest.raises(ScoringParseError):
            score_chunk_relevance("q", make_chunk(), backend)

    def test_boolean_score_rejected(self):
        backend = MockBackend([{"match": SCORE_MARK, "response": '{"summary": "s", "relevance": true}'}])
        with pytest.raises(ScoringParseError):
            score_chunk_relevance("q", make_chunk(), backend)

    def test_empty_chunk_rejected(self):
        with pytest.raises(UsageError):
            score_chunk_relevance("q", make_chunk(text="   "), MockBackend())


class TestFollowup:
    def test_takes_first_nonempty_line_unquoted(self):
        backend = MockBackend([{"match": FOLLOWUP_MARK, "response": '\n  "sharper query"  \nextra'}])
        assert generate_followup_query("q", ["s"], backend) == "sharper query"

    def test_retry_on_duplicate(self):
        backend = MockBackend(
            [
                {"match": DIFFER_MARK, "response": "fresh angle"},
                {"match": FOLLOWUP_MARK, "response": "stale query"},
            ]
        )
        got = generate_followup_query("q", ["s"], backend, issued=["stale query"])
        assert got == "fresh angle"
        assert len(backend.chat_calls) == 2

    def test_suffix_when_retry_also_duplicate(self):
        backend = MockBackend([{"match": FOLLOWUP_MARK, "response": "stale query"}])
        got = generate_followup_query("q", ["s"], backend, issued=["stale query"], next_iteration=4)
        assert got == "stale query (4)"

    def test_requires_summaries(self):
        with pytest.raises(UsageError):
            generate_followup_query("q", [], MockBackend())

    def test_empty_response_fails(self):
        backend = MockBackend([{"match": FOLLOWUP_MARK, "response": "\n\n"}])
        with pytest.raises(FollowupGenerationError):
            generate_followup_query("q", ["s"], backend)


class TestSynthesize:
    def evidence(self):
        ev = EvidenceSet(question="q")
        ev.snippets = [snippet("paper_1:0000", "paper_1"), snippet("search_1:0000", "search_1")]
        return ev

    def test_context_lines_and_citations(self):
        backend = MockBackend(
            [{"match": SYNTH_MARK, "response": "Claim [paper_1]. More [search_1]. Again [paper_1]."}]
        )
        got = synthesize_answer("q", self.evidence(), backend)
        assert got.cited_source_ids == ["paper_1", "search_1"]
        prompt = backend.chat_calls[0].user_prompt
        assert "[Source: paper_1] s (R: 8/10)" in prompt

    def test_unknown_citation_stripped(self, caplog):
        backend = MockBackend([{"match": SYNTH_MARK, "response": "Real [paper_1], fake [paper_9]."}])
        with caplog.at_level(logging.WARNING, logger="spark.xplor"):
            got = synthesize_answer("q", self.evidence(), backend)
        assert got.cited_source_ids == ["paper_1"]
        assert "[paper_9]" not in got.text
        assert any("unknown source" in r.message for r in caplog.records)

    def test_trailing_sources_block_ignored(self):
        reply = "Answer [search_1].\n\nSources:\n- [search_1] Some Title\n- [paper_1]"
        backend = MockBackend([{"match": SYNTH_MARK, "response": reply}])
        got = synthesize_answer("q", self.evidence(), backend)
        # paper_1 appears only in the list, so it is not an inline citation
        assert got.cited_source_ids == ["search_1"]
        assert got.text == "Answer [search_1]."

    def test_empty_evidence_rejected(self):
        with pytest.raises(UsageError):
            synthesize_answer("q", EvidenceSet(question="q"), MockBackend())

    def test_empty_response_fails(self):
        backend = MockBackend([{"match": SYNTH_MARK, "response": "   "}])
        with pytest.raises(SynthesisError):
            synthesize_answer("q", self.evidence(), backend)


class TestStripSourcesBlock:
    def test_strips_labeled_list(self):
        text = "Body [a].\nSources:\n- [a] First paper\n* [b] Second"
        assert _strip_sources_block(text) == "Body [a]."

    def test_strips_bare_tokens(self):
        assert _strip_sources_block("Body.\nSources:\n[a]\n[b]") == "Body."

    def test_strips_empty_block(self):
        assert _strip_sources_block("Body.\nSources:") == "Body."

    def test_keeps_prose_paragraph(self):
        text = "Body.\nSources:\nthese were found in the usual archives"
        assert _strip_sources_block(text) == text

    def test_no_block_untouched(self):
        assert _strip_sources_block("plain answer") == "plain answer"


def scripted_xplor(embedder, entries, texts=TWO_DOC_TEXTS, config=None, search_client=None):
    corpus, index = build_corpus(texts, embedder)
    backend = MockBackend(entries, embedding_dim=DIM)
    xplor = Xplor(
        corpus,
        index,
        chat_backend=backend,
        embed_backend=embedder,
        config=config or XplorConfig(),
        search_client=search_client,
    )
    return xplor, backend


class TestEvidenceLoop:
    def test_stops_after_one_iteration_when_satisfied(self, embedder):
        xplor, _ = scripted_xplor(
            embedder, [{"match": SCORE_MARK, "response": relevance_json("good", 9)}]
        )
        got = xplor.evidence_loop("how do sparse kernels fail?")
        assert got.iterations_used == 1
        assert len(got.snippets) >= 5
        assert got.distinct_sources() == {"paper_1", "paper_2"}
        assert got.queries_issued == ["how do sparse kernels fail?"]
        assert got.evidence_id.startswith("ev_")

    def test_zero_scores_run_all_iterations_empty(self, embedder):
        cfg = XplorConfig(max_iterations=3)
        xplor, backend = scripted_xplor(
            embedder,
            [
                {"match": SCORE_MARK, "response": relevance_json("nothing here", 0)},
                {"match": FOLLOWUP_MARK, "response": "zero query"},
            ],
            config=cfg,
        )
        got = xplor.evidence_loop("unanswerable question")
        assert got.iterations_used == 3
        assert got.snippets == []
        # one original + one follow-up per non-final iteration, deduplicated
        assert got.queries_issued[0] == "unanswerable question"
        assert len(got.queries_issued) == 3
        assert len(set(got.queries_issued)) == 3

    def test_threshold_filters_by_chunk_content(self, embedder):
        texts = {
            "paper_1": ("alpha signal paragraph. " * 30)[:600],
            "paper_2": ("beta noise paragraph. " * 30)[:600],
        }
        xplor, _ = scripted_xplor(
            embedder,
            [
                {"match": "alpha signal", "response": relevance_json("keep", 9)},
                {"match": "beta noise", "response": relevance_json("drop", 3)},
            ],
            texts=texts,
            config=XplorConfig(max_iterations=1, min_evidence=1, min_distinct_sources=1),
        )
        got = xplor.evidence_loop("question")
        assert got.snippets
        assert {s.summary for s in got.snippets} == {"keep"}
        assert {s.source_id for s in got.snippets} == {"paper_1"}

    def test_search_failure_logged_and_loop_continues(self, embedder, caplog):
        failing = FailingSearchClient()
        cfg = XplorConfig(max_iterations=2, min_evidence=50)
        xplor, _ = scripted_xplor(
            embedder,
            [
                {"match": SCORE_MARK, "response": relevance_json("good", 9)},
                {"match": FOLLOWUP_MARK, "response": "widen the net"},
            ],
            config=cfg,
            search_client=failing,
        )
        with caplog.at_level(logging.WARNING, logger="spark.xplor"):
            got = xplor.evidence_loop("question")
        assert failing.calls == 1
        assert got.iterations_used == 2
        assert got.snippets
        assert any("external search failed" in r.message for r in caplog.records)

    def test_chunk_scored_once_per_question(self, embedder):
        xplor, backend = scripted_xplor(
            embedder, [{"match": SCORE_MARK, "response": relevance_json("good", 9)}]
        )
        xplor.evidence_loop("the question")
        first_pass = sum(1 for c in backend.chat_calls if SCORE_MARK in c.user_prompt)
        xplor.evidence_loop("the question")
        second_pass = sum(1 for c in backend.chat_calls if SCORE_MARK in c.user_prompt)
        assert first_pass > 0
        assert second_pass == first_pass

    def test_single_source_never_satisfies_two_source_floor(self, embedder):
        cfg = XplorConfig(max_iterations=2)
        xplor, _ = scripted_xplor(
            embedder,
            [
                {"match": SCORE_MARK, "response": relevance_json("good", 9)},
                {"match": FOLLOWUP_MARK, "response": "another angle"},
            ],
            texts={"paper_1": TWO_DOC_TEXTS["paper_1"] * 2},
            config=cfg,
        )
        got = xplor.evidence_loop("question")
        assert got.iterations_used == 2
        assert got.distinct_sources() == {"paper_1"}
        assert len(got.snippets) >= 5

    def test_requires_corpus_or_search(self, embedder):
        from spark.corpus import Corpus
        from spark.index import VectorIndex

        xplor = Xplor(Corpus(), VectorIndex(), MockBackend(), embedder)
        with pytest.raises(UsageError):
            xplor.evidence_loop("question")

    def test_blank_question_rejected(self, embedder):
        xplor, _ = scripted_xplor(embedder, [])
        with pytest.raises(UsageError):
            xplor.evidence_loop("   ")


class TestExternalSearch:
    def client(self):
        return FixtureSearchClient.from_entries(
            [
                {
                    "match": "",
                    "documents": [
                        {
                            "title": "Found Paper",
                            "text": "found text " * 40,
                            "locator": "https://example.org/found",
                        }
                    ],
                }
            ]
        )

    def test_ingests_new_locators_once(self, embedder):
        xplor, _ = scripted_xplor(embedder, [], search_client=self.client())
        first = xplor.external_search("anything")
        assert [d.source_kind for d in first] == ["search"]
        assert first[0].id.startswith("search_")
        assert xplor.external_search("anything") == []

    def test_no_client_returns_nothing(self, embedder):
        xplor, _ = scripted_xplor(embedder, [])
        assert xplor.external_search("anything") == []

    def test_blank_query_rejected(self, embedder):
        xplor, _ = scripted_xplor(embedder, [], search_client=self.client())
        with pytest.raises(UsageError):
            xplor.external_search(" ")


class TestAnswer:
    def test_empty_evidence_marks_retrieval_incomplete(self, embedder):
        from spark.corpus import Corpus
        from spark.index import VectorIndex

        xplor = Xplor(
            Corpus(),
            VectorIndex(),
            MockBackend(),
            embedder,
            config=XplorConfig(max_iterations=2),
            search_client=FixtureSearchClient(),
        )
        with pytest.raises(PipelineIncompleteError) as info:
            xplor.answer("question")
        assert info.value.stage == "retrieval"

    def test_returns_evidence_and_cited_answer(self, embedder):
        xplor, _ = scripted_xplor(
            embedder,
            [
                {"match": SCORE_MARK, "response": relevance_json("good", 9)},
                {"match": SYNTH_MARK, "response": "It fails at range [paper_1]."},
            ],
        )
        evidence, answer = xplor.answer("how do sparse kernels fail?")
        assert evidence.snippets
        assert answer.cited_source_ids == ["paper_1"]


class TestEvidenceSet:
    def test_seal_depends_on_content(self):
        a = EvidenceSet(question="q", queries_issued=["q"], iterations_used=1).seal()
        b = EvidenceSet(question="q", queries_issued=["q"], iterations_used=1).seal()
        c = EvidenceSet(question="другой", queries_issued=["q"], iterations_used=1).seal()
        assert a.evidence_id == b.evidence_id
        assert a.evidence_id != c.evidence_id

    def test_round_trip(self):
        ev = EvidenceSet(question="q", queries_issued=["q", "q2"], iterations_used=2)
        ev.snippets = [snippet("paper_1:0000", "paper_1")]
        ev.seal()
        again = EvidenceSet.from_dict(json.loads(json.dumps(ev.to_dict())))
        assert again.to_dict() == ev.to_dict()
