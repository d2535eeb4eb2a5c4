from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msarl.errors import (
    DanglingCodeRequest,
    InvalidTranscript,
    MalformedAnswerLiteral,
    OrphanExecutionResult,
    TrailingContentAfterFinal,
    UnmarkedContent,
    UnterminatedCodeBlock,
)
from msarl.protocol import (
    CODE_REQUEST,
    EXECUTION_RESULT,
    FINAL_ANSWER,
    REASONING,
    Segment,
    Transcript,
    append_segment,
    error_sentinel,
    extract_final_answer,
    parse_result_sentinel,
    parse_transcript,
    render_transcript,
)


def kinds(t: Transcript) -> list[str]:
    return [s.kind for s in t.segments]


class TestParseGoldenFixtures:
    def test_sum_primes_segments(self, fixture_sum_primes_text):
        t = parse_transcript(fixture_sum_primes_text)
        assert t.count(REASONING) == 3
        assert t.count(CODE_REQUEST) == 2
        assert t.count(EXECUTION_RESULT) == 2
        assert t.count(FINAL_ANSWER) == 1
        assert t.terminated
        results = [s.text for s in t.segments if s.kind == EXECUTION_RESULT]
        assert results == ["[2, 3, 5, 7, 11, 13, 17, 19, 23, 29]", "129"]
        assert extract_final_answer(t) == 129

    def test_sum_squares_segments(self, fixture_sum_squares_text):
        t = parse_transcript(fixture_sum_squares_text)
        assert t.count(REASONING) == 4
        assert t.count(CODE_REQUEST) == 3
        assert t.count(EXECUTION_RESULT) == 3
        assert t.count(FINAL_ANSWER) == 1
        results = [s.text for s in t.segments if s.kind == EXECUTION_RESULT]
        assert results == ["[2, 3, 5, 7, 11]", "[4, 9, 25, 49, 121]", "208"]
        assert extract_final_answer(t) == 208

    def test_sum_squares_render_reparse(self, fixture_sum_squares_text):
        t = parse_transcript(fixture_sum_squares_text)
        assert parse_transcript(render_transcript(t)) == t

    def test_sum_primes_render_reparse(self, fixture_sum_primes_text):
        t = parse_transcript(fixture_sum_primes_text)
        assert parse_transcript(render_transcript(t)) == t

    def test_code_preserved_verbatim(self, fixture_sum_primes_text):
        t = parse_transcript(fixture_sum_primes_text)
        first_code = next(s for s in t.segments if s.kind == CODE_REQUEST)
        assert first_code.text.startswith("def first_n_primes(n):")
        assert "\n\nprint(first_n_primes(10))" in first_code.text  # blank line kept


class TestParseEdges:
    def test_minimal_final(self):
        t = parse_transcript("Reasoning Agent: The final answer is 7")
        assert kinds(t) == [REASONING, FINAL_ANSWER]
        assert t.terminated
        assert extract_final_answer(t) == 7

    def test_unterminated_code_block(self):
        with pytest.raises(UnterminatedCodeBlock):
            parse_transcript("Reasoning Agent: go\n[CODE_START]\nprint(1)")

    def test_stray_code_end(self):
        with pytest.raises(UnterminatedCodeBlock):
            parse_transcript("[CODE_END]")

    def test_orphan_execution_result(self):
        with pytest.raises(OrphanExecutionResult):
            parse_transcript("Sandbox execution result: 4")
        with pytest.raises(OrphanExecutionResult):
            parse_transcript("Reasoning Agent: hm\nSandbox execution result: 4")

    def test_dangling_code_request(self):
        text = "Reasoning Agent: go\n[CODE_START]\nprint(1)\n[CODE_END]\nReasoning Agent: hm"
        with pytest.raises(DanglingCodeRequest):
            parse_transcript(text)

    def test_dangling_at_eof_needs_truncation_flag(self):
        text = "Reasoning Agent: go\n[CODE_START]\nprint(1)\n[CODE_END]"
        with pytest.raises(DanglingCodeRequest):
            parse_transcript(text)
        t = parse_transcript(text, truncated=True)
        assert kinds(t) == [REASONING, CODE_REQUEST]
        assert t.truncated and not t.terminated

    def test_trailing_content_after_final(self):
        text = (
            "Reasoning Agent: The final answer is 5\n"
            "[CODE_START]\nprint(1)\n[CODE_END]\nSandbox execution result: 1"
        )
        with pytest.raises(TrailingContentAfterFinal):
            parse_transcript(text)

    def test_phrase_in_earlier_reasoning_is_inert(self):
        text = "Reasoning Agent: The final answer is 5\nReasoning Agent: wait, not sure"
        t = parse_transcript(text)
        assert not t.terminated

    def test_unmarked_leading_content(self):
        with pytest.raises(UnmarkedContent):
            parse_transcript("hello\nReasoning Agent: hi")

    def test_non_numeric_final_token(self):
        with pytest.raises(MalformedAnswerLiteral):
            parse_transcript("Reasoning Agent: The final answer is banana")

    def test_final_token_with_thousands_separator(self):
        t = parse_transcript("Reasoning Agent: The final answer is 1,234")
        assert extract_final_answer(t) == 1234

    def test_empty_input(self):
        t = parse_transcript("")
        assert t.segments == ()
        assert not t.terminated

    def test_multiline_reasoning_and_result(self):
        text = (
            "Reasoning Agent: first line\n"
            "second line\n"
            "[CODE_START]\nprint(1)\nprint(2)\n[CODE_END]\n"
            "Sandbox execution result: 1\n2"
        )
        t = parse_transcript(text)
        assert t.segments[0].text == "first line\nsecond line"
        assert t.segments[2].text == "1\n2"
        assert parse_transcript(render_transcript(t)) == t

    def test_annotation_lines_are_skipped(self):
        text = (
            "Reasoning Agent: go\n"
            "[CODE_START]\nprint(4)\n[CODE_END]\n"
            "Sandbox execution result: 4\n"
            "Strong reward to code agent(+1.0)\n"
            "Weak reward noted\n"
            "Penalty noted\n"
        )
        t = parse_transcript(text)
        assert t.segments[2].text == "4"

    def test_error_sentinel_round_trip(self):
        text = (
            "Reasoning Agent: go\n"
            "[CODE_START]\n1/0\n[CODE_END]\n"
            "Sandbox execution result: <error: runtime_error>"
        )
        t = parse_transcript(text)
        assert parse_result_sentinel(t.segments[2].text) == "runtime_error"
        assert parse_result_sentinel("4") is None
        assert error_sentinel("timeout") == "<error: timeout>"


class TestRender:
    def test_empty_transcript_renders_empty(self):
        assert render_transcript(Transcript()) == ""

    def test_unanswered_request_rejected(self):
        t = Transcript(
            (
                Segment(REASONING, "go", 0),
                Segment(CODE_REQUEST, "print(1)", 1),
            )
        )
        with pytest.raises(InvalidTranscript):
            render_transcript(t)

    def test_truncated_trailing_request_allowed(self):
        t = Transcript(
            (
                Segment(REASONING, "go", 0),
                Segment(CODE_REQUEST, "print(1)", 1),
            ),
            truncated=True,
        )
        text = render_transcript(t)
        assert parse_transcript(text, truncated=True) == t

    def test_marker_collision_rejected(self):
        t = Transcript((Segment(REASONING, "ok\n[CODE_START]", 0),))
        with pytest.raises(InvalidTranscript):
            render_transcript(t)

    def test_final_must_match_reasoning(self):
        t = Transcript(
            (
                Segment(REASONING, "The final answer is 5", 0),
                Segment(FINAL_ANSWER, "6", 1),
            )
        )
        with pytest.raises(InvalidTranscript):
            render_transcript(t)


# --- generative round-trip ----------------------------------------------------

_WORDS = ("alpha", "beta", "gamma", "delta", "count", "items", "so", "we", "check")


def random_transcript(rng: random.Random) -> Transcript:
    t = Transcript()
    for _ in range(rng.randrange(0, 6)):
        if rng.random() < 0.5:
            lines = [
                " ".join(rng.choices(_WORDS, k=rng.randrange(1, 5)))
                for _ in range(rng.randrange(1, 3))
            ]
            t = append_segment(t, REASONING, "\n".join(lines))
        else:
            body = "\n".join(f"print({rng.randrange(100)})" for _ in range(rng.randrange(1, 4)))
            t = append_segment(t, CODE_REQUEST, body)
            if rng.random() < 0.2:
                t = append_segment(
                    t, EXECUTION_RESULT, error_sentinel(rng.choice(["runtime_error", "timeout"]))
                )
            else:
                t = append_segment(
                    t, EXECUTION_RESULT, "\n".join(str(rng.randrange(1000)) for _ in range(rng.randrange(1, 3)))
                )
    if rng.random() < 0.6:
        value = rng.randrange(-50, 1000)
        t = append_segment(t, REASONING, f"The final answer is {value}")
        t = append_segment(t, FINAL_ANSWER, str(value))
    return t


def test_round_trip_seeded_sample():
    rng = random.Random(20240817)
    for _ in range(2000):
        t = random_transcript(rng)
        assert parse_transcript(render_transcript(t)) == t


@st.composite
def transcript_strategy(draw):
    rng = random.Random(draw(st.integers(min_value=0, max_value=2**32 - 1)))
    return random_transcript(rng)


@settings(max_examples=200, deadline=None)
@given(transcript_strategy())
def test_round_trip_property(t):
    assert parse_transcript(render_transcript(t)) == t


@settings(max_examples=200, deadline=None)
@given(transcript_strategy())
def test_alternation_property(t):
    parsed = parse_transcript(render_transcript(t))
    assert parsed.count(CODE_REQUEST) == parsed.count(EXECUTION_RESULT)
    for i, seg in enumerate(parsed.segments):
        if seg.kind == CODE_REQUEST:
            assert parsed.segments[i + 1].kind == EXECUTION_RESULT
