from __future__ import annotations

import pytest

from msarl.agents import Endpoint
from msarl.bands import (
    BANDS,
    MODE_REASONING_CODE,
    MODE_REASONING_ONLY,
    ExactMatchJudge,
    RemoteJudge,
    SampleRecord,
    band_of,
    banding_accuracies,
    collect_mode_samples,
    compare_modes,
    critic_judge,
    judge_many,
    load_sample_records,
    save_sample_records,
)
from msarl.errors import (
    JudgeUnparseable,
    MissingBandingAccuracy,
    MissingMode,
    OutOfRange,
)
from msarl.tasks import ChainSpec, generate_synthetic


class TestBandOf:
    @pytest.mark.parametrize(
        "accuracy, label",
        [
            (0.0, "Hard"),
            (0.5, "Hard"),
            (0.78, "Hard"),
            (0.781, "MediumHard"),
            (0.90, "MediumHard"),
            (0.93, "MediumEasy"),
            (0.95, "MediumEasy"),
            (0.951, "Easy"),
            (1.0, "Easy"),
        ],
    )
    def test_thresholds(self, accuracy, label):
        assert band_of(accuracy).label == label

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            band_of(-0.01)
        with pytest.raises(OutOfRange):
            band_of(1.01)

    def test_totality_on_grid(self):
        # Every accuracy on a 1e-3 grid maps to exactly one band.
        for i in range(0, 1001):
            accuracy = i / 1000
            matches = [b for b in BANDS if b.lower < accuracy <= b.upper]
            assert len(matches) == 1
            assert band_of(accuracy) == matches[0]


# Per-band fixture: 20 problems, 5 samples per mode per problem; r_code loses
# exactly one correct sample on the first `deficit` problems of the band.
GAP_TARGETS = {"Hard": 0.15, "MediumHard": 0.12, "MediumEasy": 0.08, "Easy": 0.06}
BAND_ANCHORS = {"Hard": 0.5, "MediumHard": 0.85, "MediumEasy": 0.92, "Easy": 0.97}


def build_gap_fixture(n_problems=20, n_samples=5):
    records, accuracies = [], {}
    for label, gap in GAP_TARGETS.items():
        deficit = round(gap * n_problems * n_samples)
        for i in range(n_problems):
            pid = f"{label.lower()}-{i:02d}"
            accuracies[pid] = BAND_ANCHORS[label]
            for s in range(n_samples):
                records.append(
                    SampleRecord(pid, MODE_REASONING_ONLY, s, correct=s < 4)
                )
            correct_code = 3 if i < deficit else 4
            for s in range(n_samples):
                records.append(
                    SampleRecord(pid, MODE_REASONING_CODE, s, correct=s < correct_code)
                )
    return records, accuracies


class TestCompareModes:
    def test_reproduces_constructed_gaps(self):
        records, accuracies = build_gap_fixture()
        report = compare_modes(records, accuracies)
        assert report.gaps["Hard"] == pytest.approx(0.15, abs=1e-4)
        assert report.gaps["MediumHard"] == pytest.approx(0.12, abs=1e-4)
        assert report.gaps["Easy"] == pytest.approx(0.06, abs=1e-4)
        assert report.gaps["MediumEasy"] == pytest.approx(0.08, abs=1e-4)

    def test_identical_modes_give_zero_gaps(self):
        records, accuracies = [], {}
        for i in range(6):
            pid = f"p{i}"
            accuracies[pid] = 0.5
            for mode in (MODE_REASONING_ONLY, MODE_REASONING_CODE):
                for s in range(5):
                    records.append(SampleRecord(pid, mode, s, correct=s % 2 == 0))
        report = compare_modes(records, accuracies)
        assert report.gaps["Hard"] == pytest.approx(0.0)

    def test_gap_antisymmetry(self):
        records, accuracies = build_gap_fixture(n_problems=5)
        swapped = [
            SampleRecord(
                r.problem_id,
                MODE_REASONING_CODE if r.mode == MODE_REASONING_ONLY else MODE_REASONING_ONLY,
                r.sample_index,
                r.correct,
                r.trace,
            )
            for r in records
        ]
        report = compare_modes(records, accuracies)
        mirrored = compare_modes(swapped, accuracies)
        for label, gap in report.gaps.items():
            if gap is None:
                assert mirrored.gaps[label] is None
            else:
                assert mirrored.gaps[label] == pytest.approx(-gap)

    def test_manual_three_problem_fixture(self):
        accuracies = {"a": 0.5, "b": 0.85, "c": 0.85}
        records = []
        # a: r_only 1.0 (2/2), r_code 0.5 (1/2)
        records += [SampleRecord("a", MODE_REASONING_ONLY, s, True) for s in range(2)]
        records += [SampleRecord("a", MODE_REASONING_CODE, 0, True), SampleRecord("a", MODE_REASONING_CODE, 1, False)]
        # b: r_only 0.5, r_code 0.5 ; c: r_only 0.0, r_code 1.0
        records += [SampleRecord("b", MODE_REASONING_ONLY, 0, True), SampleRecord("b", MODE_REASONING_ONLY, 1, False)]
        records += [SampleRecord("b", MODE_REASONING_CODE, 0, False), SampleRecord("b", MODE_REASONING_CODE, 1, True)]
        records += [SampleRecord("c", MODE_REASONING_ONLY, s, False) for s in range(2)]
        records += [SampleRecord("c", MODE_REASONING_CODE, s, True) for s in range(2)]
        report = compare_modes(records, accuracies)
        assert report.gaps["Hard"] == pytest.approx(1.0 - 0.5)
        assert report.gaps["MediumHard"] == pytest.approx(0.25 - 0.75)
        assert report.gaps["Easy"] is None  # empty band reports null, not zero

    def test_empty_band_rows_are_null(self):
        records, accuracies = build_gap_fixture(n_problems=2)
        report = compare_modes(
            [r for r in records if r.problem_id.startswith("hard")],
            accuracies,
        )
        easy_rows = [r for r in report.rows if r.band == "Easy"]
        assert all(r.mean_rate is None and r.n_problems == 0 for r in easy_rows)

    def test_missing_mode(self):
        records = [SampleRecord("p", MODE_REASONING_ONLY, 0, True)]
        with pytest.raises(MissingMode):
            compare_modes(records, {"p": 0.5})

    def test_missing_banding_accuracy(self):
        records = [
            SampleRecord("p", MODE_REASONING_ONLY, 0, True),
            SampleRecord("p", MODE_REASONING_CODE, 0, True),
        ]
        with pytest.raises(MissingBandingAccuracy):
            compare_modes(records, {})

    def test_csv_shape(self):
        records, accuracies = build_gap_fixture(n_problems=5)
        csv_text = compare_modes(records, accuracies).to_csv()
        lines = csv_text.strip().splitlines()
        assert lines[0] == "band,mode,mean,gap"
        assert len(lines) == 1 + len(BANDS) * 2


class TestBandingAccuracies:
    def test_accuracy_per_problem(self):
        records = [SampleRecord("p", MODE_REASONING_ONLY, s, correct=s < 3) for s in range(4)]
        assert banding_accuracies(records) == {"p": 0.75}


class TestJudges:
    def test_exact_match_valid(self):
        verdict = critic_judge("steps...\nThe final answer is 208", 208, ExactMatchJudge())
        assert verdict.valid

    def test_exact_match_invalid(self):
        assert not critic_judge("The final answer is 207", 208, ExactMatchJudge()).valid
        assert not critic_judge("no conclusion here", 208, ExactMatchJudge()).valid

    def test_remote_judge_parses_leading_token(self):
        def completer(request, endpoint):
            return "VALID — pathway sound"

        judge = RemoteJudge(Endpoint(url="http://stub.invalid"), completer=completer)
        verdict = judge.judge("trace", 208)
        assert verdict.valid

    def test_remote_judge_invalid(self):
        judge = RemoteJudge(
            Endpoint(url="http://stub.invalid"),
            completer=lambda req, ep: "INVALID: skipped a step",
        )
        assert not judge.judge("trace", 208).valid

    def test_remote_judge_unparseable(self):
        judge = RemoteJudge(
            Endpoint(url="http://stub.invalid"), completer=lambda req, ep: "maybe?"
        )
        with pytest.raises(JudgeUnparseable):
            judge.judge("trace", 208)

    def test_judge_many_preserves_order(self):
        judge = ExactMatchJudge()
        traces = [(f"The final answer is {i}", i if i % 2 == 0 else i + 1) for i in range(8)]
        verdicts = judge_many(traces, judge, parallelism=4)
        assert [v.valid for v in verdicts] == [i % 2 == 0 for i in range(8)]


class TestCollectModeSamples:
    def test_stubbed_collection_counts(self):
        problem = generate_synthetic(ChainSpec("first_n_primes", 3))
        replies = iter(
            [f"The final answer is {problem.gold_answer}", "The final answer is 0"] * 5
        )

        def completer(request, endpoint):
            return next(replies)

        records = collect_mode_samples(
            [problem],
            Endpoint(url="http://stub.invalid"),
            n=5,
            completer=completer,
        )
        assert len(records) == 10
        assert {r.mode for r in records} == {MODE_REASONING_ONLY, MODE_REASONING_CODE}
        assert all(r.sample_index < 5 for r in records)
        assert sum(r.correct for r in records) == 5

    def test_mode_prompts_differ(self):
        problem = generate_synthetic(ChainSpec("first_n_primes", 3))
        prompts = []

        def completer(request, endpoint):
            prompts.append(request.messages[0][1])
            return "The final answer is 0"

        collect_mode_samples(
            [problem], Endpoint(url="http://stub.invalid"), n=1, completer=completer
        )
        assert "Do not write or mention any code" in prompts[0]
        assert "[CODE_START]" in prompts[1]


class TestPersistence:
    def test_round_trip(self, tmp_path):
        records, _ = build_gap_fixture(n_problems=2)
        path = tmp_path / "records.jsonl"
        save_sample_records(records, path)
        assert load_sample_records(path) == records
