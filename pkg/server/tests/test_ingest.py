"""Tests for trial log reading, writing and cell grouping."""
import json
import logging
from dataclasses import replace

import pytest

from app.models.trial import Condition, ParseStatus
from app.services.ingest import (
    TrialFileError,
    TrialFormat,
    find_duplicates,
    group_cells,
    load_items,
    read_trials,
    record_to_dict,
    write_trials,
)
from app.services.synthgen import GenSpec, generate_run
from factories import make_trial


def _trial_line(item_id: str, **overrides) -> str:
    data = record_to_dict(make_trial(item_id=item_id))
    data.update(overrides)
    return json.dumps(data)


class TestRoundTrip:
    """Test cases for write-then-read fidelity."""

    @pytest.mark.parametrize("fmt", [TrialFormat.JSONL, TrialFormat.CSV])
    def test_synthetic_run_survives(self, tmp_path, fmt):
        """Test that a written run reads back as the same records."""
        spec = GenSpec(
            n=30, accuracy=0.6, ceiling_mass=0.4, parse_fail_rate_correct=0.2,
            planted_logprob_r2=0.5, planted_trace_rho=-0.3, seed=5,
        )
        records = generate_run(spec, models=2, conditions=(Condition.NUM, Condition.CAT))
        path = tmp_path / f"trials.{fmt.value}"

        assert write_trials(records, path, fmt) == len(records)
        batch = read_trials(path, fmt)

        assert batch.errors == []
        assert batch.records == records

    @pytest.mark.parametrize("fmt", [TrialFormat.JSONL, TrialFormat.CSV])
    def test_failed_request_survives(self, tmp_path, fmt):
        """Test that a transport failure with an empty response reads back unchanged."""
        failed = replace(
            make_trial(None, None, parse_status=ParseStatus.ANSWER_PARSE_FAIL),
            raw_response="",
        )
        path = tmp_path / f"failed.{fmt.value}"
        write_trials([failed, make_trial(item_id="q2")], path, fmt)

        batch = read_trials(path, fmt)

        assert batch.errors == []
        assert batch.records[0] == failed
        assert batch.records[0].raw_response == ""

    def test_csv_blank_question_kept(self, tmp_path):
        """Test that an empty required text cell is read as an empty string."""
        record = replace(make_trial(), question="")
        path = tmp_path / "blank.csv"
        write_trials([record], path, TrialFormat.CSV)

        assert read_trials(path, TrialFormat.CSV).records == [record]

    def test_absent_optionals_omitted(self):
        """Test that None fields are left out of the canonical dict."""
        data = record_to_dict(make_trial(confidence=None, correct=None))
        assert "confidence" not in data
        assert "correct" not in data
        assert data["parse_status"] == ParseStatus.CONFIDENCE_PARSE_FAIL.value

    def test_canonical_field_order(self):
        """Test that serialisation follows the record field order."""
        keys = list(record_to_dict(make_trial(logprob_mean=-0.5)))
        assert keys[:4] == ["run_id", "model_id", "condition", "item_id"]


class TestReadValidation:
    """Test cases for rejecting malformed input."""

    def test_out_of_range_confidence_rejected(self, tmp_path):
        """Test that confidence 1.2 is reported with its line number."""
        lines = [_trial_line(f"q{i}") for i in range(199)] + [_trial_line("bad", confidence=1.2)]
        path = tmp_path / "trials.jsonl"
        path.write_text("\n".join(lines) + "\n")

        batch = read_trials(path)
        assert len(batch.records) == 199
        assert [e.line for e in batch.errors] == [200]

    def test_bad_lines_at_limit_are_skipped(self, tmp_path, caplog):
        """Test that exactly 1% bad lines is tolerated with warnings."""
        lines = [_trial_line(f"q{i}") for i in range(198)] + ["{not json", "[1, 2]"]
        path = tmp_path / "trials.jsonl"
        path.write_text("\n".join(lines) + "\n")

        with caplog.at_level(logging.WARNING, logger="app.services.ingest"):
            batch = read_trials(path)
        assert len(batch.records) == 198
        assert len(batch.errors) == 2
        assert "skipped line 199" in caplog.text

    def test_too_many_bad_lines(self, tmp_path):
        """Test that more than 1% bad lines fails the read."""
        lines = [_trial_line(f"q{i}") for i in range(197)] + ["{", "{", "{"]
        path = tmp_path / "trials.jsonl"
        path.write_text("\n".join(lines) + "\n")

        with pytest.raises(TrialFileError) as exc_info:
            read_trials(path)
        assert len(exc_info.value.errors) == 3

    def test_confidence_without_ok_status(self, tmp_path):
        """Test that a confidence on a failed parse is a bad line."""
        path = tmp_path / "trials.jsonl"
        path.write_text(_trial_line("q1", parse_status="CONFIDENCE_PARSE_FAIL") + "\n")
        with pytest.raises(TrialFileError):
            read_trials(path)

    def test_unknown_field_rejected(self, tmp_path):
        """Test that extra keys are not silently accepted."""
        path = tmp_path / "trials.jsonl"
        path.write_text(_trial_line("q1", temperature=0.7) + "\n")
        with pytest.raises(TrialFileError):
            read_trials(path)

    def test_blank_lines_ignored(self, tmp_path):
        """Test that blank lines count neither as records nor errors."""
        path = tmp_path / "trials.jsonl"
        path.write_text(_trial_line("q1") + "\n\n   \n" + _trial_line("q2") + "\n")
        batch = read_trials(path)
        assert [r.item_id for r in batch.records] == ["q1", "q2"]

    def test_missing_file(self, tmp_path):
        """Test that a missing file raises TrialFileError."""
        with pytest.raises(TrialFileError):
            read_trials(tmp_path / "absent.jsonl")


class TestCsvHeader:
    """Test cases for the flat CSV view."""

    def test_missing_required_column(self, tmp_path):
        """Test that a header without seed is rejected."""
        path = tmp_path / "trials.csv"
        path.write_text(
            "run_id,model_id,condition,item_id,question,gold_aliases,raw_response,parse_status\n"
            "r,m,NUM,q1,Q?,a,Answer: a,ANSWER_PARSE_FAIL\n"
        )
        with pytest.raises(TrialFileError, match="missing"):
            read_trials(path, "csv")

    def test_unknown_column(self, tmp_path):
        """Test that a column outside the schema is rejected."""
        path = tmp_path / "trials.csv"
        path.write_text(
            "run_id,model_id,condition,item_id,question,gold_aliases,raw_response,parse_status,seed,notes\n"
            "r,m,NUM,q1,Q?,a,Answer: a,ANSWER_PARSE_FAIL,42,hi\n"
        )
        with pytest.raises(TrialFileError, match="unknown"):
            read_trials(path, "csv")

    def test_aliases_split_and_bool_parsed(self, tmp_path):
        """Test alias splitting and correctness parsing."""
        path = tmp_path / "trials.csv"
        path.write_text(
            "run_id,model_id,condition,item_id,question,gold_aliases,raw_response,"
            "parsed_answer,correct,confidence,parse_status,seed\n"
            "r,m,NUM,q1,Q?,JFK|John F. Kennedy,Answer: JFK. Confidence: 90%,JFK,true,0.9,OK,42\n"
        )
        record = read_trials(path, "csv").records[0]
        assert record.gold_aliases == ("JFK", "John F. Kennedy")
        assert record.correct is True
        assert record.confidence == 0.9
        assert record.seed == 42


class TestGrouping:
    """Test cases for cell grouping."""

    def test_fourteen_cells(self):
        """Test that 7 models x 2 conditions give 14 sorted cells."""
        spec = GenSpec(n=20, accuracy=0.5, ceiling_mass=0.5)
        records = generate_run(spec, models=7, conditions=("NUM", "CAT"))
        cells = group_cells(records)

        assert len(cells) == 14
        assert [c.key for c in cells] == sorted(c.key for c in cells)
        assert sum(c.n_total for c in cells) == len(records)

    def test_input_order_kept(self):
        """Test that trials stay in input order within a cell."""
        trials = [make_trial(item_id=f"q{i}") for i in (3, 1, 2)]
        cell = group_cells(trials)[0]
        assert [t.item_id for t in cell.trials] == ["q3", "q1", "q2"]

    def test_duplicates_kept_with_warning(self, caplog):
        """Test that duplicate items are retained and reported."""
        trials = [make_trial(item_id="q1"), make_trial(item_id="q1"), make_trial(item_id="q2")]
        assert find_duplicates(trials) == [("model-a", "NUM", "q1")]

        with caplog.at_level(logging.WARNING, logger="app.services.ingest"):
            cells = group_cells(trials)
        assert cells[0].n_total == 3
        assert "Duplicate trial" in caplog.text


class TestLoadItems:
    """Test cases for the items file."""

    def test_valid_items(self, tmp_path):
        """Test that item lines are parsed in order."""
        path = tmp_path / "items.jsonl"
        path.write_text(
            '{"item_id": "q1", "question": "Capital of France?", "gold_aliases": ["Paris"]}\n'
            '{"item_id": "q2", "question": "2+2?", "gold_aliases": ["4", "four"]}\n'
        )
        items = load_items(path)
        assert [i.item_id for i in items] == ["q1", "q2"]
        assert items[1].gold_aliases == ["4", "four"]

    def test_item_without_aliases(self, tmp_path):
        """Test that an empty alias list is rejected."""
        path = tmp_path / "items.jsonl"
        path.write_text('{"item_id": "q1", "question": "Q?", "gold_aliases": []}\n')
        with pytest.raises(TrialFileError):
            load_items(path)
