"""Tests for trial records, cells and contingency tables."""
import random

import pytest

from app.models.trial import (
    Cell,
    ConfidenceBin,
    Condition,
    ContingencyTable,
    ParseStatus,
    TrialValidationError,
    binarize,
    build_contingency,
    category_midpoint,
)
from factories import make_cell, make_trial


class TestBinarize:
    """Test cases for confidence binarisation."""

    def test_threshold_is_inclusive(self):
        """Test that exactly 0.50 is HIGH."""
        assert binarize(0.50) == ConfidenceBin.HIGH

    def test_scale_minimum_is_low(self):
        """Test that 0.0 is LOW."""
        assert binarize(0.0) == ConfidenceBin.LOW

    def test_high_value(self):
        """Test that 0.95 is HIGH."""
        assert binarize(0.95) == ConfidenceBin.HIGH

    def test_just_below_threshold_is_low(self):
        """Test that 0.4999 is LOW."""
        assert binarize(0.4999) == ConfidenceBin.LOW

    @pytest.mark.parametrize("value", [-0.01, 1.01])
    def test_out_of_range_rejected(self, value):
        """Test that values outside [0, 1] are rejected."""
        with pytest.raises(TrialValidationError):
            binarize(value)


class TestTrialRecord:
    """Test cases for trial invariants."""

    def test_confidence_requires_ok_status(self):
        """Test that a confidence on a failed parse is rejected."""
        with pytest.raises(TrialValidationError):
            make_trial(confidence=0.5, parse_status=ParseStatus.CONFIDENCE_PARSE_FAIL)

    def test_ok_status_requires_confidence(self):
        """Test that OK without a confidence is rejected."""
        with pytest.raises(TrialValidationError):
            make_trial(confidence=None, parse_status=ParseStatus.OK)

    def test_confidence_range_enforced(self):
        """Test that confidence above 1 is rejected."""
        with pytest.raises(TrialValidationError):
            make_trial(confidence=1.2)

    def test_correctness_allowed_on_confidence_failure(self):
        """Test that correctness may be recorded when only the confidence failed."""
        trial = make_trial(confidence=None, correct=True)
        assert trial.parse_status == ParseStatus.CONFIDENCE_PARSE_FAIL
        assert trial.correct is True
        assert not trial.judged

    def test_negative_trace_length_rejected(self):
        """Test that trace_length must be nonnegative."""
        with pytest.raises(TrialValidationError):
            make_trial(trace_length=-1)

    def test_string_enums_are_coerced(self):
        """Test that string condition and status become enums."""
        trial = make_trial(condition="CAT", parse_status="OK")
        assert trial.condition == Condition.CAT
        assert trial.parse_status == ParseStatus.OK


class TestCell:
    """Test cases for cell construction."""

    def test_counts_derived_from_trials(self):
        """Test that from_trials computes n_total, n_parse_ok and n_correct."""
        cell = make_cell([0.9, 0.2, None, 0.7], [True, False, True, True])
        assert (cell.n_total, cell.n_parse_ok, cell.n_correct) == (4, 3, 2)

    def test_mixed_models_rejected(self):
        """Test that a cell cannot mix models."""
        trials = [make_trial(model_id="a"), make_trial(model_id="b")]
        with pytest.raises(TrialValidationError):
            Cell.from_trials(trials, model_id="a", condition=Condition.NUM)

    def test_stored_counts_must_match(self):
        """Test that inconsistent stored counts are rejected."""
        trial = make_trial()
        with pytest.raises(TrialValidationError):
            Cell(model_id="model-a", condition=Condition.NUM, trials=(trial,), n_total=2, n_parse_ok=1, n_correct=1)

    def test_empty_cell_with_explicit_identity(self):
        """Test that an empty cell is allowed when identified explicitly."""
        cell = Cell.from_trials([], model_id="m", condition=Condition.CAT)
        assert cell.n_total == 0


class TestContingency:
    """Test cases for the 2x2 table."""

    def test_single_trial_placement(self):
        """Test that a correct high-confidence trial lands in a."""
        assert build_contingency([make_trial(0.9, True)]).as_tuple() == (1, 0, 0, 0)

    def test_one_trial_per_cell(self):
        """Test hand-enumerated placements."""
        cell = make_cell([0.9, 0.9, 0.2, 0.2], [True, False, True, False])
        assert build_contingency(cell).as_tuple() == (1, 1, 1, 1)

    def test_all_high_saturated_cell(self):
        """Test the all-HIGH pattern with 350 of 500 correct."""
        cell = make_cell([0.95] * 500, [True] * 350 + [False] * 150)
        assert build_contingency(cell).as_tuple() == (350, 150, 0, 0)

    def test_empty_input(self):
        """Test that an empty input yields an all-zero table."""
        assert build_contingency([]) == ContingencyTable()

    def test_partition_excludes_failures_and_unjudged(self):
        """Test that a+b+c+d counts only judged parse-ok trials."""
        cell = make_cell([0.9, None, 0.3, 0.6], [True, False, None, False])
        table = build_contingency(cell)
        assert table.n == len(cell.judged_trials) == 2
        assert cell.unjudged_parse_ok == 1

    def test_permutation_invariance(self):
        """Test that trial order does not change the table."""
        rng = random.Random(3)
        confidences = [rng.random() for _ in range(200)]
        correct = [rng.random() < 0.6 for _ in range(200)]
        trials = list(make_cell(confidences, correct).trials)
        shuffled = trials[:]
        rng.shuffle(shuffled)
        assert build_contingency(trials) == build_contingency(shuffled)

    def test_negative_count_rejected(self):
        """Test that negative counts are invalid."""
        with pytest.raises(TrialValidationError):
            ContingencyTable(a=-1)


class TestCategoryMidpoint:
    """Test cases for categorical normalisation."""

    def test_midpoints(self):
        """Test lowest and highest class midpoints."""
        assert category_midpoint(0) == pytest.approx(0.05)
        assert category_midpoint(9) == pytest.approx(0.95)

    def test_upper_half_binarises_high(self):
        """Test that classes 5 and above land on the HIGH side."""
        assert binarize(category_midpoint(5)) == ConfidenceBin.HIGH
        assert binarize(category_midpoint(4)) == ConfidenceBin.LOW

    def test_out_of_range_class(self):
        """Test that class 10 is rejected."""
        with pytest.raises(TrialValidationError):
            category_midpoint(10)
