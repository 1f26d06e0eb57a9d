"""Tests for the validity screening protocol."""
import itertools
import math
from statistics import NormalDist

import numpy as np
import pytest

from app.models.trial import Condition, ContingencyTable, build_contingency
from app.services.config import ScreeningConfig
from app.services.screening import (
    InsufficientDataError,
    StepOutcome,
    Tier,
    assess_degeneracy,
    compute_indices,
    degeneracy_check,
    point_biserial,
    screen_cell,
    wilson_interval,
)
from factories import cell_from_table, make_cell, make_trial

FAST = ScreeningConfig(bootstrap_resamples=200)


def closed_form_wilson(k, n, level=0.95):
    z = NormalDist().inv_cdf((1 + level) / 2)
    p = k / n
    denominator = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denominator
    half = (z / denominator) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


class TestWilsonInterval:
    """Test cases for the Wilson score interval."""

    def test_zero_successes(self):
        """Test (0, 100): lower 0 and upper z^2 / (n + z^2)."""
        lower, upper = wilson_interval(0, 100)
        z = 1.959963984540054
        assert lower == 0.0
        assert upper == pytest.approx(z * z / (100 + z * z), abs=1e-9)
        assert upper == pytest.approx(0.0370, abs=1e-4)

    def test_all_successes(self):
        """Test (100, 100) mirrors the zero case."""
        lower, upper = wilson_interval(100, 100)
        assert lower == pytest.approx(0.9630, abs=1e-4)
        assert upper == 1.0

    def test_half(self):
        """Test (50, 100) is symmetric about 0.5."""
        lower, upper = wilson_interval(50, 100)
        assert lower == pytest.approx(0.4038, abs=1e-4)
        assert lower + upper == pytest.approx(1.0, abs=1e-12)

    def test_matches_closed_form_oracle(self):
        """Test 1000 random (k, n) pairs against an independent evaluation."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 2000))
            k = int(rng.integers(0, n + 1))
            lower, upper = wilson_interval(k, n)
            expected_lower, expected_upper = closed_form_wilson(k, n)
            assert abs(lower - expected_lower) < 1e-9
            assert abs(upper - expected_upper) < 1e-9
            assert lower <= k / n <= upper

    def test_zero_n_rejected(self):
        """Test that n = 0 is routed to insufficiency."""
        with pytest.raises(InsufficientDataError):
            wilson_interval(0, 0)


class TestDegeneracy:
    """Test cases for the degeneracy pre-check."""

    def test_constant_signal(self):
        """Test that 524 identical confidences are degenerate."""
        cell = make_cell([0.95] * 524, [True] * 300 + [False] * 224)
        verdict = degeneracy_check(cell)
        assert verdict is not None
        assert verdict.distinct_values == 1
        assert any("distinct_values" in t for t in verdict.triggers)

    def test_one_sided_binarisation(self):
        """Test 96% HIGH with several distinct values is degenerate."""
        confidences = [0.9, 0.8, 0.7] * 160 + [0.2] * 20
        cell = make_cell(confidences, [True] * 500)
        verdict = degeneracy_check(cell)
        assert verdict is not None
        assert verdict.distinct_values == 4
        assert verdict.max_share == pytest.approx(0.96)

    def test_uniform_spread_not_degenerate(self):
        """Test that a spread over 0.1..0.9 passes."""
        confidences = [round(0.1 * k, 1) for k in range(1, 10)] * 20
        cell = make_cell(confidences, [True, False] * 90)
        assert degeneracy_check(cell) is None

    def test_float_noise_does_not_inflate_distinct_count(self):
        """Test that values equal to 6 decimals count once."""
        cell = make_cell([0.7, 0.7 + 1e-9, 0.3, 0.3 - 1e-9], [True, False, True, False])
        assert assess_degeneracy(cell).distinct_values == 2

    def test_no_parse_ok_trials(self):
        """Test that a cell without parse-ok trials cannot be assessed."""
        cell = make_cell([None, None], [True, False])
        with pytest.raises(InsufficientDataError):
            assess_degeneracy(cell)


class TestComputeIndices:
    """Test cases for L, Fp, RBS and TRIN."""

    def test_saturated_pattern(self):
        """Test (350, 150, 0, 0): L = 1, Fp = 0, RBS = 0, TRIN = 1."""
        indices = compute_indices(ContingencyTable(350, 150, 0, 0), FAST)
        assert indices.L.value == 1.0
        assert indices.Fp.value == 0.0
        assert indices.RBS.value == 0.0
        assert indices.TRIN.value == 1.0

    def test_symmetric_table(self):
        """Test (5, 5, 5, 5): everything at one half, RBS zero."""
        indices = compute_indices(ContingencyTable(5, 5, 5, 5), FAST)
        assert indices.L.value == 0.5
        assert indices.Fp.value == 0.5
        assert indices.RBS.value == pytest.approx(0.0, abs=1e-12)
        assert indices.TRIN.value == 0.5

    def test_undefined_lie_scale(self):
        """Test (10, 0, 90, 0): L undefined, Fp 0.9, TRIN 0.9."""
        indices = compute_indices(ContingencyTable(10, 0, 90, 0), FAST)
        assert not indices.L.defined
        assert indices.Fp.value == pytest.approx(0.9)
        assert indices.TRIN.value == pytest.approx(0.9)
        assert not indices.RBS.defined

    def test_rbs_identity(self):
        """Test RBS = Fp - (1 - L) across random tables."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b, c, d = (int(v) for v in rng.integers(1, 60, size=4))
            indices = compute_indices(ContingencyTable(a, b, c, d), FAST)
            assert indices.RBS.value == pytest.approx(
                indices.Fp.value - (1 - indices.L.value), abs=1e-12
            )

    def test_intervals_bracket_points(self):
        """Test lower <= point <= upper for every defined index."""
        rng = np.random.default_rng(6)
        for _ in range(50):
            a, b, c, d = (int(v) for v in rng.integers(0, 40, size=4))
            indices = compute_indices(ContingencyTable(a, b, c, d), FAST)
            for estimate in (indices.L, indices.Fp, indices.RBS, indices.TRIN):
                if estimate.defined and estimate.lower is not None:
                    assert estimate.lower <= estimate.value <= estimate.upper

    def test_doubling_preserves_points(self):
        """Test that duplicating every trial leaves point estimates unchanged."""
        single = compute_indices(ContingencyTable(12, 7, 9, 30), FAST)
        double = compute_indices(ContingencyTable(24, 14, 18, 60), FAST)
        for name in ("L", "Fp", "RBS", "TRIN"):
            assert getattr(single, name).value == pytest.approx(getattr(double, name).value, abs=1e-12)

    def test_rbs_bootstrap_is_seeded(self):
        """Test that equal seeds give equal RBS intervals."""
        table = ContingencyTable(30, 10, 20, 15)
        first = compute_indices(table, FAST).RBS
        second = compute_indices(table, FAST).RBS
        assert (first.lower, first.upper) == (second.lower, second.upper)


class TestPointBiserial:
    """Test cases for the point-biserial diagnostic."""

    def test_perfect_separation(self):
        """Test r = 1 when correct trials sit at 1.0 and incorrect at 0.0."""
        trials = [make_trial(1.0, True), make_trial(1.0, True), make_trial(0.0, False), make_trial(0.0, False)]
        assert point_biserial(trials).r == pytest.approx(1.0)

    def test_constant_confidence_undefined(self):
        """Test that zero confidence variance is undefined."""
        trials = [make_trial(0.7, True), make_trial(0.7, False), make_trial(0.7, True)]
        assert point_biserial(trials) is None

    @pytest.mark.parametrize("value", [0.1, 0.3, 0.7, 0.9, 0.95])
    def test_constant_confidence_undefined_at_any_level(self, value):
        """Test that a constant confidence is undefined whatever its rounding noise."""
        trials = [make_trial(value, True), make_trial(value, False), make_trial(value, True), make_trial(value, False)]
        assert point_biserial(trials) is None

    def test_hand_computed_value(self):
        """Test conf=[0.9, 0.8, 0.3, 0.2] with correct=[1, 1, 0, 0]."""
        trials = [make_trial(0.9, True), make_trial(0.8, True), make_trial(0.3, False), make_trial(0.2, False)]
        result = point_biserial(trials)
        assert result.r == pytest.approx(0.6 / math.sqrt(0.37))
        assert result.n == 4
        assert result.lower < result.r < result.upper

    def test_single_class_undefined(self):
        """Test that all-correct input is undefined."""
        trials = [make_trial(c, True) for c in (0.2, 0.5, 0.9)]
        assert point_biserial(trials) is None


class TestScreenCell:
    """Test cases for the ordered screening sequence."""

    def test_degenerate_replica_is_invalid_at_step_one(self):
        """Test an all-HIGH cell with L = 1 and TRIN = 1."""
        confidences = [0.95, 0.99, 1.0, 0.9] * 131
        cell = make_cell(confidences, [True, False] * 262)
        report = screen_cell(cell, FAST)
        assert report.tier == Tier.INVALID
        assert report.degenerate is True
        assert report.decisive_step == 1
        assert report.indices.L.value == 1.0
        assert report.indices.TRIN.value == 1.0

    def test_small_cell_count_is_insufficient(self):
        """Test (4, 100, 100, 100) stops at step 2."""
        report = screen_cell(cell_from_table(4, 100, 100, 100), FAST)
        assert report.tier == Tier.INSUFFICIENT
        assert report.decisive_step == 2

    def test_insufficiency_grid(self):
        """Test every table over {0, 4, 5, 100}^4 with a cell count below 5."""
        config = ScreeningConfig(bootstrap_resamples=50)
        for a, b, c, d in itertools.product((0, 4, 5, 100), repeat=4):
            if min(a, b, c, d) >= 5:
                continue
            cell = cell_from_table(a, b, c, d)
            report = screen_cell(cell, config)
            if report.degenerate:
                assert report.tier == Tier.INVALID
            else:
                assert report.tier == Tier.INSUFFICIENT, (a, b, c, d)

    def test_clean_cell_is_valid(self):
        """Test (100, 10, 10, 100) with spread confidences."""
        report = screen_cell(cell_from_table(100, 10, 10, 100), FAST)
        assert report.tier == Tier.VALID
        assert report.decisive_step is None

    def test_inverted_cell_is_invalid_at_fp(self):
        """Test that correct answers disclaimed at low confidence trip Fp."""
        report = screen_cell(cell_from_table(20, 60, 80, 20), FAST)
        assert report.tier == Tier.INVALID
        assert report.decisive_step == 4

    def test_lie_scale_violation(self):
        """Test that errors almost never flagged trip L at step 5."""
        report = screen_cell(cell_from_table(80, 190, 40, 5), FAST)
        assert report.indices.L.value == pytest.approx(190 / 195)
        assert report.tier == Tier.INVALID
        assert report.decisive_step == 5

    def test_point_violation_without_bound_is_indeterminate(self):
        """Test Fp above 0.50 with a Wilson lower bound at or below 0.40."""
        report = screen_cell(cell_from_table(5, 10, 6, 10), FAST)
        fp_step = report.steps[3]
        assert fp_step.name == "Fp"
        assert fp_step.outcome == StepOutcome.INDETERMINATE
        assert report.tier == Tier.INDETERMINATE

    def test_step_audit_is_complete_and_ordered(self):
        """Test that all seven steps are recorded in order."""
        report = screen_cell(cell_from_table(4, 100, 100, 100), FAST)
        assert [s.number for s in report.steps] == [1, 2, 3, 4, 5, 6, 7]
        assert [s.name for s in report.steps] == [
            "degeneracy", "cell_counts", "TRIN", "Fp", "L", "RBS", "point_biserial",
        ]

    def test_empty_cell_is_insufficient(self):
        """Test that an empty cell maps to INSUFFICIENT."""
        cell = make_cell([], [])
        report = screen_cell(cell, FAST)
        assert report.tier == Tier.INSUFFICIENT
        assert report.steps[0].outcome == StepOutcome.NOT_EVALUABLE

    def test_trial_order_does_not_change_report(self):
        """Test that shuffling trials leaves the report unchanged."""
        cell = cell_from_table(40, 12, 15, 33)
        reversed_cell = make_cell(
            [t.confidence for t in reversed(cell.trials)],
            [t.correct for t in reversed(cell.trials)],
        )
        assert screen_cell(cell, FAST) == screen_cell(reversed_cell, FAST)

    def test_exclusion_boundary_is_strict(self):
        """Test parse failure of exactly 0.30 is retained and 0.301 excluded."""
        retained = make_cell([0.8, 0.3] * 350 + [None] * 300, [True, False] * 350 + [True] * 300)
        excluded = make_cell(
            [0.8, 0.3] * 349 + [0.8] + [None] * 301,
            [True, False] * 349 + [True] + [True] * 301,
        )
        assert retained.confidence_parse_failures / retained.n_total == 0.30
        assert excluded.confidence_parse_failures / excluded.n_total == 0.301
        assert screen_cell(retained, FAST).excluded_by_parse_rate is False
        assert screen_cell(excluded, FAST).excluded_by_parse_rate is True

    def test_categorical_cell_notes_midpoints(self):
        """Test that CAT cells carry the midpoint note."""
        cell = make_cell([0.95, 0.65, 0.25], [True, False, True], condition=Condition.CAT)
        report = screen_cell(cell, FAST)
        assert any("midpoint" in note for note in report.notes)

    def test_dominated_signal_never_reports_positive_rbs(self):
        """Test that strictly dominating correct trials give RBS <= 0."""
        confidences = [0.51 + 0.004 * i for i in range(100)] + [0.01 + 0.004 * i for i in range(100)]
        cell = make_cell(confidences, [True] * 100 + [False] * 100)
        report = screen_cell(cell, FAST)
        assert build_contingency(cell).as_tuple() == (100, 0, 0, 100)
        assert report.indices.RBS.value <= 0
