import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from miqcqp_heur.metrics import (BenchRecord, Comparison, IncumbentTrace, aggregate, compare,
                                 eps_gap_hit, primal_gap, primal_integral, records_to_csv,
                                 records_to_json, shifted_geomean)


class TestPrimalGap:
    def test_relative_to_larger_magnitude(self):
        assert primal_gap(110, 100) == pytest.approx(100 * 10 / 110)

    def test_equal_values(self):
        assert primal_gap(-3.5, -3.5) == 0.0

    def test_opposite_signs(self):
        assert primal_gap(-50, 100) == pytest.approx(150.0)

    def test_both_zero_convention(self):
        assert primal_gap(0.0, 0.0) == 0.0


class TestPrimalIntegral:
    def test_two_events(self):
        # gap of 200 against 100 is 0.5
        tr = IncumbentTrace([(10.0, 200.0), (20.0, 100.0)], horizon=30.0)
        assert primal_integral(tr, 100.0) == pytest.approx(0.5 * 10 + 0 * 10 + 10)

    def test_single_optimal_event(self):
        tr = IncumbentTrace([(5.0, 7.0)], horizon=300.0)
        assert primal_integral(tr, 7.0) == pytest.approx(5.0)

    def test_empty_trace(self):
        assert primal_integral(IncumbentTrace(horizon=300.0), 1.0) == 300.0


class TestShiftedGeomean:
    def test_zeros(self):
        assert shifted_geomean([0, 0, 0]) == pytest.approx(0.0)

    def test_single(self):
        assert shifted_geomean([1]) == pytest.approx(1.0)

    def test_pair(self):
        assert shifted_geomean([3, 8]) == pytest.approx(5.0)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            shifted_geomean([])

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            shifted_geomean([1, -2])


class TestCompare:
    def test_same(self):
        assert compare(7, 7) is Comparison.SAME

    def test_threshold_boundary(self):
        assert compare(1.0, 1.0000099) is Comparison.SAME
        assert compare(1.0, 1.0001) is Comparison.BETTER

    def test_better_and_worse(self):
        assert compare(5, 6) is Comparison.BETTER
        assert compare(6, 5) is Comparison.WORSE

    def test_max_sense(self):
        assert compare(6, 5, "max") is Comparison.BETTER

    def test_zeros(self):
        assert compare(0.0, 0.0) is Comparison.SAME

    def test_nonfinite_raises(self):
        with pytest.raises(ValueError):
            compare(np.inf, 1.0)


class TestEpsGap:
    def test_values(self):
        assert eps_gap_hit(0.0)
        assert eps_gap_hit(0.009)
        assert not eps_gap_hit(0.01)
        assert not eps_gap_hit(5.0)

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            eps_gap_hit(-1.0)


class TestTrace:
    def test_record_keeps_only_improvements(self):
        tr = IncumbentTrace(horizon=10.0)
        assert tr.record(5.0, 1.0)
        assert not tr.record(6.0, 2.0)
        assert tr.record(4.0, 3.0)
        assert tr.events == [(1.0, 5.0), (3.0, 4.0)]
        assert tr.best == 4.0 and tr.first_time == 1.0

    def test_invalid_traces_rejected(self):
        with pytest.raises(ValueError):
            IncumbentTrace([(1.0, 5.0), (2.0, 6.0)], horizon=10.0)
        with pytest.raises(ValueError):
            IncumbentTrace([(2.0, 5.0), (1.0, 4.0)], horizon=10.0)
        with pytest.raises(ValueError):
            IncumbentTrace([(11.0, 5.0)], horizon=10.0)

    def test_merge(self):
        a = IncumbentTrace([(1.0, 5.0)], horizon=10.0)
        a.merge(IncumbentTrace([(0.5, 6.0), (2.0, 3.0)], horizon=10.0))
        assert a.best == 3.0


class TestBenchRecord:
    def test_no_solution_convention(self):
        rec = BenchRecord.from_trace("a", "MIQP", IncumbentTrace(horizon=300.0), 10.0)
        assert not rec.found
        assert rec.gap_percent == 100.0 and rec.primal_integral == 300.0
        assert rec.comparison == "None"

    def test_maximization_reported_in_own_sense(self):
        tr = IncumbentTrace([(1.0, -9.0)], horizon=10.0)  # internal value of max 9
        rec = BenchRecord.from_trace("a", "MIQCP", tr, 10.0, sense="max")
        assert rec.objective == 9.0
        assert rec.gap_percent == pytest.approx(10.0)
        assert rec.comparison == "Worse"

    def test_csv_and_json(self):
        recs = [BenchRecord.from_trace("a", "MIQP", IncumbentTrace([(1.0, 2.0)], horizon=10.0), 2.0),
                BenchRecord.from_trace("b", "MIBQP", IncumbentTrace(horizon=10.0), 1.0)]
        text = records_to_csv(recs)
        assert text.splitlines()[0].startswith("instance,problem_class,found")
        assert len(text.splitlines()) == 3
        summary = aggregate(recs)
        assert summary["classes"]["ALL"]["found"] == 1
        assert summary["classes"]["MIQP"]["eps_gap"] == 1
        assert json.loads(records_to_json(recs))["records"][1]["found"] is False


def _trace(draw_values, times, horizon):
    events, last = [], np.inf
    for t, v in zip(times, draw_values):
        if v < last:
            events.append((t, v))
            last = v
    return IncumbentTrace(events, horizon=horizon)


@st.composite
def trace_pairs(draw):
    """A trace and a dominated copy: same times, each value no better."""
    k = draw(st.integers(1, 6))
    times = sorted(draw(st.lists(st.floats(0, 100), min_size=k, max_size=k)))
    vals = sorted(draw(st.lists(st.floats(1, 100), min_size=k, max_size=k, unique=True)), reverse=True)
    worse = [v + d for v, d in zip(vals, draw(st.lists(st.floats(0, 10), min_size=k, max_size=k)))]
    worse = list(np.maximum.accumulate(worse[::-1])[::-1])
    return _trace(vals, times, 100.0), _trace(worse, times, 100.0)


class TestPrimalIntegralProperties:
    @given(trace_pairs())
    def test_monotone_in_objective(self, pair):
        good, bad = pair
        assert primal_integral(good, 1.0) <= primal_integral(bad, 1.0) + 1e-9

    @given(st.lists(st.floats(0.0, 50.0), min_size=1, max_size=5))
    def test_bounded_by_horizon(self, ts):
        tr = _trace(list(range(100, 100 - len(ts), -1)), sorted(ts), 50.0)
        pi = primal_integral(tr, 90.0)
        assert 0.0 <= pi <= 50.0 + 1e-9

    @given(st.floats(0, 50), st.floats(0, 50))
    def test_earlier_optimum_is_better(self, t1, t2):
        a = IncumbentTrace([(min(t1, t2), 1.0)], horizon=50.0)
        b = IncumbentTrace([(max(t1, t2), 1.0)], horizon=50.0)
        assert primal_integral(a, 1.0) <= primal_integral(b, 1.0)
