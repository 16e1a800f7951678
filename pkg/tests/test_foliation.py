import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdekit.errors import ChartError
from tdekit.fieldspec import eval_field
from tdekit.foliation import (DECREASING, INCREASING, NOT_MONOTONE, PRECONDITION_FAILED, compare_solutions,
                              monotone_section, tangent_orthogonality_residual, trace_level_set)


def ae_closed(p):
    return (p[0] - 1) + math.sqrt((p[0] + 1) ** 2 + 4 * p[1])


class TestTraceLevelSet:
    def test_arrow_enthoven_points_on_level(self, charts):
        ch = charts["arrow_enthoven"]
        axis = np.linspace(1 - ch.delta, 1 + ch.delta, 7)
        tr = trace_level_set(ch, ch.center_value, axis)
        assert tr.shape == (7,) and not tr.failures
        c0 = ae_closed(ch.center)
        for p in tr.points():
            assert ae_closed(p) == pytest.approx(c0, abs=1e-9)

    def test_points_collinear(self, charts):
        # the level sets here are straight lines
        ch = charts["arrow_enthoven"]
        tr = trace_level_set(ch, ch.center_value, np.linspace(1 - ch.delta, 1 + ch.delta, 5))
        P = tr.points()
        d = P[1:] - P[0]
        cross = d[:, 0] * d[-1, 1] - d[:, 1] * d[-1, 0]
        assert np.max(np.abs(cross)) <= 1e-10

    @pytest.mark.parametrize("name", ["arrow_enthoven", "katzner", "debreu", "grad_product3"])
    def test_tangent_residual(self, name, charts):
        ch = charts[name]
        axes = [np.linspace(c - ch.delta, c + ch.delta, 5) for c in ch.center_tilde]
        tr = trace_level_set(ch, ch.center_value, axes)
        assert tangent_orthogonality_residual(tr) <= 1e-5

    def test_grid_neighbour_mode_is_coarser(self, charts):
        ch = charts["katzner"]
        tr = trace_level_set(ch, ch.center_value, np.linspace(1 - ch.delta, 1 + ch.delta, 9))
        fine = tangent_orthogonality_residual(tr)
        coarse = tangent_orthogonality_residual(tr, fd_h=None)
        assert fine <= 1e-7 and coarse <= 1e-3

    def test_three_dimensional_tensor_grid(self, charts):
        ch = charts["grad_product3"]
        axes = [np.linspace(c - ch.delta, c + ch.delta, 3) for c in ch.center_tilde]
        tr = trace_level_set(ch, ch.center_value, axes)
        assert tr.heights.shape == (3, 3)
        prod = np.prod(tr.points(), axis=1)
        assert np.ptp(prod) <= 1e-8

    def test_guard_exit_recorded(self, charts):
        ch = charts["debreu"]
        # c(1; -0.9, 1.05) = 1.05 / (1 - 0.945) leaves the guard box
        tr = trace_level_set(ch, 1.05, np.array([-0.9, 0.0, 0.5]))
        assert tr.failures == [(-0.9,)]
        assert np.isnan(tr.heights[0]) and tr.heights[1] == pytest.approx(1.05)
        assert tr.heights[2] == pytest.approx(1.05 / (1 + 0.525), abs=1e-9)

    def test_outside_eps_refused(self, charts):
        ch = charts["katzner"]
        with pytest.raises(ChartError):
            trace_level_set(ch, ch.center_value, np.array([1 + 2 * ch.eps]))

    def test_axis_count(self, charts):
        with pytest.raises(ValueError):
            trace_level_set(charts["grad_product3"], 2.0, [np.array([1.0])])

    def test_csv_and_dict(self, charts, tmp_path):
        ch = charts["arrow_enthoven"]
        tr = trace_level_set(ch, ch.center_value, np.linspace(1 - ch.delta, 1 + ch.delta, 3))
        path = tmp_path / "lvl.csv"
        tr.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "z,x1,x2" and len(lines) == 4
        assert len(tr.to_dict()["points"]) == 3


class TestMonotoneSection:
    @pytest.mark.parametrize("name", ["arrow_enthoven", "katzner", "grad_product3"])
    def test_along_field(self, name, charts):
        ch = charts[name]
        g = eval_field(ch.spec, ch.center)
        v = g / np.linalg.norm(g)
        r = 0.5 * ch.delta
        verdict, vals = monotone_section(ch, ch.center, v, (-r, r), samples=9)
        assert verdict == INCREASING and len(vals) == 9
        assert monotone_section(ch, ch.center, -v, (-r, r), samples=9)[0] == DECREASING

    def test_tangent_direction_fails_precondition(self, charts):
        # g is constant along the straight level lines, so a tangent is orthogonal at every sample
        ch = charts["arrow_enthoven"]
        g = eval_field(ch.spec, ch.center)
        v = np.array([g[1], -g[0]])
        verdict, vals = monotone_section(ch, ch.center, v, (-0.01, 0.01), ortho_tol=1e-10)
        assert verdict == PRECONDITION_FAILED and vals.size == 0

    def test_not_monotone_through_a_tangency(self, charts):
        # katzner: g(x)=(-4,-4) at the centre; along (1,-1) u has a turning point there
        ch = charts["katzner"]
        v = np.array([1.0, -1.0]) / math.sqrt(2)
        r = 0.9 * ch.delta
        verdict, _ = monotone_section(ch, ch.center, v, (-r, r), samples=10, ortho_tol=0.0)
        assert verdict == NOT_MONOTONE


class TestCompareSolutions:
    def test_increasing(self):
        c = compare_solutions([1, 2, 3], [10, 20, 30])
        assert c.verdict == "increasing-transform" and c.pairs_compared == 3

    def test_decreasing(self):
        assert compare_solutions([1, 2, 3], [3, 2, 1]).verdict == "decreasing-transform"

    def test_violating_pair_one_based(self):
        c = compare_solutions([1, 2, 3, 4], [1, 2, 4, 3])
        assert c.verdict == "not-monotone"
        assert c.violating_pair == (3, 4)

    def test_ties_ignored(self):
        c = compare_solutions([1, 1, 2], [5, 6, 7], gap_tol=1e-9)
        assert c.verdict == "increasing-transform" and c.pairs_compared == 2

    def test_errors(self):
        with pytest.raises(ValueError):
            compare_solutions([1, 2], [1])
        with pytest.raises(ValueError):
            compare_solutions([1, 1], [2, 2])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=30, unique=True), st.floats(0.1, 3.0))
    def test_monotone_transform_detected(self, vals, k):
        a = np.array(vals)
        if np.min(np.diff(np.sort(a))) < 1e-6:
            return
        assert compare_solutions(a, np.exp(k * a) - 4).verdict == "increasing-transform"
        assert compare_solutions(a, -k * a**3 - a).verdict == "decreasing-transform"
