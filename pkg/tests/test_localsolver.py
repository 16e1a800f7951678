import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CHART_CENTERS, get_chart
from tdekit.errors import ChartError, ZeroFieldError
from tdekit.fieldspec import FieldSpec, builtin, eval_field
from tdekit.localsolver import (build_chart, choose_pivot, eval_level_fn, eval_solution, fd_gradient,
                                gradient_alignment_residual, level_fn_pde_residual, recover_lambda)


def debreu_u(x):
    x1, x2 = x
    return x2 / (1 - x1 * x2) if x2 >= 0 else x2


def debreu_lambda(x):
    x1, x2 = x
    return math.sqrt(1 + x2**4) / (1 - x1 * x2) ** 2


class TestChoosePivot:
    def test_ties_lowest(self):
        assert choose_pivot(np.array([-4.0, -4.0])) == 1
        assert choose_pivot(np.array([0.0, 1.0])) == 2
        assert choose_pivot(np.array([1.0, -3.0, 3.0])) == 2


class TestBuildChart:
    def test_debreu_parameters(self, charts):
        ch = charts["debreu"]
        assert ch.pivot == 2 and ch.sign == 1
        assert ch.eps == pytest.approx(1.0)
        assert ch.delta >= 0.05

    def test_katzner_orientation(self, charts):
        ch = charts["katzner"]
        assert ch.pivot == 1 and ch.sign == -1

    @pytest.mark.parametrize("name", list(CHART_CENTERS))
    def test_radius_bound(self, name, charts):
        ch = charts[name]
        assert 0 < ch.delta < ch.eps
        assert ch.delta * math.sqrt(ch.n - 1) <= 1 / (2 * ch.lipschitz**2) * (1 + 1e-12)

    @pytest.mark.parametrize("name", list(CHART_CENTERS))
    def test_center_value(self, name, charts):
        ch = charts[name]
        v = eval_solution(ch, ch.center)
        assert v.u == pytest.approx(ch.center_value, abs=1e-12)

    @pytest.mark.parametrize("name", list(CHART_CENTERS))
    def test_increases_along_field(self, name, charts):
        ch = charts[name]
        g = eval_field(ch.spec, ch.center)
        t = ch.delta / (2 * np.linalg.norm(g))
        assert eval_solution(ch, ch.center + t * g).u > eval_solution(ch, ch.center - t * g).u

    def test_zero_field_centre(self):
        spec = FieldSpec.from_strings(["x1", "x2"], [-1, -1], [1, 1])
        with pytest.raises(ZeroFieldError):
            build_chart(spec, [0.0, 0.0])

    def test_serialises(self, charts):
        d = charts["debreu"].to_dict()
        assert d["pivot"] == 2 and d["bracket"] == [-1.0, 1.0]


class TestEvalSolution:
    def test_debreu_closed_form_eps_region(self, charts):
        ch = charts["debreu"]
        v = eval_solution(ch, [0.1, 0.2], region="eps")
        assert abs(v.u - 0.2 / 0.98) <= 1e-8

    def test_outside_delta_refused(self, charts):
        ch = charts["debreu"]
        with pytest.raises(ChartError):
            eval_solution(ch, [0.1, 0.2])
        with pytest.raises(ValueError):
            eval_solution(ch, [0.1, 0.2], region="galaxy")

    def test_dimension_check(self, charts):
        with pytest.raises(ValueError):
            eval_solution(charts["debreu"], [0.0, 0.0, 0.0])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_debreu_matches_closed_form(self, a, b):
        ch = get_chart("debreu")
        x = ch.center + 0.95 * ch.delta * np.array([a, b])
        assert abs(eval_solution(ch, x).u - debreu_u(x)) <= 1e-8

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_arrow_enthoven_is_monotone_in_closed_form(self, a, b):
        ch = get_chart("arrow_enthoven")
        base = np.array([0.37, -0.61])
        x = ch.center + 0.9 * ch.delta * base
        y = ch.center + 0.9 * ch.delta * np.array([a, b])
        closed = lambda p: (p[0] - 1) + math.sqrt((p[0] + 1) ** 2 + 4 * p[1])
        du = eval_solution(ch, x).u - eval_solution(ch, y).u
        dc = closed(x) - closed(y)
        if abs(dc) > 1e-7:
            assert np.sign(du) == np.sign(dc)

    def test_residual_reported(self, charts):
        v = eval_solution(charts["arrow_enthoven"], [1.01, 1.02])
        assert v.residual <= 1e-9 and v.iterations >= 0


class TestLevelFunction:
    def test_round_trip(self, charts):
        for name in CHART_CENTERS:
            ch = charts[name]
            xt = tuple(c + 0.5 * ch.delta for c in ch.center_tilde)
            u = ch.center_value + 0.3 * ch.delta
            h = eval_level_fn(ch, u, xt)
            assert eval_solution(ch, ch.join(xt, h), region="eps").u == pytest.approx(u, abs=1e-8)

    def test_arrow_enthoven_straight_level(self, charts):
        # level sets of (x1-1) + sqrt((x1+1)^2 + 4 x2) are straight lines
        ch = charts["arrow_enthoven"]
        closed = lambda p: (p[0] - 1) + math.sqrt((p[0] + 1) ** 2 + 4 * p[1])
        c0 = closed(ch.center)
        for dx in (-0.04, 0.02, 0.05):
            xt = (1.0 + dx,)
            h = eval_level_fn(ch, ch.center_value, xt)
            assert closed(ch.join(xt, h)) == pytest.approx(c0, abs=1e-9)

    @pytest.mark.parametrize("name", list(CHART_CENTERS))
    def test_pde_residual(self, name, charts):
        ch = charts[name]
        xt = tuple(c + 0.3 * ch.delta for c in ch.center_tilde)
        assert level_fn_pde_residual(ch, ch.center_value, xt) <= 1e-6

    def test_arity(self, charts):
        with pytest.raises(ValueError):
            eval_level_fn(charts["debreu"], 0.0, (0.1, 0.2))


class TestGradient:
    def test_debreu_lambda(self, charts):
        ch = charts["debreu"]
        lam = recover_lambda(ch, [0.1, 0.2], region="eps")
        assert abs(lam - debreu_lambda((0.1, 0.2))) <= 1e-6
        assert lam == pytest.approx(1.042065, abs=1e-6)

    def test_katzner_lambda(self, charts):
        # the chart is normalised so u = x1-like on the pivot axis: du/dx1 = -1 while g1 = -4
        assert recover_lambda(charts["katzner"], [1.0, 1.0]) == pytest.approx(0.25, abs=1e-6)

    def test_debreu_gradient_matches_closed_form(self, charts):
        ch = charts["debreu"]
        x = np.array([0.02, 0.03])
        x1, x2 = x
        exact = np.array([x2**2, 1.0]) / (1 - x1 * x2) ** 2
        np.testing.assert_allclose(fd_gradient(ch, x), exact, atol=1e-6)

    @pytest.mark.parametrize("name", list(CHART_CENTERS))
    def test_alignment(self, name, charts, rng):
        ch = charts[name]
        for x in ch.sample_delta_box(rng, 10, shrink=0.8):
            if ch.spec.kink_distance(x) < 1e-4:
                continue
            assert gradient_alignment_residual(ch, x) <= 1e-5

    def test_stencil_must_stay_inside(self, charts):
        ch = charts["debreu"]
        edge = ch.center + ch.delta
        with pytest.raises(ChartError):
            fd_gradient(ch, edge)
