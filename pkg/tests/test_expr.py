import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdekit.errors import NonFiniteError, ParseError
from tdekit.expr import Cond, Const, Var, diff, gradient, parse_expr, switches, to_text


class TestParse:
    def test_debreu_component_value(self):
        e = parse_expr("x2^2 / sqrt(1 + x2^4)", 2)
        assert e.evaluate([0.0, 1.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_identity_projection(self):
        e = parse_expr("x1", 2)
        assert e == Var(1)
        assert e.evaluate([3.0, 7.0]) == 3.0

    def test_double_operator_offset(self):
        with pytest.raises(ParseError) as exc:
            parse_expr("1 + + x1", 2)
        assert exc.value.offset == 4
        assert "offset 4" in str(exc.value)

    @pytest.mark.parametrize("text,offset", [("x3", 0), ("1 + x0", 4), ("foo(x1)", 0), ("2 * y", 4)])
    def test_bad_identifiers(self, text, offset):
        with pytest.raises(ParseError) as exc:
            parse_expr(text, 2)
        assert exc.value.offset == offset

    def test_byte_offsets_count_utf8(self):
        # a two-byte no-break space shifts the offset of the bad token
        with pytest.raises(ParseError) as exc:
            parse_expr("x1\u00a0+ x3", 2)
        assert exc.value.offset == 6
        with pytest.raises(ParseError) as exc:
            parse_expr("x1 + é", 2)
        assert exc.value.offset == 5

    @pytest.mark.parametrize("text", ["", "   ", "(x1", "x1)", "sqrt(x1, x2)", "min(x1)", "x1 ^ x2",
                                      "if(x1, 1, 2)", "if(x1 < 0, 1)"])
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            parse_expr(text, 2)

    def test_precedence(self):
        assert parse_expr("1 + 2 * 3 ^ 2", 1).evaluate([0.0]) == 19.0
        assert parse_expr("-x1^2", 1).evaluate([3.0]) == -9.0
        assert parse_expr("2^3^2", 1).evaluate([0.0]) == 512.0
        assert parse_expr("8 / 4 / 2", 1).evaluate([0.0]) == 1.0

    def test_constant_exponent_folding(self):
        assert parse_expr("x1^(1/2)", 1).evaluate([4.0]) == pytest.approx(2.0)

    def test_conditional(self):
        e = parse_expr("if(x2 >= 0, 1, 2)", 2)
        assert isinstance(e, Cond)
        assert e.evaluate([0.0, 0.0]) == 1.0
        assert e.evaluate([0.0, -1e-300]) == 2.0

    def test_functions(self):
        e = parse_expr("abs(x1) + min(x1, x2) + max(x1, x2)", 2)
        assert e.evaluate([-1.0, 2.0]) == 1 - 1 + 2

    def test_nonfinite_raises(self):
        with pytest.raises(NonFiniteError):
            parse_expr("1 / x1", 1).evaluate([0.0])
        with pytest.raises(NonFiniteError):
            parse_expr("sqrt(x1)", 1).evaluate([-1.0])

    def test_vectorised_matches_scalar(self, rng):
        e = parse_expr("if(x2 >= 0, x2^2 / sqrt(1 + x2^4), 0) + abs(x1) * max(x1, x2)", 2)
        X = rng.uniform(-1, 1, size=(50, 2))
        many = e.evaluate_many(X)
        assert np.array_equal(many, np.array([e.evaluate(x) for x in X]))


# random expression text over x1, x2
_leaf = st.one_of(st.sampled_from(["x1", "x2"]),
                  st.floats(0.1, 9.0, allow_nan=False).map(lambda v: f"{v:.3f}"))


def _extend(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(children, st.sampled_from([2, 3])).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"sqrt(1 + ({c})^2)"),
        children.map(lambda c: f"abs({c})"),
        st.tuples(children, children).map(lambda t: f"max({t[0]}, {t[1]})"),
        st.tuples(children, children, children).map(lambda t: f"if({t[0]} < {t[1]}, {t[2]}, {t[0]})"),
    )


exprs = st.recursive(_leaf, _extend, max_leaves=12)


class TestRoundTrip:
    @settings(max_examples=150, deadline=None)
    @given(exprs)
    def test_print_parse_identical(self, text):
        e = parse_expr(text, 2)
        e2 = parse_expr(to_text(e), 2)
        assert e2 == e
        rng = np.random.default_rng(0)
        for x in rng.uniform(-2, 2, size=(100, 2)):
            try:
                v = e.evaluate(x)
            except NonFiniteError:
                continue
            assert e2.evaluate(x) == v


class TestDiff:
    def test_polynomial(self):
        e = parse_expr("x1^3 * x2 + 2 * x1 * x2^2", 2)
        d1, d2 = gradient(e, 2)
        x = [1.5, -0.5]
        assert d1.evaluate(x) == pytest.approx(3 * 1.5**2 * -0.5 + 2 * 0.25)
        assert d2.evaluate(x) == pytest.approx(1.5**3 + 4 * 1.5 * -0.5)

    def test_quotient_sqrt(self):
        e = parse_expr("1 / sqrt(1 + x1^4)", 1)
        d = diff(e, 1)
        x = 0.7
        assert d.evaluate([x]) == pytest.approx(-2 * x**3 / (1 + x**4) ** 1.5)

    def test_branchwise(self):
        e = parse_expr("if(x2 >= 0, x2^2, 0)", 2)
        d = diff(e, 2)
        assert d.evaluate([0.0, 0.5]) == pytest.approx(1.0)
        assert d.evaluate([0.0, -0.5]) == 0.0

    def test_abs_and_minmax(self):
        assert diff(parse_expr("abs(x1)", 1), 1).evaluate([-2.0]) == -1.0
        assert diff(parse_expr("min(x1, 2*x1)", 1), 1).evaluate([1.0]) == 1.0
        assert diff(parse_expr("max(x1, 2*x1)", 1), 1).evaluate([1.0]) == 2.0

    def test_constant(self):
        assert diff(parse_expr("3.5", 2), 1) == Const(0.0)

    @settings(max_examples=60, deadline=None)
    @given(exprs)
    def test_matches_central_differences(self, text):
        e = parse_expr(text, 2)
        rng = np.random.default_rng(1)
        sw = switches(e)
        for x in rng.uniform(-2, 2, size=(5, 2)):
            if any(abs(s.evaluate(x)) < 1e-3 for s in sw):
                continue
            for k in (1, 2):
                h = 1e-6
                ek = np.eye(2)[k - 1] * h
                try:
                    fd = (e.evaluate(x + ek) - e.evaluate(x - ek)) / (2 * h)
                    exact = diff(e, k).evaluate(x)
                except NonFiniteError:
                    continue
                if any(np.sign(s.evaluate(x + ek)) != np.sign(s.evaluate(x - ek)) for s in sw):
                    continue
                assert exact == pytest.approx(fd, rel=1e-4, abs=1e-4 * (1 + abs(exact)))
