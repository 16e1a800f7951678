import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdekit.expr import parse_expr
from tdekit.fieldspec import DomainBox, builtin, eval_field, jacobian
from tdekit.quasiconvex import (HOLDS, INCONCLUSIVE, VIOLATED, QCConfig, default_t_seq, directional_limsup,
                                orthogonal_directions, pairwise_condition, qc_classify,
                                quasiconvexity_bruteforce, sample_pairs)

BOX = DomainBox.cube(0.5, 1.5, 2)
AE_BOX = DomainBox.cube(0.5, 2.0, 2)
CTRL_BOX = DomainBox.cube(1.0, 2.0, 2)


class TestSampling:
    def test_default_t_seq(self):
        t = default_t_seq()
        assert t[0] == 2.0**-4 and t[-1] == 2.0**-20 and len(t) == 17

    def test_pairs_inside_box(self):
        X, Y = sample_pairs(builtin("katzner"), BOX, 999, np.random.default_rng(0))
        assert X.shape == Y.shape == (999, 2)
        for P in (X, Y):
            assert np.all(P >= BOX.lo) and np.all(P <= BOX.hi)


class TestPairwise:
    def test_arrow_enthoven_plain_holds(self):
        assert pairwise_condition(builtin("arrow_enthoven"), AE_BOX, 10_000).verdict == HOLDS

    def test_arrow_enthoven_not_strict(self):
        # level sets are straight lines, so pairs on one level refute strictness
        rep = pairwise_condition(builtin("arrow_enthoven"), AE_BOX, 10_000, strict=True)
        assert rep.verdict == VIOLATED

    @pytest.mark.parametrize("seed", range(5))
    def test_katzner_strict_holds(self, seed):
        rep = pairwise_condition(builtin("katzner"), BOX, 10_000, strict=True, rng_seed=seed)
        assert rep.verdict == HOLDS and rep.tested > 0

    def test_control_violated_with_witness(self):
        rep = pairwise_condition(builtin("quasiconcave_control"), CTRL_BOX, 10_000)
        assert rep.verdict == VIOLATED and rep.witness_count > 0
        w = rep.witnesses[0]
        x, y = np.array(w["x"]), np.array(w["y"])
        g = builtin("quasiconcave_control")
        # witness satisfies the hypothesis and breaks the conclusion
        assert eval_field(g, x) @ (y - x) >= -1e-9 * np.linalg.norm(y - x) * np.linalg.norm(eval_field(g, x))
        assert eval_field(g, y) @ (x - y) > 0

    def test_deterministic(self):
        a = pairwise_condition(builtin("katzner"), BOX, 500, rng_seed=3).to_dict()
        b = pairwise_condition(builtin("katzner"), BOX, 500, rng_seed=3).to_dict()
        assert a == b

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            pairwise_condition(builtin("katzner"), BOX, 0)
        with pytest.raises(ValueError):
            pairwise_condition(builtin("katzner"), DomainBox.cube(-1.0, 1.0, 2), 10)


class TestDirectionalLimsup:
    def test_katzner_zero_margin(self):
        est = directional_limsup(builtin("katzner"), [1.0, 1.0], [-1.0, 1.0])
        assert est.classification == "zero-margin"
        assert abs(est.estimate) <= 1e-6

    def test_orthogonal_directions_n2(self):
        d = orthogonal_directions(np.array([-4.0, -4.0]))
        np.testing.assert_allclose(d[0], [-1.0, 1.0])
        np.testing.assert_allclose(d[1], [1.0, -1.0])

    def test_orthogonal_directions_n3(self):
        g = np.array([1.0, 2.0, -0.5])
        for v in orthogonal_directions(g):
            assert abs(v @ g) <= 1e-12 and np.max(np.abs(v)) == pytest.approx(1.0)

    def test_control_negative(self):
        x = np.array([1.5, 1.2])
        v = orthogonal_directions(eval_field(builtin("quasiconcave_control"), x))[0]
        assert directional_limsup(builtin("quasiconcave_control"), x, v).classification == "negative"

    def test_requires_orthogonal_direction(self):
        with pytest.raises(ValueError):
            directional_limsup(builtin("katzner"), [1.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            directional_limsup(builtin("katzner"), [1.0, 1.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            directional_limsup(builtin("katzner"), [1.0, 1.0], [-1.0, 1.0], t_seq=[0.1, 0.01])

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.6, 1.4), st.floats(0.6, 1.4), st.sampled_from(["katzner", "arrow_enthoven",
                                                                        "quasiconcave_control"]))
    def test_matches_quadratic_form(self, a, b, name):
        # limit of v.g(x+tv)/t with v.g(x)=0 is v^T J v
        spec = builtin(name)
        x = np.array([a, b]) + (0.5 if name == "quasiconcave_control" else 0.0)
        v = orthogonal_directions(eval_field(spec, x))[0]
        est = directional_limsup(spec, x, v)
        oracle = float(v @ jacobian(spec, x) @ v)
        assert abs(est.estimate - oracle) <= 1e-4 * max(1.0, abs(oracle))


class TestClassify:
    def test_arrow_enthoven(self):
        b = qc_classify(builtin("arrow_enthoven"), AE_BOX)
        assert b.classification == "quasi_convex"
        assert b.summary == "quasi-convex via (i)"
        assert b.reports["I"].verdict == VIOLATED

    def test_katzner(self):
        b = qc_classify(builtin("katzner"), BOX, QCConfig(probes=((1.0, 1.0),)))
        assert b.classification == "strictly_quasi_convex"
        assert b.summary == "strict via (I); (II) zero-margin witness (1,1),(-1,1)"
        assert b.reports["II"].verdict == INCONCLUSIVE
        assert b.reports["ii"].verdict == HOLDS

    def test_control(self):
        b = qc_classify(builtin("quasiconcave_control"), CTRL_BOX)
        assert b.classification == "not_quasi_convex"
        assert b.summary.startswith("not quasi-convex: (i) violated at x=")
        assert b.reports["ii"].verdict == VIOLATED

    def test_refuses_non_integrable(self):
        b = qc_classify(builtin("contact3"), DomainBox.cube(-1.0, 1.0, 3))
        assert b.classification == "refused"
        assert b.summary == "refused: integrability fails"
        assert b.integrability["max_abs_residual"] == pytest.approx(2.0)

    def test_bundle_serialises(self):
        d = qc_classify(builtin("katzner"), BOX, QCConfig(num_pairs=200)).to_dict()
        assert set(d["reports"]) == {"i", "I", "ii", "II"}


class TestBruteForce:
    def test_arrow_enthoven_closed_form(self):
        u = parse_expr("(x1 - 1) + sqrt((x1 + 1)^2 + 4*x2)", 2)
        assert quasiconvexity_bruteforce(u, AE_BOX, 20_000).verdict == HOLDS

    def test_katzner_strict(self):
        u = parse_expr("-(x1^3*x2 + x1*x2^3)", 2)
        assert quasiconvexity_bruteforce(u, BOX, 20_000, strict=True).verdict == HOLDS

    def test_concave_violates(self):
        u = parse_expr("-x1^2 - x2^2", 2)
        assert quasiconvexity_bruteforce(u, CTRL_BOX, 20_000).verdict == VIOLATED

    def test_product_sign(self):
        # on the positive quadrant x1*x2 is quasi-concave; its negative has convex lower sets
        assert quasiconvexity_bruteforce(parse_expr("x1*x2", 2), CTRL_BOX, 20_000).verdict == VIOLATED
        assert quasiconvexity_bruteforce(parse_expr("-x1*x2", 2), CTRL_BOX, 20_000).verdict == HOLDS

    def test_agrees_with_pairwise_on_gallery(self):
        for name, box, text in [("katzner", BOX, "-(x1^3*x2 + x1*x2^3)"),
                                ("quasiconcave_control", CTRL_BOX, "-x1^2 - x2^2")]:
            pw = pairwise_condition(builtin(name), box, 5000).verdict
            bf = quasiconvexity_bruteforce(parse_expr(text, 2), box, 5000).verdict
            assert pw == bf
