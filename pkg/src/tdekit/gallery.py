"""Registry of built-in fields paired with closed-form solutions and expected behaviour."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TdeError
from .expr import Expr, parse_expr
from .fieldspec import DomainBox, FieldSpec, builtin
from .foliation import compare_solutions, tangent_orthogonality_residual, trace_level_set
from .integrability import check_integrability
from .localsolver import build_chart, eval_solution, gradient_alignment_residual
from .quasiconvex import QCConfig, qc_classify


@dataclass
class ExampleCase:
    name: str
    field: FieldSpec
    closed_form_u: Expr | None
    closed_form_lambda: Expr | None
    expected: dict
    boxes: dict
    center: tuple[float, ...]
    notes: tuple[str, ...] = ()
    probes: tuple = ()

    def to_dict(self) -> dict:
        from .expr import to_text

        return {
            "name": self.name,
            "field": self.field.to_json(),
            "closed_form_u": to_text(self.closed_form_u) if self.closed_form_u else None,
            "closed_form_lambda": to_text(self.closed_form_lambda) if self.closed_form_lambda else None,
            "expected": self.expected,
            "boxes": {k: b.to_dict() for k, b in self.boxes.items()},
            "center": list(self.center),
            "notes": list(self.notes),
        }


_REGISTRY = {
    "debreu": dict(
        u="if(x2 >= 0, x2 / (1 - x1*x2), x2)",
        lam="if(x2 >= 0, sqrt(1 + x2^4) / (1 - x1*x2)^2, 1)",
        expected={"integrable": True, "qc": None},
        boxes={"integrability": ((-0.4, -0.4), (0.4, 0.4))},
        center=(0.0, 0.0),
        notes=("the field is C^1 but admits no C^2 solution near the x1-axis (documentation only)",
               "closed-form u is valid where x1*x2 < 1"),
        grid=21,
    ),
    "arrow_enthoven": dict(
        u="(x1 - 1) + sqrt((x1 + 1)^2 + 4*x2)",
        lam="1",
        expected={"integrable": True, "qc": "quasi_convex", "level_sets": "straight lines"},
        boxes={"integrability": ((0.5, 0.5), (2.0, 2.0)), "qc": ((0.5, 0.5), (2.0, 2.0))},
        center=(1.0, 1.0),
        notes=("every normal solution is quasi-convex, yet none is convex (documentation only)",),
    ),
    "katzner": dict(
        u="-(x1^3*x2 + x1*x2^3)",
        lam="1",
        expected={"integrable": True, "qc": "strictly_quasi_convex",
                  "II_zero_margin": [[1.0, 1.0], [-1.0, 1.0]]},
        boxes={"integrability": ((0.5, 0.5), (1.5, 1.5)), "qc": ((0.5, 0.5), (1.5, 1.5))},
        center=(1.0, 1.0),
        notes=("strict quasi-convexity holds through (I) while (II) fails at (1,1) in direction (-1,1)",),
        probes=((1.0, 1.0),),
    ),
    "grad_product3": dict(
        u="x1*x2*x3",
        lam="1",
        expected={"integrable": True, "qc": None},
        boxes={"integrability": ((0.5, 0.5, 0.5), (3.5, 3.5, 3.5))},
        center=(1.0, 2.0, 3.0),
    ),
    "contact3": dict(
        u=None,
        lam=None,
        expected={"integrable": False, "max_residual": 2.0, "qc": None},
        boxes={"integrability": ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))},
        center=(0.0, 0.0, 0.0),
        notes=("the contact distribution is not integrable: no local solution exists",),
    ),
    "quasiconcave_control": dict(
        u="-x1^2 - x2^2",
        lam="1",
        expected={"integrable": True, "qc": "not_quasi_convex"},
        boxes={"integrability": ((1.0, 1.0), (2.0, 2.0)), "qc": ((1.0, 1.0), (2.0, 2.0))},
        center=(1.5, 1.5),
        notes=("solutions are strictly quasi-concave; a negative control for the criteria",),
    ),
}


def list_examples() -> list[str]:
    return sorted(_REGISTRY)


def get_example(name: str) -> ExampleCase:
    try:
        entry = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; known: {list_examples()}") from None
    spec = builtin(name)
    n = spec.n
    u = parse_expr(entry["u"], n) if entry["u"] else None
    lam = parse_expr(entry["lam"], n) if entry["lam"] else None
    boxes = {k: DomainBox(lo, hi) for k, (lo, hi) in entry["boxes"].items()}
    return ExampleCase(name, spec, u, lam, dict(entry["expected"]), boxes, tuple(entry["center"]),
                       tuple(entry.get("notes", ())), tuple(entry.get("probes", ())))


@dataclass
class ExampleReport:
    name: str
    entries: list[dict] = field(default_factory=list)

    def add(self, check: str, passed: bool, detail) -> None:
        self.entries.append({"check": check, "passed": bool(passed), "detail": detail})

    @property
    def passed(self) -> bool:
        return all(e["passed"] for e in self.entries)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "entries": self.entries}


def closed_form_alignment(case: ExampleCase, num_points: int = 50, seed: int = 0, h: float = 1e-6) -> float:
    """Max relative component of the FD gradient of the closed-form u orthogonal to g."""
    spec, u = case.field, case.closed_form_u
    box = case.boxes["integrability"]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in box.sample(rng, num_points):
        if spec.kink_distance(x) < 10 * h:
            continue
        grad = np.array([(u.evaluate(x + h * e) - u.evaluate(x - h * e)) / (2 * h) for e in np.eye(spec.n)])
        g = spec(x)
        gh = g / np.linalg.norm(g)
        worst = max(worst, float(np.linalg.norm(grad - (grad @ gh) * gh) / np.linalg.norm(grad)))
    return worst


def verify_example(name: str, budget: int = 10_000, seed: int = 0) -> ExampleReport:
    """Run the pipeline on a registry case and compare with its expectations.

    ``budget`` is the number of random pairs used by the pairwise criteria;
    point-sample sizes scale with it.
    """
    case = get_example(name)
    spec = case.field
    rep = ExampleReport(name)
    rng = np.random.default_rng(seed)
    npts = max(10, min(100, budget // 200))

    grid = _REGISTRY[name].get("grid", 5)
    irep = check_integrability(spec, case.boxes["integrability"].grid(grid))
    want = case.expected["integrable"]
    detail = {"max_abs_residual": irep.max_abs_residual, "skipped": irep.skipped_kink_points}
    ok = irep.passed == want
    if "max_residual" in case.expected:
        ok = ok and abs(irep.max_abs_residual - case.expected["max_residual"]) <= 1e-6
    rep.add("integrability", ok, detail)

    if case.closed_form_u is not None:
        r = closed_form_alignment(case, 50, seed)
        rep.add("closed_form_alignment", r <= 1e-5, {"max_residual": r})

    if not irep.passed:
        rep.add("chart_refused", not want, "integrability fails; no chart is built")
        return rep

    try:
        chart = build_chart(spec, case.center)
    except TdeError as exc:
        rep.add("chart", False, str(exc))
        return rep
    rep.add("chart", True, chart.to_dict())

    pts = chart.sample_delta_box(rng, npts, shrink=0.9)
    pts = np.array([p for p in pts if spec.kink_distance(p) > 1e-4])
    align = max(gradient_alignment_residual(chart, p) for p in pts[:20])
    rep.add("gradient_alignment", align <= 1e-5, {"max_residual": align})

    if case.closed_form_u is not None:
        a = [eval_solution(chart, p).u for p in pts]
        b = [case.closed_form_u.evaluate(p) for p in pts]
        conc = compare_solutions(a, b, gap_tol=100 * chart.tol_z)
        rep.add("monotone_transform", conc.verdict == "increasing-transform", conc.to_dict())

    ct = np.array(chart.center_tilde)
    axes = [np.linspace(c - chart.delta, c + chart.delta, 5) for c in ct]
    trace = trace_level_set(chart, chart.center_value, axes)
    tres = tangent_orthogonality_residual(trace)
    rep.add("level_tangent", tres <= 1e-5, {"max_residual": tres, "failures": len(trace.failures)})

    want_qc = case.expected.get("qc")
    if want_qc is not None:
        cfg = QCConfig(num_pairs=budget, seed=seed, probes=case.probes)
        bundle = qc_classify(spec, case.boxes["qc"], cfg)
        ok = bundle.classification == want_qc
        if "II_zero_margin" in case.expected:
            x, v = case.expected["II_zero_margin"]
            ok = ok and any(np.allclose(e.point, x) and np.allclose(e.direction, v)
                            and e.classification == "zero-margin" for e in bundle.limsup)
        rep.add("quasi_convexity", ok, {"classification": bundle.classification, "summary": bundle.summary})
    return rep
