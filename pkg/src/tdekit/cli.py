"""Command-line interface: ``tdekit <command> ...``.

Exit codes: 0 success, 1 violated / rejected verdict, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ParseError, TdeError
from .fieldspec import BUILTIN_FIELDS, DomainBox, FieldSpec, builtin
from .foliation import tangent_orthogonality_residual, trace_level_set
from .gallery import get_example, list_examples, verify_example
from .integrability import check_integrability
from .kktopt import ConstraintSpec, kkt_search, kkt_verify
from .localsolver import build_chart, eval_solution
from .quasiconvex import QCConfig, qc_classify

EXIT_OK, EXIT_VIOLATED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated reals, got {text!r}") from None


def _point(text: str, n: int) -> np.ndarray:
    v = _floats(text)
    if len(v) != n:
        raise UsageError(f"expected {n} coordinates, got {len(v)}")
    return np.array(v)


def _box(text: str | None, spec: FieldSpec, shrink: float = 0.0) -> DomainBox:
    if text is None:
        pad = shrink * spec.domain.widths
        return DomainBox(tuple(spec.domain.lo + pad), tuple(spec.domain.hi - pad))
    v = _floats(text)
    n = spec.n
    if len(v) == 2:
        return DomainBox.cube(v[0], v[1], n)
    if len(v) == 2 * n:
        return DomainBox(tuple(v[:n]), tuple(v[n:]))
    raise UsageError(f"--box takes 'lo,hi' or {2 * n} values (lowers then uppers)")


def _load_field(args) -> FieldSpec:
    if (args.builtin is None) == (args.field is None):
        raise UsageError("give exactly one of --builtin or --field")
    if args.builtin is not None:
        if args.builtin not in BUILTIN_FIELDS:
            raise UsageError(f"unknown built-in {args.builtin!r}; known: {', '.join(sorted(BUILTIN_FIELDS))}")
        return builtin(args.builtin)
    return FieldSpec.from_json(Path(args.field))


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _polyline_svg(traces, width: int = 400, height: int = 400) -> str:
    pts = np.vstack([t.points() for t in traces])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)

    def sx(p):
        return 20 + (p[0] - lo[0]) / span[0] * (width - 40), height - 20 - (p[1] - lo[1]) / span[1] * (height - 40)

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for t in traces:
        coords = " ".join(f"{a:.3f},{b:.3f}" for a, b in map(sx, t.points()))
        lines.append(f'<polyline fill="none" stroke="black" points="{coords}"><title>z={t.z!r}</title></polyline>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# commands -----------------------------------------------------------------

def cmd_check(args) -> int:
    spec = _load_field(args)
    box = _box(args.box, spec, shrink=0.05)
    rep = check_integrability(spec, box.grid(args.grid), tol=args.tol, mode=args.mode)
    print(rep.summary())
    if args.out:
        _emit(rep.to_dict(), args.out)
    return EXIT_OK if rep.passed else EXIT_VIOLATED


def _gate(spec: FieldSpec, chart) -> dict:
    lo = np.maximum(chart.center - chart.eps, spec.domain.lo)
    hi = np.minimum(chart.center + chart.eps, spec.domain.hi)
    pad = 0.05 * (hi - lo)
    rep = check_integrability(spec, DomainBox(tuple(lo + pad), tuple(hi - pad)).grid(3))
    return {"verdict": rep.verdict, "max_abs_residual": rep.max_abs_residual}


def cmd_solve(args) -> int:
    spec = _load_field(args)
    x = _point(args.at, spec.n)
    chart = build_chart(spec, x)
    doc = {"chart": chart.to_dict()}
    if not args.no_check:
        doc["integrability"] = _gate(spec, chart)
        if doc["integrability"]["verdict"] != "pass":
            doc["refused"] = "integrability fails near the centre; no solution exists"
            _emit(doc, args.out)
            return EXIT_VIOLATED
    rng = np.random.default_rng(args.seed)
    samples = []
    for p in chart.sample_delta_box(rng, args.samples):
        v = eval_solution(chart, p)
        samples.append({"x": p.tolist(), "u": v.u, "residual": v.residual})
    doc["samples"] = samples
    _emit(doc, args.out)
    return EXIT_OK


def cmd_level(args) -> int:
    spec = _load_field(args)
    x = _point(args.at, spec.n)
    chart = build_chart(spec, x)
    levels = _floats(args.levels) if args.levels else [chart.center_value]
    ct = np.array(chart.center_tilde)
    r = chart.delta * args.extent
    axes = [np.linspace(c - r, c + r, args.grid) for c in ct]
    traces, docs = [], []
    for z in levels:
        tr = trace_level_set(chart, z, axes)
        traces.append(tr)
        d = tr.to_dict()
        d["tangent_residual"] = tangent_orthogonality_residual(tr)
        docs.append(d)
    if args.plot_out:
        path = Path(args.plot_out)
        if path.suffix.lower() == ".svg":
            if spec.n != 2:
                raise UsageError("SVG output is available for 2-D fields only")
            path.write_text(_polyline_svg(traces))
        else:
            rows = ["z," + ",".join(f"x{i + 1}" for i in range(spec.n))]
            for tr in traces:
                rows += [",".join([repr(tr.z)] + [repr(float(v)) for v in p]) for p in tr.points()]
            path.write_text("\n".join(rows) + "\n")
    _emit({"chart": chart.to_dict(), "levels": docs}, args.out)
    return EXIT_OK


def cmd_qc(args) -> int:
    spec = _load_field(args)
    box = _box(args.box, spec, shrink=0.05)
    cfg = QCConfig(num_pairs=args.pairs, seed=args.seed, check_integrability=not args.no_check)
    bundle = qc_classify(spec, box, cfg)
    doc = bundle.to_dict()
    doc["verdict"] = bundle.summary
    _emit(doc, args.out)
    return EXIT_VIOLATED if bundle.classification in ("refused", "not_quasi_convex") else EXIT_OK


def _load_constraints(path: str, box: DomainBox) -> ConstraintSpec:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        if "domain" in doc:
            box = DomainBox(tuple(doc["domain"]["lower"]), tuple(doc["domain"]["upper"]))
        doc = doc["constraints"]
    if not isinstance(doc, list) or not all(isinstance(s, str) for s in doc):
        raise UsageError("constraints file must hold a JSON array of expression strings")
    return ConstraintSpec.from_strings(doc, box)


def cmd_kkt(args) -> int:
    spec = _load_field(args)
    box = _box(args.box, spec, shrink=0.01)
    cons = _load_constraints(args.constraints, box)
    if args.candidate:
        cert = kkt_verify(spec, cons, _point(args.candidate, spec.n), box_constraints=args.box_constraints)
        doc = {"certificate": cert.to_dict()}
    else:
        res = kkt_search(spec, cons, box_constraints=args.box_constraints)
        cert = res.certificate
        doc = res.to_dict()
    _emit(doc, args.out)
    return EXIT_OK if cert is not None and cert.certified else EXIT_VIOLATED


def cmd_examples(args) -> int:
    if args.action == "list":
        _emit({"examples": [get_example(n).to_dict() for n in list_examples()]}, args.out)
        return EXIT_OK
    if not args.name:
        raise UsageError("examples run needs a case name")
    if args.name not in list_examples():
        raise UsageError(f"unknown example {args.name!r}")
    rep = verify_example(args.name, budget=args.pairs, seed=args.seed)
    _emit(rep.to_dict(), args.out)
    return EXIT_OK if rep.passed else EXIT_VIOLATED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdekit", description="Total differential equations: integrability, "
                                "local solutions, level sets, quasi-convexity and KKT certificates.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, field=True):
        if field:
            sp.add_argument("--builtin", help="built-in field name")
            sp.add_argument("--field", help="field spec JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="write JSON here instead of stdout")

    sp = sub.add_parser("check", help="integrability report")
    common(sp)
    sp.add_argument("--box", help="'lo,hi' or lowers then uppers (default: domain shrunk 5%%)")
    sp.add_argument("--grid", type=int, default=7)
    sp.add_argument("--mode", choices=["exact", "central-fd"], default="exact")
    sp.add_argument("--tol", type=float, default=None)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("solve", help="build a local solution chart")
    common(sp)
    sp.add_argument("--at", required=True, help="centre point, comma separated")
    sp.add_argument("--samples", type=int, default=5)
    sp.add_argument("--no-check", action="store_true", help="skip the integrability gate")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("level", help="trace level sets of a chart")
    common(sp)
    sp.add_argument("--at", required=True)
    sp.add_argument("--levels", help="comma-separated levels (default: through the centre)")
    sp.add_argument("--grid", type=int, default=11)
    sp.add_argument("--extent", type=float, default=1.0, help="grid half-width in units of delta")
    sp.add_argument("--plot-out", help="CSV or SVG output path")
    sp.set_defaults(func=cmd_level)

    sp = sub.add_parser("qc", help="quasi-convexity classification")
    common(sp)
    sp.add_argument("--box")
    sp.add_argument("--pairs", type=int, default=10_000)
    sp.add_argument("--no-check", action="store_true")
    sp.set_defaults(func=cmd_qc)

    sp = sub.add_parser("kkt", help="verify or search a KKT certificate")
    common(sp)
    sp.add_argument("--constraints", required=True, help="JSON array of constraint expressions h(x) <= 0")
    sp.add_argument("--candidate")
    sp.add_argument("--box", help="constraint box (default: field domain shrunk 1%%)")
    sp.add_argument("--box-constraints", action="store_true", help="treat the box bounds as constraints")
    sp.set_defaults(func=cmd_kkt)

    sp = sub.add_parser("examples", help="gallery of built-in cases")
    common(sp, field=False)
    sp.add_argument("action", choices=["list", "run"])
    sp.add_argument("name", nargs="?")
    sp.add_argument("--pairs", type=int, default=10_000)
    sp.set_defaults(func=cmd_examples)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ParseError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TdeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATED


if __name__ == "__main__":
    sys.exit(main())
