"""Sampled criteria for quasi-convexity of the solutions of a field.

Conditions tested on the field ``g``:

* pairwise ``(i)``: ``g(x).(y - x) >= 0  =>  g(y).(x - y) <= 0``,
  strict ``(I)``: the conclusion holds with ``< 0`` for ``x != y``;
* directional ``(ii)``: for ``g(x).v = 0``, ``limsup_{t->0+} v.g(x + t v) / t >= 0``,
  strict ``(II)``: the limsup is ``> 0``.

``quasiconvexity_bruteforce`` checks the definition on an explicit function and
serves as the oracle for the criteria.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Expr
from .fieldspec import DomainBox, FieldSpec, eval_field
from .integrability import check_integrability

HOLDS = "holds"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"

SLACK_REL = 1e-9
STRICT_MARGIN_REL = 1e-8
ZERO_TOL_REL = 1e-6
MAX_WITNESSES = 20


def default_t_seq() -> np.ndarray:
    return 2.0 ** -np.arange(4, 21)


@dataclass
class QCReport:
    condition: str
    verdict: str
    samples: int
    tested: int
    witnesses: list[dict] = field(default_factory=list)
    witness_count: int = 0
    margins: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": self.verdict,
            "samples": self.samples,
            "tested": self.tested,
            "witness_count": self.witness_count,
            "witnesses": self.witnesses,
            "margins": self.margins,
        }


def _fmt(v) -> str:
    return "(" + ",".join(f"{float(a):g}" for a in v) + ")"


def _check_box(spec: FieldSpec, box: DomainBox) -> None:
    if box.n != spec.n:
        raise ValueError("box dimension does not match the field")
    if not spec.domain.contains_box(box):
        raise ValueError("box must lie inside the field's domain")


def _inside(box: DomainBox, P: np.ndarray) -> np.ndarray:
    return np.all((P > box.lo) & (P < box.hi), axis=1)


def sample_pairs(spec: FieldSpec, box: DomainBox, num_pairs: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``(x, y)``: a third uniform, a third with ``y`` projected onto
    ``g(x).(y - x) = 0``, and a third projected then perturbed.

    Projected points that leave the box are replaced by uniform draws.
    """
    X = box.sample(rng, num_pairs)
    Y = box.sample(rng, num_pairs)
    k = num_pairs // 3
    if k:
        G = spec.evaluate_many(X[k:])
        D = Y[k:] - X[k:]
        coef = np.sum(G * D, axis=1) / np.sum(G * G, axis=1)
        Yp = Y[k:] - coef[:, None] * G
        m = num_pairs - 2 * k
        noise = rng.normal(size=Yp[m:].shape) * (1e-3 * box.widths)
        Yp[m:] = Yp[m:] + noise
        ok = _inside(box, Yp)
        Y[k:][ok] = Yp[ok]
    return X, Y


def pairwise_condition(spec: FieldSpec, box: DomainBox, num_pairs: int = 10_000, strict: bool = False,
                       rng_seed: int = 0, slack_rel: float = SLACK_REL,
                       strict_margin_rel: float = STRICT_MARGIN_REL) -> QCReport:
    """Sampled test of condition (i) or, with ``strict=True``, of (I).

    The implication slack is relative to ``|g||x - y|``.  Strictness is a
    curvature effect, second order in ``|x - y|``, so the strict margin is
    relative to ``|g(y)| |x - y|^2 / diam(box)``.
    """
    _check_box(spec, box)
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    rng = np.random.default_rng(rng_seed)
    X, Y = sample_pairs(spec, box, num_pairs, rng)
    GX, GY = spec.evaluate_many(X), spec.evaluate_many(Y)
    D = Y - X
    dist = np.linalg.norm(D, axis=1)
    sx = np.linalg.norm(GX, axis=1) * dist
    sy = np.linalg.norm(GY, axis=1) * dist
    hyp = np.sum(GX * D, axis=1) >= -slack_rel * sx
    concl = -np.sum(GY * D, axis=1)  # g(y).(x - y)
    if strict:
        hyp &= dist > 0
        s2 = sy * dist / float(np.linalg.norm(box.widths))
        bad = hyp & ~(concl < -strict_margin_rel * s2)
    else:
        bad = hyp & (concl > slack_rel * sy)
    idx = np.flatnonzero(bad)
    rel = np.where(sy > 0, concl / np.where(sy > 0, sy, 1.0), 0.0)
    witnesses = [{"x": X[i].tolist(), "y": Y[i].tolist(), "value": float(concl[i])} for i in idx[:MAX_WITNESSES]]
    tested = int(hyp.sum())
    verdict = VIOLATED if len(idx) else (HOLDS if tested else INCONCLUSIVE)
    margins = {"max_relative_conclusion": float(np.max(rel[hyp])) if tested else None}
    return QCReport("I" if strict else "i", verdict, num_pairs, tested, witnesses, int(len(idx)), margins)


@dataclass
class LimsupEstimate:
    point: tuple[float, ...]
    direction: tuple[float, ...]
    estimate: float
    margin: float
    classification: str
    tail: list[float]
    values: list[float]

    def to_dict(self) -> dict:
        return {"point": list(self.point), "direction": list(self.direction), "estimate": self.estimate,
                "margin": self.margin, "classification": self.classification, "tail": self.tail}


def directional_limsup(spec: FieldSpec, x: Sequence[float], v: Sequence[float],
                       t_seq: Sequence[float] | None = None, ortho_tol: float = 1e-8,
                       tail: int = 5, zero_tol: float = ZERO_TOL_REL) -> LimsupEstimate:
    """Estimate ``limsup_{t->0+} v.g(x + t v) / t`` from a decreasing sequence of ``t``.

    The estimate is the maximum over the ``tail`` smallest ``t``; the margin is
    the spread of the tail.  The zero band is ``zero_tol * |g(x)| |v|^2``.
    Classification: ``positive`` (whole tail above the band), ``negative``
    (estimate below it), ``zero-margin`` (estimate and spread inside it), else
    ``nonneg``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    g = eval_field(spec, x)
    gn, vn = float(np.linalg.norm(g)), float(np.linalg.norm(v))
    if vn == 0:
        raise ValueError("direction must be nonzero")
    if abs(float(g @ v)) > ortho_tol * gn * vn:
        raise ValueError("direction is not orthogonal to g(x)")
    ts = np.sort(np.asarray(default_t_seq() if t_seq is None else t_seq, dtype=float))[::-1]
    if len(ts) < tail or np.any(ts <= 0):
        raise ValueError(f"t_seq needs at least {tail} positive values")
    vals = np.array([float(v @ eval_field(spec, x + t * v)) / t for t in ts])
    tl = vals[-tail:]
    est = float(np.max(tl))
    margin = float(np.max(tl) - np.min(tl))
    band = zero_tol * gn * vn * vn
    if float(np.min(tl)) > band:
        cls = "positive"
    elif est < -band:
        cls = "negative"
    elif abs(est) <= band and margin <= band:
        cls = "zero-margin"
    else:
        cls = "nonneg"
    return LimsupEstimate(tuple(x.tolist()), tuple(v.tolist()), est, margin, cls, tl.tolist(), vals.tolist())


def orthogonal_directions(g: np.ndarray) -> list[np.ndarray]:
    """Unit-max-norm basis of ``g``'s orthogonal complement, each with its negative.

    For n = 2 the first direction is ``(g2, -g1) / max|g|``.
    """
    n = len(g)
    if n == 2:
        base = [np.array([g[1], -g[0]]) / np.max(np.abs(g))]
    else:
        q, _ = np.linalg.qr(np.column_stack([g, np.eye(n)]))
        base = [q[:, k] / np.max(np.abs(q[:, k])) for k in range(1, n)]
    out = []
    for b in base:
        out.extend([b, -b])
    return out


@dataclass(frozen=True)
class QCConfig:
    num_pairs: int = 10_000
    seed: int = 0
    grid: int = 5
    probes: tuple = ()
    check_integrability: bool = True
    integrability_grid: int = 5


@dataclass
class QCBundle:
    classification: str
    summary: str
    reports: dict
    limsup: list[LimsupEstimate]
    integrability: dict | None = None

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "summary": self.summary,
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
            "limsup": [e.to_dict() for e in self.limsup],
            "integrability": self.integrability,
        }


def _inner_grid(box: DomainBox, m: int) -> np.ndarray:
    # grid of the box shrunk by 1% so points are interior
    shrink = 0.005 * box.widths
    return DomainBox(tuple(box.lo + shrink), tuple(box.hi - shrink)).grid(m)


def qc_classify(spec: FieldSpec, box: DomainBox, cfg: QCConfig = QCConfig()) -> QCBundle:
    """Run the pairwise and directional tests and combine them into one classification.

    Returns classification ``refused`` when the field fails the integrability
    check on the box (both criteria presuppose integrability).  Condition (II)
    is credited only when every sampled estimate is ``positive``.
    """
    _check_box(spec, box)
    integ = None
    if cfg.check_integrability:
        rep = check_integrability(spec, _inner_grid(box, cfg.integrability_grid))
        integ = {"verdict": rep.verdict, "max_abs_residual": rep.max_abs_residual}
        if not rep.passed:
            return QCBundle("refused", "refused: integrability fails", {}, [], integ)
    plain = pairwise_condition(spec, box, cfg.num_pairs, False, cfg.seed)
    strict = pairwise_condition(spec, box, cfg.num_pairs, True, cfg.seed + 1)
    probes = [np.asarray(p, dtype=float) for p in cfg.probes] or [box.center]
    points = probes + list(_inner_grid(box, cfg.grid))
    tmax = float(np.max(default_t_seq()))
    ests: list[LimsupEstimate] = []
    for x in points:
        g = eval_field(spec, x)
        for v in orthogonal_directions(g):
            if not spec.domain.contains(x + tmax * v):
                continue
            ests.append(directional_limsup(spec, x, v))
    strict_dir = bool(ests) and all(e.classification == "positive" for e in ests)
    ii_bad = [e for e in ests if e.classification == "negative"]
    reports = {"i": plain, "I": strict}
    reports["ii"] = QCReport("ii", VIOLATED if ii_bad else HOLDS, len(ests), len(ests),
                             [e.to_dict() for e in ii_bad[:MAX_WITNESSES]], len(ii_bad),
                             {"min_estimate": min((e.estimate for e in ests), default=None)})
    # zero-margin estimates cannot confirm or refute (II): inconclusive, not violated
    zero = [e for e in ests if e.classification in ("zero-margin", "nonneg")]
    II_verdict = HOLDS if strict_dir else (VIOLATED if ii_bad else INCONCLUSIVE)
    reports["II"] = QCReport("II", II_verdict, len(ests), len(ests),
                             [e.to_dict() for e in ii_bad[:MAX_WITNESSES]], len(ii_bad),
                             {"min_estimate": min((e.estimate for e in ests), default=None),
                              "zero_margin": [e.to_dict() for e in zero[:MAX_WITNESSES]],
                              "zero_margin_count": len(zero)})
    if not plain.holds:
        w = plain.witnesses[0] if plain.witnesses else None
        cls = "not_quasi_convex"
        summary = "not quasi-convex: (i) violated" + (f" at x={_fmt(w['x'])}, y={_fmt(w['y'])}" if w else "")
    elif strict.holds and strict_dir:
        cls = "strictly_quasi_convex_II"
        summary = "strict via (II)"
    elif strict.holds:
        cls = "strictly_quasi_convex"
        summary = "strict via (I)"
        if zero:
            summary += f"; (II) zero-margin witness {_fmt(zero[0].point)},{_fmt(zero[0].direction)}"
    else:
        cls = "quasi_convex"
        summary = "quasi-convex via (i)"
    return QCBundle(cls, summary, reports, ests, integ)


def quasiconvexity_bruteforce(u_expr: Expr, box: DomainBox, num_triples: int = 100_000, rng_seed: int = 0,
                              strict: bool = False, tol: float = 1e-12) -> QCReport:
    """Check ``u((1-t)x + t y) <= max(u(x), u(y))`` (``<`` when ``strict``) on random triples.

    ``tol`` is relative to ``1 + |max(u(x), u(y))|``.
    """
    rng = np.random.default_rng(rng_seed)
    X = box.sample(rng, num_triples)
    Y = box.sample(rng, num_triples)
    T = rng.uniform(0.0, 1.0, size=num_triples)
    T = np.where(T == 0.0, 0.5, T)
    M = (1 - T)[:, None] * X + T[:, None] * Y
    ux, uy, um = u_expr.evaluate_many(X), u_expr.evaluate_many(Y), u_expr.evaluate_many(M)
    top = np.maximum(ux, uy)
    gap = um - top
    thr = tol * (1 + np.abs(top))
    if strict:
        active = np.any(X != Y, axis=1)
        bad = active & (gap >= 0.0)
    else:
        active = np.ones(num_triples, dtype=bool)
        bad = gap > thr
    idx = np.flatnonzero(bad)
    witnesses = [{"x": X[i].tolist(), "y": Y[i].tolist(), "t": float(T[i]), "gap": float(gap[i])}
                 for i in idx[:MAX_WITNESSES]]
    verdict = VIOLATED if len(idx) else HOLDS
    return QCReport("brute", verdict, num_triples, int(active.sum()), witnesses, int(len(idx)),
                    {"max_gap": float(np.max(gap))})
