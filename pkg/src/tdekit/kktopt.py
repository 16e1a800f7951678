"""KKT certificates for minimising a quasi-convex solution of a field.

The objective ``u`` is known only through its direction field ``g``.  A point
``x*`` is certified when it is feasible and ``-g(x*)`` lies in the cone spanned
by the gradients of the active constraints (with complementary slackness).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError, TdeError
from .expr import Expr, compile_many, gradient, parse_expr
from .fieldspec import DomainBox, FieldSpec, eval_field

FEAS_TOL = 1e-8
ACT_TOL = 1e-6
STAT_TOL = 1e-6
SEARCH_STAT_TOL = 1e-4
SLACK_TOL = 1e-10
CONVEXITY_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintSpec:
    """Convex constraints ``h_i(x) <= 0`` on a box."""

    exprs: tuple[Expr, ...]
    domain: DomainBox
    sources: tuple[str, ...] = field(default=(), compare=False)

    @classmethod
    def from_strings(cls, texts: Sequence[str], domain: DomainBox, check: bool = True,
                     seed: int = 0) -> ConstraintSpec:
        cs = cls(tuple(parse_expr(t, domain.n) for t in texts), domain, tuple(texts))
        if check:
            bad = cs.midpoint_convexity(seed=seed)
            if bad:
                raise ValueError(f"constraint {bad[0] + 1} fails the midpoint convexity check")
        return cs

    @property
    def k(self) -> int:
        return len(self.exprs)

    @property
    def n(self) -> int:
        return self.domain.n

    def _compiled(self):
        # cached on the instance dict (the dataclass is frozen)
        c = self.__dict__.get("_cache")
        if c is None:
            grads = [d for e in self.exprs for d in gradient(e, self.n)]
            c = (compile_many(self.exprs), compile_many(grads) if grads else None)
            object.__setattr__(self, "_cache", c)
        return c

    def values(self, x: Sequence[float]) -> np.ndarray:
        if not self.exprs:
            return np.zeros(0)
        return np.array(self._compiled()[0](np.asarray(x, dtype=float)), dtype=float)

    def gradients(self, x: Sequence[float]) -> np.ndarray:
        """``(k, n)`` matrix of constraint gradients."""
        if not self.exprs:
            return np.zeros((0, self.n))
        return np.array(self._compiled()[1](np.asarray(x, dtype=float)), dtype=float).reshape(self.k, self.n)

    def values_many(self, X: np.ndarray) -> np.ndarray:
        if not self.exprs:
            return np.zeros((len(X), 0))
        return np.stack([e.evaluate_many(X) for e in self.exprs], axis=1)

    def midpoint_convexity(self, num_pairs: int = 1000, seed: int = 0, tol: float = CONVEXITY_TOL) -> list[int]:
        """Indices (0-based) of constraints violating sampled midpoint convexity."""
        rng = np.random.default_rng(seed)
        X = self.domain.sample(rng, num_pairs)
        Y = self.domain.sample(rng, num_pairs)
        HX, HY, HM = self.values_many(X), self.values_many(Y), self.values_many(0.5 * (X + Y))
        bad = np.any(HM > 0.5 * (HX + HY) + tol, axis=0)
        return [int(i) for i in np.flatnonzero(bad)]

    def with_box(self, box: DomainBox | None = None) -> ConstraintSpec:
        """Append the bounds of ``box`` (default: the constraint domain) as affine constraints."""
        box = box or self.domain
        extra = []
        for i, (a, b) in enumerate(zip(box.lower, box.upper), start=1):
            extra.append(f"{a!r} - x{i}")
            extra.append(f"x{i} - {b!r}")
        texts = list(self.sources) + extra
        return ConstraintSpec.from_strings(texts, self.domain, check=False)

    def to_dict(self) -> dict:
        from .expr import to_text

        return {"constraints": list(self.sources) or [to_text(e) for e in self.exprs],
                "domain": self.domain.to_dict()}


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Lawson-Hanson active-set solution of ``min |A x - b|`` subject to ``x >= 0``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, k = A.shape
    x = np.zeros(k)
    if k == 0:
        return x, float(np.linalg.norm(b))
    passive = np.zeros(k, dtype=bool)
    max_iter = max_iter or 3 * k + 10
    tol = 10 * np.finfo(float).eps * np.linalg.norm(A, 1) * max(m, k)
    w = A.T @ (b - A @ x)
    it = 0
    while np.any(~passive) and np.max(w[~passive]) > tol:
        j = int(np.argmax(np.where(~passive, w, -np.inf)))
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise TdeError("nnls did not converge")
            s = np.zeros(k)
            s[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(s[passive] > 0):
                x = s
                break
            neg = passive & (s <= 0)
            alpha = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))


@dataclass
class SlaterResult:
    found: bool
    point: np.ndarray | None
    max_h: float

    def to_dict(self) -> dict:
        return {"found": self.found, "point": None if self.point is None else self.point.tolist(),
                "max_h": self.max_h}


def slater_check(constraints: ConstraintSpec, num_samples: int = 2000, rng_seed: int = 0,
                 slater_margin: float = 1e-9) -> SlaterResult:
    """Look for a strictly feasible point by sampling the box (plus a coarse grid)."""
    rng = np.random.default_rng(rng_seed)
    box = constraints.domain
    P = np.vstack([box.sample(rng, num_samples), _interior_grid(box, 9)])
    if constraints.k == 0:
        return SlaterResult(True, box.center, -np.inf)
    H = np.max(constraints.values_many(P), axis=1)
    i = int(np.argmin(H))
    found = bool(H[i] < -slater_margin)
    return SlaterResult(found, P[i] if found else None, float(H[i]))


def _interior_grid(box: DomainBox, m: int) -> np.ndarray:
    pad = 0.5 / m * box.widths
    return DomainBox(tuple(box.lo + pad), tuple(box.hi - pad)).grid(m)


@dataclass
class KKTCertificate:
    x: np.ndarray
    multipliers: np.ndarray
    stationarity_residual: float
    slackness: np.ndarray
    feasibility: float
    active: list[int]
    verdict: str
    reason: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "multipliers": [float(v) for v in self.multipliers],
            "stationarity_residual": self.stationarity_residual,
            "slackness": [float(v) for v in self.slackness],
            "feasibility": self.feasibility,
            "active": [i + 1 for i in self.active],
            "verdict": self.verdict,
            "reason": self.reason,
        }


def _qc_refusal(assume_qc: bool, qc_report) -> str:
    if qc_report is not None:
        cls = getattr(qc_report, "classification", None)
        if cls in ("not_quasi_convex", "refused"):
            return f"quasi-convexity ({cls})"
        return ""
    return "" if assume_qc else "quasi-convexity not established"


def kkt_verify(spec: FieldSpec, constraints: ConstraintSpec, xstar: Sequence[float],
               feas_tol: float = FEAS_TOL, act_tol: float = ACT_TOL, stat_tol: float = STAT_TOL,
               slack_tol: float = SLACK_TOL, assume_qc: bool = True, qc_report=None,
               check_slater: bool = True, box_constraints: bool = False) -> KKTCertificate:
    """Check the KKT conditions for minimising a solution of ``g`` at ``xstar``.

    Multipliers of the active constraints (``h_i >= -act_tol``) come from a
    nonnegative least-squares fit of ``-g``; inactive constraints get zero.
    The verdict is ``rejected`` with the first failing reason among
    ``quasi-convexity``, ``slater``, ``feasibility``, ``stationarity`` and
    ``slackness``.
    """
    if box_constraints:
        constraints = constraints.with_box()
    x = np.asarray(xstar, dtype=float)
    if not spec.domain.contains(x):
        raise DomainError(f"candidate {tuple(x)} is outside the field's domain")
    g = eval_field(spec, x)
    h = constraints.values(x)
    k = constraints.k
    feas = float(np.max(h)) if k else -np.inf
    active = [i for i in range(k) if h[i] >= -act_tol]
    lam = np.zeros(k)
    if active:
        A = constraints.gradients(x)[active].T
        lam_a, _ = nnls(A, -g)
        lam[active] = lam_a
    res = float(np.linalg.norm(g + constraints.gradients(x).T @ lam)) if k else float(np.linalg.norm(g))
    slack = lam * h
    cert = KKTCertificate(x, lam, res, slack, feas, active, "certified")
    reason = _qc_refusal(assume_qc, qc_report)
    if not reason and check_slater and k and not slater_check(constraints).found:
        reason = "slater"
    if not reason and feas > feas_tol:
        reason = "feasibility"
    if not reason and res > stat_tol:
        reason = "stationarity"
    if not reason and k and np.max(np.abs(slack)) > slack_tol:
        reason = "slackness"
    if reason:
        cert.verdict, cert.reason = "rejected", reason
    return cert


@dataclass
class SearchResult:
    candidate: np.ndarray | None
    certificate: KKTCertificate | None
    note: str
    evaluated: int = 0

    def to_dict(self) -> dict:
        return {"candidate": None if self.candidate is None else [float(v) for v in self.candidate],
                "certificate": None if self.certificate is None else self.certificate.to_dict(),
                "note": self.note, "evaluated": self.evaluated}


def _local_kkt_solve(spec: FieldSpec, cons: ConstraintSpec, S: list[int], x0: np.ndarray,
                     lam0: np.ndarray, box: DomainBox) -> np.ndarray | None:
    """Solve ``h_S(x) = 0`` and ``g(x) + sum_S lam_i grad h_i(x) = 0`` with ``lam >= 0``."""
    n, s = spec.n, len(S)
    lo_x = np.nextafter(np.maximum(box.lo, spec.domain.lo), np.inf)
    hi_x = np.nextafter(np.minimum(box.hi, spec.domain.hi), -np.inf)

    def fun(z):
        x, lam = z[:n], z[n:]
        g = np.asarray(spec.raw(x), dtype=float)
        G = cons.gradients(x)[S]
        return np.concatenate([g + G.T @ lam, cons.values(x)[S]])

    z0 = np.concatenate([np.clip(x0, lo_x, hi_x), np.maximum(lam0, 0.0)])
    lb = np.concatenate([lo_x, np.zeros(s)])
    ub = np.concatenate([hi_x, np.full(s, np.inf)])
    try:
        sol = least_squares(fun, z0, bounds=(lb, ub), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    except (ValueError, ArithmeticError, TdeError):
        return None
    return sol.x[:n]


def kkt_search(spec: FieldSpec, constraints: ConstraintSpec, grid: int = 41,
               stat_tol: float = SEARCH_STAT_TOL, box_constraints: bool = False,
               assume_qc: bool = True, qc_report=None, max_candidates: int = 12) -> SearchResult:
    """Search the constraint box for a KKT point.

    A coarse grid of feasible points is scored by the NNLS stationarity residual
    with every constraint within one grid cell of its boundary treated as
    active.  The best-scoring points, one per distinct active set, seed a local
    solve of the active-boundary KKT system; the results are verified with
    ``kkt_verify``.
    """
    cons = constraints.with_box() if box_constraints else constraints
    box = constraints.domain
    if not slater_check(cons).found:
        raise TdeError("no strictly feasible point found (Slater's condition fails on the box)")
    P = box.grid(grid)
    P = P[np.all((P > spec.domain.lo) & (P < spec.domain.hi), axis=1)]
    H = cons.values_many(P)
    feas = np.all(H <= FEAS_TOL, axis=1)
    if not np.any(feas):
        raise TdeError("no feasible grid point")
    P, H = P[feas], H[feas]
    cell = float(np.linalg.norm(box.widths)) / (grid - 1)
    scored = []
    for x, h in zip(P, H):
        G = cons.gradients(x)
        near = [i for i in range(cons.k) if h[i] >= -cell * max(1.0, np.linalg.norm(G[i]))]
        if not near:
            continue
        g = np.asarray(spec.raw(x), dtype=float)
        lam, r = nnls(G[near].T, -g)
        scored.append((r / np.linalg.norm(g), tuple(near), x, lam))
    scored.sort(key=lambda s: s[0])
    seen: set = set()
    best: tuple | None = None
    tried = 0
    for _, near, x0, lam0 in scored:
        if tried >= max_candidates:
            break
        # try the near-active set and its subsets of size <= n
        subsets = [list(c) for r in range(min(len(near), spec.n), 0, -1) for c in itertools.combinations(near, r)]
        for S in subsets:
            key = tuple(S)
            if key in seen:
                continue
            seen.add(key)
            lam_init = np.zeros(len(S))
            for j, i in enumerate(S):
                if i in near:
                    lam_init[j] = lam0[near.index(i)]
            x = _local_kkt_solve(spec, cons, S, x0, lam_init, box)
            if x is None or not spec.domain.contains(x):
                continue
            cert = kkt_verify(spec, cons, x, stat_tol=stat_tol, assume_qc=assume_qc, qc_report=qc_report,
                              check_slater=False)
            if best is None or (cert.certified, -cert.stationarity_residual) > (best[1].certified, -best[1].stationarity_residual):
                best = (x, cert)
        tried += 1
        if best is not None and best[1].certified:
            break
    if best is None:
        x0 = scored[0][2] if scored else P[0]
        cert = kkt_verify(spec, cons, x0, stat_tol=stat_tol, assume_qc=assume_qc, qc_report=qc_report,
                          check_slater=False)
        best = (x0, cert)
    x, cert = best
    if cert.certified:
        note = "certified KKT point"
        n_box = 2 * spec.n if box_constraints else 0
        if box_constraints and any(i >= cons.k - n_box for i in cert.active):
            note += " (box bound active)"
    else:
        note = "no certified minimizer in box interior; minimum attained on box boundary" \
            if not box_constraints else "no certified KKT point found; best-effort candidate"
    return SearchResult(np.asarray(x), cert, note, len(scored))


@dataclass
class OracleResult:
    x: np.ndarray
    value: float
    spacing: np.ndarray

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "value": self.value, "spacing": self.spacing.tolist()}


def minimize_oracle(u_expr: Expr, constraints: ConstraintSpec, grid_density: int = 200,
                    rounds: int = 3) -> OracleResult:
    """Brute-force minimiser of ``u`` over feasible grid points of the constraint box.

    Each refinement round halves the spacing on a 9-point-per-axis patch
    around the incumbent.
    """
    box = constraints.domain
    P = box.grid(grid_density)
    spacing = box.widths / (grid_density - 1)

    def best_of(P):
        H = constraints.values_many(P)
        ok = np.all(H <= 0.0, axis=1) if constraints.k else np.ones(len(P), dtype=bool)
        if not np.any(ok):
            return None
        U = u_expr.evaluate_many(P[ok])
        U = np.where(np.isfinite(U), U, np.inf)
        i = int(np.argmin(U))
        return P[ok][i], float(U[i])

    found = best_of(P)
    if found is None:
        raise TdeError("no feasible grid point")
    x, val = found
    for _ in range(rounds):
        spacing = spacing / 2
        axes = [np.clip(c + s * np.arange(-4, 5), a, b) for c, s, a, b in zip(x, spacing, box.lower, box.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        patch = np.unique(np.stack([m.ravel() for m in mesh], axis=1), axis=0)
        cand = best_of(patch)
        if cand is not None and cand[1] <= val:
            x, val = cand
    return OracleResult(np.asarray(x), val, spacing)
