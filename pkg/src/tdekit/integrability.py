"""Jacobi's integrability condition and its reduced forms.

Indices in the public API (triples, pivots, pairs) are 1-based, matching the
variable names ``x1..xn``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import KinkError, TdeError
from .fieldspec import DEFAULT_KINK_TOL, FieldSpec, eval_field, jacobian

EXACT_TOL = 1e-6
FD_TOL = 1e-4


def _jacobi_from(g: np.ndarray, J: np.ndarray, i: int, j: int, k: int) -> float:
    # 0-based indices
    return float(g[i] * (J[j, k] - J[k, j]) + g[j] * (J[k, i] - J[i, k]) + g[k] * (J[i, j] - J[j, i]))


def jacobi_residual(spec: FieldSpec, x: Sequence[float], triple: tuple[int, int, int],
                    mode: str = "exact") -> float:
    """Left side of the cyclic identity for ``(i, j, k)`` at ``x``."""
    i, j, k = (t - 1 for t in triple)
    if not all(0 <= t < spec.n for t in (i, j, k)):
        raise ValueError(f"triple {triple} out of range for n={spec.n}")
    g = eval_field(spec, x)
    J = jacobian(spec, x, mode)
    return _jacobi_from(g, J, i, j, k)


def reduced_triples(n: int, kstar: int) -> list[tuple[int, int, int]]:
    """All ``(i, j, kstar)`` with ``i < j`` distinct from ``kstar``; empty when n = 2."""
    if not 1 <= kstar <= n:
        raise ValueError(f"pivot {kstar} out of range 1..{n}")
    others = [i for i in range(1, n + 1) if i != kstar]
    return [(i, j, kstar) for i, j in combinations(others, 2)]


def all_distinct_triples(n: int) -> list[tuple[int, int, int]]:
    return list(combinations(range(1, n + 1), 3))


def symmetry_residual(spec: FieldSpec, x: Sequence[float], pivot: int,
                      pair: tuple[int, int], mode: str = "exact") -> float:
    """``s_ij - s_ji`` for the reduced slope field ``f_i = -g_i / g_pivot``.

    ``s_ij = df_i/dx_j + df_i/dy * f_j`` where ``y`` is the pivot coordinate.
    """
    n = spec.n
    if n < 3:
        raise ValueError("a symmetry pair needs two off-pivot coordinates (n >= 3)")
    p = pivot - 1
    i, j = pair[0] - 1, pair[1] - 1
    if p in (i, j) or i == j or not all(0 <= t < n for t in (i, j, p)):
        raise ValueError(f"invalid pair {pair} for pivot {pivot}")
    g = eval_field(spec, x)
    if g[p] == 0.0:
        raise ValueError(f"pivot component g_{pivot} vanishes at {tuple(x)}")
    J = jacobian(spec, x, mode)

    def df(a: int, b: int) -> float:
        # d(-g_a/g_p)/dx_b
        return -(J[a, b] * g[p] - g[a] * J[p, b]) / g[p] ** 2

    f = -g / g[p]
    s_ij = df(i, j) + df(i, p) * f[j]
    s_ji = df(j, i) + df(j, p) * f[i]
    return float(s_ij - s_ji)


@dataclass
class PointResidual:
    point: tuple[float, ...]
    triple: tuple[int, int, int] | None
    residual: float

    def to_dict(self) -> dict:
        return {"point": list(self.point), "triple": list(self.triple) if self.triple else None,
                "residual": self.residual}


@dataclass
class IntegrabilityReport:
    samples: list[PointResidual]
    max_abs_residual: float
    skipped_kink_points: int
    tolerance: float
    mode: str
    worst: PointResidual | None = field(default=None)

    @property
    def verdict(self) -> str:
        return "pass" if self.max_abs_residual <= self.tolerance else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def summary(self) -> str:
        return f"{self.verdict.upper()} max residual {self.max_abs_residual:.6f}"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_abs_residual": self.max_abs_residual,
            "tolerance": self.tolerance,
            "mode": self.mode,
            "skipped_kink_points": self.skipped_kink_points,
            "worst": self.worst.to_dict() if self.worst else None,
            "samples": [s.to_dict() for s in self.samples],
        }


def check_integrability(spec: FieldSpec, points: Iterable[Sequence[float]], tol: float | None = None,
                        mode: str = "exact", kink_tol: float = DEFAULT_KINK_TOL) -> IntegrabilityReport:
    """Sample the cyclic identity over ``points``.

    At each point only the triples through the largest-magnitude component are
    evaluated (sufficient, as the remaining triples follow from them).  Points on
    a branch boundary are skipped and counted.
    """
    if tol is None:
        tol = EXACT_TOL if mode == "exact" else FD_TOL
    samples: list[PointResidual] = []
    skipped = 0
    for x in points:
        x = np.asarray(x, dtype=float)
        if not spec.domain.contains(x):
            raise ValueError(f"sample point {tuple(x)} is not strictly inside the domain")
        g = eval_field(spec, x)
        if mode == "exact" and spec.kink_distance(x) < kink_tol:
            skipped += 1
            continue
        try:
            J = jacobian(spec, x, mode, kink_tol=kink_tol)
        except KinkError:
            skipped += 1
            continue
        kstar = int(np.argmax(np.abs(g))) + 1
        best: tuple[int, int, int] | None = None
        worst = 0.0
        for tr in reduced_triples(spec.n, kstar):
            r = _jacobi_from(g, J, *(t - 1 for t in tr))
            if best is None or abs(r) > abs(worst):
                best, worst = tr, r
        samples.append(PointResidual(tuple(float(v) for v in x), best, abs(worst)))
    if not samples:
        raise TdeError("every sample point was skipped as a kink point; choose another grid")
    worst_rec = max(samples, key=lambda s: s.residual)
    return IntegrabilityReport(samples, worst_rec.residual, skipped, tol, mode, worst_rec)
