"""Level sets of chart solutions and comparisons between solutions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ChartError, GuardExitError, OdeError, TdeError
from .fieldspec import eval_field
from .localsolver import SolutionChart, eval_level_fn, eval_solution

INCREASING = "increasing"
DECREASING = "decreasing"
PRECONDITION_FAILED = "precondition_failed"
NOT_MONOTONE = "not_monotone"


@dataclass
class LevelSetTrace:
    """Lift of a tensor grid of reduced points onto the level ``{u = z}``.

    ``heights`` has the grid's shape and holds NaN where the lift failed.
    """

    chart: SolutionChart
    z: float
    axes: tuple[np.ndarray, ...]
    heights: np.ndarray
    failures: list[tuple[float, ...]] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.heights.shape

    def reduced_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def points(self) -> np.ndarray:
        """Lifted points ``(xt, E(xt))`` in full coordinates, failures dropped."""
        red = self.reduced_points()
        hs = self.heights.ravel()
        keep = np.isfinite(hs)
        return np.array([self.chart.join(xt, h) for xt, h in zip(red[keep], hs[keep])])

    def to_csv(self, path: str | Path) -> None:
        pts = self.points()
        header = ",".join(["z"] + [f"x{i + 1}" for i in range(self.chart.n)])
        rows = [",".join([repr(float(self.z))] + [repr(float(v)) for v in p]) for p in pts]
        Path(path).write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))

    def to_dict(self) -> dict:
        return {"z": self.z, "points": self.points().tolist(),
                "failures": [list(f) for f in self.failures]}


def _as_axes(chart: SolutionChart, grid) -> tuple[np.ndarray, ...]:
    m = chart.n - 1
    if m == 1 and np.ndim(grid) == 1:
        return (np.asarray(grid, dtype=float),)
    axes = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in grid)
    if len(axes) != m:
        raise ValueError(f"grid needs {m} axes (one per reduced coordinate)")
    return axes


def trace_level_set(chart: SolutionChart, z: float, grid) -> LevelSetTrace:
    """Lift every reduced grid point onto the level set of value ``z``.

    ``grid`` is one array of coordinates per reduced axis (a single array is
    accepted when n = 2); the tensor product is traced.  Reduced points must lie
    in the chart's eps-box.  Lifts that leave the guard box are recorded as
    failures.
    """
    axes = _as_axes(chart, grid)
    ct = np.array(chart.center_tilde)
    for a, c in zip(axes, ct):
        if np.any(np.abs(a - c) > chart.eps):
            raise ChartError("grid reaches outside the chart's eps-box")
    shape = tuple(len(a) for a in axes)
    heights = np.full(shape, np.nan)
    failures = []
    for idx in np.ndindex(*shape):
        xt = tuple(float(a[i]) for a, i in zip(axes, idx))
        try:
            heights[idx] = eval_level_fn(chart, z, xt)
        except (GuardExitError, OdeError):
            failures.append(xt)
    if not np.any(np.isfinite(heights)):
        raise TdeError("no grid point could be lifted onto the level set")
    return LevelSetTrace(chart, float(z), axes, heights, failures)


def tangent_orthogonality_residual(trace: LevelSetTrace, fd_h: float | None = 1e-4) -> float:
    """Max of |g_hat(x) . t_hat_i| over traced points and reduced axes.

    The tangent is ``e_i + (dE/dx_i) e_p`` with a central-difference slope.  With
    ``fd_h`` set, the slope uses fresh lifts at ``xt -/+ fd_h e_i``; with
    ``fd_h=None`` it uses the neighbouring grid points (interior points only).
    """
    chart = trace.chart
    p = chart.pivot - 1
    others = [i for i in range(chart.n) if i != p]
    worst = 0.0
    count = 0
    for idx in np.ndindex(*trace.shape):
        h0 = trace.heights[idx]
        if not np.isfinite(h0):
            continue
        xt = np.array([a[i] for a, i in zip(trace.axes, idx)])
        g = eval_field(chart.spec, chart.join(xt, h0))
        gh = g / np.linalg.norm(g)
        for k, i in enumerate(others):
            if fd_h is None:
                j = idx[k]
                if j == 0 or j == trace.shape[k] - 1:
                    continue
                lo = list(idx); lo[k] -= 1
                hi = list(idx); hi[k] += 1
                e_lo, e_hi = trace.heights[tuple(lo)], trace.heights[tuple(hi)]
                if not (np.isfinite(e_lo) and np.isfinite(e_hi)):
                    continue
                slope = (e_hi - e_lo) / (trace.axes[k][j + 1] - trace.axes[k][j - 1])
            else:
                e = np.zeros(len(xt))
                e[k] = fd_h
                slope = (eval_level_fn(chart, trace.z, xt + e) - eval_level_fn(chart, trace.z, xt - e)) / (2 * fd_h)
            t = np.zeros(chart.n)
            t[i] = 1.0
            t[p] = slope
            nt = np.linalg.norm(t)
            if not np.isfinite(nt) or nt == 0:
                raise TdeError("degenerate tangent")
            worst = max(worst, abs(float(gh @ t)) / nt)
            count += 1
    if count == 0:
        raise TdeError("trace has no interior grid points to difference")
    return worst


def monotone_section(chart: SolutionChart, x: Sequence[float], v: Sequence[float],
                     trange: tuple[float, float], samples: int = 21,
                     region: str = "delta", ortho_tol: float = 1e-12) -> tuple[str, np.ndarray]:
    """Sample ``t -> u(x + t v)`` and classify it.

    Returns ``precondition_failed`` when ``g(x + t v) . v`` vanishes (relative to
    ``|g||v|``) at some sample, otherwise ``increasing``, ``decreasing`` or
    ``not_monotone``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    ts = np.linspace(trange[0], trange[1], samples)
    pts = x + ts[:, None] * v
    nv = float(np.linalg.norm(v))
    for y in pts:
        g = eval_field(chart.spec, y)
        if nv == 0 or abs(float(g @ v)) <= ortho_tol * float(np.linalg.norm(g)) * nv:
            return PRECONDITION_FAILED, np.array([])
    vals = np.array([eval_solution(chart, y, region).u for y in pts])
    d = np.diff(vals)
    if np.all(d > 0):
        return INCREASING, vals
    if np.all(d < 0):
        return DECREASING, vals
    return NOT_MONOTONE, vals


@dataclass
class Concordance:
    verdict: str
    pairs_compared: int
    violating_pair: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "pairs_compared": self.pairs_compared,
                "violating_pair": list(self.violating_pair) if self.violating_pair else None}


def compare_solutions(values_a: Sequence[float], values_b: Sequence[float],
                      gap_tol: float = 1e-8) -> Concordance:
    """Check whether ``B`` is a monotone transform of ``A`` on the sampled points.

    Only pairs separated by more than ``gap_tol`` in both samples are compared.
    The violating pair, if any, is reported with 1-based indices.
    """
    A = np.asarray(values_a, dtype=float)
    B = np.asarray(values_b, dtype=float)
    if A.shape != B.shape or A.ndim != 1 or len(A) < 2:
        raise ValueError("need two equal-length sequences with at least 2 values")
    dA = A[:, None] - A[None, :]
    dB = B[:, None] - B[None, :]
    iu = np.triu_indices(len(A), k=1)
    dA, dB = dA[iu], dB[iu]
    ok = (np.abs(dA) > gap_tol) & (np.abs(dB) > gap_tol)
    if not np.any(ok):
        raise ValueError("no pair is separated by more than gap_tol")
    s = np.sign(dA[ok]) * np.sign(dB[ok])
    I, J = iu[0][ok], iu[1][ok]
    n_cmp = int(ok.sum())
    if np.all(s > 0):
        return Concordance("increasing-transform", n_cmp)
    if np.all(s < 0):
        return Concordance("decreasing-transform", n_cmp)
    # report the first pair that disagrees with the majority orientation
    majority = 1.0 if np.sum(s > 0) >= np.sum(s < 0) else -1.0
    k = int(np.argmax(s != majority))
    return Concordance("not-monotone", n_cmp, (int(I[k]) + 1, int(J[k]) + 1))
