"""Local solutions of the total differential equation ``grad u = lambda g``.

A chart is built around a centre ``x*``.  With pivot ``p`` (the largest
component of ``g(x*)``) and reduced coordinates ``xt`` (all others), the level
function ``E^z(xt) = c(1; xt, z)`` is obtained from the ray ODE, and ``u(x)`` is
the initial value ``z`` whose level passes through ``x``.  The chart pins
``u(x*) = x*_p`` and orients ``u`` to increase along ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BracketError, ChartError, FieldError, OdeError, TdeError
from .fieldspec import FieldSpec, eval_field
from .odecore import LEFT_GUARD_BOX, OdeConfig, SolutionFunction, join_point, split_point

DEFAULT_TOL_Z = 1e-10
DEFAULT_FD_H = 1e-5
GUARD_INFLATION = 1.1


@dataclass(frozen=True)
class ChartConfig:
    """Settings for chart construction and evaluation."""

    ode: OdeConfig = OdeConfig()
    tol_z: float = DEFAULT_TOL_Z
    max_iter: int = 200
    eps0: float | None = None
    delta_min_rel: float = 1e-6
    eps_grid: int = 5
    lipschitz_pairs: int = 2000
    seed: int = 0


@dataclass
class SolutionValue:
    u: float
    iterations: int
    residual: float
    z: float

    def to_dict(self) -> dict:
        return {"u": self.u, "iterations": self.iterations, "residual": self.residual, "z": self.z}


@dataclass
class SolutionChart:
    spec: FieldSpec
    center: np.ndarray
    pivot: int
    sign: int
    eps: float
    delta: float
    lipschitz: float
    solution: SolutionFunction
    z_lo: float
    z_hi: float
    tol_z: float = DEFAULT_TOL_Z
    max_iter: int = 200
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def center_tilde(self) -> tuple[float, ...]:
        return self.solution.xstar_tilde

    @property
    def center_value(self) -> float:
        return float(self.center[self.pivot - 1])

    def split(self, x: Sequence[float]) -> tuple[tuple[float, ...], float]:
        return split_point(x, self.pivot)

    def join(self, xtilde: Sequence[float], y: float) -> np.ndarray:
        return join_point(xtilde, y, self.pivot)

    def in_delta_box(self, x: Sequence[float], slack: float = 1e-12) -> bool:
        d = np.abs(np.asarray(x, dtype=float) - self.center)
        return bool(np.all(d <= self.delta * (1 + slack)))

    def in_eps_box(self, x: Sequence[float]) -> bool:
        d = np.abs(np.asarray(x, dtype=float) - self.center)
        return bool(np.all(d <= self.eps))

    def sample_delta_box(self, rng: np.random.Generator, size: int, shrink: float = 1.0) -> np.ndarray:
        r = self.delta * shrink
        return self.center + rng.uniform(-r, r, size=(size, self.n))

    def to_u(self, z: float) -> float:
        """Chart value from the unsigned initial value ``z``."""
        return self.center_value + self.sign * (z - self.center_value)

    def to_z(self, u: float) -> float:
        return self.center_value + self.sign * (u - self.center_value)

    def to_dict(self) -> dict:
        return {
            "field": self.spec.name,
            "center": [float(v) for v in self.center],
            "pivot": self.pivot,
            "sign": self.sign,
            "eps": self.eps,
            "delta": self.delta,
            "lipschitz": self.lipschitz,
            "bracket": [self.z_lo, self.z_hi],
            "tol_z": self.tol_z,
        }


def choose_pivot(g: np.ndarray) -> int:
    """1-based index of the largest |g_k|; ties go to the lowest index."""
    return int(np.argmax(np.abs(g))) + 1


def _box_points(center: np.ndarray, r: float, m: int) -> np.ndarray:
    axes = [np.linspace(c - r, c + r, m) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def _pivot_bounded(spec: FieldSpec, center: np.ndarray, r: float, p: int, gp0: float, m: int) -> bool:
    pts = _box_points(center, r, m)
    try:
        G = spec.evaluate_many(pts)
    except FieldError:
        return False
    col = G[:, p]
    return bool(np.all(np.isfinite(G)) and np.all(np.abs(col) >= 0.5 * abs(gp0)) and np.all(np.sign(col) == np.sign(gp0)))


def _slope_lipschitz(spec: FieldSpec, center: np.ndarray, eps: float, p: int, rng, pairs: int) -> float:
    """Largest sampled difference quotient of ``f = -g / g_p`` (pivot entry dropped) on the eps-box."""
    n = spec.n
    A = center + rng.uniform(-eps, eps, size=(pairs, n))
    # half the pairs are close together to catch local slopes
    B = A.copy()
    B[: pairs // 2] = A[: pairs // 2] + rng.uniform(-eps, eps, size=(pairs // 2, n)) * 0.05
    B[pairs // 2:] = center + rng.uniform(-eps, eps, size=(pairs - pairs // 2, n))
    B = np.clip(B, center - eps, center + eps)
    GA, GB = spec.evaluate_many(A), spec.evaluate_many(B)
    keep = [i for i in range(n) if i != p]
    FA = -GA[:, keep] / GA[:, [p]]
    FB = -GB[:, keep] / GB[:, [p]]
    dist = np.linalg.norm(A - B, axis=1)
    ok = dist > 1e-12
    if not np.any(ok):
        return 0.0
    q = np.linalg.norm(FA - FB, axis=1)[ok] / dist[ok]
    return float(np.max(q))


def _probe_reduced(center_t: np.ndarray, delta: float) -> list[tuple[float, ...]]:
    """Corners, face centres and the centre of the reduced delta-box."""
    m = len(center_t)
    pts = {tuple(center_t)}
    for signs in np.array(np.meshgrid(*[[-1.0, 1.0]] * m, indexing="ij")).reshape(m, -1).T:
        pts.add(tuple(center_t + delta * signs))
    for i in range(m):
        for s in (-1.0, 1.0):
            e = center_t.copy()
            e[i] += s * delta
            pts.add(tuple(e))
    return sorted(pts)


def build_chart(spec: FieldSpec, xstar: Sequence[float], cfg: ChartConfig = ChartConfig()) -> SolutionChart:
    """Construct a normal solution around ``xstar``.

    The radius ``eps`` is halved from half the distance to the domain boundary
    until the pivot component keeps at least half its central magnitude on the
    sampled eps-box.  ``delta`` is halved from ``eps / 2`` until the sampled
    rays with ``z = x*_p -/+ eps`` stay in the guard box (eps-box inflated by
    10%), bracket the delta-box, and ``delta * sqrt(n-1) <= 1 / (2 L^2)``.
    """
    xstar = np.asarray(xstar, dtype=float)
    g0 = eval_field(spec, xstar)
    p = choose_pivot(g0) - 1
    pivot = p + 1
    gp0 = float(g0[p])
    dist = spec.domain.boundary_distance(xstar)
    if dist <= 0:
        raise ChartError("centre is not interior to the domain")
    rng = np.random.default_rng(cfg.seed)

    eps = cfg.eps0 if cfg.eps0 is not None else 0.5 * dist
    eps = min(eps, dist / GUARD_INFLATION * 0.999)
    eps_floor = cfg.delta_min_rel * float(np.max(spec.domain.widths))
    while not _pivot_bounded(spec, xstar, eps, p, gp0, cfg.eps_grid):
        eps *= 0.5
        if eps < eps_floor:
            raise ChartError("pivot component is not bounded away from zero near the centre")
    L_f = _slope_lipschitz(spec, xstar, eps, p, rng, cfg.lipschitz_pairs)

    x_p = float(xstar[p])
    z_lo, z_hi = x_p - eps, x_p + eps
    guard = (x_p - GUARD_INFLATION * eps, x_p + GUARD_INFLATION * eps)
    ode = cfg.ode.with_guard(*guard)
    sol = SolutionFunction(spec, pivot, xstar, ode)
    ct = np.array(sol.xstar_tilde)
    delta_min = cfg.delta_min_rel * float(np.max(spec.domain.widths))
    m = spec.n - 1

    delta = eps / 2
    reason = ""
    while True:
        if delta < delta_min:
            raise ChartError(f"no admissible delta above {delta_min:g} ({reason})")
        ok, L_c, reason = _delta_admissible(sol, ct, delta, z_lo, z_hi, x_p)
        L = max(L_f, L_c)
        if ok and delta * math.sqrt(m) <= 1.0 / (2.0 * L * L):
            break
        if ok:
            reason = "radius bound 1/(2L^2)"
        delta *= 0.5

    chart = SolutionChart(spec, xstar, pivot, 1, eps, delta, L, sol, z_lo, z_hi,
                          cfg.tol_z, cfg.max_iter,
                          {"L_f": L_f, "L_c": L_c, "guard": list(guard)})
    # orientation: u must increase along g(x*)
    t0 = delta / (4.0 * float(np.linalg.norm(g0)))
    up = eval_solution(chart, xstar + t0 * g0).u
    dn = eval_solution(chart, xstar - t0 * g0).u
    if up == dn:
        raise ChartError("cannot orient the chart: u is flat along g")
    chart.sign = 1 if up > dn else -1
    return chart


def _delta_admissible(sol: SolutionFunction, ct: np.ndarray, delta: float, z_lo: float, z_hi: float,
                      x_p: float) -> tuple[bool, float, str]:
    samples = []
    for xt in _probe_reduced(ct, delta):
        lo_tr = sol.trajectory(xt, z_lo)
        hi_tr = sol.trajectory(xt, z_hi)
        if not (lo_tr.completed and hi_tr.completed):
            return False, 0.0, "rays leave the guard box"
        if not (lo_tr.final < x_p - delta and hi_tr.final > x_p + delta):
            return False, 0.0, "bracket invariant fails"
        mid = sol.trajectory(xt, x_p)
        if not mid.completed:
            return False, 0.0, "rays leave the guard box"
        for z, tr in ((z_lo, lo_tr), (x_p, mid), (z_hi, hi_tr)):
            for t in np.linspace(0.0, 1.0, 6):
                samples.append((t, *xt, z, float(tr(t))))
    S = np.array(samples)
    P, V = S[:, :-1], S[:, -1]
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    dV = np.abs(V[:, None] - V[None, :])
    mask = D > 1e-12
    L_c = float(np.max(dV[mask] / D[mask])) if np.any(mask) else 0.0
    return True, L_c, ""


def _final_value(chart: SolutionChart, xt: tuple[float, ...], z: float) -> float:
    """``c(1; xt, z)``, with guard exits mapped to -inf / +inf."""
    tr = chart.solution.trajectory(xt, z)
    if tr.completed:
        return float(tr.final)
    if tr.termination == LEFT_GUARD_BOX and tr.exit_state is not None:
        return math.inf if float(tr.exit_state) > chart.center_value else -math.inf
    raise OdeError(f"ray integration stopped early ({tr.termination})")


def _solve_z(chart: SolutionChart, xt: tuple[float, ...], target: float) -> tuple[float, int, float]:
    """Initial value ``z`` with ``c(1; xt, z) = target`` by bracketed bisection."""
    if xt == chart.center_tilde:
        return target, 0, 0.0
    lo, hi = chart.z_lo, chart.z_hi
    tol = chart.tol_z
    # warm start from reverse-time integration, then a narrow bracket
    z0 = None
    try:
        z0 = chart.solution.backward(xt, target)
    except (OdeError, FieldError):
        z0 = None
    iters = 0
    f_lo = f_hi = None
    if z0 is not None and lo < z0 < hi:
        w = 1e-8 * max(1.0, abs(z0))
        while w < (hi - lo):
            a, b = max(lo, z0 - w), min(hi, z0 + w)
            fa, fb = _final_value(chart, xt, a) - target, _final_value(chart, xt, b) - target
            iters += 2
            if fa <= 0 <= fb:
                lo, hi, f_lo, f_hi = a, b, fa, fb
                break
            w *= 100.0
    if f_lo is None:
        f_lo = _final_value(chart, xt, lo) - target
        f_hi = _final_value(chart, xt, hi) - target
        iters += 2
        if not (f_lo < 0 < f_hi):
            raise BracketError(f"bracket [{lo}, {hi}] does not enclose the level through this point")
    if f_lo == 0:
        return lo, iters, 0.0
    if f_hi == 0:
        return hi, iters, 0.0
    while hi - lo > tol:
        if iters >= chart.max_iter:
            raise ChartError("bisection iteration cap reached")
        mid = 0.5 * (lo + hi)
        fm = _final_value(chart, xt, mid) - target
        iters += 1
        if fm == 0:
            return mid, iters, 0.0
        if fm < 0:
            lo, f_lo = mid, fm
        else:
            hi, f_hi = mid, fm
    # secant step inside the final bracket
    if math.isfinite(f_lo) and math.isfinite(f_hi) and f_hi > f_lo:
        z = lo - f_lo * (hi - lo) / (f_hi - f_lo)
    else:
        z = 0.5 * (lo + hi)
    res = abs(_final_value(chart, xt, z) - target)
    return z, iters + 1, res


def _check_region(chart: SolutionChart, x: np.ndarray, region: str) -> None:
    if region == "delta":
        ok = chart.in_delta_box(x)
    elif region == "eps":
        ok = chart.in_eps_box(x)
    else:
        raise ValueError(f"unknown region {region!r}")
    if not ok:
        raise ChartError(f"{tuple(x)} lies outside the chart's {region}-box")


def eval_solution(chart: SolutionChart, x: Sequence[float], region: str = "delta") -> SolutionValue:
    """Value of the chart's solution at ``x``.

    ``region="delta"`` (default) accepts only the certified delta-box.
    ``region="eps"`` also accepts points of the eps-box; the bracket is then
    checked per point and a ``BracketError`` signals that the chart is too
    small there.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (chart.n,):
        raise ValueError(f"expected a point of dimension {chart.n}")
    _check_region(chart, x, region)
    xt, target = chart.split(x)
    z, iters, res = _solve_z(chart, xt, target)
    return SolutionValue(chart.to_u(z), iters, res, z)


def eval_level_fn(chart: SolutionChart, z: float, xtilde: Sequence[float]) -> float:
    """Pivot coordinate of the level set ``{u = z}`` above the reduced point ``xtilde``.

    For a chart with sign +1 this is ``c(1; xtilde, z)``.
    """
    xt = tuple(float(v) for v in xtilde)
    if len(xt) != chart.n - 1:
        raise ValueError("reduced point must have n-1 coordinates")
    z0 = chart.to_z(z)
    if xt == chart.center_tilde:
        return z0
    return chart.solution(1.0, xt, z0)


def _fd_partial(chart: SolutionChart, x: np.ndarray, i: int, h: float, region: str) -> float:
    e = np.zeros(chart.n)
    e[i] = h
    for y in (x + e, x - e):
        try:
            _check_region(chart, y, region)
        except ChartError:
            raise ChartError("finite-difference stencil leaves the chart") from None
    return (eval_solution(chart, x + e, region).u - eval_solution(chart, x - e, region).u) / (2 * h)


def fd_gradient(chart: SolutionChart, x: Sequence[float], fd_h: float = DEFAULT_FD_H,
                region: str = "delta") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([_fd_partial(chart, x, i, fd_h, region) for i in range(chart.n)])


def recover_lambda(chart: SolutionChart, x: Sequence[float], fd_h: float = DEFAULT_FD_H,
                   region: str = "delta") -> float:
    """Integrating factor ``(du/dx_p) / g_p`` with a central difference on the pivot axis."""
    x = np.asarray(x, dtype=float)
    p = chart.pivot - 1
    du = _fd_partial(chart, x, p, fd_h, region)
    g = eval_field(chart.spec, x)
    return float(du / g[p])


def gradient_alignment_residual(chart: SolutionChart, x: Sequence[float], fd_h: float = DEFAULT_FD_H,
                                region: str = "delta") -> float:
    """Relative size of the part of the FD gradient of ``u`` orthogonal to ``g(x)``."""
    x = np.asarray(x, dtype=float)
    grad = fd_gradient(chart, x, fd_h, region)
    norm = float(np.linalg.norm(grad))
    if norm < 1e-12:
        raise TdeError("gradient of u vanishes (nondegeneracy violated)")
    g = eval_field(chart.spec, x)
    gh = g / np.linalg.norm(g)
    return float(np.linalg.norm(grad - (grad @ gh) * gh) / norm)


def level_fn_pde_residual(chart: SolutionChart, z: float, xtilde: Sequence[float],
                          fd_h: float = DEFAULT_FD_H) -> float:
    """Max over reduced axes of |dE/dx_i (central FD) - f_i(xtilde, E)|."""
    xt = np.asarray(xtilde, dtype=float)
    E = eval_level_fn(chart, z, xt)
    g = eval_field(chart.spec, chart.join(xt, E))
    p = chart.pivot - 1
    others = [i for i in range(chart.n) if i != p]
    worst = 0.0
    for k, i in enumerate(others):
        e = np.zeros(len(xt))
        e[k] = fd_h
        dE = (eval_level_fn(chart, z, xt + e) - eval_level_fn(chart, z, xt - e)) / (2 * fd_h)
        worst = max(worst, abs(dE - (-g[i] / g[p])))
    return worst
