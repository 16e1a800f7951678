"""Explicit Runge-Kutta integration and the parametrised ray ODE.

``integrate`` works for scalar (float) or vector (ndarray) states.  The ray ODE
carries a scalar state: the pivot coordinate of a point travelling along the
straight segment from the chart centre to a target in the reduced coordinates.
"""

from __future__ import annotations

import csv
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, FieldError, GuardExitError, OdeError, ZeroFieldError
from .fieldspec import FieldSpec

COMPLETED = "completed"
LEFT_GUARD_BOX = "left_guard_box"
STEP_LIMIT = "step_limit"

# Fehlberg 4(5) tableau
_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass(frozen=True)
class OdeConfig:
    """Integrator settings.

    ``guard`` is an optional ``(lower, upper)`` pair bounding the state; an
    accepted step that leaves it ends the integration with termination
    ``"left_guard_box"``.
    """

    method: str = "rkf45"
    step: float = 1e-2
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_steps: int = 1_000_000
    guard: tuple | None = None

    def __post_init__(self):
        if self.method not in ("rkf45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.step <= 0:
            raise ValueError("tolerances and step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def with_guard(self, lower, upper) -> OdeConfig:
        return OdeConfig(self.method, self.step, self.abs_tol, self.rel_tol, self.max_steps, (lower, upper))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    termination: str = COMPLETED
    exit_time: float | None = None
    exit_state: object = None
    stats: dict = field(default_factory=dict)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def final(self):
        return self.states[-1]

    @property
    def completed(self) -> bool:
        return self.termination == COMPLETED

    def __call__(self, t: float):
        """Dense output by cubic Hermite interpolation between accepted steps."""
        ts = self.times
        if t < ts[0] or t > ts[-1]:
            raise ValueError(f"t={t} outside the integrated range [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if k >= len(ts) - 1:
            return self.states[-1]
        if t == ts[k]:
            return self.states[k]
        h = ts[k + 1] - ts[k]
        s = (t - ts[k]) / h
        y0, y1 = self.states[k], self.states[k + 1]
        d0, d1 = self.derivs[k], self.derivs[k + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            states = np.asarray(self.states)
            ncol = 1 if states.ndim == 1 else states.shape[1]
            w.writerow(["t"] + [f"y{i + 1}" for i in range(ncol)])
            for t, y in zip(self.times, states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in np.atleast_1d(y)])


def _as_state(y0):
    if np.ndim(y0) == 0:
        return float(y0), True
    return np.array(y0, dtype=float), False


def _finite(v, scalar: bool) -> bool:
    return math.isfinite(v) if scalar else bool(np.all(np.isfinite(v)))


def _in_guard(y, guard, scalar: bool) -> bool:
    if guard is None:
        return True
    lo, hi = guard
    if scalar:
        return lo <= y <= hi
    return bool(np.all(y >= np.asarray(lo)) and np.all(y <= np.asarray(hi)))


def _eval(rhs, t, y, scalar):
    v = rhs(t, y)
    if not scalar:
        v = np.asarray(v, dtype=float)
    else:
        v = float(v)
    if not _finite(v, scalar):
        raise OdeError(f"non-finite right-hand side at t={t}")
    return v


def integrate(rhs: Callable, t0: float, y0, t1: float, cfg: OdeConfig = OdeConfig()) -> Trajectory:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1 > t0``.

    Backward integration is done by the caller through the substitution
    ``s = -t``.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    y, scalar = _as_state(y0)
    if not _finite(y, scalar):
        raise OdeError("non-finite initial state")
    if cfg.method == "rk4":
        return _rk4(rhs, float(t0), y, float(t1), cfg, scalar)
    return _rkf45(rhs, float(t0), y, float(t1), cfg, scalar)


def _finish(times, states, derivs, termination, scalar, **kw) -> Trajectory:
    st = np.array(states, dtype=float)
    dv = np.array(derivs, dtype=float)
    return Trajectory(np.array(times), st, dv, termination, **kw)


def _rk4(rhs, t0, y, t1, cfg, scalar) -> Trajectory:
    nsteps = max(1, int(round((t1 - t0) / cfg.step)))
    h = (t1 - t0) / nsteps
    t = t0
    try:
        d = _eval(rhs, t, y, scalar)
    except FieldError as exc:
        raise OdeError(str(exc)) from exc
    times, states, derivs = [t], [y], [d]
    for k in range(nsteps):
        if k >= cfg.max_steps:
            return _finish(times, states, derivs, STEP_LIMIT, scalar)
        try:
            k1 = d
            k2 = _eval(rhs, t + h / 2, y + h / 2 * k1, scalar)
            k3 = _eval(rhs, t + h / 2, y + h / 2 * k2, scalar)
            k4 = _eval(rhs, t + h, y + h * k3, scalar)
        except FieldError as exc:
            raise OdeError(str(exc)) from exc
        y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_new = t0 + (k + 1) * h
        if not _in_guard(y_new, cfg.guard, scalar):
            return _finish(times, states, derivs, LEFT_GUARD_BOX, scalar, exit_time=t_new, exit_state=y_new)
        t, y = t_new, y_new
        try:
            d = _eval(rhs, t, y, scalar)
        except FieldError as exc:
            raise OdeError(str(exc)) from exc
        times.append(t)
        states.append(y)
        derivs.append(d)
    return _finish(times, states, derivs, COMPLETED, scalar)


def _rkf45(rhs, t0, y, t1, cfg, scalar) -> Trajectory:
    """Fehlberg pair with local extrapolation (the 5th-order solution is kept)."""
    atol, rtol = cfg.abs_tol, cfg.rel_tol
    span = t1 - t0
    t = t0
    try:
        d = _eval(rhs, t, y, scalar)
    except FieldError as exc:
        raise OdeError(str(exc)) from exc
    times, states, derivs = [t], [y], [d]
    # initial step from the size of the derivative
    dnorm = abs(d) if scalar else float(np.max(np.abs(d)))
    ynorm = abs(y) if scalar else float(np.max(np.abs(y)))
    h = span / 8 if dnorm == 0 else min(span / 8, 0.05 * (atol + rtol * ynorm) ** 0.2 / dnorm ** 0.2 * span ** 0.8 + 0.0)
    h = max(h, span * 1e-6)
    accepted = rejected = 0
    while t < t1:
        if accepted >= cfg.max_steps:
            return _finish(times, states, derivs, STEP_LIMIT, scalar, stats={"accepted": accepted, "rejected": rejected})
        last = False
        if t + h >= t1 or t + 1.01 * h >= t1:
            h = t1 - t
            last = True
        if h <= 1e-14 * max(1.0, abs(t)):
            raise OdeError(f"step size underflow at t={t}")
        try:
            ks = [d]
            for s in range(1, 6):
                acc = y
                for a, kk in zip(_A[s], ks):
                    if a:
                        acc = acc + (h * a) * kk
                ks.append(_eval(rhs, t + _C[s] * h, acc, scalar))
        except FieldError:
            # a stage probed outside the field's domain: shrink and retry
            h *= 0.25
            rejected += 1
            continue
        err = 0.0
        y_new = y
        for b, e, kk in zip(_B5, _E, ks):
            if b:
                y_new = y_new + (h * b) * kk
            if e:
                err = err + (h * e) * kk
        if scalar:
            ratio = abs(err) / (atol + rtol * max(abs(y), abs(y_new)))
        else:
            ratio = float(np.max(np.abs(err) / (atol + rtol * np.maximum(np.abs(y), np.abs(y_new)))))
        if ratio <= 1.0:
            t_new = t1 if last else t + h
            if not _in_guard(y_new, cfg.guard, scalar):
                return _finish(times, states, derivs, LEFT_GUARD_BOX, scalar,
                               exit_time=t_new, exit_state=y_new,
                               stats={"accepted": accepted, "rejected": rejected})
            try:
                d_new = _eval(rhs, t_new, y_new, scalar)
            except FieldError:
                return _finish(times, states, derivs, LEFT_GUARD_BOX, scalar,
                               exit_time=t_new, exit_state=y_new,
                               stats={"accepted": accepted, "rejected": rejected})
            t, y, d = t_new, y_new, d_new
            times.append(t)
            states.append(y)
            derivs.append(d)
            accepted += 1
            factor = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
        else:
            rejected += 1
            factor = max(0.1, 0.9 * ratio ** -0.25)
        h *= factor
    return _finish(times, states, derivs, COMPLETED, scalar, stats={"accepted": accepted, "rejected": rejected})


# ---------------------------------------------------------------------------
# the ray ODE


def split_point(x: Sequence[float], pivot: int) -> tuple[tuple[float, ...], float]:
    """``(reduced point, pivot coordinate)`` of ``x`` for a 1-based pivot."""
    x = [float(v) for v in x]
    p = pivot - 1
    return tuple(x[:p] + x[p + 1:]), x[p]


def join_point(xtilde: Sequence[float], y: float, pivot: int) -> np.ndarray:
    xt = [float(v) for v in xtilde]
    p = pivot - 1
    return np.array(xt[:p] + [float(y)] + xt[p:])


def ray_rhs(spec: FieldSpec, pivot: int, xstar_tilde: Sequence[float], xtilde: Sequence[float]):
    """Right side ``f((1-t) xs + t x, z) . (x - xs)`` with ``f_i = -g_i / g_pivot``."""
    p = pivot - 1
    base = tuple(float(v) for v in xstar_tilde)
    dirs = tuple(float(b) - a for a, b in zip(base, xtilde))
    if len(base) != spec.n - 1 or len(dirs) != spec.n - 1:
        raise ValueError("reduced points must have n-1 coordinates")
    if not any(dirs):
        return lambda t, z: 0.0
    others = [i for i in range(spec.n) if i != p]
    lo, hi = spec.domain.lower, spec.domain.upper
    gfun = spec.raw
    pairs = [(i, d) for i, d in zip(others, dirs) if d != 0.0]

    def rhs(t, z):
        pt = [a + t * d for a, d in zip(base, dirs)]
        pt.insert(p, z)
        for v, a, b in zip(pt, lo, hi):
            if not a < v < b:
                raise DomainError(f"ray state {pt} left the domain")
        g = gfun(pt)
        gp = g[p]
        if gp == 0.0:
            raise ZeroFieldError(f"pivot component vanishes at {pt}")
        s = 0.0
        for i, d in pairs:
            s += g[i] * d
        return -s / gp

    return rhs


class SolutionFunction:
    """Memoising evaluator of ``c(t; xtilde, z)`` on ``t`` in ``[0, 1]``."""

    def __init__(self, spec: FieldSpec, pivot: int, xstar: Sequence[float],
                 cfg: OdeConfig = OdeConfig(), cache_size: int = 4096):
        self.spec = spec
        self.pivot = pivot
        self.xstar = np.asarray(xstar, dtype=float)
        self.xstar_tilde, self.center_value = split_point(self.xstar, pivot)
        self.cfg = cfg
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self._cache_size = cache_size
        self.solves = 0

    def trajectory(self, xtilde: Sequence[float], z: float) -> Trajectory:
        key = (tuple(float(v) for v in xtilde), float(z))
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        rhs = ray_rhs(self.spec, self.pivot, self.xstar_tilde, key[0])
        traj = integrate(rhs, 0.0, key[1], 1.0, self.cfg)
        with self._lock:
            self.solves += 1
            self._cache[key] = traj
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return traj

    def __call__(self, t: float, xtilde: Sequence[float], z: float) -> float:
        if t == 0.0:
            return z
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        traj = self.trajectory(xtilde, z)
        if not traj.completed and t > traj.t_end:
            raise GuardExitError(f"integration left the guard box at t={traj.exit_time}",
                                 traj.exit_time)
        return float(traj(t))

    def backward(self, xtilde: Sequence[float], target: float) -> float | None:
        """Initial value ``z`` with ``c(1; xtilde, z) = target``, by reverse-time integration.

        Returns ``None`` when the reverse integration leaves the guard box.
        """
        fwd = ray_rhs(self.spec, self.pivot, self.xstar_tilde, xtilde)
        traj = integrate(lambda s, y: -fwd(1.0 - s, y), 0.0, float(target), 1.0, self.cfg)
        if not traj.completed:
            return None
        return float(traj.final)


def solution_function(spec: FieldSpec, pivot: int, xstar: Sequence[float],
                      cfg: OdeConfig = OdeConfig()) -> SolutionFunction:
    return SolutionFunction(spec, pivot, xstar, cfg)
