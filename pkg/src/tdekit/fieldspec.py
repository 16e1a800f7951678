"""Vector fields on open boxes: representation, evaluation and Jacobians."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, KinkError, NonFiniteError, ZeroFieldError
from .expr import Expr, compile_many, diff, parse_expr, switches

DEFAULT_KINK_TOL = 1e-9
DEFAULT_FD_STEP = 1e-5


@dataclass(frozen=True)
class DomainBox:
    """Open axis-aligned box ``prod (lower_i, upper_i)``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must be nonempty and of equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError(f"empty box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, n: int) -> DomainBox:
        return cls((lo,) * n, (hi,) * n)

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: Sequence[float], strict: bool = True) -> bool:
        x = np.asarray(x, dtype=float)
        if strict:
            return bool(np.all(x > self.lo) and np.all(x < self.hi))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def contains_box(self, other: DomainBox) -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def boundary_distance(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lo), np.min(self.hi - x)))

    def grid(self, m: int) -> np.ndarray:
        """Tensor grid with ``m`` points per axis, endpoints included; shape ``(m**n, n)``."""
        axes = [np.linspace(a, b, m) for a, b in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(size, self.n))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class FieldSpec:
    """A vector field ``g`` with ``n`` expression components on an open box."""

    n: int
    components: tuple[Expr, ...]
    domain: DomainBox
    name: str = ""
    sources: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension must be at least 2")
        if len(self.components) != self.n:
            raise ValueError(f"expected {self.n} components, got {len(self.components)}")
        if self.domain.n != self.n:
            raise ValueError("domain dimension does not match the field")
        if any(c.max_var() > self.n for c in self.components):
            raise ValueError("component refers to a variable beyond x_n")

    @classmethod
    def from_strings(cls, components: Sequence[str], lower, upper, name: str = "") -> FieldSpec:
        n = len(components)
        exprs = tuple(parse_expr(s, n) for s in components)
        return cls(n, exprs, DomainBox(tuple(lower), tuple(upper)), name, tuple(components))

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> FieldSpec:
        if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        comps = doc["components"]
        if int(doc["n"]) != len(comps):
            raise ValueError("'n' does not match the number of components")
        dom = doc["domain"]
        return cls.from_strings(comps, dom["lower"], dom["upper"], doc.get("name", ""))

    def to_json(self) -> dict:
        from .expr import to_text

        comps = list(self.sources) if self.sources else [to_text(c) for c in self.components]
        return {"n": self.n, "components": comps, "domain": self.domain.to_dict(), "name": self.name}

    # compiled closures ----------------------------------------------------

    @cached_property
    def _g(self):
        return compile_many(self.components)

    @cached_property
    def derivative_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        """``derivative_exprs[i][j]`` is the symbolic d g_{i+1} / d x_{j+1}."""
        return tuple(tuple(diff(c, j) for j in range(1, self.n + 1)) for c in self.components)

    @cached_property
    def _jac(self):
        return compile_many([d for row in self.derivative_exprs for d in row])

    @cached_property
    def switch_exprs(self) -> tuple[Expr, ...]:
        seen: dict[Expr, None] = {}
        for c in self.components:
            for s in switches(c):
                seen[s] = None
        return tuple(seen)

    @cached_property
    def _switch(self):
        if not self.switch_exprs:
            return None
        return compile_many(self.switch_exprs)

    # evaluation ------------------------------------------------------------

    def raw(self, x: Sequence[float]) -> tuple[float, ...]:
        """Field value without domain or zero checks (hot-loop use)."""
        try:
            return self._g(x)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise NonFiniteError(f"cannot evaluate field at {tuple(x)}: {exc}") from None

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return eval_field(self, x)

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([c.evaluate_many(X) for c in self.components], axis=1)

    def switch_values(self, x: Sequence[float]) -> tuple[float, ...]:
        if self._switch is None:
            return ()
        return self._switch(x)

    def kink_distance(self, x: Sequence[float]) -> float:
        """Smallest |switching function| at ``x`` (``inf`` for smooth fields)."""
        vals = self.switch_values(x)
        return min((abs(v) for v in vals), default=math.inf)


def eval_field(spec: FieldSpec, x: Sequence[float]) -> np.ndarray:
    """Field value ``g(x)`` at an interior point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,) or not np.all(np.isfinite(x)):
        raise DomainError(f"point {x} is not a finite {spec.n}-vector")
    if not spec.domain.contains(x):
        raise DomainError(f"point {tuple(x)} is outside the open domain")
    g = np.array(spec.raw(x), dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite field value at {tuple(x)}")
    if not np.any(g):
        raise ZeroFieldError(f"field vanishes at {tuple(x)}")
    return g


def fd_steps(x: np.ndarray, h: float) -> np.ndarray:
    return h * np.maximum(1.0, np.abs(x))


def jacobian(spec: FieldSpec, x: Sequence[float], mode: str = "exact",
             h: float = DEFAULT_FD_STEP, kink_tol: float = DEFAULT_KINK_TOL) -> np.ndarray:
    """Matrix ``J[i, j] = d g_i / d x_j`` at ``x``.

    ``mode="exact"`` differentiates the expression tree on the active branch and
    refuses points within ``kink_tol`` of a branch boundary.  ``mode="central-fd"``
    uses central differences with step ``h * max(1, |x_j|)`` and refuses stencils
    that straddle a boundary.
    """
    x = np.asarray(x, dtype=float)
    eval_field(spec, x)
    n = spec.n
    if mode == "exact":
        if spec.kink_distance(x) < kink_tol:
            raise KinkError(f"{tuple(x)} lies on a branch boundary")
        try:
            vals = spec._jac(x)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise NonFiniteError(f"cannot differentiate at {tuple(x)}: {exc}") from None
        J = np.array(vals, dtype=float).reshape(n, n)
    elif mode in ("central-fd", "fd"):
        steps = fd_steps(x, h)
        base_sign = np.sign(spec.switch_values(x))
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = steps[j]
            xp, xm = x + e, x - e
            if not (spec.domain.contains(xp) and spec.domain.contains(xm)):
                raise DomainError(f"FD stencil at {tuple(x)} leaves the domain")
            if base_sign.size and (np.any(np.sign(spec.switch_values(xp)) != base_sign)
                                   or np.any(np.sign(spec.switch_values(xm)) != base_sign)):
                raise KinkError(f"FD stencil at {tuple(x)} straddles a branch boundary")
            J[:, j] = (np.array(spec.raw(xp)) - np.array(spec.raw(xm))) / (2.0 * steps[j])
    else:
        raise ValueError(f"unknown derivative mode {mode!r}")
    if not np.all(np.isfinite(J)):
        raise NonFiniteError(f"non-finite Jacobian at {tuple(x)}")
    return J


# ---------------------------------------------------------------------------
# built-in fields

BUILTIN_FIELDS: dict[str, dict] = {
    "debreu": {
        "components": [
            "if(x2 >= 0, x2^2 / sqrt(1 + x2^4), 0)",
            "if(x2 >= 0, 1 / sqrt(1 + x2^4), 1)",
        ],
        "domain": ([-2.0, -2.0], [2.0, 2.0]),
    },
    "arrow_enthoven": {
        "components": [
            "1 + (x1 + 1) / sqrt((x1 + 1)^2 + 4*x2)",
            "2 / sqrt((x1 + 1)^2 + 4*x2)",
        ],
        "domain": ([0.05, 0.05], [4.0, 4.0]),
    },
    "katzner": {
        "components": ["-3*x1^2*x2 - x2^3", "-x1^3 - 3*x1*x2^2"],
        "domain": ([0.05, 0.05], [3.0, 3.0]),
    },
    "grad_product3": {
        "components": ["x2*x3", "x1*x3", "x1*x2"],
        "domain": ([0.25, 0.25, 0.25], [4.0, 4.0, 4.0]),
    },
    "contact3": {
        "components": ["x2", "-x1", "1"],
        "domain": ([-2.0, -2.0, -2.0], [2.0, 2.0, 2.0]),
    },
    # gradient of the concave -(x1^2 + x2^2); its solutions are not quasi-convex
    "quasiconcave_control": {
        "components": ["-2*x1", "-2*x2"],
        "domain": ([0.5, 0.5], [3.0, 3.0]),
    },
}


def builtin(name: str) -> FieldSpec:
    try:
        entry = BUILTIN_FIELDS[name]
    except KeyError:
        raise KeyError(f"unknown built-in field {name!r}; known: {sorted(BUILTIN_FIELDS)}") from None
    lo, hi = entry["domain"]
    return FieldSpec.from_strings(entry["components"], lo, hi, name)
