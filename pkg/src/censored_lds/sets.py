"""Observable sets and the schedules that produce them.

Every set is an immutable descriptor exposing a membership oracle.  All
half-space and box constraints are closed.  Sets round-trip through plain
dictionaries (``to_dict`` / ``set_from_dict``) so they can live in YAML
configs and trajectory metadata.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "ObservableSet",
    "FullSpace",
    "EmptySet",
    "HalfSpace",
    "AxisBox",
    "UnionOfHalfSpaces",
    "Intersection",
    "TwoSlab",
    "contains",
    "set_from_dict",
    "SetSchedule",
    "make_static_schedule",
    "make_chasing_schedule",
    "schedule_from_dict",
]


def _as_vector(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (dim,):
        raise ValueError(f"point has shape {x.shape}, set has dimension {dim}")
    return x


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if dim == 1 and X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"points have shape {X.shape}, set has dimension {dim}")
    return X


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


class ObservableSet:
    """Base class.  Subclasses implement ``_mask`` on an (m, dim) array."""

    dim: int

    def contains(self, x) -> bool:
        return bool(self._mask(_as_vector(x, self.dim)[None, :])[0])

    def contains_many(self, X) -> np.ndarray:
        """Vectorized membership for an (m, dim) array of points."""
        return self._mask(_as_points(X, self.dim))

    def _mask(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:  # pragma: no cover
        raise NotImplementedError

    def __contains__(self, x) -> bool:
        return self.contains(x)


@dataclass(frozen=True, eq=False)
class FullSpace(ObservableSet):
    dim: int

    def __post_init__(self):
        _check_dim(self.dim)

    def _mask(self, X):
        return np.ones(X.shape[0], dtype=bool)

    def to_dict(self):
        return {"type": "full", "dim": self.dim}


@dataclass(frozen=True, eq=False)
class EmptySet(ObservableSet):
    dim: int

    def __post_init__(self):
        _check_dim(self.dim)

    def _mask(self, X):
        return np.zeros(X.shape[0], dtype=bool)

    def to_dict(self):
        return {"type": "empty", "dim": self.dim}


@dataclass(frozen=True, eq=False)
class HalfSpace(ObservableSet):
    """``{x : <normal, x> >= offset}``."""

    normal: np.ndarray
    offset: float
    dim: int = field(init=False)

    def __post_init__(self):
        normal = np.array(self.normal, dtype=float).ravel()
        if normal.size == 0 or not np.all(np.isfinite(normal)):
            raise ValueError("half-space normal must be a finite nonempty vector")
        if not np.any(normal != 0):
            raise ValueError("half-space normal must be nonzero")
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "dim", normal.size)

    def _mask(self, X):
        return X @ self.normal >= self.offset

    def to_dict(self):
        return {"type": "halfspace", "normal": _floats(self.normal), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class AxisBox(ObservableSet):
    """``{x : lower <= x <= upper}`` componentwise; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).ravel()
        upper = np.array(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape or lower.size == 0:
            raise ValueError("box bounds must be nonempty vectors of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper componentwise")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "dim", lower.size)

    def _mask(self, X):
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def to_dict(self):
        return {"type": "box", "lower": _floats(self.lower), "upper": _floats(self.upper)}


@dataclass(frozen=True, eq=False)
class UnionOfHalfSpaces(ObservableSet):
    normals: np.ndarray
    offsets: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        normals = np.array(self.normals, dtype=float)
        offsets = np.array(self.offsets, dtype=float).ravel()
        if normals.ndim == 1:
            normals = normals[None, :]
        if normals.ndim != 2 or normals.shape[0] != offsets.size or offsets.size == 0:
            raise ValueError("need one offset per half-space normal")
        if np.any(~np.any(normals != 0, axis=1)):
            raise ValueError("half-space normals must be nonzero")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "dim", normals.shape[1])

    def _mask(self, X):
        return np.any(X @ self.normals.T >= self.offsets, axis=1)

    def to_dict(self):
        return {
            "type": "union_halfspaces",
            "halfspaces": [
                {"normal": _floats(n), "offset": float(o)}
                for n, o in zip(self.normals, self.offsets)
            ],
        }


@dataclass(frozen=True, eq=False)
class Intersection(ObservableSet):
    parts: tuple
    dim: int = field(init=False)

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("intersection needs at least one set")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ValueError(f"intersection of sets with mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "dim", dims.pop())

    def _mask(self, X):
        mask = self.parts[0]._mask(X)
        for p in self.parts[1:]:
            mask &= p._mask(X)
        return mask

    def to_dict(self):
        return {"type": "intersection", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class TwoSlab(ObservableSet):
    """``{x : x[axis] <= 0 or x[axis] >= gap}``; ``gap`` defaults to sqrt(dim).

    ``axis`` is a zero-based coordinate index.
    """

    dim: int
    axis: int = 0
    gap: float | None = None

    def __post_init__(self):
        _check_dim(self.dim)
        if not 0 <= self.axis < self.dim:
            raise ValueError(f"axis {self.axis} out of range for dimension {self.dim}")
        gap = math.sqrt(self.dim) if self.gap is None else float(self.gap)
        if not gap >= 0:
            raise ValueError("two-slab gap must be nonnegative")
        object.__setattr__(self, "gap", gap)

    def _mask(self, X):
        xj = X[:, self.axis]
        return (xj <= 0.0) | (xj >= self.gap)

    def to_dict(self):
        return {"type": "two_slab", "dim": self.dim, "axis": self.axis, "gap": self.gap}


def _check_dim(dim):
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise ValueError(f"dimension must be a positive integer, got {dim!r}")


def contains(s: ObservableSet, x) -> bool:
    return s.contains(x)


def set_from_dict(d: dict[str, Any]) -> ObservableSet:
    """Inverse of ``ObservableSet.to_dict``."""
    kind = d.get("type")
    try:
        if kind == "full":
            return FullSpace(int(d["dim"]))
        if kind == "empty":
            return EmptySet(int(d["dim"]))
        if kind == "halfspace":
            return HalfSpace(d["normal"], d["offset"])
        if kind == "box":
            return AxisBox(d["lower"], d["upper"])
        if kind == "union_halfspaces":
            hs = d["halfspaces"]
            return UnionOfHalfSpaces([h["normal"] for h in hs], [h["offset"] for h in hs])
        if kind == "intersection":
            return Intersection(tuple(set_from_dict(p) for p in d["parts"]))
        if kind == "two_slab":
            return TwoSlab(int(d["dim"]), int(d.get("axis", 0)), d.get("gap"))
    except KeyError as exc:
        raise ValueError(f"set of type {kind!r} is missing field {exc.args[0]!r}") from None
    raise ValueError(f"unknown set type {kind!r}")


@dataclass(frozen=True)
class SetSchedule:
    """Produces S_{t+1} from (t, x_t).

    ``rule`` must not look at anything other than its two arguments; the
    simulator calls it before drawing the noise that moves x_t to x_{t+1}.
    """

    initial: ObservableSet
    rule: Callable[[int, np.ndarray], ObservableSet]
    descriptor: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.initial.dim

    def to_dict(self) -> dict:
        return dict(self.descriptor)


def make_static_schedule(s: ObservableSet) -> SetSchedule:
    return SetSchedule(
        initial=s,
        rule=lambda t, x: s,
        descriptor={"type": "static", "set": s.to_dict()},
    )


def make_chasing_schedule(
    offsets: Sequence[float],
    permutation: Sequence[int] | None = None,
    initial: ObservableSet | None = None,
) -> SetSchedule:
    """Set that chases the last state: ``{y : y_i >= x_t[perm[i]] + offsets[i]}``.

    With two coordinates the default permutation swaps them, which gives the
    adaptive sets ``y_1 >= x_2 + o_1, y_2 >= x_1 + o_2``.  For general
    dimension the default permutation reverses the coordinate order.
    """
    offsets = np.array(offsets, dtype=float).ravel()
    dim = offsets.size
    perm = np.arange(dim)[::-1] if permutation is None else np.asarray(permutation, dtype=int)
    if sorted(perm.tolist()) != list(range(dim)):
        raise ValueError(f"{perm.tolist()} is not a permutation of range({dim})")
    upper = np.full(dim, np.inf)
    init = FullSpace(dim) if initial is None else initial
    if init.dim != dim:
        raise ValueError("initial set dimension does not match offsets")

    def rule(t: int, x: np.ndarray) -> ObservableSet:
        x = _as_vector(x, dim)
        # -inf offsets give -inf + finite = -inf, i.e. an unconstrained axis
        return AxisBox(x[perm] + offsets, upper)

    return SetSchedule(
        initial=init,
        rule=rule,
        descriptor={
            "type": "chasing",
            "offsets": _floats(offsets),
            "permutation": [int(p) for p in perm],
            "initial": init.to_dict(),
        },
    )


def schedule_from_dict(d: dict[str, Any]) -> SetSchedule:
    kind = d.get("type")
    if kind == "static":
        if "set" not in d:
            raise ValueError("static schedule is missing field 'set'")
        return make_static_schedule(set_from_dict(d["set"]))
    if kind == "chasing":
        if "offsets" not in d:
            raise ValueError("chasing schedule is missing field 'offsets'")
        init = set_from_dict(d["initial"]) if "initial" in d else None
        return make_chasing_schedule(d["offsets"], d.get("permutation"), init)
    raise ValueError(f"unknown schedule type {kind!r}")
