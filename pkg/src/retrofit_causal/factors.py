"""Discrete variables, dense factor tables and CPT estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class FactorError(ValueError):
    pass


class ZeroMassError(FactorError):
    """Raised when normalizing a factor whose entries sum to zero."""


@dataclass(frozen=True)
class DiscreteVariable:
    name: str
    states: tuple[str, ...]
    # numeric stand-in per state (e.g. a bin midpoint); None when categorical
    representatives: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        if not self.states:
            raise FactorError(f"variable {self.name!r} needs at least one state")
        if len(set(self.states)) != len(self.states):
            raise FactorError(f"variable {self.name!r} has duplicate state labels")
        if self.representatives is not None:
            reps = tuple(float(r) for r in self.representatives)
            if len(reps) != len(self.states):
                raise FactorError(f"variable {self.name!r}: one representative per state required")
            object.__setattr__(self, "representatives", reps)

    @property
    def cardinality(self) -> int:
        return len(self.states)

    def index(self, state: str | int) -> int:
        """State index from a label, or pass-through for a valid integer index."""
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if 0 <= state < self.cardinality:
                return int(state)
            raise FactorError(f"state index {state} out of range for {self.name!r}")
        try:
            return self.states.index(str(state))
        except ValueError:
            raise FactorError(f"unknown state {state!r} for variable {self.name!r}") from None

    @classmethod
    def binary(cls, name: str) -> "DiscreteVariable":
        return cls(name, ("false", "true"))

    @classmethod
    def with_cardinality(cls, name: str, k: int) -> "DiscreteVariable":
        return cls(name, tuple(str(i) for i in range(k)))

    def to_dict(self) -> dict:
        d = {"name": self.name, "states": list(self.states)}
        if self.representatives is not None:
            d["representatives"] = list(self.representatives)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteVariable":
        reps = d.get("representatives")
        return cls(d["name"], tuple(d["states"]), tuple(reps) if reps is not None else None)


class Factor:
    """Non-negative table over the joint states of its scope.

    The scope is kept sorted by variable name and ``values`` has one axis per
    scope variable in that order.
    """

    __slots__ = ("scope", "values")

    def __init__(self, scope: Sequence[DiscreteVariable], values):
        scope = list(scope)
        names = [v.name for v in scope]
        if len(set(names)) != len(names):
            raise FactorError("factor scope variables must be distinct")
        shape = tuple(v.cardinality for v in scope)
        arr = np.asarray(values, dtype=float)
        if arr.size != int(np.prod(shape, dtype=int)):
            raise FactorError(f"table has {arr.size} entries, scope needs {int(np.prod(shape, dtype=int))}")
        arr = arr.reshape(shape)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise FactorError("factor entries must be finite and non-negative")
        order = sorted(range(len(scope)), key=lambda i: names[i])
        self.scope: tuple[DiscreteVariable, ...] = tuple(scope[i] for i in order)
        self.values: np.ndarray = np.transpose(arr, order).copy() if scope else arr.copy()
        self.values.setflags(write=False)

    @classmethod
    def ones(cls, scope: Sequence[DiscreteVariable]) -> "Factor":
        return cls(scope, np.ones(tuple(v.cardinality for v in scope)))

    @classmethod
    def scalar(cls, value: float) -> "Factor":
        return cls([], np.asarray(value, dtype=float))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.scope)

    def variable(self, name: str) -> DiscreteVariable:
        for v in self.scope:
            if v.name == name:
                return v
        raise FactorError(f"variable {name!r} not in factor scope {self.names}")

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise FactorError(f"variable {name!r} not in factor scope {self.names}") from None

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def __mul__(self, other: "Factor") -> "Factor":
        return product(self, other)

    def __repr__(self) -> str:
        scope = ", ".join(f"{v.name}:{v.cardinality}" for v in self.scope)
        return f"Factor({scope})"

    def allclose(self, other: "Factor", atol: float = 1e-12) -> bool:
        return self.names == other.names and np.allclose(self.values, other.values, rtol=0, atol=atol)

    def to_dict(self) -> dict:
        return {
            "scope": [v.to_dict() for v in self.scope],
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Factor":
        return cls([DiscreteVariable.from_dict(v) for v in d["scope"]], d["values"])

    def distribution(self) -> dict[str, float]:
        """State label -> value for a single-variable factor."""
        if len(self.scope) != 1:
            raise FactorError("distribution() needs a single-variable factor")
        return dict(zip(self.scope[0].states, self.values.tolist()))


def product(f1: Factor, f2: Factor) -> Factor:
    merged: dict[str, DiscreteVariable] = {v.name: v for v in f1.scope}
    for v in f2.scope:
        prev = merged.get(v.name)
        if prev is not None and prev.cardinality != v.cardinality:
            raise FactorError(
                f"cardinality mismatch for {v.name!r}: {prev.cardinality} vs {v.cardinality}"
            )
        merged.setdefault(v.name, v)
    scope = [merged[n] for n in sorted(merged)]
    letters = {n: chr(ord("a") + i) if i < 26 else chr(ord("A") + i - 26) for i, n in enumerate(sorted(merged))}
    spec = "{},{}->{}".format(
        "".join(letters[n] for n in f1.names),
        "".join(letters[n] for n in f2.names),
        "".join(letters[n] for n in sorted(merged)),
    )
    return Factor(scope, np.einsum(spec, f1.values, f2.values))


def product_all(factors: Iterable[Factor]) -> Factor:
    out = Factor.scalar(1.0)
    for f in factors:
        out = product(out, f)
    return out


def marginalize(f: Factor, v: str | DiscreteVariable) -> Factor:
    name = v.name if isinstance(v, DiscreteVariable) else v
    ax = f.axis(name)
    scope = [u for u in f.scope if u.name != name]
    return Factor(scope, f.values.sum(axis=ax))


def reduce(f: Factor, v: str | DiscreteVariable, state: str | int) -> Factor:
    name = v.name if isinstance(v, DiscreteVariable) else v
    ax = f.axis(name)
    idx = f.scope[ax].index(state)
    scope = [u for u in f.scope if u.name != name]
    return Factor(scope, np.take(f.values, idx, axis=ax))


def normalize(f: Factor) -> Factor:
    total = f.values.sum()
    if total <= 0:
        raise ZeroMassError(f"cannot normalize {f!r}: total mass is zero")
    return Factor(f.scope, f.values / total)


def conditional_normalize(f: Factor, child: str) -> Factor:
    """Normalize over ``child`` separately for every assignment of the rest.

    Slices with zero mass are left as zeros.
    """
    ax = f.axis(child)
    sums = f.values.sum(axis=ax, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(sums > 0, f.values / np.where(sums > 0, sums, 1.0), 0.0)
    return Factor(f.scope, vals)


def weighted_counts(data, names: Sequence[str]) -> np.ndarray:
    """Weighted joint counts of ``names`` as an array with one axis per name."""
    variables = [data.variables[n] for n in names]
    shape = tuple(v.cardinality for v in variables)
    if not names:
        w = data.weights
        return np.asarray(float(len(data)) if w is None else float(np.sum(w)))
    cols = [np.asarray(data.columns[n], dtype=np.int64) for n in names]
    flat = np.ravel_multi_index(cols, shape)
    counts = np.bincount(flat, weights=data.weights, minlength=int(np.prod(shape, dtype=int)))
    return counts.astype(float).reshape(shape)


def estimate_cpt(data, child: str, parents: Sequence[str], smoothing: float = 1.0) -> Factor:
    """Estimate P(child | parents) from (weighted) counts plus ``smoothing`` per cell.

    Parent assignments with no mass at all (possible only with zero
    smoothing) get a uniform row.
    """
    if smoothing < 0:
        raise FactorError("smoothing must be non-negative")
    if len(data) == 0:
        raise FactorError("cannot estimate a CPT from an empty dataset")
    names = [child, *parents]
    for n in names:
        if n not in data.columns:
            raise FactorError(f"variable {n!r} not present in dataset")
    counts = weighted_counts(data, names) + smoothing
    sums = counts.sum(axis=0, keepdims=True)
    k = counts.shape[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(sums > 0, counts / np.where(sums > 0, sums, 1.0), 1.0 / k)
    return Factor([data.variables[n] for n in names], table)
