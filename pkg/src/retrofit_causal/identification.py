"""Graphical checks for the do-calculus rules, backdoor sets and selection bias."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable

from .graph import (
    OBSERVED,
    CausalGraph,
    GraphError,
    Path,
    d_separated,
    enumerate_backdoor_paths,
    find_active_path,
    mutilate_incoming,
    mutilate_outgoing,
    path_is_blocked,
)

RULES = ("rule1", "rule2", "rule3", "backdoor-a", "backdoor-b", "selection")


class MissingNodeError(GraphError):
    pass


def _nodes(g: CausalGraph, s: Iterable[str] | str) -> frozenset[str]:
    out = frozenset([s]) if isinstance(s, str) else frozenset(s)
    g._check_all(out)
    return out


@dataclass(frozen=True)
class IndependenceClaim:
    """(a _||_ b | z) in a variant of a base graph.

    ``variant`` is ``"base"``, ``"incoming:<targets>"``, ``"outgoing:<targets>"``,
    ``"selection"`` or a combination joined by ``+``.
    """

    a: frozenset[str]
    b: frozenset[str]
    z: frozenset[str]
    variant: str = "base"
    label: str = ""

    def describe(self) -> str:
        z = ", ".join(sorted(self.z))
        cond = f" | {z}" if z else ""
        return f"({', '.join(sorted(self.a))} _||_ {', '.join(sorted(self.b))}{cond}) in {self.variant}"


@dataclass(frozen=True)
class ClaimResult:
    claim: IndependenceClaim
    rule: str
    holds: bool
    witness: Path | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if (self.witness is None) != self.holds:
            raise ValueError("a witness path is required exactly when the claim fails")

    def to_dict(self) -> dict:
        return {
            "label": self.claim.label,
            "rule": self.rule,
            "a": sorted(self.claim.a),
            "b": sorted(self.claim.b),
            "given": sorted(self.claim.z),
            "graph": self.claim.variant,
            "holds": self.holds,
            "witness": list(self.witness.nodes) if self.witness else None,
        }


@dataclass
class IdentificationReport:
    results: list[ClaimResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.holds for r in self.results)

    def failures(self) -> list[ClaimResult]:
        return [r for r in self.results if not r.holds]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "claims": [r.to_dict() for r in self.results]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _claim(g: CausalGraph, a, b, z, variant: str, rule: str, label: str = "") -> ClaimResult:
    claim = IndependenceClaim(frozenset(a), frozenset(b), frozenset(z), variant, label)
    if not a or not b or d_separated(g, a, b, z):
        return ClaimResult(claim, rule, True)
    return ClaimResult(claim, rule, False, find_active_path(g, a, b, z))


def _variant(incoming=(), outgoing=()) -> str:
    parts = []
    if incoming:
        parts.append("incoming:" + ",".join(sorted(incoming)))
    if outgoing:
        parts.append("outgoing:" + ",".join(sorted(outgoing)))
    return "+".join(parts) or "base"


def _prepare(g, y, z, x, w):
    y, z, x, w = (_nodes(g, s) for s in (y, z, x, w))
    sets = [y, z, x, w]
    for i, j in itertools.combinations(range(4), 2):
        if sets[i] & sets[j]:
            raise ValueError("y, z, x and w must be pairwise disjoint")
    return y, z, x, w


def rule1_result(g, y, z, x=(), w=(), label="") -> ClaimResult:
    y, z, x, w = _prepare(g, y, z, x, w)
    gx = mutilate_incoming(g, x)
    return _claim(gx, y, z, x | w, _variant(incoming=x), "rule1", label)


def rule2_result(g, y, z, x=(), w=(), label="") -> ClaimResult:
    y, z, x, w = _prepare(g, y, z, x, w)
    h = mutilate_incoming(mutilate_outgoing(g, z), x)
    return _claim(h, y, z, x | w, _variant(incoming=x, outgoing=z), "rule2", label)


def rule3_result(g, y, z, x=(), w=(), label="") -> ClaimResult:
    y, z, x, w = _prepare(g, y, z, x, w)
    gx = mutilate_incoming(g, x)
    anc_w = gx.ancestors_of_set(w) - w
    z_not_anc = frozenset(n for n in z if n not in anc_w)
    h = mutilate_incoming(g, x | z_not_anc)
    return _claim(h, y, z, x | w, _variant(incoming=x | z_not_anc), "rule3", label)


def check_rule1(g: CausalGraph, y, z, x=(), w=()) -> bool:
    """P(y | do(x), z, w) = P(y | do(x), w) is licensed."""
    return rule1_result(g, y, z, x, w).holds


def check_rule2(g: CausalGraph, y, z, x=(), w=()) -> bool:
    """P(y | do(x), do(z), w) = P(y | do(x), z, w) is licensed."""
    return rule2_result(g, y, z, x, w).holds


def check_rule3(g: CausalGraph, y, z, x=(), w=()) -> bool:
    """P(y | do(x), do(z), w) = P(y | do(x), w) is licensed."""
    return rule3_result(g, y, z, x, w).holds


def is_backdoor_adjustment(g: CausalGraph, x: str, y: str, adjust: Iterable[str]) -> bool:
    adjust = _nodes(g, adjust)
    if adjust & g.descendants(x) or x in adjust or y in adjust:
        return False
    return all(path_is_blocked(g, p, adjust) for p in enumerate_backdoor_paths(g, x, y))


def find_backdoor_adjustment_sets(g: CausalGraph, x: str, y: str, max_size: int = 3) -> list[frozenset[str]]:
    """Observed sets of at most ``max_size`` nodes satisfying the backdoor criterion.

    Ordered by size, then by sorted member names.
    """
    if x == y:
        raise GraphError("treatment and outcome must differ")
    g._check(x)
    g._check(y)
    forbidden = g.descendants(x) | {x, y}
    candidates = sorted(n for n in g.observed if n not in forbidden)
    # validity only depends on whether every backdoor path is blocked, which
    # d-separation in the outgoing-mutilated graph decides without enumeration
    gu = mutilate_outgoing(g, [x]) if g.kind(x) == OBSERVED else g
    out = []
    for size in range(0, max_size + 1):
        for combo in itertools.combinations(candidates, size):
            if d_separated(gu, {x}, {y}, combo):
                out.append(frozenset(combo))
    return out


REQUIRED_NODES = ("X", "Y0", "W", "V2", "V7")


def verify_estimator_preconditions(g: CausalGraph) -> IdentificationReport:
    """Check the four graph conditions behind the covariate-specific estimator."""
    missing = [n for n in REQUIRED_NODES if n not in g]
    if missing:
        raise MissingNodeError("graph lacks required node(s): " + ", ".join(missing))
    return IdentificationReport([
        # do(x) -> x inside P(y0 | do(x), w, v7)
        rule2_result(g, {"Y0"}, {"X"}, (), {"W", "V7"}, label="S7"),
        # do(x) -> x inside P(v7, w | do(x), v2)
        rule2_result(g, {"V7", "W"}, {"X"}, (), {"V2"}, label="S10"),
        # P(v2 | do(x)) = P(v2)
        rule3_result(g, {"V2"}, {"X"}, (), (), label="S11"),
        # do(x) -> x inside P(w | do(x), v2)
        rule2_result(g, {"W"}, {"X"}, (), {"V2"}, label="S13"),
    ])


def selection_result(g: CausalGraph, y: str, x: str, cond: Iterable[str] = ()) -> ClaimResult:
    s = g.selection_node
    if s is None:
        raise GraphError("graph has no selection node")
    cond = _nodes(g, cond)
    gx = mutilate_incoming(g, [x])
    return _claim(gx, {y}, {s}, {x} | cond, "selection+" + _variant(incoming={x}), "selection", "SEL")


def check_selection_recoverability(g: CausalGraph, y: str, x: str, cond: Iterable[str] = ()) -> bool:
    """Whether P(y | do(x), cond) equals its value in the selected (S=1) sample."""
    return selection_result(g, y, x, cond).holds
