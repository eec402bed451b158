"""Exact inference by variable elimination over a fitted discrete model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .factors import (
    DiscreteVariable,
    Factor,
    ZeroMassError,
    estimate_cpt,
    marginalize,
    normalize,
    product,
    product_all,
    reduce,
)
from .graph import OBSERVED, CausalGraph


class InferenceError(ValueError):
    pass


class ZeroProbabilityEvidence(InferenceError, ZeroMassError):
    pass


@dataclass(frozen=True)
class FactorizedModel:
    graph: CausalGraph
    cpts: Mapping[str, Factor]
    variables: Mapping[str, DiscreteVariable] = field(default_factory=dict)
    # memo for derived tables (joint marginals etc.); not part of equality
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        variables = dict(self.variables)
        for f in self.cpts.values():
            for v in f.scope:
                variables.setdefault(v.name, v)
        object.__setattr__(self, "variables", variables)
        expected = {n for n in self.graph.observed}
        if set(self.cpts) != expected:
            missing = sorted(expected - set(self.cpts))
            extra = sorted(set(self.cpts) - expected)
            raise InferenceError(f"need one CPT per observed node; missing {missing}, unexpected {extra}")
        for node, f in self.cpts.items():
            parents = {p for p in self.graph.parents(node) if self.graph.kind(p) == OBSERVED}
            if set(f.names) != parents | {node}:
                raise InferenceError(f"CPT for {node!r} has scope {f.names}, expected {sorted(parents | {node})}")

    @property
    def names(self) -> list[str]:
        return sorted(self.cpts)

    def observed_parents(self, node: str) -> list[str]:
        return sorted(p for p in self.graph.parents(node) if self.graph.kind(p) == OBSERVED)


def fit_model(graph: CausalGraph, data, smoothing: float = 1.0) -> FactorizedModel:
    """One CPT per observed node, conditioned on its observed parents."""
    cpts = {}
    for node in sorted(graph.observed):
        parents = sorted(p for p in graph.parents(node) if graph.kind(p) == OBSERVED)
        cpts[node] = estimate_cpt(data, node, parents, smoothing)
    return FactorizedModel(graph, cpts, {n: data.variables[n] for n in graph.observed})


def _interaction_graph(factors: Iterable[Factor]) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {}
    for f in factors:
        for a in f.names:
            adj.setdefault(a, set())
            for b in f.names:
                if a != b:
                    adj[a].add(b)
    return adj


def min_degree_order(factors: Iterable[Factor], keep: Iterable[str]) -> list[str]:
    """Greedy min-degree ordering on the factors' interaction graph.

    Eliminating a node connects its remaining neighbours. Ties go to the
    lexicographically smallest name.
    """
    adj = _interaction_graph(factors)
    keep = set(keep)
    remaining = {n for n in adj if n not in keep}
    order = []
    while remaining:
        node = min(remaining, key=lambda n: (len(adj[n]), n))
        nbrs = adj.pop(node)
        for a in nbrs:
            adj[a].discard(node)
            adj[a] |= nbrs - {a}
        remaining.discard(node)
        order.append(node)
    return order


def elimination_order(model: FactorizedModel, keep: Iterable[str] = ()) -> list[str]:
    keep = set(keep)
    unknown = keep - set(model.variables)
    if unknown:
        raise InferenceError(f"unknown variables {sorted(unknown)}")
    return min_degree_order(model.cpts.values(), keep)


def _relevant_nodes(model: FactorizedModel, names: Iterable[str]) -> set[str]:
    # CPTs of nodes that are not ancestors of the query/evidence sum to one
    out = set()
    for n in names:
        out.add(n)
        out |= {a for a in model.graph.ancestors(n) if a in model.cpts}
    return out


def variable_elimination(
    factors: Sequence[Factor],
    variables: Mapping[str, DiscreteVariable],
    query: Sequence[str],
    evidence: Mapping[str, str | int] | None = None,
    order: Sequence[str] | None = None,
) -> Factor:
    """Normalized P(query | evidence) from an arbitrary list of factors."""
    evidence = dict(evidence or {})
    factors = list(factors)
    for var, state in evidence.items():
        variables[var].index(state)
        factors = [reduce(f, var, state) if var in f.names else f for f in factors]
    if order is None:
        order = min_degree_order(factors, query)
    else:
        present = {n for f in factors for n in f.names} - set(query)
        order = [n for n in order if n in present]
        missing = present - set(order)
        if missing:
            raise InferenceError(f"elimination order misses {sorted(missing)}")
    for var in order:
        touching = [f for f in factors if var in f.names]
        if not touching:
            continue
        rest = [f for f in factors if var not in f.names]
        factors = rest + [marginalize(product_all(touching), var)]
    result = product_all(factors)
    for q in query:
        if q not in result.names:
            result = product(result, Factor.ones([variables[q]]))
    try:
        return normalize(result)
    except ZeroMassError:
        raise ZeroProbabilityEvidence(f"evidence {evidence} has zero probability under the model") from None


def eliminate(
    model: FactorizedModel,
    query: Iterable[str],
    evidence: Mapping[str, str | int] | None = None,
    order: Sequence[str] | None = None,
) -> Factor:
    """P(query | evidence) as a normalized factor over ``query``."""
    query = list(dict.fromkeys(query))
    evidence = dict(evidence or {})
    for n in (*query, *evidence):
        if n not in model.variables:
            raise InferenceError(f"unknown variable {n!r}")
    clash = set(query) & set(evidence)
    if clash:
        raise InferenceError(f"variables both queried and observed: {sorted(clash)}")
    relevant = _relevant_nodes(model, [*query, *evidence])
    factors = [model.cpts[n] for n in sorted(relevant)]
    return variable_elimination(factors, model.variables, query, evidence, order)


def joint(model: FactorizedModel, names: Iterable[str]) -> Factor:
    """Joint marginal over ``names`` (no evidence)."""
    return eliminate(model, names)
