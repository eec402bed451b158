"""Tabular structural causal models used as ground truth for the estimators.

Every node, latent ones included, carries a CPT over all of its parents, so
observational and interventional distributions are computed exactly by the
same elimination routine that serves fitted models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np

from .data import DiscreteDataset
from .factors import DiscreteVariable, Factor
from .graph import LATENT, CausalGraph, load_graph_spec, load_preset, serialize
from .inference import FactorizedModel, InferenceError, variable_elimination

SCM_KINDS = ("null-effect", "confounded-rebound", "unconfounded")
FIXTURES = {kind: f"scm_{kind.replace('-', '_')}.json" for kind in SCM_KINDS}
REFERENCE_SEED = 7


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class ScmSpec:
    graph: CausalGraph
    # node -> Factor over node and all of its parents (non-latent nodes)
    mechanisms: Mapping[str, Factor]
    # latent node -> marginal Factor
    exogenous: Mapping[str, Factor]
    variables: Mapping[str, DiscreteVariable] = field(default_factory=dict)

    def __post_init__(self):
        variables = dict(self.variables)
        for f in (*self.mechanisms.values(), *self.exogenous.values()):
            for v in f.scope:
                variables.setdefault(v.name, v)
        object.__setattr__(self, "variables", variables)
        g = self.graph
        latent = set(g.latent)
        if set(self.exogenous) != latent:
            raise ScmError(f"exogenous tables must cover exactly the latent nodes {sorted(latent)}")
        if set(self.mechanisms) != set(g.nodes) - latent:
            missing = sorted(set(g.nodes) - latent - set(self.mechanisms))
            raise ScmError(f"mechanisms must cover every non-latent node; missing {missing}")
        for node, f in {**self.mechanisms, **self.exogenous}.items():
            expected = set(g.parents(node)) | {node}
            if set(f.names) != expected:
                raise ScmError(f"table for {node!r} has scope {f.names}, expected {sorted(expected)}")
            sums = f.values.sum(axis=f.axis(node))
            if not np.allclose(sums, 1.0, atol=1e-9):
                raise ScmError(f"table for {node!r} is not normalized per parent assignment")

    def tables(self) -> dict[str, Factor]:
        return {**self.exogenous, **self.mechanisms}

    @property
    def observed(self) -> list[str]:
        return sorted(self.graph.observed)

    def to_dict(self) -> dict:
        return {
            "graph": serialize(self.graph),
            "tables": {n: f.to_dict() for n, f in sorted(self.tables().items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        g = load_graph_spec(d["graph"])
        tables = {n: Factor.from_dict(t) for n, t in d["tables"].items()}
        latent = set(g.latent)
        return cls(
            g,
            {n: f for n, f in tables.items() if n not in latent},
            {n: f for n, f in tables.items() if n in latent},
        )

    @classmethod
    def from_json(cls, text: str) -> "ScmSpec":
        return cls.from_dict(json.loads(text))


def _conditional_sampler(table: Factor, node: str, parents: list[str]):
    """Array of shape (*parent cards, k) holding cumulative child probabilities."""
    order = [table.axis(p) for p in parents] + [table.axis(node)]
    cdf = np.cumsum(np.transpose(table.values, order), axis=-1)
    cdf[..., -1] = 1.0
    return cdf


def sample_full(scm: ScmSpec, n: int, seed: int) -> dict[str, np.ndarray]:
    """Ancestral sample of every node, latents included."""
    if n < 1:
        raise ScmError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    tables = scm.tables()
    out: dict[str, np.ndarray] = {}
    for node in scm.graph.topological_order():
        parents = sorted(scm.graph.parents(node))
        cdf = _conditional_sampler(tables[node], node, parents)
        rows = cdf[tuple(out[p] for p in parents)] if parents else np.broadcast_to(cdf, (n, cdf.shape[-1]))
        u = rng.random(n)
        out[node] = (u[:, None] >= rows).sum(axis=1).astype(np.int64)
    return out


def sample_observational(scm: ScmSpec, n: int, seed: int) -> DiscreteDataset:
    """``n`` ancestral draws with latent columns dropped."""
    full = sample_full(scm, n, seed)
    names = scm.observed
    return DiscreteDataset(
        {k: full[k] for k in names},
        {k: scm.variables[k] for k in names},
        None,
        {"source": "scm", "seed": int(seed), "rows": int(n)},
    )


def _intervened_tables(scm: ScmSpec, do: Mapping[str, str | int]) -> list[Factor]:
    tables = scm.tables()
    for node, state in do.items():
        if node not in scm.graph:
            raise ScmError(f"unknown node {node!r}")
        if scm.graph.kind(node) == LATENT:
            raise ScmError(f"cannot intervene on latent node {node!r}")
        var = scm.variables[node]
        point = np.zeros(var.cardinality)
        point[var.index(state)] = 1.0
        tables[node] = Factor([var], point)
    return list(tables.values())


def exact_interventional(
    scm: ScmSpec,
    do: Mapping[str, str | int],
    query: str | list[str],
    evidence: Mapping[str, str | int] | None = None,
) -> Factor:
    """P(query | do(...), evidence) by elimination over the full graph."""
    query = [query] if isinstance(query, str) else list(query)
    for n in (*query, *(evidence or {})):
        if n not in scm.graph:
            raise ScmError(f"unknown node {n!r}")
    return variable_elimination(_intervened_tables(scm, do), scm.variables, query, evidence)


def exact_observational(scm: ScmSpec, query: str | list[str], evidence=None) -> Factor:
    return exact_interventional(scm, {}, query, evidence)


def exact_ate(scm: ScmSpec, outcome: str = "Y0", treatment: str = "X", treated="true", control="false",
              given: Mapping[str, str | int] | None = None) -> float:
    reps = np.asarray(scm.variables[outcome].representatives)
    t = exact_interventional(scm, {treatment: treated}, outcome, given).values
    c = exact_interventional(scm, {treatment: control}, outcome, given).values
    return float(reps @ t - reps @ c)


def projected_model(scm: ScmSpec) -> FactorizedModel:
    """Observed-only model whose CPTs are the SCM's exact P(node | observed parents).

    Coincides with the infinite-sample limit of fitting on observational
    draws when smoothing is zero.
    """
    g = scm.graph
    cpts = {}
    for node in sorted(g.observed):
        parents = sorted(p for p in g.parents(node) if g.kind(p) != LATENT)
        joint = exact_observational(scm, [node, *parents])
        axis = joint.axis(node)
        sums = joint.values.sum(axis=axis, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = np.where(sums > 0, joint.values / np.where(sums > 0, sums, 1.0),
                            1.0 / joint.values.shape[axis])
        cpts[node] = Factor(joint.scope, vals)
    return FactorizedModel(g, cpts, {n: scm.variables[n] for n in g.observed})


# -- reference models -----------------------------------------------------------------


def _var(name, k, reps=None):
    states = tuple(str(i) for i in range(k))
    return DiscreteVariable(name, states, reps)


def _binned_normal(means: np.ndarray, sd: float, edges: np.ndarray) -> np.ndarray:
    """Probability of each bin for a normal with the given means (last axis = bins)."""
    from math import erf, sqrt

    cdf = np.vectorize(lambda z: 0.5 * (1.0 + erf(z / sqrt(2.0))))
    inner = edges[1:-1]
    c = cdf((inner[None, :] - means.reshape(-1, 1)) / sd)
    c = np.concatenate([np.zeros((c.shape[0], 1)), c, np.ones((c.shape[0], 1))], axis=1)
    p = np.diff(c, axis=1)
    return p.reshape(*means.shape, len(edges) - 1)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _table(node_var, parent_vars, fn) -> Factor:
    """Build P(node | parents) from ``fn(*parent_indices) -> probability vector``."""
    shape = tuple(v.cardinality for v in parent_vars)
    arr = np.zeros(shape + (node_var.cardinality,))
    for idx in np.ndindex(*shape):
        row = np.asarray(fn(*idx), dtype=float)
        arr[idx] = row / row.sum()
    scope = list(parent_vars) + [node_var]
    return Factor(scope, arr)


Y0_EDGES = np.linspace(3000.0, 33000.0, 11)
W_EDGES = np.array([0.0, 0.025, 0.04, 0.055, 0.075, 1.0])


def reference_scm(kind: str = "confounded-rebound", seed: int = REFERENCE_SEED) -> ScmSpec:
    """Synthetic model over the ehs-fp graph.

    ``confounded-rebound``: X lowers gas use directly and through gas spend,
    the saving shrinks as energy burden rises, and income confounds tenure,
    insulation and burden. ``null-effect``: no mechanism reads X.
    ``unconfounded``: X is assigned independently of everything else.
    ``seed`` jitters the nuisance tables only, never the designed effects.
    """
    if kind not in SCM_KINDS:
        raise ScmError(f"unknown SCM kind {kind!r}; choose from {', '.join(SCM_KINDS)}")
    rng = np.random.default_rng(seed)
    g = load_preset("ehs-fp")
    treat_effect = kind != "null-effect"

    def jitter(p, scale=0.15):
        p = np.asarray(p, dtype=float) * np.exp(rng.normal(0.0, scale, size=len(p)))
        return p / p.sum()

    v = {f"U{i}": _var(f"U{i}", 2) for i in range(6)}
    v.update({
        "V0": _var("V0", 3),
        "V3": _var("V3", 3),
        "V4": _var("V4", 2),
        "V5": _var("V5", 3),
        "V6": _var("V6", 3),
        "V8": _var("V8", 3),
        "V2": _var("V2", 2),
        "V7": _var("V7", 4, (15000.0, 25000.0, 40000.0, 70000.0)),
        "V9": _var("V9", 2, (0.035, 0.045)),
        "V10": _var("V10", 3, (450.0, 650.0, 850.0)),
        "V1": _var("V1", 5, (250.0, 450.0, 650.0, 850.0, 1050.0)),
        "X": DiscreteVariable.binary("X"),
        "W": _var("W", len(W_EDGES) - 1, tuple((W_EDGES[:-1] + np.minimum(W_EDGES[1:], 0.1)) / 2)),
        "Y0": _var("Y0", len(Y0_EDGES) - 1, tuple((Y0_EDGES[:-1] + Y0_EDGES[1:]) / 2)),
    })

    def par(node):
        return [v[p] for p in sorted(g.parents(node))]

    exo = {f"U{i}": Factor([v[f"U{i}"]], jitter([0.5, 0.5], 0.1)) for i in range(6)}
    mech: dict[str, Factor] = {}

    def add(node, fn):
        names = sorted(g.parents(node))
        mech[node] = _table(v[node], par(node), lambda *idx: fn(**dict(zip(names, idx))))

    add("V9", lambda: jitter([0.5, 0.5]))
    add("V10", lambda V9: jitter([0.3, 0.4, 0.3]))
    add("V3", lambda U0, U3: jitter(np.exp(0.4 * (U0 + U3) * np.array([0, 1, 2]) - 0.3 * np.array([0, 1, 2]))))
    add("V0", lambda V3: jitter([0.5, 0.3, 0.2] if V3 == 0 else [0.3, 0.4, 0.3]))
    add("V8", lambda U4: jitter([0.4, 0.35, 0.25] if U4 == 0 else [0.25, 0.35, 0.4]))
    add("V5", lambda U1: jitter([0.4, 0.35, 0.25] if U1 == 0 else [0.3, 0.35, 0.35]))

    def income(U0, U1, U2, U5, V5, V8):
        score = 0.25 * (U0 + U1) + 0.15 * (U2 + U5) + 0.2 * V5 - 0.1 * V8
        return jitter(_softmax_rows(score * np.arange(4) + np.array([0.0, 0.3, 0.2, -0.3])))

    add("V7", income)
    add("V4", lambda U4, V0, V8: jitter([0.6, 0.4] if (U4 + V8) < 2 else [0.4, 0.6]))
    add("V6", lambda V7: jitter(_softmax_rows(0.6 * V7 * np.arange(3) + np.array([0.3, 0.2, -0.4]))))
    # tenure: owner-occupation rises steeply with income
    add("V2", lambda V7: [0.9 - 0.25 * V7, 0.1 + 0.25 * V7])

    if kind == "unconfounded":
        add("X", lambda V2: [0.5, 0.5])
    else:
        # owner-occupiers insulate far more often
        add("X", lambda V2: [0.85, 0.15] if V2 == 0 else [0.15, 0.85])

    def gas_spend(U0, U4, V6, V9, X):
        mean = 1.6 + 0.8 * V6 + 0.5 * V9 + 0.2 * (U0 + U4) - (0.9 if (treat_effect and X == 1) else 0.0)
        return _binned_normal(np.array(mean), 0.8, np.array([-np.inf, 1.0, 2.0, 3.0, 4.0, np.inf]))

    add("V1", gas_spend)

    # W is the binned burden ratio: a point mass for every parent assignment
    reps_v1, reps_v10, reps_v7 = (np.asarray(v[n].representatives) for n in ("V1", "V10", "V7"))

    def burden(V1, V10, V7):
        ratio = min(1.0, (reps_v1[V1] + reps_v10[V10]) / reps_v7[V7])
        k = int(np.searchsorted(W_EDGES, ratio, side="right") - 1)
        k = min(k, len(W_EDGES) - 2)
        row = np.zeros(len(W_EDGES) - 1)
        row[k] = 1.0
        return row

    add("W", burden)

    def gas_use(U2, U3, U5, V0, V3, W, X):
        mean = 14000.0 + 1500.0 * V3 + 900.0 * V0 + 600.0 * (U2 + U5) + 400.0 * U3
        mean += 1800.0 * W  # rebound: more heating where the bill bites harder
        if treat_effect and X == 1:
            mean -= 4500.0 * (1.0 - W / (len(W_EDGES) - 1))
        return _binned_normal(np.array(mean), 3500.0, np.concatenate([[-np.inf], Y0_EDGES[1:-1], [np.inf]]))

    add("Y0", gas_use)
    return ScmSpec(g, mech, exo, v)


def load_reference(kind: str) -> ScmSpec:
    """Committed fixture for ``kind`` (see ``reference_scm``)."""
    if kind not in FIXTURES:
        raise ScmError(f"unknown SCM kind {kind!r}; choose from {', '.join(SCM_KINDS)}")
    text = resources.files("retrofit_causal.fixtures").joinpath(FIXTURES[kind]).read_text(encoding="utf-8")
    return ScmSpec.from_json(text)


def independent_scm(variables: Mapping[str, DiscreteVariable], graph: CausalGraph, seed: int) -> ScmSpec:
    """SCM on ``graph`` whose mechanisms ignore their parents (each row the same random marginal)."""
    rng = np.random.default_rng(seed)
    mech, exo = {}, {}
    for node in graph.nodes:
        var = variables[node]
        parents = [variables[p] for p in sorted(graph.parents(node))]
        marg = rng.dirichlet(np.ones(var.cardinality))
        f = _table(var, parents, lambda *idx: marg)
        (exo if graph.kind(node) == LATENT else mech)[node] = f
    return ScmSpec(graph, mech, exo, dict(variables))


def random_scm(graph: CausalGraph, cards: Mapping[str, int], seed: int, alpha: float = 1.0) -> ScmSpec:
    """SCM with Dirichlet-random tables on ``graph``."""
    rng = np.random.default_rng(seed)
    variables = {n: _var(n, cards.get(n, 2), tuple(float(i) for i in range(cards.get(n, 2)))) for n in graph.nodes}
    mech, exo = {}, {}
    for node in graph.nodes:
        var = variables[node]
        parents = [variables[p] for p in sorted(graph.parents(node))]
        f = _table(var, parents, lambda *idx: rng.dirichlet(np.full(var.cardinality, alpha)))
        (exo if graph.kind(node) == LATENT else mech)[node] = f
    return ScmSpec(graph, mech, exo, variables)


__all__ = [
    "SCM_KINDS",
    "ScmError",
    "ScmSpec",
    "InferenceError",
    "exact_ate",
    "exact_interventional",
    "exact_observational",
    "independent_scm",
    "load_reference",
    "projected_model",
    "random_scm",
    "reference_scm",
    "sample_full",
    "sample_observational",
]
