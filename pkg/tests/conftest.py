import csv
import io
import itertools

import numpy as np
import pytest

from retrofit_causal.data import DiscreteDataset
from retrofit_causal.factors import DiscreteVariable, Factor
from retrofit_causal.graph import CausalGraph, load_preset
from retrofit_causal.scm import load_reference, sample_observational

N_ORACLE = 200_000


def chain(*names):
    return CausalGraph(list(names), list(zip(names, names[1:])))


def random_dag(rng, n, p=0.4, prefix="N"):
    names = [f"{prefix}{i}" for i in range(n)]
    edges = [(names[i], names[j]) for i, j in itertools.combinations(range(n), 2) if rng.random() < p]
    return CausalGraph(names, edges)


def binary_dataset(columns, weights=None):
    variables = {n: DiscreteVariable.with_cardinality(n, 2) for n in columns}
    return DiscreteDataset({k: np.asarray(v) for k, v in columns.items()}, variables, weights)


def tv(a: Factor, b: Factor) -> float:
    assert a.names == b.names
    return 0.5 * float(np.abs(a.values - b.values).sum())


@pytest.fixture(scope="session")
def ehs():
    return load_preset("ehs-fp")


@pytest.fixture(scope="session")
def rebound_scm():
    return load_reference("confounded-rebound")


@pytest.fixture(scope="session")
def null_scm():
    return load_reference("null-effect")


@pytest.fixture(scope="session")
def unconfounded_scm():
    return load_reference("unconfounded")


@pytest.fixture(scope="session")
def rebound_data(rebound_scm):
    return sample_observational(rebound_scm, N_ORACLE, seed=11)


@pytest.fixture(scope="session")
def rebound_model(ehs, rebound_data):
    from retrofit_causal.inference import fit_model

    return fit_model(ehs, rebound_data)


def random_model(rng, n=8, p=0.35):
    """Random DAG over binary variables with Dirichlet CPTs."""
    from retrofit_causal.inference import FactorizedModel

    g = random_dag(rng, n, p, prefix="B")
    variables = {name: DiscreteVariable.with_cardinality(name, 2) for name in g.nodes}
    cpts = {}
    for node in g.nodes:
        parents = sorted(g.parents(node))
        shape = (2,) * len(parents) + (2,)
        table = rng.dirichlet([1.0, 1.0], size=shape[:-1]) if parents else rng.dirichlet([1.0, 1.0])
        cpts[node] = Factor([variables[q] for q in parents] + [variables[node]], np.reshape(table, shape))
    return FactorizedModel(g, cpts, variables)


def brute_force(model, query, evidence):
    """P(query | evidence) by enumerating the full joint."""
    names = sorted(model.variables)
    out = np.zeros((2,) * len(query))
    for assignment in itertools.product(range(2), repeat=len(names)):
        a = dict(zip(names, assignment))
        if any(a[k] != v for k, v in evidence.items()):
            continue
        p = 1.0
        for node, cpt in model.cpts.items():
            p *= cpt.values[tuple(a[v] for v in cpt.names)]
        out[tuple(a[q] for q in query)] += p
    return out / out.sum()


EXPORT_HEADER = ["year", "weight", "mainfuel", "WallType", "dwtype", "spahcost", "tenure", "dwage", "underocc",
                 "hhsize", "floorarea", "income", "hhcompx", "gasprice", "litecost", "cookcost"]


def synthetic_export(rng, n_per_year=50, years=(2015, 2016, 2017, 2018), non_gas_share=0.16):
    """CSV text shaped like a survey export in the documented schema."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXPORT_HEADER)
    for year in years:
        for _ in range(n_per_year):
            insulated = rng.random() < 0.6
            price = float(rng.choice([0.035, 0.04, 0.045]))
            use = max(2000.0, rng.normal(15400 - (2980 if insulated else 0), 3000))
            writer.writerow([
                year,
                f"{rng.uniform(500, 3000):.1f}",
                "electricity" if rng.random() < non_gas_share else "gas",
                "cavity with insulation" if insulated else "cavity uninsulated",
                rng.choice(["detached", "semi", "terraced", "flat"]),
                f"{use * price:.2f}",
                rng.choice(["owner", "private rent", "social rent"]),
                rng.choice(["pre1919", "1919-64", "post1964"]),
                rng.choice(["yes", "no"]),
                int(rng.integers(1, 6)),
                rng.choice(["small", "medium", "large"]),
                f"{rng.uniform(9000, 80000):.0f}",
                rng.choice(["couple", "single", "family", "other"]),
                price,
                f"{rng.uniform(300, 700):.2f}",
                f"{rng.uniform(50, 150):.2f}",
            ])
    return buf.getvalue()


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
