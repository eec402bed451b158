import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dag, tv
from retrofit_causal.factors import DiscreteVariable, Factor
from retrofit_causal.graph import CausalGraph
from retrofit_causal.scm import (
    SCM_KINDS,
    W_EDGES,
    ScmError,
    ScmSpec,
    exact_ate,
    exact_interventional,
    exact_observational,
    independent_scm,
    load_reference,
    random_scm,
    reference_scm,
    sample_full,
    sample_observational,
)


def deterministic_scm():
    a, b = DiscreteVariable.with_cardinality("A", 3), DiscreteVariable.with_cardinality("B", 2)
    g = CausalGraph(["A", "B"], [("A", "B")])
    return ScmSpec(g, {"A": Factor([a], [0, 0, 1]), "B": Factor([a, b], [[1, 0], [1, 0], [0, 1]])}, {})


class TestSampling:
    def test_deterministic_rows_identical(self):
        ds = sample_observational(deterministic_scm(), 50, seed=1)
        assert set(ds.columns["A"]) == {2} and set(ds.columns["B"]) == {1}

    def test_rejects_empty(self, rebound_scm):
        with pytest.raises(ScmError):
            sample_observational(rebound_scm, 0, seed=1)

    def test_single_row(self, rebound_scm):
        assert len(sample_observational(rebound_scm, 1, seed=1)) == 1

    def test_latents_dropped_but_kept_in_full_sample(self, rebound_scm):
        ds = sample_observational(rebound_scm, 10, seed=2)
        assert set(ds.names) == set(rebound_scm.graph.observed)
        assert {"U0", "U5"} <= set(sample_full(rebound_scm, 10, seed=2))

    def test_seed_reproducible(self, rebound_scm):
        a = sample_observational(rebound_scm, 1000, seed=3)
        b = sample_observational(rebound_scm, 1000, seed=3)
        assert a.fingerprint() == b.fingerprint()

    def test_marginals_within_three_standard_errors(self, rebound_scm, rebound_data):
        # one scalar per marginal (its mean state index) keeps the family-wise
        # false-alarm rate near 14 * 0.27% instead of one test per cell
        n = len(rebound_data)
        for name in rebound_scm.observed:
            exact = exact_observational(rebound_scm, name).values
            idx = np.arange(len(exact))
            mean = idx @ exact
            se = np.sqrt((idx**2 @ exact - mean**2) / n)
            assert abs(rebound_data.columns[name].mean() - mean) <= 3 * se, name

    def test_burden_matches_binned_ratio(self, rebound_scm):
        full = sample_full(rebound_scm, 5000, seed=4)
        reps = {n: np.asarray(rebound_scm.variables[n].representatives) for n in ("V1", "V10", "V7")}
        ratio = np.minimum((reps["V1"][full["V1"]] + reps["V10"][full["V10"]]) / reps["V7"][full["V7"]], 1.0)
        expected = np.clip(np.searchsorted(W_EDGES, ratio, side="right") - 1, 0, len(W_EDGES) - 2)
        assert np.array_equal(full["W"], expected)


class TestExact:
    def test_do_on_sink_leaves_others(self, rebound_scm):
        for node in ("W", "V7", "X"):
            a = exact_interventional(rebound_scm, {"Y0": 3}, node)
            assert a.allclose(exact_observational(rebound_scm, node), 1e-12)

    def test_mechanism_free(self, rebound_scm):
        scm = independent_scm(rebound_scm.variables, rebound_scm.graph, seed=3)
        for x in ("false", "true"):
            assert exact_interventional(scm, {"X": x}, "Y0").allclose(exact_observational(scm, "Y0"), 1e-12)

    def test_confounding_gap(self, rebound_scm):
        for x in ("false", "true"):
            gap = tv(exact_interventional(rebound_scm, {"X": x}, "Y0"), exact_observational(rebound_scm, "Y0", {"X": x}))
            assert gap > 0.05

    def test_unknown_or_latent_intervention(self, rebound_scm):
        with pytest.raises(ScmError):
            exact_interventional(rebound_scm, {"Q": 0}, "Y0")
        with pytest.raises(ScmError):
            exact_interventional(rebound_scm, {"U2": 0}, "Y0")


class TestReference:
    def test_null_effect(self, null_scm):
        assert abs(exact_ate(null_scm)) < 1e-12
        for w in range(len(W_EDGES) - 1):
            assert abs(exact_ate(null_scm, given={"W": w})) < 1e-9

    def test_rebound_cate_shrinks_with_burden(self, rebound_scm):
        cates = [exact_ate(rebound_scm, given={"W": w}) for w in range(len(W_EDGES) - 1)]
        assert all(c < 0 for c in cates)
        assert all(abs(a) > abs(b) for a, b in zip(cates, cates[1:]))

    def test_unconfounded_naive_is_causal(self, unconfounded_scm):
        for x in ("false", "true"):
            a = exact_interventional(unconfounded_scm, {"X": x}, "Y0")
            assert a.allclose(exact_observational(unconfounded_scm, "Y0", {"X": x}), 1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ScmError):
            reference_scm("nope")

    @pytest.mark.parametrize("kind", SCM_KINDS)
    def test_fixture_matches_generator(self, kind):
        assert load_reference(kind).to_json() == reference_scm(kind).to_json()

    def test_seed_changes_nuisance_only(self):
        a, b = reference_scm(seed=1), reference_scm(seed=2)
        assert a.mechanisms["W"].allclose(b.mechanisms["W"], 0)
        assert not a.mechanisms["V3"].allclose(b.mechanisms["V3"], 1e-6)


def test_json_round_trip(rebound_scm):
    again = ScmSpec.from_json(json.dumps(rebound_scm.to_dict()))
    assert again.graph == rebound_scm.graph
    for name, table in rebound_scm.tables().items():
        assert again.tables()[name].allclose(table, 0)


def test_validation():
    a = DiscreteVariable.with_cardinality("A", 2)
    with pytest.raises(ScmError):
        ScmSpec(CausalGraph(["A"]), {"A": Factor([a], [0.5, 0.6])}, {})
    with pytest.raises(ScmError):
        ScmSpec(CausalGraph(["A"]), {}, {})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampled_frequencies_track_exact(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 4, 0.5)
    scm = random_scm(g, {}, int(rng.integers(0, 2**31)))
    n = 20_000
    full = sample_full(scm, n, int(rng.integers(0, 2**31)))
    for name in g.nodes:
        p = exact_observational(scm, name).values
        freq = np.bincount(full[name], minlength=len(p)) / n
        assert np.all(np.abs(freq - p) <= 5 * np.sqrt(p * (1 - p) / n) + 1e-12)
