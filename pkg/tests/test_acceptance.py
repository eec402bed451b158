"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``C<k> PASS|FAIL|SKIP`` line (also repeated in the
terminal summary) and fails when its criterion is not met.
"""

import hashlib
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, brute_force, random_model, synthetic_export, tv
from retrofit_causal.cli import main
from retrofit_causal.data import BinningRule, DEFAULT_BINNING, prepare_dataset
from retrofit_causal.estimation import (
    ate,
    backdoor_effect,
    cate_curve,
    covariate_specific_effect,
    naive_conditional,
    population_effect,
)
from retrofit_causal.graph import augment_selection, load_preset, enumerate_backdoor_paths, mutilate_incoming, mutilate_outgoing
from retrofit_causal.identification import check_selection_recoverability, verify_estimator_preconditions
from retrofit_causal.inference import eliminate, fit_model
from retrofit_causal.refutation import (
    AtePipeline,
    placebo_p_value,
    placebo_test,
    subsample_p_value,
    subsample_test,
)
from retrofit_causal.scm import exact_ate, exact_interventional, sample_observational

EXPORT_ENV = "RETROFIT_EHS_EXPORT"


@contextmanager
def criterion(label, budget_s):
    start = time.perf_counter()
    notes: dict = {}
    try:
        yield notes
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
    except pytest.skip.Exception as exc:
        line = f"{label} SKIP {exc.msg}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    except BaseException as exc:
        line = f"{label} FAIL {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    detail = " ".join(f"{k}={v}" for k, v in notes.items())
    line = f"{label} PASS {time.perf_counter() - start:.2f}s {detail}".rstrip()
    print(line)
    ACCEPTANCE_LINES.append(line)


def test_c1_path_counts(ehs):
    with criterion("C1 graph transcription", 1.0) as notes:
        under = mutilate_outgoing(ehs, ["X"])
        over = mutilate_incoming(ehs, ["X"])
        counts = (
            len(enumerate_backdoor_paths(under, "X", "Y0")),
            len(enumerate_backdoor_paths(under, "X", "W")),
            len(enumerate_backdoor_paths(over, "V2", "X")),
        )
        notes["counts"] = "/".join(map(str, counts))
        assert counts == (67, 101, 134)


def test_c2_identification(ehs):
    with criterion("C2 identification", 1.0) as notes:
        report = verify_estimator_preconditions(ehs)
        notes["claims"] = ",".join(f"{r.claim.label}:{r.holds}" for r in report.results)
        assert report.passed and len(report.results) == 4
        selected = augment_selection(ehs, ["W"])
        assert check_selection_recoverability(selected, "Y0", "X", {"W"})
        assert not check_selection_recoverability(selected, "Y0", "X", set())


def test_c3_inference_oracle():
    with criterion("C3 inference oracle", 30.0) as notes:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            model = random_model(rng, n=int(rng.integers(2, 9)))
            names = sorted(model.variables)
            order = rng.permutation(names)
            k = int(rng.integers(1, min(3, len(names)) + 1))
            query = sorted(order[:k])
            rest = order[k:]
            evidence = {v: int(rng.integers(0, 2)) for v in rest[: int(rng.integers(0, len(rest) + 1))]}
            exact = brute_force(model, query, evidence)
            got = eliminate(model, query, evidence)
            got = np.transpose(got.values, [got.axis(q) for q in query])
            worst = max(worst, float(np.max(np.abs(got - exact))))
        notes["max_abs"] = f"{worst:.1e}"
        assert worst < 1e-10


def test_c4_estimator(ehs, rebound_scm):
    with criterion("C4 estimator correctness", 300.0) as notes:
        data = sample_observational(rebound_scm, 200_000, seed=4)
        model = fit_model(ehs, data)
        pop, strata, naive, gap = [], [], [], 0.0
        for x in ("true", "false"):
            truth = exact_interventional(rebound_scm, {"X": x}, "Y0")
            pop.append(tv(population_effect(model, x), truth))
            naive.append(tv(naive_conditional(model, x), truth))
            for w in model.variables["W"].states:
                strata.append(tv(covariate_specific_effect(model, x, w),
                                 exact_interventional(rebound_scm, {"X": x}, "Y0", {"W": w})))
            gap = max(gap, float(np.max(np.abs(population_effect(model, x).values - backdoor_effect(model, x).values))))
        notes.update(pop_tv=f"{max(pop):.4f}", stratum_tv=f"{max(strata):.4f}", naive_tv=f"{min(naive):.4f}",
                     backdoor_gap=f"{gap:.1e}")
        assert max(pop) < 0.03
        assert max(strata) < 0.05
        assert min(naive) > 0.05
        assert gap < 1e-9


def test_c5_null_effect(ehs, null_scm):
    with criterion("C5 null-effect soundness", 120.0) as notes:
        exact = exact_ate(null_scm)
        data = sample_observational(null_scm, 200_000, seed=5)
        pipeline = AtePipeline(ehs)
        sampled = pipeline(data)
        report = placebo_test(pipeline, data, 200, seed=5, baseline=sampled)
        bound = float(np.percentile(np.abs(report.effects), 99))
        notes.update(exact=f"{exact:.1e}", sampled=f"{sampled:.2f}", placebo_q99=f"{bound:.2f}")
        assert abs(exact) < 1e-9
        assert abs(sampled) < bound


def test_c6_refutation(ehs, rebound_scm):
    with criterion("C6 refutation", 600.0) as notes:
        effects = np.linspace(-60.0, 50.0, 1600)
        assert placebo_p_value(effects, -2980.1) == 1 / 1601
        assert round(1 / 1601, 6) == 0.000625
        sub = np.array([-3000.0, -2950.0, -2900.0, -2870.0])
        assert subsample_p_value(sub, float(sub.mean())) == 1.0
        data = sample_observational(rebound_scm, 200_000, seed=6)
        pipeline = AtePipeline(ehs)
        baseline = pipeline(data)
        placebo = placebo_test(pipeline, data, 200, seed=6, baseline=baseline)
        subsample = subsample_test(pipeline, data, 200, 0.4, seed=6, baseline=baseline)
        notes.update(ate=f"{baseline:.1f}", placebo_p=f"{placebo.p_value:.4f}", subsample_p=f"{subsample.p_value:.4f}")
        assert placebo.p_value < 0.05
        assert subsample.p_value > 0.05


# -- reproduction path on the licensed survey export -----------------------------------

# 1%-wide burden strata centred on whole percentages, so stratum 2 is W = 2% +/- 0.5%
REPRODUCTION_BINNING = dict(DEFAULT_BINNING, W=BinningRule("equal-width", 24, (0.005, 0.245)))
TARGETS = {"ate": -2980.0, "cate_2pct": -3720.0, "cate_high": -500.0, "pr_crossing": 13_000.0}


def reproduction_measurements(source, n_per_stratum=60_000, n_placebo=1600, n_subsample=1800, seed=None, jobs=1):
    """Headline statistics of the full pipeline on a survey export."""
    data = prepare_dataset(source, n_per_stratum=n_per_stratum, seed=seed, binning=REPRODUCTION_BINNING)
    g = load_preset("ehs-fp")
    model = fit_model(g, data)
    est = ate(model)
    w = model.variables["W"]
    curve = cate_curve(model)
    p_w = eliminate(model, ["W"]).values
    # strata are identified by their bin midpoints
    at_2pct = next((c.delta for r, c in zip(w.representatives, curve) if c and abs(r - 0.02) < 1e-9), None)
    high = [(p, c.delta) for r, p, c in zip(w.representatives, p_w, curve) if c and r > 0.11 + 1e-9]
    cate_high = sum(p * d for p, d in high) / sum(p for p, _ in high) if high else None
    reps = est.outcome.representatives
    crossing = next((reps[i] for i in range(1, len(est.pr))
                     if est.pr[i - 1] is not None and est.pr[i] is not None and est.pr[i - 1] > 1 >= est.pr[i]), None)
    pipeline = AtePipeline(g)
    placebo = placebo_test(pipeline, data, n_placebo, seed=data.provenance.get("seed", 0), jobs=jobs, baseline=est.delta)
    subsample = subsample_test(pipeline, data, n_subsample, 0.4, seed=data.provenance.get("seed", 0), jobs=jobs,
                               baseline=est.delta)
    return {
        "ate": est.delta,
        "cate_2pct": at_2pct,
        "cate_high": cate_high,
        "pr_crossing": crossing,
        "placebo": placebo,
        "subsample": subsample,
    }


def reproduction_failures(m) -> list[str]:
    out = []
    if not abs(m["ate"] - TARGETS["ate"]) <= 0.10 * abs(TARGETS["ate"]):
        out.append(f"ate {m['ate']:.1f}")
    if m["cate_2pct"] is None or abs(m["cate_2pct"] - TARGETS["cate_2pct"]) > 0.10 * abs(TARGETS["cate_2pct"]):
        out.append(f"cate_2pct {m['cate_2pct']}")
    if m["cate_high"] is None or abs(m["cate_high"] - TARGETS["cate_high"]) > 250.0:
        out.append(f"cate_high {m['cate_high']}")
    if m["pr_crossing"] is None or abs(m["pr_crossing"] - TARGETS["pr_crossing"]) > 1000.0:
        out.append(f"pr_crossing {m['pr_crossing']}")
    placebo, subsample = m["placebo"], m["subsample"]
    if not (-66.5 <= placebo.mean <= 51.6 and placebo.p_value <= 0.000625 + 1e-12):
        out.append(f"placebo mean {placebo.mean:.1f} p {placebo.p_value:.6f}")
    if not (-3004.1 <= subsample.mean <= -2872.2 and subsample.p_value > 0.05):
        out.append(f"subsample mean {subsample.mean:.1f} p {subsample.p_value:.4f}")
    return out


def test_reproduction_procedure_runs_on_synthetic_export(tmp_path):
    # the licensed export is not available in CI; this only exercises the procedure
    path = tmp_path / "export.csv"
    path.write_text(synthetic_export(np.random.default_rng(7), 150))
    m = reproduction_measurements(path, n_per_stratum=3000, n_placebo=5, n_subsample=5, seed=1)
    assert np.isfinite(m["ate"]) and m["placebo"].n == 5
    assert isinstance(reproduction_failures(m), list)


def test_c7_reproduction():
    with criterion("C7 reproduction path", float("inf")) as notes:
        export = os.environ.get(EXPORT_ENV)
        if not export:
            pytest.skip(f"not CI-gated; set {EXPORT_ENV} to a survey export in the documented schema")
        m = reproduction_measurements(export, jobs=os.cpu_count() or 1)
        notes.update(ate=f"{m['ate']:.1f}", cate_2pct=m["cate_2pct"], cate_high=m["cate_high"],
                     pr_crossing=m["pr_crossing"])
        failures = reproduction_failures(m)
        assert not failures, "; ".join(failures)


def _hash_tree(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_c8_determinism(tmp_path, capsys):
    with criterion("C8 determinism", 60.0) as notes:
        hashes = []
        for attempt in ("a", "b"):
            root = tmp_path / attempt
            sim = root / "sim" / "dataset.csv"
            commands = [
                ["simulate", "--n", "20000", "--seed", "8", "--out", str(root / "sim")],
                ["identify", "--out", str(root / "identify")],
                ["estimate", "ate", "--data", str(sim), "--out", str(root / "ate")],
                ["estimate", "cate", "--data", str(sim), "--out", str(root / "cate")],
                ["estimate", "pr", "--fixture", "confounded-rebound", "--rows", "20000", "--seed", "8",
                 "--out", str(root / "pr")],
                ["refute", "placebo", "--data", str(sim), "--n", "20", "--seed", "8", "--out", str(root / "placebo")],
                ["refute", "subsample", "--data", str(sim), "--n", "20", "--seed", "8", "--jobs", "2",
                 "--out", str(root / "subsample")],
            ]
            for argv in commands:
                assert main(argv) in (0, 1), argv
            capsys.readouterr()
            hashes.append(_hash_tree(root))
        notes["sha256"] = hashes[0][:16]
        assert hashes[0] == hashes[1]
