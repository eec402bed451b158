"""Interventional estimands and treatment-effect summaries from a fitted model.

All quantities are computed from one exact joint table over
(Y0, X, W, V7, V2) obtained by variable elimination, so the covariate-specific
route and the backdoor route agree to floating-point precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .factors import DiscreteVariable, Factor
from .graph import CausalGraph
from .identification import IdentificationReport, verify_estimator_preconditions
from .inference import FactorizedModel, eliminate

OUTCOME, TREATMENT, BURDEN, INCOME, TENURE = "Y0", "X", "W", "V7", "V2"
TREATED, CONTROL = "true", "false"


class EstimationError(ValueError):
    pass


class PreconditionError(EstimationError):
    def __init__(self, report: IdentificationReport):
        failed = ", ".join(r.claim.label or r.claim.describe() for r in report.failures())
        super().__init__(f"estimator preconditions fail on this graph: {failed}")
        self.report = report


class EmptyStratumError(EstimationError):
    pass


@lru_cache(maxsize=32)
def _preconditions(graph: CausalGraph) -> IdentificationReport:
    return verify_estimator_preconditions(graph)


def require_preconditions(model: FactorizedModel) -> None:
    report = _preconditions(model.graph)
    if not report.passed:
        raise PreconditionError(report)


class _Tables:
    """Joint P(y0, x, w, v7, v2) with axes in that order, plus marginals."""

    def __init__(self, model: FactorizedModel):
        names = [OUTCOME, TREATMENT, BURDEN, INCOME, TENURE]
        f = eliminate(model, names)
        self.joint = np.transpose(f.values, [f.axis(n) for n in names])
        self.vars = {n: model.variables[n] for n in names}
        self.p_v2 = self.joint.sum(axis=(0, 1, 2, 3))
        # P(x, v2) and P(x, w, v7, v2)
        self.p_x_v2 = self.joint.sum(axis=(0, 2, 3))
        self.p_x_w_v7_v2 = self.joint.sum(axis=0)


def _tables(model: FactorizedModel) -> _Tables:
    cached = model._cache.get("estimation")
    if cached is None:
        require_preconditions(model)
        for n in (OUTCOME, TREATMENT, BURDEN, INCOME, TENURE):
            if n not in model.variables:
                raise EstimationError(f"model lacks variable {n!r}")
        cached = model._cache["estimation"] = _Tables(model)
    return cached


def _as_dist(var: DiscreteVariable, values: np.ndarray) -> Factor:
    total = values.sum()
    if total <= 0:
        raise EmptyStratumError(f"no probability mass left for {var.name}")
    return Factor([var], values / total)


def _v2_weights(t: _Tables, xi: int) -> np.ndarray:
    # P(v2) / P(x, v2), zero where P(x, v2) = 0 so that stratum is skipped
    pxv = t.p_x_v2[xi]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(pxv > 0, t.p_v2 / np.where(pxv > 0, pxv, 1.0), 0.0)


def _burden_given_do(t: _Tables, xi: int) -> np.ndarray:
    """Unnormalized sum over v2 of P(w, v7 | x, v2) P(v2), shape (w, v7)."""
    return np.einsum("wvk,k->wv", t.p_x_w_v7_v2[xi], _v2_weights(t, xi))


def covariate_specific_effect(model: FactorizedModel, x: str | int, w: str | int) -> Factor:
    """P(y0 | do(x), w) from observational conditionals.

    Sums P(y0 | x, w, v7) weighted by the interventional share of v7 within
    stratum w; (v7, v2) strata with no mass are skipped and the result is
    renormalized.
    """
    t = _tables(model)
    xi = t.vars[TREATMENT].index(x)
    wi = t.vars[BURDEN].index(w)
    num = _burden_given_do(t, xi)[wi]  # over v7
    if num.sum() <= 0:
        raise EmptyStratumError(f"stratum {TREATMENT}={x!r}, {BURDEN}={w!r} has zero probability")
    p_y_xwv7 = t.joint[:, xi, wi, :, :].sum(axis=-1)  # (y0, v7), unnormalized
    mass = p_y_xwv7.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(mass > 0, p_y_xwv7 / np.where(mass > 0, mass, 1.0), 0.0)
    weights = np.where(mass > 0, num, 0.0)
    return _as_dist(t.vars[OUTCOME], cond @ weights)


def intervention_on_w(model: FactorizedModel, x: str | int) -> Factor:
    """P(w | do(x)) as the sum over v2 of P(w | x, v2) P(v2)."""
    t = _tables(model)
    xi = t.vars[TREATMENT].index(x)
    return _as_dist(t.vars[BURDEN], _burden_given_do(t, xi).sum(axis=1))


def population_effect(model: FactorizedModel, x: str | int) -> Factor:
    """P(y0 | do(x)) as the mixture of covariate-specific effects over P(w | do(x))."""
    t = _tables(model)
    pw = intervention_on_w(model, x).values
    out = np.zeros(t.vars[OUTCOME].cardinality)
    for wi in range(len(pw)):
        if pw[wi] <= 0:
            continue
        out += pw[wi] * covariate_specific_effect(model, x, wi).values
    return _as_dist(t.vars[OUTCOME], out)


def backdoor_effect(model: FactorizedModel, x: str | int) -> Factor:
    """P(y0 | do(x)) by adjusting for V2."""
    t = _tables(model)
    xi = t.vars[TREATMENT].index(x)
    p_y_xv2 = t.joint[:, xi].sum(axis=(1, 2))  # (y0, v2)
    return _as_dist(t.vars[OUTCOME], p_y_xv2 @ _v2_weights(t, xi))


def naive_conditional(model: FactorizedModel, x: str | int) -> Factor:
    """P(y0 | x), the unadjusted comparison."""
    return eliminate(model, [OUTCOME], {TREATMENT: x})


def expectation(dist: Factor) -> float:
    if len(dist.scope) != 1:
        raise EstimationError("expectation needs a distribution over a single variable")
    var = dist.scope[0]
    if var.representatives is None:
        raise EstimationError(f"variable {var.name!r} has no numeric state representatives")
    return float(np.dot(var.representatives, dist.values))


def probability_ratio(treated: Factor, control: Factor) -> list[float | None]:
    """Statewise treated/control ratio; None marks a zero control probability."""
    if treated.names != control.names:
        raise EstimationError("distributions are over different variables")
    return [float(a / b) if b > 0 else None for a, b in zip(treated.values, control.values)]


@dataclass
class EffectEstimate:
    treated: Factor
    control: Factor
    stratum: str | None = None
    expectation_treated: float = field(init=False)
    expectation_control: float = field(init=False)
    delta: float = field(init=False)
    pr: list = field(init=False)

    def __post_init__(self):
        for d in (self.treated, self.control):
            if abs(d.total - 1.0) > 1e-9:
                raise EstimationError("effect distributions must be normalized")
        self.expectation_treated = expectation(self.treated)
        self.expectation_control = expectation(self.control)
        self.delta = self.expectation_treated - self.expectation_control
        self.pr = probability_ratio(self.treated, self.control)

    @property
    def outcome(self) -> DiscreteVariable:
        return self.treated.scope[0]

    def to_dict(self) -> dict:
        var = self.outcome
        return {
            "outcome": var.name,
            "stratum": self.stratum,
            "states": list(var.states),
            "representatives": list(var.representatives),
            "treated": self.treated.values.tolist(),
            "control": self.control.values.tolist(),
            "expectation_treated": self.expectation_treated,
            "expectation_control": self.expectation_control,
            "delta": self.delta,
            "pr": self.pr,
            "pr_undefined": [s for s, r in zip(var.states, self.pr) if r is None],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def distribution_csv(dist: Factor) -> str:
        """Two columns: state representative and probability."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["representative", "probability"])
        for rep, p in zip(dist.scope[0].representatives, dist.values):
            writer.writerow([repr(float(rep)), repr(float(p))])
        return buf.getvalue()


def ate(model: FactorizedModel, treated: str = TREATED, control: str = CONTROL) -> EffectEstimate:
    return EffectEstimate(population_effect(model, treated), population_effect(model, control))


def cate(model: FactorizedModel, w: str | int, treated: str = TREATED, control: str = CONTROL) -> EffectEstimate:
    var = model.variables[BURDEN]
    label = var.states[var.index(w)]
    return EffectEstimate(
        covariate_specific_effect(model, treated, w),
        covariate_specific_effect(model, control, w),
        stratum=label,
    )


def cate_curve(model: FactorizedModel, treated: str = TREATED, control: str = CONTROL) -> list[EffectEstimate | None]:
    """CATE for every W stratum; None where either arm has an empty stratum."""
    out = []
    for w in model.variables[BURDEN].states:
        try:
            out.append(cate(model, w, treated, control))
        except EmptyStratumError:
            out.append(None)
    return out


def ate_value(model: FactorizedModel) -> float:
    """Scalar ATE, the quantity refutation tests resample."""
    value = ate(model).delta
    if not math.isfinite(value):
        raise EstimationError("non-finite ATE")
    return value
