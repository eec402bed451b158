"""Record ingestion, derived variables, weighted resampling and discretization."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .factors import DiscreteVariable

log = logging.getLogger(__name__)

DEFAULT_SEED = 20151018
SEED_ENV = "RETROFIT_CAUSAL_SEED"


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value else DEFAULT_SEED


class DataError(ValueError):
    pass


class SchemaError(DataError):
    pass


# -- raw tables -------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnSpec:
    name: str  # canonical column name used downstream
    source: str  # header in the input CSV
    kind: str = "float"  # "float" | "int" | "str"
    required: bool = True


# Canonical names follow the model symbols. Headers are the EHS-FP variable
# names where one exists; V9 (gas price) and year/weight are expected to be
# joined in before export.
EHS_FP_SCHEMA: tuple[ColumnSpec, ...] = (
    ColumnSpec("year", "year", "int"),
    ColumnSpec("weight", "weight", "float"),
    ColumnSpec("main_fuel", "mainfuel", "str"),
    ColumnSpec("X", "WallType", "str"),
    ColumnSpec("V0", "dwtype", "str"),
    ColumnSpec("V1", "spahcost", "float"),
    ColumnSpec("V2", "tenure", "str"),
    ColumnSpec("V3", "dwage", "str"),
    ColumnSpec("V4", "underocc", "str"),
    ColumnSpec("V5", "hhsize", "str"),
    ColumnSpec("V6", "floorarea", "str"),
    ColumnSpec("V7", "income", "float"),
    ColumnSpec("V8", "hhcompx", "str"),
    ColumnSpec("V9", "gasprice", "float"),
    ColumnSpec("litecost", "litecost", "float"),
    ColumnSpec("cookcost", "cookcost", "float"),
    ColumnSpec("gasmop", "gasmop", "str", required=False),
)


@dataclass
class RawRecordTable:
    columns: dict[str, np.ndarray]
    rejected: list[tuple[int, str]] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have unequal lengths {sorted(lengths)}")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"missing column {name!r}") from None

    def take(self, rows: np.ndarray) -> dict[str, np.ndarray]:
        return {k: v[rows] for k, v in self.columns.items()}

    def derived(self, columns: dict[str, np.ndarray], entry: dict, rejected=()) -> "RawRecordTable":
        return RawRecordTable(columns, self.rejected + list(rejected), self.log + [entry])


def _coerce(value: str, kind: str):
    value = value.strip()
    if kind == "str":
        return value
    if value == "":
        raise ValueError("empty value")
    if kind == "int":
        return int(float(value)) if float(value).is_integer() else int(value)
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {value!r}")
    return x


def ingest_csv(source: str | os.PathLike | IO, schema: Sequence[ColumnSpec] = EHS_FP_SCHEMA) -> RawRecordTable:
    """Read a header-first CSV into typed columns.

    Rows whose values fail coercion are dropped and recorded in
    ``rejected`` as (1-based data row number, reason).
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest_csv(fh, schema)
    try:
        raw = source.read()
    except OSError as exc:
        raise DataError(f"cannot read input stream: {exc}") from exc
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(raw))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("input has no header row") from None
    missing = [c.source for c in schema if c.required and c.source not in header]
    if missing:
        raise SchemaError("missing required column(s): " + ", ".join(missing))
    present = [c for c in schema if c.source in header]
    idx = {c.name: header.index(c.source) for c in present}
    values: dict[str, list] = {c.name: [] for c in present}
    rejected = []
    for rowno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            parsed = {}
            for c in present:
                i = idx[c.name]
                if i >= len(row):
                    raise ValueError(f"row too short for column {c.source!r}")
                try:
                    parsed[c.name] = _coerce(row[i], c.kind)
                except ValueError as exc:
                    raise ValueError(f"column {c.source!r}: {exc}") from None
        except ValueError as exc:
            rejected.append((rowno, str(exc)))
            continue
        for k, v in parsed.items():
            values[k].append(v)
    cols = {}
    for c in present:
        dtype = {"float": float, "int": np.int64, "str": object}[c.kind]
        cols[c.name] = np.asarray(values[c.name], dtype=dtype)
    if rejected:
        log.warning("rejected %d malformed row(s): %s", len(rejected), [r for r, _ in rejected])
    table = RawRecordTable(cols, rejected)
    table.log.append({"op": "ingest_csv", "rows": len(table), "rejected": len(rejected)})
    return table


def collapse_wall_type(values: np.ndarray) -> np.ndarray:
    """Map the four-way wall type (cavity/solid x insulated/uninsulated) to a boolean."""
    out = []
    for v in values:
        s = str(v).strip().lower()
        if s in ("true", "1", "yes"):
            out.append(True)
        elif s in ("false", "0", "no"):
            out.append(False)
        elif "uninsulated" in s or "no insulation" in s or "without" in s:
            out.append(False)
        elif "insulated" in s or "with insulation" in s:
            out.append(True)
        else:
            raise DataError(f"cannot interpret wall type {v!r}")
    return np.asarray(out, dtype=bool)


def derive_variables(t: RawRecordTable) -> RawRecordTable:
    """Add Y0 = V1 / V9 (kWh/yr) and W = (V1 + V10) / V7 clamped to [0, 1].

    V10 is built from litecost + cookcost when not already present. Rows
    with non-positive price or income are dropped and counted.
    """
    cols = dict(t.columns)
    if "V10" not in cols:
        cols["V10"] = t["litecost"] + t["cookcost"]
    v1, v7, v9, v10 = (np.asarray(cols[n], dtype=float) for n in ("V1", "V7", "V9", "V10"))
    bad = (v9 <= 0) | (v7 <= 0)
    reasons = [(int(i), "non-positive gas price or income") for i in np.flatnonzero(bad)]
    keep = ~bad
    cols = {k: np.asarray(v)[keep] for k, v in cols.items()}
    v1, v7, v9, v10 = v1[keep], v7[keep], v9[keep], v10[keep]
    cols["Y0"] = v1 / v9
    w = (v1 + v10) / v7
    clamped = int(np.sum((w < 0) | (w > 1)))
    cols["W"] = np.clip(w, 0.0, 1.0)
    if clamped:
        log.info("clamped %d energy-burden value(s) into [0, 1]", clamped)
    return t.derived(cols, {"op": "derive_variables", "rejected": int(bad.sum()), "clamped": clamped}, reasons)


GAS_LABELS = ("gas", "mains gas", "1")


def filter_main_fuel_gas(t: RawRecordTable, column: str = "main_fuel") -> RawRecordTable:
    fuel = t[column]
    keep = np.asarray([str(v).strip().lower() in GAS_LABELS for v in fuel], dtype=bool)
    n = len(t)
    excluded = (n - int(keep.sum())) / n if n else 0.0
    log.info("excluded %.1f%% of records without gas as main fuel", 100 * excluded)
    if n and not keep.any():
        warnings.warn("no gas-main records left after filtering", stacklevel=2)
    return t.derived(t.take(keep), {"op": "filter_main_fuel_gas", "column": column, "excluded_fraction": excluded})


def stratified_resample(
    t: RawRecordTable,
    weight_column: str = "weight",
    n_per_stratum: int = 60_000,
    strata: str = "year",
    seed: int | None = None,
) -> RawRecordTable:
    """Draw ``n_per_stratum`` rows with replacement per stratum, P(row) proportional to weight."""
    seed = default_seed() if seed is None else seed
    w = np.asarray(t[weight_column], dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise DataError("sampling weights must be positive")
    groups = np.asarray(t[strata])
    rng = np.random.default_rng(seed)
    picks = []
    for g in sorted(set(groups.tolist())):
        rows = np.flatnonzero(groups == g)
        if rows.size == 0:
            raise DataError(f"stratum {g!r} is empty")
        p = w[rows] / w[rows].sum()
        picks.append(rng.choice(rows, size=n_per_stratum, replace=True, p=p))
    if not picks:
        raise DataError("no strata to resample")
    rows = np.concatenate(picks)
    entry = {"op": "stratified_resample", "weight_column": weight_column, "n_per_stratum": n_per_stratum,
             "strata": strata, "seed": seed}
    return t.derived(t.take(rows), entry)


# -- discretization ---------------------------------------------------------------


@dataclass(frozen=True)
class Bin:
    low: float
    high: float
    closed_right: bool = False

    @property
    def midpoint(self) -> float:
        return (self.low + self.high) / 2

    @property
    def label(self) -> str:
        return f"[{self.low:g},{self.high:g}{']' if self.closed_right else ')'}"


def discretize(
    values: Iterable[float],
    method: str = "equal-width",
    k: int = 10,
    bounds: tuple[float, float] | None = None,
) -> tuple[np.ndarray, list[Bin]]:
    """Bin a numeric column. Bins are [low, high) except the last, which is closed.

    Values outside ``bounds`` fall into the nearest end bin.
    """
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if k < 1:
        raise DataError("bin count must be >= 1")
    if x.size == 0 and bounds is None:
        raise DataError("cannot discretize an empty column without bounds")
    if method == "equal-width":
        lo, hi = bounds if bounds is not None else (float(x.min()), float(x.max()))
        if hi == lo:
            edges = np.array([lo, hi])
        else:
            edges = np.linspace(lo, hi, k + 1)
    elif method == "equal-frequency":
        distinct = np.unique(x)
        if k > distinct.size:
            warnings.warn(f"reducing bin count from {k} to {distinct.size} distinct values", stacklevel=2)
            k = int(distinct.size)
        edges = np.unique(np.quantile(x, np.linspace(0, 1, k + 1)))
        if edges.size - 1 < k:
            warnings.warn(f"tied quantiles reduced bin count from {k} to {max(edges.size - 1, 1)}", stacklevel=2)
        if edges.size == 1:
            edges = np.array([edges[0], edges[0]])
    else:
        raise DataError(f"unknown discretization method {method!r}")
    nbins = edges.size - 1
    idx = np.searchsorted(edges, x, side="right") - 1
    idx = np.clip(idx, 0, nbins - 1)
    bins = [Bin(float(edges[i]), float(edges[i + 1]), i == nbins - 1) for i in range(nbins)]
    return idx.astype(np.int64), bins


@dataclass(frozen=True)
class BinningRule:
    method: str
    k: int
    bounds: tuple[float, float] | None = None


DEFAULT_BINNING: dict[str, BinningRule] = {
    "Y0": BinningRule("equal-width", 50, (0.0, 45_000.0)),
    "W": BinningRule("equal-width", 24, (0.0, 0.24)),
    "V7": BinningRule("equal-frequency", 10),
    "V1": BinningRule("equal-frequency", 10),
    "V9": BinningRule("equal-frequency", 10),
    "V10": BinningRule("equal-frequency", 10),
}

MODEL_VARIABLES = ("X", "Y0", "W", "V0", "V1", "V2", "V3", "V4", "V5", "V6", "V7", "V8", "V9", "V10")


# -- discrete datasets --------------------------------------------------------------


@dataclass
class DiscreteDataset:
    columns: dict[str, np.ndarray]
    variables: dict[str, DiscreteVariable]
    weights: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = {k: np.asarray(v, dtype=np.int64) for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have unequal lengths {sorted(lengths)}")
        for name, col in self.columns.items():
            if name not in self.variables:
                raise DataError(f"column {name!r} has no variable definition")
            card = self.variables[name].cardinality
            if col.size and (col.min() < 0 or col.max() >= card):
                raise DataError(f"column {name!r} has state indices outside [0, {card})")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (len(self),) or np.any(self.weights <= 0):
                raise DataError("weights must be positive, one per row")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def take(self, rows: np.ndarray) -> "DiscreteDataset":
        rows = np.asarray(rows)
        return DiscreteDataset(
            {k: v[rows] for k, v in self.columns.items()},
            self.variables,
            None if self.weights is None else self.weights[rows],
            dict(self.provenance),
        )

    def with_column(self, name: str, values: np.ndarray) -> "DiscreteDataset":
        cols = dict(self.columns)
        cols[name] = np.asarray(values, dtype=np.int64)
        return DiscreteDataset(cols, self.variables, self.weights, dict(self.provenance))

    def select(self, names: Iterable[str]) -> "DiscreteDataset":
        names = list(names)
        return DiscreteDataset({n: self.columns[n] for n in names}, {n: self.variables[n] for n in names},
                               self.weights, dict(self.provenance))

    def labels(self, name: str) -> list[str]:
        states = self.variables[name].states
        return [states[i] for i in self.columns[name]]

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.columns):
            h.update(name.encode())
            h.update(self.columns[name].tobytes())
        if self.weights is not None:
            h.update(self.weights.tobytes())
        return h.hexdigest()


def categorical_variable(name: str, values: np.ndarray) -> tuple[DiscreteVariable, np.ndarray]:
    labels = sorted({str(v) for v in values}, key=_natural_key)
    lookup = {s: i for i, s in enumerate(labels)}
    return DiscreteVariable(name, tuple(labels)), np.asarray([lookup[str(v)] for v in values], dtype=np.int64)


def _natural_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def binned_variable(name: str, bins: Sequence[Bin]) -> DiscreteVariable:
    return DiscreteVariable(name, tuple(b.label for b in bins), tuple(b.midpoint for b in bins))


def discretize_table(
    t: RawRecordTable,
    binning: Mapping[str, BinningRule] | None = None,
    names: Sequence[str] = MODEL_VARIABLES,
) -> DiscreteDataset:
    """Turn derived raw columns into a DiscreteDataset over the model variables."""
    rules = dict(DEFAULT_BINNING)
    rules.update(binning or {})
    cols, variables, bins_log = {}, {}, {}
    for name in names:
        values = t[name]
        if name == "X":
            x = collapse_wall_type(values) if values.dtype == object else np.asarray(values, dtype=bool)
            variables[name] = DiscreteVariable.binary("X")
            cols[name] = x.astype(np.int64)
        elif name in rules:
            rule = rules[name]
            idx, bins = discretize(np.asarray(values, dtype=float), rule.method, rule.k, rule.bounds)
            variables[name] = binned_variable(name, bins)
            cols[name] = idx
            bins_log[name] = {"method": rule.method, "k": rule.k,
                              "bounds": list(rule.bounds) if rule.bounds else None}
        else:
            variables[name], cols[name] = categorical_variable(name, values)
    prov = {"transforms": t.log + [{"op": "discretize", "rules": bins_log}], "rejected_rows": len(t.rejected)}
    return DiscreteDataset(cols, variables, None, prov)


def prepare_dataset(
    source,
    schema: Sequence[ColumnSpec] = EHS_FP_SCHEMA,
    n_per_stratum: int | None = 60_000,
    seed: int | None = None,
    binning: Mapping[str, BinningRule] | None = None,
) -> DiscreteDataset:
    """Full chain: ingest, gas filter, derive, weighted resample, discretize.

    ``n_per_stratum=None`` skips resampling and keeps the survey weights on
    the dataset instead.
    """
    seed = default_seed() if seed is None else seed
    t = ingest_csv(source, schema)
    t = filter_main_fuel_gas(t)
    t = derive_variables(t)
    weights = None
    if n_per_stratum is not None:
        t = stratified_resample(t, "weight", n_per_stratum, "year", seed)
    else:
        weights = np.asarray(t["weight"], dtype=float)
    ds = discretize_table(t, binning)
    ds.weights = weights
    ds.provenance.update({"seed": seed, "n_per_stratum": n_per_stratum})
    return ds


def replay(source, provenance: Mapping, schema: Sequence[ColumnSpec] = EHS_FP_SCHEMA) -> DiscreteDataset:
    """Re-run the transform chain recorded in ``provenance`` on ``source``."""
    binning = {}
    for step in provenance.get("transforms", []):
        if step["op"] == "discretize":
            for name, rule in step["rules"].items():
                bounds = tuple(rule["bounds"]) if rule["bounds"] else None
                binning[name] = BinningRule(rule["method"], rule["k"], bounds)
    return prepare_dataset(source, schema, provenance.get("n_per_stratum"), provenance.get("seed"), binning)


# -- snapshots ----------------------------------------------------------------------


def write_dataset(ds: DiscreteDataset, path: str | os.PathLike) -> Path:
    """Write state labels as CSV plus a ``.json`` sidecar with the catalog."""
    path = Path(path)
    names = ds.names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + (["weight"] if ds.weights is not None else []))
        state_cols = [np.asarray(ds.variables[n].states, dtype=object)[ds.columns[n]] for n in names]
        for i in range(len(ds)):
            row = [c[i] for c in state_cols]
            if ds.weights is not None:
                row.append(repr(float(ds.weights[i])))
            writer.writerow(row)
    sidecar = {
        "variables": [ds.variables[n].to_dict() for n in names],
        "provenance": ds.provenance,
        "rows": len(ds),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path: str | os.PathLike) -> DiscreteDataset:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    variables = {d["name"]: DiscreteVariable.from_dict(d) for d in sidecar["variables"]}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols, weights = {}, None
    for j, name in enumerate(header):
        if name == "weight" and name not in variables:
            weights = np.asarray([float(r[j]) for r in rows])
            continue
        lookup = {s: i for i, s in enumerate(variables[name].states)}
        try:
            cols[name] = np.asarray([lookup[r[j]] for r in rows], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"column {name!r} holds unknown state {exc.args[0]!r}") from None
    return DiscreteDataset(cols, {n: variables[n] for n in cols}, weights, sidecar.get("provenance", {}))
