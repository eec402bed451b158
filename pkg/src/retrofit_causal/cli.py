"""Batch command-line front end.

Exit status: 0 success, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import (
    BinningRule,
    DataError,
    default_seed,
    prepare_dataset,
    read_dataset,
    write_dataset,
)
from .estimation import BURDEN, EffectEstimate, EstimationError, ate, cate_curve
from .factors import FactorError
from .graph import (
    CycleError,
    GraphError,
    augment_selection,
    d_separated,
    enumerate_backdoor_paths,
    find_active_path,
    load_graph_spec,
    load_preset,
    mutilate_incoming,
    mutilate_outgoing,
)
from .identification import IdentificationReport, selection_result, verify_estimator_preconditions
from .inference import InferenceError, fit_model
from .refutation import AtePipeline, RefutationError, placebo_test, subsample_test
from .scm import SCM_KINDS, ScmError, load_reference, reference_scm, sample_observational

log = logging.getLogger("retrofit_causal")

OK, FAILED, USAGE = 0, 1, 2
MAX_SEED = 2**64 - 1


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [t for t in (p.strip() for p in text.split(",")) if t]


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _load_graph(args):
    if args.graph:
        path = Path(args.graph)
        if not path.exists():
            raise UsageError(f"graph file {path} does not exist")
        return load_graph_spec(path.read_text(encoding="utf-8"))
    return load_preset(args.preset)


def _apply_mutilations(g, specs):
    for spec in specs or []:
        mode, _, targets = spec.partition(":")
        targets = _names(targets)
        if mode == "incoming":
            g = mutilate_incoming(g, targets)
        elif mode == "outgoing":
            g = mutilate_outgoing(g, targets)
        else:
            raise UsageError(f"unknown mutilation {spec!r}; use incoming:NODES or outgoing:NODES")
    return g


def _parse_binning(items) -> dict[str, BinningRule]:
    rules = {}
    for item in items or []:
        try:
            name, rest = item.split("=", 1)
            parts = rest.split(":")
            bounds = (float(parts[2]), float(parts[3])) if len(parts) == 4 else None
            rules[name.strip()] = BinningRule(parts[0], int(parts[1]), bounds)
        except (ValueError, IndexError):
            raise UsageError(f"bad binning override {item!r}; use NAME=METHOD:K[:LOW:HIGH]") from None
    return rules


def _load_data(args):
    chosen = [bool(args.data), bool(args.raw), bool(args.fixture)]
    if sum(chosen) != 1:
        raise UsageError("give exactly one of --data, --raw or --fixture")
    if args.data:
        if not Path(args.data).exists():
            raise UsageError(f"dataset {args.data} does not exist")
        return read_dataset(args.data)
    if args.raw:
        if not Path(args.raw).exists():
            raise UsageError(f"raw export {args.raw} does not exist")
        n = None if args.n_per_stratum == 0 else args.n_per_stratum
        return prepare_dataset(args.raw, n_per_stratum=n, seed=args.seed, binning=_parse_binning(args.bins))
    return sample_observational(load_reference(args.fixture), args.rows, args.seed)


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _config_text(args) -> str:
    skip = {"func", "config", "print_config"}
    lines = []
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# -- commands -----------------------------------------------------------------------


def cmd_graph(args) -> int:
    try:
        g = _load_graph(args)
    except CycleError as exc:
        print(f"invalid: {exc}")
        return FAILED
    if args.action == "validate":
        print(f"nodes {len(g.nodes)} (observed {len(g.observed)}, latent {len(g.latent)})")
        print(f"edges {len(g.edges)}")
        print("acyclic true")
        return OK
    g = _apply_mutilations(g, args.mutilate)
    if args.select:
        g = augment_selection(g, _names(args.select))
    if args.action == "paths":
        if not args.source or not args.target:
            raise UsageError("graph paths needs --from and --to")
        paths = enumerate_backdoor_paths(g, args.source, args.target)
        print(len(paths))
        if args.list:
            for p in paths:
                print(p)
        return OK
    a, b, z = _names(args.a), _names(args.b), _names(args.given)
    if not a or not b:
        raise UsageError("graph dsep needs --a and --b")
    sep = d_separated(g, a, b, z)
    print("true" if sep else "false")
    if not sep:
        print(f"witness {find_active_path(g, a, b, z)}")
    return OK


def cmd_identify(args) -> int:
    g = _load_graph(args)
    report = verify_estimator_preconditions(g)
    gs = g if g.selection_node else augment_selection(g, _names(args.selection_parents))
    report = IdentificationReport(report.results + [selection_result(gs, "Y0", "X", _names(args.given))])
    text = report.to_json() + "\n"
    sys.stdout.write(text)
    if args.out:
        _write(_out_dir(args) / "identify.json", text)
    for r in report.failures():
        print(f"FAILED {r.claim.label}: {r.claim.describe()} witness {r.witness}", file=sys.stderr)
    return OK if report.passed else FAILED


def _effect_files(out: Path, est: EffectEstimate, stem: str = "effect") -> None:
    _write(out / f"{stem}.json", est.to_json())
    _write(out / f"{stem}_treated.csv", EffectEstimate.distribution_csv(est.treated))
    _write(out / f"{stem}_control.csv", EffectEstimate.distribution_csv(est.control))


def cmd_estimate(args) -> int:
    out = _out_dir(args)
    g = _load_graph(args)
    data = _load_data(args)
    model = fit_model(g, data, args.smoothing)
    est = ate(model)
    if args.mode == "ate":
        _effect_files(out, est)
        print(f"ate {est.delta!r}")
    elif args.mode == "pr":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["representative", "treated", "control", "pr"])
        for rep, t, c, r in zip(est.outcome.representatives, est.treated.values, est.control.values, est.pr):
            w.writerow([repr(float(rep)), repr(float(t)), repr(float(c)), "" if r is None else repr(r)])
        _write(out / "pr.csv", buf.getvalue())
        _effect_files(out, est)
        print(f"pr states {len(est.pr)} undefined {sum(r is None for r in est.pr)}")
    else:
        curve = cate_curve(model)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stratum", "representative", "cate", "expectation_treated", "expectation_control"])
        payload = []
        reps = model.variables[BURDEN].representatives or [None] * len(curve)
        for state, rep, c in zip(model.variables[BURDEN].states, reps, curve):
            if c is None:
                w.writerow([state, "" if rep is None else repr(rep), "", "", ""])
                payload.append({"stratum": state, "empty": True})
                continue
            w.writerow([state, "" if rep is None else repr(rep), repr(c.delta),
                        repr(c.expectation_treated), repr(c.expectation_control)])
            payload.append(c.to_dict())
        _write(out / "cate.csv", buf.getvalue())
        _write(out / "cate.json", json.dumps({"ate": est.delta, "strata": payload}, indent=2, sort_keys=True) + "\n")
        print(f"cate strata {len(curve)} empty {sum(c is None for c in curve)}")
    return OK


def cmd_refute(args) -> int:
    out = _out_dir(args)
    g = _load_graph(args)
    data = _load_data(args)
    pipeline = AtePipeline(g, args.smoothing)
    if args.kind == "placebo":
        report = placebo_test(pipeline, data, args.n, args.seed, jobs=args.jobs)
        passed = report.p_value < args.placebo_alpha
    else:
        report = subsample_test(pipeline, data, args.n, args.fraction, args.seed, jobs=args.jobs)
        passed = report.p_value > args.subsample_alpha
    _write(out / f"refute_{args.kind}.json", report.to_json())
    _write(out / f"refute_{args.kind}_effects.csv", report.effects_csv())
    print(f"{args.kind} p={report.p_value!r} mean={report.mean!r} baseline={report.baseline_ate!r}")
    return OK if passed else FAILED


def cmd_simulate(args) -> int:
    scm = reference_scm(args.kind, args.scm_seed) if args.scm_seed is not None else load_reference(args.kind)
    data = sample_observational(scm, args.rows, args.seed)
    data.provenance["kind"] = args.kind
    out = _out_dir(args)
    write_dataset(data, out / "dataset.csv")
    _write(out / "scm.json", scm.to_json())
    print(f"rows {len(data)}")
    return OK


# -- parser -------------------------------------------------------------------------


def _graph_source(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", default="ehs-fp", help="built-in graph (default ehs-fp)")
    g.add_argument("--graph", help="graph-spec file")


def _data_source(p):
    p.add_argument("--data", help="dataset snapshot CSV (with .json sidecar)")
    p.add_argument("--raw", help="survey export CSV in the documented schema")
    p.add_argument("--fixture", choices=SCM_KINDS, help="sample from a committed reference SCM")
    p.add_argument("--rows", type=_positive_int, default=200_000, help="rows to sample with --fixture")
    p.add_argument("--n-per-stratum", type=int, default=60_000, help="resample size per year with --raw; 0 keeps weights")
    p.add_argument("--bins", action="append", help="binning override NAME=METHOD:K[:LOW:HIGH] (repeatable)")
    p.add_argument("--smoothing", type=float, default=1.0, help="pseudo-count per CPT cell")


def _common(p):
    p.add_argument("--seed", type=_seed, default=default_seed())
    p.add_argument("--out", help="output directory (required unless --print-config)")


def _global_options(p, default):
    flag_default = False if default is None else default
    p.add_argument("--config", default=default, help="key = value file; flags override it")
    p.add_argument("--print-config", action="store_true", default=flag_default,
                   help="print the resolved configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true", default=flag_default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retrofit-causal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    _global_options(parser, None)
    # the same options are accepted after the subcommand name
    shared = argparse.ArgumentParser(add_help=False)
    _global_options(shared, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph", parents=[shared], help="validate a graph, count backdoor paths, test d-separation")
    p.add_argument("action", choices=("validate", "paths", "dsep"))
    _graph_source(p)
    p.add_argument("--from", dest="source")
    p.add_argument("--to", dest="target")
    p.add_argument("--list", action="store_true", help="print every path")
    p.add_argument("--mutilate", action="append", help="incoming:NODES or outgoing:NODES (repeatable)")
    p.add_argument("--select", help="add a selection node with these parents")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--given")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("identify", parents=[shared], help="check the estimator preconditions and selection recoverability")
    _graph_source(p)
    p.add_argument("--selection-parents", default="W", help="parents of S when the graph has none")
    p.add_argument("--given", default="W", help="conditioning set for the selection check")
    p.add_argument("--out")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("estimate", parents=[shared], help="ATE, CATE curve or probability ratios")
    p.add_argument("mode", choices=("ate", "cate", "pr"))
    _graph_source(p)
    _data_source(p)
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("refute", parents=[shared], help="placebo or subsample refutation of the ATE")
    p.add_argument("kind", choices=("placebo", "subsample"))
    _graph_source(p)
    _data_source(p)
    _common(p)
    p.add_argument("--n", type=_positive_int, default=200, help="repetitions")
    p.add_argument("--fraction", type=float, default=0.4)
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes; results do not depend on it")
    p.add_argument("--placebo-alpha", type=float, default=0.05)
    p.add_argument("--subsample-alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_refute)

    p = sub.add_parser("simulate", parents=[shared], help="sample a reference SCM")
    p.add_argument("--kind", choices=SCM_KINDS, default="confounded-rebound")
    p.add_argument("--n", dest="rows", type=_positive_int, default=200_000)
    p.add_argument("--scm-seed", type=_seed, help="regenerate the SCM with this seed instead of the fixture")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def _resolve(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        if not Path(args.config).exists():
            parser.error(f"config file {args.config} does not exist")
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        # keys may name either the destination or the long flag (e.g. simulate's n -> rows)
        known = {a.dest: a for a in sub._actions}
        for a in sub._actions:
            for opt in a.option_strings:
                if opt.startswith("--"):
                    known.setdefault(opt[2:].replace("-", "_"), a)
        defaults = {}
        for key, raw in values.items():
            action = known.get(key)
            if action is None:
                parser.error(f"unknown config key {key!r} for {args.command}")
            key = action.dest
            if action.nargs == 0:
                defaults[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(action, argparse._AppendAction):
                defaults[key] = _names(raw)
            else:
                defaults[key] = action.type(raw) if action.type else raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = _resolve(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_config:
        sys.stdout.write(_config_text(args))
        return OK
    try:
        return args.func(args)
    except (EstimationError, InferenceError, FactorError, RefutationError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return FAILED
    except (UsageError, GraphError, DataError, ScmError, ValueError) as exc:
        # parse errors, unknown or missing nodes, overlapping sets, bad fractions
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
