"""Command-line front end.

Every subcommand reads its inputs, writes its outputs atomically and leaves
a ``<output>.manifest.json`` next to the first output; each output names
that manifest.  Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DistLRError
from .evaluation import evaluate_method, evaluate_model, format_table
from .methods import METHODS, MethodConfig, fit_method, pair_log_lr
from .pairs import SCALAR_KINDS, compute_distances, enumerate_pairs
from .persistence import (
    RunManifest,
    atomic_write_text,
    dump_json,
    file_digest,
    load_model,
    save_model,
)
from .selection import default_grid, select_count_cv
from .synth import PanelConfig, generate_panel
from .traces import (
    CsvSchema,
    SplitConfig,
    dichotomize,
    ingest_csv,
    normalize_log,
    repeatability,
    split_calibration_test,
    to_csv_text,
)

CLI_METHODS = tuple(m.replace("_", "-") for m in METHODS)
DISTANCES = (*SCALAR_KINDS, "vectorial")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _manifest(args, command: str, config: dict, inputs: dict[str, str]) -> RunManifest:
    digests = {}
    for role, path in inputs.items():
        if path is not None:
            digests[role] = f"sha256:{file_digest(path)}"
    return RunManifest(command, config, digests, getattr(args, "seed", None))


def _guard_outputs(inputs, outputs) -> None:
    ins = {Path(p).resolve() for p in inputs if p is not None}
    outs = [Path(p).resolve() for p in outputs if p is not None]
    for o in outs:
        if o in ins:
            raise UsageError(f"refusing to overwrite input file {o}")
    if len(set(outs)) != len(outs):
        raise UsageError("output paths must be distinct")


def _write_matrix(m, path, manifest: RunManifest) -> None:
    # an input's own manifest line would be ambiguous in a derived file
    kept = tuple(c for c in m.comments if not c.startswith("manifest:"))
    m = dataclasses.replace(m, comments=kept)
    atomic_write_text(path, to_csv_text(m, (manifest.comment(path),)))


def _write_csv_report(text: str, path, manifest: RunManifest) -> None:
    atomic_write_text(path, f"#{manifest.comment(path)}\n{text}")


def _write_json(obj: dict, path, manifest: RunManifest) -> None:
    obj = {"schema": 1, **obj, "manifest": manifest.reference(path)}
    atomic_write_text(path, dump_json(obj))


def _parse_features(value: str | None):
    """Comma-separated 0-based indices, or a JSON file with a ``features`` list."""
    if value is None:
        return None
    path = Path(value)
    if path.suffix == ".json" and path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return tuple(int(k) for k in data["features"])
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read features from {value}: {exc}") from None
    try:
        feats = tuple(int(tok) for tok in value.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"--features expects comma-separated indices, got {value!r}") from None
    if not feats:
        raise UsageError("--features is empty")
    return feats


def _parse_profile(value: str) -> dict[int, int]:
    """``"1:44,2:77"`` -> ``{1: 44, 2: 77}``."""
    try:
        out = {}
        for item in value.split(","):
            r, c = item.split(":")
            out[int(r)] = int(c)
        return out
    except ValueError:
        raise UsageError(f"--replicates expects REPS:SUBJECTS[,...], got {value!r}") from None


def _method_config(args, method: str | None = None, features=None) -> MethodConfig:
    method = (method or args.method).replace("-", "_")
    distance = getattr(args, "distance", None)
    if method == "indirect_vectorial" and distance in SCALAR_KINDS:
        distance = None
    if method != "indirect_vectorial" and distance == "vectorial":
        if method == "direct":
            raise UsageError("the direct method does not support --distance vectorial; "
                             "use --method indirect-vectorial")
        raise UsageError(f"--method {method} needs a scalar --distance")
    try:
        return MethodConfig(method, distance, features, ridge=args.ridge, restarts=args.restarts,
                            seed=args.seed, ds_subsample=args.ds_subsample)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _check_prior(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise UsageError(f"--prior must lie strictly between 0 and 1, got {p}")
    return p


def _find_trace(m, spec: str) -> int:
    """Locate ``SUBJECT:REPLICATE`` (or a 0-based row number) in a matrix."""
    if ":" in spec:
        sid, rid = spec.rsplit(":", 1)
        for i in range(m.n_traces):
            if m.subject_ids[i] == sid and m.replicate_ids[i] == rid:
                return i
        raise UsageError(f"trace {spec!r} not found")
    try:
        i = int(spec)
    except ValueError:
        raise UsageError(f"trace must be SUBJECT:REPLICATE or a row number, got {spec!r}") from None
    if not 0 <= i < m.n_traces:
        raise UsageError(f"row {i} out of range (0..{m.n_traces - 1})")
    return i


def _fmt_lr(lr: float) -> str:
    if math.isinf(lr):
        return "inf"
    return f"{lr:.6f}" if 1e-6 <= lr < 1e9 or lr == 0 else f"{lr:.6e}"


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    profile = _parse_profile(args.replicates) if args.replicates else None
    n_subjects = sum(profile.values()) if profile else args.subjects
    try:
        cfg = PanelConfig(n_subjects=n_subjects, replicate_profile=profile,
                          n_features=args.features, n_informative=args.informative,
                          between_subject_sd=args.between_sd, within_subject_sd=args.within_sd,
                          sparsity=args.sparsity, gender_fraction=args.gender_fraction,
                          seed=args.seed, strength_spread=args.strength_spread)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    man = _manifest(args, "synth", json.loads(cfg.to_json()), {})
    m = generate_panel(cfg)
    _write_matrix(m, args.out, man)
    man.finish()
    print(f"{m.n_traces} traces, {len(m.subjects())} subjects, {m.n_features} features -> {args.out}")
    return 0


def cmd_ingest(args) -> int:
    _guard_outputs([args.input], [args.out])
    cols = tuple(c.strip() for c in args.feature_columns.split(",")) if args.feature_columns else None
    schema = CsvSchema(args.subject_column, args.replicate_column, args.gender_column or None,
                       args.age_column or None, cols)
    man = _manifest(args, "ingest", {"schema": schema.__dict__}, {"input": args.input})
    m = ingest_csv(args.input, schema)
    _write_matrix(m, args.out, man)
    man.finish()
    print(f"{m.n_traces} traces, {m.n_features} features, mode {m.mode} -> {args.out}")
    return 0


def _transform(args, name: str, fn, config: dict) -> int:
    _guard_outputs([args.input], [args.out])
    man = _manifest(args, name, config, {"input": args.input})
    m = fn(ingest_csv(args.input))
    _write_matrix(m, args.out, man)
    man.finish()
    print(f"{m.n_traces} traces, mode {m.mode} -> {args.out}")
    return 0


def cmd_normalize(args) -> int:
    return _transform(args, "normalize", normalize_log, {})


def cmd_dichotomize(args) -> int:
    return _transform(args, "dichotomize", lambda m: dichotomize(m, args.threshold),
                      {"threshold": args.threshold})


def cmd_split(args) -> int:
    _guard_outputs([args.input], [args.cal_out, args.test_out])
    cfg = SplitConfig(args.fraction, not args.no_stratify, args.seed)
    man = _manifest(args, "split", {"calibration_fraction": cfg.calibration_fraction,
                                    "stratify_gender": cfg.stratify_gender}, {"input": args.input})
    cal, test = split_calibration_test(ingest_csv(args.input), cfg)
    _write_matrix(cal, args.cal_out, man)
    _write_matrix(test, args.test_out, man)
    man.finish()
    print(f"calibration: {len(cal.subjects())} subjects, {cal.n_traces} traces -> {args.cal_out}")
    print(f"test: {len(test.subjects())} subjects, {test.n_traces} traces -> {args.test_out}")
    return 0


def cmd_pairs(args) -> int:
    _guard_outputs([args.input], [args.out])
    features = _parse_features(args.features)
    if args.distance == "vectorial":
        raise UsageError("pairs writes scalar distances only; choose a scalar --distance")
    man = _manifest(args, "pairs", {"distance": args.distance,
                                    "features": None if features is None else list(features)},
                    {"input": args.input})
    m = ingest_csv(args.input)
    p = enumerate_pairs(m)
    d = compute_distances(m, p, args.distance, features) if args.distance else None
    lines = ["i,j,label" + (",d" if d is not None else "")]
    for k in range(p.n_pairs):
        row = f"{int(p.i[k])},{int(p.j[k])},{'H_ss' if p.same[k] else 'H_ds'}"
        if d is not None:
            row += f",{float(d[k])!r}"
        lines.append(row)
    _write_csv_report("\n".join(lines) + "\n", args.out, man)
    man.finish()
    print(f"{p.n_pairs} pairs ({p.n_ss} same-source, {p.n_ds} different-source) -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    _guard_outputs([args.input], [args.out])
    cfg = _method_config(args, features=_parse_features(args.features))
    man = _manifest(args, "fit", cfg.to_dict(), {"input": args.input})
    m = ingest_csv(args.input)
    model = fit_method(m, enumerate_pairs(m), cfg)
    save_model(model, args.out, man)
    man.finish()
    print(f"{args.method} model ({cfg.distance}) fitted on {m.n_traces} traces -> {args.out}")
    return 0


def cmd_select(args) -> int:
    outputs = [args.out, args.ranking_out]
    _guard_outputs([args.input], outputs)
    cfg = _method_config(args)
    m = ingest_csv(args.input)
    grid = default_grid(m.n_features)
    if args.grid:
        try:
            grid = sorted({int(tok) for tok in args.grid.split(",") if tok.strip()})
        except ValueError:
            raise UsageError(f"--grid expects comma-separated counts, got {args.grid!r}") from None
    config = {**cfg.to_dict(), "grid": grid, "folds": args.folds}
    man = _manifest(args, "select", config, {"input": args.input})
    try:
        res = select_count_cv(m, cfg, grid, args.folds, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_json({"method": args.method, "distance": cfg.distance, "folds": args.folds,
                 "test": res.ranking.test_kind, **res.to_dict(),
                 "feature_names": [m.feature_names[k] for k in res.features]}, args.out, man)
    if args.ranking_out:
        _write_csv_report(res.ranking.to_csv_text(), args.ranking_out, man)
    man.finish()
    print(f"{'count':>6}{'mean AUC':>10}{'sd':>8}")
    for c in res.grid:
        mu, sd = res.cv_auc_by_count[c]
        mark = "  <-" if c == res.best_count else ""
        print(f"{c:>6}{mu:>10.4f}{sd:>8.4f}{mark}")
    print(f"best count {res.best_count} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    prior = _check_prior(args.prior)
    if args.model and args.method:
        raise UsageError("give either --model or --method, not both")
    methods = args.method or (None if args.model else ["indirect-scalar"])
    features = _parse_features(args.features)
    _guard_outputs([args.cal, args.test, args.model], [args.out])
    cal, test = ingest_csv(args.cal), ingest_csv(args.test)
    inputs = {"calibration": args.cal, "test": args.test, "model": args.model}
    rows = []
    if args.model:
        model = load_model(args.model)
        label = "direct" if model.__class__.__name__ == "DirectModel" else (
            "indirect_" + model.mode)
        # the model is identified by its digest under inputs, not by its path
        man = _manifest(args, "evaluate", {"prior_ss": prior}, inputs)
        rows.append((evaluate_model(model, cal, prior, label, "calibration"),
                     evaluate_model(model, test, prior, label, "test")))
    else:
        cfgs = [_method_config(args, meth, features) for meth in methods]
        man = _manifest(args, "evaluate", {"prior_ss": prior,
                                           "methods": [c.to_dict() for c in cfgs]}, inputs)
        for cfg in cfgs:
            rows.append(evaluate_method(cal, test, cfg, prior))
    results = {}
    for rc, rt in rows:
        results[rc.method] = {"calibration": rc.to_dict(), "test": rt.to_dict()}
    _write_json({"prior_ss": prior, "results": results}, args.out, man)
    if args.roc_dir:
        for rc, rt in rows:
            for rep in (rc, rt):
                path = Path(args.roc_dir) / f"roc_{rep.method}_{rep.dataset}.csv"
                _write_csv_report(rep.roc.to_csv_text(), path, man)
    if args.table_out:
        atomic_write_text(args.table_out, f"# {man.comment(args.table_out)}\n"
                                          f"{format_table(rows)}\n")
    man.finish()
    print(format_table(rows))
    return 0


def cmd_compare(args) -> int:
    prior = _check_prior(args.prior)
    m = ingest_csv(args.input)
    model = load_model(args.model)
    ia, ib = _find_trace(m, args.trace_a), _find_trace(m, args.trace_b)
    if model.data_mode is not None and model.data_mode != m.mode:
        raise DistLRError(f"model was fitted on {model.data_mode} data, input is {m.mode}")
    log_lr = pair_log_lr(model, m.X[ia], m.X[ib])
    lr = math.exp(log_lr) if log_lr < 709.0 else math.inf
    log_odds = log_lr + math.log(prior) - math.log1p(-prior)
    posterior = 1.0 / (1.0 + math.exp(-log_odds)) if log_odds > -700 else 0.0
    print(f"trace A: {m.subject_ids[ia]}:{m.replicate_ids[ia]}")
    print(f"trace B: {m.subject_ids[ib]}:{m.replicate_ids[ib]}")
    print(f"LR={_fmt_lr(lr)}")
    print(f"log10 LR={log_lr / math.log(10.0):.6f}")
    print(f"prior P(H_ss)={prior:.6f}")
    print(f"posterior P(H_ss)={posterior:.6f}")
    return 0


def cmd_repeatability(args) -> int:
    _guard_outputs([args.input], [args.out])
    m = ingest_csv(args.input)
    rep = repeatability(m)
    if args.out:
        man = _manifest(args, "repeatability", {}, {"input": args.input})
        lines = ["feature,median_rsd_percent"]
        lines += [f"{name},{'' if np.isnan(v) else repr(float(v))}"
                  for name, v in zip(m.names(), rep.per_feature_rsd)]
        _write_csv_report("\n".join(lines) + "\n", args.out, man)
        man.finish()
    print(f"median RSD % [IQI] over {rep.n_subjects} replicated subjects: {rep.format()}")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_method_args(p, method_required=True, multi=False):
    if multi:
        p.add_argument("--method", choices=CLI_METHODS, action="append",
                       help="repeat to compare several methods")
    else:
        p.add_argument("--method", choices=CLI_METHODS, required=method_required)
    p.add_argument("--distance", choices=DISTANCES,
                   help="scalar distance (default spearman); vectorial implies indirect-vectorial")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--restarts", type=int, default=3, help="EM restarts for the direct method")
    p.add_argument("--ds-subsample", type=float, default=None,
                   help="keep this fraction of different-source pairs when fitting")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distlr", allow_abbrev=False,
                                 description="Likelihood ratios from trace-pair distances.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic trace panel")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=100)
    p.add_argument("--replicates", help="replicate profile REPS:SUBJECTS[,...], e.g. 1:44,2:77")
    p.add_argument("--features", type=int, default=50)
    p.add_argument("--informative", type=int, default=10)
    p.add_argument("--between-sd", type=float, default=1.0)
    p.add_argument("--within-sd", type=float, default=0.3)
    p.add_argument("--sparsity", type=float, default=0.0)
    p.add_argument("--gender-fraction", type=float, default=0.5)
    p.add_argument("--strength-spread", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = add("ingest", cmd_ingest, "validate a CSV panel and write it in canonical form")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subject-column", default="subject_id")
    p.add_argument("--replicate-column", default="replicate_id")
    p.add_argument("--gender-column", default="gender")
    p.add_argument("--age-column", default="age")
    p.add_argument("--feature-columns", help="comma-separated; default: all other columns")

    for name, fn, help_ in (("normalize", cmd_normalize, "log-normalize each trace"),
                            ("dichotomize", cmd_dichotomize, "presence/absence encoding")):
        p = add(name, fn, help_)
        p.add_argument("--input", required=True)
        p.add_argument("--out", required=True)
        if name == "dichotomize":
            p.add_argument("--threshold", type=float, default=0.0)

    p = add("split", cmd_split, "subject-disjoint calibration/test split")
    p.add_argument("--input", required=True)
    p.add_argument("--cal-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--fraction", type=float, default=0.77)
    p.add_argument("--no-stratify", action="store_true", help="do not stratify by gender")
    p.add_argument("--seed", type=int, default=0)

    p = add("pairs", cmd_pairs, "list all trace pairs, optionally with a scalar distance")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--distance", choices=DISTANCES)
    p.add_argument("--features")

    p = add("fit", cmd_fit, "fit an LR model on a calibration panel")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="indices (0-based, comma-separated) or a select JSON")
    _add_method_args(p)

    p = add("select", cmd_select, "rank features and choose a count by grouped CV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ranking-out")
    p.add_argument("--grid", help="comma-separated candidate feature counts")
    p.add_argument("--folds", type=int, default=3)
    _add_method_args(p)

    p = add("evaluate", cmd_evaluate, "ROC/AUC report on calibration and test panels")
    p.add_argument("--cal", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="evaluate a saved model instead of fitting")
    p.add_argument("--prior", type=float, default=0.5)
    p.add_argument("--features")
    p.add_argument("--roc-dir", help="write plot-ready ROC CSV files here")
    p.add_argument("--table-out")
    _add_method_args(p, multi=True)

    p = add("compare", cmd_compare, "LR and posterior for one pair of traces")
    p.add_argument("--input", required=True, help="panel holding both traces")
    p.add_argument("--trace-a", required=True, help="SUBJECT:REPLICATE or row number")
    p.add_argument("--trace-b", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--prior", type=float, required=True, help="prior P(H_ss); no default")

    p = add("repeatability", cmd_repeatability, "median within-subject RSD per feature")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"distlr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DistLRError, OSError, ValueError) as exc:
        print(f"distlr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
