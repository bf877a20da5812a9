"""Command-line interface orchestrating simulation, fitting, selection,
risk calibration, evaluation and reporting.

Every subcommand writes JSON/CSV results that embed a run manifest
(command, configuration echo, input digest, seed, version, timings).
Failures leave a machine-readable ``error.json`` marker and a nonzero
exit status.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .criterion import VariationalState
from .inference import FitConfig, FitResult, OptimizerConfig, multi_start_fit
from .io import file_digest, load_matrix, save_matrix, write_json
from .metrics import (LabelAssignment, align_labels, l_item, latent_mse,
                      map_assignments, param_max_error)
from .model import MissingnessKind, ModelParams
from .selection import icl, select_model
from .simulate import (RiskConfig, calibrate_epsilon, conditional_bayes_risk,
                       make_benchmark_params, sample_lbm)

_KIND_ALIASES = {"mcar": MissingnessKind.MCAR, "mar": MissingnessKind.MAR,
                 "mnar": MissingnessKind.MNAR, "nmar": MissingnessKind.MNAR}


def parse_kind(token: str) -> MissingnessKind:
    return _KIND_ALIASES[token.lower()]


def params_to_json(params: ModelParams) -> dict:
    return {"kind": params.kind.value,
            "alpha_rows": params.alpha_rows, "alpha_cols": params.alpha_cols,
            "pi": params.pi, "mu": params.mu,
            "var_a": params.var_a, "var_b": params.var_b,
            "var_p": params.var_p, "var_q": params.var_q}


def params_from_json(doc: dict) -> ModelParams:
    return ModelParams(parse_kind(doc["kind"]),
                       np.asarray(doc["alpha_rows"], float),
                       np.asarray(doc["alpha_cols"], float),
                       np.asarray(doc["pi"], float), float(doc["mu"]),
                       var_a=float(doc["var_a"]), var_b=float(doc["var_b"]),
                       var_p=float(doc["var_p"]), var_q=float(doc["var_q"]))


def varstate_to_json(gamma: VariationalState) -> dict:
    out = {"tau_rows": gamma.tau_rows, "tau_cols": gamma.tau_cols}
    for name in ("nu_a", "rho_a", "nu_b", "rho_b",
                 "nu_p", "rho_p", "nu_q", "rho_q"):
        val = getattr(gamma, name)
        if val is not None:
            out[name] = val
    return out


def fit_to_json(fit: FitResult, n1: int, n2: int) -> dict:
    return {"params": params_to_json(fit.params),
            "varstate": varstate_to_json(fit.varstate),
            "elbo_trace": fit.elbo_trace,
            "elbo": fit.elbo,
            "icl": icl(fit, n1, n2),
            "converged": fit.converged,
            "n_iters": fit.n_iters,
            "degenerate": fit.degenerate,
            "n_clamped": fit.n_clamped,
            "seed": fit.seed}


def build_manifest(command: str, args_doc: dict, input_path, seed,
                   timings: dict) -> dict:
    return {"command": command,
            "config": args_doc,
            "input_digest": file_digest(input_path) if input_path else None,
            "seed": seed,
            "version": __version__,
            "timings": timings}


def fit_config_from_args(args) -> FitConfig:
    return FitConfig(max_vem_iters=args.max_iters,
                     elbo_rel_tol=args.tol,
                     optimizer=OptimizerConfig(max_inner_iters=args.inner_iters),
                     n_inits=args.inits,
                     warmup_iters=args.warmup_iters,
                     seed=args.seed,
                     deterministic=args.deterministic)


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, outdir: Path) -> dict:
    mnar = (args.mu, args.var_a, args.var_b, args.var_p, args.var_q)
    params = make_benchmark_params(args.epsilon, mnar)
    if args.kind is not None:
        kind = parse_kind(args.kind)
        zeroed = dict(var_a=params.var_a, var_p=params.var_p,
                      var_b=params.var_b, var_q=params.var_q)
        if not kind.has_ap:
            zeroed.update(var_a=0.0, var_p=0.0)
        if not kind.has_bq:
            zeroed.update(var_b=0.0, var_q=0.0)
        params = ModelParams(kind, params.alpha_rows, params.alpha_cols,
                             params.pi, params.mu, **zeroed)
    sample = sample_lbm(params, args.n_rows, args.n_cols, args.seed)
    save_matrix(sample.x_observed, outdir / "matrix.csv")
    truth = {"params": params_to_json(params),
             "row_labels": sample.row_labels, "col_labels": sample.col_labels,
             "a": sample.a, "b": sample.b, "p": sample.p, "q": sample.q,
             "x_complete": sample.x_complete, "mask": sample.mask,
             "missing_fraction": sample.x_observed.missing_fraction}
    write_json(truth, outdir / "truth.json")
    return {"files": {"matrix": "matrix.csv", "truth": "truth.json"},
            "missing_fraction": sample.x_observed.missing_fraction,
            "n_rows": args.n_rows, "n_cols": args.n_cols}


def cmd_fit(args, outdir: Path) -> dict:
    x = load_matrix(args.input, args.format)
    cfg = fit_config_from_args(args)
    fit = multi_start_fit(x, args.nq, args.nl, parse_kind(args.kind), cfg)
    labels = map_assignments(fit.varstate)
    doc = fit_to_json(fit, x.n_rows, x.n_cols)
    doc["map_row_labels"] = labels.row_labels
    doc["map_col_labels"] = labels.col_labels
    return doc


def _parse_range(spec: str):
    if ":" in spec:
        lo, hi = spec.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in spec.split(",")]


def cmd_select(args, outdir: Path) -> dict:
    x = load_matrix(args.input, args.format)
    cfg = fit_config_from_args(args)
    kinds = [parse_kind(k) for k in args.kinds.split(",")]
    best, table = select_model(x, _parse_range(args.nq_range),
                               _parse_range(args.nl_range), kinds, cfg)
    rows = [{"nq": e.nq, "nl": e.nl, "kind": e.kind.value, "icl": e.icl,
             "elbo": e.elbo, "error": e.error or ""} for e in table]
    with open(outdir / "selection.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    best_doc = fit_to_json(best.fit_ref, x.n_rows, x.n_cols)
    write_json({"best": {"nq": best.nq, "nl": best.nl,
                         "kind": best.kind.value, "icl": best.icl},
                "fit": best_doc}, outdir / "best_model.json")
    return {"table": rows,
            "best": {"nq": best.nq, "nl": best.nl, "kind": best.kind.value,
                     "icl": best.icl},
            "files": {"table_csv": "selection.csv",
                      "best_model": "best_model.json"}}


def cmd_risk(args, outdir: Path) -> dict:
    if args.target_risk is not None:
        mnar = (args.mu, args.var_a, args.var_b, args.var_p, args.var_q)
        eps = calibrate_epsilon(args.target_risk, args.n_rows, args.n_cols,
                                mnar, seed=args.seed, tol=args.risk_tol)
        return {"mode": "calibrate", "target_risk": args.target_risk,
                "epsilon": eps}
    if not args.truth:
        raise ValueError("risk needs either --target-risk or --input/--truth")
    import json
    truth = json.loads(Path(args.truth).read_text())
    params = params_from_json(truth["params"])
    x = load_matrix(args.input, args.format)
    risk = conditional_bayes_risk(x, params, RiskConfig(seed=args.seed))
    return {"mode": "estimate", "risk": risk}


def cmd_eval(args, outdir: Path) -> dict:
    import json
    truth = json.loads(Path(args.truth).read_text())
    result = json.loads(Path(args.fit_result).read_text())
    true_params = params_from_json(truth["params"])
    fitted_params = params_from_json(result["params"])
    truth_labels = LabelAssignment(truth["row_labels"], truth["col_labels"])
    pred_labels = LabelAssignment(result["map_row_labels"],
                                  result["map_col_labels"])
    nq, nl = true_params.nq, true_params.nl
    doc = {"l_item": l_item(truth_labels, pred_labels, nq, nl, align=True)}
    if fitted_params.pi.shape == true_params.pi.shape:
        row_perm, col_perm = align_labels(truth_labels, pred_labels, nq, nl)
        doc["param_max_error"] = param_max_error(true_params, fitted_params,
                                                 row_perm, col_perm)
    vs = result["varstate"]
    gamma = VariationalState(
        np.asarray(vs["tau_rows"], float), np.asarray(vs["tau_cols"], float),
        **{k: np.asarray(v, float) for k, v in vs.items()
           if k not in ("tau_rows", "tau_cols")})
    mse_a, mse_b, mse_p, mse_q = latent_mse(
        _sample_view(truth), gamma)
    doc["latent_mse"] = {"a": mse_a, "b": mse_b, "p": mse_p, "q": mse_q}
    return doc


def _sample_view(truth: dict):
    from .model import CompleteSample
    return CompleteSample(np.asarray(truth["row_labels"], int),
                          np.asarray(truth["col_labels"], int),
                          np.asarray(truth["a"], float),
                          np.asarray(truth["b"], float),
                          np.asarray(truth["p"], float),
                          np.asarray(truth["q"], float),
                          np.asarray(truth["x_complete"], np.int8),
                          np.asarray(truth["mask"], np.int8))


def cmd_report(args, outdir: Path) -> dict:
    import json
    result = json.loads(Path(args.fit_result).read_text())
    params = params_from_json(result["params"])
    row_labels = np.asarray(result["map_row_labels"], int)
    col_labels = np.asarray(result["map_col_labels"], int)
    row_order = np.argsort(row_labels, kind="stable")
    col_order = np.argsort(col_labels, kind="stable")
    vs = result["varstate"]

    def scatter_csv(path, ids, columns):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "map_class"] + [c[0] for c in columns])
            for i in ids:
                writer.writerow([int(i)] + [int(row_labels[i]) if columns is row_spec else int(col_labels[i])]
                                + [format(c[1][i], ".17g") for c in columns])

    row_spec = [(name, np.asarray(vs[name], float))
                for name in ("nu_a", "nu_b") if name in vs]
    col_spec = [(name, np.asarray(vs[name], float))
                for name in ("nu_p", "nu_q") if name in vs]
    if row_spec:
        scatter_csv(outdir / "row_propensities.csv", range(row_labels.size),
                    row_spec)
    if col_spec:
        columns = col_spec
        with open(outdir / "col_propensities.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "map_class"] + [c[0] for c in columns])
            for j in range(col_labels.size):
                writer.writerow([j, int(col_labels[j])]
                                + [format(c[1][j], ".17g") for c in columns])
    return {"row_order": row_order, "col_order": col_order,
            "block_probabilities": params.pi,
            "files": {k: v for k, v in
                      (("row_scatter", "row_propensities.csv") if row_spec else (None, None),
                       ("col_scatter", "col_propensities.csv") if col_spec else (None, None))
                      if k}}


# ---------------------------------------------------------------------------
# argument plumbing

def _read_config_file(path):
    doc = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        doc[key.strip().replace("-", "_")] = value.strip()
    return doc


def add_common(sub):
    sub.add_argument("--output-dir", default=".")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", default=None,
                     help="flat key=value config file; CLI flags win")


def add_fit_opts(sub):
    sub.add_argument("--input", required=True)
    sub.add_argument("--format", default="ternary-csv",
                     choices=["ternary-csv", "votes-csv"])
    sub.add_argument("--inits", type=int, default=5)
    sub.add_argument("--tol", type=float, default=1e-6)
    sub.add_argument("--max-iters", type=int, default=500)
    sub.add_argument("--inner-iters", type=int, default=50)
    sub.add_argument("--warmup-iters", type=int, default=15)
    sub.add_argument("--deterministic", action="store_true", default=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lbmnar",
        description="Co-clustering of binary matrices with informative "
                    "missingness.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("simulate", help="draw a matrix from the model")
    add_common(s)
    s.add_argument("--n-rows", type=int, required=True)
    s.add_argument("--n-cols", type=int, required=True)
    s.add_argument("--epsilon", type=float, default=0.2)
    s.add_argument("--kind", default=None,
                   choices=["mcar", "mar", "mnar", "nmar"])
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--var-a", type=float, default=1.0)
    s.add_argument("--var-b", type=float, default=1.0)
    s.add_argument("--var-p", type=float, default=1.0)
    s.add_argument("--var-q", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate, result_file="simulate.json")

    s = subs.add_parser("fit", help="variational EM fit")
    add_common(s)
    add_fit_opts(s)
    s.add_argument("--nq", type=int, required=True)
    s.add_argument("--nl", type=int, required=True)
    s.add_argument("--kind", default="nmar",
                   choices=["mcar", "mar", "mnar", "nmar"])
    s.set_defaults(func=cmd_fit, result_file="fit_result.json")

    s = subs.add_parser("select", help="ICL grid search")
    add_common(s)
    add_fit_opts(s)
    s.add_argument("--nq-range", default="2:4")
    s.add_argument("--nl-range", default="2:4")
    s.add_argument("--kinds", default="mar,nmar")
    s.set_defaults(func=cmd_select, result_file="selection.json")

    s = subs.add_parser("risk", help="estimate risk or calibrate epsilon")
    add_common(s)
    s.add_argument("--input", default=None)
    s.add_argument("--format", default="ternary-csv",
                   choices=["ternary-csv", "votes-csv"])
    s.add_argument("--truth", default=None)
    s.add_argument("--target-risk", type=float, default=None)
    s.add_argument("--risk-tol", type=float, default=0.005)
    s.add_argument("--n-rows", type=int, default=100)
    s.add_argument("--n-cols", type=int, default=100)
    s.add_argument("--mu", type=float, default=1.0)
    s.add_argument("--var-a", type=float, default=1.0)
    s.add_argument("--var-b", type=float, default=1.0)
    s.add_argument("--var-p", type=float, default=1.0)
    s.add_argument("--var-q", type=float, default=1.0)
    s.set_defaults(func=cmd_risk, result_file="risk.json")

    s = subs.add_parser("eval", help="compare a fit against ground truth")
    add_common(s)
    s.add_argument("--truth", required=True)
    s.add_argument("--fit-result", required=True)
    s.set_defaults(func=cmd_eval, result_file="eval.json")

    s = subs.add_parser("report", help="plot-ready summaries of a fit")
    add_common(s)
    s.add_argument("--fit-result", required=True)
    s.set_defaults(func=cmd_report, result_file="report.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if getattr(args, "config", None):
        file_doc = _read_config_file(args.config)
        defaults = parser.parse_args([args.command] + _required_stub(args))
        for key, value in file_doc.items():
            if hasattr(args, key) and getattr(args, key) == getattr(
                    defaults, key, object()):
                current = getattr(args, key)
                caster = type(current) if current is not None else str
                setattr(args, key, caster(value))

    if os.environ.get("SEED"):
        args.seed = int(os.environ["SEED"])

    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        payload = args.func(args, outdir)
        timings = {"total_seconds": time.perf_counter() - started}
        args_doc = {k: v for k, v in vars(args).items()
                    if k not in ("func", "result_file") and not callable(v)}
        manifest = build_manifest(args.command, args_doc,
                                  getattr(args, "input", None),
                                  args.seed, timings)
        payload = {"manifest": manifest, **payload}
        write_json(payload, outdir / args.result_file)
        return 0
    except Exception as exc:
        write_json({"error": {"command": args.command, "type": type(exc).__name__,
                              "message": str(exc)},
                    "traceback": traceback.format_exc()},
                   outdir / "error.json")
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _required_stub(args):
    # re-parse with the original required flags so config-file values only
    # fill in options the user left at their defaults
    stub = []
    for key in ("input", "truth", "fit_result", "nq", "nl",
                "n_rows", "n_cols"):
        val = getattr(args, key, None)
        if val is not None:
            stub += ["--" + key.replace("_", "-"), str(val)]
    return stub


if __name__ == "__main__":
    sys.exit(main())
