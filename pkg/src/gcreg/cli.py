"""Batch command-line front-end: simulate, fit, report.

Three subcommands cover the whole workflow without any interactivity:

* ``gcreg simulate`` writes replicate directories (Y.csv, X.csv,
  truth.json) for a named preset or a custom scenario config.
* ``gcreg fit`` reads a TOML config describing data, model, prior and
  chain settings, runs one or more independent chains, and writes one
  trace directory per chain plus a run manifest.
* ``gcreg report`` turns trace directories into MPPI/EPPI tables, a
  per-parameter summary, and, when a truth manifest is given, ROC/AUC
  and interval scores.

Exit codes: 0 on success, 2 for configuration problems, 3 for data
problems (unreadable files, family/support mismatches, unwritable
output), 4 when a chain aborts numerically.

Config schema (TOML)::

    [data]
    responses = "Y.csv"          # path, relative to the config file
    predictors = "X.csv"         # one path or a list (one per response)

    [model]
    families = ["gaussian", { kind = "ordinal-probit", categories = 3 }]
    confounders = []             # always-included design columns
    add_intercept = true
    standardize = false

    [prior]
    expected_size = 5.0          # prior mean model size, or explicit a/b
    size_variance = 9.0
    v = 1.0

    [chain]
    iterations = 30000
    burnin = 10000
    thin = 20
    seed = 0
    chains = 1
    cov_update = "mh"
    store_loglik = true

    [output]
    dir = "out"

Family entries are either a registry name or a table with ``kind`` plus
parameters (``categories`` for ordinal, ``trials`` for binomial,
``dispersion`` for negative binomial, ``variance`` for Gaussian).
"""

import argparse
import dataclasses
import hashlib
import json
import multiprocessing
import os
import subprocess
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:             # Python < 3.11
    import tomli as tomllib

from . import diagnostics, marginals, model, simulate
from .errors import ConfigError, DataError, NumericError
from .sampler import ChainConfig, Trace, load_trace, run_chain

_SCHEMA = {
    "data": {"responses", "predictors"},
    "model": {"families", "confounders", "add_intercept", "standardize"},
    "prior": {"expected_size", "size_variance", "a", "b", "v",
              "confounder_prior_variance", "cut_prior_std",
              "dispersion_prior_shape", "dispersion_prior_rate",
              "move_probs", "rank_weights"},
    "chain": {"iterations", "burnin", "thin", "seed", "chains", "cov_update",
              "rw_step", "rw_target", "check_every", "store_loglik"},
    "output": {"dir"},
}

CHAIN_DEFAULTS = {"iterations": 30000, "burnin": 10000, "thin": 20, "seed": 0}


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _sha256(payload) -> str:
    if isinstance(payload, bytes):
        raw = payload
    else:
        raw = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(raw).hexdigest()[:16]


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None


def _check_schema(cfg: dict, path) -> None:
    for section, body in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]; "
                              f"expected one of {sorted(_SCHEMA)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        extra = set(body) - _SCHEMA[section]
        if extra:
            raise ConfigError(f"{path}: unknown keys {sorted(extra)} in "
                              f"[{section}]; allowed: {sorted(_SCHEMA[section])}")


def _parse_family(entry) -> marginals.Family:
    if isinstance(entry, str):
        kind, params = entry, {}
    elif isinstance(entry, dict):
        params = dict(entry)
        kind = params.pop("kind", None)
        if kind is None:
            raise ConfigError(f"family table {entry} is missing 'kind'")
    else:
        raise ConfigError(f"family entry must be a name or a table, got {entry!r}")
    if kind == "ordinal-probit" and "cuts" not in params:
        categories = params.pop("categories", None)
        if categories is None:
            raise ConfigError("ordinal family needs 'categories' (or explicit cuts)")
        params["cuts"] = tuple(float(c) for c in range(int(categories) - 1))
    if "cuts" in params:
        params["cuts"] = tuple(params["cuts"])
    try:
        return marginals.make_family(kind, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _build_dataset(cfg: dict, base_dir, data_dir=None) -> model.Dataset:
    data = cfg.get("data", {})
    mod = cfg.get("model", {})
    if "responses" not in data:
        raise ConfigError("config needs data.responses")
    if "predictors" not in data:
        raise ConfigError("config needs data.predictors")
    if "families" not in mod:
        raise ConfigError("config needs model.families")

    root = data_dir if data_dir is not None else base_dir

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(root, p)

    responses = resolve(data["responses"])
    preds = data["predictors"]
    predictors = resolve(preds) if isinstance(preds, str) else [resolve(p) for p in preds]
    families = [_parse_family(f) for f in mod["families"]]
    try:
        return model.load_dataset(
            responses, predictors, families,
            confounder_cols=tuple(mod.get("confounders", ())),
            add_intercept=bool(mod.get("add_intercept", True)),
            standardize=bool(mod.get("standardize", False)))
    except OSError as exc:
        raise DataError(f"cannot read data: {exc}") from None


def _build_hyper(cfg: dict, dataset: model.Dataset) -> model.Hyperparams:
    prior = dict(cfg.get("prior", {}))
    knobs = {key: prior.pop(key) for key in
             ("v", "confounder_prior_variance", "cut_prior_std",
              "dispersion_prior_shape", "dispersion_prior_rate") if key in prior}
    for key in ("move_probs", "rank_weights"):
        if key in prior:
            knobs[key] = tuple(prior.pop(key))
    if "a" in prior or "b" in prior:
        if not ("a" in prior and "b" in prior):
            raise ConfigError("explicit beta-binomial prior needs both a and b")
        a = tuple(float(x) for x in np.broadcast_to(prior.pop("a"), (dataset.m,)))
        b = tuple(float(x) for x in np.broadcast_to(prior.pop("b"), (dataset.m,)))
        if prior:
            raise ConfigError(f"unused prior keys: {sorted(prior)}")
        return model.Hyperparams(a=a, b=b, **knobs)
    expected = float(prior.pop("expected_size", 5.0))
    variance = float(prior.pop("size_variance", 9.0))
    if prior:
        raise ConfigError(f"unused prior keys: {sorted(prior)}")
    return model.elicited_hyperparams(dataset, expected, variance, **knobs)


def _build_chain_config(cfg: dict, overrides: dict) -> ChainConfig:
    chain = dict(CHAIN_DEFAULTS)
    chain.update(cfg.get("chain", {}))
    chain.update({k: v for k, v in overrides.items() if v is not None})
    chain.pop("chains", None)
    try:
        return ChainConfig(**chain)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad chain settings: {exc}") from None


def _chain_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(index,))
    return int(ss.generate_state(1)[0])


def _fit_one(args):
    dataset, hyper, config, out_dir = args
    trace = run_chain(dataset, hyper, config, dump_dir=out_dir)
    trace.save(out_dir)
    return out_dir


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    if (args.scenario is None) == (args.config is None):
        raise ConfigError("pass exactly one of --scenario or --config")
    if args.scenario is not None:
        scen = simulate.get_scenario(
            args.scenario,
            replicates=20 if args.replicates is None else args.replicates,
            seed=0 if args.seed is None else args.seed)
    else:
        raw = _load_toml(args.config)
        if "scenario" not in raw:
            raise ConfigError(f"{args.config}: missing [scenario] section")
        payload = dict(raw["scenario"])
        if args.replicates is not None:
            payload["replicates"] = args.replicates
        if args.seed is not None:
            payload["seed"] = args.seed
        try:
            scen = simulate.scenario_from_dict(payload)
        except TypeError as exc:
            raise ConfigError(f"bad scenario config: {exc}") from None

    try:
        dirs = simulate.generate_scenario(scen, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    manifest = {
        "command": "simulate",
        "scenario": simulate.scenario_to_dict(scen),
        "config_hash": _sha256(simulate.scenario_to_dict(scen)),
        "seed": scen.seed,
        "git_describe": _git_describe(),
        "replicate_dirs": [os.path.basename(d) for d in dirs],
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(dirs)} replicates under {args.out}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_toml(args.config)
    _check_schema(cfg, args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    dataset = _build_dataset(cfg, base_dir, data_dir=args.data_dir)
    hyper = _build_hyper(cfg, dataset)

    overrides = {"iterations": args.iters, "burnin": args.burnin,
                 "thin": args.thin, "seed": args.seed}
    config = _build_chain_config(cfg, overrides)
    n_chains = args.chains if args.chains is not None \
        else int(cfg.get("chain", {}).get("chains", 1))
    if n_chains < 1:
        raise ConfigError(f"chains must be >= 1, got {n_chains}")

    out = args.out or cfg.get("output", {}).get("dir")
    if not out:
        raise ConfigError("no output directory (set output.dir or pass --out)")
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None

    if n_chains == 1:
        jobs = [(dataset, hyper, config, os.path.join(out, "chain00"))]
    else:
        jobs = []
        for c in range(n_chains):
            cc = dataclasses.replace(config, seed=_chain_seed(config.seed, c))
            jobs.append((dataset, hyper, cc, os.path.join(out, f"chain{c:02d}")))

    if len(jobs) == 1:
        dirs = [_fit_one(jobs[0])]
    else:
        workers = min(len(jobs), os.cpu_count() or 1)
        if workers > 1:
            with multiprocessing.Pool(workers) as pool:
                dirs = pool.map(_fit_one, jobs)
        else:
            dirs = [_fit_one(j) for j in jobs]

    with open(args.config, "rb") as fh:
        config_bytes = fh.read()
    manifest = {
        "command": "fit",
        "config_hash": _sha256(config_bytes),
        "config": cfg,
        "seed": config.seed,
        "chains": [os.path.basename(d) for d in dirs],
        "chain_settings": {"iterations": config.iterations,
                           "burnin": config.burnin, "thin": config.thin,
                           "cov_update": config.cov_update},
        "confounders": [mask.astype(int).tolist() for mask in dataset.confounders],
        "git_describe": _git_describe(),
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"fit complete: {len(dirs)} chain(s) under {out}")
    return 0


def _pool_traces(traces) -> Trace:
    """Concatenate compatible chains draw-wise."""
    first = traces[0]
    m = len(first.gamma)
    for tr in traces[1:]:
        if len(tr.gamma) != m or tr.pairs != first.pairs or \
                any(a.shape[1] != b.shape[1] for a, b in zip(tr.gamma, first.gamma)):
            raise DataError("trace directories are not from the same model")
    cat = np.concatenate
    return Trace(
        gamma=[cat([t.gamma[k] for t in traces]) for k in range(m)],
        beta=[cat([t.beta[k] for t in traces]) for k in range(m)],
        theta=[cat([t.theta[k] for t in traces]) for k in range(m)],
        corr=cat([t.corr for t in traces]),
        delta=cat([t.delta for t in traces]),
        edges=cat([t.edges for t in traces]),
        loglik=(cat([t.loglik for t in traces])
                if all(t.loglik.size for t in traces) else np.empty((0, 0))),
        pairs=first.pairs,
        meta={"pooled_from": [t.meta.get("config_hash", "") for t in traces]},
    )


def _find_trace_dirs(path):
    """A trace dir itself, or every chainNN/ under a fit output dir."""
    if os.path.exists(os.path.join(path, "gamma.csv")):
        return [path]
    subs = sorted(d for d in os.listdir(path)
                  if os.path.exists(os.path.join(path, d, "gamma.csv")))
    if not subs:
        raise DataError(f"{path} contains no trace (no gamma.csv found)")
    return [os.path.join(path, d) for d in subs]


def _report_confounders(run_dir, trace) -> list:
    """Confounder masks for the trace, from the fit manifest when present."""
    manifest_path = os.path.join(run_dir, "manifest.json")
    widths = [g.shape[1] for g in trace.gamma]
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        stored = manifest.get("confounders")
        if stored is not None:
            masks = [np.asarray(c, dtype=bool) for c in stored]
            if [c.size for c in masks] == widths:
                return masks
    ## fall back to the intercept-only layout
    return [np.r_[True, np.zeros(w - 1, dtype=bool)] for w in widths]


def cmd_report(args) -> int:
    trace_dirs = []
    try:
        for path in args.traces:
            trace_dirs.extend(_find_trace_dirs(path))
        traces = [load_trace(d) for d in trace_dirs]
    except OSError as exc:
        raise DataError(f"cannot read trace: {exc}") from None
    trace = traces[0] if len(traces) == 1 else _pool_traces(traces)
    first = os.path.abspath(args.traces[0])
    run_dir = os.path.dirname(first) \
        if os.path.exists(os.path.join(first, "gamma.csv")) else first
    confounders = _report_confounders(run_dir, trace)

    out = args.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None

    ## deterministic identity of the inputs: hash the identifying manifest
    ## fields, not file bytes, so wall-clock metadata never leaks in
    sources = [{"dir": os.path.basename(d),
                "config_hash": t.meta.get("config_hash", ""),
                "seed": t.meta.get("seed"),
                "n_draws": t.n_draws}
               for d, t in zip(trace_dirs, traces)]
    report = {
        "command": "report",
        "manifest_hash": _sha256(sources),
        "sources": sources,
        "n_draws": trace.n_draws,
        "acceptance": [t.meta.get("acceptance") for t in traces],
    }

    M = diagnostics.mppi(trace)
    if isinstance(M, list):
        raise DataError("responses have different design widths; "
                        "per-response reporting is not supported here")
    E = diagnostics.eppi(trace)
    m = E.shape[0]
    _write_matrix(os.path.join(out, "mppi.csv"), M,
                  [f"response{k}" for k in range(m)])
    _write_matrix(os.path.join(out, "eppi.csv"), E,
                  [f"response{k}" for k in range(m)])
    _write_summary(os.path.join(out, "summary.csv"), diagnostics.summarize(trace))

    if args.truth is not None:
        tdir = args.truth if os.path.isdir(args.truth) \
            else os.path.dirname(os.path.abspath(args.truth))
        try:
            truth = simulate.load_truth(tdir)
        except OSError as exc:
            raise DataError(f"cannot read truth manifest: {exc}") from None
        sel = diagnostics.selection_report(trace, confounders, truth["gamma"],
                                           truth_beta=truth["B"],
                                           alpha=args.alpha)
        report["auc"] = [None if np.isnan(a) else float(a) for a in sel.auc]
        report["mean_interval_score"] = [
            None if np.isnan(s) else float(s) for s in sel.mean_interval_score]
        for k, curve in enumerate(sel.curves):
            if curve is not None:
                _write_matrix(os.path.join(out, f"roc{k}.csv"), curve,
                              ["fpr", "tpr"])

    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"report written to {out}")
    return 0


def _write_matrix(path, mat, header) -> None:
    np.savetxt(path, np.asarray(mat, dtype=float), delimiter=",",
               header=",".join(header), comments="")


def _write_summary(path, summary: dict) -> None:
    rows = []
    keys = None
    for name, stats in summary.items():
        if keys is None:
            keys = list(stats)
        rows.append(",".join([name] + [f"{stats[k]:.17g}" for k in keys]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["parameter"] + (keys or [])) + "\n")
        fh.write("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcreg",
        description="Joint Bayesian variable selection for mixed responses")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate synthetic replicates")
    sim.add_argument("--scenario", help="preset name: I, II, III or IV")
    sim.add_argument("--config", help="TOML file with a [scenario] section")
    sim.add_argument("--replicates", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run MCMC chains on a dataset")
    fit.add_argument("--config", required=True, help="TOML model/chain config")
    fit.add_argument("--data-dir", default=None,
                     help="directory the data paths resolve against "
                          "(default: the config file's directory)")
    fit.add_argument("--iters", type=int, default=None)
    fit.add_argument("--burnin", type=int, default=None)
    fit.add_argument("--thin", type=int, default=None)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--chains", type=int, default=None)
    fit.add_argument("--out", default=None)
    fit.set_defaults(func=cmd_fit)

    rep = sub.add_parser("report", help="summarize one or more traces")
    rep.add_argument("traces", nargs="+",
                     help="trace directories (or a fit output directory)")
    rep.add_argument("--truth", default=None,
                     help="truth.json (or its replicate directory) for scoring")
    rep.add_argument("--alpha", type=float, default=0.05)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
