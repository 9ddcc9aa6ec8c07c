"""Command-line surface: simulate, link, evaluate, analyze, study.

All subcommands are driven by a JSON config (``--config``), with ``--seed``,
``--method``, ``--threads`` and ``--out`` overrides. Every run validates its
inputs before writing anything, then writes its outputs plus a manifest
(config, config hash, seed, versions, backend); rerunning from a manifest
reproduces the data outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._backend import BACKEND
from .baselines import run_method
from .comparison import (
    BlockedFile,
    ComparisonSchema,
    load_schema,
    read_blocked_csv,
    save_schema,
    write_blocked_csv,
)
from .engine import substream
from .exceptions import (
    ConfigError,
    ContractViolation,
    DegeneracyError,
    ResourceLimitError,
    SchemaError,
)
from .mi import combine_logistic_fits, fit_logistic
from .model import Hyperparams
from .sampler import ChainConfig
from .simulation import (
    SimulationConfig,
    StudyResult,
    _metric_counts,
    generate_dataset,
    inject_errors,
    run_study,
    study_schema,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RESOURCE = 3
EXIT_DEGENERACY = 4


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(p) as fh:
        obj = json.load(fh)
    # A manifest embeds the original config; accept either.
    return obj["config"] if "config" in obj and isinstance(obj["config"], dict) else obj


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, config: dict, extra: dict | None = None) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "config_sha256": _config_hash(config),
        "seed": config.get("seed"),
        "versions": {
            "blocklink": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "backend": BACKEND,
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(config: dict) -> Path:
    out = config.get("out_dir")
    if not out:
        raise ConfigError("config must set out_dir")
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ResourceLimitError(f"cannot create output directory {out}: {exc}") from exc
    return path


def _chain_from(config: dict) -> ChainConfig:
    chain_cfg = dict(config.get("chain", {}))
    chain_cfg.setdefault("seed", int(config.get("seed", 0)))
    return ChainConfig(**chain_cfg)


def _require_paths(config: dict, keys: tuple[str, ...]) -> None:
    for key in keys:
        val = config.get(key)
        if not val:
            raise ConfigError(f"config must set {key!r}")
        if not Path(val).exists():
            raise ConfigError(f"{key} file not found: {val}")


# ----------------------------------------------------------------- simulate


def cmd_simulate(config: dict) -> dict:
    """Write f1.csv, f2.csv, truth files, schema.json, and the manifest."""
    sim = SimulationConfig(**config.get("sim", {}))
    seed = int(config.get("seed", 0))
    out = _out_dir(config)
    schema = study_schema(sim.dob_day_included)
    f1, f2, truth = generate_dataset(sim, substream(seed, 100))
    f1_err = inject_errors(f1, sim, substream(seed, 101), truth)
    write_blocked_csv(f1_err, schema, out / "f1.csv")
    write_blocked_csv(f2, schema, out / "f2.csv")
    save_schema(schema, out / "schema.json")
    with open(out / "truth_blocks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f1_block", "f2_block"])
        for s, t in enumerate(truth.block_map):
            w.writerow([f1.block_ids[s], f2.block_ids[int(t)]])
    with open(out / "truth_links.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f1_block", "f2_block", "f1_record", "f2_record"])
        for s, t in enumerate(truth.block_map):
            for i, j in truth.links[s]:
                w.writerow(
                    [
                        f1.block_ids[s],
                        f2.block_ids[int(t)],
                        f1.record_ids[s][i],
                        f2.record_ids[int(t)][j],
                    ]
                )
    _write_manifest(out, "simulate", config, {"records": [f1.n_records, f2.n_records]})
    return {"out_dir": str(out)}


# --------------------------------------------------------------------- link


def _theta_json(theta) -> dict:
    out = theta.summary()
    out["alpha_pi"] = theta.alpha_pi
    out["beta_pi"] = theta.beta_pi
    return out


def _write_samples_jsonl(samples, f1: BlockedFile, f2: BlockedFile, path: Path) -> None:
    b1, r1 = f1.block_ids, f1.record_ids
    b2, r2 = f2.block_ids, f2.record_ids
    with open(path, "w") as fh:
        for smp in samples:
            line = {
                "iteration": smp.iteration,
                "blocks": [[b1[s], b2[t]] for s, t in smp.block_pairs],
                "links": [
                    [b1[s], b2[t], r1[s][i], r2[t][j]] for s, t, i, j in smp.links
                ],
                "n_m": [[b1[s], b2[t], n] for (s, t), n in sorted(smp.n_m.items())],
                "theta": _theta_json(smp.theta),
            }
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def cmd_link(config: dict) -> dict:
    """Run the selected sampler; write samples.jsonl, diagnostics, manifest."""
    _require_paths(config, ("f1", "f2", "schema"))
    method = config.get("method", "mlbrl")
    if method not in ("mlbrl", "cibrl", "brl"):
        raise ConfigError(f"unknown method {method!r}")
    schema = load_schema(config["schema"])
    f1 = read_blocked_csv(config["f1"], schema, "f1")
    f2 = read_blocked_csv(config["f2"], schema, "f2")
    chain = _chain_from(config)
    hyper_cfg = config.get("hyper", {})
    force = tuple(config.get("force_agreement", ()))
    hyper = None
    if hyper_cfg:
        base = modeled_schema_after_force(schema, force, method)
        hyper = Hyperparams.uniform(
            base,
            alpha_pi=float(hyper_cfg.get("alpha_pi", 1.0)),
            beta_pi=float(hyper_cfg.get("beta_pi", 1.0)),
        )
    out = _out_dir(config)
    result = run_method(method, f1, f2, schema, hyper, chain, force)
    _write_samples_jsonl(result.samples, f1, f2, out / "samples.jsonl")
    diag = {k: v for k, v in result.diagnostics.items() if k != "runtime_s"}
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    if config.get("export_logprob"):
        _export_logprob(result.samples, f1, f2, out)
    _write_manifest(
        out,
        "link",
        config,
        {
            "method": method,
            "candidate_pairs": result.diagnostics.get("candidate_pairs"),
            "runtime_s": result.diagnostics.get("runtime_s"),
            "samples": len(result.samples),
        },
    )
    return {"out_dir": str(out), "samples": len(result.samples)}


def modeled_schema_after_force(
    schema: ComparisonSchema, force: tuple[str, ...], method: str
) -> ComparisonSchema:
    """Modeled schema after forced-agreement removal (and BRL replication)."""
    if method == "brl":
        from .baselines import brl_schema

        schema = brl_schema(schema)
    return ComparisonSchema(
        block=[sp for sp in schema.block if sp.name not in force],
        record=[sp for sp in schema.record if sp.name not in force],
    )


def _export_logprob(samples, f1: BlockedFile, f2: BlockedFile, out: Path) -> None:
    """Averaged block-pair and record-pair log-probability matrices."""
    n = len(samples)
    if n == 0:
        return
    S, T = f1.n_blocks, f2.n_blocks
    if samples[0].block_pairs:
        freq = np.zeros((S, T))
        for smp in samples:
            for s, t in smp.block_pairs:
                freq[s, t] += 1.0
        with np.errstate(divide="ignore"):
            logp = np.log(freq / n)
        with open(out / "logprob_blocks.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f1_block"] + list(f2.block_ids))
            for s in range(S):
                w.writerow([f1.block_ids[s]] + [repr(float(v)) for v in logp[s]])
    link_freq: dict[tuple, int] = {}
    for smp in samples:
        for key in smp.links:
            link_freq[key] = link_freq.get(key, 0) + 1
    with open(out / "logprob_records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f1_block", "f2_block", "f1_record", "f2_record", "log_probability"])
        for (s, t, i, j), cnt in sorted(link_freq.items()):
            w.writerow(
                [
                    f1.block_ids[s],
                    f2.block_ids[t],
                    f1.record_ids[s][i],
                    f2.record_ids[t][j],
                    repr(float(np.log(cnt / n))),
                ]
            )


# ----------------------------------------------------------------- evaluate


def _read_samples_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def cmd_evaluate(config: dict) -> dict:
    """Score samples against truth; write per-sample metrics plus mean/sd footer."""
    _require_paths(config, ("samples", "truth_blocks", "truth_links"))
    samples = _read_samples_jsonl(config["samples"])
    with open(config["truth_blocks"]) as fh:
        truth_pairs = {(r["f1_block"], r["f2_block"]) for r in csv.DictReader(fh)}
    with open(config["truth_links"]) as fh:
        truth_links = {
            (r["f1_block"], r["f2_block"], r["f1_record"], r["f2_record"])
            for r in csv.DictReader(fh)
        }
    if not truth_pairs or not truth_links:
        raise ConfigError("truth files are empty")
    out = _out_dir(config)
    rows = []
    for smp in samples:
        sample_pairs = {tuple(p) for p in smp["blocks"]}
        sample_links = {tuple(l) for l in smp["links"]}
        m = _metric_counts(
            truth_links, sample_links, truth_pairs, sample_pairs, len(truth_pairs)
        )
        rows.append(
            {
                "iteration": smp["iteration"],
                "tpr": m.tpr,
                "ppv": m.ppv,
                "f1": m.f1,
                "acc": m.acc,
                "links": len(sample_links),
                "degenerate_ppv": m.degenerate_ppv,
            }
        )
    cols = ["iteration", "tpr", "ppv", "f1", "acc", "links", "degenerate_ppv"]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([_csv_cell(row[c]) for c in cols])
        for stat, fn in (("mean", np.mean), ("sd", lambda v: np.std(v, ddof=1))):
            footer = [stat]
            for c in cols[1:]:
                vals = [row[c] for row in rows if isinstance(row[c], (int, float)) and row[c] is not None]
                footer.append(repr(float(fn(vals))) if vals else "")
            w.writerow(footer)
    _write_manifest(out, "evaluate", config, {"samples": len(rows)})
    return {"out_dir": str(out), "samples": len(rows)}


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(float(v))
    return v


# ------------------------------------------------------------------ analyze


def _read_table(path) -> dict[str, dict[str, str]]:
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "record_id" not in reader.fieldnames:
            raise SchemaError(f"{path}: analysis tables need a record_id column")
        return {row["record_id"]: row for row in reader}


def cmd_analyze(config: dict) -> dict:
    """Per-imputation logistic fits, pooled; one OR row per exposure."""
    _require_paths(config, ("samples", "data1", "data2"))
    spec = config.get("analysis")
    if not spec:
        raise ConfigError("config must set analysis")
    outcome = spec["outcome"]
    covariates = spec.get("covariates", [])
    exposures = spec.get("exposures")
    if not exposures:
        raise ConfigError("analysis must list exposures")
    level = float(spec.get("level", 0.95))
    samples = _read_samples_jsonl(config["samples"])
    if len(samples) < 2:
        raise ConfigError("analysis requires at least 2 posterior samples")
    tables = {1: _read_table(config["data1"]), 2: _read_table(config["data2"])}

    def column(ref: dict, rid1: str, rid2: str) -> float:
        table = tables[int(ref["file"])]
        rid = rid1 if int(ref["file"]) == 1 else rid2
        row = table.get(rid)
        if row is None or ref["column"] not in row:
            raise ConfigError(f"record {rid!r} or column {ref['column']!r} missing")
        try:
            return float(row[ref["column"]])
        except ValueError as exc:
            raise SchemaError(f"non-numeric analysis value for {ref['column']!r}") from exc

    out = _out_dir(config)
    results = []
    for exp_ref in exposures:
        fits = []
        for smp in samples:
            ys, xs = [], []
            for _, _, rid1, rid2 in smp["links"]:
                ys.append(column(outcome, rid1, rid2))
                xs.append(
                    [1.0, column(exp_ref, rid1, rid2)]
                    + [column(c, rid1, rid2) for c in covariates]
                )
            if len(ys) <= len(covariates) + 2:
                raise DegeneracyError("too few linked records to fit the analysis model")
            fits.append(fit_logistic(np.array(xs), np.array(ys)))
        est = combine_logistic_fits(fits, coef_index=1, level=level)
        results.append((exp_ref["column"], est))
    with open(out / "analysis.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["exposure", "or", "ci_low", "ci_high", "log_or", "nu", "m", "flags"])
        # odds ratios live on the exp scale; an overflowing bound is honestly inf
        with np.errstate(over="ignore"):
            for name, est in results:
                w.writerow(
                    [
                        name,
                        repr(float(np.exp(est.qbar))),
                        repr(float(np.exp(est.ci_low))),
                        repr(float(np.exp(est.ci_high))),
                        repr(est.qbar),
                        repr(est.nu),
                        est.m,
                        ";".join(est.flags),
                    ]
                )
    _write_manifest(out, "analyze", config, {"exposures": [r[0] for r in results]})
    return {"out_dir": str(out), "exposures": len(results)}


# -------------------------------------------------------------------- study


def cmd_study(config: dict) -> dict:
    """Run the simulation grid and write the summary table."""
    grid = [tuple(cell) for cell in config.get("grid", [[0.0, 0.0, 0.0]])]
    methods = tuple(config.get("methods", ("mlbrl", "cibrl", "brl")))
    replicates = int(config.get("replicates", 10))
    threads = int(config.get("threads", 1))
    seed = int(config.get("seed", 0))
    day_included = bool(config.get("day_included", False))
    sim_cfg = SimulationConfig(**config.get("sim", {}))
    chain = _chain_from(config)
    out = _out_dir(config)
    study = run_study(
        grid,
        methods=methods,
        replicates=replicates,
        base_cfg=sim_cfg,
        chain=chain,
        seed=seed,
        threads=threads,
        day_included=day_included,
    )
    write_study_csv(study, out / "study.csv")
    _write_manifest(out, "study", config, {"cells": len(grid), "replicates": replicates})
    return {"out_dir": str(out)}


def write_study_csv(study: StudyResult, path) -> None:
    cols = [
        "eps_region", "eps_income", "eps_dob", "method", "replicates",
        "tpr", "tpr_sd", "ppv", "ppv_sd", "f1", "f1_sd", "acc", "acc_sd",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in study.summary():
            w.writerow([_csv_cell(row[c]) for c in cols])


# --------------------------------------------------------------------- main


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="blocklink",
        description="Joint block-and-record Bayesian record linkage toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("simulate", "link", "evaluate", "analyze", "study"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config (or a manifest embedding one)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--method", help="sampler: mlbrl | cibrl | brl")
        p.add_argument("--threads", type=int, help="worker processes for study replicates")
        p.add_argument("--out", help="output directory override")
    args = parser.parse_args(argv)

    dispatch = {
        "simulate": cmd_simulate,
        "link": cmd_link,
        "evaluate": cmd_evaluate,
        "analyze": cmd_analyze,
        "study": cmd_study,
    }
    try:
        config = _load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.method:
            config["method"] = args.method
        if args.threads is not None:
            config["threads"] = args.threads
        if args.out:
            config["out_dir"] = args.out
        info = dispatch[args.subcommand](config)
    except (ConfigError, SchemaError, ContractViolation, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ResourceLimitError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except DegeneracyError as exc:
        print(f"degeneracy error: {exc}", file=sys.stderr)
        return EXIT_DEGENERACY
    print(json.dumps({"subcommand": args.subcommand, **info}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
