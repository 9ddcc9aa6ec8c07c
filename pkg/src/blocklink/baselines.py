"""Comparator samplers: flat one-to-one linkage (BRL) and two-stage (CIBRL).

BRL ignores the blocking: both files collapse to a single virtual block, the
block-level variables are replicated onto records as extra linking variables,
and the record sweep runs over the full candidate-pair space (guarded by a
pair cap). CIBRL samples the block pairing first using only block-level
comparisons, then samples record links within the linked pairs of each
retained block draw.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from .comparison import BlockedFile, ComparisonSchema, build_comparison_cube
from .engine import LinkageEngine, substream
from .exceptions import ConfigError, ResourceLimitError
from .model import Hyperparams, ModelParams
from .sampler import (
    ChainConfig,
    PosteriorSample,
    ProposalPool,
    RunResult,
    _backend_name,
    _emit_sample,
    run_mlbrl,
)


def _merge_to_single_block(f: BlockedFile, suffix: str) -> tuple[BlockedFile, list[tuple[int, int]]]:
    """Flatten a blocked file into one block, appending block values to records.

    Returns the merged file and the global-index -> (block, record) map.
    """
    ids, values, index_map = [], [], []
    for s in range(f.n_blocks):
        bvals = tuple(f.block_values[s])
        for i, (rid, rvals) in enumerate(zip(f.record_ids[s], f.record_values[s])):
            ids.append(rid)
            values.append(tuple(rvals) + bvals)
            index_map.append((s, i))
    return (
        BlockedFile(
            file_id=f.file_id + suffix,
            block_ids=["__all__"],
            block_values=[()],
            record_ids=[ids],
            record_values=[values],
        ),
        index_map,
    )


def brl_schema(schema: ComparisonSchema) -> ComparisonSchema:
    """Record-level schema for the flat sampler: record vars then block vars."""
    return ComparisonSchema(block=[], record=list(schema.record) + list(schema.block))


def run_brl(
    f1: BlockedFile,
    f2: BlockedFile,
    schema: ComparisonSchema,
    hyper: Hyperparams | None = None,
    chain: ChainConfig | None = None,
    force_agreement: tuple[str, ...] = (),
) -> RunResult:
    """Flat one-to-one linkage over the whole files (no blocking constraints).

    Emitted links are mapped back to the callers' block/record indices, so
    evaluation is method-agnostic; block pairs are empty (no block accuracy).
    """
    chain = chain or ChainConfig(sweeps=1)
    pair_space = f1.n_records * f2.n_records
    if pair_space > chain.brl_pair_cap:
        raise ResourceLimitError(
            f"unblocked pair space {pair_space} exceeds cap {chain.brl_pair_cap}"
        )
    m1, map1 = _merge_to_single_block(f1, "#flat")
    m2, map2 = _merge_to_single_block(f2, "#flat")
    mschema = brl_schema(schema)
    result = run_mlbrl(
        m1,
        m2,
        mschema,
        hyper=hyper,
        chain=chain,
        force_agreement=force_agreement,
        pool=ProposalPool(rows={}, adaptive=False),
    )
    samples = [
        PosteriorSample(
            iteration=smp.iteration,
            block_pairs=[],
            links=[
                (map1[i][0], map2[j][0], map1[i][1], map2[j][1])
                for (_, _, i, j) in smp.links
            ],
            n_m={},
            theta=smp.theta,
        )
        for smp in result.samples
    ]
    diag = dict(result.diagnostics)
    diag["method"] = "brl"
    return RunResult(samples=samples, diagnostics=diag)


def run_cibrl(
    f1: BlockedFile,
    f2: BlockedFile,
    schema: ComparisonSchema,
    hyper: Hyperparams | None = None,
    chain: ChainConfig | None = None,
    force_agreement: tuple[str, ...] = (),
) -> RunResult:
    """Two-stage sampler: block pairing from block-level comparisons only,
    then record links within the linked pairs of each retained block draw.

    Stage 1 never reads record-level comparisons; its chain is therefore
    invariant to record-level perturbations at a fixed seed. Stage 2 runs
    ``chain.sweeps`` update rounds (theta draw plus one Gibbs pass per linked
    pair) for each retained block sample, warm-starting matchings of pairs
    that stay linked between consecutive samples.
    """
    chain = chain or ChainConfig()
    t0 = time.perf_counter()
    swapped = f1.n_blocks > f2.n_blocks
    a, b = (f2, f1) if swapped else (f1, f2)
    cube = build_comparison_cube(a, b, schema, force_agreement)
    if hyper is None:
        hyper = Hyperparams.uniform(cube.schema)

    # Stage 1: B only.
    eng1 = LinkageEngine(cube, hyper, seed=chain.seed, track_links=False)
    eng1.init_random(substream(chain.seed, 10))
    b_draws = []
    for it in range(chain.iterations):
        eng1.sample_theta(it, classes=("bm", "bu"))
        if eng1.T > 1:
            move_rng = substream(chain.seed, 13, it)
            for s in range(eng1.S):
                eng1.propose_move(s, move_rng, block_only=True)
        if it >= chain.burn_in and (it - chain.burn_in) % chain.thin == 0:
            b_draws.append((it, eng1.assignment.copy(), eng1.theta))

    # Stage 2: C | B for every retained block draw.
    eng2 = LinkageEngine(cube, hyper, seed=chain.seed, pool_rows=None)
    samples: list[PosteriorSample] = []
    warm: dict[tuple[int, int], np.ndarray] = {}
    for m, (it, assign, theta_b) in enumerate(b_draws):
        eng2.assignment = assign.copy()
        eng2.t_owner = np.full(eng2.T, -1, dtype=np.int64)
        for s, t in enumerate(assign):
            eng2.t_owner[t] = s
        for s in range(eng2.S):
            t = int(assign[s])
            rows = warm.get((s, t))
            if rows is None:
                rows = np.full(int(cube.n1[s]), -1, dtype=np.int64)
            eng2.rows[s] = rows.copy()
            eng2.cols[s] = LinkageEngine._cols_from_rows(eng2.rows[s], int(cube.n2[t]))
            eng2.n_m[s] = int((eng2.rows[s] >= 0).sum())
        for u in range(chain.sweeps):
            eng2.sample_theta(1_000_000 + m * chain.sweeps + u, classes=("cm", "cu", "cnb"))
            uniforms = substream(chain.seed, 12, m, u).random(int(cube.n1.sum()))
            pos = 0
            for s in range(eng2.S):
                take = int(cube.n1[s])
                eng2.sweep_pair(s, 1, uniforms[pos : pos + take])
                pos += take
        for s in range(eng2.S):
            warm[(s, int(assign[s]))] = eng2.rows[s].copy()
        sample = _emit_sample(eng2, it, swapped)
        # report the stage-1 block-parameter draw alongside the stage-2 ones
        sample.theta = ModelParams(
            theta_bm=theta_b.theta_bm,
            theta_bu=theta_b.theta_bu,
            theta_cm=eng2.theta.theta_cm,
            theta_cu=eng2.theta.theta_cu,
            theta_cnb=eng2.theta.theta_cnb,
            alpha_pi=hyper.alpha_pi,
            beta_pi=hyper.beta_pi,
        )
        samples.append(sample)

    diag = dict(eng1.diag)
    diag.update(
        {
            "method": "cibrl",
            "backend": _backend_name(),
            "missing_comparisons": cube.missing_comparisons,
            "candidate_pairs": cube.candidate_pairs(),
            "runtime_s": time.perf_counter() - t0,
            "iterations": chain.iterations,
            "swapped_orientation": swapped,
            "stage2_updates": chain.sweeps,
        }
    )
    return RunResult(samples=samples, diagnostics=diag)


def run_method(
    name: str,
    f1: BlockedFile,
    f2: BlockedFile,
    schema: ComparisonSchema,
    hyper: Hyperparams | None = None,
    chain: ChainConfig | None = None,
    force_agreement: tuple[str, ...] = (),
    brl_sweeps: int = 1,
) -> RunResult:
    """Dispatch by method name; BRL defaults to one sweep per iteration."""
    if name == "mlbrl":
        return run_mlbrl(f1, f2, schema, hyper, chain, force_agreement)
    if name == "cibrl":
        return run_cibrl(f1, f2, schema, hyper, chain, force_agreement)
    if name == "brl":
        brl_chain = replace(chain, sweeps=brl_sweeps) if chain else ChainConfig(sweeps=brl_sweeps)
        return run_brl(f1, f2, schema, hyper, brl_chain, force_agreement)
    raise ConfigError(f"unknown method {name!r}")
