"""The joint block-and-record linkage MCMC sampler and its public kernels.

Each iteration draws the mixture parameters from their conjugate posteriors,
Gibbs-sweeps the record matching inside every linked block pair, and proposes
one Metropolis-Hastings block move per file-1 block (relink to a free file-2
block, or swap partners with another pair). Proposed matchings for newly
linked pairs come from a pre-built pool (EM-weighted optimal assignments),
whose slots persist the displaced matching once adaptive updates are active.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_assignment
from .comparison import BlockedFile, ComparisonCube, ComparisonSchema, build_comparison_cube
from .em import MixtureFit, em_mixture
from .engine import LinkageEngine, substream
from .exceptions import ConfigError, ContractViolation
from .model import (
    BlockAssignment,
    Hyperparams,
    LinkageState,
    ModelParams,
    pattern_scores,
)

POOL_UPDATE_MODES = ("always", "after_burn_in", "never")


@dataclass
class ChainConfig:
    """MCMC run settings; all randomness derives from ``seed``."""

    iterations: int = 2000
    burn_in: int = 1000
    sweeps: int = 25
    thin: int = 1
    seed: int = 0
    pool_update: str = "after_burn_in"
    brl_pair_cap: int = 50_000_000

    def __post_init__(self):
        if self.iterations <= 0 or not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need 0 <= burn_in < iterations")
        if self.sweeps < 1:
            raise ConfigError("sweeps must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.pool_update not in POOL_UPDATE_MODES:
            raise ConfigError(f"pool_update must be one of {POOL_UPDATE_MODES}")


@dataclass
class ProposalPool:
    """Pre-specified one-to-one matching per block pair, used by block moves."""

    rows: dict[tuple[int, int], np.ndarray]
    adaptive: bool = True
    em_fit: MixtureFit | None = None

    def n_m(self, s: int, t: int) -> int:
        r = self.rows.get((s, t))
        return 0 if r is None else int((r >= 0).sum())

    def validate(self, n1, n2) -> None:
        for (s, t), r in self.rows.items():
            if len(r) != n1[s]:
                raise ContractViolation(f"pool entry ({s},{t}): wrong row count")
            active = r[r >= 0]
            if active.size and (active.max() >= n2[t] or len(np.unique(active)) != len(active)):
                raise ContractViolation(f"pool entry ({s},{t}): not one-to-one")


@dataclass
class PosteriorSample:
    """One post-burn-in draw of the latent linkage structure."""

    iteration: int
    block_pairs: list[tuple[int, int]]
    links: list[tuple[int, int, int, int]]
    n_m: dict[tuple[int, int], int]
    theta: ModelParams

    def link_set(self) -> set[tuple[int, int, int, int]]:
        return set(self.links)

    def pair_set(self) -> set[tuple[int, int]]:
        return set(self.block_pairs)


@dataclass
class RunResult:
    samples: list[PosteriorSample]
    diagnostics: dict = field(default_factory=dict)


def record_full_conditional(
    cube: ComparisonCube,
    i: int,
    rows_minus_i: np.ndarray,
    pair: tuple[int, int],
    theta: ModelParams,
    alpha_pi: float,
    beta_pi: float,
) -> np.ndarray:
    """Full-conditional link probabilities for record i of a linked pair.

    ``rows_minus_i`` is the pair's row->column matching with row i ignored.
    Returns an (n2t + 1,) vector: entry j is the probability of linking i to
    column j (zero for occupied or masked columns), the last entry is no-link.
    Candidate weights are the match/non-match likelihood ratio of the pair's
    agreement vector; the no-link weight is the closed-form ratio of linkage
    priors, (max(n1,n2) - n)(min(n1,n2) - n + beta - 1)/(n + alpha) at
    n = links excluding i.
    """
    s, t = pair
    n1, n2 = int(cube.n1[s]), int(cube.n2[t])
    rows = np.asarray(rows_minus_i, dtype=np.int64).copy()
    rows[i] = -1
    nmi = int((rows >= 0).sum())
    taken = np.zeros(n2, dtype=bool)
    taken[rows[rows >= 0]] = True
    ratio = pattern_scores(cube, theta.theta_cm) - pattern_scores(cube, theta.theta_cu)
    logw = ratio[cube.patterns[s][t][i]]
    free = ~taken
    m = cube.mask_for(s, t)
    if m is not None:
        free &= m[i]
    out = np.zeros(n2 + 1)
    if free.any():
        lo, hi = min(n1, n2), max(n1, n2)
        nolink = (hi - nmi) * (lo - nmi + beta_pi - 1.0) / (nmi + alpha_pi)
        top = max(float(logw[free].max()), 0.0)
        w = np.zeros(n2)
        w[free] = np.exp(logw[free] - top)
        wn = nolink * np.exp(-top)
        total = w.sum() + wn
        if total > 0:
            out[:n2] = w / total
            out[n2] = wn / total
            return out
    out[n2] = 1.0
    return out


def sweep_record_links(
    cube: ComparisonCube,
    pair: tuple[int, int],
    c: LinkageState,
    theta: ModelParams,
    priors: tuple[float, float],
    rng: np.random.Generator,
    sweeps: int = 1,
) -> LinkageState:
    """Gibbs-update the record matching of one linked block pair.

    Returns a new LinkageState with the pair's rows replaced; the one-to-one
    constraint holds after every single-record update.
    """
    s, t = pair
    alpha_pi, beta_pi = priors
    theta = ModelParams(
        theta_bm=theta.theta_bm,
        theta_bu=theta.theta_bu,
        theta_cm=theta.theta_cm,
        theta_cu=theta.theta_cu,
        theta_cnb=theta.theta_cnb,
        alpha_pi=alpha_pi,
        beta_pi=beta_pi,
    )
    eng = _single_pair_engine(cube, s, t, theta)
    rows = c.rows[s].astype(np.int64).copy()
    eng.rows[s] = rows
    eng.cols[s] = LinkageEngine._cols_from_rows(rows, int(cube.n2[t]))
    eng.n_m[s] = int((rows >= 0).sum())
    eng.link_score[s] = eng._links_score(s, t, rows)
    eng.sweep_pair(s, sweeps, rng)
    out = c.copy()
    out.rows[s] = eng.rows[s]
    return out


def _single_pair_engine(cube: ComparisonCube, s: int, t: int, theta: ModelParams) -> LinkageEngine:
    eng = LinkageEngine(cube, _hyper_like(cube, theta), seed=0)
    eng.assignment = np.full(cube.s_blocks, -1, dtype=np.int64)
    eng.assignment[s] = t
    # Other blocks stay unlinked; only pair (s, t) is touched.
    eng.t_owner = np.full(cube.t_blocks, -1, dtype=np.int64)
    eng.t_owner[t] = s
    eng.theta = theta
    eng._ratio = pattern_scores(cube, theta.theta_cm) - pattern_scores(cube, theta.theta_cu)
    eng._pair_tables = {}
    return eng


def _hyper_like(cube: ComparisonCube, theta: ModelParams) -> Hyperparams:
    return Hyperparams.uniform(cube.schema, alpha_pi=theta.alpha_pi, beta_pi=theta.beta_pi)


def mh_block_move(
    b: BlockAssignment,
    c: LinkageState,
    pool: ProposalPool,
    theta: ModelParams,
    priors: tuple[float, float],
    cube: ComparisonCube,
    rng: np.random.Generator,
    s: int | None = None,
    stash_pool: bool = True,
) -> tuple[BlockAssignment, LinkageState, bool, int]:
    """One Metropolis-Hastings block move; returns (b', c', accepted, move_type).

    The proposed partner is uniform over the T-1 file-2 blocks other than s's
    current one; its status dictates the move type (1 = relink to a free
    block, 2 = swap with its owner). Acceptance is the linkage-prior ratio
    times the joint likelihood ratio of the affected pairs.
    """
    alpha_pi, beta_pi = priors
    theta = ModelParams(
        theta_bm=theta.theta_bm,
        theta_bu=theta.theta_bu,
        theta_cm=theta.theta_cm,
        theta_cu=theta.theta_cu,
        theta_cnb=theta.theta_cnb,
        alpha_pi=alpha_pi,
        beta_pi=beta_pi,
    )
    eng = LinkageEngine(cube, _hyper_like(cube, theta), seed=0, pool_rows=pool.rows)
    eng.load_state(b, c)
    eng.set_theta(theta)
    if s is None:
        s = int(rng.integers(cube.s_blocks))
    accepted, move_type = eng.propose_move(s, rng, stash_pool=stash_pool and pool.adaptive)
    b2, c2 = eng.snapshot()
    return b2, c2, accepted, move_type


def build_proposal_pool(
    cube: ComparisonCube,
    em_tol: float = 1e-8,
    em_max_iter: int = 200,
) -> ProposalPool:
    """EM-weighted optimal matchings for every block pair.

    Fits the two-class mixture to all candidate record pairs (pattern counts
    aggregated across every block pair), scores each pair by its log m/u
    ratio, solves the linear-sum assignment per block pair, and drops assigned
    pairs with negative log-odds so implausible blocks get sparse proposals.
    """
    counts = cube.pair_hist.sum(axis=(0, 1)).astype(np.float64)
    seen = counts > 0
    if not seen.any():
        rows = {
            (s, t): np.full(int(cube.n1[s]), -1, dtype=np.int64)
            for s in range(cube.s_blocks)
            for t in range(cube.t_blocks)
        }
        return ProposalPool(rows=rows, adaptive=True, em_fit=None)
    fit = em_mixture(
        cube.pattern_levels[seen],
        level_counts=[sp.level_count for sp in cube.schema.record],
        tol=em_tol,
        max_iter=em_max_iter,
        weights=counts[seen],
    )
    weights_by_pattern = np.full(cube.n_patterns, -1e30)
    weights_by_pattern[seen] = fit.pair_weights(cube.pattern_levels[seen])
    rows: dict[tuple[int, int], np.ndarray] = {}
    for s in range(cube.s_blocks):
        for t in range(cube.t_blocks):
            wmat = weights_by_pattern[cube.patterns[s][t]]
            m = cube.mask_for(s, t)
            if m is not None:
                wmat = np.where(m, wmat, -1e30)
            assign = solve_assignment(wmat)
            picked = assign >= 0
            keep = np.zeros_like(picked)
            keep[picked] = wmat[np.flatnonzero(picked), assign[picked]] > 0
            assign[~keep] = -1
            rows[(s, t)] = assign
    pool = ProposalPool(rows=rows, adaptive=True, em_fit=fit)
    pool.validate(cube.n1, cube.n2)
    return pool


def _emit_sample(
    eng: LinkageEngine, iteration: int, swapped: bool
) -> PosteriorSample:
    pairs = []
    links = []
    n_m = {}
    for s in range(eng.S):
        t = int(eng.assignment[s])
        key = (t, s) if swapped else (s, t)
        pairs.append(key)
        n_m[key] = eng.n_m.get(s, 0)
        rows = eng.rows.get(s)
        if rows is None:
            continue
        for i in np.flatnonzero(rows >= 0):
            j = int(rows[i])
            links.append((t, s, j, int(i)) if swapped else (s, t, int(i), j))
    return PosteriorSample(
        iteration=iteration,
        block_pairs=pairs,
        links=links,
        n_m=n_m,
        theta=eng.theta,
    )


def run_mlbrl(
    f1: BlockedFile,
    f2: BlockedFile,
    schema: ComparisonSchema,
    hyper: Hyperparams | None = None,
    chain: ChainConfig | None = None,
    force_agreement: tuple[str, ...] = (),
    frozen_theta: ModelParams | None = None,
    pool: ProposalPool | None = None,
) -> RunResult:
    """Run the joint block-and-record chain; emits post-burn-in samples.

    If file 1 has more blocks than file 2 the roles are swapped internally and
    re-inverted on emission, so emitted indices always refer to the caller's
    file order. ``frozen_theta`` skips the parameter-draw step (used by the
    exact-posterior validation suite).
    """
    chain = chain or ChainConfig()
    swapped = f1.n_blocks > f2.n_blocks
    a, bfile = (f2, f1) if swapped else (f1, f2)
    cube = build_comparison_cube(a, bfile, schema, force_agreement)
    if hyper is None:
        hyper = Hyperparams.uniform(cube.schema)
    elif len(hyper.bm) != len(cube.schema.block) or len(hyper.cm) != len(cube.schema.record):
        raise ConfigError("hyperparameter arity does not match the modeled schema")
    if pool is None:
        pool = build_proposal_pool(cube)
    else:
        pool.validate(cube.n1, cube.n2)
    return _run_joint_chain(cube, hyper, chain, pool, frozen_theta, swapped)


def _run_joint_chain(
    cube: ComparisonCube,
    hyper: Hyperparams,
    chain: ChainConfig,
    pool: ProposalPool,
    frozen_theta: ModelParams | None,
    swapped: bool,
) -> RunResult:
    t0 = time.perf_counter()
    eng = LinkageEngine(cube, hyper, seed=chain.seed, pool_rows=pool.rows)
    eng.init_random(substream(chain.seed, 0))
    pool_mode = chain.pool_update if pool.adaptive else "never"
    samples: list[PosteriorSample] = []
    trace: list[tuple[int, float, int]] = []
    for it in range(chain.iterations):
        if frozen_theta is not None:
            eng.set_theta(frozen_theta)
        else:
            eng.sample_theta(it)
        sweep_rng = substream(chain.seed, 2, it)
        uniforms = sweep_rng.random(chain.sweeps * int(cube.n1.sum()))
        pos = 0
        for s in range(eng.S):
            take = chain.sweeps * int(cube.n1[s])
            eng.sweep_pair(s, chain.sweeps, uniforms[pos : pos + take])
            pos += take
        if eng.T > 1:
            stash = pool_mode == "always" or (pool_mode == "after_burn_in" and it >= chain.burn_in)
            move_rng = substream(chain.seed, 3, it)
            for s in range(eng.S):
                eng.propose_move(s, move_rng, stash_pool=stash)
        if it >= chain.burn_in and (it - chain.burn_in) % chain.thin == 0:
            samples.append(_emit_sample(eng, it, swapped))
            trace.append((it, eng.loglik, int(sum(eng.n_m.values()))))
    diag = dict(eng.diag)
    diag.update(
        {
            "method": "mlbrl",
            "backend": _backend_name(),
            "pool_update": pool_mode,
            "missing_comparisons": cube.missing_comparisons,
            "candidate_pairs": cube.candidate_pairs(),
            "runtime_s": time.perf_counter() - t0,
            "iterations": chain.iterations,
            "swapped_orientation": swapped,
            "final_loglik": eng.loglik,
            "trace": trace,
        }
    )
    return RunResult(samples=samples, diagnostics=diag)


def _backend_name() -> str:
    from ._backend import BACKEND

    return BACKEND
