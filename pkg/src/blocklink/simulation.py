"""Synthetic two-file study: generation, error injection, and scoring.

Blocks carry a 4-level region, two Bernoulli indicators, and a Gaussian area
income; records carry a date of birth derived from a Gaussian age (year/month,
optionally day) and a Bernoulli gender. True block pairs and true links share
replicated values; everything else is drawn fresh from the same distributions.
Error injection perturbs file 1 only: region resampled with probability eps,
income jittered with Gaussian noise scaled so the agreement comparison flips
with probability eps, and the birth month of true-link records moved to a
different month with probability eps.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from .baselines import run_method
from .comparison import BlockedFile, ComparisonSchema, ComparisonSpec
from .engine import substream
from .exceptions import ConfigError
from .sampler import ChainConfig, PosteriorSample, RunResult

_DAYS_IN_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_REF_YEAR = 2015.0
INCOME_THRESHOLD = 500.0


@dataclass
class SimulationConfig:
    s_blocks: int = 30
    t_blocks: int = 40
    n1s: int = 20
    n2t: int = 30
    n_links: int = 15
    eps_region: float = 0.0
    eps_income: float = 0.0
    eps_dob: float = 0.0
    dob_day_included: bool = False

    def __post_init__(self):
        if self.s_blocks < 1 or self.t_blocks < self.s_blocks:
            raise ConfigError("need 1 <= s_blocks <= t_blocks")
        if self.n1s < 1 or self.n2t < 1:
            raise ConfigError("block sizes must be >= 1")
        if not 0 <= self.n_links <= min(self.n1s, self.n2t):
            raise ConfigError("n_links must be <= min(n1s, n2t)")
        for eps in (self.eps_region, self.eps_income, self.eps_dob):
            if not 0.0 <= eps < 1.0:
                raise ConfigError("error rates must lie in [0, 1)")


@dataclass
class GroundTruth:
    """True block pairing and true record links (indices, file-1 oriented)."""

    block_map: np.ndarray                    # (S,) s -> t
    links: list[list[tuple[int, int]]]       # per s: (i, j) within (s, block_map[s])

    def pair_set(self) -> set[tuple[int, int]]:
        return {(s, int(t)) for s, t in enumerate(self.block_map)}

    def link_set(self) -> set[tuple[int, int, int, int]]:
        out = set()
        for s, t in enumerate(self.block_map):
            for i, j in self.links[s]:
                out.add((s, int(t), i, j))
        return out

    def link_rows(self) -> set[tuple[int, int]]:
        return {(s, i) for s, pairs in enumerate(self.links) for i, _ in pairs}


@dataclass
class LinkageMetrics:
    tpr: float
    ppv: float
    f1: float
    acc: float | None
    degenerate_ppv: bool = False


def study_schema(day_included: bool = False) -> ComparisonSchema:
    """Comparison schema for the synthetic study variables."""
    return ComparisonSchema(
        block=[
            ComparisonSpec("region", "binary-exact"),
            ComparisonSpec("hospital_status", "binary-exact"),
            ComparisonSpec("trauma_level", "binary-exact"),
            ComparisonSpec("area_income", "numeric-absolute", threshold=INCOME_THRESHOLD),
        ],
        record=[
            ComparisonSpec("dob", "ordinal-multilevel", levels=4 if day_included else 3),
            ComparisonSpec("gender", "binary-exact"),
        ],
    )


def _dob_string(age: float, day_included: bool, rng: np.random.Generator) -> str:
    y = _REF_YEAR - age
    year = int(math.floor(y))
    month = int((y - year) * 12.0) + 1
    if not day_included:
        return f"{year:04d}-{month:02d}"
    day = int(rng.integers(1, _DAYS_IN_MONTH[month - 1] + 1))
    return f"{year:04d}-{month:02d}-{day:02d}"


def _draw_block_values(rng: np.random.Generator) -> tuple:
    region = int(rng.integers(1, 5))
    status = int(rng.random() < 0.8)
    trauma = int(rng.random() < 0.5)
    income = float(rng.normal(50_000.0, 10_000.0))
    return (region, status, trauma, income)


AGE_MEAN = 30.0
AGE_SD = 2.0  # age ~ N(30, variance 4)


def _draw_record_values(cfg: SimulationConfig, rng: np.random.Generator) -> tuple:
    age = float(rng.normal(AGE_MEAN, AGE_SD))
    dob = _dob_string(age, cfg.dob_day_included, rng)
    gender = int(rng.random() < 0.5)
    return (dob, gender)


def generate_dataset(
    cfg: SimulationConfig, rng: np.random.Generator
) -> tuple[BlockedFile, BlockedFile, GroundTruth]:
    """Generate the two files plus ground truth, before any error injection.

    True block pairs replicate all block values; true links replicate record
    values at a random position inside the partner block.
    """
    S, T = cfg.s_blocks, cfg.t_blocks
    block_map = rng.permutation(T)[:S].astype(np.int64)

    f1_blocks, f1_records = [], []
    links: list[list[tuple[int, int]]] = []
    t_values: dict[int, tuple] = {}
    t_records: dict[int, list] = {}
    for s in range(S):
        bvals = _draw_block_values(rng)
        f1_blocks.append(bvals)
        recs = [_draw_record_values(cfg, rng) for _ in range(cfg.n1s)]
        f1_records.append(recs)
        t = int(block_map[s])
        t_values[t] = bvals
        positions = rng.permutation(cfg.n2t)[: cfg.n_links]
        pair_links = []
        partner = [None] * cfg.n2t
        for i, j in enumerate(positions):
            partner[int(j)] = recs[i]
            pair_links.append((i, int(j)))
        t_records[t] = [
            rv if rv is not None else _draw_record_values(cfg, rng) for rv in partner
        ]
        links.append(pair_links)

    f2_blocks, f2_records = [], []
    for t in range(T):
        if t in t_values:
            f2_blocks.append(t_values[t])
            f2_records.append(t_records[t])
        else:
            f2_blocks.append(_draw_block_values(rng))
            f2_records.append([_draw_record_values(cfg, rng) for _ in range(cfg.n2t)])

    f1 = BlockedFile(
        file_id="f1",
        block_ids=[f"f1b{s:03d}" for s in range(S)],
        block_values=f1_blocks,
        record_ids=[[f"f1b{s:03d}r{i:03d}" for i in range(cfg.n1s)] for s in range(S)],
        record_values=f1_records,
    )
    f2 = BlockedFile(
        file_id="f2",
        block_ids=[f"f2b{t:03d}" for t in range(T)],
        block_values=f2_blocks,
        record_ids=[[f"f2b{t:03d}r{j:03d}" for j in range(cfg.n2t)] for t in range(T)],
        record_values=f2_records,
    )
    return f1, f2, GroundTruth(block_map=block_map, links=links)


def income_noise_sd(eps: float) -> float:
    """Noise scale that flips the income agreement with probability eps."""
    if not 0 <= eps < 1:
        raise ConfigError("eps must lie in [0, 1)")
    if eps == 0.0:
        return 0.0
    return INCOME_THRESHOLD / float(ndtri(1.0 - eps / 2.0))


def inject_errors(
    f1: BlockedFile,
    cfg: SimulationConfig,
    rng: np.random.Generator,
    truth: GroundTruth | None = None,
) -> BlockedFile:
    """Perturb file 1 per the configured error rates; the input is not mutated.

    Region is resampled (possibly to the same value) with probability
    eps_region per block; income gets Gaussian noise with sd
    threshold / ndtri(1 - eps/2); the birth month of true-link records moves
    to a uniformly different month with probability eps_dob.
    """
    if cfg.eps_dob > 0 and truth is None:
        raise ConfigError("eps_dob > 0 requires ground truth to locate true-link records")
    sd = income_noise_sd(cfg.eps_income)
    link_rows = truth.link_rows() if truth is not None else set()

    new_blocks = []
    new_records = []
    for s in range(f1.n_blocks):
        region, status, trauma, income = f1.block_values[s]
        if cfg.eps_region > 0 and rng.random() < cfg.eps_region:
            region = int(rng.integers(1, 5))
        if sd > 0.0:
            income = float(income + rng.normal(0.0, sd))
        new_blocks.append((region, status, trauma, income))
        recs = []
        for i, (dob, gender) in enumerate(f1.record_values[s]):
            if cfg.eps_dob > 0 and (s, i) in link_rows and rng.random() < cfg.eps_dob:
                parts = dob.split("-")
                month = int(parts[1])
                other = int(rng.integers(1, 12))
                if other >= month:
                    other += 1
                parts[1] = f"{other:02d}"
                dob = "-".join(parts)
            recs.append((dob, gender))
        new_records.append(recs)
    return BlockedFile(
        file_id=f1.file_id,
        block_ids=list(f1.block_ids),
        block_values=new_blocks,
        record_ids=[list(r) for r in f1.record_ids],
        record_values=new_records,
    )


def _metric_counts(
    truth_links: set,
    sample_links: set,
    truth_pairs: set,
    sample_pairs: set,
    n_true_pairs: int,
) -> LinkageMetrics:
    """TPR/PPV/F1/ACC from link and pair sets (id- or index-space)."""
    tp = len(truth_links & sample_links)
    tpr = tp / len(truth_links) if truth_links else 0.0
    degenerate = len(sample_links) == 0
    ppv = 0.0 if degenerate else tp / len(sample_links)
    f1 = 2 * tpr * ppv / (tpr + ppv) if (tpr + ppv) > 0 else 0.0
    acc = len(truth_pairs & sample_pairs) / n_true_pairs if sample_pairs else None
    return LinkageMetrics(tpr=tpr, ppv=ppv, f1=f1, acc=acc, degenerate_ppv=degenerate)


def evaluate_sample(sample: PosteriorSample, truth: GroundTruth) -> LinkageMetrics:
    """Exact-count linkage metrics of one posterior sample against the truth.

    Block accuracy is the fraction of true block pairs present in the sample;
    it is None for samples without block pairs (flat linkage). A sample with
    no declared links reports PPV 0 with the degenerate flag set.
    """
    return _metric_counts(
        truth.link_set(),
        sample.link_set(),
        truth.pair_set(),
        sample.pair_set(),
        len(truth.block_map),
    )


def summarize_run(result: RunResult, truth: GroundTruth) -> dict:
    """Average each metric over the run's post-burn-in samples."""
    per = [evaluate_sample(s, truth) for s in result.samples]
    out = {
        "tpr": float(np.mean([m.tpr for m in per])),
        "ppv": float(np.mean([m.ppv for m in per])),
        "f1": float(np.mean([m.f1 for m in per])),
    }
    accs = [m.acc for m in per if m.acc is not None]
    out["acc"] = float(np.mean(accs)) if accs else None
    out["mean_links"] = float(np.mean([len(s.links) for s in result.samples]))
    return out


def _study_replicate(args) -> dict:
    """One (cell, replicate): generate, inject, run every method, average."""
    (cell_idx, cell, rep, base_cfg, methods, chain, seed, day_included) = args
    cfg = replace(
        base_cfg,
        eps_region=cell[0],
        eps_income=cell[1],
        eps_dob=cell[2],
        dob_day_included=day_included,
    )
    gen_rng = substream(seed, 100, cell_idx, rep)
    f1, f2, truth = generate_dataset(cfg, gen_rng)
    noise_rng = substream(seed, 101, cell_idx, rep)
    f1_err = inject_errors(f1, cfg, noise_rng, truth)
    schema = study_schema(day_included)
    out = {"cell": cell, "replicate": rep, "methods": {}}
    for mi, method in enumerate(methods):
        chain_seed = int(
            np.random.SeedSequence((seed, 102, cell_idx, rep, mi)).generate_state(1)[0]
        )
        mchain = replace(chain, seed=chain_seed)
        result = run_method(method, f1_err, f2, schema, None, mchain)
        out["methods"][method] = summarize_run(result, truth)
    return out


@dataclass
class StudyResult:
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> list[dict]:
        """Per (cell, method): replicate means and Monte-Carlo sds of each metric."""
        cells: dict[tuple, dict[str, list[dict]]] = {}
        for row in self.rows:
            per_cell = cells.setdefault(tuple(row["cell"]), {})
            for method, metrics in row["methods"].items():
                per_cell.setdefault(method, []).append(metrics)
        out = []
        for cell in sorted(cells):
            for method in sorted(cells[cell]):
                reps = cells[cell][method]
                entry = {
                    "eps_region": cell[0],
                    "eps_income": cell[1],
                    "eps_dob": cell[2],
                    "method": method,
                    "replicates": len(reps),
                }
                for metric in ("tpr", "ppv", "f1", "acc"):
                    vals = [r[metric] for r in reps if r[metric] is not None]
                    if vals:
                        entry[metric] = float(np.mean(vals))
                        entry[metric + "_sd"] = (
                            float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                        )
                    else:
                        entry[metric] = None
                        entry[metric + "_sd"] = None
                out.append(entry)
        return out


def run_study(
    error_grid: list[tuple[float, float, float]],
    methods: tuple[str, ...] = ("mlbrl", "cibrl", "brl"),
    replicates: int = 10,
    base_cfg: SimulationConfig | None = None,
    chain: ChainConfig | None = None,
    seed: int = 0,
    threads: int = 1,
    day_included: bool = False,
) -> StudyResult:
    """Run the full generate -> inject -> link -> evaluate grid.

    Replicates run on independent derived seeds (optionally in parallel);
    the reduction is deterministic regardless of scheduling.
    """
    base_cfg = base_cfg or SimulationConfig()
    chain = chain or ChainConfig()
    tasks = [
        (ci, cell, rep, base_cfg, tuple(methods), chain, seed, day_included)
        for ci, cell in enumerate(error_grid)
        for rep in range(replicates)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_study_replicate, tasks))
    else:
        rows = [_study_replicate(t) for t in tasks]
    return StudyResult(rows=rows)
