"""Mixture likelihood, linkage prior, and conjugate parameter sampling.

The five mixture classes are: true block pairs (BM) and false block pairs (BU)
at the block level; links (CM) and non-links (CU) among record pairs inside
true block pairs; and all record pairs inside false block pairs (CNB). Each
class carries one categorical distribution over agreement levels per variable,
conditionally independent across variables given the latent structure.

All likelihood work is in log space. Per-variable level probabilities are
stored 0-based (index 0 = lowest agreement).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma

import numpy as np

from .comparison import ComparisonCube
from .exceptions import ContractViolation

THETA_CLAMP = 1e-12

CLASSES = ("bm", "bu", "cm", "cu", "cnb")


@dataclass
class Hyperparams:
    """Dirichlet concentrations per class and variable, plus the linkage prior.

    Binary variables use a Beta(alpha, beta) prior expressed as the
    concentration pair (beta, alpha) over (disagree, agree).
    """

    bm: list[np.ndarray]
    bu: list[np.ndarray]
    cm: list[np.ndarray]
    cu: list[np.ndarray]
    cnb: list[np.ndarray]
    alpha_pi: float = 1.0
    beta_pi: float = 1.0

    def __post_init__(self):
        for cls in CLASSES:
            for conc in getattr(self, cls):
                if np.any(np.asarray(conc) <= 0):
                    raise ContractViolation("hyperparameter concentrations must be > 0")
        if self.alpha_pi <= 0 or self.beta_pi <= 0:
            raise ContractViolation("alpha_pi and beta_pi must be > 0")

    @classmethod
    def uniform(cls, schema, alpha_pi: float = 1.0, beta_pi: float = 1.0) -> "Hyperparams":
        """Beta(1,1) / Dirichlet(1,...,1) priors for every variable."""
        block = [np.ones(sp.level_count) for sp in schema.block]
        record = [np.ones(sp.level_count) for sp in schema.record]
        return cls(
            bm=[c.copy() for c in block],
            bu=[c.copy() for c in block],
            cm=[c.copy() for c in record],
            cu=[c.copy() for c in record],
            cnb=[c.copy() for c in record],
            alpha_pi=alpha_pi,
            beta_pi=beta_pi,
        )


@dataclass
class ModelParams:
    """One draw of the five per-variable level-probability families."""

    theta_bm: list[np.ndarray]
    theta_bu: list[np.ndarray]
    theta_cm: list[np.ndarray]
    theta_cu: list[np.ndarray]
    theta_cnb: list[np.ndarray]
    alpha_pi: float = 1.0
    beta_pi: float = 1.0

    def validate(self) -> None:
        for cls in CLASSES:
            for vec in getattr(self, "theta_" + cls):
                if abs(float(np.sum(vec)) - 1.0) > 1e-12:
                    raise ContractViolation("probability vector does not sum to 1")
                if np.any(vec <= 0) or np.any(vec >= 1):
                    raise ContractViolation("probability components must lie in (0, 1)")

    def summary(self) -> dict:
        return {
            cls: [np.asarray(v).tolist() for v in getattr(self, "theta_" + cls)]
            for cls in CLASSES
        }


@dataclass
class BlockAssignment:
    """Injective map from every file-1 block to a distinct file-2 block."""

    s_to_t: np.ndarray

    def __post_init__(self):
        self.s_to_t = np.asarray(self.s_to_t, dtype=np.int64)

    def validate(self, t_blocks: int) -> None:
        s = self.s_to_t
        if np.any(s < 0) or np.any(s >= t_blocks):
            raise ContractViolation("block assignment out of range")
        if len(np.unique(s)) != len(s):
            raise ContractViolation("block assignment is not injective")

    @property
    def s_blocks(self) -> int:
        return len(self.s_to_t)

    def pairs(self) -> list[tuple[int, int]]:
        return [(s, int(t)) for s, t in enumerate(self.s_to_t)]


@dataclass
class LinkageState:
    """Partial one-to-one record matchings, one per linked block pair.

    rows[s][i] is the column (record index in the paired file-2 block) linked
    to record i of file-1 block s, or -1. Pairs not in the assignment are
    implicitly empty.
    """

    rows: dict[int, np.ndarray]

    def n_m(self, s: int) -> int:
        return int((self.rows[s] >= 0).sum())

    def links(self, assignment: BlockAssignment):
        for s, t in assignment.pairs():
            r = self.rows.get(s)
            if r is None:
                continue
            for i in np.flatnonzero(r >= 0):
                yield (s, t, int(i), int(r[i]))

    def validate(self, assignment: BlockAssignment, n1: np.ndarray, n2: np.ndarray) -> None:
        for s in self.rows:
            if not 0 <= s < assignment.s_blocks:
                raise ContractViolation(f"linkage rows for unknown block {s}")
        for s, t in assignment.pairs():
            r = self.rows.get(s)
            if r is None:
                raise ContractViolation(f"linked pair ({s},{t}) has no linkage rows")
            if len(r) != n1[s]:
                raise ContractViolation(f"pair ({s},{t}): row arity mismatch")
            active = r[r >= 0]
            if np.any(active >= n2[t]):
                raise ContractViolation(f"pair ({s},{t}): column out of range")
            if len(np.unique(active)) != len(active):
                raise ContractViolation(f"pair ({s},{t}): one-to-one violated")

    def copy(self) -> "LinkageState":
        return LinkageState({s: r.copy() for s, r in self.rows.items()})


def log_component_density(gamma, theta: list[np.ndarray]) -> float:
    """Log density of one agreement vector under per-variable level probabilities.

    ``gamma`` holds 0-based levels; a zero-probability component yields -inf.
    """
    gamma = np.asarray(gamma, dtype=np.int64)
    if len(gamma) != len(theta):
        raise ContractViolation(f"arity mismatch: {len(gamma)} levels vs {len(theta)} variables")
    total = 0.0
    for lev, vec in zip(gamma, theta):
        if not 0 <= lev < len(vec):
            raise ContractViolation(f"level {lev} out of range for {len(vec)}-level variable")
        p = float(vec[lev])
        if p <= 0.0:
            return float("-inf")
        total += np.log(p)
    return float(total)


def log_prior_linkage(n_m: int, n1: int, n2: int, alpha_pi: float, beta_pi: float) -> float:
    """Log prior mass of one specific one-to-one matching with ``n_m`` links.

    Beta-binomial over the link count, uniform over matchings given the count,
    in log-gamma form; summing over all one-to-one matchings gives 1.
    """
    if not 0 <= n_m <= min(n1, n2):
        raise ContractViolation(f"n_m={n_m} out of range for block sizes ({n1}, {n2})")
    if alpha_pi <= 0 or beta_pi <= 0:
        raise ContractViolation("alpha_pi and beta_pi must be > 0")
    lo, hi = min(n1, n2), max(n1, n2)
    return (
        lgamma(hi - n_m + 1)
        - lgamma(hi + 1)
        + lgamma(alpha_pi + beta_pi)
        - lgamma(alpha_pi)
        - lgamma(beta_pi)
        + lgamma(n_m + alpha_pi)
        + lgamma(lo - n_m + beta_pi)
        - lgamma(lo + alpha_pi + beta_pi)
    )


def _log_tables(theta: list[np.ndarray]) -> list[np.ndarray]:
    return [np.log(v) for v in theta]


def pattern_scores(cube: ComparisonCube, theta: list[np.ndarray]) -> np.ndarray:
    """Per-pattern log density: sum over record variables of log theta[k][level]."""
    logs = _log_tables(theta)
    out = np.zeros(cube.n_patterns)
    for k, lg in enumerate(logs):
        out += lg[cube.pattern_levels[:, k]]
    return out


def block_scores(cube: ComparisonCube, theta: list[np.ndarray]) -> np.ndarray:
    """(S, T) log density of each block pair's agreement vector."""
    logs = _log_tables(theta)
    out = np.zeros((cube.s_blocks, cube.t_blocks))
    for p, lg in enumerate(logs):
        out += lg[cube.block_levels[:, :, p]]
    return out


def _check_consistent(b: BlockAssignment, c: LinkageState, cube: ComparisonCube) -> None:
    b.validate(cube.t_blocks)
    c.validate(b, cube.n1, cube.n2)
    extra = set(c.rows) - set(range(b.s_blocks))
    if extra:
        raise ContractViolation(f"linkage present off the assignment: {sorted(extra)}")


def log_joint_likelihood(
    b: BlockAssignment, c: LinkageState, theta: ModelParams, cube: ComparisonCube
) -> float:
    """From-scratch joint log likelihood of the comparison data given (B, C, theta).

    Linked pairs contribute their block vector under BM plus record pairs under
    CM (links) / CU (non-links); every other pair contributes its block vector
    under BU plus all its record pairs under CNB. Masked-out record pairs are
    outside the model.
    """
    _check_consistent(b, c, cube)
    s_bm = block_scores(cube, theta.theta_bm)
    s_bu = block_scores(cube, theta.theta_bu)
    sc_m = pattern_scores(cube, theta.theta_cm)
    sc_u = pattern_scores(cube, theta.theta_cu)
    sc_nb = pattern_scores(cube, theta.theta_cnb)
    all_u = cube.pair_hist @ sc_u
    all_nb = cube.pair_hist @ sc_nb
    total = float(s_bu.sum() + all_nb.sum())
    ratio = sc_m - sc_u
    for s, t in b.pairs():
        total += float(s_bm[s, t] - s_bu[s, t] + all_u[s, t] - all_nb[s, t])
        r = c.rows[s]
        li = np.flatnonzero(r >= 0)
        if li.size:
            pats = cube.patterns[s][t][li, r[li]]
            total += float(ratio[pats].sum())
    return total


def tally_class_counts(
    b: BlockAssignment, c: LinkageState, cube: ComparisonCube
) -> dict[str, list[np.ndarray]]:
    """Agreement-level counts in each mixture class, per variable."""
    _check_consistent(b, c, cube)
    S, T = cube.s_blocks, cube.t_blocks
    P = len(cube.schema.block)
    counts_bm = [np.zeros(sp.level_count, dtype=np.int64) for sp in cube.schema.block]
    counts_bu = [np.zeros(sp.level_count, dtype=np.int64) for sp in cube.schema.block]
    for p in range(P):
        lev = cube.block_levels[:, :, p]
        total = np.bincount(lev.ravel(), minlength=counts_bm[p].size)
        linked = np.bincount(
            lev[np.arange(S), b.s_to_t], minlength=counts_bm[p].size
        )
        counts_bm[p] = linked
        counts_bu[p] = total - linked

    G = cube.n_patterns
    hist_total = cube.pair_hist.sum(axis=(0, 1))
    hist_linked = np.zeros(G, dtype=np.int64)
    hist_cm = np.zeros(G, dtype=np.int64)
    for s, t in b.pairs():
        hist_linked += cube.pair_hist[s, t]
        r = c.rows[s]
        li = np.flatnonzero(r >= 0)
        if li.size:
            pats = cube.patterns[s][t][li, r[li]]
            hist_cm += np.bincount(pats, minlength=G)
    hist_cu = hist_linked - hist_cm
    hist_cnb = hist_total - hist_linked

    def from_hist(hist):
        out = []
        for k, sp in enumerate(cube.schema.record):
            cnt = np.zeros(sp.level_count, dtype=np.int64)
            np.add.at(cnt, cube.pattern_levels[:, k], hist)
            out.append(cnt)
        return out

    return {
        "bm": counts_bm,
        "bu": counts_bu,
        "cm": from_hist(hist_cm),
        "cu": from_hist(hist_cu),
        "cnb": from_hist(hist_cnb),
    }


def _draw_simplex(conc: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw via gamma variates, clamped away from the boundary."""
    g = rng.gamma(np.asarray(conc, dtype=np.float64))
    total = g.sum()
    if total <= 0.0:
        g = np.full_like(g, 1.0 / len(g))
        total = 1.0
    v = g / total
    v = np.clip(v, THETA_CLAMP, 1.0 - THETA_CLAMP)
    return v / v.sum()


def sample_parameters(
    b: BlockAssignment,
    c: LinkageState,
    cube: ComparisonCube,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> ModelParams:
    """Conjugate posterior draw of all five theta families given (B, C).

    Classes with no observations reduce to prior draws.
    """
    counts = tally_class_counts(b, c, cube)
    draws = {}
    for cls in CLASSES:
        conc = getattr(hyper, cls)
        draws[cls] = [
            _draw_simplex(np.asarray(a, dtype=np.float64) + cnt, rng)
            for a, cnt in zip(conc, counts[cls])
        ]
    return ModelParams(
        theta_bm=draws["bm"],
        theta_bu=draws["bu"],
        theta_cm=draws["cm"],
        theta_cu=draws["cu"],
        theta_cnb=draws["cnb"],
        alpha_pi=hyper.alpha_pi,
        beta_pi=hyper.beta_pi,
    )
