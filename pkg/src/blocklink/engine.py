"""Shared MCMC core for the joint, two-stage, and flat samplers.

Holds the mutable chain state (block assignment, per-pair record matchings,
proposal-pool slots) and implements the three update steps: conjugate theta
draws, record-link Gibbs sweeps (via the compiled or fallback kernel), and the
two Metropolis-Hastings block moves. All randomness flows through per-step
substreams derived from the master seed, so scheduling cannot change results.
"""

from __future__ import annotations

import numpy as np

from ._backend import run_sweeps
from .assignment import solve_assignment
from .comparison import ComparisonCube
from .exceptions import ConfigError, ContractViolation
from .model import (
    BlockAssignment,
    CLASSES,
    Hyperparams,
    LinkageState,
    ModelParams,
    _draw_simplex,
    block_scores,
    log_joint_likelihood,
    log_prior_linkage,
    pattern_scores,
)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for a (seed, *key) tuple; scheduling-independent."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


class LinkageEngine:
    """Chain state plus the likelihood tables of the current theta draw."""

    def __init__(
        self,
        cube: ComparisonCube,
        hyper: Hyperparams,
        seed: int = 0,
        pool_rows: dict | None = None,
        track_links: bool = True,
    ):
        self.cube = cube
        self.hyper = hyper
        self.seed = int(seed)
        self.track_links = track_links
        self.S = cube.s_blocks
        self.T = cube.t_blocks
        self.n1 = cube.n1
        self.n2 = cube.n2

        # Pool slots: one persistent matching per (s, t); unlisted pairs start empty.
        self.pool_rows: dict[tuple[int, int], np.ndarray] = {}
        self.pool_nm: dict[tuple[int, int], int] = {}
        if pool_rows:
            for (s, t), rows in pool_rows.items():
                rows = np.asarray(rows, dtype=np.int64).copy()
                self.pool_rows[(s, t)] = rows
                self.pool_nm[(s, t)] = int((rows >= 0).sum())

        self._ones_masks: dict[tuple[int, int], np.ndarray] = {}
        self.assignment = np.full(self.S, -1, dtype=np.int64)
        self.t_owner = np.full(self.T, -1, dtype=np.int64)
        self.rows: dict[int, np.ndarray] = {}
        self.cols: dict[int, np.ndarray] = {}
        self.n_m: dict[int, int] = {}
        self.link_score: dict[int, float] = {}
        self.theta: ModelParams | None = None
        self.loglik = 0.0
        self.diag = {
            "type1_proposed": 0,
            "type1_accepted": 0,
            "type2_proposed": 0,
            "type2_accepted": 0,
            "masked_rejects": 0,
            "nonfinite_ratios": 0,
        }
        # Per-theta tables, filled by set_theta.
        self._s_bm = self._s_bu = None
        self._all_u = self._all_nb = None
        self._ratio = None
        self._pair_tables: dict[int, tuple] = {}

    # ---------------------------------------------------------------- state

    def init_random(self, rng: np.random.Generator) -> None:
        """Random complete injective assignment (mask-feasible), empty linkage."""
        if self.cube.block_mask is None:
            order = rng.permutation(self.T)[: self.S]
        else:
            noise = rng.random((self.S, self.T))
            noise[~self.cube.block_mask] = -1e9
            order = solve_assignment(noise)
            picked = noise[np.arange(self.S), order]
            if np.any(order < 0) or np.any(picked <= -1e8):
                raise ConfigError("block mask admits no complete one-to-one assignment")
        self.assignment = np.asarray(order, dtype=np.int64)
        self.t_owner = np.full(self.T, -1, dtype=np.int64)
        for s, t in enumerate(self.assignment):
            self.t_owner[t] = s
        if self.track_links:
            for s in range(self.S):
                self._install_pair(s, int(self.assignment[s]), fresh_empty=True)

    def load_state(self, b: BlockAssignment, c: LinkageState | None) -> None:
        b.validate(self.T)
        if len(b.s_to_t) != self.S:
            raise ContractViolation("assignment size mismatch")
        self.assignment = b.s_to_t.astype(np.int64).copy()
        self.t_owner = np.full(self.T, -1, dtype=np.int64)
        for s, t in enumerate(self.assignment):
            self.t_owner[t] = s
        if self.track_links:
            if c is None:
                raise ContractViolation("record linkage state required")
            c.validate(b, self.n1, self.n2)
            for s in range(self.S):
                t = int(self.assignment[s])
                rows = c.rows[s].astype(np.int64).copy()
                self.rows[s] = rows
                self.cols[s] = self._cols_from_rows(rows, int(self.n2[t]))
                self.n_m[s] = int((rows >= 0).sum())

    def snapshot(self) -> tuple[BlockAssignment, LinkageState]:
        b = BlockAssignment(self.assignment.copy())
        c = LinkageState({s: r.copy() for s, r in self.rows.items()})
        return b, c

    @staticmethod
    def _cols_from_rows(rows: np.ndarray, n2t: int) -> np.ndarray:
        cols = np.full(n2t, -1, dtype=np.int64)
        li = np.flatnonzero(rows >= 0)
        cols[rows[li]] = li
        return cols

    def _pool_entry(self, s: int, t: int) -> tuple[np.ndarray, int]:
        rows = self.pool_rows.get((s, t))
        if rows is None:
            rows = np.full(int(self.n1[s]), -1, dtype=np.int64)
            self.pool_rows[(s, t)] = rows
            self.pool_nm[(s, t)] = 0
        return rows, self.pool_nm[(s, t)]

    def _install_pair(self, s: int, t: int, fresh_empty: bool = False) -> None:
        """Make (s, t) the linked pair for s, taking its matching from the pool."""
        if fresh_empty:
            rows = np.full(int(self.n1[s]), -1, dtype=np.int64)
        else:
            rows = self.pool_rows[(s, t)].copy()
        self.rows[s] = rows
        self.cols[s] = self._cols_from_rows(rows, int(self.n2[t]))
        self.n_m[s] = int((rows >= 0).sum())

    # ---------------------------------------------------------------- theta

    def tally_fast(self, record_classes_only: bool = False) -> dict:
        """Class-count tallies straight off the engine state (no copies).

        Mirrors model.tally_class_counts; an equivalence test keeps the two in
        lock step.
        """
        cube = self.cube
        counts: dict[str, list[np.ndarray]] = {}
        if not record_classes_only:
            counts["bm"], counts["bu"] = [], []
            for p, sp in enumerate(cube.schema.block):
                lev = cube.block_levels[:, :, p]
                total = np.bincount(lev.ravel(), minlength=sp.level_count)
                linked = np.bincount(
                    lev[np.arange(self.S), self.assignment], minlength=sp.level_count
                )
                counts["bm"].append(linked)
                counts["bu"].append(total - linked)
        G = cube.n_patterns
        hist_total = cube.pair_hist.sum(axis=(0, 1))
        hist_linked = np.zeros(G, dtype=np.int64)
        hist_cm = np.zeros(G, dtype=np.int64)
        for s in range(self.S):
            t = int(self.assignment[s])
            hist_linked += cube.pair_hist[s, t]
            rows = self.rows.get(s)
            if rows is None:
                continue
            li = np.flatnonzero(rows >= 0)
            if li.size:
                pats = cube.patterns[s][t][li, rows[li]]
                hist_cm += np.bincount(pats, minlength=G)

        def from_hist(hist):
            out = []
            for k, sp in enumerate(cube.schema.record):
                cnt = np.zeros(sp.level_count, dtype=np.int64)
                np.add.at(cnt, cube.pattern_levels[:, k], hist)
                out.append(cnt)
            return out

        counts["cm"] = from_hist(hist_cm)
        counts["cu"] = from_hist(hist_linked - hist_cm)
        counts["cnb"] = from_hist(hist_total - hist_linked)
        return counts

    def sample_theta(self, iteration: int, classes: tuple[str, ...] = CLASSES) -> None:
        """Conjugate draw of the selected theta families, per-class substreams."""
        counts = self.tally_fast(record_classes_only=("bm" not in classes and "bu" not in classes))
        prev = self.theta
        draws = {}
        for cls in CLASSES:
            if cls in classes:
                rng = substream(self.seed, 1, iteration, CLASSES.index(cls))
                conc = getattr(self.hyper, cls)
                draws[cls] = [
                    _draw_simplex(np.asarray(a, dtype=np.float64) + cnt, rng)
                    for a, cnt in zip(conc, counts[cls])
                ]
            elif prev is not None:
                draws[cls] = getattr(prev, "theta_" + cls)
            else:
                draws[cls] = [
                    np.asarray(a, dtype=np.float64) / np.sum(a) for a in getattr(self.hyper, cls)
                ]
        self.set_theta(
            ModelParams(
                theta_bm=draws["bm"],
                theta_bu=draws["bu"],
                theta_cm=draws["cm"],
                theta_cu=draws["cu"],
                theta_cnb=draws["cnb"],
                alpha_pi=self.hyper.alpha_pi,
                beta_pi=self.hyper.beta_pi,
            )
        )

    def set_theta(self, theta: ModelParams) -> None:
        """Install a theta draw: rebuild likelihood tables and per-pair kernels."""
        prev = self.theta
        self.theta = theta
        cube = self.cube
        same_block = (
            prev is not None
            and self._s_bm is not None
            and prev.theta_bm is theta.theta_bm
            and prev.theta_bu is theta.theta_bu
        )
        if not same_block:
            self._s_bm = block_scores(cube, theta.theta_bm)
            self._s_bu = block_scores(cube, theta.theta_bu)
        sc_m = pattern_scores(cube, theta.theta_cm)
        sc_u = pattern_scores(cube, theta.theta_cu)
        sc_nb = pattern_scores(cube, theta.theta_cnb)
        self._all_u = cube.pair_hist @ sc_u
        self._all_nb = cube.pair_hist @ sc_nb
        self._ratio = sc_m - sc_u
        self._pair_tables = {}
        # Engines without record links track the block-terms-only objective.
        base = float(self._s_bu.sum())
        if self.track_links:
            base += float(self._all_nb.sum())
        for s in range(self.S):
            t = int(self.assignment[s])
            base += float(self._s_bm[s, t] - self._s_bu[s, t])
            if self.track_links:
                base += float(self._all_u[s, t] - self._all_nb[s, t])
                self.link_score[s] = self._links_score(s, t, self.rows[s])
                base += self.link_score[s]
        self.loglik = base

    def _links_score(self, s: int, t: int, rows: np.ndarray) -> float:
        li = np.flatnonzero(rows >= 0)
        if not li.size:
            return 0.0
        return float(self._ratio[self.cube.patterns[s][t][li, rows[li]]].sum())

    def _mask_u8(self, s: int, t: int) -> np.ndarray:
        m = self.cube.mask_for(s, t)
        if m is not None:
            return np.ascontiguousarray(m, dtype=np.uint8)
        key = (int(self.n1[s]), int(self.n2[t]))
        ones = self._ones_masks.get(key)
        if ones is None:
            ones = np.ones(key, dtype=np.uint8)
            self._ones_masks[key] = ones
        return ones

    def pair_tables(self, s: int) -> tuple:
        """(W, logR, mask, nolink_scale) for s's current pair under current theta."""
        t = int(self.assignment[s])
        cached = self._pair_tables.get(s)
        if cached is not None and cached[0] == t:
            return cached[1]
        logR = np.ascontiguousarray(self._ratio[self.cube.patterns[s][t]])
        mask = self._mask_u8(s, t)
        m = self.cube.mask_for(s, t)
        if m is None:
            wmax = float(logR.max())
        else:
            allowed = logR[m]
            wmax = float(allowed.max()) if allowed.size else 0.0
        wmax = max(wmax, 0.0)
        W = np.exp(logR - wmax)
        if m is not None:
            W = W * m
        nolink_scale = float(np.exp(-wmax))
        tables = (W, logR, mask, nolink_scale)
        self._pair_tables[s] = (t, tables)
        return tables

    # ---------------------------------------------------------------- sweeps

    def sweep_pair(self, s: int, sweeps: int, rng_or_uniforms) -> None:
        """Run ``sweeps`` full Gibbs passes over the rows of s's linked pair.

        Accepts either a Generator (draws its own uniforms) or a pre-drawn
        uniform array of length sweeps * n1s, so callers can batch draws for
        all pairs of an iteration from one substream.
        """
        W, logR, mask, nolink_scale = self.pair_tables(s)
        if isinstance(rng_or_uniforms, np.random.Generator):
            uniforms = rng_or_uniforms.random(sweeps * int(self.n1[s]))
        else:
            uniforms = rng_or_uniforms
        n_new, delta = run_sweeps(
            W,
            logR,
            mask,
            self.rows[s],
            self.cols[s],
            self.n_m[s],
            self.theta.alpha_pi,
            self.theta.beta_pi,
            nolink_scale,
            uniforms,
        )
        self.n_m[s] = int(n_new)
        self.link_score[s] += float(delta)
        self.loglik += float(delta)

    # ----------------------------------------------------------------- moves

    def _pool_score(self, s: int, t: int) -> tuple[float, int, np.ndarray]:
        rows, nm = self._pool_entry(s, t)
        score = self._links_score(s, t, rows) if self.track_links else 0.0
        return score, nm, rows

    def _logp8(self, n_m: int, s: int, t: int) -> float:
        return log_prior_linkage(
            n_m, int(self.n1[s]), int(self.n2[t]), self.theta.alpha_pi, self.theta.beta_pi
        )

    def move_log_ratio(self, s: int, r: int, block_only: bool = False) -> tuple[float, int, dict]:
        """Log acceptance ratio for relinking block s to file-2 block r.

        Move type 1 (r free): the linkage-prior ratio of the pool matching of
        (s, r) against the current matching of (s, t), times the likelihood
        ratio of the two affected pairs. Move type 2 (r owned by q): same
        structure over the four affected pairs under the partner swap. Does
        not mutate state; returns (log_ratio, move_type, info).
        """
        t = int(self.assignment[s])
        q = int(self.t_owner[r])
        s_bm, s_bu = self._s_bm, self._s_bu
        all_u, all_nb = self._all_u, self._all_nb
        use_links = self.track_links and not block_only
        if q < 0:
            log_a = float(s_bm[s, r] - s_bm[s, t] + s_bu[s, t] - s_bu[s, r])
            info = {"t": t, "q": -1, "prior_delta": 0.0}
            if use_links:
                pool_score, pool_n, _ = self._pool_score(s, r)
                log_a += float(
                    all_u[s, r] + pool_score - all_u[s, t] - self.link_score[s]
                    + all_nb[s, t] - all_nb[s, r]
                )
                prior = self._logp8(pool_n, s, r) - self._logp8(self.n_m[s], s, t)
                log_a += prior
                info.update(prior_delta=prior, pool_score=pool_score)
            return log_a, 1, info
        log_a = float(
            s_bm[s, r] + s_bm[q, t] - s_bm[s, t] - s_bm[q, r]
            + s_bu[s, t] + s_bu[q, r] - s_bu[s, r] - s_bu[q, t]
        )
        info = {"t": t, "q": q, "prior_delta": 0.0}
        if use_links:
            ps_sr, n_sr, _ = self._pool_score(s, r)
            ps_qt, n_qt, _ = self._pool_score(q, t)
            log_a += float(
                all_u[s, r] + ps_sr + all_u[q, t] + ps_qt
                - all_u[s, t] - self.link_score[s] - all_u[q, r] - self.link_score[q]
                + all_nb[s, t] + all_nb[q, r] - all_nb[s, r] - all_nb[q, t]
            )
            prior = (
                self._logp8(n_sr, s, r) + self._logp8(n_qt, q, t)
                - self._logp8(self.n_m[s], s, t) - self._logp8(self.n_m[q], q, r)
            )
            log_a += prior
            info.update(prior_delta=prior, pool_score_sr=ps_sr, pool_score_qt=ps_qt)
        return log_a, 2, info

    def propose_move(
        self,
        s: int,
        rng: np.random.Generator,
        stash_pool: bool = True,
        block_only: bool = False,
    ) -> tuple[bool, int]:
        """One Metropolis-Hastings block move for file-1 block s.

        Draws the partner candidate r uniformly from the T-1 file-2 blocks
        other than s's current partner; r's current status picks the move type
        (relink to a free block, or swap with r's owner). Returns
        (accepted, move_type).
        """
        t = int(self.assignment[s])
        r = int(rng.integers(self.T - 1))
        if r >= t:
            r += 1
        u = float(rng.random())
        if not self.cube.block_allowed(s, r):
            self.diag["masked_rejects"] += 1
            return False, 0
        q = int(self.t_owner[r])
        if q >= 0 and not self.cube.block_allowed(q, t):
            self.diag["masked_rejects"] += 1
            return False, 2
        log_a, move_type, info = self.move_log_ratio(s, r, block_only=block_only)
        self.diag[f"type{move_type}_proposed"] += 1
        if not np.isfinite(log_a):
            self.diag["nonfinite_ratios"] += int(not log_a == float("-inf"))
            return False, move_type
        if log_a < 0 and u >= np.exp(log_a):
            return False, move_type
        use_links = self.track_links and not block_only
        delta_lik = log_a - info["prior_delta"]
        if use_links:
            if stash_pool:
                self.pool_rows[(s, t)] = self.rows[s].copy()
                self.pool_nm[(s, t)] = self.n_m[s]
                if q >= 0:
                    self.pool_rows[(q, r)] = self.rows[q].copy()
                    self.pool_nm[(q, r)] = self.n_m[q]
            self._install_pair(s, r)
            self.link_score[s] = info.get("pool_score", info.get("pool_score_sr", 0.0))
            self._pair_tables.pop(s, None)
            if q >= 0:
                self._install_pair(q, t)
                self.link_score[q] = info["pool_score_qt"]
                self._pair_tables.pop(q, None)
        self.assignment[s] = r
        self.t_owner[r] = s
        if q >= 0:
            self.assignment[q] = t
            self.t_owner[t] = q
        else:
            self.t_owner[t] = -1
        self.loglik += delta_lik
        self.diag[f"type{move_type}_accepted"] += 1
        return True, move_type

    # ------------------------------------------------------------ reporting

    def loglik_scratch(self) -> float:
        """From-scratch value of the running objective (drift guard)."""
        if not self.track_links:
            total = float(self._s_bu.sum())
            for s in range(self.S):
                t = int(self.assignment[s])
                total += float(self._s_bm[s, t] - self._s_bu[s, t])
            return total
        b, c = self.snapshot()
        return log_joint_likelihood(b, c, self.theta, self.cube)
