"""Two-class latent mixture of agreement vectors, fitted by EM.

Classic match/non-match decomposition: each record pair's agreement vector is
drawn from a per-variable categorical under the match class (m-probabilities)
or the non-match class (u-probabilities), mixed with an unknown match
proportion. Fitting aggregates identical agreement patterns, so cost scales
with the number of distinct patterns, not pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation

_PROB_FLOOR = 1e-9


@dataclass
class MixtureFit:
    """EM output: match proportion, per-variable level probabilities, trace."""

    match_prob: float
    m_probs: list[np.ndarray]
    u_probs: list[np.ndarray]
    log_likelihood: float
    ll_path: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    degenerate: bool = False

    def pair_weights(self, levels: np.ndarray) -> np.ndarray:
        """Log m/u likelihood ratio for each row of 0-based levels."""
        levels = np.asarray(levels, dtype=np.int64)
        out = np.zeros(levels.shape[0])
        for k, (m, u) in enumerate(zip(self.m_probs, self.u_probs)):
            lm = np.log(np.clip(m, _PROB_FLOOR, None))
            lu = np.log(np.clip(u, _PROB_FLOOR, None))
            out += lm[levels[:, k]] - lu[levels[:, k]]
        return out


def _default_init(level_counts, marginals):
    # Start the match class sharp and small: in linkage populations true
    # matches are rare, and a diffuse start lets EM latch onto broad
    # partial-agreement clusters instead of the exact-match component.
    m = []
    for L in level_counts:
        v = np.full(L, 0.05 / max(L - 1, 1))
        v[L - 1] = 0.95
        m.append(v / v.sum())
    u = [np.clip(mg, _PROB_FLOOR, None) / np.clip(mg, _PROB_FLOOR, None).sum() for mg in marginals]
    return 0.01, m, u


def em_mixture(
    comparisons: np.ndarray,
    level_counts: list[int] | None = None,
    init: tuple | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    weights: np.ndarray | None = None,
) -> MixtureFit:
    """Fit the two-class mixture to (N, K) 0-based agreement levels.

    ``weights`` are optional per-row multiplicities (pattern counts). ``init``
    is an optional (match_prob, m_probs, u_probs) triple. The observed-data
    log likelihood is non-decreasing; iteration stops when its relative gain
    drops below ``tol`` or at ``max_iter``.
    """
    comps = np.asarray(comparisons, dtype=np.int64)
    if comps.ndim != 2 or comps.shape[0] == 0:
        raise ContractViolation("comparisons must be a non-empty (N, K) array")
    if tol <= 0:
        raise ContractViolation("tol must be > 0")
    n, k = comps.shape
    if level_counts is None:
        level_counts = [int(comps[:, j].max()) + 1 for j in range(k)]
    cnt = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    total = cnt.sum()

    marginals = [
        np.bincount(comps[:, j], weights=cnt, minlength=level_counts[j]) / total
        for j in range(k)
    ]
    degenerate = all((mg > 0).sum() <= 1 for mg in marginals)

    if init is None:
        p, m_probs, u_probs = _default_init(level_counts, marginals)
    else:
        p, m_probs, u_probs = init
        m_probs = [np.asarray(v, dtype=np.float64) for v in m_probs]
        u_probs = [np.asarray(v, dtype=np.float64) for v in u_probs]

    def class_loglik(probs):
        out = np.zeros(n)
        for j, v in enumerate(probs):
            out += np.log(np.clip(v, _PROB_FLOOR, None))[comps[:, j]]
        return out

    ll_path = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lm = class_loglik(m_probs) + np.log(max(p, _PROB_FLOOR))
        lu = class_loglik(u_probs) + np.log(max(1.0 - p, _PROB_FLOOR))
        hi = np.maximum(lm, lu)
        ll = float((cnt * (hi + np.log(np.exp(lm - hi) + np.exp(lu - hi)))).sum())
        ll_path.append(ll)
        resp = np.exp(lm - hi) / (np.exp(lm - hi) + np.exp(lu - hi))

        wm = cnt * resp
        wu = cnt * (1.0 - resp)
        sm, su = wm.sum(), wu.sum()
        p = sm / total
        m_probs = [
            np.bincount(comps[:, j], weights=wm, minlength=level_counts[j]) / max(sm, _PROB_FLOOR)
            for j in range(k)
        ]
        u_probs = [
            np.bincount(comps[:, j], weights=wu, minlength=level_counts[j]) / max(su, _PROB_FLOOR)
            for j in range(k)
        ]
        if len(ll_path) >= 2:
            gain = ll_path[-1] - ll_path[-2]
            if gain <= tol * max(1.0, abs(ll_path[-1])):
                converged = True
                break

    if degenerate:
        # Nothing separates the classes; clamp at the boundary and flag.
        p = min(max(p, _PROB_FLOOR), 1.0 - _PROB_FLOOR)
    return MixtureFit(
        match_prob=float(p),
        m_probs=m_probs,
        u_probs=u_probs,
        log_likelihood=ll_path[-1] if ll_path else float("-inf"),
        ll_path=ll_path,
        n_iter=it,
        converged=converged,
        degenerate=degenerate,
    )
