"""Maximum-weight one-to-one assignment with a deterministic tie-break.

The optimal value comes from scipy's linear-sum-assignment solver; a
normalization pass then resolves ties (exact value-preserving swaps and
transfers) so that lower row indices take lower column indices. On an
all-equal weight matrix this yields row i -> column i.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ContractViolation


def solve_assignment(weights: np.ndarray) -> np.ndarray:
    """Assign min(n1, n2) row/column pairs maximizing total weight.

    Returns an (n1,) int64 array mapping each row to its column, -1 for rows
    left unassigned when n1 > n2. Ties between optimal assignments are broken
    toward lower rows taking lower columns.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise ContractViolation("weights must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(w)):
        raise ContractViolation("weights must be finite")
    n1, n2 = w.shape
    rows, cols = linear_sum_assignment(w, maximize=True)
    out = np.full(n1, -1, dtype=np.int64)
    out[rows] = cols
    _normalize_ties(w, out)
    return out


def _normalize_ties(w: np.ndarray, assign: np.ndarray) -> None:
    """Exact value-preserving swaps/transfers toward lexicographic order.

    Treats an unassigned row as holding column +inf, so an assigned column
    always sorts before no assignment.
    """
    n1 = len(assign)
    changed = True
    while changed:
        changed = False
        for i in range(n1):
            ci = assign[i]
            for j in range(i + 1, n1):
                cj = assign[j]
                if ci >= 0 and cj >= 0:
                    if cj < ci and w[i, cj] + w[j, ci] == w[i, ci] + w[j, cj]:
                        assign[i], assign[j] = cj, ci
                        ci = cj
                        changed = True
                elif ci < 0 and cj >= 0:
                    if w[i, cj] == w[j, cj]:
                        assign[i], assign[j] = cj, -1
                        ci = cj
                        changed = True
