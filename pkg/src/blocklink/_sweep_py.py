"""Pure-Python twin of the compiled sweep kernel.

Slower, used when the extension is unavailable (or forced via the
BLOCKLINK_FORCE_PY environment variable). The candidate total and the
cumulative scan accumulate in ascending-column order, exactly like the C loop,
so both backends draw identical chains from identical uniforms.
"""

from __future__ import annotations

import numpy as np


def run_sweeps(
    W: np.ndarray,
    logR: np.ndarray,
    mask: np.ndarray,
    row_link: np.ndarray,
    col_link: np.ndarray,
    n_m: int,
    alpha_pi: float,
    beta_pi: float,
    nolink_scale: float,
    uniforms: np.ndarray,
):
    n1, n2 = W.shape
    if n1 <= n2:
        lo, hi = float(n1), float(n2)
    else:
        lo, hi = float(n2), float(n1)
    mask_bool = mask.view(bool) if mask.dtype == np.uint8 else mask.astype(bool)
    n = int(n_m)
    delta = 0.0

    for upd in range(len(uniforms)):
        i = upd % n1
        u = uniforms[upd]
        jo = int(row_link[i])
        if jo >= 0:
            col_link[jo] = -1
            nmi = n - 1
        else:
            nmi = n

        cand = np.flatnonzero((col_link < 0) & mask_bool[i])
        jsel = -1
        if cand.size:
            cum = np.cumsum(W[i, cand])
            tot = float(cum[-1])
            if tot > 0.0:
                nol = ((hi - nmi) * (lo - nmi + beta_pi - 1.0) / (nmi + alpha_pi)) * nolink_scale
                target = u * (tot + nol)
                pos = int(np.searchsorted(cum, target, side="right"))
                if pos < cand.size:
                    jsel = int(cand[pos])

        if jsel >= 0:
            col_link[jsel] = i
            row_link[i] = jsel
            n = nmi + 1
        else:
            row_link[i] = -1
            n = nmi
        if jsel != jo:
            if jo >= 0:
                delta -= float(logR[i, jo])
            if jsel >= 0:
                delta += float(logR[i, jsel])

    return n, delta
