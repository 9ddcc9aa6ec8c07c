# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled record-link sweep kernel.

One call runs ``len(uniforms) // n1`` full Gibbs sweeps over the rows of one
block pair, updating each row's link in place while preserving the one-to-one
constraint. Candidate j gets weight W[i, j] (the match/non-match likelihood
ratio, rescaled by the caller); the no-link option gets the closed-form
beta-binomial prior ratio times ``nolink_scale``. Arithmetic is ordered
identically to the pure-Python twin in ``_sweep_py`` so both backends produce
bit-identical chains from the same uniforms.
"""


def run_sweeps(
    double[:, ::1] W,
    double[:, ::1] logR,
    const unsigned char[:, ::1] mask,
    long long[::1] row_link,
    long long[::1] col_link,
    long long n_m,
    double alpha_pi,
    double beta_pi,
    double nolink_scale,
    const double[::1] uniforms,
):
    cdef Py_ssize_t n1 = W.shape[0]
    cdef Py_ssize_t n2 = W.shape[1]
    cdef Py_ssize_t n_updates = uniforms.shape[0]
    cdef Py_ssize_t upd, i, j
    cdef long long jo, jsel, n = n_m, nmi
    cdef double lo, hi, u, tot, nol, target, cum
    cdef double delta = 0.0

    if n1 <= n2:
        lo = <double> n1
        hi = <double> n2
    else:
        lo = <double> n2
        hi = <double> n1

    for upd in range(n_updates):
        i = upd % n1
        u = uniforms[upd]
        jo = row_link[i]
        if jo >= 0:
            col_link[jo] = -1
            nmi = n - 1
        else:
            nmi = n

        tot = 0.0
        for j in range(n2):
            if col_link[j] < 0 and mask[i, j]:
                tot += W[i, j]

        jsel = -1
        if tot > 0.0:
            nol = ((hi - nmi) * (lo - nmi + beta_pi - 1.0) / (nmi + alpha_pi)) * nolink_scale
            target = u * (tot + nol)
            cum = 0.0
            for j in range(n2):
                if col_link[j] < 0 and mask[i, j]:
                    cum += W[i, j]
                    if target < cum:
                        jsel = j
                        break

        if jsel >= 0:
            col_link[jsel] = i
            row_link[i] = jsel
            n = nmi + 1
        else:
            row_link[i] = -1
            n = nmi
        if jsel != jo:
            if jo >= 0:
                delta -= logR[i, jo]
            if jsel >= 0:
                delta += logR[i, jsel]

    return n, delta
