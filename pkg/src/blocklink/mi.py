"""Multiple-imputation analysis: per-dataset logistic fits and combining rules.

Each posterior linkage sample defines one imputed linked dataset; the analysis
model is fitted separately per dataset and the estimates are pooled with the
standard combining rules (between/within variance split, Student-t reference
with the squared-fraction degrees of freedom).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import t as t_dist

from .exceptions import ContractViolation, DegeneracyError

NU_CAP = 1e6
SEPARATION_CAP = 30.0


@dataclass
class LogisticFit:
    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    separation: bool
    n_iter: int


@dataclass
class MIEstimate:
    qbar: float
    ubar: float
    between: float
    total: float
    nu: float
    ci_low: float
    ci_high: float
    m: int
    level: float
    flags: list[str] = field(default_factory=list)


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> LogisticFit:
    """Logistic regression by iteratively reweighted least squares.

    ``x`` is the design matrix including its intercept column; iteration stops
    when the sup-norm of the score vector drops below ``tol``. The covariance
    is the inverse observed information at the optimum. Coefficients walking
    past +-30 are treated as separation: clamped and flagged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ContractViolation("x must be (n, p) and y must be (n,)")
    n, p = x.shape
    if n <= p:
        raise ContractViolation(f"need more observations than parameters (n={n}, p={p})")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ContractViolation("y must be binary 0/1")
    constant = [j for j in range(p) if np.ptp(x[:, j]) == 0.0]
    if len(constant) > 1:
        raise ContractViolation("more than one constant column in the design matrix")

    beta = np.zeros(p)
    converged = False
    separation = False
    it = 0
    info = np.eye(p)
    for it in range(1, max_iter + 1):
        mu = expit(x @ beta)
        grad = x.T @ (y - mu)
        if float(np.max(np.abs(grad))) < tol:
            converged = True
            break
        w = np.clip(mu * (1.0 - mu), 1e-10, None)
        info = x.T @ (x * w[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("singular information matrix") from exc
        beta = beta + step
        if float(np.max(np.abs(beta))) > SEPARATION_CAP:
            separation = True
            beta = np.clip(beta, -SEPARATION_CAP, SEPARATION_CAP)
            break
    mu = expit(x @ beta)
    w = np.clip(mu * (1.0 - mu), 1e-10, None)
    info = x.T @ (x * w[:, None])
    cov = np.linalg.inv(info)
    return LogisticFit(coef=beta, cov=cov, converged=converged, separation=separation, n_iter=it)


def rubin_combine(
    estimates: np.ndarray, variances: np.ndarray, level: float = 0.95
) -> MIEstimate:
    """Pool per-imputation estimates and sampling variances.

    total = within + (1 + 1/m) * between; the interval uses a Student-t
    reference with nu = (m - 1) / ((1 + 1/m) * between / total)^2. Zero
    between-variance caps nu at 1e6 (normal limit) and flags the estimate.
    """
    q = np.asarray(estimates, dtype=np.float64)
    u = np.asarray(variances, dtype=np.float64)
    if q.ndim != 1 or q.shape != u.shape:
        raise ContractViolation("estimates and variances must be equal-length vectors")
    m = q.size
    if m < 2:
        raise ContractViolation("combining requires at least 2 imputations")
    if not 0 < level < 1:
        raise ContractViolation("level must lie in (0, 1)")
    qbar = float(q.mean())
    ubar = float(u.mean())
    between = float(((q - qbar) ** 2).sum() / (m - 1))
    total = ubar + (1.0 + 1.0 / m) * between
    flags = []
    if between == 0.0 or total == 0.0:
        nu = NU_CAP
        flags.append("zero_between_variance")
    else:
        r = (1.0 + 1.0 / m) * between / total
        if r * r <= (m - 1) / NU_CAP:
            # includes r**2 underflow for vanishing between-variance
            nu = NU_CAP
            flags.append("nu_capped")
        else:
            nu = (m - 1) / (r * r)
    half = float(t_dist.ppf(1.0 - (1.0 - level) / 2.0, nu)) * float(np.sqrt(total))
    return MIEstimate(
        qbar=qbar,
        ubar=ubar,
        between=between,
        total=total,
        nu=float(nu),
        ci_low=qbar - half,
        ci_high=qbar + half,
        m=m,
        level=level,
        flags=flags,
    )


def combine_logistic_fits(
    fits: list[LogisticFit], coef_index: int, level: float = 0.95
) -> MIEstimate:
    """Pool one coefficient across per-imputation logistic fits."""
    est = np.array([f.coef[coef_index] for f in fits])
    var = np.array([f.cov[coef_index, coef_index] for f in fits])
    out = rubin_combine(est, var, level)
    if any(f.separation for f in fits):
        out.flags.append("separation_in_some_imputations")
    return out
