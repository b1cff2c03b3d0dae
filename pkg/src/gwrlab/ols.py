"""Global OLS fit with the full diagnostic block: coefficient tests, VIF
collinearity screen, fit statistics, and information criteria."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import ObservationTable
from .errors import RankDeficiencyError

# Conventional VIF screening levels; values above are flagged, never dropped.
VIF_LEVELS = (5.0, 7.5, 10.0)

_RANK_RCOND = 1e-10


@dataclass(frozen=True)
class GlobalFit:
    """OLS estimates and diagnostics. Coefficient arrays include the
    intercept first; vif covers the covariates only."""

    names: tuple[str, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    vif: np.ndarray
    residuals: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    r2: float = 0.0
    adj_r2: float = 0.0
    aic: float = 0.0
    bic: float = 0.0
    n: int = 0
    df_model: int = 0
    df_residuals: int = 0
    dependent_name: str = "y"

    def vif_flags(self) -> tuple[str, ...]:
        """Highest screening level exceeded per covariate ('' if none)."""
        flags = []
        for v in self.vif:
            label = ""
            for level in VIF_LEVELS:
                if v > level:
                    label = f">{level:g}"
            flags.append(label)
        return tuple(flags)


def design_matrix(table: ObservationTable) -> tuple[np.ndarray, tuple[str, ...]]:
    ones = np.ones((table.n, 1))
    return np.hstack([ones, table.X]), ("Intercept", *table.columns)


def fit_ols(table: ObservationTable) -> GlobalFit:
    """Least-squares fit of y on an intercept plus every covariate.

    Solved by SVD (numpy lstsq) rather than normal equations. AIC/BIC use
    the full Gaussian log-likelihood with p + 2 estimated quantities
    (coefficients, intercept, error variance):
    AIC = n ln(RSS/n) + n ln(2 pi) + n + 2 (p + 2), BIC swaps the last
    term for (p + 2) ln n.
    """
    n, p = table.n, table.p
    if n <= p + 1:
        raise ValueError(f"need n > p + 1 observations, got n={n}, p={p}")
    M, names = design_matrix(table)
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0 or s[-1] / s[0] < _RANK_RCOND:
        null = vt[-1]
        involved = [names[j] for j in np.nonzero(np.abs(null) > 1e-8 * np.abs(null).max())[0]]
        raise RankDeficiencyError(involved)
    y = table.y
    beta = vt.T @ ((u.T @ y) / s)
    fitted = M @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    df_resid = n - p - 1
    sigma2 = rss / df_resid
    # (M'M)^-1 = V diag(1/s^2) V' from the same SVD
    xtx_inv_diag = np.einsum("ji,ji->i", vt / s[:, None], vt / s[:, None])
    se = np.sqrt(np.clip(xtx_inv_diag * sigma2, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_vals = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    p_vals = 2.0 * stats.t.sf(np.abs(t_vals), df_resid)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / df_resid
    ll_core = n * np.log(rss / n) + n * np.log(2.0 * np.pi) + n
    aic = ll_core + 2.0 * (p + 2)
    bic = ll_core + (p + 2) * np.log(n)
    return GlobalFit(
        names=names,
        coefficients=beta,
        std_errors=se,
        t_values=t_vals,
        p_values=p_vals,
        vif=compute_vif(table),
        residuals=resid,
        fitted=fitted,
        r2=r2,
        adj_r2=adj_r2,
        aic=float(aic),
        bic=float(bic),
        n=n,
        df_model=p,
        df_residuals=df_resid,
        dependent_name=table.y_name,
    )


def compute_vif(table: ObservationTable) -> np.ndarray:
    """Variance inflation factors: 1 / (1 - R_j^2) from regressing each
    covariate on the others plus an intercept. Perfect collinearity gives
    an infinite entry rather than an exception."""
    X = table.X
    n, p = X.shape
    if p == 0:
        return np.zeros(0)
    if p == 1:
        return np.ones(1)
    if n <= p:
        raise ValueError(f"VIF needs n > p, got n={n}, p={p}")
    out = np.empty(p)
    ones = np.ones((n, 1))
    for j in range(p):
        xj = X[:, j]
        others = np.hstack([ones, np.delete(X, j, axis=1)])
        coef, _, _, _ = np.linalg.lstsq(others, xj, rcond=None)
        resid = xj - others @ coef
        tss = float(np.sum((xj - xj.mean()) ** 2))
        if tss == 0.0:
            out[j] = np.inf
            continue
        r2 = 1.0 - float(resid @ resid) / tss
        # guard the floating boundary: r2 can land a hair above 1
        if r2 >= 1.0 - 1e-12:
            out[j] = np.inf
        else:
            out[j] = 1.0 / (1.0 - r2)
    return out
