"""Exploratory spatial statistics: global Moran's I (with analytic and
permutation inference) and Getis-Ord Gi* hot/cold-spot classification."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .errors import ZeroVarianceError
from .weights import SpatialWeights

# two-sided z thresholds for the 90/95/99% confidence classes
GSTAR_THRESHOLDS = ((2.576, "99"), (1.960, "95"), (1.645, "90"))


@dataclass(frozen=True)
class MoranResult:
    i_value: float
    expected_i: float
    variance: float
    z_score: float
    p_analytic: float
    p_permutation: float | None
    permutations: int
    seed: int | None
    replicates: np.ndarray | None = field(repr=False, default=None)


@dataclass(frozen=True)
class HotSpotResult:
    ids: tuple[str, ...]
    z_scores: np.ndarray
    p_values: np.ndarray
    labels: tuple[str, ...]


def _permutation_streams(seed: int, count: int, n: int) -> np.ndarray:
    """One permutation per replicate, each from its own child stream of the
    master seed, so replicate r is reproducible independently of the rest."""
    children = np.random.SeedSequence(seed).spawn(count)
    out = np.empty((count, n), dtype=np.int64)
    for r, child in enumerate(children):
        out[r] = np.random.default_rng(child).permutation(n)
    return out


def morans_i(values: np.ndarray, weights: SpatialWeights,
             permutations: int = 999, seed: int | None = None,
             workers: int = 1, impl: str | None = None) -> MoranResult:
    """Global Moran's I with the randomization-assumption analytic z test
    and an optional permutation test.

    I = (n / W) * sum_ij w_ij (x_i - xbar)(x_j - xbar) / sum_i (x_i - xbar)^2.
    The analytic p-value is two-sided normal; the permutation p-value is
    directional with the (exceedances + 1) / (permutations + 1) convention.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError("Moran's I needs at least 3 observations")
    if weights.n != n:
        raise ValueError("weights size does not match values")
    if np.any(weights.matrix.diagonal() != 0):
        raise ValueError("Moran's I weights must not contain self-loops")
    islands = weights.islands()
    if islands:
        raise ValueError(f"weights contain empty rows for ids: {', '.join(islands)}")
    z = x - x.mean()
    m2_sum = float(z @ z)
    if m2_sum == 0.0:
        raise ZeroVarianceError("values")
    if permutations > 0 and seed is None:
        raise ValueError("a seed is required when permutations > 0")

    w = weights.matrix
    s0 = weights.s0
    i_obs = (n / s0) * float(z @ w.dot(z)) / m2_sum

    expected = -1.0 / (n - 1)
    s1 = weights.s1
    s2 = weights.s2
    m2 = m2_sum / n
    m4 = float(np.sum(z ** 4)) / n
    b2 = m4 / (m2 * m2)
    num = n * ((n * n - 3 * n + 3) * s1 - n * s2 + 3 * s0 * s0) \
        - b2 * ((n * n - n) * s1 - 2 * n * s2 + 6 * s0 * s0)
    den = (n - 1) * (n - 2) * (n - 3) * s0 * s0
    variance = num / den - expected ** 2
    z_score = (i_obs - expected) / np.sqrt(variance) if variance > 0 else np.inf
    p_analytic = float(2.0 * stats.norm.sf(abs(z_score)))

    p_perm = None
    reps = None
    if permutations > 0:
        perms = _permutation_streams(seed, permutations, n)
        zp = z[perms]
        nums = kernels.moran_permutation_numerators(w, zp, workers=workers, impl=impl)
        reps = (n / s0) * nums / m2_sum
        count_ge = int(np.sum(reps >= i_obs))
        exceed = min(count_ge, permutations - count_ge)
        p_perm = (exceed + 1) / (permutations + 1)

    return MoranResult(
        i_value=i_obs,
        expected_i=expected,
        variance=float(variance),
        z_score=float(z_score),
        p_analytic=min(1.0, p_analytic),
        p_permutation=p_perm,
        permutations=permutations,
        seed=seed,
        replicates=reps,
    )


def classify_gstar(z: float) -> str:
    for threshold, level in GSTAR_THRESHOLDS:
        if z >= threshold:
            return f"hot-{level}"
        if z <= -threshold:
            return f"cold-{level}"
    return "not-significant"


def getis_ord_gstar(values: np.ndarray, weights: SpatialWeights) -> HotSpotResult:
    """Per-area Gi* z-scores and hot/cold classes under self-inclusive
    weights.

    z_i = (sum_j w_ij x_j - xbar sum_j w_ij)
          / (S sqrt((n sum_j w_ij^2 - (sum_j w_ij)^2) / (n - 1)))
    with S the population standard deviation of x. A degenerate
    denominator (weights saturating every unit) yields not-significant
    with a warning instead of an error.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError("Gi* needs at least 3 observations")
    if weights.n != n:
        raise ValueError("weights size does not match values")
    if not weights.includes_self:
        raise ValueError("Gi* requires self-inclusive weights (use with_self())")
    xbar = x.mean()
    s_pop = np.sqrt(np.mean(x * x) - xbar * xbar)
    if s_pop == 0.0:
        raise ZeroVarianceError("values")

    w = weights.matrix
    lag = w.dot(x)
    wsum = np.asarray(w.sum(axis=1)).ravel()
    wsq = np.asarray(w.multiply(w).sum(axis=1)).ravel()
    under = (n * wsq - wsum * wsum) / (n - 1)
    degenerate = under <= 0
    if np.any(degenerate):
        warnings.warn(
            f"Gi* denominator degenerate for {int(degenerate.sum())} unit(s); marked not-significant"
        )
    den = s_pop * np.sqrt(np.where(degenerate, 1.0, under))
    z = np.where(degenerate, 0.0, (lag - xbar * wsum) / den)
    p = 2.0 * stats.norm.sf(np.abs(z))
    labels = tuple(classify_gstar(v) for v in z)
    return HotSpotResult(ids=weights.ids, z_scores=z, p_values=p, labels=labels)
