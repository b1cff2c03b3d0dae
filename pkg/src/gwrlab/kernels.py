"""Hot numeric kernels: local weighted least squares, univariate smoothers,
local condition numbers, and Moran permutation sums.

Each kernel has two implementations: a numba @njit loop and a vectorized
pure-numpy path. The default is numba when importable; set
``GWRLAB_DISABLE_NUMBA=1`` in the environment to force the numpy path.
Individual calls can override via ``impl="numba"`` / ``impl="numpy"``
(used by the benchmark). Both paths write per-location results into
disjoint output slots and aggregate outside the parallel region, so
results are identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

_ENV_DISABLE = os.environ.get("GWRLAB_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

if not _ENV_DISABLE:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # type: ignore[misc]
        """No-op stand-in so the module imports without numba."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


BISQUARE = 0
GAUSSIAN = 1
FAMILY_CODES = {"bisquare": BISQUARE, "gaussian": GAUSSIAN}

# Relative singular-value cutoff below which a local normal matrix is
# treated as rank deficient and pseudo-inverted.
SV_RCOND = 1e-10

# Adaptive bandwidth is the k-th nearest-neighbour distance scaled up by a
# hair so the k-th point keeps a small positive bisquare weight.
BW_EPS = 1.0000001


def default_impl() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def _resolve_impl(impl: str | None) -> str:
    if impl is None:
        return default_impl()
    if impl not in ("numba", "numpy"):
        raise ValueError(f"impl must be 'numba' or 'numpy', got {impl!r}")
    if impl == "numba" and not NUMBA_ENABLED:
        raise RuntimeError("numba implementation requested but numba is disabled")
    return impl


def family_code(family: str) -> int:
    try:
        return FAMILY_CODES[family]
    except KeyError:
        raise ValueError(f"unknown kernel family {family!r}") from None


def _chunks(n: int, pieces: int) -> list[tuple[int, int]]:
    pieces = max(1, min(pieces, n))
    bounds = np.linspace(0, n, pieces + 1).astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(pieces) if bounds[i] < bounds[i + 1]]


def _run_chunked(work, n: int, workers: int) -> None:
    """Run work(i0, i1) over disjoint ranges, optionally on a thread pool."""
    spans = _chunks(n, workers)
    if len(spans) == 1:
        work(*spans[0])
        return
    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        futures = [pool.submit(work, i0, i1) for i0, i1 in spans]
        for fut in futures:
            fut.result()


# ---------------------------------------------------------------------------
# kernel weights
# ---------------------------------------------------------------------------


def kernel_weights(dist: np.ndarray, bandwidth: float, family: int) -> np.ndarray:
    """Distance-decay weights for one location.

    bisquare: (1 - (d/b)^2)^2 for d < b, else 0. gaussian: exp(-(d/b)^2 / 2).
    d == 0 always maps to weight 1 (covers the self-distance and a
    degenerate zero bandwidth).
    """
    d = np.asarray(dist, dtype=np.float64)
    if bandwidth > 0.0:
        t = d / bandwidth
        if family == BISQUARE:
            w = np.where(d < bandwidth, (1.0 - t * t) ** 2, 0.0)
        else:
            w = np.exp(-0.5 * t * t)
    else:
        w = np.zeros_like(d)
    w[d == 0.0] = 1.0
    return w


def kernel_matrix(D: np.ndarray, bw: np.ndarray, family: int) -> np.ndarray:
    """n x n weight matrix; row i uses per-location bandwidth bw[i]."""
    B = np.asarray(bw, dtype=np.float64)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(B > 0.0, D / np.where(B > 0.0, B, 1.0), np.inf)
        if family == BISQUARE:
            W = np.where(D < B, (1.0 - t * t) ** 2, 0.0)
        else:
            W = np.where(B > 0.0, np.exp(-0.5 * t * t), 0.0)
    W[D == 0.0] = 1.0
    return W


@njit(cache=True, nogil=True)
def _kernel_row_nb(drow, bandwidth, family, out):  # pragma: no cover - jitted
    n = drow.shape[0]
    for l in range(n):
        d = drow[l]
        if d == 0.0:
            out[l] = 1.0
        elif bandwidth <= 0.0:
            out[l] = 0.0
        else:
            t = d / bandwidth
            if family == BISQUARE:
                out[l] = (1.0 - t * t) ** 2 if d < bandwidth else 0.0
            else:
                out[l] = np.exp(-0.5 * t * t)


def adaptive_bw_distances(D_sorted: np.ndarray, k: int) -> np.ndarray:
    """Per-location bandwidth distance for adaptive neighbour count k.

    D_sorted holds row-sorted distances (ascending; column 0 is the self
    distance 0), so the k-th nearest point counting self sits at k - 1.
    """
    n = D_sorted.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"adaptive neighbour count k={k} outside [1, {n}]")
    return D_sorted[:, k - 1] * BW_EPS


# ---------------------------------------------------------------------------
# multivariate local WLS
# ---------------------------------------------------------------------------


class LocalFits(NamedTuple):
    beta: np.ndarray       # (n, k) local coefficients
    hat_diag: np.ndarray   # (n,) s_ii leverage
    fitted: np.ndarray     # (n,) x_i . beta_i
    se_raw: np.ndarray     # (n, k) sqrt diag of Ainv B Ainv (scale by sigma)
    sv_ratio: np.ndarray   # (n,) smallest/largest singular value of X'WX


@njit(cache=True, nogil=True)
def _local_wls_nb(X, y, D, bw, family, want_se, i0, i1,
                  beta, hat_diag, fitted, se_raw, sv_ratio):  # pragma: no cover - jitted
    n, k = X.shape
    w = np.empty(n)
    for i in range(i0, i1):
        _kernel_row_nb(D[i], bw[i], family, w)
        A = np.zeros((k, k))
        B = np.zeros((k, k))
        c = np.zeros(k)
        for l in range(n):
            wl = w[l]
            if wl == 0.0:
                continue
            wl2 = wl * wl
            for a in range(k):
                xla = X[l, a]
                c[a] += wl * xla * y[l]
                for b in range(a, k):
                    A[a, b] += wl * xla * X[l, b]
                    if want_se:
                        B[a, b] += wl2 * xla * X[l, b]
        for a in range(k):
            for b in range(a + 1, k):
                A[b, a] = A[a, b]
                if want_se:
                    B[b, a] = B[a, b]
        U, s, Vt = np.linalg.svd(A)
        smax = s[0]
        sv_ratio[i] = s[k - 1] / smax if smax > 0.0 else 0.0
        sinv = np.zeros(k)
        for a in range(k):
            if s[a] > smax * SV_RCOND:
                sinv[a] = 1.0 / s[a]
        # Ainv = V diag(sinv) U^T
        Ainv = (Vt.T * sinv) @ U.T
        bi = Ainv @ c
        xi = X[i]
        beta[i, :] = bi
        fitted[i] = xi @ bi
        hat_diag[i] = xi @ (Ainv @ xi)
        if want_se:
            M = Ainv @ B @ Ainv
            for a in range(k):
                se_raw[i, a] = np.sqrt(M[a, a]) if M[a, a] > 0.0 else 0.0


def _local_wls_np(X, y, D, bw, family, want_se, i0, i1,
                  beta, hat_diag, fitted, se_raw, sv_ratio) -> None:
    step = 256  # bound einsum temporaries to chunk x n x k
    for j0 in range(i0, i1, step):
        j1 = min(j0 + step, i1)
        W = kernel_matrix(D[j0:j1], bw[j0:j1], family)
        A = np.einsum("il,lj,lk->ijk", W, X, X, optimize=True)
        c = np.einsum("il,l,lj->ij", W, y, X, optimize=True)
        U, s, Vt = np.linalg.svd(A)
        smax = s[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            sv_ratio[j0:j1] = np.where(smax > 0.0, s[:, -1] / smax, 0.0)
        sinv = np.where(s > smax[:, None] * SV_RCOND, 1.0 / s, 0.0)
        Ainv = Vt.transpose(0, 2, 1) @ (sinv[:, :, None] * U.transpose(0, 2, 1))
        b = (Ainv @ c[:, :, None])[:, :, 0]
        xi = X[j0:j1]
        beta[j0:j1] = b
        fitted[j0:j1] = np.einsum("ij,ij->i", xi, b)
        hat_diag[j0:j1] = np.einsum("ij,ijk,ik->i", xi, Ainv, xi)
        if want_se:
            Bm = np.einsum("il,lj,lk->ijk", W * W, X, X, optimize=True)
            M = Ainv @ Bm @ Ainv
            diag = np.diagonal(M, axis1=1, axis2=2)
            se_raw[j0:j1] = np.sqrt(np.clip(diag, 0.0, None))


def local_wls(X: np.ndarray, y: np.ndarray, D: np.ndarray, bw: np.ndarray,
              family: int, want_se: bool = True, workers: int = 1,
              impl: str | None = None) -> LocalFits:
    """Fit the weighted least-squares model at every location.

    Per location i with kernel weights w_i: beta_i solves
    (X' W_i X) beta = X' W_i y via SVD (pseudo-inverse below SV_RCOND),
    hat_diag[i] = x_i' (X' W_i X)^-1 x_i, and se_raw holds the square roots
    of diag((X'W_iX)^-1 X'W_i^2 X (X'W_iX)^-1), to be scaled by sigma.
    """
    impl = _resolve_impl(impl)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, k = X.shape
    beta = np.zeros((n, k))
    hat_diag = np.zeros(n)
    fitted = np.zeros(n)
    se_raw = np.zeros((n, k))
    sv_ratio = np.zeros(n)
    fn = _local_wls_nb if impl == "numba" else _local_wls_np

    def work(i0: int, i1: int) -> None:
        fn(X, y, D, bw, family, want_se, i0, i1,
           beta, hat_diag, fitted, se_raw, sv_ratio)

    _run_chunked(work, n, workers)
    return LocalFits(beta, hat_diag, fitted, se_raw, sv_ratio)


def local_hat_matrices(X: np.ndarray, D: np.ndarray, bw: np.ndarray,
                       family: int) -> tuple[np.ndarray, np.ndarray]:
    """Full hat matrix S and per-term decomposition R.

    R[j, i, :] = x_ij * ((X'W_iX)^-1 X'W_i)[j, :], so sum_j R[j] = S and
    S @ y gives the fitted values. Dense (k, n, n); intended for modest n.
    """
    X = np.asarray(X, dtype=np.float64)
    n, k = X.shape
    S = np.zeros((n, n))
    R = np.zeros((k, n, n))
    step = 128
    for j0 in range(0, n, step):
        j1 = min(j0 + step, n)
        W = kernel_matrix(D[j0:j1], bw[j0:j1], family)
        A = np.einsum("il,lj,lk->ijk", W, X, X, optimize=True)
        U, s, Vt = np.linalg.svd(A)
        sinv = np.where(s > s[:, :1] * SV_RCOND, 1.0 / s, 0.0)
        Ainv = Vt.transpose(0, 2, 1) @ (sinv[:, :, None] * U.transpose(0, 2, 1))
        # C[i] = Ainv[i] @ X.T * w_i  -> (chunk, k, n)
        C = np.einsum("ijk,lk,il->ijl", Ainv, X, W, optimize=True)
        for off in range(j1 - j0):
            i = j0 + off
            for j in range(k):
                R[j, i, :] = X[i, j] * C[off, j, :]
            S[i, :] = X[i] @ C[off]
    return S, R


# ---------------------------------------------------------------------------
# univariate smoother (MGWR backfitting terms)
# ---------------------------------------------------------------------------


class UniFits(NamedTuple):
    beta: np.ndarray      # (n,) local slope of target on x through the origin
    fitted: np.ndarray    # (n,) x_i * beta_i
    hat_diag: np.ndarray  # (n,) x_i^2 / sum_l w_il x_l^2
    zero_den: np.ndarray  # (n,) bool, weighted design identically zero


@njit(cache=True, nogil=True)
def _uni_smooth_nb(x, target, D, bw, family, i0, i1,
                   beta, fitted, hat_diag, zero_den):  # pragma: no cover - jitted
    n = x.shape[0]
    w = np.empty(n)
    for i in range(i0, i1):
        _kernel_row_nb(D[i], bw[i], family, w)
        num = 0.0
        den = 0.0
        for l in range(n):
            wl = w[l]
            if wl == 0.0:
                continue
            xl = x[l]
            num += wl * xl * target[l]
            den += wl * xl * xl
        if den == 0.0:
            zero_den[i] = True
            beta[i] = 0.0
            fitted[i] = 0.0
            hat_diag[i] = 0.0
        else:
            b = num / den
            beta[i] = b
            fitted[i] = x[i] * b
            hat_diag[i] = x[i] * x[i] / den


def _uni_smooth_np(x, target, D, bw, family, i0, i1,
                   beta, fitted, hat_diag, zero_den) -> None:
    W = kernel_matrix(D[i0:i1], bw[i0:i1], family)
    num = W @ (x * target)
    den = W @ (x * x)
    zero = den == 0.0
    safe = np.where(zero, 1.0, den)
    b = np.where(zero, 0.0, num / safe)
    xi = x[i0:i1]
    beta[i0:i1] = b
    fitted[i0:i1] = np.where(zero, 0.0, xi * b)
    hat_diag[i0:i1] = np.where(zero, 0.0, xi * xi / safe)
    zero_den[i0:i1] = zero


def univariate_smooth(x: np.ndarray, target: np.ndarray, D: np.ndarray,
                      bw: np.ndarray, family: int, workers: int = 1,
                      impl: str | None = None) -> UniFits:
    """Local weighted regression of target on the single column x (no
    intercept; in MGWR the intercept is its own term with x = 1)."""
    impl = _resolve_impl(impl)
    x = np.ascontiguousarray(x, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    n = x.shape[0]
    beta = np.zeros(n)
    fitted = np.zeros(n)
    hat_diag = np.zeros(n)
    zero_den = np.zeros(n, dtype=np.bool_)
    fn = _uni_smooth_nb if impl == "numba" else _uni_smooth_np

    def work(i0: int, i1: int) -> None:
        fn(x, target, D, bw, family, i0, i1, beta, fitted, hat_diag, zero_den)

    _run_chunked(work, n, workers)
    return UniFits(beta, fitted, hat_diag, zero_den)


def univariate_hat(x: np.ndarray, D: np.ndarray, bw: np.ndarray,
                   family: int) -> np.ndarray:
    """Dense smoother matrix S with S[i, l] = x_i w_il x_l / sum_l w x^2."""
    x = np.asarray(x, dtype=np.float64)
    W = kernel_matrix(D, bw, family)
    den = W @ (x * x)
    safe = np.where(den == 0.0, 1.0, den)
    S = (x[:, None] * W * x[None, :]) / safe[:, None]
    S[den == 0.0, :] = 0.0
    return S


# ---------------------------------------------------------------------------
# local condition numbers
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _local_cn_nb(X, D, bw, family, i0, i1, cn):  # pragma: no cover - jitted
    n, k = X.shape
    w = np.empty(n)
    B = np.empty((n, k))
    for i in range(i0, i1):
        _kernel_row_nb(D[i], bw[i], family, w)
        for l in range(n):
            r = np.sqrt(w[l])
            for a in range(k):
                B[l, a] = r * X[l, a]
        bad = False
        for a in range(k):
            norm = 0.0
            for l in range(n):
                norm += B[l, a] * B[l, a]
            norm = np.sqrt(norm)
            if norm == 0.0:
                bad = True
                break
            for l in range(n):
                B[l, a] /= norm
        if bad:
            cn[i] = np.inf
            continue
        s = np.linalg.svd(B)[1]
        cn[i] = s[0] / s[k - 1] if s[k - 1] > 0.0 else np.inf


def _local_cn_np(X, D, bw, family, i0, i1, cn) -> None:
    n, k = X.shape
    for i in range(i0, i1):
        w = kernel_weights(D[i], bw[i], family)
        B = np.sqrt(w)[:, None] * X
        norms = np.linalg.norm(B, axis=0)
        if np.any(norms == 0.0):
            cn[i] = np.inf
            continue
        s = np.linalg.svd(B / norms, compute_uv=False)
        cn[i] = s[0] / s[-1] if s[-1] > 0.0 else np.inf


def local_condition_numbers_core(X: np.ndarray, D: np.ndarray, bw: np.ndarray,
                                 family: int, workers: int = 1,
                                 impl: str | None = None) -> np.ndarray:
    """Condition number of sqrt(W_i) X per location, columns scaled to
    unit norm first; infinite when a scaled column vanishes or the
    smallest singular value is exactly zero."""
    impl = _resolve_impl(impl)
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    cn = np.zeros(n)
    fn = _local_cn_nb if impl == "numba" else _local_cn_np

    def work(i0: int, i1: int) -> None:
        fn(X, D, bw, family, i0, i1, cn)

    _run_chunked(work, n, workers)
    return cn


# ---------------------------------------------------------------------------
# Moran permutation sums
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _moran_num_nb(data, indices, indptr, Z, r0, r1, out):  # pragma: no cover - jitted
    n = indptr.shape[0] - 1
    for r in range(r0, r1):
        acc = 0.0
        for i in range(n):
            zi = Z[r, i]
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * zi * Z[r, indices[p]]
        out[r] = acc


def moran_permutation_numerators(w_csr, Z: np.ndarray, workers: int = 1,
                                 impl: str | None = None) -> np.ndarray:
    """sum_ij w_ij z_i z_j for each row of Z (rows are permuted, centred
    value vectors). w_csr is a scipy CSR matrix."""
    impl = _resolve_impl(impl)
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    nrep = Z.shape[0]
    out = np.zeros(nrep)
    if impl == "numba":
        data = np.ascontiguousarray(w_csr.data, dtype=np.float64)
        indices = np.ascontiguousarray(w_csr.indices, dtype=np.int64)
        indptr = np.ascontiguousarray(w_csr.indptr, dtype=np.int64)

        def work(r0: int, r1: int) -> None:
            _moran_num_nb(data, indices, indptr, Z, r0, r1, out)

    else:

        def work(r0: int, r1: int) -> None:
            lag = w_csr.dot(Z[r0:r1].T)  # (n, chunk)
            out[r0:r1] = np.einsum("rn,nr->r", Z[r0:r1], lag)

    _run_chunked(work, nrep, workers)
    return out
