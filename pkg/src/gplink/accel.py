"""Backend selection for the numeric hot paths.

Two interchangeable implementations live here: numba @njit kernels and a
vectorized pure-numpy fallback. The numpy path is selected by setting the
environment variable ``GPLINK_DISABLE_NUMBA`` to ``1``/``true`` before the
package is imported, or automatically when numba is not installed.
``GPLINK_NUM_THREADS`` caps the numba thread pool (the kernels themselves are
serial, so results are bit-identical across thread settings).

The hot paths are the correlation-matrix assembly, the batched cross
correlations, and the per-query moment contractions used by linked
propagation. Everything else in the package is plain numpy/scipy.

benchmarks/backend_bench.py times the two implementations against each other.
"""

import math
import os

import numpy as np

__all__ = [
    "USE_NUMBA",
    "HAVE_NUMBA",
    "backend_name",
    "corr_matrix_impl",
    "cross_corr_impl",
    "linked_moments_impl",
]

SQEXP = 0
MATERN25 = 1

_SQRT5 = math.sqrt(5.0)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_DISABLED = os.environ.get("GPLINK_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}
USE_NUMBA = HAVE_NUMBA and not _DISABLED

if HAVE_NUMBA:
    _threads = os.environ.get("GPLINK_NUM_THREADS", "").strip()
    if _threads:
        import numba

        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))


def backend_name():
    """Name of the active backend, 'numba' or 'numpy'."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _corr_np(X, gamma, eta, family):
    diff = X[:, None, :] - X[None, :, :]
    if family == SQEXP:
        K = np.exp(-np.sum((diff / gamma) ** 2, axis=-1))
    else:
        s = _SQRT5 * np.abs(diff) / gamma
        K = np.prod((1.0 + s + s * s / 3.0) * np.exp(-s), axis=-1)
    if eta != 0.0:
        K = K + eta * np.all(diff == 0.0, axis=-1)
    return K


def _cross_np(X, Xq, gamma, eta, family):
    diff = Xq[:, None, :] - X[None, :, :]
    if family == SQEXP:
        K = np.exp(-np.sum((diff / gamma) ** 2, axis=-1))
    else:
        s = _SQRT5 * np.abs(diff) / gamma
        K = np.prod((1.0 + s + s * s / 3.0) * np.exp(-s), axis=-1)
    if eta != 0.0:
        K = K + eta * np.all(diff == 0.0, axis=-1)
    return K


def _linked_moments_np(X, gamma, eta, sigma2, alpha, Rinv, mu, var, chunk=32):
    B = mu.shape[0]
    means = np.empty(B)
    rawvars = np.empty(B)
    g2 = gamma * gamma
    pair_diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    pair_mid = 0.5 * (X[:, None, :] + X[None, :, :])
    dist_part = np.exp(-pair_diff2 / (2.0 * g2))
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        m = mu[lo:hi]
        v = var[lo:hi]
        den_xi = g2 + 2.0 * v
        xi = np.sqrt(g2 / den_xi)[:, None, :] * np.exp(
            -((X[None, :, :] - m[:, None, :]) ** 2) / den_xi[:, None, :]
        )
        I = np.prod(xi, axis=-1)
        mean = I @ alpha
        den_z = 0.5 * g2 + 2.0 * v
        Z = np.sqrt(g2 / (g2 + 4.0 * v))[:, None, None, :] * dist_part[None] * np.exp(
            -((pair_mid[None] - m[:, None, None, :]) ** 2) / den_z[:, None, None, :]
        )
        Z = np.prod(Z, axis=-1)
        s1 = np.einsum("bij,i,j->b", Z, alpha, alpha)
        s2 = np.einsum("bij,ij->b", Z, Rinv)
        means[lo:hi] = mean
        rawvars[lo:hi] = s1 - mean * mean + sigma2 * (1.0 + eta - s2)
    return means, rawvars


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _corr_nb(X, gamma, eta, family):
        M, D = X.shape
        K = np.empty((M, M))
        for i in range(M):
            K[i, i] = 1.0 + eta
            for j in range(i + 1, M):
                k = 1.0
                equal = True
                for d in range(D):
                    diff = X[i, d] - X[j, d]
                    if diff != 0.0:
                        equal = False
                    if family == 0:
                        t = diff / gamma[d]
                        k *= math.exp(-t * t)
                    else:
                        s = _SQRT5 * abs(diff) / gamma[d]
                        k *= (1.0 + s + s * s / 3.0) * math.exp(-s)
                if equal:
                    k += eta
                K[i, j] = k
                K[j, i] = k
        return K

    @njit(cache=True)
    def _cross_nb(X, Xq, gamma, eta, family):
        M, D = X.shape
        B = Xq.shape[0]
        K = np.empty((B, M))
        for b in range(B):
            for i in range(M):
                k = 1.0
                equal = True
                for d in range(D):
                    diff = Xq[b, d] - X[i, d]
                    if diff != 0.0:
                        equal = False
                    if family == 0:
                        t = diff / gamma[d]
                        k *= math.exp(-t * t)
                    else:
                        s = _SQRT5 * abs(diff) / gamma[d]
                        k *= (1.0 + s + s * s / 3.0) * math.exp(-s)
                if equal:
                    k += eta
                K[b, i] = k
        return K

    @njit(cache=True)
    def _linked_moments_nb(X, gamma, eta, sigma2, alpha, Rinv, mu, var):
        M, D = X.shape
        B = mu.shape[0]
        means = np.empty(B)
        rawvars = np.empty(B)
        I = np.empty(M)
        q_xi = np.empty(D)
        inv_den_xi = np.empty(D)
        q_z = np.empty(D)
        inv_den_z = np.empty(D)
        inv_2g2 = np.empty(D)
        for b in range(B):
            for d in range(D):
                g2 = gamma[d] * gamma[d]
                v = var[b, d]
                q_xi[d] = math.sqrt(g2 / (g2 + 2.0 * v))
                inv_den_xi[d] = 1.0 / (g2 + 2.0 * v)
                q_z[d] = math.sqrt(g2 / (g2 + 4.0 * v))
                inv_den_z[d] = 1.0 / (0.5 * g2 + 2.0 * v)
                inv_2g2[d] = 1.0 / (2.0 * g2)
            mean = 0.0
            for i in range(M):
                p = 1.0
                for d in range(D):
                    diff = X[i, d] - mu[b, d]
                    p *= q_xi[d] * math.exp(-diff * diff * inv_den_xi[d])
                I[i] = p
                mean += p * alpha[i]
            s1 = 0.0
            s2 = 0.0
            for i in range(M):
                z = 1.0
                for d in range(D):
                    dm = X[i, d] - mu[b, d]
                    z *= q_z[d] * math.exp(-dm * dm * inv_den_z[d])
                s1 += z * alpha[i] * alpha[i]
                s2 += z * Rinv[i, i]
                for j in range(i + 1, M):
                    z = 1.0
                    for d in range(D):
                        diff = X[i, d] - X[j, d]
                        dm = 0.5 * (X[i, d] + X[j, d]) - mu[b, d]
                        z *= q_z[d] * math.exp(
                            -diff * diff * inv_2g2[d] - dm * dm * inv_den_z[d]
                        )
                    s1 += 2.0 * z * alpha[i] * alpha[j]
                    s2 += 2.0 * z * Rinv[i, j]
            means[b] = mean
            rawvars[b] = s1 - mean * mean + sigma2 * (1.0 + eta - s2)
        return means, rawvars


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def corr_matrix_impl(X, gamma, eta, family):
    """M x M correlation matrix (diagonal 1+eta, equal rows get the nugget)."""
    X = _as_c(X)
    gamma = _as_c(gamma)
    if USE_NUMBA:
        return _corr_nb(X, gamma, float(eta), int(family))
    return _corr_np(X, gamma, float(eta), int(family))


def cross_corr_impl(X, Xq, gamma, eta, family):
    """B x M cross correlations between query rows and design rows."""
    X = _as_c(X)
    Xq = _as_c(Xq)
    gamma = _as_c(gamma)
    if USE_NUMBA:
        return _cross_nb(X, Xq, gamma, float(eta), int(family))
    return _cross_np(X, Xq, gamma, float(eta), int(family))


def linked_moments_impl(X, gamma, eta, sigma2, alpha, Rinv, mu, var):
    """Batched linked-emulator moments for a squared-exponential node.

    For each query b with independent normal inputs N(mu[b, d], var[b, d])
    this evaluates the closed-form predictive mean and the raw (unclamped)
    predictive variance of the node, contracting the first- and second-moment
    kernel integrals against alpha = R^-1 y and R^-1 without materializing
    the M x M second-moment matrix per query.

    Returns (means, raw_variances), each shape (B,).
    """
    X = _as_c(X)
    gamma = _as_c(gamma)
    alpha = _as_c(alpha)
    Rinv = _as_c(Rinv)
    mu = _as_c(np.atleast_2d(mu))
    var = _as_c(np.atleast_2d(var))
    if USE_NUMBA:
        return _linked_moments_nb(X, gamma, float(eta), float(sigma2), alpha, Rinv, mu, var)
    return _linked_moments_np(X, gamma, float(eta), float(sigma2), alpha, Rinv, mu, var)
