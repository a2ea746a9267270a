"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Every reconstruction loss returns its value together with the gradient
with respect to the predicted matrix, so training loops make a single
pass over the batch.  The numba path is used when available; set
``METAEMB_NUMBA=0`` to force the numpy implementations (both paths
compute identical math in double precision).

Matrix products stay in numpy/BLAS; only the fused row-wise loops that
numpy would otherwise spell as chains of temporaries live here.
"""

import logging
import math
import os

import numpy as np

logger = logging.getLogger(__name__)

_DISABLE_VALUES = ("0", "false", "off", "no")


def _numba_requested():
    return os.environ.get("METAEMB_NUMBA", "1").strip().lower() not in _DISABLE_VALUES


def _c2d(a):
    """Contiguous float64 view of a 2-D array (copies only when needed)."""
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _log_softmax_rows_np(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax_rows_np(x):
    shifted = np.exp(x - x.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _mse_np(pred, target):
    m = pred.shape[0]
    diff = pred - target
    loss = float((diff * diff).sum()) / m
    return loss, (2.0 / m) * diff


def _mae_np(pred, target):
    m = pred.shape[0]
    diff = pred - target
    loss = float(np.abs(diff).sum()) / m
    return loss, np.sign(diff) / m


def _kl_np(pred, target):
    m = pred.shape[0]
    lp = _log_softmax_rows_np(target)
    lq = _log_softmax_rows_np(pred)
    p = np.exp(lp)
    q = np.exp(lq)
    loss = float((p * (lp - lq)).sum()) / m
    return loss, (q - p) / m


def _scp_np(pred, target):
    pn = np.sqrt((pred * pred).sum(axis=1))
    tn = np.sqrt((target * target).sum(axis=1))
    bad = np.flatnonzero((pn == 0.0) | (tn == 0.0))
    if bad.size:
        return 0.0, np.zeros_like(pred), int(bad[0])
    cos = (pred * target).sum(axis=1) / (pn * tn)
    resid = 1.0 - cos
    loss = float((resid * resid).sum())
    coef = -2.0 * resid
    grad = coef[:, None] * (target / (pn * tn)[:, None]
                            - (cos / (pn * pn))[:, None] * pred)
    return loss, grad, -1


def _row_cosines_np(a, b):
    an = np.sqrt((a * a).sum(axis=1))
    bn = np.sqrt((b * b).sum(axis=1))
    denom = an * bn
    out = np.zeros(a.shape[0])
    ok = denom > 0.0
    out[ok] = (a[ok] * b[ok]).sum(axis=1) / denom[ok]
    return out


NUMPY_IMPLS = {
    "softmax_rows": _softmax_rows_np,
    "mse": _mse_np,
    "mae": _mae_np,
    "kl": _kl_np,
    "scp": _scp_np,
    "row_cosines": _row_cosines_np,
}


# ---------------------------------------------------------------------------
# numba implementations (same math, fused loops, no temporaries)
# ---------------------------------------------------------------------------

NUMBA_IMPLS = None

try:
    from numba import njit

    @njit(cache=True)
    def _softmax_rows_nb(x):
        m, n = x.shape
        out = np.empty((m, n))
        for i in range(m):
            hi = x[i, 0]
            for j in range(1, n):
                if x[i, j] > hi:
                    hi = x[i, j]
            s = 0.0
            for j in range(n):
                e = math.exp(x[i, j] - hi)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(n):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _mse_nb(pred, target):
        m, n = pred.shape
        grad = np.empty((m, n))
        inv_m = 1.0 / m
        total = 0.0
        for i in range(m):
            for j in range(n):
                d = pred[i, j] - target[i, j]
                total += d * d
                grad[i, j] = 2.0 * d * inv_m
        return total * inv_m, grad

    @njit(cache=True)
    def _mae_nb(pred, target):
        m, n = pred.shape
        grad = np.empty((m, n))
        inv_m = 1.0 / m
        total = 0.0
        for i in range(m):
            for j in range(n):
                d = pred[i, j] - target[i, j]
                if d > 0.0:
                    total += d
                    grad[i, j] = inv_m
                elif d < 0.0:
                    total -= d
                    grad[i, j] = -inv_m
                else:
                    grad[i, j] = 0.0
        return total * inv_m, grad

    @njit(cache=True)
    def _kl_nb(pred, target):
        m, n = pred.shape
        grad = np.empty((m, n))
        inv_m = 1.0 / m
        total = 0.0
        for i in range(m):
            hp = target[i, 0]
            hq = pred[i, 0]
            for j in range(1, n):
                if target[i, j] > hp:
                    hp = target[i, j]
                if pred[i, j] > hq:
                    hq = pred[i, j]
            sp = 0.0
            sq = 0.0
            for j in range(n):
                sp += math.exp(target[i, j] - hp)
                sq += math.exp(pred[i, j] - hq)
            lsp = math.log(sp)
            lsq = math.log(sq)
            for j in range(n):
                lpj = target[i, j] - hp - lsp
                lqj = pred[i, j] - hq - lsq
                pj = math.exp(lpj)
                qj = math.exp(lqj)
                total += pj * (lpj - lqj)
                grad[i, j] = (qj - pj) * inv_m
        return total * inv_m, grad

    @njit(cache=True)
    def _scp_nb(pred, target):
        m, n = pred.shape
        grad = np.zeros((m, n))
        total = 0.0
        for i in range(m):
            pp = 0.0
            tt = 0.0
            pt = 0.0
            for j in range(n):
                pp += pred[i, j] * pred[i, j]
                tt += target[i, j] * target[i, j]
                pt += pred[i, j] * target[i, j]
            if pp == 0.0 or tt == 0.0:
                return 0.0, grad, i
            pn = math.sqrt(pp)
            tn = math.sqrt(tt)
            cos = pt / (pn * tn)
            resid = 1.0 - cos
            total += resid * resid
            coef = -2.0 * resid
            inv_ptn = 1.0 / (pn * tn)
            c_over_pp = cos / pp
            for j in range(n):
                grad[i, j] = coef * (target[i, j] * inv_ptn
                                     - c_over_pp * pred[i, j])
        return total, grad, -1

    @njit(cache=True)
    def _row_cosines_nb(a, b):
        m, n = a.shape
        out = np.zeros(m)
        for i in range(m):
            aa = 0.0
            bb = 0.0
            ab = 0.0
            for j in range(n):
                aa += a[i, j] * a[i, j]
                bb += b[i, j] * b[i, j]
                ab += a[i, j] * b[i, j]
            if aa > 0.0 and bb > 0.0:
                out[i] = ab / (math.sqrt(aa) * math.sqrt(bb))
        return out

    NUMBA_IMPLS = {
        "softmax_rows": _softmax_rows_nb,
        "mse": _mse_nb,
        "mae": _mae_nb,
        "kl": _kl_nb,
        "scp": _scp_nb,
        "row_cosines": _row_cosines_nb,
    }
except ImportError:  # pragma: no cover - exercised only without numba installed
    logger.info("numba not importable; using numpy kernels")


if NUMBA_IMPLS is not None and _numba_requested():
    _ACTIVE = NUMBA_IMPLS
    _BACKEND = "numba"
else:
    _ACTIVE = NUMPY_IMPLS
    _BACKEND = "numpy"


def active_backend():
    """Name of the kernel backend selected at import time."""
    return _BACKEND


def softmax_rows(x):
    """Row-wise softmax of a 2-D array (max-shifted, natural base)."""
    return _ACTIVE["softmax_rows"](_c2d(x))


def mse_value_grad(pred, target):
    """Batch-mean squared error and its gradient w.r.t. ``pred``."""
    return _ACTIVE["mse"](_c2d(pred), _c2d(target))


def mae_value_grad(pred, target):
    """Batch-mean absolute error; the subgradient at zero residual is 0."""
    return _ACTIVE["mae"](_c2d(pred), _c2d(target))


def kl_value_grad(pred, target):
    """Batch-mean KL divergence between row softmaxes, target || pred.

    Both arguments are raw scores; each row is passed through softmax
    internally and the gradient is taken w.r.t. the raw ``pred`` row.
    """
    return _ACTIVE["kl"](_c2d(pred), _c2d(target))


def scp_value_grad(pred, target):
    """Squared cosine proximity, summed over rows.

    Returns ``(loss, grad, bad_row)`` where ``bad_row`` is the index of
    the first zero-norm row (cosine undefined) or -1 when all rows are
    usable.  Callers must treat ``bad_row >= 0`` as an error.
    """
    return _ACTIVE["scp"](_c2d(pred), _c2d(target))


def row_cosines(a, b):
    """Cosine of corresponding rows; 0.0 where either row has zero norm."""
    return _ACTIVE["row_cosines"](_c2d(a), _c2d(b))
