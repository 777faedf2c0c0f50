"""Hot numeric kernels: 3x3 same-padding convolution, pairwise squared
distances, and the SVM working-set solver.

Every kernel has two implementations: a numba @njit version and a pure-numpy
one. The active backend is chosen at import time from the environment
variable CSISENSE_BACKEND:

    auto   use numba when importable, numpy otherwise (default)
    numba  require numba, fail if missing
    numpy  force the pure-numpy path

``BACKEND`` records the choice. benchmarks/bench_kernels.py compares both.
"""

import os

import numpy as np

from .errors import ConfigError

_choice = os.environ.get("CSISENSE_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigError(f"CSISENSE_BACKEND must be auto|numba|numpy, got {_choice!r}")

_have_numba = False
if _choice in ("auto", "numba"):
    try:
        from numba import njit, prange

        _have_numba = True
    except ImportError:
        if _choice == "numba":
            raise ConfigError("CSISENSE_BACKEND=numba but numba is not importable")

BACKEND = "numba" if _have_numba else "numpy"


def _njit_opts():
    # nogil/fastmath per-lane deterministic on a fixed build; no cross-run variance
    return dict(cache=True, nogil=True, fastmath=True)


def _pad_hw(x):
    """Zero-pad the two trailing spatial axes by one on each side."""
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
    out[:, :, 1:-1, 1:-1] = x
    return out


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _windows(xp):
    # (B, C, H+2, W+2) -> read-only view (B, C, H, W, 3, 3)
    return np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))


def conv2d_forward_numpy(x, w, b):
    win = _windows(_pad_hw(x))
    out = np.einsum("bihwkl,oikl->bohw", win, w, optimize=True)
    out += b[None, :, None, None]
    return out


def conv2d_backward_numpy(x, w, dout):
    win = _windows(_pad_hw(x))
    dw = np.einsum("bihwkl,bohw->oikl", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3), dtype=np.float64).astype(dout.dtype)
    dwin = _windows(_pad_hw(dout))
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1])
    dx = np.einsum("bohwkl,oikl->bihw", dwin, wflip, optimize=True)
    return dx, dw, db


def sqdist_numpy(queries, train):
    """Squared Euclidean distances, shape (n_queries, n_train), float64."""
    q = queries.astype(np.float64, copy=False)
    t = train.astype(np.float64, copy=False)
    out = np.empty((q.shape[0], t.shape[0]))
    for i in range(q.shape[0]):
        d = t - q[i]
        out[i] = np.einsum("nd,nd->n", d, d)
    return out


def smo_solve_numpy(kmat, y, c, tol, max_iter):
    """Working-set SMO on the soft-margin dual; see smo docstring below."""
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    eps = 1e-12
    it = 0
    while it < max_iter:
        yg = -y * grad
        up = np.where(y > 0, alpha < c - eps, alpha > eps)
        low = np.where(y < 0, alpha < c - eps, alpha > eps)
        if not up.any() or not low.any():
            break
        i = np.where(up, yg, -np.inf).argmax()
        j = np.where(low, yg, np.inf).argmin()
        gap = yg[i] - yg[j]
        if gap <= tol:
            break
        quad = kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j]
        if quad < eps:
            quad = eps
        lam = gap / quad
        lam = min(lam, c - alpha[i] if y[i] > 0 else alpha[i])
        lam = min(lam, alpha[j] if y[j] > 0 else c - alpha[j])
        alpha[i] += y[i] * lam
        alpha[j] -= y[j] * lam
        grad += lam * y * (kmat[:, i] - kmat[:, j])
        it += 1
    return alpha, grad, it


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _have_numba:

    @njit(parallel=True, **_njit_opts())
    def _conv2d_forward_nb(xp, w, b, out):
        n_batch, n_in, _, wp = xp.shape
        n_out = w.shape[0]
        height = out.shape[2]
        width = out.shape[3]
        for n in prange(n_batch):
            for co in range(n_out):
                for i in range(height):
                    row = out[n, co, i]
                    for j in range(width):
                        row[j] = b[co]
                    for ci in range(n_in):
                        for di in range(3):
                            xrow = xp[n, ci, i + di]
                            for dj in range(3):
                                coef = w[co, ci, di, dj]
                                for j in range(width):
                                    row[j] += coef * xrow[j + dj]

    @njit(parallel=True, **_njit_opts())
    def _conv2d_backward_w_nb(xp, dout, dw, db):
        n_batch, n_in, _, _ = xp.shape
        n_out, height, width = dout.shape[1], dout.shape[2], dout.shape[3]
        for co in prange(n_out):
            acc_b = 0.0
            for n in range(n_batch):
                for i in range(height):
                    for j in range(width):
                        acc_b += dout[n, co, i, j]
            db[co] = acc_b
            for ci in range(n_in):
                for di in range(3):
                    for dj in range(3):
                        acc = 0.0
                        for n in range(n_batch):
                            for i in range(height):
                                drow = dout[n, co, i]
                                xrow = xp[n, ci, i + di]
                                for j in range(width):
                                    acc += drow[j] * xrow[j + dj]
                        dw[co, ci, di, dj] = acc

    @njit(parallel=True, **_njit_opts())
    def _sqdist_nb(queries, train, out):
        nq, dim = queries.shape
        nt = train.shape[0]
        for qi in prange(nq):
            for ti in range(nt):
                acc = 0.0
                for d in range(dim):
                    diff = queries[qi, d] - train[ti, d]
                    acc += diff * diff
                out[qi, ti] = acc

    @njit(cache=True, nogil=True)
    def _smo_solve_nb(kmat, y, c, tol, max_iter):
        n = y.shape[0]
        alpha = np.zeros(n)
        grad = -np.ones(n)
        eps = 1e-12
        it = 0
        while it < max_iter:
            i = -1
            j = -1
            gmax = -1e300
            gmin = 1e300
            for t in range(n):
                yg = -y[t] * grad[t]
                if (y[t] > 0 and alpha[t] < c - eps) or (y[t] < 0 and alpha[t] > eps):
                    if yg > gmax:
                        gmax = yg
                        i = t
                if (y[t] < 0 and alpha[t] < c - eps) or (y[t] > 0 and alpha[t] > eps):
                    if yg < gmin:
                        gmin = yg
                        j = t
            if i < 0 or j < 0 or gmax - gmin <= tol:
                break
            quad = kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j]
            if quad < eps:
                quad = eps
            lam = (gmax - gmin) / quad
            if y[i] > 0:
                cap = c - alpha[i]
            else:
                cap = alpha[i]
            if cap < lam:
                lam = cap
            if y[j] > 0:
                cap = alpha[j]
            else:
                cap = c - alpha[j]
            if cap < lam:
                lam = cap
            alpha[i] += y[i] * lam
            alpha[j] -= y[j] * lam
            for t in range(n):
                grad[t] += lam * y[t] * (kmat[t, i] - kmat[t, j])
            it += 1
        return alpha, grad, it

    def conv2d_forward_numba(x, w, b):
        out = np.empty(x.shape[:1] + (w.shape[0],) + x.shape[2:], dtype=x.dtype)
        _conv2d_forward_nb(_pad_hw(x), w, b, out)
        return out

    def conv2d_backward_numba(x, w, dout):
        dw = np.empty_like(w)
        db = np.empty(w.shape[0], dtype=w.dtype)
        _conv2d_backward_w_nb(_pad_hw(x), dout, dw, db)
        # input gradient is a correlation with channel-swapped, flipped kernels
        wback = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx = np.empty_like(x)
        _conv2d_forward_nb(
            _pad_hw(dout), wback, np.zeros(wback.shape[0], dtype=w.dtype), dx
        )
        return dx, dw, db

    def sqdist_numba(queries, train):
        q = np.ascontiguousarray(queries, dtype=np.float64)
        t = np.ascontiguousarray(train, dtype=np.float64)
        out = np.empty((q.shape[0], t.shape[0]))
        _sqdist_nb(q, t, out)
        return out

    def smo_solve_numba(kmat, y, c, tol, max_iter):
        return _smo_solve_nb(
            np.ascontiguousarray(kmat, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            float(c),
            float(tol),
            int(max_iter),
        )


if BACKEND == "numba":
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
    sqdist = sqdist_numba
    smo_solve = smo_solve_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
    sqdist = sqdist_numpy
    smo_solve = smo_solve_numpy
