"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``STABDESIGN_NUMBA`` is not set to ``0``/``false``/``off``.
Both implementations are always importable (``numpy_impl`` and, when
available, ``numba_impl``) so tests and the benchmark can compare them.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

__all__ = [
    "USE_NUMBA",
    "contact_pairs",
    "masked_softmax",
    "softmax_backward",
    "rbf_kernel",
    "numpy_impl",
    "numba_impl",
]


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def _np_contact_pairs(coords: np.ndarray, cutoff: float) -> np.ndarray:
    c = np.ascontiguousarray(coords, dtype=np.float64)
    x, y, z = c[:, 0], c[:, 1], c[:, 2]
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    dz = z[:, None] - z[None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    iu, ju = np.triu_indices(len(c), k=1)
    keep = dist[iu, ju] <= cutoff
    return np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)


def _np_masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(z - m), 0.0)
    s = np.sum(e, axis=-1, keepdims=True)
    return (e / np.where(s > 0, s, 1.0)).astype(logits.dtype, copy=False)


def _np_softmax_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return y * (gy - np.sum(gy * y, axis=-1, keepdims=True))


def _np_rbf_kernel(a: np.ndarray, b: np.ndarray, lengthscale: float, variance: float) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    np.maximum(d2, 0.0, out=d2)
    return variance * np.exp(-0.5 * d2 / (lengthscale * lengthscale))


numpy_impl = SimpleNamespace(
    contact_pairs=_np_contact_pairs,
    masked_softmax=_np_masked_softmax,
    softmax_backward=_np_softmax_backward,
    rbf_kernel=_np_rbf_kernel,
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

def _flag_enabled() -> bool:
    raw = os.environ.get("STABDESIGN_NUMBA", "1").strip().lower()
    return raw not in {"0", "false", "off", "no"}


numba_impl = None
try:  # pragma: no branch
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

if njit is not None:

    @njit(cache=True)
    def _nb_contact_pairs_core(c, cutoff):
        n = c.shape[0]
        out = np.empty((n * (n - 1) // 2, 2), dtype=np.int64)
        m = 0
        for i in range(n):
            for j in range(i + 1, n):
                dx = c[i, 0] - c[j, 0]
                dy = c[i, 1] - c[j, 1]
                dz = c[i, 2] - c[j, 2]
                if np.sqrt(dx * dx + dy * dy + dz * dz) <= cutoff:
                    out[m, 0] = i
                    out[m, 1] = j
                    m += 1
        return out[:m]

    @njit(cache=True)
    def _nb_softmax_rows(z, mask, out):
        rows, n = z.shape
        for r in range(rows):
            m = -np.inf
            for k in range(n):
                if mask[r, k] and z[r, k] > m:
                    m = z[r, k]
            s = 0.0
            for k in range(n):
                if mask[r, k]:
                    e = np.exp(z[r, k] - m)
                    out[r, k] = e
                    s += e
                else:
                    out[r, k] = 0.0
            if s > 0.0:
                for k in range(n):
                    out[r, k] = out[r, k] / s

    @njit(cache=True)
    def _nb_softmax_backward_rows(y, gy, out):
        rows, n = y.shape
        for r in range(rows):
            dot = 0.0
            for k in range(n):
                dot += gy[r, k] * y[r, k]
            for k in range(n):
                out[r, k] = y[r, k] * (gy[r, k] - dot)

    @njit(cache=True)
    def _nb_rbf(a, b, inv_two_l2, variance, out):
        na, d = a.shape
        nb = b.shape[0]
        for i in range(na):
            for j in range(nb):
                s = 0.0
                for k in range(d):
                    t = a[i, k] - b[j, k]
                    s += t * t
                out[i, j] = variance * np.exp(-s * inv_two_l2)

    def _nb_contact_pairs(coords, cutoff):
        c = np.ascontiguousarray(coords, dtype=np.float64)
        return _nb_contact_pairs_core(c, float(cutoff))

    def _nb_masked_softmax(logits, mask):
        n = logits.shape[-1]
        mask_b = np.broadcast_to(mask, logits.shape)
        z2 = np.ascontiguousarray(logits).reshape(-1, n)
        m2 = np.ascontiguousarray(mask_b).reshape(-1, n)
        out = np.empty_like(z2)
        _nb_softmax_rows(z2, m2, out)
        return out.reshape(logits.shape)

    def _nb_softmax_backward(y, gy):
        n = y.shape[-1]
        y2 = np.ascontiguousarray(y).reshape(-1, n)
        g2 = np.ascontiguousarray(gy, dtype=y.dtype).reshape(-1, n)
        out = np.empty_like(y2)
        _nb_softmax_backward_rows(y2, g2, out)
        return out.reshape(y.shape)

    def _nb_rbf_kernel(a, b, lengthscale, variance):
        a = np.ascontiguousarray(a, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        out = np.empty((a.shape[0], b.shape[0]))
        _nb_rbf(a, b, 0.5 / (lengthscale * lengthscale), float(variance), out)
        return out

    numba_impl = SimpleNamespace(
        contact_pairs=_nb_contact_pairs,
        masked_softmax=_nb_masked_softmax,
        softmax_backward=_nb_softmax_backward,
        rbf_kernel=_nb_rbf_kernel,
    )


USE_NUMBA = numba_impl is not None and _flag_enabled()
_active = numba_impl if USE_NUMBA else numpy_impl


def contact_pairs(coords: np.ndarray, cutoff: float) -> np.ndarray:
    """Index pairs ``(i, j)``, ``i < j``, whose Euclidean distance is ``<= cutoff``."""
    return _active.contact_pairs(coords, cutoff)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis; masked entries get exactly zero weight."""
    return _active.masked_softmax(logits, mask)


def softmax_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return _active.softmax_backward(y, gy)


def rbf_kernel(a: np.ndarray, b: np.ndarray, lengthscale: float = 1.0, variance: float = 1.0) -> np.ndarray:
    return _active.rbf_kernel(a, b, lengthscale, variance)
