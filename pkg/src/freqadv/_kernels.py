"""Hot numeric kernels with two interchangeable backends.

The heavy inner loops of the package live here: batched small-matrix
transforms for blockwise spectra and 3x3 same-padded convolutions for the
reference CNN. Each kernel has a numba @njit implementation and a vectorized
pure-numpy twin. The numba path is the default when numba imports; setting
the environment variable FREQADV_NO_NUMBA=1 (or any value other than 0/false)
before import forces the numpy path. Both paths are deterministic for a fixed
backend; they may differ from each other in the last few ulps because the
summation order differs.

All kernels take and return float64 C-contiguous arrays.
"""

import os

import numpy as np

_flag = os.environ.get("FREQADV_NO_NUMBA", "").strip().lower()
_DISABLED = _flag not in ("", "0", "false", "no")

NUMBA_ENABLED = False
if not _DISABLED:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is an install-time dep
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):  # noqa: D103 - stand-in decorator, numpy path
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    """Name of the active kernel backend: 'numba' or 'numpy'."""
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# batched block transform: out[k] = left @ blocks[k] @ right
# ---------------------------------------------------------------------------

def block_transform_numpy(blocks: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Apply left @ B @ right to every (N, N) block of a (nb, N, N) batch."""
    return np.ascontiguousarray(left @ blocks @ right)


@njit(cache=True)
def _block_transform_jit(blocks, left, right, out):
    nb, n, _ = blocks.shape
    tmp = np.empty((n, n), dtype=np.float64)
    for k in range(nb):
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for t in range(n):
                    acc += left[i, t] * blocks[k, t, j]
                tmp[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for t in range(n):
                    acc += tmp[i, t] * right[t, j]
                out[k, i, j] = acc


def block_transform_numba(blocks: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    out = np.empty_like(blocks)
    _block_transform_jit(
        np.ascontiguousarray(blocks),
        np.ascontiguousarray(left),
        np.ascontiguousarray(right),
        out,
    )
    return out


# ---------------------------------------------------------------------------
# 3x3 convolution, stride 1, zero padding ("same"), channels-last batches
# x: (B, H, W, Cin)  w: (3, 3, Cin, Cout)  b: (Cout,)  y: (B, H, W, Cout)
# ---------------------------------------------------------------------------

def conv3x3_forward_numpy(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    bs, h, wd, ci = x.shape
    co = w.shape[3]
    xp = np.zeros((bs, h + 2, wd + 2, ci), dtype=np.float64)
    xp[:, 1:-1, 1:-1, :] = x
    y = np.empty((bs, h, wd, co), dtype=np.float64)
    y[...] = b
    for di in range(3):
        for dj in range(3):
            y += xp[:, di:di + h, dj:dj + wd, :] @ w[di, dj]
    return y


@njit(cache=True)
def _conv3x3_forward_jit(x, w, b, y):
    bs, h, wd, ci = x.shape
    co = w.shape[3]
    for n in range(bs):
        for i in range(h):
            for j in range(wd):
                for o in range(co):
                    acc = b[o]
                    for di in range(3):
                        ii = i + di - 1
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(3):
                            jj = j + dj - 1
                            if jj < 0 or jj >= wd:
                                continue
                            for c in range(ci):
                                acc += x[n, ii, jj, c] * w[di, dj, c, o]
                    y[n, i, j, o] = acc


def conv3x3_forward_numba(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    bs, h, wd, _ = x.shape
    y = np.empty((bs, h, wd, w.shape[3]), dtype=np.float64)
    _conv3x3_forward_jit(
        np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b), y
    )
    return y


def conv3x3_input_grad_numpy(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of the conv output w.r.t. its input (full correlation with w)."""
    bs, h, wd, co = dy.shape
    ci = w.shape[2]
    dyp = np.zeros((bs, h + 2, wd + 2, co), dtype=np.float64)
    dyp[:, 1:-1, 1:-1, :] = dy
    dx = np.zeros((bs, h, wd, ci), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            dx += dyp[:, 2 - di:2 - di + h, 2 - dj:2 - dj + wd, :] @ w[di, dj].T
    return dx


@njit(cache=True)
def _conv3x3_input_grad_jit(dy, w, dx):
    bs, h, wd, co = dy.shape
    ci = w.shape[2]
    for n in range(bs):
        for i in range(h):
            for j in range(wd):
                for c in range(ci):
                    acc = 0.0
                    for di in range(3):
                        ii = i - di + 1
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(3):
                            jj = j - dj + 1
                            if jj < 0 or jj >= wd:
                                continue
                            for o in range(co):
                                acc += dy[n, ii, jj, o] * w[di, dj, c, o]
                    dx[n, i, j, c] = acc


def conv3x3_input_grad_numba(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    bs, h, wd, _ = dy.shape
    dx = np.empty((bs, h, wd, w.shape[2]), dtype=np.float64)
    _conv3x3_input_grad_jit(np.ascontiguousarray(dy), np.ascontiguousarray(w), dx)
    return dx


def conv3x3_param_grad_numpy(x: np.ndarray, dy: np.ndarray):
    """Gradients w.r.t. the conv weights and bias."""
    bs, h, wd, ci = x.shape
    co = dy.shape[3]
    xp = np.zeros((bs, h + 2, wd + 2, ci), dtype=np.float64)
    xp[:, 1:-1, 1:-1, :] = x
    dw = np.empty((3, 3, ci, co), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, di:di + h, dj:dj + wd, :]
            dw[di, dj] = np.einsum("nijc,nijo->co", patch, dy)
    db = dy.sum(axis=(0, 1, 2))
    return dw, db


@njit(cache=True)
def _conv3x3_param_grad_jit(x, dy, dw, db):
    bs, h, wd, ci = x.shape
    co = dy.shape[3]
    for n in range(bs):
        for i in range(h):
            for j in range(wd):
                for o in range(co):
                    g = dy[n, i, j, o]
                    db[o] += g
                    for di in range(3):
                        ii = i + di - 1
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(3):
                            jj = j + dj - 1
                            if jj < 0 or jj >= wd:
                                continue
                            for c in range(ci):
                                dw[di, dj, c, o] += x[n, ii, jj, c] * g


def conv3x3_param_grad_numba(x: np.ndarray, dy: np.ndarray):
    ci = x.shape[3]
    co = dy.shape[3]
    dw = np.zeros((3, 3, ci, co), dtype=np.float64)
    db = np.zeros(co, dtype=np.float64)
    _conv3x3_param_grad_jit(np.ascontiguousarray(x), np.ascontiguousarray(dy), dw, db)
    return dw, db


if NUMBA_ENABLED:
    block_transform = block_transform_numba
    conv3x3_forward = conv3x3_forward_numba
    conv3x3_input_grad = conv3x3_input_grad_numba
    conv3x3_param_grad = conv3x3_param_grad_numba
else:
    block_transform = block_transform_numpy
    conv3x3_forward = conv3x3_forward_numpy
    conv3x3_input_grad = conv3x3_input_grad_numpy
    conv3x3_param_grad = conv3x3_param_grad_numpy


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    blocks = np.zeros((1, 2, 2))
    eye = np.eye(2)
    block_transform(blocks, eye, eye)
    x = np.zeros((1, 4, 4, 1))
    w = np.zeros((3, 3, 1, 2))
    b = np.zeros(2)
    y = conv3x3_forward(x, w, b)
    conv3x3_input_grad(y, w)
    conv3x3_param_grad(x, y)
