"""Numeric kernels: numpy/numba agreement, oracle checks, backend selection.

Both implementations are importable regardless of which one the package
selected at import time, so the agreement tests always run. Cross-backend
agreement is allclose, not byte equality: summation order differs.
"""

import os
import subprocess
import sys

import numpy as np

from freqadv import _kernels

ATOL = 1e-12


def _conv_oracle(x, w, b):
    # literal nested-loop 3x3 same-padded convolution
    bs, h, wd, ci = x.shape
    co = w.shape[3]
    y = np.zeros((bs, h, wd, co))
    for n in range(bs):
        for i in range(h):
            for j in range(wd):
                for o in range(co):
                    acc = b[o]
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < wd:
                                for c in range(ci):
                                    acc += x[n, ii, jj, c] * w[di, dj, c, o]
                    y[n, i, j, o] = acc
    return y


def _rand_conv_case(seed, bs=2, h=6, wd=5, ci=2, co=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((bs, h, wd, ci))
    w = rng.standard_normal((3, 3, ci, co))
    b = rng.standard_normal(co)
    return x, w, b


class TestBlockTransform:
    def test_paths_agree(self):
        rng = np.random.default_rng(0)
        blocks = rng.standard_normal((7, 8, 8))
        left = rng.standard_normal((8, 8))
        right = rng.standard_normal((8, 8))
        a = _kernels.block_transform_numpy(blocks, left, right)
        b = _kernels.block_transform_numba(blocks, left, right)
        assert np.allclose(a, b, rtol=0.0, atol=ATOL)

    def test_matches_per_block_matmul(self):
        rng = np.random.default_rng(1)
        blocks = rng.standard_normal((4, 5, 5))
        left = rng.standard_normal((5, 5))
        right = rng.standard_normal((5, 5))
        out = _kernels.block_transform(blocks, left, right)
        for k in range(4):
            assert np.allclose(out[k], left @ blocks[k] @ right,
                               rtol=0.0, atol=ATOL)


class TestConv3x3:
    def test_forward_paths_agree(self):
        x, w, b = _rand_conv_case(2)
        a = _kernels.conv3x3_forward_numpy(x, w, b)
        c = _kernels.conv3x3_forward_numba(x, w, b)
        assert np.allclose(a, c, rtol=0.0, atol=ATOL)

    def test_forward_matches_loop_oracle(self):
        x, w, b = _rand_conv_case(3, bs=1, h=5, wd=4)
        out = _kernels.conv3x3_forward(x, w, b)
        assert np.allclose(out, _conv_oracle(x, w, b), rtol=0.0, atol=ATOL)

    def test_zero_padding_at_borders(self):
        # an impulse in the corner only reaches the kernel taps that fit
        x = np.zeros((1, 4, 4, 1))
        x[0, 0, 0, 0] = 1.0
        w = np.zeros((3, 3, 1, 1))
        w[0, 0, 0, 0] = 5.0  # tap needs input at (i-1, j-1): off-image at (0,0)
        out = _kernels.conv3x3_forward(x, w, np.zeros(1))
        assert out[0, 0, 0, 0] == 0.0
        assert out[0, 1, 1, 0] == 5.0

    def test_input_grad_paths_agree(self):
        x, w, _ = _rand_conv_case(4)
        dy = np.random.default_rng(5).standard_normal(
            (x.shape[0], x.shape[1], x.shape[2], w.shape[3])
        )
        a = _kernels.conv3x3_input_grad_numpy(dy, w)
        b = _kernels.conv3x3_input_grad_numba(dy, w)
        assert np.allclose(a, b, rtol=0.0, atol=ATOL)

    def test_input_grad_is_adjoint_of_forward(self):
        # with zero bias the conv is linear in x, so <conv(x), dy> == <x, grad>
        x, w, _ = _rand_conv_case(6)
        rng = np.random.default_rng(7)
        dy = rng.standard_normal((x.shape[0], x.shape[1], x.shape[2], w.shape[3]))
        y = _kernels.conv3x3_forward(x, w, np.zeros(w.shape[3]))
        dx = _kernels.conv3x3_input_grad(dy, w)
        assert abs((y * dy).sum() - (x * dx).sum()) < 1e-10

    def test_param_grad_paths_agree(self):
        x, w, _ = _rand_conv_case(8)
        rng = np.random.default_rng(9)
        dy = rng.standard_normal((x.shape[0], x.shape[1], x.shape[2], w.shape[3]))
        dw_a, db_a = _kernels.conv3x3_param_grad_numpy(x, dy)
        dw_b, db_b = _kernels.conv3x3_param_grad_numba(x, dy)
        assert np.allclose(dw_a, dw_b, rtol=0.0, atol=ATOL)
        assert np.allclose(db_a, db_b, rtol=0.0, atol=ATOL)

    def test_param_grad_directional_derivative(self):
        # conv is linear in w: <dy, conv(x; E, 0)> == <dw, E> for any direction E
        x, w, _ = _rand_conv_case(10)
        rng = np.random.default_rng(11)
        dy = rng.standard_normal((x.shape[0], x.shape[1], x.shape[2], w.shape[3]))
        e = rng.standard_normal(w.shape)
        dw, db = _kernels.conv3x3_param_grad(x, dy)
        lhs = (dy * _kernels.conv3x3_forward(x, e, np.zeros(w.shape[3]))).sum()
        assert abs(lhs - (dw * e).sum()) < 1e-10
        assert np.allclose(db, dy.sum(axis=(0, 1, 2)), rtol=0.0, atol=ATOL)


class TestBackendSelection:
    def test_backend_name_consistent(self):
        assert _kernels.backend() in ("numba", "numpy")
        assert (_kernels.backend() == "numba") == _kernels.NUMBA_ENABLED

    def test_env_flag_forces_numpy(self):
        env = dict(os.environ, FREQADV_NO_NUMBA="1")
        out = subprocess.run(
            [sys.executable, "-c",
             "from freqadv import _kernels; print(_kernels.backend())"],
            capture_output=True, text=True, env=env, check=True,
        )
        assert out.stdout.strip() == "numpy"

    def test_default_backend_is_numba_when_available(self):
        env = {k: v for k, v in os.environ.items() if k != "FREQADV_NO_NUMBA"}
        out = subprocess.run(
            [sys.executable, "-c",
             "from freqadv import _kernels; print(_kernels.backend())"],
            capture_output=True, text=True, env=env, check=True,
        )
        assert out.stdout.strip() == "numba"

    def test_warmup_runs(self):
        _kernels.warmup()
