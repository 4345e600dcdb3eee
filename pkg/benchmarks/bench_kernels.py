"""Benchmark the numba kernels against their pure-numpy fallbacks.

Both implementations are importable regardless of the FREQADV_NO_NUMBA flag,
so this script times them side by side in one process. The JIT versions are
warmed up before timing. Each row reports best-of-`--repeats` wall time per
call, the speedup, and the max abs difference of the two results as a sanity
check (the param-grad pair accumulates in the same order and matches exactly;
the others agree to rounding).

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 5] [--blocks 4096]
                                        [--batch 8] [--size 64]
"""

import argparse
import time

import numpy as np

from freqadv import _kernels


def _best_of(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _row(name, fn_numpy, fn_numba, args, repeats):
    out_np = fn_numpy(*args)
    out_nb = fn_numba(*args)
    if isinstance(out_np, tuple):
        diff = max(
            float(np.abs(a - b).max()) for a, b in zip(out_np, out_nb)
        )
    else:
        diff = float(np.abs(out_np - out_nb).max())
    t_np = _best_of(fn_numpy, args, repeats)
    t_nb = _best_of(fn_numba, args, repeats)
    return {
        "name": name,
        "numpy_ms": t_np * 1e3,
        "numba_ms": t_nb * 1e3,
        "speedup": t_np / t_nb if t_nb > 0 else float("inf"),
        "max_abs_diff": diff,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per kernel (best is kept)")
    parser.add_argument("--blocks", type=int, default=4096,
                        help="number of 8x8 blocks for the transform kernel")
    parser.add_argument("--batch", type=int, default=8,
                        help="batch size for the conv kernels")
    parser.add_argument("--size", type=int, default=64,
                        help="spatial side for the conv kernels")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not _kernels.NUMBA_ENABLED:
        print("warning: the numba backend is unavailable in this process "
              "(FREQADV_NO_NUMBA is set or numba failed to import); the "
              "'numba' columns would time uncompiled Python loops, which is "
              "not a meaningful comparison. Unset FREQADV_NO_NUMBA and rerun.")
        return 1
    _kernels.warmup()

    rng = np.random.default_rng(args.seed)
    basis = np.linalg.qr(rng.standard_normal((8, 8)))[0]
    blocks = rng.standard_normal((args.blocks, 8, 8))

    x8 = rng.standard_normal((args.batch, args.size, args.size, 8))
    w16 = rng.standard_normal((3, 3, 8, 16))
    b16 = rng.standard_normal(16)
    dy16 = rng.standard_normal((args.batch, args.size, args.size, 16))

    rows = [
        _row(
            f"block_transform ({args.blocks}x8x8)",
            _kernels.block_transform_numpy, _kernels.block_transform_numba,
            (blocks, basis, basis.T), args.repeats,
        ),
        _row(
            f"conv3x3_forward ({args.batch}x{args.size}x{args.size}, 8->16)",
            _kernels.conv3x3_forward_numpy, _kernels.conv3x3_forward_numba,
            (x8, w16, b16), args.repeats,
        ),
        _row(
            f"conv3x3_input_grad ({args.batch}x{args.size}x{args.size}, 16->8)",
            _kernels.conv3x3_input_grad_numpy,
            _kernels.conv3x3_input_grad_numba,
            (dy16, w16), args.repeats,
        ),
        _row(
            f"conv3x3_param_grad ({args.batch}x{args.size}x{args.size})",
            _kernels.conv3x3_param_grad_numpy,
            _kernels.conv3x3_param_grad_numba,
            (x8, dy16), args.repeats,
        ),
    ]

    name_w = max(len(r["name"]) for r in rows)
    header = (f"{'kernel':<{name_w}}  {'numpy ms':>10}  {'numba ms':>10}  "
              f"{'speedup':>8}  {'max|diff|':>10}")
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['name']:<{name_w}}  {r['numpy_ms']:>10.3f}  "
              f"{r['numba_ms']:>10.3f}  {r['speedup']:>7.1f}x  "
              f"{r['max_abs_diff']:>10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
