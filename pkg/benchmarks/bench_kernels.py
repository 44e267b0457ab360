"""Compare the compiled and pure-numpy im2col / col2im kernels.

Run from the repository root after building the extension::

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes mirror the convolutions of one desk-scale denoiser pass. Each line
reports the best-of-N time per call for both backends, their ratio and
whether the outputs are bit-identical.
"""

import argparse
import timeit

import numpy as np

from unit_ddpm.numeric import _fallback
from unit_ddpm.numeric.kernels import native_available

CASES = [
    # (B, C, H, k, stride, lo, hi)
    (8, 2, 16, 3, 1, 1, 1),
    (8, 16, 16, 3, 1, 1, 1),
    (8, 16, 16, 3, 2, 1, 0),
    (8, 32, 8, 3, 1, 1, 1),
    (8, 64, 4, 3, 1, 1, 1),
    (16, 32, 16, 3, 1, 1, 1),
]


def best(fn, repeat: int) -> float:
    number = 20
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not native_available():
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    from unit_ddpm.numeric import _kernels as native

    rng = np.random.default_rng(0)
    print(f"{'case (B,C,H,k,s,lo,hi)':<28}{'op':<8}{'native ms':>11}{'numpy ms':>11}{'speedup':>9}  identical")
    for case in CASES:
        B, C, H, k, s, lo, hi = case
        x = rng.standard_normal((B, C, H, H))
        cols = native.im2col(x, k, s, lo, hi)
        g = rng.standard_normal(cols.shape)
        pairs = {
            "im2col": (lambda: native.im2col(x, k, s, lo, hi), lambda: _fallback.im2col(x, k, s, lo, hi)),
            "col2im": (lambda: native.col2im(g, x.shape, k, s, lo, hi), lambda: _fallback.col2im(g, x.shape, k, s, lo, hi)),
        }
        for op, (fn_native, fn_numpy) in pairs.items():
            same = np.array_equal(fn_native(), fn_numpy())
            tn, tp = best(fn_native, args.repeat), best(fn_numpy, args.repeat)
            print(f"{str(case):<28}{op:<8}{tn * 1e3:>11.3f}{tp * 1e3:>11.3f}{tp / tn:>8.2f}x  {same}")


if __name__ == "__main__":
    main()
