"""Compare the compiled and pure-NumPy warp kernels.

Run as a script:

    python benchmarks/bench_kernels.py [--sizes 56,224,448] [--repeats 30]

Both backends are imported directly (bypassing the env-var selection) so
one process can time them side by side and verify they agree bitwise on
the forward warp and to ~1e-12 on the matrix gradient.
"""

import argparse
import importlib.util
import statistics
import sys
import time

import numpy as np

from fronto._kernels import _warp_np


def _load_cython():
    spec = importlib.util.find_spec("fronto._kernels._warp_cy")
    if spec is None:
        return None
    import fronto._kernels._warp_cy as mod

    return mod


def make_case(size: int, channels: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0.0, 1.0, size=(size, size, channels))
    # mild vertical-displacement homography, inverse-mapped
    d = np.array([size * 0.06, 0.0, 0.0, -size * 0.04])
    from fronto import geom

    H = geom.displacement_to_homography(geom.DisplacementVector(d), size, size)
    G = geom.invert(H).matrix
    upstream = rng.uniform(-1.0, 1.0, size=(size, size, channels))
    return src, G, upstream


def time_callable(fn, repeats: int) -> dict:
    fn()  # warm up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return {
        "median_ms": statistics.median(samples),
        "best_ms": min(samples),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="56,224,448")
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args(argv)

    cy = _load_cython()
    if cy is None:
        print("compiled backend unavailable; timing the NumPy fallback only")
    sizes = [int(s) for s in args.sizes.split(",")]

    header = f"{'kernel':<26}{'size':>6}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for size in sizes:
        src, G, upstream = make_case(size)

        rows = [
            ("warp_bilinear", lambda m: (lambda: m.warp_bilinear(src, G, size, size))),
            (
                "warp_bilinear_grad_matrix",
                lambda m: (lambda: m.warp_bilinear_grad_matrix(src, G, upstream)),
            ),
        ]
        for name, bind in rows:
            np_stats = time_callable(bind(_warp_np), args.repeats)
            if cy is not None:
                cy_stats = time_callable(bind(cy), args.repeats)
                speedup = np_stats["median_ms"] / cy_stats["median_ms"]
                print(
                    f"{name:<26}{size:>6}{np_stats['median_ms']:>12.3f}"
                    f"{cy_stats['median_ms']:>12.3f}{speedup:>9.1f}x"
                )
            else:
                print(f"{name:<26}{size:>6}{np_stats['median_ms']:>12.3f}{'-':>12}{'-':>10}")

        if cy is not None:
            out_np, valid_np = _warp_np.warp_bilinear(src, G, size, size)
            out_cy, valid_cy = cy.warp_bilinear(src, G, size, size)
            if not (
                np.array_equal(out_np, out_cy) and np.array_equal(valid_np, valid_cy)
            ):
                print(f"MISMATCH: forward warp disagrees at size {size}", file=sys.stderr)
                return 1
            g_np = _warp_np.warp_bilinear_grad_matrix(src, G, upstream)
            g_cy = cy.warp_bilinear_grad_matrix(src, G, upstream)
            # entries are large sums; only summation order differs between backends
            if not np.allclose(g_np, g_cy, rtol=1e-12, atol=1e-12):
                print(f"MISMATCH: matrix gradient disagrees at size {size}", file=sys.stderr)
                return 1
    if cy is not None:
        print("backends agree: forward warp bitwise, matrix gradient to 1e-12 relative")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
