"""Backend parity: the compiled and NumPy warp kernels must agree.

The forward warp is compared bitwise (per-pixel arithmetic is identical
in both backends, and output pixels are independent, so any execution
order gives the same bits).  The matrix gradient accumulates a global
sum whose order differs between backends, so it is compared to 1e-12.
"""

import numpy as np
import pytest

from fronto import geom
from fronto._kernels import _warp_np
from fronto.geom import DisplacementVector

cy = pytest.importorskip("fronto._kernels._warp_cy")


def _random_case(seed, size=40, channels=3):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0.0, 1.0, size=(size, size, channels))
    side_mag = rng.uniform(-size / 3, size / 3, size=2)
    if rng.random() < 0.5:
        d = DisplacementVector.of(side_mag[0], 0, 0, side_mag[1])
    else:
        d = DisplacementVector.of(0, side_mag[0], side_mag[1], 0)
    H = geom.displacement_to_homography(d, size, size)
    G = np.linalg.inv(H.matrix)
    return src, G


class TestForwardParity:
    @pytest.mark.parametrize("seed", range(8))
    def test_bitwise_equal_outputs(self, seed):
        src, G = _random_case(seed)
        out_np, valid_np = _warp_np.warp_bilinear(src, G, 40, 40)
        out_cy, valid_cy = cy.warp_bilinear(src, G, 40, 40)
        assert np.array_equal(valid_np, valid_cy)
        assert np.array_equal(out_np, out_cy)

    def test_identity_is_lossless_both_backends(self):
        rng = np.random.default_rng(3)
        src = rng.uniform(0, 1, size=(17, 23, 3))
        for backend in (_warp_np, cy):
            out, valid = backend.warp_bilinear(src, np.eye(3), 17, 23)
            assert np.array_equal(out, src)
            assert valid.all()

    def test_grayscale_channel_count(self):
        src, G = _random_case(5, channels=1)
        out_np, _ = _warp_np.warp_bilinear(src, G, 40, 40)
        out_cy, _ = cy.warp_bilinear(src, G, 40, 40)
        assert out_np.shape == (40, 40, 1)
        assert np.array_equal(out_np, out_cy)

    def test_non_square_output(self):
        src, G = _random_case(11)
        out_np, valid_np = _warp_np.warp_bilinear(src, G, 25, 31)
        out_cy, valid_cy = cy.warp_bilinear(src, G, 25, 31)
        assert out_np.shape == (25, 31, 3)
        assert np.array_equal(out_np, out_cy)
        assert np.array_equal(valid_np, valid_cy)


class TestGradientParity:
    @pytest.mark.parametrize("seed", range(8))
    def test_grad_matrix_close(self, seed):
        src, G = _random_case(seed)
        rng = np.random.default_rng(seed + 100)
        upstream = rng.normal(size=(40, 40, 3))
        g_np = _warp_np.warp_bilinear_grad_matrix(src, G, upstream)
        g_cy = cy.warp_bilinear_grad_matrix(src, G, upstream)
        scale = max(np.abs(g_np).max(), 1.0)
        assert np.allclose(g_np, g_cy, rtol=1e-12, atol=1e-12 * scale)

    def test_zero_upstream_is_zero(self):
        src, G = _random_case(2)
        zero = np.zeros((40, 40, 3))
        assert np.array_equal(_warp_np.warp_bilinear_grad_matrix(src, G, zero), np.zeros((3, 3)))
        assert np.array_equal(cy.warp_bilinear_grad_matrix(src, G, zero), np.zeros((3, 3)))


class TestBackendSelection:
    def test_active_backend_reported(self):
        from fronto import _kernels

        assert _kernels.BACKEND in ("numpy", "cython")

    def test_forced_numpy_selection(self):
        import os
        import subprocess
        import sys

        code = "import fronto._kernels as k; print(k.BACKEND)"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={**os.environ, "FRONTO_KERNELS": "numpy"},
            capture_output=True,
            text=True,
        )
        assert out.stdout.strip() == "numpy"
