"""The numba and numpy backends of every hot kernel must agree exactly."""
import os
import subprocess
import sys

import numpy as np
import pytest

from bridgelab import _kernels
from bridgelab.pseudo import eps_adjacency

pytestmark = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("seed", range(30))
def test_dbscan_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(rng.integers(1, 80), rng.integers(1, 5)))
    adj = eps_adjacency(pts, rng.uniform(0.2, 1.5))
    min_pts = int(rng.integers(1, 6))
    a = _kernels.numba_impl["dbscan_expand"](adj, min_pts)
    b = _kernels.numpy_impl["dbscan_expand"](adj, min_pts)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(30))
def test_ap_backends_agree(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((rng.integers(1, 20), rng.integers(1, 40))) < 0.2
    ap1, f1 = _kernels.numba_impl["ap_rows"](m)
    ap2, f2 = _kernels.numpy_impl["ap_rows"](m)
    np.testing.assert_allclose(ap1, ap2, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(f1, f2)


@pytest.mark.parametrize("seed", range(30))
def test_hardest_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 12), rng.integers(1, 30)
    dist = np.round(rng.random((n, m)), 1)  # coarse values force ties
    pos = rng.random((n, m)) < 0.3
    neg = ~pos & (rng.random((n, m)) < 0.7)
    for x, y in zip(_kernels.numba_impl["hardest"](dist, pos, neg),
                    _kernels.numpy_impl["hardest"](dist, pos, neg)):
        np.testing.assert_array_equal(x, y)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, BRIDGELAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c",
                          "import bridgelab._kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
