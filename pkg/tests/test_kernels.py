import os
import subprocess
import sys

import numpy as np
import pytest

from metaemb import kernels


@pytest.mark.skipif(kernels.NUMBA_IMPLS is None, reason="numba unavailable")
def test_numba_and_numpy_paths_agree():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=(17, 23))
    target = rng.normal(size=(17, 23))
    for name in ("mse", "mae", "kl"):
        v_np, g_np = kernels.NUMPY_IMPLS[name](pred, target)
        v_nb, g_nb = kernels.NUMBA_IMPLS[name](pred, target)
        assert v_np == pytest.approx(v_nb, rel=1e-12), name
        assert np.allclose(g_np, g_nb, atol=1e-12), name
    v_np, g_np, bad_np = kernels.NUMPY_IMPLS["scp"](pred, target)
    v_nb, g_nb, bad_nb = kernels.NUMBA_IMPLS["scp"](pred, target)
    assert bad_np == bad_nb == -1
    assert v_np == pytest.approx(v_nb, rel=1e-12)
    assert np.allclose(g_np, g_nb, atol=1e-12)
    s_np = kernels.NUMPY_IMPLS["softmax_rows"](pred)
    s_nb = kernels.NUMBA_IMPLS["softmax_rows"](pred)
    assert np.allclose(s_np, s_nb, atol=1e-14)
    c_np = kernels.NUMPY_IMPLS["row_cosines"](pred, target)
    c_nb = kernels.NUMBA_IMPLS["row_cosines"](pred, target)
    assert np.allclose(c_np, c_nb, atol=1e-14)


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 9)) * 50  # large logits stress the max shift
    s = kernels.softmax_rows(x)
    assert (s > 0).all()
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_scp_zero_row_flagged():
    pred = np.array([[0.0, 0.0], [1.0, 0.0]])
    target = np.ones((2, 2))
    _, _, bad = kernels.scp_value_grad(pred, target)
    assert bad == 0


def test_row_cosines_zero_norm_gives_zero():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[1.0, 0.0], [1.0, 0.0]])
    out = kernels.row_cosines(a, b)
    assert out[0] == 0.0 and out[1] == pytest.approx(1.0)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, METAEMB_NUMBA="0")
    code = "import metaemb.kernels as k; print(k.active_backend())"
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_backend_reported():
    assert kernels.active_backend() in ("numba", "numpy")
