"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from diffscm import kernels
from diffscm._ext import _kernels_py

compiled = pytest.importorskip("diffscm._ext._kernels")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_silu_forward_backward_agree(rng):
    z = rng.normal(scale=5, size=(17, 9))
    z[0, :3] = [-800.0, 0.0, 800.0]
    a_c, s_c = compiled.silu_forward(z)
    a_p, s_p = _kernels_py.silu_forward(z)
    np.testing.assert_allclose(a_c, a_p, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(s_c, s_p, rtol=1e-13, atol=1e-300)
    g = rng.normal(size=z.shape)
    np.testing.assert_allclose(compiled.silu_backward(g, z, s_p), _kernels_py.silu_backward(g, z, s_p), rtol=1e-13)


def test_adam_update_agrees(rng):
    n = 1000
    p1 = rng.normal(size=n)
    p2 = p1.copy()
    m1, v1 = rng.normal(size=n), rng.random(n)
    m2, v2 = m1.copy(), v1.copy()
    g = rng.normal(size=n)
    compiled.adam_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 1.3)
    _kernels_py.adam_update(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 1.3)
    np.testing.assert_allclose(p1, p2, rtol=1e-13)
    np.testing.assert_allclose(m1, m2, rtol=1e-13)
    np.testing.assert_allclose(v1, v2, rtol=1e-13)


@pytest.mark.parametrize("exclude", [False, True])
def test_rbf_sum_agrees(rng, exclude):
    x, y = rng.normal(size=(40, 3)), rng.normal(size=(30, 3))
    a = compiled.rbf_sum(x, y, 0.7, exclude)
    b = _kernels_py.rbf_sum(x, y, 0.7, exclude)
    assert a == pytest.approx(b, rel=1e-12)


def test_use_backend_switches_and_restores():
    prev = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.BACKEND == "python"
        kernels.use_backend("cython")
        assert kernels.BACKEND == "cython"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(prev)


def test_training_identical_under_both_backends():
    from diffscm.diffusion import DiffusionNodeModel, make_schedule, train_node

    prev = kernels.BACKEND
    out = {}
    try:
        for backend in ("python", "cython"):
            kernels.use_backend(backend)
            rng = np.random.default_rng(1)
            pa = rng.normal(size=(200, 1))
            x = np.sin(pa) + 0.3 * rng.normal(size=(200, 1))
            m = DiffusionNodeModel.create(1, 1, 1, make_schedule(), rng, hidden=(16, 16))
            _, losses = train_node(m, x, pa, 3, 64, 1e-3, rng)
            out[backend] = (m.net.params.copy(), losses)
    finally:
        kernels.use_backend(prev)
    np.testing.assert_allclose(out["python"][0], out["cython"][0], rtol=1e-9, atol=1e-12)
