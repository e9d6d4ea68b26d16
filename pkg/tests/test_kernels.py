"""The compiled kernels and the pure-Python fallback compute the same results."""
import numpy as np
import pytest

from nudgefem import _fallback, kernels
from nudgefem import mesh as msh

try:
    from nudgefem import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
    if _kernels is None:
        assert kernels.BACKEND == "python"


@pytest.fixture
def advection_data():
    rng = np.random.default_rng(0)
    E, Q, na, nb = 50, 7, 3, 6
    return (rng.random((Q, na)), rng.standard_normal((E, Q, nb, 2)),
            rng.standard_normal((E, Q, 2)), rng.random((E, Q)))


def test_fallback_advection_matches_einsum(advection_data):
    phi, g, w, W = advection_data
    ref = np.einsum("eq,qi,eqd,eqjd->eij", W, phi, w, g)
    assert np.allclose(_fallback.advection_local(phi, g, w, W), ref, atol=1e-14)


@needs_compiled
def test_advection_equivalent(advection_data):
    a = _kernels.advection_local(*advection_data)
    b = _fallback.advection_local(*advection_data)
    assert np.max(np.abs(a - b)) < 1e-13


@needs_compiled
def test_scatter_equivalent():
    rng = np.random.default_rng(1)
    pos = rng.integers(0, 40, 1000)
    val = rng.standard_normal(1000)
    assert np.array_equal(_kernels.scatter_add(pos, val, 40), _fallback.scatter_add(pos, val, 40))
    with pytest.raises(IndexError):
        _kernels.scatter_add(np.array([40]), np.array([1.0]), 40)


@needs_compiled
def test_locate_equivalent():
    m = msh.barycentric_refine(msh.build_structured(9))
    idx = m.cell_index()
    pts = np.random.default_rng(2).random((400, 2))
    args = (pts, m.vertices, m.triangles, idx.bin_of(pts), idx.offsets, idx.triangles)
    t1, b1 = _kernels.locate_points(*args)
    t2, b2 = _fallback.locate_points(*args)
    assert np.array_equal(t1, t2)
    assert np.allclose(b1, b2, atol=1e-14)


def test_environment_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, NUDGEFEM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from nudgefem import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
