import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

import sbmpot
from sbmpot import _backend, _kernels_py
from sbmpot.geometry import Domain
from sbmpot.kernels import exit_time_constant, poisson_constant


def compiled():
    try:
        return _backend.get("compiled")
    except ImportError:
        pytest.skip("compiled backend not built")


def test_default_backend_name():
    assert sbmpot.BACKEND in ("compiled", "python")
    assert _backend.get() is _backend.kernels
    assert _backend.get("python") is _kernels_py
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_env_forces_fallback():
    code = "import sbmpot; print(sbmpot.BACKEND)"
    r = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                       env={**os.environ, "SBMPOT_BACKEND": "python"})
    assert r.stdout.strip() == "python"


def test_sdf_batch_agrees():
    K = compiled()
    D = Domain.parse("diff(union(ball(0 0; 1), box(0 -0.5; 2 0.5)), erode(ball(1.5 0; 0.4); 0.1))")
    x = np.random.default_rng(0).uniform(-2, 2.5, (1000, 2))
    np.testing.assert_allclose(K.sdf_batch(D.program, x), _kernels_py.sdf_batch(D.program, x), atol=1e-13)


def test_wos_accumulator_same_law():
    K = compiled()
    D = Domain.parse("box(-1 -1; 1 1)")
    x0 = np.tile([0.5, 0.5], (20000, 1))
    z = np.array([[2.0, 0.0]])
    out = []
    for mod in (K, _kernels_py):
        r = mod.wos_exit(D.program, x0, 1.0, exit_time_constant(2, 1.0), poisson_constant(2, 1.0), 10 ** 5, np.inf,
                         np.random.default_rng(1), z, np.zeros(1), False)
        out.append(r)
    for key in ("occ",):
        a, b = out[0][key], out[1][key]
        assert stats.ks_2samp(a, b).pvalue > 1e-3
    a, b = out[0]["acc"][:, 0], out[1]["acc"][:, 0]
    assert abs(a.mean() - b.mean()) < 4 * np.hypot(a.std() / np.sqrt(a.size), b.std() / np.sqrt(b.size))
    assert stats.ks_2samp(out[0]["steps"], out[1]["steps"]).pvalue > 1e-3
