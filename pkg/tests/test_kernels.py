import os
import subprocess
import sys

import numpy as np
import pytest

from pseudopost import _kernels

needs_compiled = pytest.mark.skipif(not _kernels.HAVE_COMPILED, reason="extension not built")


def problem(n=300, D=2, seed=0):
    rng = np.random.default_rng(seed)
    mean = rng.normal(0, 1, (n, D))
    y = rng.poisson(np.exp(mean)).astype(float)
    psi = np.log(y + 0.5)
    w = rng.uniform(0.2, 3.0, n)
    A = rng.standard_normal((D, D))
    chol = np.linalg.cholesky(A @ A.T + D * np.eye(D))
    return psi, mean, y, w, chol


def test_uniforms_in_open_interval():
    u = _kernels.hash_uniforms(123, np.repeat(np.arange(50), 40), np.tile(np.arange(40), 50),
                               backend="python")
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.03


@needs_compiled
def test_backends_share_uniform_stream():
    units = np.arange(1000, dtype=np.uint64)
    ctr = (units * 7) % 13
    a = _kernels.hash_uniforms(2**63 + 5, units, ctr, backend="python")
    b = _kernels.hash_uniforms(2**63 + 5, units, ctr, backend="cython")
    np.testing.assert_array_equal(a, b)


@needs_compiled
def test_backends_agree_on_sweep():
    args = problem()
    a, sa = _kernels.python_psi_sweep(*args, key=99)
    b, sb = _kernels.compiled_psi_sweep(*args, key=99)
    np.testing.assert_array_equal(sa, sb)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@needs_compiled
def test_thread_count_invariance():
    args = problem(n=1000)
    one, _ = _kernels.compiled_psi_sweep(*args, key=7, n_threads=1)
    four, _ = _kernels.compiled_psi_sweep(*args, key=7, n_threads=4)
    np.testing.assert_array_equal(one, four)


def test_sweep_does_not_mutate_inputs():
    psi, mean, y, w, chol = problem(n=20)
    before = psi.copy()
    new, status = _kernels.psi_sweep(psi, mean, y, w, chol, key=1)
    np.testing.assert_array_equal(psi, before)
    assert np.all(status == 0)
    assert not np.array_equal(new, before)


def test_sweep_flags_nonfinite_current_state():
    psi, mean, y, w, chol = problem(n=5)
    psi[2, 0] = 800.0          # beyond the overflow guard
    new, status = _kernels.psi_sweep(psi, mean, y, w, chol, key=1)
    assert status[2] == 1
    assert np.all(status[[0, 1, 3, 4]] == 0)


def test_shape_validation():
    psi, mean, y, w, chol = problem(n=5)
    with pytest.raises(ValueError):
        _kernels.psi_sweep(psi, mean[:4], y, w, chol, key=1)


def test_env_var_forces_fallback():
    env = dict(os.environ, PSEUDOPOST_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from pseudopost import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
