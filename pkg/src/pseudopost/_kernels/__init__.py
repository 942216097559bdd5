"""Hot loop for the latent log-mean update.

The compiled extension is used when it imports; otherwise the numpy
fallback takes over. Set ``PSEUDOPOST_PURE_PYTHON=1`` to force the
fallback.
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _psi_sweep as _compiled
except ImportError:  # extension not built
    _compiled = None

if os.environ.get("PSEUDOPOST_PURE_PYTHON", "") not in ("", "0"):
    _active = None
else:
    _active = _compiled

BACKEND = "cython" if _active is not None else "python"
HAVE_COMPILED = _compiled is not None


def _prepare(psi, mean, y, w, chol):
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    chol = np.ascontiguousarray(chol, dtype=np.float64)
    if psi.shape != mean.shape or psi.shape != y.shape:
        raise ValueError("psi, mean and y must share shape (n, D)")
    if w.shape != (psi.shape[0],):
        raise ValueError("w must have length n")
    if chol.shape != (psi.shape[1], psi.shape[1]):
        raise ValueError("chol must be D x D")
    return psi, mean, y, w, chol


def python_psi_sweep(psi, mean, y, w, chol, key, cap=700.0, max_rounds=2000, n_threads=1):
    """Fallback sweep; returns ``(new_psi, status)`` without touching inputs."""
    psi, mean, y, w, chol = _prepare(psi, mean, y, w, chol)
    psi = psi.copy()
    status = _fallback.psi_sweep(psi, mean, y, w, chol, int(key), cap, max_rounds)
    return psi, status


def compiled_psi_sweep(psi, mean, y, w, chol, key, cap=700.0, max_rounds=2000, n_threads=1):
    """Compiled sweep; raises ``RuntimeError`` if the extension is missing."""
    if _compiled is None:
        raise RuntimeError("compiled kernel not available; build the extension")
    psi, mean, y, w, chol = _prepare(psi, mean, y, w, chol)
    psi = psi.copy()
    status = _compiled.psi_sweep(psi, mean, y, w, chol, np.uint64(key), cap,
                                 max_rounds, n_threads)
    return psi, np.asarray(status)


def psi_sweep(psi, mean, y, w, chol, key, cap=700.0, max_rounds=2000, n_threads=1):
    """One elliptical slice move per row of ``psi`` under the active backend.

    Row ``i`` targets ``w[i] * sum_d (y[i, d] * psi[i, d] - exp(psi[i, d]))``
    against the prior ``N(mean[i], (w[i] * Lambda)^-1)`` with
    ``Lambda = chol @ chol.T``. Returns ``(new_psi, status)``.
    """
    if _active is None:
        return python_psi_sweep(psi, mean, y, w, chol, key, cap, max_rounds, n_threads)
    return compiled_psi_sweep(psi, mean, y, w, chol, key, cap, max_rounds, n_threads)


def hash_uniforms(key, units, counters, backend=None):
    backend = backend or BACKEND
    units = np.ascontiguousarray(units, dtype=np.uint64)
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel not available")
        return np.asarray(_compiled.uniforms(np.uint64(key), units, counters))
    return _fallback.uniforms(key, units, counters)
