"""Sampling primitives shared by the Gibbs sampler.

All samplers take an explicit ``numpy.random.Generator`` so that a fixed
seed reproduces draws bit-for-bit.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError

JITTER_SCALE = 1e-8
JITTER_RETRIES = 3


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``L @ L.T`` equal to the (jittered) source."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def matrix(self) -> np.ndarray:
        return self.L @ self.L.T


def cholesky(A, what="matrix") -> CholeskyFactor:
    """Factor an SPD matrix, adding diagonal jitter on failure.

    Jitter of ``1e-8 * mean(diag(A))`` is added up to three times before
    giving up with :class:`NumericalError`.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{what} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} has non-finite entries")
    A = 0.5 * (A + A.T)
    step = JITTER_SCALE * float(np.mean(np.diag(A)))
    jitter = 0.0
    for attempt in range(JITTER_RETRIES + 1):
        try:
            L = np.linalg.cholesky(A + jitter * np.eye(A.shape[0]) if jitter else A)
        except np.linalg.LinAlgError:
            if attempt == JITTER_RETRIES or step <= 0:
                break
            jitter += step
            continue
        return CholeskyFactor(L, jitter)
    raise NumericalError(
        f"{what} is not symmetric positive definite (jitter up to {jitter:.3g} failed)")


def _as_factor(chol) -> CholeskyFactor:
    if isinstance(chol, CholeskyFactor):
        return chol
    return CholeskyFactor(np.asarray(chol, dtype=np.float64))


def sample_mvn(mean, precision_chol, rng):
    """Draw from ``N(mean, Q^-1)`` where ``Q = L L^T`` is the precision."""
    mean = np.asarray(mean, dtype=np.float64)
    L = _as_factor(precision_chol).L
    if not np.all(np.isfinite(mean)):
        raise ValueError("mean has non-finite entries")
    if L.shape != (mean.size, mean.size):
        raise ValueError(f"precision factor {L.shape} does not match mean of length {mean.size}")
    z = rng.standard_normal(mean.size)
    return mean + solve_triangular(L.T, z, lower=False)


def sample_matrix_normal(mean, row_prec_chol, col_prec_chol, rng):
    """Draw a P x D matrix whose column-stacked vector has precision
    ``col_prec (x) row_prec``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    Lr = _as_factor(row_prec_chol).L
    Lc = _as_factor(col_prec_chol).L
    P, D = mean.shape
    if Lr.shape != (P, P) or Lc.shape != (D, D):
        raise ValueError(
            f"dimension mismatch: mean {mean.shape}, row factor {Lr.shape}, col factor {Lc.shape}")
    Z = rng.standard_normal((P, D))
    # Lr^{-T} Z Lc^{-1}
    left = solve_triangular(Lr.T, Z, lower=False)
    return mean + solve_triangular(Lc.T, left.T, lower=False).T


def sample_wishart(df, scale, rng):
    """Bartlett draw from ``W_p(df, scale)``; ``df`` may be non-integer."""
    scale = np.asarray(scale, dtype=np.float64)
    p = scale.shape[0]
    if not df > p - 1:
        raise ValueError(f"Wishart df={df} must exceed dim-1={p - 1}")
    L = cholesky(scale, "Wishart scale").L
    A = np.zeros((p, p))
    # chi-square with non-integer df is a scaled gamma
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    LA = L @ A
    W = LA @ LA.T
    return 0.5 * (W + W.T)


def sample_gamma(shape, rate, rng):
    if shape <= 0 or rate <= 0:
        raise ValueError(f"gamma needs positive shape and rate, got {shape}, {rate}")
    return rng.gamma(shape, 1.0 / rate)


@dataclass
class EssTarget:
    """Gaussian prior times an arbitrary log-likelihood."""

    log_likelihood: Callable[[np.ndarray], float]
    prior_mean: np.ndarray
    prior_precision_chol: CholeskyFactor


def ess_step(current, target: EssTarget, rng, max_shrinks=10_000):
    """One elliptical slice sampling transition.

    A prior draw defines an ellipse through ``current``; the angle bracket
    shrinks toward the current point until a proposal clears the slice.
    """
    current = np.asarray(current, dtype=np.float64)
    cur_ll = target.log_likelihood(current)
    if not np.isfinite(cur_ll):
        raise ValueError("log-likelihood is not finite at the current state")
    mean = np.asarray(target.prior_mean, dtype=np.float64)
    nu = sample_mvn(np.zeros_like(mean), target.prior_precision_chol, rng)
    f = current - mean
    log_y = cur_ll + np.log(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * np.pi)
    lo, hi = theta - 2.0 * np.pi, theta
    for _ in range(max_shrinks):
        prop = mean + f * np.cos(theta) + nu * np.sin(theta)
        if target.log_likelihood(prop) > log_y:
            return prop
        if theta < 0.0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)
    # bracket collapsed onto the current point
    return current.copy()
