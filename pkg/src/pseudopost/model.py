"""Gibbs sampler for the Poisson-lognormal pseudo-posterior.

The model for unit ``i`` with normalized weight ``w_i`` is::

    y_id | psi_id      ~ Poisson(exp(psi_id))
    psi_i | B, Lambda  ~ N_D(B' x_i, Lambda^-1)       (likelihood ^ w_i)
    B                  ~ MN(0, row precision tau_B M, column precision Lambda)
    Lambda ~ W_D(D+1, I),  tau_B ~ Gamma(1, 1),  M ~ W_P(P+1, I)

Raising each unit's likelihood to ``w_i`` turns the posterior into the
sampling-weighted pseudo-posterior; ``weighted=False`` sets every weight
to one and recovers the ordinary posterior.
"""
import csv
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve

from . import _kernels
from .design import ObservedSample
from .errors import ConfigError, NumericalError
from .mcmc_core import cholesky, sample_gamma, sample_matrix_normal, sample_wishart

PSI_CAP = 700.0
PARAM_BLOCKS = ("Psi", "B", "Lambda", "tau_B", "M")


@dataclass
class McmcState:
    Psi: np.ndarray
    B: np.ndarray
    Lambda: np.ndarray
    M: np.ndarray
    tau_B: float

    def copy(self):
        return McmcState(self.Psi.copy(), self.B.copy(), self.Lambda.copy(), self.M.copy(),
                         float(self.tau_B))

    def check(self):
        if not np.all(np.isfinite(self.Psi)):
            raise NumericalError("Psi has non-finite entries")
        if not self.tau_B > 0:
            raise NumericalError(f"tau_B must be positive, got {self.tau_B}")
        cholesky(self.Lambda, "Lambda")
        cholesky(self.M, "M")
        return self


@dataclass
class FitConfig:
    n_iter: int = 5000
    burn_in: int = 2500
    thin: int = 1
    seed: int = 0
    weighted: bool = True
    n_threads: int = 1
    keep_M: bool = False
    fixed: tuple = ()       # blocks held at their initial values (test harnesses)

    def __post_init__(self):
        self.fixed = tuple(self.fixed)

    def validate(self):
        if self.n_iter < 1:
            raise ConfigError("n_iter must be positive")
        if self.burn_in < 0 or self.burn_in >= self.n_iter:
            raise ConfigError(f"burn_in must satisfy 0 <= burn_in < n_iter "
                              f"(got burn_in={self.burn_in}, n_iter={self.n_iter})")
        if self.thin < 1:
            raise ConfigError("thin must be positive")
        bad = set(self.fixed) - set(PARAM_BLOCKS)
        if bad:
            raise ConfigError(f"unknown parameter block(s) in fixed: {sorted(bad)}")
        return self

    @property
    def retained(self):
        return (self.n_iter - self.burn_in + self.thin - 1) // self.thin

    def to_dict(self):
        return {"n_iter": self.n_iter, "burn_in": self.burn_in, "thin": self.thin,
                "seed": self.seed, "weighted": self.weighted, "keep_M": self.keep_M,
                "fixed": list(self.fixed)}


def unit_weights(sample: ObservedSample, weighted: bool):
    """Normalized weights, or ones for the unweighted posterior."""
    if weighted:
        return np.asarray(sample.normalized_weights, dtype=np.float64)
    return np.ones(sample.n)


def init_state(sample: ObservedSample, seed=None, weighted=True) -> McmcState:
    """Start at ``Psi = log(y + 0.5)`` with B from weighted least squares."""
    if sample.n == 0:
        raise ConfigError("cannot initialize from an empty sample")
    Y = np.asarray(sample.responses, dtype=np.float64)
    X = np.asarray(sample.covariates, dtype=np.float64)
    Psi = np.log(Y + 0.5)
    sw = np.sqrt(unit_weights(sample, weighted))
    B = np.linalg.lstsq(X * sw[:, None], Psi * sw[:, None], rcond=None)[0]
    P, D = B.shape
    return McmcState(Psi, B, np.eye(D), np.eye(P), 1.0)


def update_psi(state: McmcState, sample: ObservedSample, weighted: bool, rng,
               n_threads=1, return_status=False):
    """One elliptical slice move for every sampled unit's latent log-mean."""
    w = unit_weights(sample, weighted)
    X = np.asarray(sample.covariates, dtype=np.float64)
    Y = np.asarray(sample.responses, dtype=np.float64)
    L = cholesky(state.Lambda, "Lambda").L
    key = int(rng.integers(0, 2**64, dtype=np.uint64))
    new, status = _kernels.psi_sweep(state.Psi, X @ state.B, Y, w, L, key,
                                     cap=PSI_CAP, n_threads=n_threads)
    if np.any(status == 1):
        i = int(np.flatnonzero(status == 1)[0])
        raise NumericalError(f"non-finite log-likelihood for sampled unit {i}")
    if return_status:
        return new, status
    return new


def b_conditional(state: McmcState, sample: ObservedSample, weighted: bool):
    """Mean and row-precision factor of the conditional for B.

    Row precision ``X' W X + tau_B M``; mean solves it against ``X' W Psi``.
    """
    w = unit_weights(sample, weighted)
    X = np.asarray(sample.covariates, dtype=np.float64)
    XtW = X.T * w
    phi = XtW @ X + state.tau_B * state.M
    try:
        fac = cholesky(phi, "B row precision X'WX + tau_B M")
    except NumericalError as exc:
        raise NumericalError(f"{exc}; covariates may be collinear in the sample") from None
    mean = cho_solve((fac.L, True), XtW @ state.Psi)
    return mean, fac


def update_B(state: McmcState, sample: ObservedSample, weighted: bool, rng):
    mean, fac = b_conditional(state, sample, weighted)
    return sample_matrix_normal(mean, fac, cholesky(state.Lambda, "Lambda"), rng)


def lambda_conditional(state: McmcState, sample: ObservedSample, weighted: bool):
    """(df, scale) of the Wishart full conditional for Lambda."""
    w = unit_weights(sample, weighted)
    X = np.asarray(sample.covariates, dtype=np.float64)
    P, D = state.B.shape
    R = state.Psi - X @ state.B
    S = np.eye(D) + (R.T * w) @ R + state.tau_B * (state.B.T @ state.M @ state.B)
    df = (D + 1) + float(np.sum(w)) + P
    return df, _spd_inverse(S, "Lambda scale")


def update_Lambda(state: McmcState, sample: ObservedSample, weighted: bool, rng):
    df, scale = lambda_conditional(state, sample, weighted)
    return sample_wishart(df, scale, rng)


def tau_conditional(state: McmcState):
    """(shape, rate) of the gamma full conditional for tau_B."""
    P, D = state.B.shape
    quad = float(np.trace(state.Lambda @ state.B.T @ state.M @ state.B))
    return 1.0 + 0.5 * P * D, 1.0 + 0.5 * quad


def update_tau_B(state: McmcState, rng):
    shape, rate = tau_conditional(state)
    return sample_gamma(shape, rate, rng)


def m_conditional(state: McmcState):
    P, D = state.B.shape
    S = np.eye(P) + state.tau_B * (state.B @ state.Lambda @ state.B.T)
    return (P + 1) + D, _spd_inverse(S, "M scale")


def update_M(state: McmcState, rng):
    df, scale = m_conditional(state)
    return sample_wishart(df, scale, rng)


def _spd_inverse(S, what):
    fac = cholesky(S, what)
    inv = cho_solve((fac.L, True), np.eye(S.shape[0]))
    return 0.5 * (inv + inv.T)


# ---------------------------------------------------------------- draws

@dataclass
class PosteriorDraws:
    B: np.ndarray                        # (K, P, D)
    Lambda: np.ndarray                   # (K, D, D)
    tau_B: np.ndarray                    # (K,)
    M: Optional[np.ndarray] = None       # (K, P, P) when kept
    covariate_names: Optional[list] = None
    response_names: Optional[list] = None
    config: Optional[FitConfig] = None
    n_stalled: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.B.shape[0]

    def labels(self):
        P, D = self.B.shape[1:]
        cov = self.covariate_names or [f"x_{j + 1}" for j in range(P)]
        resp = self.response_names or [f"y_{d + 1}" for d in range(D)]
        return cov, resp

    def columns(self):
        """Flattened draw matrix and its column names."""
        K, P, D = self.B.shape
        cov, resp = self.labels()
        names = [f"B[{cov[p]},{resp[d]}]" for p in range(P) for d in range(D)]
        cols = [self.B.reshape(K, P * D)]
        iu = np.triu_indices(D)
        names += [f"Lambda[{resp[a]},{resp[b]}]" for a, b in zip(*iu)]
        cols.append(self.Lambda[:, iu[0], iu[1]])
        names.append("tau_B")
        cols.append(self.tau_B[:, None])
        return np.hstack(cols), names

    def summary(self, level=0.95):
        """Posterior mean and equal-tailed interval for every column."""
        values, names = self.columns()
        lo, hi = 0.5 * (1 - level), 0.5 * (1 + level)
        mean = values.mean(axis=0)
        q = np.quantile(values, [lo, hi], axis=0)
        return {name: {"mean": float(mean[k]), "q025": float(q[0, k]), "q975": float(q[1, k])}
                for k, name in enumerate(names)}

    def coefficient(self, p, d):
        return self.B[:, p, d]

    def save_csv(self, path):
        values, names = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["draw"] + names)
            for k, row in enumerate(values):
                writer.writerow([str(k)] + [repr(float(v)) for v in row])
        return path

    def save_summary(self, path, extra=None):
        out = {"summary": self.summary(), "n_draws": int(self.n_draws),
               "config": self.config.to_dict() if self.config is not None else None,
               "seed": self.config.seed if self.config is not None else None,
               "backend": _kernels.BACKEND, "n_stalled": int(self.n_stalled)}
        if extra:
            out.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def fit(sample: ObservedSample, config: FitConfig, init: Optional[McmcState] = None,
        covariate_names=None, response_names=None) -> PosteriorDraws:
    """Run the Gibbs sampler and keep thinned post-burn-in draws.

    Each scan updates Psi, B, Lambda, tau_B and M in that order. Blocks
    listed in ``config.fixed`` stay at their initial values.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    state = (init.copy() if init is not None
             else init_state(sample, config.seed, config.weighted)).check()
    P, D = state.B.shape
    if sample.covariates.shape[1] != P or sample.responses.shape[1] != D:
        raise ConfigError("initial state does not match the sample dimensions")
    K = config.retained
    B_draws = np.empty((K, P, D))
    L_draws = np.empty((K, D, D))
    t_draws = np.empty(K)
    M_draws = np.empty((K, P, P)) if config.keep_M else None
    fixed = set(config.fixed)
    stalled = 0
    k = 0
    for t in range(config.n_iter):
        try:
            if "Psi" not in fixed:
                state.Psi, status = update_psi(state, sample, config.weighted, rng,
                                               config.n_threads, return_status=True)
                stalled += int(np.sum(status == 2))
            if "B" not in fixed:
                state.B = update_B(state, sample, config.weighted, rng)
            if "Lambda" not in fixed:
                state.Lambda = update_Lambda(state, sample, config.weighted, rng)
            if "tau_B" not in fixed:
                state.tau_B = update_tau_B(state, rng)
            if "M" not in fixed:
                state.M = update_M(state, rng)
        except NumericalError as exc:
            raise NumericalError(f"iteration {t}: {exc}") from exc
        if t >= config.burn_in and (t - config.burn_in) % config.thin == 0:
            B_draws[k] = state.B
            L_draws[k] = state.Lambda
            t_draws[k] = state.tau_B
            if M_draws is not None:
                M_draws[k] = state.M
            k += 1
    return PosteriorDraws(B_draws, L_draws, t_draws, M_draws, covariate_names, response_names,
                          replace(config), stalled, {"final_state": state})
