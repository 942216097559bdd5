"""Finite populations drawn from the Poisson-lognormal regression model.

A population row carries D count responses, P covariates (intercept
first) and a positive size measure that pps designs sample on.
"""
import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import ConfigError, GenerationError, RankError, SchemaError
from .mcmc_core import cholesky

JOLTS_COVARIATES = ["Int", "West", "Midw", "South", "State", "Local", "Private", "Emp", "Open"]
JOLTS_RESPONSES = ["Hires", "Seps"]


@dataclass
class GeneratingParams:
    B: np.ndarray
    Lambda: np.ndarray
    tau_B: float = 1.0
    M: Optional[np.ndarray] = None

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=np.float64))
        if self.M is None:
            self.M = np.eye(self.B.shape[0])
        self.M = np.atleast_2d(np.asarray(self.M, dtype=np.float64))
        self.validate()

    @property
    def P(self):
        return self.B.shape[0]

    @property
    def D(self):
        return self.B.shape[1]

    def validate(self):
        P, D = self.B.shape
        if self.Lambda.shape != (D, D):
            raise ConfigError(f"Lambda must be {D}x{D}, got {self.Lambda.shape}")
        if self.M.shape != (P, P):
            raise ConfigError(f"M must be {P}x{P}, got {self.M.shape}")
        if not self.tau_B > 0:
            raise ConfigError(f"tau_B must be positive, got {self.tau_B}")
        for name, A in (("Lambda", self.Lambda), ("M", self.M)):
            if not np.allclose(A, A.T):
                raise ConfigError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(A)
            except np.linalg.LinAlgError:
                raise ConfigError(f"{name} is not positive definite") from None

    def to_dict(self):
        return {"B": self.B.tolist(), "Lambda": self.Lambda.tolist(),
                "tau_B": float(self.tau_B), "M": self.M.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(B=d["B"], Lambda=d["Lambda"], tau_B=d.get("tau_B", 1.0), M=d.get("M"))
        except KeyError as exc:
            raise ConfigError(f"generating params missing field {exc.args[0]!r}") from None


@dataclass
class CovariateRecipe:
    """How covariates and the size measure are synthesized.

    ``kind="jolts"`` builds the nine-column establishment design
    (intercept, three region and three ownership dummies, log employment,
    log openings). ``kind="gaussian"`` uses an intercept plus iid standard
    normal columns and is meant for small test populations.

    Employment is ``1 + exp(N(emp_log_mu, emp_log_sigma^2))``. The size
    measure is ``employment * exp(size_informativeness * r)`` where ``r``
    is the unit's latent residual on the first response. For the jolts
    kind the log-means also receive ``emp_curvature[d] * (log_emp -
    emp_center)^2``, a term the fitted linear model does not contain; a
    size-proportional design then over-represents the flat end of the curve.
    """

    kind: str = "jolts"
    emp_log_mu: float = -1.5
    emp_log_sigma: float = 3.875
    open_shift: float = -2.0
    open_sd: float = 1.0
    region_probs: tuple = (0.18, 0.22, 0.23, 0.37)       # Northeast, West, Midwest, South
    ownership_probs: tuple = (0.03, 0.06, 0.11, 0.80)    # Federal, State, Local, Private
    size_informativeness: float = 0.0
    size_loading: float = 1.0                            # gaussian kind: log-size slope on x_2
    emp_center: float = 4.0                              # jolts kind: centre of the log-emp curvature
    emp_curvature: tuple = (-0.03, -0.03)                # jolts kind: per-response (log-emp - centre)^2 term

    def validate(self, P):
        if self.kind == "jolts":
            if P != len(JOLTS_COVARIATES):
                raise ConfigError(f"jolts recipe needs P={len(JOLTS_COVARIATES)}, got P={P}")
            for name in ("region_probs", "ownership_probs"):
                probs = np.asarray(getattr(self, name), dtype=float)
                if probs.shape != (4,) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
                    raise ConfigError(f"{name} must be 4 non-negative probabilities summing to 1")
            if not np.all(np.isfinite(np.asarray(self.emp_curvature, dtype=float))):
                raise ConfigError("emp_curvature must be finite")
            if not self.emp_log_sigma >= 0:
                raise ConfigError("emp_log_sigma must be non-negative")
        elif self.kind != "gaussian":
            raise ConfigError(f"unknown covariate recipe kind {self.kind!r}")


@dataclass
class ModelConfig:
    n_units: int = 8595
    D: int = 2
    P: int = 9
    mean_cap: float = 1e9
    recipe: CovariateRecipe = field(default_factory=CovariateRecipe)

    def validate(self):
        if self.n_units < 1:
            raise ConfigError("n_units must be positive")
        if self.D < 1 or self.P < 1:
            raise ConfigError("D and P must be positive")
        if self.P > self.n_units:
            raise ConfigError("P must not exceed n_units")
        if not self.mean_cap > 0:
            raise ConfigError("mean_cap must be positive")
        self.recipe.validate(self.P)

    def to_dict(self):
        d = asdict(self)
        d["recipe"]["region_probs"] = list(self.recipe.region_probs)
        d["recipe"]["ownership_probs"] = list(self.recipe.ownership_probs)
        d["recipe"]["emp_curvature"] = list(self.recipe.emp_curvature)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "recipe" not in d:
            raise ConfigError("population config missing field 'recipe' (covariate/size recipe)")
        recipe = d.pop("recipe")
        if not isinstance(recipe, dict):
            raise ConfigError("field 'recipe' must be a mapping")
        unknown = set(d) - {"n_units", "D", "P", "mean_cap"}
        if unknown:
            raise ConfigError(f"unknown population config field(s): {sorted(unknown)}")
        bad = set(recipe) - set(CovariateRecipe.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown recipe field(s): {sorted(bad)}")
        for key in ("region_probs", "ownership_probs", "emp_curvature"):
            if key in recipe:
                recipe[key] = tuple(recipe[key])
        cfg = cls(recipe=CovariateRecipe(**recipe), **d)
        cfg.validate()
        return cfg


def default_jolts_params():
    """Default generating parameters for the establishment population.

    Paired with the default recipe (log-emp curvature -0.03 on both
    responses) these give a pps sample whose unweighted fit of the Emp
    slope is visibly biased while the weighted fit is close.
    """
    B = np.array([
        [-1.50, -1.60],   # Int
        [0.05, 0.04],     # West
        [-0.03, -0.02],   # Midw
        [0.06, 0.05],     # South
        [-0.15, -0.10],   # State
        [-0.10, -0.08],   # Local
        [0.10, 0.12],     # Private
        [0.65, 0.60],     # Emp
        [0.05, 0.01],     # Open
    ])
    v = 0.15
    rho = 0.6 * np.sqrt(1.3) * v
    cov = np.array([[v, rho],
                    [rho, 1.3 * v]])
    return GeneratingParams(B=B, Lambda=np.linalg.inv(cov), tau_B=1.0, M=np.eye(9))


@dataclass
class FinitePopulation:
    responses: np.ndarray
    covariates: np.ndarray
    size_measure: np.ndarray
    true_params: Optional[GeneratingParams] = None
    seed: Optional[int] = None
    covariate_names: Optional[list] = None
    response_names: Optional[list] = None

    def __post_init__(self):
        self.responses = np.atleast_2d(np.asarray(self.responses))
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=np.float64))
        self.size_measure = np.asarray(self.size_measure, dtype=np.float64).ravel()

    @property
    def n_units(self):
        return self.responses.shape[0]

    @property
    def D(self):
        return self.responses.shape[1]

    @property
    def P(self):
        return self.covariates.shape[1]

    def labels(self):
        cov = self.covariate_names or [f"x_{j + 1}" for j in range(self.P)]
        resp = self.response_names or [f"y_{d + 1}" for d in range(self.D)]
        return cov, resp

    def validate(self):
        N = self.n_units
        if self.covariates.shape[0] != N or self.size_measure.shape != (N,):
            raise SchemaError("responses, covariates and size_measure must share N rows")
        y = self.responses
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise SchemaError("responses must be integer valued")
        neg = np.argwhere(y < 0)
        if neg.size:
            i, d = neg[0]
            raise SchemaError(f"negative count at row {i + 1}, column y_{d + 1}")
        if not np.all(np.isfinite(self.covariates)):
            raise SchemaError("covariates must be finite")
        bad = np.flatnonzero(~(self.size_measure > 0))
        if bad.size:
            raise SchemaError(f"size measure must be positive (row {bad[0] + 1})")
        rank = covariate_rank(self.covariates)
        if rank < self.P:
            raise RankError(f"covariate matrix is rank deficient: rank {rank} < P={self.P}", rank)
        return self


def covariate_rank(X, rtol=None):
    """Numerical rank from a column-pivoted QR factorization."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        return 0
    R = qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return 0
    if rtol is None:
        rtol = max(X.shape) * np.finfo(float).eps
    return int(np.sum(diag > rtol * diag[0]))


def _jolts_covariates(N, recipe, rng):
    log_emp = np.log1p(np.exp(rng.normal(recipe.emp_log_mu, recipe.emp_log_sigma, N)))
    region = rng.choice(4, size=N, p=np.asarray(recipe.region_probs, dtype=float))
    owner = rng.choice(4, size=N, p=np.asarray(recipe.ownership_probs, dtype=float))
    log_open = log_emp + rng.normal(recipe.open_shift, recipe.open_sd, N)
    X = np.column_stack(
        [np.ones(N)]
        + [(region == k).astype(float) for k in (1, 2, 3)]
        + [(owner == k).astype(float) for k in (1, 2, 3)]
        + [log_emp, log_open])
    return X, log_emp


def _gaussian_covariates(N, P, recipe, rng):
    X = np.column_stack([np.ones(N), rng.standard_normal((N, P - 1))])
    log_base = recipe.size_loading * X[:, 1] if P > 1 else np.zeros(N)
    return X, log_base


def generate_population(config: ModelConfig, params: GeneratingParams, seed) -> FinitePopulation:
    """Simulate covariates, latent log-means and Poisson counts.

    ``psi_i ~ N_D(B' x_i, Lambda^-1)`` and ``y_id ~ Poisson(exp(psi_id))``;
    the jolts recipe adds its log-employment curvature to ``psi``.
    Raises :class:`GenerationError` when a Poisson mean exceeds
    ``config.mean_cap``.
    """
    config.validate()
    if params.B.shape != (config.P, config.D):
        raise ConfigError(f"B is {params.B.shape}, config expects ({config.P}, {config.D})")
    N = config.n_units
    cov_ss, noise_ss, count_ss = np.random.SeedSequence(seed).spawn(3)
    rng_cov = np.random.default_rng(cov_ss)
    if config.recipe.kind == "jolts":
        X, log_base = _jolts_covariates(N, config.recipe, rng_cov)
        cov_names, resp_names = list(JOLTS_COVARIATES), list(JOLTS_RESPONSES[:config.D])
        if config.D != 2:
            resp_names = None
    else:
        X, log_base = _gaussian_covariates(N, config.P, config.recipe, rng_cov)
        cov_names = resp_names = None

    L = cholesky(params.Lambda, "Lambda").L
    Z = np.random.default_rng(noise_ss).standard_normal((N, config.D))
    resid = solve_triangular(L.T, Z.T, lower=False).T
    psi = X @ params.B + resid
    if config.recipe.kind == "jolts":
        curv = np.zeros(config.D)
        given = np.asarray(config.recipe.emp_curvature, dtype=float)[:config.D]
        curv[:given.size] = given
        psi += np.outer((log_base - config.recipe.emp_center) ** 2, curv)
    with np.errstate(over="ignore"):
        mu = np.exp(psi)
    over = np.argwhere(~(mu <= config.mean_cap))
    if over.size:
        i, d = over[0]
        raise GenerationError(
            f"Poisson mean exp(psi)={mu[i, d]:.3g} exceeds cap {config.mean_cap:.3g} "
            f"at unit {i + 1}, response {d + 1}")
    y = np.random.default_rng(count_ss).poisson(mu).astype(np.int64)
    size = np.exp(log_base + config.recipe.size_informativeness * resid[:, 0])
    pop = FinitePopulation(y, X, size, true_params=params, seed=_seed_repr(seed),
                           covariate_names=cov_names, response_names=resp_names)
    return pop.validate()


def _seed_repr(seed):
    return int(seed) if isinstance(seed, (int, np.integer)) else None


# ---------------------------------------------------------------- file I/O

def sidecar_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".params.json"


def _fmt(x):
    return repr(float(x))


def population_header(D, P):
    return (["unit_id"] + [f"y_{d + 1}" for d in range(D)]
            + [f"x_{j + 1}" for j in range(P)] + ["size"])


def population_rows(pop, extra=None):
    for i in range(pop.n_units):
        row = [str(i + 1)]
        row += [str(int(v)) for v in pop.responses[i]]
        row += [_fmt(v) for v in pop.covariates[i]]
        row.append(_fmt(pop.size_measure[i]))
        if extra is not None:
            row += extra(i)
        yield row


def save_population(pop: FinitePopulation, path):
    """Write the population CSV plus a JSON sidecar with params and seed."""
    pop.validate()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(population_header(pop.D, pop.P))
        writer.writerows(population_rows(pop))
    side = {
        "seed": pop.seed,
        "params": pop.true_params.to_dict() if pop.true_params is not None else None,
        "covariate_names": pop.covariate_names,
        "response_names": pop.response_names,
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_table(path, required_prefix=("unit_id",)):
    """Parse a CSV file into (header, rows) with line-numbered errors."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append((reader.line_num, row))
    if list(header[:len(required_prefix)]) != list(required_prefix):
        raise SchemaError(f"{path}: header must start with {', '.join(required_prefix)}")
    return header, rows


def _parse_population_columns(path, header):
    y_cols = [j for j, h in enumerate(header) if h.startswith("y_")]
    x_cols = [j for j, h in enumerate(header) if h.startswith("x_")]
    if "size" not in header:
        raise SchemaError(f"{path}: missing column 'size'")
    if not y_cols or not x_cols:
        raise SchemaError(f"{path}: need at least one y_ and one x_ column")
    if [header[j] for j in y_cols] != [f"y_{d + 1}" for d in range(len(y_cols))]:
        raise SchemaError(f"{path}: response columns must be y_1..y_D in order")
    if [header[j] for j in x_cols] != [f"x_{p + 1}" for p in range(len(x_cols))]:
        raise SchemaError(f"{path}: covariate columns must be x_1..x_P in order")
    return y_cols, x_cols, header.index("size")


def parse_population(path, header, rows):
    y_cols, x_cols, s_col = _parse_population_columns(path, header)
    N = len(rows)
    Y = np.empty((N, len(y_cols)), dtype=np.int64)
    X = np.empty((N, len(x_cols)))
    S = np.empty(N)
    for i, (line, row) in enumerate(rows):
        for k, j in enumerate(y_cols):
            try:
                v = int(row[j])
            except ValueError:
                raise SchemaError(
                    f"{path}: line {line}: column {header[j]}: count {row[j]!r} is not an integer"
                ) from None
            if v < 0:
                raise SchemaError(f"{path}: line {line} (row {i + 1}): column {header[j]}: "
                                  f"negative count {v}")
            Y[i, k] = v
        try:
            X[i] = [float(row[j]) for j in x_cols]
            S[i] = float(row[s_col])
        except ValueError as exc:
            raise SchemaError(f"{path}: line {line}: {exc}") from None
        if not S[i] > 0:
            raise SchemaError(f"{path}: line {line} (row {i + 1}): column size must be positive")
    return Y, X, S


def load_population(path) -> FinitePopulation:
    """Read a population CSV (and its sidecar when present)."""
    header, rows = read_table(path)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    Y, X, S = parse_population(path, header, rows)
    params = seed = cov_names = resp_names = None
    side = sidecar_path(path)
    if os.path.exists(side):
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("params") is not None:
            params = GeneratingParams.from_dict(meta["params"])
        seed = meta.get("seed")
        cov_names = meta.get("covariate_names")
        resp_names = meta.get("response_names")
    pop = FinitePopulation(Y, X, S, true_params=params, seed=seed,
                           covariate_names=cov_names, response_names=resp_names)
    return pop.validate()
