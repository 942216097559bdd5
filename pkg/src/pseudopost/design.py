"""Sampling designs, inclusion probabilities and survey weights."""
import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, SchemaError
from .population import FinitePopulation, population_header, population_rows, read_table, \
    parse_population, _fmt

KINDS = ("pps-fixed-size", "poisson", "srs")
_KIND_ALIASES = {"pps": "pps-fixed-size", "pps-fixed-size": "pps-fixed-size",
                 "poisson": "poisson", "srs": "srs"}


@dataclass(frozen=True)
class SamplingDesign:
    kind: str
    target_n: int
    size_power: float = 0.5

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ConfigError(f"unknown design kind {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        if int(self.target_n) != self.target_n or self.target_n < 1:
            raise ConfigError(f"target_n must be a positive integer, got {self.target_n}")
        if not self.size_power >= 0:
            raise ConfigError(f"size_power must be non-negative, got {self.size_power}")

    def to_dict(self):
        return {"kind": self.kind, "target_n": int(self.target_n),
                "size_power": float(self.size_power)}


class IndependentPairs:
    """Joint inclusion probabilities of a design with independent draws."""

    exact = True

    def __init__(self, pi):
        self.pi = np.asarray(pi)

    def joint(self, i, j):
        return self.pi[i] * self.pi[j]

    def max_abs_ratio_deviation(self, chunk=2048):
        return _max_ratio(self, chunk)[0]


class SrsPairs:
    """Joint inclusion probability n(n-1)/(N(N-1)) of simple random sampling."""

    exact = True

    def __init__(self, n, N):
        self.n, self.N = n, N
        self.pi = np.full(N, n / N)

    def joint(self, i, j):
        i, j = np.broadcast_arrays(i, j)
        if self.N == 1:
            return np.ones(i.shape)
        return np.full(i.shape, self.n * (self.n - 1) / (self.N * (self.N - 1)))

    def max_abs_ratio_deviation(self, chunk=2048):
        return _max_ratio(self, chunk)[0]


def _max_ratio(pairs, chunk=2048):
    """(max |pi_ij/(pi_i pi_j) - 1|, max pi_ij/(pi_i pi_j)) over i != j."""
    pi = pairs.pi
    N = pi.size
    if N < 2:
        return 0.0, 1.0
    dev = 0.0
    top = -np.inf
    cols = np.arange(N)
    for start in range(0, N, chunk):
        rows = np.arange(start, min(start + chunk, N))
        joint = pairs.joint(rows[:, None], cols[None, :])
        ratio = joint / (pi[rows][:, None] * pi[None, :])
        ratio[rows - start, rows] = np.nan   # drop i == j
        dev = max(dev, float(np.nanmax(np.abs(ratio - 1.0))))
        top = max(top, float(np.nanmax(ratio)))
    return dev, top


@dataclass
class InclusionProbabilities:
    pi: np.ndarray
    certainty_count: int
    pairwise: Optional[object] = None

    @property
    def certainty(self):
        return self.pi >= 1.0


def capped_pps_probs(size, n, power=0.5, max_iter=None):
    """pps probabilities proportional to ``size**power`` summing to ``n``.

    Any probability above one is fixed at one and the remaining budget is
    re-spread over the other units until nothing exceeds one.
    """
    size = np.asarray(size, dtype=np.float64)
    N = size.size
    if n > N:
        raise ConfigError(f"sample size {n} exceeds population size {N}")
    if np.any(~(size > 0)):
        raise ConfigError("size measures must be positive")
    s = size ** power
    pi = np.empty(N)
    cert = np.zeros(N, dtype=bool)
    for _ in range(max_iter or N + 1):
        budget = n - cert.sum()
        pi[cert] = 1.0
        free = ~cert
        if budget <= 0 or not free.any():
            pi[free] = 0.0
            break
        pi[free] = budget * s[free] / s[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        cert |= over
    pi = np.minimum(pi, 1.0)
    return pi, cert


def compute_inclusion_probs(pop: FinitePopulation, design: SamplingDesign) -> InclusionProbabilities:
    N = pop.n_units
    n = int(design.target_n)
    if n > N:
        raise ConfigError(f"design asks for n={n} from a population of N={N}")
    if design.kind == "srs":
        return InclusionProbabilities(np.full(N, n / N), int(n == N) * N, SrsPairs(n, N))
    pi, cert = capped_pps_probs(pop.size_measure, n, design.size_power)
    if np.any(pi <= 0):
        raise ConfigError("design produced a zero inclusion probability")
    pairwise = IndependentPairs(pi) if design.kind == "poisson" else None
    return InclusionProbabilities(pi, int(np.sum(pi >= 1.0)), pairwise)


@dataclass
class ObservedSample:
    indices: np.ndarray          # 0-based unit positions in the population
    responses: np.ndarray
    covariates: np.ndarray
    pi: np.ndarray
    raw_weights: np.ndarray
    normalized_weights: np.ndarray
    population_size: Optional[int] = None

    @property
    def n(self):
        return self.indices.size

    @property
    def D(self):
        return self.responses.shape[1]

    @property
    def P(self):
        return self.covariates.shape[1]

    @property
    def delta(self):
        if self.population_size is None:
            raise ValueError("population size unknown for this sample")
        d = np.zeros(self.population_size, dtype=bool)
        d[self.indices] = True
        return d


def normalize_weights(raw):
    """Scale weights to sum to the number of weights."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(~(raw > 0)) or not np.all(np.isfinite(raw)):
        raise ValueError("weights must be positive and finite")
    return raw.size * raw / math.fsum(raw)


def _systematic_pps(pi, rng):
    N = pi.size
    order = rng.permutation(N)
    cum = np.cumsum(pi[order])
    n = int(round(cum[-1]))
    cum[-1] = n    # absorb rounding drift so exactly n hits land
    u = rng.uniform()
    points = u + np.arange(n)
    hits = np.searchsorted(cum, points, side="right")
    return np.sort(order[hits])


def sample_from_indices(pop, probs, idx):
    idx = np.asarray(idx, dtype=np.int64)
    pi = probs.pi[idx]
    w = 1.0 / pi
    w_norm = normalize_weights(w) if idx.size else np.empty(0)
    return ObservedSample(idx, pop.responses[idx], pop.covariates[idx], pi, w,
                          w_norm, pop.n_units)


def draw_sample(pop: FinitePopulation, probs: InclusionProbabilities, design: SamplingDesign,
                seed) -> ObservedSample:
    rng = np.random.default_rng(seed)
    pi = probs.pi
    if design.kind == "pps-fixed-size":
        idx = _systematic_pps(pi, rng)
    elif design.kind == "poisson":
        idx = np.flatnonzero(rng.uniform(size=pi.size) < pi)
    else:
        idx = np.sort(rng.choice(pop.n_units, size=int(design.target_n), replace=False))
    return sample_from_indices(pop, probs, idx)


# ---------------------------------------------------------------- reporting

@dataclass
class DesignDiagnosticsReport:
    kind: str
    N: int
    n: int
    certainty_count: int
    min_pi: float
    max_pi: float
    cv_pi: float
    cor_y_pi: list
    gamma: float
    a5_max_ratio: Optional[float]
    a5_c3_proxy: Optional[float]
    a5_note: str
    sampling_fraction: float
    realized_sizes: list

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _cv(x):
    m = x.mean()
    return float(x.std() / m) if m else float("nan")


def _corr(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def design_report(pop: FinitePopulation, probs: InclusionProbabilities, samples,
                  design: Optional[SamplingDesign] = None) -> DesignDiagnosticsReport:
    """Design characteristics (certainty units, pi range, CV, correlations) plus the A4-A6 checks."""
    samples = list(samples)
    if not samples:
        raise ValueError("design_report needs at least one sample")
    pi = probs.pi
    N = pop.n_units
    n = int(design.target_n) if design is not None else int(round(pi.sum()))
    if probs.pairwise is not None:
        dev, top = _max_ratio(probs.pairwise)
        a5, c3, note = dev, N * top, "exact pairwise probabilities"
    else:
        a5 = c3 = None
        note = "not computed: pairwise inclusion probabilities unavailable for this design"
    return DesignDiagnosticsReport(
        kind=design.kind if design is not None else "unknown",
        N=N, n=n,
        certainty_count=int(np.sum(pi >= 1.0)),
        min_pi=float(pi.min()), max_pi=float(pi.max()), cv_pi=_cv(pi),
        cor_y_pi=[_corr(pop.responses[:, d], pi) for d in range(pop.D)],
        gamma=float(1.0 / pi.min()),
        a5_max_ratio=a5, a5_c3_proxy=c3, a5_note=note,
        sampling_fraction=n / N,
        realized_sizes=[int(s.n) for s in samples],
    )


# ---------------------------------------------------------------- file I/O

def save_sample(pop: FinitePopulation, sample: ObservedSample, path):
    """Sample CSV: population columns for sampled rows plus pi, w_raw, w_norm."""
    sub = FinitePopulation(pop.responses[sample.indices], pop.covariates[sample.indices],
                           pop.size_measure[sample.indices])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(population_header(pop.D, pop.P) + ["pi", "w_raw", "w_norm"])
        for k, row in enumerate(population_rows(sub)):
            row[0] = str(int(sample.indices[k]) + 1)
            row += [_fmt(sample.pi[k]), _fmt(sample.raw_weights[k]),
                    _fmt(sample.normalized_weights[k])]
            writer.writerow(row)
    return path


def load_sample(path, population_size=None) -> ObservedSample:
    header, rows = read_table(path)
    for col in ("pi", "w_raw", "w_norm"):
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    Y, X, _ = parse_population(path, header, rows)
    ids = np.empty(len(rows), dtype=np.int64)
    cols = {c: header.index(c) for c in ("pi", "w_raw", "w_norm")}
    vals = {c: np.empty(len(rows)) for c in cols}
    for k, (line, row) in enumerate(rows):
        try:
            ids[k] = int(row[0]) - 1
            for c, j in cols.items():
                vals[c][k] = float(row[j])
        except ValueError as exc:
            raise SchemaError(f"{path}: line {line}: {exc}") from None
        if not (0 < vals["pi"][k] <= 1):
            raise SchemaError(f"{path}: line {line}: pi must lie in (0, 1]")
        if not vals["w_raw"][k] > 0:
            raise SchemaError(f"{path}: line {line}: w_raw must be positive")
    w_norm = normalize_weights(vals["w_raw"])
    if not np.allclose(w_norm, vals["w_norm"], rtol=1e-9, atol=0):
        raise SchemaError(f"{path}: w_norm does not match normalized w_raw")
    return ObservedSample(ids, Y, X, vals["pi"], vals["w_raw"], w_norm, population_size)


def save_report(report: DesignDiagnosticsReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
