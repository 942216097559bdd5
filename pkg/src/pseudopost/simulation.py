"""Monte Carlo study comparing pseudo-posterior, unweighted and SRS fits."""
import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics
from .design import SamplingDesign, compute_inclusion_probs, draw_sample, sample_from_indices, \
    InclusionProbabilities
from .errors import ConfigError, PseudopostError
from .model import FitConfig, fit
from .population import FinitePopulation

METHODS = ("population-posterior", "pseudo", "unweighted", "srs")
_METHOD_CODE = {m: k for k, m in enumerate(METHODS)}
TIDY_COLUMNS = ["method", "n", "replicate", "param", "mean", "q025", "q975"]
FAILURE_LIMIT = 0.05


class StudyAborted(PseudopostError):
    """Too many replicate fits failed."""


@dataclass
class StudyConfig:
    sample_sizes: list = field(default_factory=lambda: [500, 1000, 1500, 2500])
    n_replicates: int = 100
    methods: list = field(default_factory=lambda: list(METHODS))
    fit: FitConfig = field(default_factory=FitConfig)
    master_seed: int = 0
    design_kind: str = "pps"
    size_power: float = 0.5
    focus_covariate: str = "Emp"
    pool_draws: int = 500          # retained draws per replicate kept for pooling
    hellinger: bool = False        # pseudo-Hellinger of fitted vs. true unit densities
    workers: int = 1

    @classmethod
    def desk(cls, **overrides):
        """20 replicates, 2000 iterations, n in {500, 2500}."""
        base = dict(sample_sizes=[500, 2500], n_replicates=20,
                    fit=FitConfig(n_iter=2000, burn_in=1000))
        base.update(overrides)
        return cls(**base)

    def validate(self, N=None):
        if not self.sample_sizes:
            raise ConfigError("sample_sizes must not be empty")
        for n in self.sample_sizes:
            if int(n) != n or n < 1:
                raise ConfigError(f"sample size {n} must be a positive integer")
            if N is not None and n > N:
                raise ConfigError(f"sample size {n} exceeds population size {N}")
        if int(self.n_replicates) != self.n_replicates or self.n_replicates < 1:
            raise ConfigError("n_replicates must be a positive integer")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.pool_draws < 1:
            raise ConfigError("pool_draws must be positive")
        SamplingDesign(self.design_kind, 1, self.size_power)
        self.fit.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["fit"] = self.fit.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown study config field(s): {sorted(unknown)}")
        fit_cfg = d.pop("fit", {}) or {}
        if isinstance(fit_cfg, dict):
            bad = set(fit_cfg) - set(FitConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown fit field(s): {sorted(bad)}")
            fit_cfg = FitConfig(**{k: (tuple(v) if k == "fixed" else v) for k, v in fit_cfg.items()})
        try:
            return cls(fit=fit_cfg, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class StudyResult:
    config: StudyConfig
    replicates: list               # tidy rows
    aggregate: list                # one record per (method, n)
    failures: list
    population_posterior: Optional[dict] = None
    contraction: Optional[list] = None
    seeds: dict = field(default_factory=dict)

    def to_dict(self):
        # worker count changes scheduling only, so it stays out of result files
        config = {k: v for k, v in self.config.to_dict().items() if k != "workers"}
        return {"config": config, "aggregate": self.aggregate,
                "failures": self.failures,
                "population_posterior": self.population_posterior,
                "contraction": self.contraction}

    def find(self, method, n):
        for rec in self.aggregate:
            if rec["method"] == method and rec["n"] == n:
                return rec
        raise KeyError((method, n))


# ---------------------------------------------------------------- seeding

def item_seed(master_seed, purpose, n=0, replicate=0):
    """Integer seed from the master seed and the work-item coordinates."""
    code = _METHOD_CODE.get(purpose)
    if code is None:
        code = {"pps-sample": 10, "srs-sample": 11}[purpose]
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(code, int(n), int(replicate)))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- work items

_POP = None


def _set_population(pop):
    global _POP
    _POP = pop


def _census(pop):
    probs = InclusionProbabilities(np.ones(pop.n_units), pop.n_units)
    return sample_from_indices(pop, probs, np.arange(pop.n_units))


def _thin(a, k):
    if a.shape[0] <= k:
        return a
    idx = np.linspace(0, a.shape[0] - 1, k).round().astype(int)
    return a[idx]


def _run_item(item, config: StudyConfig):
    method, n, r = item
    pop = _POP
    fit_seed = item_seed(config.master_seed, method, n, r)
    if method == "population-posterior":
        smp = _census(pop)
        weighted = False
    elif method == "srs":
        design = SamplingDesign("srs", n)
        smp = draw_sample(pop, compute_inclusion_probs(pop, design), design,
                          item_seed(config.master_seed, "srs-sample", n, r))
        weighted = False
    else:
        design = SamplingDesign(config.design_kind, n, config.size_power)
        smp = draw_sample(pop, compute_inclusion_probs(pop, design), design,
                          item_seed(config.master_seed, "pps-sample", n, r))
        weighted = method == "pseudo"
    fc = FitConfig(**{**config.fit.to_dict(), "seed": fit_seed, "weighted": weighted,
                      "fixed": tuple(config.fit.fixed), "n_threads": 1})
    draws = fit(smp, fc, covariate_names=pop.covariate_names, response_names=pop.response_names)
    out = {"summary": draws.summary(), "B": _thin(draws.B, config.pool_draws), "seed": fit_seed,
           "n_stalled": draws.n_stalled}
    if config.hellinger and pop.true_params is not None and method != "population-posterior":
        truth = diagnostics.PoissonLognormalUnits(pop.covariates, pop.true_params.B,
                                                  pop.true_params.Lambda)
        fitted = diagnostics.PoissonLognormalUnits(pop.covariates, draws.B.mean(axis=0),
                                                   draws.Lambda.mean(axis=0))
        out["hellinger_sq"] = diagnostics.pseudo_hellinger_sq(pop, smp, fitted, truth).value
    return out


def _safe_item(item, config):
    try:
        return item, _run_item(item, config), None
    except Exception as exc:                        # recorded, study continues
        return item, None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------- driver

def _items(config: StudyConfig):
    items = []
    if "population-posterior" in config.methods:
        items.append(("population-posterior", 0, 0))
    for n in config.sample_sizes:
        for r in range(config.n_replicates):
            for m in ("pseudo", "unweighted", "srs"):
                if m in config.methods:
                    items.append((m, int(n), r))
    return items


def run_study(pop: FinitePopulation, config: StudyConfig, progress=None) -> StudyResult:
    """Fit every (method, n, replicate) item and aggregate.

    Items draw their own seeds from the master seed and their coordinates,
    so results do not depend on ``config.workers`` or completion order.
    """
    config.validate(pop.n_units)
    items = _items(config)
    results, failures = {}, []
    limit = FAILURE_LIMIT * len(items)

    def record(item, res, err):
        if err is None:
            results[item] = res
        else:
            failures.append({"method": item[0], "n": item[1], "replicate": item[2],
                             "seed": item_seed(config.master_seed, *item), "error": err})
            if len(failures) > limit:
                raise StudyAborted(f"{len(failures)} of {len(items)} fits failed "
                                   f"(limit {FAILURE_LIMIT:.0%}); last: {err}")
        if progress is not None:
            progress(len(results) + len(failures), len(items))

    if config.workers == 1:
        _set_population(pop)
        for item in items:
            record(*_safe_item(item, config))
    else:
        with ProcessPoolExecutor(max_workers=config.workers, initializer=_set_population,
                                 initargs=(pop,)) as ex:
            futures = [ex.submit(_safe_item, item, config) for item in items]
            try:
                for fut in futures:
                    record(*fut.result())
            except StudyAborted:
                for fut in futures:
                    fut.cancel()
                raise
    failures.sort(key=lambda f: (f["n"], f["replicate"], f["method"]))
    return _aggregate(pop, config, items, results, failures)


def _aggregate(pop, config, items, results, failures):
    tidy = []
    for item in items:
        if item not in results:
            continue
        method, n, r = item
        for param, s in results[item]["summary"].items():
            tidy.append({"method": method, "n": n, "replicate": r, "param": param,
                         "mean": s["mean"], "q025": s["q025"], "q975": s["q975"]})

    cov = pop.covariate_names or [f"x_{j + 1}" for j in range(pop.P)]
    resp = pop.response_names or [f"y_{d + 1}" for d in range(pop.D)]
    names = [f"B[{cov[p]},{resp[d]}]" for p in range(pop.P) for d in range(pop.D)]

    ref = None
    pp = results.get(("population-posterior", 0, 0))
    if pp is not None:
        ref = pp["B"].mean(axis=0)

    aggregate = []
    groups = [("population-posterior", 0)] if pp is not None else []
    groups += [(m, int(n)) for n in config.sample_sizes
               for m in ("pseudo", "unweighted", "srs") if m in config.methods]
    for method, n in groups:
        reps = [results[it] for it in items if it[0] == method and it[1] == n and it in results]
        if not reps:
            continue
        pooled = np.concatenate([rr["B"] for rr in reps])
        mean = pooled.mean(axis=0)
        lo, hi = np.quantile(pooled, [0.025, 0.975], axis=0)
        widths = np.mean([np.quantile(rr["B"], 0.975, axis=0) - np.quantile(rr["B"], 0.025, axis=0)
                          for rr in reps], axis=0)
        params = {}
        for k, name in enumerate(names):
            p, d = divmod(k, pop.D)
            params[name] = {
                "pooled_mean": float(mean[p, d]), "pooled_q025": float(lo[p, d]),
                "pooled_q975": float(hi[p, d]), "pooled_width": float(hi[p, d] - lo[p, d]),
                "average_width": float(widths[p, d]),
                "bias": float(mean[p, d] - ref[p, d]) if ref is not None else None,
            }
        rec = {"method": method, "n": n, "n_replicates": len(reps), "params": params}
        hd = [rr["hellinger_sq"] for rr in reps if "hellinger_sq" in rr]
        if hd:
            rec["hellinger_sq"] = float(np.mean(hd))
        aggregate.append(rec)

    contraction = None
    if config.focus_covariate in cov:
        contraction = []
        for rec in aggregate:
            if rec["method"] == "population-posterior":
                continue
            keys = [f"B[{config.focus_covariate},{r}]" for r in resp]
            ps = [rec["params"][k] for k in keys]
            contraction.append({
                "n": rec["n"], "method": rec["method"],
                "hellinger_sq": rec.get("hellinger_sq", float("nan")),
                "bias_emp_hires": ps[0]["bias"] if ps[0]["bias"] is not None else float("nan"),
                "bias_emp_seps": (ps[1]["bias"] if len(ps) > 1 and ps[1]["bias"] is not None
                                  else float("nan")),
                "ci_width": ps[0]["pooled_width"],
            })

    seeds = {"master_seed": config.master_seed,
             "items": {f"{m}|{n}|{r}": item_seed(config.master_seed, m, n, r) for m, n, r in items}}
    pp_summary = None
    if pp is not None:
        pp_summary = {name: float(ref.reshape(-1)[k]) for k, name in enumerate(names)}
    return StudyResult(config, tidy, aggregate, failures, pp_summary, contraction, seeds)


# ---------------------------------------------------------------- outputs

def _num(x):
    return repr(float(x))


def save_study(result: StudyResult, outdir):
    """Write replicates.csv, aggregate.json and contraction.csv; return the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    tidy_path = os.path.join(outdir, "replicates.csv")
    with open(tidy_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIDY_COLUMNS)
        for row in result.replicates:
            w.writerow([row["method"], row["n"], row["replicate"], row["param"],
                        _num(row["mean"]), _num(row["q025"]), _num(row["q975"])])
    paths.append(tidy_path)
    agg_path = os.path.join(outdir, "aggregate.json")
    with open(agg_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(agg_path)
    if result.contraction is not None:
        paths.append(diagnostics.save_contraction_csv(result.contraction,
                                                      os.path.join(outdir, "contraction.csv")))
    return paths


def summarize_distributions(pop: FinitePopulation, samples_by_n):
    """Quartiles of each response for the population and the pooled samples at each n."""
    resp = pop.response_names or [f"y_{d + 1}" for d in range(pop.D)]

    def quartiles(Y):
        return np.quantile(Y, [0.25, 0.5, 0.75], axis=0)

    rows = []
    q = quartiles(pop.responses)
    for d, name in enumerate(resp):
        rows.append({"source": "population", "n": pop.n_units, "response": name,
                     "q25": float(q[0, d]), "median": float(q[1, d]), "q75": float(q[2, d])})
    for n in sorted(samples_by_n):
        samples = samples_by_n[n]
        if not isinstance(samples, (list, tuple)):
            samples = [samples]
        Y = np.concatenate([s.responses for s in samples])
        q = quartiles(Y)
        for d, name in enumerate(resp):
            rows.append({"source": "sample", "n": int(n), "response": name,
                         "q25": float(q[0, d]), "median": float(q[1, d]), "q75": float(q[2, d])})
    return rows
