"""``pseudopost`` command line: generate, sample, fit, diagnose, study.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 numerical failure.
"""
import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
import yaml

from . import __version__, _kernels, diagnostics
from .design import SamplingDesign, compute_inclusion_probs, design_report, draw_sample, \
    load_sample, save_report, save_sample
from .errors import ConfigError, GenerationError, NumericalError, SchemaError
from .model import FitConfig, fit
from .population import GeneratingParams, ModelConfig, default_jolts_params, generate_population, \
    load_population, save_population, sidecar_path
from .simulation import StudyAborted, StudyConfig, run_study, save_study

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
WORKERS_ENV = "PSEUDOPOST_WORKERS"
MIN_RETAINED = 100


# ---------------------------------------------------------------- manifest

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: object
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    started: str = field(default_factory=_now)
    finished: str = ""
    version: str = __version__
    environment: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__,
        "kernel_backend": _kernels.BACKEND})

    def add_input(self, path):
        self.inputs.append({"path": str(path), "sha256": sha256_file(path)})

    def add_output(self, path):
        self.outputs.append({"path": str(path), "sha256": sha256_file(path)})

    def write(self, path):
        self.finished = _now()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path


def _manifest_path(args, out):
    return args.manifest or f"{out}.manifest.json"


# ---------------------------------------------------------------- config helpers

def load_yaml(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _params_from(spec, model_cfg):
    if spec is None or spec == "default":
        if model_cfg.recipe.kind != "jolts" or (model_cfg.P, model_cfg.D) != (9, 2):
            raise ConfigError("params 'default' only applies to the jolts recipe with P=9, D=2; "
                              "give B and Lambda explicitly")
        return default_jolts_params()
    if not isinstance(spec, dict):
        raise ConfigError("field 'params' must be 'default' or a mapping with B and Lambda")
    for key in ("B", "Lambda"):
        if key not in spec:
            raise ConfigError(f"params missing field {key!r}")
    try:
        return GeneratingParams.from_dict(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params: {exc}") from None


def population_from_config(cfg, seed_override=None):
    """Build (ModelConfig, GeneratingParams, seed) from a generate-config mapping."""
    unknown = set(cfg) - {"population", "params", "seed"}
    if unknown:
        raise ConfigError(f"unknown generate config field(s): {sorted(unknown)}")
    if "population" not in cfg:
        raise ConfigError("generate config missing field 'population'")
    model_cfg = ModelConfig.from_dict(cfg["population"])
    params = _params_from(cfg.get("params", "default"), model_cfg)
    seed = seed_override if seed_override is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("generate config missing field 'seed'")
    return model_cfg, params, int(seed)


def default_workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return value


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    cfg = load_yaml(args.config)
    if args.n_units is not None:
        cfg.setdefault("population", {})["n_units"] = args.n_units
    model_cfg, params, seed = population_from_config(cfg, args.seed)
    manifest = RunManifest("generate", {"population": model_cfg.to_dict(),
                                        "params": params.to_dict()}, seed)
    if args.config:
        manifest.add_input(args.config)
    pop = generate_population(model_cfg, params, seed)
    save_population(pop, args.out)
    manifest.add_output(args.out)
    manifest.add_output(sidecar_path(args.out))
    manifest.write(_manifest_path(args, args.out))
    print(f"wrote {args.out} ({pop.n_units} units)")


def cmd_sample(args):
    pop = load_population(args.population)
    design = SamplingDesign(args.kind, args.n, args.power)
    probs = compute_inclusion_probs(pop, design)
    sample = draw_sample(pop, probs, design, args.seed)
    save_sample(pop, sample, args.out)
    report_path = args.report or f"{args.out}.design.json"
    save_report(design_report(pop, probs, [sample], design), report_path)
    manifest = RunManifest("sample", design.to_dict(), args.seed)
    manifest.add_input(args.population)
    manifest.add_output(args.out)
    manifest.add_output(report_path)
    manifest.write(_manifest_path(args, args.out))
    print(f"wrote {args.out} (n={sample.n}, certainty units={probs.certainty_count})")


def _fit_config(args):
    values = load_yaml(args.config)
    bad = set(values) - set(FitConfig.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown fit field(s): {sorted(bad)}")
    for key, attr in (("n_iter", "n_iter"), ("burn_in", "burn_in"), ("thin", "thin"),
                      ("seed", "seed"), ("n_threads", "threads")):
        if getattr(args, attr) is not None:
            values[key] = getattr(args, attr)
    if args.weighted is not None:
        values["weighted"] = args.weighted
    if "fixed" in values:
        values["fixed"] = tuple(values["fixed"])
    cfg = FitConfig(**values)
    cfg.validate()
    if cfg.retained < MIN_RETAINED:
        raise ConfigError(f"only {cfg.retained} retained draws; reported runs need at least "
                          f"{MIN_RETAINED} (raise n_iter or lower burn_in/thin)")
    return cfg


def cmd_fit(args):
    cfg = _fit_config(args)
    sample = load_sample(args.sample)
    names = None
    if args.population:
        names = load_population(args.population)
    draws = fit(sample, cfg,
                covariate_names=names.covariate_names if names else None,
                response_names=names.response_names if names else None)
    draws_path = args.out
    summary_path = args.summary or f"{args.out}.summary.json"
    draws.save_csv(draws_path)
    draws.save_summary(summary_path)
    manifest = RunManifest("fit", cfg.to_dict(), cfg.seed)
    manifest.add_input(args.sample)
    manifest.add_output(draws_path)
    manifest.add_output(summary_path)
    manifest.write(_manifest_path(args, draws_path))
    print(f"wrote {draws_path} ({draws.n_draws} draws, weighted={cfg.weighted})")


def _posterior_means(summary_path, pop):
    """Posterior-mean B and Lambda from a fit summary.

    Fits run without ``--population`` label columns ``x_j``/``y_d``, so both
    the population's names and the generic ones are accepted.
    """
    with open(summary_path, encoding="utf-8") as fh:
        summary = json.load(fh)["summary"]
    generic = ([f"x_{j + 1}" for j in range(pop.P)], [f"y_{d + 1}" for d in range(pop.D)])
    cov, resp = pop.covariate_names or generic[0], pop.response_names or generic[1]
    if f"B[{cov[0]},{resp[0]}]" not in summary:
        cov, resp = generic
    try:
        B = np.array([[summary[f"B[{c},{r}]"]["mean"] for r in resp] for c in cov])
        Lam = np.empty((pop.D, pop.D))
        for a in range(pop.D):
            for b in range(a, pop.D):
                Lam[a, b] = Lam[b, a] = summary[f"Lambda[{resp[a]},{resp[b]}]"]["mean"]
    except KeyError as exc:
        raise SchemaError(f"{summary_path}: summary lacks entry {exc}") from None
    return B, Lam


def cmd_diagnose(args):
    pop = load_population(args.population)
    design = SamplingDesign(args.kind, args.n, args.power)
    probs = compute_inclusion_probs(pop, design)
    samples = [load_sample(p, pop.n_units) for p in args.samples]
    for path, s in zip(args.samples, samples):
        if np.any(s.indices < 0) or np.any(s.indices >= pop.n_units):
            raise SchemaError(f"{path}: unit ids outside the population")
        if not np.allclose(s.pi, probs.pi[s.indices], rtol=1e-12, atol=0):
            raise SchemaError(f"{path}: recorded pi disagrees with the stated design")
    report = design_report(pop, probs, samples, design).to_dict()
    report["gamma_check"] = diagnostics.condition_a4_gamma(probs.pi) == report["gamma"]
    if args.summary:
        if pop.true_params is None:
            raise ConfigError("pseudo-Hellinger needs the population's generating parameters")
        if len(samples) != 1 or len(args.summary) != 1:
            raise ConfigError("--summary takes one fit summary paired with one sample")
        B, Lam = _posterior_means(args.summary[0], pop)
        fitted = diagnostics.PoissonLognormalUnits(pop.covariates, B, Lam)
        truth = diagnostics.PoissonLognormalUnits(pop.covariates, pop.true_params.B,
                                                  pop.true_params.Lambda)
        report["pseudo_hellinger_sq"] = diagnostics.pseudo_hellinger_sq(
            pop, samples[0], fitted, truth).value
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest("diagnose", design.to_dict(), None)
    manifest.add_input(args.population)
    for p in list(args.samples) + list(args.summary or []):
        manifest.add_input(p)
    manifest.add_output(args.out)
    manifest.write(_manifest_path(args, args.out))
    print(f"wrote {args.out}")


def study_from_config(cfg, args):
    unknown = set(cfg) - {"population", "study", "preset"}
    if unknown:
        raise ConfigError(f"unknown study config field(s): {sorted(unknown)}")
    preset = args.preset or cfg.get("preset")
    study_fields = dict(cfg.get("study") or {})
    if preset == "desk":
        base = StudyConfig.desk().to_dict()
        base.update(study_fields)
        study_fields = base
    elif preset not in (None, "full"):
        raise ConfigError(f"unknown preset {preset!r}; choose 'desk' or 'full'")
    if args.replicates is not None:
        study_fields["n_replicates"] = args.replicates
    if args.sizes is not None:
        study_fields["sample_sizes"] = args.sizes
    if args.seed is not None:
        study_fields["master_seed"] = args.seed
    study_fields["workers"] = args.workers if args.workers is not None else default_workers()
    return StudyConfig.from_dict(study_fields)


def cmd_study(args):
    cfg = load_yaml(args.config)
    study = study_from_config(cfg, args)
    pop_cfg = cfg.get("population")
    manifest_inputs = [args.config] if args.config else []
    if args.population:
        pop_cfg = {"path": args.population}
    if not isinstance(pop_cfg, dict) or not ({"path", "generate"} & set(pop_cfg)):
        raise ConfigError("study config needs field 'population' with 'path' or 'generate'")
    if "path" in pop_cfg:
        pop = load_population(pop_cfg["path"])
        manifest_inputs.append(pop_cfg["path"])
    else:
        model_cfg, params, seed = population_from_config(pop_cfg["generate"])
        pop = generate_population(model_cfg, params, seed)
    study.validate(pop.n_units)
    manifest = RunManifest("study", {"study": study.to_dict(), "population": pop_cfg},
                           study.master_seed)
    for p in manifest_inputs:
        manifest.add_input(p)

    def progress(done, total):
        if args.verbose:
            print(f"\r{done}/{total} fits", end="", file=sys.stderr, flush=True)

    result = run_study(pop, study, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    for path in save_study(result, args.out):
        manifest.add_output(path)
    manifest.write(args.manifest or os.path.join(args.out, "manifest.json"))
    print(f"wrote {args.out} ({len(result.aggregate)} aggregate rows, "
          f"{len(result.failures)} failures)")


# ---------------------------------------------------------------- parser

def _int_at_least(lo):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
        if value < lo:
            raise argparse.ArgumentTypeError(f"{value} must be at least {lo}")
        return value
    return parse


_positive_int = _int_at_least(1)
_count = _int_at_least(0)


def build_parser():
    p = argparse.ArgumentParser(prog="pseudopost", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a synthetic population")
    g.add_argument("--config", help="YAML with population, params and seed")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=_count)
    g.add_argument("--n-units", type=_positive_int)
    g.add_argument("--manifest")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample", help="draw a sample under a design")
    s.add_argument("--population", required=True)
    s.add_argument("--kind", default="pps", choices=["pps", "pps-fixed-size", "poisson", "srs"])
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--power", type=float, default=0.5)
    s.add_argument("--seed", type=_count, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_sample)

    f = sub.add_parser("fit", help="run the Gibbs sampler on a sample")
    f.add_argument("--sample", required=True)
    f.add_argument("--population", help="population CSV, used for column names")
    f.add_argument("--config", help="YAML with FitConfig fields")
    wt = f.add_mutually_exclusive_group()
    wt.add_argument("--weighted", dest="weighted", action="store_true", default=None)
    wt.add_argument("--unweighted", dest="weighted", action="store_false")
    f.add_argument("--n-iter", type=_positive_int)
    f.add_argument("--burn-in", type=_count)
    f.add_argument("--thin", type=_positive_int)
    f.add_argument("--seed", type=_count)
    f.add_argument("--threads", type=_positive_int)
    f.add_argument("--out", required=True, help="draws CSV")
    f.add_argument("--summary")
    f.add_argument("--manifest")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("diagnose", help="design conditions and pseudo-Hellinger distance")
    d.add_argument("--population", required=True)
    d.add_argument("--samples", nargs="+", required=True)
    d.add_argument("--kind", default="pps", choices=["pps", "pps-fixed-size", "poisson", "srs"])
    d.add_argument("--n", type=_positive_int, required=True)
    d.add_argument("--power", type=float, default=0.5)
    d.add_argument("--summary", nargs="+", help="fit summary JSON for the pseudo-Hellinger check")
    d.add_argument("--out", required=True)
    d.add_argument("--manifest")
    d.set_defaults(func=cmd_diagnose)

    st = sub.add_parser("study", help="Monte Carlo comparison of estimators")
    st.add_argument("--config")
    st.add_argument("--population", help="population CSV (overrides the config)")
    st.add_argument("--preset", choices=["desk", "full"])
    st.add_argument("--replicates", type=_positive_int)
    st.add_argument("--sizes", type=_positive_int, nargs="+")
    st.add_argument("--seed", type=_count)
    st.add_argument("--workers", type=_positive_int,
                    help=f"worker processes (default ${WORKERS_ENV} or 1)")
    st.add_argument("--out", required=True, help="output directory")
    st.add_argument("--manifest")
    st.add_argument("--verbose", action="store_true")
    st.set_defaults(func=cmd_study)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, GenerationError, StudyAborted, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
