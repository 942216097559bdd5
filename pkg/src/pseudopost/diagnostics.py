"""Design conditions, Horvitz-Thompson functionals and Hellinger distances."""
import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

NORMALIZATION_TOL = 1e-6


# ---------------------------------------------------------------- design conditions

def condition_a4_gamma(pi):
    """Bound on inverse inclusion probabilities, ``1 / min pi``."""
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(~(pi > 0)):
        raise ValueError("inclusion probabilities must be strictly positive")
    return float(1.0 / pi.min())


def condition_a6_fraction(n, N):
    return n / N


def ht_functional(values, pi, N):
    """``(1/N) sum_{sampled} f_i / pi_i``: unbiased for the population mean of f."""
    values = np.asarray(values, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    return float(np.sum(values / pi) / N)


# ---------------------------------------------------------------- Hellinger

@dataclass
class HellingerResult:
    value: float
    variant: str          # "population", "pseudo" or "analytic"

    def __float__(self):
        return float(self.value)


def hellinger_sq(p1, p2, support):
    """Squared Hellinger distance ``sum (sqrt p1 - sqrt p2)^2`` on a grid.

    ``p1`` and ``p2`` map the support points to probabilities and must each
    carry unit mass on it to within 1e-6.
    """
    a = np.asarray(p1(support), dtype=np.float64)
    b = np.asarray(p2(support), dtype=np.float64)
    for name, p in (("p1", a), ("p2", b)):
        if np.any(p < 0):
            raise ValueError(f"{name} has negative probabilities")
        mass = float(np.sum(p))
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"{name} is not normalized on the support: mass {mass:.9g}")
    d = float(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))
    return min(max(d, 0.0), 2.0)


def poisson_hellinger_sq_closed_form(mu1, mu2):
    """Squared Hellinger distance between two Poisson laws."""
    return 2.0 * (1.0 - math.exp(-0.5 * (math.sqrt(mu1) - math.sqrt(mu2)) ** 2))


def _upper_count(m, s, tail=1e-8):
    z = stats.norm.isf(tail / 2)
    lam = math.exp(min(m + z * s, 700.0))
    return int(stats.poisson.isf(tail / 2, lam)) + 1


def poisson_lognormal_pmf(y, m, s):
    """pmf of ``Poisson(exp(psi))`` with ``psi ~ N(m, s^2)`` at counts ``y``.

    Integrates on a uniform psi grid spanning +-9 sd; the spacing shrinks
    with the Poisson likelihood width so that high-count units stay
    accurate. Trapezoid sums converge geometrically for this smooth,
    Gaussian-tailed integrand.
    """
    y = np.asarray(y, dtype=np.float64)
    if s < 1e-12:
        return stats.poisson.pmf(y, math.exp(m))
    lam_hi = math.exp(min(m + 3.0 * s, 700.0))
    h = min(s / 6.0, 0.35 / math.sqrt(max(lam_hi, 1.0)))
    k = int(math.ceil(9.0 * s / h))
    psi = m + h * np.arange(-k, k + 1)
    log_prior = -0.5 * ((psi - m) / s) ** 2 - math.log(s * math.sqrt(2 * math.pi)) + math.log(h)
    out = np.empty(y.shape)
    lgy = gammaln(y + 1.0)
    step = max(1, 4_000_000 // psi.size)
    for start in range(0, y.size, step):
        yy = y.ravel()[start:start + step]
        lg = lgy.ravel()[start:start + step]
        logt = yy[:, None] * psi[None, :] - np.exp(psi)[None, :] - lg[:, None] + log_prior[None, :]
        mx = logt.max(axis=1, keepdims=True)
        out.ravel()[start:start + step] = np.exp(mx[:, 0]) * np.exp(logt - mx).sum(axis=1)
    return out


class PoissonLognormalUnits:
    """Per-unit count distributions under coefficients ``B`` and precision ``Lambda``.

    Unit ``i`` has independent-margin density ``prod_d p(y_d | x_i, B, Lambda)``
    where each margin integrates ``Poisson(exp(psi_d))`` against the
    ``N(x_i' B_d, (Lambda^-1)_dd)`` prior.
    """

    def __init__(self, X, B, Lambda):
        self.X = np.asarray(X, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)
        cov = np.linalg.inv(np.asarray(Lambda, dtype=np.float64))
        self.sd = np.sqrt(np.diag(cov))
        self.means = self.X @ self.B

    @property
    def D(self):
        return self.B.shape[1]

    def margin(self, i, d):
        return float(self.means[i, d]), float(self.sd[d])

    def support(self, i, other=None, d=None):
        dims = range(self.D) if d is None else [d]
        top = []
        for dd in dims:
            m, s = self.margin(i, dd)
            hi = _upper_count(m, s)
            if other is not None:
                hi = max(hi, _upper_count(*other.margin(i, dd)))
            top.append(hi)
        return top

    def margin_pmf(self, i, d, counts):
        return poisson_lognormal_pmf(counts, *self.margin(i, d))

    def __call__(self, i):
        """Density evaluator for unit ``i`` on an (G, D) array of counts."""
        def pmf(points):
            points = np.atleast_2d(points)
            out = np.ones(points.shape[0])
            for d in range(self.D):
                out *= self.margin_pmf(i, d, points[:, d])
            return out
        return pmf

    def distance_sq(self, other, i):
        """Squared Hellinger distance to ``other`` for unit ``i``."""
        bc = 1.0
        for d in range(self.D):
            top = self.support(i, other, d)[0]
            counts = np.arange(top + 1)
            a = self.margin_pmf(i, d, counts)
            b = other.margin_pmf(i, d, counts)
            for name, p in (("p1", a), ("p2", b)):
                mass = float(p.sum())
                if abs(mass - 1.0) > NORMALIZATION_TOL:
                    raise ValueError(f"{name} margin {d} of unit {i} has mass {mass:.9g}")
            # 1 - h/2 rather than sum sqrt(ab): exact zero for identical margins
            bc *= 1.0 - 0.5 * float(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))
        return min(max(2.0 * (1.0 - bc), 0.0), 2.0)


def _unit_distance(p1, p2, i, support):
    if hasattr(p1, "distance_sq"):
        return p1.distance_sq(p2, i)
    return hellinger_sq(p1(i), p2(i), support(i))


def population_hellinger_sq(n_units, p1, p2, support=None) -> HellingerResult:
    """Average squared distance over all population units."""
    vals = [_unit_distance(p1, p2, i, support) for i in range(n_units)]
    return HellingerResult(float(np.mean(vals)), "population")


def pseudo_hellinger_sq(pop, sample, p1, p2, support=None) -> HellingerResult:
    """Inverse-probability weighted average of per-unit squared distances.

    ``p1`` and ``p2`` are indexed by population unit. Either both expose
    ``distance_sq`` (as :class:`PoissonLognormalUnits` does) or they are
    callables ``i -> density evaluator`` used with ``support(i)``.
    """
    N = pop.n_units
    vals = np.array([_unit_distance(p1, p2, int(i), support) for i in sample.indices])
    return HellingerResult(ht_functional(vals, sample.pi, N) if vals.size else 0.0, "pseudo")


# ---------------------------------------------------------------- contraction

CONTRACTION_COLUMNS = ["n", "method", "hellinger_sq", "bias_emp_hires", "bias_emp_seps", "ci_width"]


def contraction_curve(pop, fits, reference_B, focus_row, reference_Lambda=None, truth=None):
    """Distance and coefficient bias per (method, n).

    ``fits`` maps ``(method, n)`` to a list of ``(sample, draws)`` pairs.
    Bias compares the pooled posterior mean of row ``focus_row`` of B with
    ``reference_B``. The pseudo-Hellinger column compares per-unit fitted
    densities (posterior-mean B and Lambda) against ``truth`` (a
    :class:`PoissonLognormalUnits`); it is NaN when ``truth`` is None.
    """
    rows = []
    X = pop.covariates
    for (method, n), items in sorted(fits.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        pooled = np.concatenate([dr.B[:, focus_row, :] for _, dr in items])
        bias = pooled.mean(axis=0) - np.asarray(reference_B)[focus_row]
        widths = [np.quantile(dr.B[:, focus_row, 0], 0.975) - np.quantile(dr.B[:, focus_row, 0], 0.025)
                  for _, dr in items]
        if truth is not None:
            dists = []
            for smp, dr in items:
                fitted = PoissonLognormalUnits(X, dr.B.mean(axis=0), dr.Lambda.mean(axis=0))
                dists.append(pseudo_hellinger_sq(pop, smp, fitted, truth).value)
            hell = float(np.mean(dists))
        else:
            hell = float("nan")
        rows.append({"n": int(n), "method": method, "hellinger_sq": hell,
                     "bias_emp_hires": float(bias[0]),
                     "bias_emp_seps": float(bias[1]) if bias.size > 1 else float("nan"),
                     "ci_width": float(np.mean(widths))})
    return rows


def contraction_summary(rows, method="pseudo"):
    """Whether distance and |bias| shrink from the smallest to the largest n."""
    sel = sorted((r for r in rows if r["method"] == method), key=lambda r: r["n"])
    if len(sel) < 2:
        return {}
    first, last = sel[0], sel[-1]
    return {
        "method": method, "n_small": first["n"], "n_large": last["n"],
        "hellinger_decreases": bool(last["hellinger_sq"] < first["hellinger_sq"]),
        "bias_decreases": bool(abs(last["bias_emp_hires"]) < abs(first["bias_emp_hires"])),
    }


def save_contraction_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CONTRACTION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k])
                             for k in CONTRACTION_COLUMNS})
    return path
