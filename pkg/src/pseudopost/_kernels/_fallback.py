"""Pure-numpy twin of the compiled psi sweep.

Units advance in lockstep: each shrinkage round evaluates every unit that
has not yet accepted. The hash RNG and counter layout mirror
``_psi_sweep.pyx`` so both backends consume identical random streams.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniforms(key, units, counters):
    """Hash uniforms in (0, 1) for arrays of unit ids and counters."""
    units = np.asarray(units, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(key) + units * _GOLDEN)
        h = _mix(base + counters)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 1.1102230246251565e-16


def _loglik(psi, y, w, cap):
    with np.errstate(over="ignore"):
        ll = w * np.sum(y * psi - np.exp(psi), axis=1)
    ll[np.any(psi > cap, axis=1)] = -np.inf
    return ll


def psi_sweep(psi, mean, y, w, chol, key, cap=700.0, max_rounds=2000, n_threads=1):
    n, D = psi.shape
    status = np.zeros(n, dtype=np.intc)
    if n == 0:
        return status
    units = np.arange(n, dtype=np.uint64)

    z = np.empty((n, D))
    for d in range(D):
        u1 = uniforms(key, units, np.full(n, 2 * d, dtype=np.uint64))
        u2 = uniforms(key, units, np.full(n, 2 * d + 1, dtype=np.uint64))
        z[:, d] = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
    # back-substitution L^T v = z, row by row to match the compiled order
    nu = z.copy()
    for d in range(D - 1, -1, -1):
        acc = nu[:, d].copy()
        for j in range(d + 1, D):
            acc = acc - chol[j, d] * nu[:, j]
        nu[:, d] = acc / chol[d, d]
    nu *= (1.0 / np.sqrt(w))[:, None]
    f = psi - mean

    cur_ll = _loglik(psi, y, w, cap)
    bad = ~np.isfinite(cur_ll)
    status[bad] = 1
    log_y = cur_ll + np.log(uniforms(key, units, np.full(n, 2 * D, dtype=np.uint64)))
    theta = _TWO_PI * uniforms(key, units, np.full(n, 2 * D + 1, dtype=np.uint64))
    lo = theta - _TWO_PI
    hi = theta.copy()

    active = np.flatnonzero(~bad)
    for r in range(max_rounds):
        if active.size == 0:
            break
        th = theta[active]
        prop = mean[active] + f[active] * np.cos(th)[:, None] + nu[active] * np.sin(th)[:, None]
        ll = _loglik(prop, y[active], w[active], cap)
        ok = ll > log_y[active]
        psi[active[ok]] = prop[ok]
        rej = active[~ok]
        th = th[~ok]
        neg = th < 0.0
        lo[rej[neg]] = th[neg]
        hi[rej[~neg]] = th[~neg]
        u = uniforms(key, rej, np.full(rej.size, 2 * D + 2 + r, dtype=np.uint64))
        theta[rej] = lo[rej] + (hi[rej] - lo[rej]) * u
        active = rej
    status[active] = 2
    return status
