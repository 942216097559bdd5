"""Time one latent log-mean sweep under the compiled and fallback kernels.

Usage: python benchmarks/bench_psi_sweep.py [--sizes 500 2500 8595] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from pseudopost import _kernels


def inputs(n, D=2, seed=0):
    rng = np.random.default_rng(seed)
    mean = rng.normal(1.0, 1.0, (n, D))
    psi = mean + 0.3 * rng.standard_normal((n, D))
    y = rng.poisson(np.exp(psi)).astype(float)
    w = rng.uniform(0.2, 5.0, n)
    chol = np.linalg.cholesky(np.array([[6.0, 2.0], [2.0, 5.0]])[:D, :D])
    return psi, mean, y, w, chol


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 2500, 8595])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    kernels = {"python": _kernels.python_psi_sweep}
    if _kernels.HAVE_COMPILED:
        kernels["cython"] = _kernels.compiled_psi_sweep
    else:
        print("compiled kernel not built; timing the fallback only")
    print(f"{'n':>6} " + " ".join(f"{k + ' ms':>12}" for k in kernels) + "   speedup")
    for n in args.sizes:
        data = inputs(n)
        ref = None
        times = {}
        for name, fn in kernels.items():
            out = fn(*data, key=7)
            if ref is None:
                ref = out
            # libm and numpy transcendental functions may differ in the last ulp
            elif (not np.array_equal(ref[1], out[1])
                  or not np.allclose(ref[0], out[0], rtol=0, atol=1e-12)):
                raise SystemExit(f"backends disagree at n={n}")
            t = timeit.repeat(lambda: fn(*data, key=7), number=1, repeat=args.repeat)
            times[name] = 1e3 * min(t)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{n:>6} " + " ".join(f"{times[k]:>12.2f}" for k in kernels) + f"   {speed:7.1f}x")


if __name__ == "__main__":
    main()
