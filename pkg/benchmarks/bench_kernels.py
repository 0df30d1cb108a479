"""Compare the compiled kernels with their NumPy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20]

Prints the best time per call for each kernel and backend, the speedup of
the compiled backend, and the largest relative difference between the two
outputs.
The end-to-end section times one right-hand-side evaluation of the Darcy
flow in a subprocess per backend (``BARRIER_EKI_PURE_PYTHON=1`` forces the
fallback).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from barrier_eki._kernels import backends
from barrier_eki.forward_models import build_darcy2d


def _cases():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((10, 1024))
    G = rng.standard_normal((10, 50))
    model = build_darcy2d(32)
    kappa = np.exp(rng.standard_normal(model.tri.shape[0]))
    err = rng.standard_normal(10 * 1024)
    y0 = rng.standard_normal(err.size)
    y1 = rng.standard_normal(err.size)
    return {
        "ensemble_moments J=10 d=1024 K=50": ("ensemble_moments", (U, G)),
        "p1_assemble_dense n=32": ("p1_assemble_dense",
                                   (kappa, model._tri_c, model._local_c, model.free_index,
                                    model.free.size)),
        "rms_error_norm n=10240": ("rms_error_norm", (err, y0, y1, 1e-9, 1e-6)),
    }


def _max_diff(a, b):
    """Largest difference relative to the largest entry of ``b``."""
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


_E2E = """
import timeit, numpy as np
from barrier_eki import BACKEND
from barrier_eki.dynamics import rhs_array
from barrier_eki.experiments.presets import get_preset
from barrier_eki.experiments.runner import build_problem, build_flow
cfg = get_preset("darcy", desk=False)
p = build_problem(cfg)
spec = build_flow(cfg, p)
U = p.ens0.particles
best = min(timeit.repeat(lambda: rhs_array(U, spec, 1.0), number=1, repeat={repeat}))
print(BACKEND, best)
"""


def end_to_end(repeat):
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, BARRIER_EKI_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", _E2E.format(repeat=repeat)], env=env,
                             capture_output=True, text=True, check=True)
        name, t = res.stdout.split()
        out[name] = float(t)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    impls = backends()
    if "cython" not in impls:
        print("compiled backend not built; only the fallback is available")
    print(f"{'kernel':<36}{'python [ms]':>12}{'cython [ms]':>13}{'speedup':>9}{'rel diff':>11}")
    for label, (fn, call_args) in _cases().items():
        times, outs = {}, {}
        for name, mod in impls.items():
            f = getattr(mod, fn)
            outs[name] = f(*call_args)
            times[name] = min(timeit.repeat(lambda: f(*call_args), number=1,
                                            repeat=args.repeat)) * 1e3
        if "cython" in times:
            print(f"{label:<36}{times['python']:>12.3f}{times['cython']:>13.3f}"
                  f"{times['python'] / times['cython']:>9.2f}"
                  f"{_max_diff(outs['python'], outs['cython']):>11.2e}")
        else:
            print(f"{label:<36}{times['python']:>12.3f}{'-':>13}{'-':>9}{'-':>11}")
    if not args.skip_e2e:
        e2e = end_to_end(max(args.repeat // 4, 3))
        line = ", ".join(f"{k} {v * 1e3:.2f} ms" for k, v in e2e.items())
        print(f"Darcy n=32 drift evaluation (J=10, d=1024): {line}")


if __name__ == "__main__":
    main()
