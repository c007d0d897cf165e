"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Times each kernel on representative shapes, then a short end-to-end training
run of one node model under each backend.
"""

import argparse
import json
import time

import numpy as np

from diffscm import kernels
from diffscm._ext import _kernels_py

try:
    from diffscm._ext import _kernels as _compiled
except ImportError:
    _compiled = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    z = rng.normal(size=(64, 256))
    g = rng.normal(size=(64, 256))
    n = 1 + 128 * 3 + 256 * 129 + 256 * 257 + 257
    p, gr = rng.normal(size=n), rng.normal(size=n)
    m, v = np.zeros(n), np.ones(n)
    x, y = rng.normal(size=(500, 3)), rng.normal(size=(500, 3))
    sig = 1.0 / (1.0 + np.exp(-z))
    return {
        "silu_forward 64x256": lambda impl: impl.silu_forward(z),
        "silu_backward 64x256": lambda impl: impl.silu_backward(g, z, sig),
        f"adam_update n={n}": lambda impl: impl.adam_update(p, gr, m, v, 1e-4, 0.9, 0.999, 1e-8, 1.0),
        "rbf_sum 500x500x3": lambda impl: impl.rbf_sum(x, y, 0.5, True),
    }


def training_time(backend, epochs=5, n=2000):
    from diffscm.diffusion import DiffusionNodeModel, make_schedule, train_node

    kernels.use_backend(backend)
    rng = np.random.default_rng(0)
    pa = rng.normal(size=(n, 1))
    x = np.sin(pa) + 0.5 * rng.normal(size=(n, 1))
    model = DiffusionNodeModel.create(1, 1, 1, make_schedule(), rng)
    t0 = time.perf_counter()
    train_node(model, x, pa, epochs, 64, 1e-4, rng)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()

    if _compiled is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in kernel_cases(rng).items():
        t_py = _best(lambda: fn(_kernels_py), args.repeat)
        t_c = _best(lambda: fn(_compiled), args.repeat) if _compiled else float("nan")
        rows.append({"case": name, "python_s": t_py, "cython_s": t_c, "speedup": t_py / t_c})

    prev = kernels.BACKEND
    t_py = training_time("python", args.epochs)
    t_c = training_time("cython", args.epochs) if _compiled else float("nan")
    kernels.use_backend(prev)
    rows.append({"case": f"train_node {args.epochs} epochs n=2000", "python_s": t_py,
                 "cython_s": t_c, "speedup": t_py / t_c})

    print(f"{'case':40s} {'python':>10s} {'cython':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['case']:40s} {r['python_s']:10.5f} {r['cython_s']:10.5f} {r['speedup']:8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
