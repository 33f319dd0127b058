"""Compare the compiled and pure-Python backends.

Times the per-step primitives at several window sizes and one end-to-end
synthetic run per backend, then prints a table and the speedups.

    python benchmarks/bench_backends.py --windows 100 250 500 --repeat 50
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from retroconf import _backend
from retroconf.datagen import SyntheticConfig, generate, make_rng
from retroconf.experiment import ExperimentConfig, run_experiment


def _median_seconds(fn, repeat: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def _spd_inverse(rng, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    Q = np.linalg.inv(A @ A.T + np.eye(n))
    return np.ascontiguousarray(0.5 * (Q + Q.T))


def bench_primitives(kernels, window: int, dim: int, repeat: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    n = window + 1
    P = rng.standard_normal((n, dim))
    x = rng.standard_normal(dim)
    norms = np.linalg.norm(P, axis=1)
    Q = _spd_inverse(rng, n)
    y = rng.standard_normal(n)
    k = 0.1 * rng.standard_normal(n)
    k_rest = np.ascontiguousarray(k[1:])
    out = np.empty_like(Q)
    return {
        "rbf_vector": _median_seconds(lambda: kernels.rbf_vector(P, x, 0.05), repeat),
        "ntk_vector": _median_seconds(lambda: kernels.ntk_vector(P, norms, x, float(np.linalg.norm(x))), repeat),
        "loo_terms": _median_seconds(lambda: kernels.loo_terms(Q, y, k), repeat),
        "slide_update": _median_seconds(lambda: kernels.slide_update(Q, k_rest, 2.0, out), repeat),
        "downdate_first": _median_seconds(lambda: kernels.downdate_first(Q), repeat),
        "append_update": _median_seconds(lambda: kernels.append_update(Q[1:, 1:].copy(), k_rest, 2.0), repeat),
    }


def bench_run(kernels, window: int, seed: int = 1) -> dict:
    stream = generate(SyntheticConfig("linear", seed=seed), make_rng(seed))
    cfg = ExperimentConfig(controller="dtaci", window=window, ridge=0.1, bandwidth_sq=75.0)
    start = time.perf_counter()
    res = run_experiment(cfg, stream, timed=True, kernels=kernels)
    total = time.perf_counter() - start
    return {"run_seconds": total, "median_step": float(np.median(res.step_seconds))}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--windows", type=int, nargs="+", default=[100, 250, 500])
    parser.add_argument("--dim", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=30)
    parser.add_argument("--json", help="also write raw timings to this file")
    args = parser.parse_args(argv)

    names = _backend.available()
    if "cython" not in names:
        print("compiled backend not built; only the Python fallback is available", file=sys.stderr)
    results = {}
    for name in names:
        kernels = _backend.load(name)
        for w in args.windows:
            row = bench_primitives(kernels, w, args.dim, args.repeat)
            row.update(bench_run(kernels, w))
            results[(name, w)] = row

    metrics = list(next(iter(results.values())))
    print(f"{'backend':<8} {'w':>5} " + " ".join(f"{m:>15}" for m in metrics))
    for (name, w), row in results.items():
        cells = [f"{row[m] * 1e3:>12.3f} ms" if m != "run_seconds" else f"{row[m]:>13.2f} s" for m in metrics]
        print(f"{name:<8} {w:>5} " + " ".join(cells))
    if "cython" in names and "python" in names:
        print("\nspeedup of cython over python")
        for w in args.windows:
            py, cy = results[("python", w)], results[("cython", w)]
            print(f"  w={w:<4} " + ", ".join(f"{m} {py[m] / cy[m]:.1f}x" for m in metrics))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({f"{n}:{w}": r for (n, w), r in results.items()}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
