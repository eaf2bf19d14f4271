"""Time the simulation kernels: compiled backend vs the pure-numpy fallback.

Runs the same batch of paths through both backends on a shipped benchmark
model, checks that the outcome counts agree exactly, and prints wall-clock
times and the speedup ratio.  The compiled backend is warmed up once so JIT
compilation does not pollute the measurement.

Usage:
    python benchmarks/kernel_bench.py [--paths 20000] [--step 1e-3] [--model ...]
"""

import argparse
import importlib.resources
import time

from sdereach import kernels, oracle
from sdereach.model import load_model


def run_once(model, query, cfg, backend):
    t0 = time.perf_counter()
    est = oracle.estimate_probability(model, query, cfg, backend=backend)
    return time.perf_counter() - t0, est


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default=None,
                        help="model JSON path (default: shipped Brownian benchmark)")
    parser.add_argument("--paths", type=int, default=20000)
    parser.add_argument("--step", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeat", type=int, default=3,
                        help="timed repetitions per backend (best is reported)")
    args = parser.parse_args(argv)

    if args.model:
        model, query = load_model(args.model)
    else:
        ref = importlib.resources.files("sdereach") / "data" / "brownian_horizon.json"
        model, query = load_model(str(ref))

    cfg = oracle.SimConfig(step_h=args.step, n_paths=args.paths, seed=args.seed)
    backends = ["numpy"]
    if kernels.numba is not None:
        backends.insert(0, "numba")
        # warm-up triggers JIT compilation outside the timed region
        warm = oracle.SimConfig(step_h=args.step, n_paths=32, seed=args.seed)
        oracle.estimate_probability(model, query, warm, backend="numba")
    else:
        print("numba not installed; timing the numpy fallback only")

    results = {}
    for backend in backends:
        best, est = None, None
        for _ in range(args.repeat):
            elapsed, est = run_once(model, query, cfg, backend)
            best = elapsed if best is None else min(best, elapsed)
        results[backend] = (best, est)
        print(f"{backend:>6}: {best:8.3f} s   p_hat={est.p_hat:.5f} "
              f"hits={est.n_success}/{est.n_paths}")

    if len(results) == 2:
        (tn, en), (tp, ep) = results["numba"], results["numpy"]
        if (en.n_success, en.n_paths) != (ep.n_success, ep.n_paths):
            raise SystemExit("backend outcomes disagree; kernels are broken")
        print(f"agreement: identical outcomes; speedup numpy/numba = {tp / tn:.1f}x")


if __name__ == "__main__":
    main()
