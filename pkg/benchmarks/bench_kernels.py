"""Benchmark: compiled fused kernels vs the numpy reference backend.

Shapes mirror the large end of the intended workload (thousands of
patients per graph block, shared width 64). Matmuls run on BLAS in both
backends, so the numbers isolate the fused elementwise/reduction work.

Run: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from mgfusion import kernels


def _timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def build_cases(rng):
    p, width = 1500, 64
    gram = rng.normal(size=(p, p))
    denom = 0.5 + rng.random(size=(p, p))
    d_out = rng.normal(size=(p, p))
    walk = rng.random(size=(2 * p, 2 * p))
    walk[rng.random(size=walk.shape) < 0.6] = 0.0
    feats = rng.normal(size=(2 * p, width))
    d_agg = rng.normal(size=(2 * p, width))
    param = rng.normal(size=(4081, 32))
    grad = rng.normal(size=(4081, 32))

    def case_edge_forward(backend):
        return lambda: backend.edge_forward(gram, denom, 0.5)

    def case_edge_backward(backend):
        return lambda: backend.edge_backward(gram, denom, 0.5, d_out)

    def case_wmean_forward(backend):
        return lambda: backend.wmean_forward(walk, feats)

    def case_wmean_backward(backend):
        out, rowsum = backend.wmean_forward(walk, feats)
        return lambda: backend.wmean_backward(walk, feats, out, rowsum, d_agg)

    def case_adamw(backend):
        state = {
            "p": param.copy(), "m": np.zeros_like(param), "v": np.zeros_like(param),
        }

        def step():
            backend.adamw_update(state["p"], grad, state["m"], state["v"], 1,
                                 1e-4, 0.9, 0.999, 1e-8, 1e-3)

        return step

    return [
        (f"edge_forward          {p}x{p}", case_edge_forward),
        (f"edge_backward         {p}x{p}", case_edge_backward),
        (f"wmean_forward   {2*p}x{2*p}@{width}", case_wmean_forward),
        (f"wmean_backward  {2*p}x{2*p}@{width}", case_wmean_backward),
        ("adamw_update         4081x32", case_adamw),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {backends}")
    if "compiled" not in backends:
        print("compiled kernels not built; install with a C toolchain to compare")
    rng = np.random.default_rng(0)
    cases = build_cases(rng)
    header = f"{'kernel':<32}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, make in cases:
        times = {}
        for backend_name in backends:
            backend = kernels.get_backend(backend_name)
            times[backend_name] = _timeit(make(backend), args.repeats)
        row = f"{name:<32}" + "".join(
            f"{times[b] * 1e3:>11.2f} ms" for b in backends
        )
        if "numpy" in times and "compiled" in times:
            row += f"{times['numpy'] / times['compiled']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
