"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from dartvb import kernels
from dartvb.synth import planted_stack


def cases(rng):
    stack = planted_stack(None, 40.0, 16000.0, 0.01, 0.02, depth=200)
    hours, zones = 8760, 11
    x = rng.uniform(-50, 50, (hours, zones))
    active = (rng.random((hours, zones)) < 0.4).astype(np.uint8)
    kz = rng.uniform(0.01, 0.5, zones)
    kp, km = rng.uniform(0, 0.1, hours), rng.uniform(0, 0.1, hours)
    design = np.column_stack([np.ones(50_000), rng.normal(size=(50_000, 50))])
    y = (rng.random(50_000) < 0.1).astype(np.float64)
    beta = rng.normal(size=51) * 0.1
    return {
        "clear_curve (200-step stack)": lambda k: k.clear_curve(stack.sp, stack.sq, stack.dp, stack.dq, 1000.0),
        "solve_hours (8760 h x 11 zones)": lambda k: k.solve_hours(x, active, kz, kp, km),
        "logistic_loss_grad (50000 x 51)": lambda k: k.logistic_loss_grad(beta, design, y),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the python backend only")
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b, mod in backends.items():
            fn(mod)
            n = 1
            while timeit.timeit(lambda: fn(mod), number=n) < 0.2:
                n *= 2
            times[b] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n
        line = f"{name:34s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if len(times) == 2:
            line += f"{times['python'] / times['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
