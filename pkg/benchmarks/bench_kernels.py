"""Compiled vs. pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from mocapfuse import _fallback
from mocapfuse.kernels import BACKENDS


def scan_case(rng, L=2000, H=64, N=16):
    a_bar = rng.uniform(0.5, 0.99, (H, N))
    b_bar = rng.normal(size=(H, N))
    c = rng.normal(size=(H, N))
    x = rng.normal(size=(L, H))
    return a_bar, b_bar, c, x


def residual_case(rng, L=1200, S=6):
    p1 = rng.normal(size=(L, S, 3))
    p2 = rng.normal(size=(L, S, 3)) + 2.0
    obs = np.linalg.norm(p1[:, :, None] - p2[:, None], axis=-1) + rng.normal(0, 0.1, (L, S, S))
    mask = rng.random((L, S, S)) > 0.1
    return p1, p2, obs, mask


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = {"ssm_scan": scan_case(rng), "distance_residual": residual_case(rng)}
    backends = dict(BACKENDS)
    backends.setdefault("python", _fallback)
    print(f"{'kernel':<20}{'backend':<10}{'best ms':>10}{'speedup':>10}")
    for name, case in cases.items():
        base = None
        for backend in ("python", "compiled"):
            if backend not in backends:
                print(f"{name:<20}{backend:<10}{'n/a':>10}")
                continue
            fn = getattr(backends[backend], name)
            t = min(timeit.repeat(lambda: fn(*case), number=1, repeat=args.repeat)) * 1e3
            base = base or t
            print(f"{name:<20}{backend:<10}{t:10.2f}{base / t:9.1f}x")


if __name__ == "__main__":
    main()
