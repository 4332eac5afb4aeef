"""Time the numba and pure-numpy sketch kernels on the same inputs.

    python benchmarks/bench_kernels.py --n 1000000 --repeat 5

Both backends must produce identical sketches; the script checks that before
reporting timings.
"""

import argparse
import time

import numpy as np

from dpdice import kernels
from dpdice.hashing import HashKey, PrefixState


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--m", type=int, default=4096)
    ap.add_argument("--w", type=int, default=14)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    key = HashKey.random(rng)
    ps = PrefixState.for_prefix(key)
    elems = rng.integers(0, 1 << 62, size=args.n).astype(np.uint64)
    r = args.m.bit_length() - 1

    def fms(mod):
        bits = np.zeros((args.m, args.w), dtype=np.uint8)
        mod.fms_update(bits, ps.state, ps.rem, ps.k, ps.total_len, elems, r, args.w)
        return bits

    def hll(mod):
        regs = np.zeros(args.m, dtype=np.uint8)
        mod.hll_update(regs, ps.state, ps.rem, ps.k, ps.total_len, elems, r, args.w)
        return regs

    def digest(mod):
        return mod.siphash_batch(ps.state, ps.rem, ps.k, ps.total_len, elems, True)

    backends = kernels.backends()
    if "numba" in backends:
        # compile outside the timed region
        small = elems[:16]
        backends["numba"].siphash_batch(ps.state, ps.rem, ps.k, ps.total_len, small, True)
    print(f"n={args.n} m={args.m} w={args.w} best of {args.repeat}")
    print(f"{'kernel':<10}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in (("siphash", digest), ("fms", fms), ("hll", hll)):
        results = {name: best_of(lambda mod=mod: fn(mod), args.repeat) for name, mod in backends.items()}
        outs = [out for _, out in results.values()]
        for other in outs[1:]:
            ref = outs[0]
            same = (all(np.array_equal(a, b) for a, b in zip(ref, other) if a is not None)
                    if isinstance(ref, tuple) else np.array_equal(ref, other))
            if not same:
                raise SystemExit(f"{label}: backends disagree")
        cells = "".join(f"{t * 1e3:>10.1f}ms" for t, _ in results.values())
        speed = (results["numpy"][0] / results["numba"][0]) if "numba" in results else float("nan")
        print(f"{label:<10}{cells}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
