"""Compare the compiled and pure-Python cache/TLB kernels.

    python benchmarks/bench_kernels.py [--ops N] [--payload BYTES] [--repeat R]

Prints one line per (workload, backend) with the best of R wall-clock times.
"""

from __future__ import annotations

import argparse
import random
import time

from ncsim._kernels import available_backends, get_backend
from ncsim.config import RunConfig
from ncsim.scenarios import run_covert_channel


def cache_stream(mod, ops: int, seed: int = 1) -> None:
    rng = random.Random(seed)
    core = mod.CacheCore(64, 8)
    lines = [rng.randrange(4096) for _ in range(ops)]
    for i, line in enumerate(lines):
        if i % 7 == 0:
            core.invalidate(line)
        else:
            core.access(line)
    oracle = [(0x3000 + s) << 6 for s in range(256)]
    for _ in range(ops // 2048):
        core.reload_many(oracle)
        core.invalidate_many(oracle)


def tlb_stream(mod, ops: int, seed: int = 2) -> None:
    rng = random.Random(seed)
    core = mod.TlbCore(64)
    tags = [rng.randrange(256) for _ in range(ops)]
    for i, tag in enumerate(tags):
        asid = i & 1
        if core.lookup(asid, tag) is None:
            core.insert(asid, tag, tag + 0x100, True, True)
        if i % 4096 == 0:
            core.flush(asid)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ops", type=int, default=200_000)
    ap.add_argument("--payload", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = available_backends()
    payload = bytes(random.Random(0).randrange(256) for _ in range(args.payload))
    results: dict[tuple[str, str], float] = {}
    for name in backends:
        mod = get_backend(name)
        results["cache", name] = best_of(lambda: cache_stream(mod, args.ops), args.repeat)
        results["tlb", name] = best_of(lambda: tlb_stream(mod, args.ops), args.repeat)
        results["covert", name] = best_of(
            lambda: run_covert_channel(payload, RunConfig(), backend=name), args.repeat)

    print(f"{'workload':<8} {'backend':<8} {'seconds':>9} {'speedup':>8}")
    for work in ("cache", "tlb", "covert"):
        base = results[work, "python"]
        for name in backends:
            t = results[work, name]
            print(f"{work:<8} {name:<8} {t:9.4f} {base / t:7.2f}x")
    if "cython" not in backends:
        print("compiled kernels not built; only the pure-Python backend was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
