"""Timing comparison of the numba and numpy GRU kernel backends.

Runs the fused sequence kernels on collection- and training-shaped
inputs, interleaving the two backends and keeping the best of N repeats
so machine noise cancels. Also reports the maximum forward/backward
disagreement between backends on identical inputs.

Usage:
    python -m benchmarks.compare_backends [--reps 5] [--seed 0]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from taskmix.nn.kernels import gru_numba, gru_numpy

# (label, op, batch, T, context dim, hidden dim); dims follow the
# shipped desk profile (obs 7, action 3 -> context 18, hidden 2x18 = 36).
# "cell" is the per-step collection path, "train" a full forward+backward
# pass, and "embed" the no-grad final-state pass used for policy batches.
SHAPES = (
    ("collection step", "cell", 16, 1, 18, 36),
    ("inference batch", "train", 512, 32, 18, 36),
    ("embedding batch", "embed", 2048, 32, 18, 36),
    ("wide hidden", "train", 512, 32, 18, 128),
)


def make_inputs(batch, T, D, H, rng):
    xs = rng.standard_normal((T, batch, D))
    mask = np.ones((T, batch), dtype=bool)
    if T > 1:
        pads = rng.integers(0, T // 2, size=batch)
        for i, p in enumerate(pads):
            mask[:p, i] = False
    W = rng.standard_normal((D, 3 * H)) / np.sqrt(D)
    U = rng.standard_normal((H, 3 * H)) / np.sqrt(H)
    b = rng.standard_normal(3 * H) * 0.1
    dh = rng.standard_normal((batch, H))
    return xs, mask, W, U, b, dh


def best_of(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(op, batch, T, D, H, reps, rng):
    xs, mask, W, U, b, dh = make_inputs(batch, T, D, H, rng)
    h0 = rng.standard_normal((batch, H))
    x0 = np.ascontiguousarray(xs[0])

    def run(mod):
        if op == "cell":
            return lambda: mod.gru_cell(x0, h0, W, U, b)
        if op == "embed":
            return lambda: mod.gru_forward_last(xs, mask, W, U, b)
        def fwd_bwd():
            h, cache = mod.gru_forward(xs, mask, W, U, b)
            mod.gru_backward(xs, mask, W, U, b, cache, dh)
        return fwd_bwd

    backends = {"numba": run(gru_numba), "numpy": run(gru_numpy)}
    for fn in backends.values():
        fn()  # warm-up; first numba call may compile

    # interleave single-rep timings so cpu frequency drift hits both
    times = {name: float("inf") for name in backends}
    for _ in range(reps):
        for name, fn in backends.items():
            times[name] = min(times[name], best_of(fn, 1))

    if op == "cell":
        worst = float(np.max(np.abs(gru_numba.gru_cell(x0, h0, W, U, b)
                                    - gru_numpy.gru_cell(x0, h0, W, U, b))))
    elif op == "embed":
        worst = float(np.max(np.abs(
            gru_numba.gru_forward_last(xs, mask, W, U, b)
            - gru_numpy.gru_forward_last(xs, mask, W, U, b))))
    else:
        h_a, cache_a = gru_numba.gru_forward(xs, mask, W, U, b)
        h_b, cache_b = gru_numpy.gru_forward(xs, mask, W, U, b)
        grads_a = gru_numba.gru_backward(xs, mask, W, U, b, cache_a, dh)
        grads_b = gru_numpy.gru_backward(xs, mask, W, U, b, cache_b, dh)
        worst = float(np.max(np.abs(h_a - h_b)))
        for ga, gb in zip(grads_a, grads_b):
            denom = max(float(np.max(np.abs(gb))), 1.0)
            worst = max(worst, float(np.max(np.abs(ga - gb))) / denom)
    return times, worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=5,
                        help="repeats per backend (best kept)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    header = (f"{'case':<16} {'op':<6} {'shape (n,T,D,H)':<20} "
              f"{'numba ms':>9} {'numpy ms':>9} {'numpy/numba':>12} "
              f"{'max |diff|':>11}")
    print(header)
    print("-" * len(header))
    for label, op, batch, T, D, H in SHAPES:
        times, worst = bench_case(op, batch, T, D, H, args.reps, rng)
        ratio = times["numpy"] / times["numba"]
        shape = f"({batch},{T},{D},{H})"
        print(f"{label:<16} {op:<6} {shape:<20} "
              f"{times['numba'] * 1e3:>9.3f} {times['numpy'] * 1e3:>9.3f} "
              f"{ratio:>12.2f} {worst:>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
