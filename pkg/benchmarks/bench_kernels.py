#!/usr/bin/env python3
"""Benchmark the compiled recurrent kernels against the numpy fallback.

Times one fused forward+backward pass over shapes representative of story
training (many short sentences, narrow hidden state). Run from the repo
root after building the extension:

    python benchmarks/bench_kernels.py [--csv out.csv]
"""

import argparse
import time

import numpy as np

from rmn.kernels import reference

try:
    from rmn.kernels import _fused
except ImportError:
    _fused = None

SHAPES = [
    # (sequences, padded length, input dim, hidden)
    (64, 8, 32, 32),
    (256, 8, 32, 32),
    (1024, 12, 32, 32),
    (256, 20, 64, 64),
]


def bench(mod, kind: str, n, length, d, h, reps: int = 5) -> float:
    rng = np.random.default_rng(0)
    gates = 4 if kind == "lstm" else 3
    x = rng.normal(size=(n * length, d))
    lengths = rng.integers(1, length + 1, size=n)
    wx = rng.normal(size=(d, gates * h)) / np.sqrt(d)
    wh = rng.normal(size=(h, gates * h)) / np.sqrt(h)
    b = np.zeros(gates * h)
    dh = rng.normal(size=(n, h))
    fwd = mod.lstm_forward if kind == "lstm" else mod.gru_forward
    bwd = mod.lstm_backward if kind == "lstm" else mod.gru_backward
    fwd(x, lengths, wx, wh, b)  # warm-up
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        _, cache = fwd(x, lengths, wx, wh, b)
        bwd(dh, cache)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--csv", help="also write results as CSV")
    args = ap.parse_args()

    rows = []
    for kind in ("lstm", "gru"):
        for n, length, d, h in SHAPES:
            numpy_ms = bench(reference, kind, n, length, d, h)
            if _fused is not None:
                compiled_ms = bench(_fused, kind, n, length, d, h)
                speedup = numpy_ms / compiled_ms
            else:
                compiled_ms, speedup = float("nan"), float("nan")
            rows.append((kind, n, length, d, h, numpy_ms, compiled_ms, speedup))

    header = f"{'kind':<6}{'seqs':>6}{'len':>5}{'dim':>5}{'hid':>5}" \
             f"{'numpy_ms':>10}{'compiled_ms':>13}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for kind, n, length, d, h, a, b, s in rows:
        print(f"{kind:<6}{n:>6}{length:>5}{d:>5}{h:>5}{a:>10.2f}{b:>13.2f}{s:>9.2f}")
    if _fused is None:
        print("\ncompiled extension not built; only the fallback was timed")

    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("kind,seqs,len,dim,hidden,numpy_ms,compiled_ms,speedup\n")
            for kind, n, length, d, h, a, b, s in rows:
                fh.write(f"{kind},{n},{length},{d},{h},{a:.3f},{b:.3f},{s:.3f}\n")
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
