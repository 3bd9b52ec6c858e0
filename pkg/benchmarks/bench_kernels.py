"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once before timing so numba compilation (or loading from
the on-disk cache) is not counted. Outputs of the two paths are compared as
well, since a fast wrong kernel is no use. With SYNTHASR_DISABLE_NUMBA=1 the
"numba" column times the same loops as plain Python.
"""
import argparse
import time

import numpy as np

from synthasr import _accel
from synthasr.kernels import IMPLEMENTATIONS


def ctc_args(rng):
    T, K, n_labels = 200, 30, 40
    logits = rng.standard_normal((T, K))
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    labels = rng.integers(0, K - 1, n_labels)
    ext = np.full(2 * n_labels + 1, K - 1, dtype=np.int64)
    ext[1::2] = labels
    return log_probs, ext, K - 1


def resample_args(rng):
    return rng.standard_normal(16000), 1.1, 1 / 1.1, 32.0


def edit_args(rng):
    return rng.integers(0, 50, 300).astype(np.int64), rng.integers(0, 50, 280).astype(np.int64)


def lstm_args(rng):
    T, n_in, H = 100, 40, 64
    W = rng.normal(0, 0.1, (n_in, 4 * H))
    U = rng.normal(0, 0.1, (H, 4 * H))
    return rng.standard_normal((T, 1, n_in)), W, U, np.zeros(4 * H), np.zeros((1, H)), np.zeros((1, H))


ARGS = {"ctc": ctc_args, "resample": resample_args, "edit_table": edit_args, "lstm_forward": lstm_args}


def best_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"backend: {_accel.backend()}")
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  max |diff|")
    for name, (fast, slow) in IMPLEMENTATIONS.items():
        inputs = ARGS[name](rng)
        a, b = first(fast(*inputs)), first(slow(*inputs))
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        t_fast = best_time(fast, inputs, args.repeat)
        t_slow = best_time(slow, inputs, args.repeat)
        print(f"{name:<14}{t_fast * 1e3:>10.2f}{t_slow * 1e3:>10.2f}{t_slow / t_fast:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
