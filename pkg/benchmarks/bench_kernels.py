"""Compare the numba and numpy forms of each hot kernel.

Both forms are called directly, so one process measures both regardless of
LDNLM_DISABLE_NUMBA.  Prints CSV: kernel,backend,size,best_seconds,max_abs_diff.

    python3 benchmarks/bench_kernels.py [--repeats 3] [--quick]
"""

import argparse
import csv
import sys
import time

import numpy as np

from ldnlm import attention, nlm
from ldnlm._accel import HAVE_NUMBA


def best_time(fn, repeats):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def nlm_case(size, sr=5, pr=2):
    img = np.random.default_rng(size).random((size, size)) * 200 + 10
    pad = np.pad(img, sr + pr, mode="reflect")
    args = (pad, size, size, sr, pr, 1.0 / 50.0**2)
    return {"numba": lambda: nlm._nlm_numba(*args), "numpy": lambda: nlm._nlm_numpy(*args)}


def attention_case(kind, n, dk=8):
    rng = np.random.default_rng(n)
    q, k, v = (rng.standard_normal((n, dk)) for _ in range(3))
    if kind == "linear":
        return {"numba": lambda: attention._linear_numba(q, k, v)[0],
                "numpy": lambda: attention._linear_numpy(q, k, v)[0]}
    scale = 1 / np.sqrt(dk)
    return {"numba": lambda: attention._softmax_numba(q, k, v, scale)[0],
            "numpy": lambda: attention._softmax_numpy(q, k, v, scale)[0]}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small sizes only")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    nlm_sizes = [32, 64] if args.quick else [64, 128, 256]
    attn_sizes = [1024, 2048] if args.quick else [1024, 4096, 16384]
    cases = [("nlm", s, nlm_case(s)) for s in nlm_sizes]
    cases += [("attention_linear", n, attention_case("linear", n)) for n in attn_sizes]
    cases += [("attention_softmax", n, attention_case("softmax", n)) for n in attn_sizes[:2]]

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "backend", "size", "best_seconds", "max_abs_diff"])
    for name, size, fns in cases:
        t_nb, out_nb = best_time(fns["numba"], args.repeats)
        t_np, out_np = best_time(fns["numpy"], args.repeats)
        diff = float(np.max(np.abs(out_nb - out_np)))
        w.writerow([name, "numba", size, f"{t_nb:.6f}", f"{diff:.3e}"])
        w.writerow([name, "numpy", size, f"{t_np:.6f}", f"{diff:.3e}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
