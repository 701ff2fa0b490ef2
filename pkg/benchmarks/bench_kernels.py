"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py            # kernels only
    python3 benchmarks/bench_kernels.py --epoch    # plus one training epoch per backend

Kernel timings call both modules directly in one process.  The epoch timing
runs a subprocess per backend so ``KCAN_PURE_PYTHON`` takes effect at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from kcan import _pykernels

try:
    from kcan import _ckernels
except ImportError:
    _ckernels = None


def random_graph(rng, n, degree):
    counts = rng.poisson(degree, size=n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    nnz = int(indptr[-1])
    tails = rng.integers(0, n, size=nnz).astype(np.int64)
    probs = _pykernels.segment_softmax(rng.normal(size=nnz), indptr)
    cdf = np.empty(nnz)
    for s in range(n):
        a, b = indptr[s], indptr[s + 1]
        if b > a:
            cdf[a:b] = np.cumsum(probs[a:b])
            cdf[b - 1] = 1.0
    return indptr, tails, probs, cdf


def cases(n, degree, dim, batch, seed=0):
    rng = np.random.default_rng(seed)
    indptr, tails, probs, cdf = random_graph(rng, n, degree)
    nnz = len(tails)
    x = rng.normal(size=(n, dim))
    grad = rng.normal(size=(n, dim))
    logits = rng.normal(size=nnz)
    rows = rng.integers(0, n, size=4 * batch)
    vals = rng.normal(size=(4 * batch, dim))
    nodes = rng.integers(0, n, size=batch)
    uniforms = rng.random((batch, 16))
    targets = np.stack([rng.choice(n, size=2, replace=False) for _ in range(batch)]).ravel()
    return {
        "segment_softmax": lambda k: k.segment_softmax(logits, indptr),
        "segment_softmax_backward": lambda k: k.segment_softmax_backward(probs, logits, indptr),
        "spmm": lambda k: k.spmm(indptr, tails, probs, x),
        "spmm_backward": lambda k: k.spmm_backward(indptr, tails, probs, x, grad),
        "scatter_add_rows": lambda k: k.scatter_add_rows(n, rows, vals),
        "sample_rows": lambda k: k.sample_rows(indptr, cdf, nodes, uniforms),
        "bfs_sample": lambda k: k.bfs_sample(
            indptr, cdf, tails, targets, n, 2, 16, np.random.default_rng(1)
        ),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def bench_kernels(args):
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"graph: {args.nodes} nodes, mean degree {args.degree}, dim {args.dim}, batch {args.batch}")
    print(f"{'kernel':<26}{'cython ms':>11}{'python ms':>11}{'speedup':>9}")
    for name, call in cases(args.nodes, args.degree, args.dim, args.batch).items():
        py = best_of(lambda: call(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<26}{'-':>11}{py * 1e3:>11.3f}{'-':>9}")
            continue
        cy = best_of(lambda: call(_ckernels), args.repeat)
        print(f"{name:<26}{cy * 1e3:>11.3f}{py * 1e3:>11.3f}{py / cy:>8.1f}x")


EPOCH_SCRIPT = """
import sys, tempfile, time
from kcan import kernels
from kcan.config import TrainConfig
from kcan.graph import load_dataset
from kcan.synth import SynthConfig, generate, write_dataset
from kcan.trainer import train
with tempfile.TemporaryDirectory() as d:
    write_dataset(generate(SynthConfig(seed=0)), d)
    inter, split, graph = load_dataset(d, 0)
    t = time.perf_counter()
    train(TrainConfig(epochs=1, seed=0), graph, split)
    print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_epoch():
    print("\none training epoch on the default synthetic dataset")
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("KCAN_PURE_PYTHON", None)
        if pure:
            env["KCAN_PURE_PYTHON"] = "1"
        out = subprocess.run(
            [sys.executable, "-c", EPOCH_SCRIPT], env=env, capture_output=True, text=True, check=True
        )
        backend, seconds = out.stdout.split()
        print(f"{backend:<8}{float(seconds):>8.2f} s")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, default=5000)
    p.add_argument("--degree", type=float, default=8.0)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--epoch", action="store_true", help="also time one training epoch per backend")
    args = p.parse_args()
    bench_kernels(args)
    if args.epoch:
        bench_epoch()


if __name__ == "__main__":
    main()
