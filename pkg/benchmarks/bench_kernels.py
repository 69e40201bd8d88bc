"""Compare the numba and numpy embedding-bag kernels, and whole-model training.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Training time per backend is measured in a subprocess because the backend
is chosen at import time from SEEDSTAB_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from seedstab import _kernels

TRAIN_SNIPPET = """
import time
from seedstab.data import gen_synthetic_corpus
from seedstab.textmodel import LrSchedule, TrainConfig, build_vocab, encode_set, train
c = gen_synthetic_corpus(0, 2000, 400, 10)
v = build_vocab(c.train)
tr, dv = encode_set(c.train, v), encode_set(c.dev, v)
cfg = TrainConfig(epochs=5).resolved(len(tr))
train(cfg, LrSchedule.linear(cfg), tr, dv, len(v))  # warm-up (jit compile / cache load)
t = time.perf_counter()
for _ in range(3):
    train(cfg, LrSchedule.linear(cfg), tr, dv, len(v))
print((time.perf_counter() - t) / 3)
"""


def make_batch(rng, vocab, dim, batch, max_len):
    emb = rng.normal(size=(vocab, dim))
    lengths = rng.integers(1, max_len + 1, size=batch)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    tokens = rng.integers(0, vocab, size=offsets[-1]).astype(np.int64)
    return emb, tokens, offsets


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for batch, max_len in [(32, 20), (400, 20), (5000, 30)]:
        emb, tokens, offsets = make_batch(rng, 3000, 16, batch, max_len)
        grad = rng.normal(size=(batch, 16))
        impls = {"numpy": (_kernels.bag_mean_numpy, _kernels.bag_mean_backward_numpy)}
        if _kernels.NUMBA_AVAILABLE:
            impls["numba"] = (_kernels.bag_mean_numba, _kernels.bag_mean_backward_numba)
        for name, (fwd, bwd) in impls.items():
            fwd(emb, tokens, offsets)  # compile
            bwd(grad, tokens, offsets, np.zeros_like(emb))
            tf = min(timeit.repeat(lambda: fwd(emb, tokens, offsets), number=10, repeat=repeat)) / 10
            tb = min(timeit.repeat(lambda: bwd(grad, tokens, offsets, np.zeros_like(emb)), number=10, repeat=repeat)) / 10
            rows.append((batch, name, tf * 1e6, tb * 1e6))
    print(f"{'batch':>6} {'backend':>8} {'forward us':>12} {'backward us':>12}")
    for batch, name, tf, tb in rows:
        print(f"{batch:>6} {name:>8} {tf:>12.1f} {tb:>12.1f}")


def bench_training():
    print("\nfull training run (2000 reviews, 5 epochs), seconds per run")
    for flag in ("0", "1"):
        env = {**os.environ, "SEEDSTAB_DISABLE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        label = "numba" if flag == "0" else "numpy"
        print(f"{label:>8} {float(res.stdout.strip()):.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.skip_training:
        bench_training()


if __name__ == "__main__":
    main()
