"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 16]

Reports the best-of-N wall time for conv1d forward/backward, maxpool1d and one
full training step of the default 12-lead encoder, and checks that both
backends agree.
"""

import argparse
import time

import numpy as np

from mets import kernels
from mets.contrastive import batch_loss, similarity_matrix, temperature
from mets.encoder import EncoderConfig, build_encoder, embed_ecg
from mets.tensor import Tensor


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation on first use)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(batch, rng):
    f32 = np.float32
    stem_x = rng.standard_normal((batch, 12, 1006)).astype(f32)
    stem_w = rng.standard_normal((64, 12, 7)).astype(f32)
    mid_x = rng.standard_normal((batch, 64, 252)).astype(f32)
    mid_w = rng.standard_normal((64, 64, 3)).astype(f32)
    g_stem = rng.standard_normal((batch, 64, 500)).astype(f32)
    pool_x = rng.standard_normal((batch, 64, 502)).astype(f32)

    model = build_encoder(EncoderConfig(), seed=0)
    ecg = rng.standard_normal((batch, 12, 1000)).astype(f32)
    text = Tensor(rng.standard_normal((batch, 128)).astype(f32))

    def train_step():
        model.zero_grad()
        loss = batch_loss(similarity_matrix(text, embed_ecg(model, ecg, mode="train")),
                          temperature(model["log_temperature"]))
        loss.backward()
        return loss.item()

    return {
        "conv1d fwd  stem 12->64 k7 s2": lambda: kernels.conv1d_forward(stem_x, stem_w, 2, 500),
        "conv1d fwd  block 64->64 k3": lambda: kernels.conv1d_forward(mid_x, mid_w, 1, 250),
        "conv1d bwd  stem 12->64 k7 s2": lambda: kernels.conv1d_backward(stem_x, stem_w, g_stem, 2),
        "maxpool1d   k3 s2": lambda: kernels.maxpool1d_forward(pool_x, 3, 2, 250),
        "encoder train step (fwd+bwd)": train_step,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args()

    results = {}
    for backend in ("numba", "numpy"):
        prev = kernels.set_backend(backend)
        try:
            bench = cases(args.batch, np.random.default_rng(0))
            results[backend] = {name: (best_of(fn, args.repeat), fn()) for name, fn in bench.items()}
        finally:
            kernels.set_backend(prev)

    print(f"batch={args.batch} repeat={args.repeat} (best of N, milliseconds)")
    print(f"{'case':<32} {'numba':>9} {'numpy':>9} {'speedup':>8} {'max |diff|':>11}")
    for name in results["numba"]:
        t_nb, out_nb = results["numba"][name]
        t_np, out_np = results["numpy"][name]
        a = out_nb[0] if isinstance(out_nb, tuple) else out_nb
        b = out_np[0] if isinstance(out_np, tuple) else out_np
        diff = float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
        print(f"{name:<32} {t_nb * 1e3:>9.1f} {t_np * 1e3:>9.1f} {t_np / t_nb:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
