"""Benchmark the numba-jitted GRU kernels against the pure-numpy fallback.

Runs the forward and forward+backward recurrent kernels at a few model sizes
on both backends and prints a speedup table. The backends share one source of
truth (the same Python functions, jitted or not), so this also spot-checks
that their outputs agree.

Usage: python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from speechinv.kernels import NUMBA_AVAILABLE, get_kernels
from speechinv.model import Model, ModelConfig, init_params
from speechinv.training import cross_entropy_grad, mae_grad


def time_model(backend: str, hidden: int, dense: int, length: int, repeats: int):
    cfg = ModelConfig(hidden=hidden, dense=dense, multi_task=True)
    model = Model(init_params(cfg, seed=0), backend=backend)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(length, cfg.n_inputs))
    tv_target = rng.normal(size=(length, cfg.n_tvs))
    onehot = np.zeros((length, cfg.n_phones))
    onehot[np.arange(length), rng.integers(0, cfg.n_phones, length)] = 1.0

    out = model.forward(x)  # warm-up pays any jit compilation cost here
    model.backward(d_tv=mae_grad(out.tv, tv_target),
                   d_ph=cross_entropy_grad(out.ph_logits, onehot))

    fwd = 0.0
    both = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = model.forward(x)
        fwd += time.perf_counter() - t0
        t0 = time.perf_counter()
        model.forward(x)
        model.backward(d_tv=mae_grad(out.tv, tv_target),
                       d_ph=cross_entropy_grad(out.ph_logits, onehot))
        both += time.perf_counter() - t0
    return fwd / repeats, both / repeats, out.tv


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not NUMBA_AVAILABLE:
        print("numba is not importable; nothing to compare against")
        return

    sizes = [(16, 32, 200), (64, 128, 200), (128, 256, 200)]
    print(f"{'hidden':>6} {'dense':>6} {'L':>4} | {'numpy fwd':>10} {'numba fwd':>10} "
          f"{'speedup':>7} | {'numpy f+b':>10} {'numba f+b':>10} {'speedup':>7}")
    for hidden, dense, length in sizes:
        np_fwd, np_both, np_tv = time_model("numpy", hidden, dense, length, args.repeats)
        nb_fwd, nb_both, nb_tv = time_model("numba", hidden, dense, length, args.repeats)
        agree = np.max(np.abs(np_tv - nb_tv))
        print(f"{hidden:>6} {dense:>6} {length:>4} | {np_fwd * 1e3:>8.2f}ms {nb_fwd * 1e3:>8.2f}ms "
              f"{np_fwd / nb_fwd:>6.1f}x | {np_both * 1e3:>8.2f}ms {nb_both * 1e3:>8.2f}ms "
              f"{np_both / nb_both:>6.1f}x   (max |diff| {agree:.2e})")
    print(f"\nactive kernels: get_kernels().name = {get_kernels().name!r}; "
          "set SPEECHINV_BACKEND=numpy|numba|auto to override")


if __name__ == "__main__":
    main()
