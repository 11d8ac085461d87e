#!/usr/bin/env python3
"""Compare the numba and pure-numpy kernel backends.

Times the batched half-spectrum transforms at training-relevant shapes and a
full forward+backward step of the default model.  Run:

    python benchmarks/bench_backends.py [--repeats 30]
"""

import argparse
import timeit

import numpy as np

from adamoge import fourier, kernels
from adamoge.autodiff import ParameterStore, Tape, Variable
from adamoge.moge import AdaMoGeModel, ModelConfig
from adamoge.training import mse_loss


def bench_fft(rows: int, length: int, repeats: int) -> tuple[float, float]:
    rng = np.random.default_rng(0)
    x = rng.standard_normal((rows, length))
    re, im = fourier.rfft(x)  # warm the plan and jit caches

    fwd = timeit.timeit(lambda: fourier.rfft(x), number=repeats) / repeats
    inv = timeit.timeit(lambda: fourier.irfft(re, im, length), number=repeats) / repeats
    return fwd, inv


def bench_train_step(repeats: int) -> float:
    rng = np.random.default_rng(1)
    store = ParameterStore()
    model = AdaMoGeModel(store, 96, 96, 7, ModelConfig(), seed=0)
    x = rng.standard_normal((32, 96, 7))
    y = rng.standard_normal((32, 96, 7))

    def step():
        store.zero_grads()
        with Tape() as tape:
            loss = mse_loss(model.forward(Variable(x)), y)
            tape.backward(loss)

    step()  # warm up
    return timeit.timeit(step, number=repeats) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    shapes = [(224, 96), (1568, 96), (224, 720), (64, 256)]

    results = {}
    for backend in backends:
        kernels.set_backend(backend)
        rows = {}
        for shape in shapes:
            rows[shape] = bench_fft(*shape, args.repeats)
        rows["train_step"] = bench_train_step(max(3, args.repeats // 5))
        results[backend] = rows

    header = f"{'case':>18}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for shape in shapes:
        for which, idx in (("rfft", 0), ("irfft", 1)):
            label = f"{which} {shape[0]}x{shape[1]}"
            line = f"{label:>18}"
            times = [results[b][shape][idx] for b in backends]
            for t in times:
                line += f"{t * 1e3:>12.3f}ms"
            if len(times) == 2:
                line += f"{times[0] / times[1]:>9.2f}x"
            print(line)
    line = f"{'train step':>18}"
    times = [results[b]["train_step"] for b in backends]
    for t in times:
        line += f"{t * 1e3:>12.3f}ms"
    if len(times) == 2:
        line += f"{times[0] / times[1]:>9.2f}x"
    print(line)


if __name__ == "__main__":
    main()
