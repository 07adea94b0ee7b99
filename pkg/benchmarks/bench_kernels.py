"""Time the numba and numpy convolution backends on the preset layer shapes.

    python benchmarks/bench_kernels.py [--repeat 20]

Reports milliseconds per call for forward, input-gradient and weight-gradient
on the two distinct layer shapes of each preset, plus one full training step.
"""
import argparse
import time

import numpy as np

from esnet import autodiff as ad
from esnet import kernels
from esnet.model import EStableNet, forward, init_params
from esnet.training import mse_loss

SHAPES = {
    # name: (batch, in_ch, out_ch, spatial, kernel)
    "1D 1->16": (16, 1, 16, (256,), 21),
    "1D 16->1": (16, 16, 1, (256,), 21),
    "2D 1->16": (4, 1, 16, (128, 128), 13),
    "2D 16->1": (4, 16, 1, (128, 128), 13),
}


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile, caches)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return 1e3 * min(times)


def bench_layers(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, (b, cin, cout, spatial, k) in SHAPES.items():
        x = rng.standard_normal((b, cin) + spatial)
        w = rng.standard_normal((cout, cin) + (k,) * len(spatial))
        bias = rng.standard_normal(cout)
        g = rng.standard_normal((b, cout) + spatial)
        row = [name]
        for backend in sorted(kernels.BACKENDS):
            row += [
                best_of(lambda: kernels.conv_forward(x, w, bias, backend), repeat),
                best_of(lambda: kernels.conv_grad_input(g, w, backend), repeat),
                best_of(lambda: kernels.conv_grad_weight(x, g, k, backend), repeat),
            ]
        rows.append(row)
    return rows


def bench_step(repeat):
    rng = np.random.default_rng(1)
    net = init_params(EStableNet.build(1, 4, 21), "xavier-uniform", seed=0)
    x = rng.standard_normal((16, 1, 256))
    y = rng.standard_normal((16, 1, 256))

    def step():
        net.zero_grad()
        pred, _ = forward(net, x)
        mse_loss(pred, y).backward()

    out = {}
    for backend in sorted(kernels.BACKENDS):
        previous = kernels.BACKEND
        kernels.BACKEND = backend
        try:
            out[backend] = best_of(step, max(3, repeat // 4))
        finally:
            kernels.BACKEND = previous
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    names = sorted(kernels.BACKENDS)
    header = f"{'layer':12s}" + "".join(f"{b + ' ' + op:>16s}" for b in names for op in ("fwd", "d_in", "d_w"))
    print(header)
    for row in bench_layers(args.repeat):
        print(f"{row[0]:12s}" + "".join(f"{v:16.2f}" for v in row[1:]))
    print()
    for backend, ms in bench_step(args.repeat).items():
        print(f"1D preset training step (batch 16, forward + backward), {backend}: {ms:.1f} ms")


if __name__ == "__main__":
    main()
