"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on model-sized inputs, then one full training step on a
synthetic dialogue with each backend swapped in, and checks that both
backends agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from ten_dst import _kernels_py, kernels

try:
    from ten_dst import _kernels as compiled
except ImportError:
    compiled = None


def kernel_cases(rng):
    H, D, n = 25, 32, 12
    X = rng.normal(size=(n, D))
    h0 = np.zeros(H)
    Wx, Wh = rng.uniform(-0.08, 0.08, (3 * H, D)), rng.uniform(-0.08, 0.08, (3 * H, H))
    bx, bh = np.zeros(3 * H), np.zeros(3 * H)
    cache = _kernels_py.gru_forward(X, h0, Wx, Wh, bx, bh)
    dHs = rng.normal(size=(n, H))
    A = rng.dirichlet(np.ones(8), size=7)
    Q = _kernels_py.bp_chain_forward(A)
    dQ = rng.normal(size=Q.shape)
    return {
        "gru_forward (12x32 -> 25)": lambda m: m.gru_forward(X, h0, Wx, Wh, bx, bh),
        "gru_backward": lambda m: m.gru_backward(dHs, X, h0, Wx, Wh, *cache),
        "bp_chain_forward (7x8)": lambda m: m.bp_chain_forward(A),
        "bp_chain_backward": lambda m: m.bp_chain_backward(dQ, A, Q),
    }


def time_call(fn, repeat):
    # best of 5 batches
    return min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat


def train_step_time(module, repeat):
    from ten_dst import autodiff as ad
    from ten_dst.corpus import SynthConfig, build_vocab, generate_synthetic
    from ten_dst.model import ModelParams
    from ten_dst.training import variant_loss

    saved = {k: getattr(kernels, k) for k in ("gru_forward", "gru_backward", "bp_chain_forward",
                                              "bp_chain_backward")}
    for k in saved:
        setattr(kernels, k, getattr(module, k))
    try:
        cfg = SynthConfig(seed=0, n_dialogues=20)
        dialogues = generate_synthetic(cfg)
        params = ModelParams.init(cfg.ontology, build_vocab(dialogues), seed=0)
        named = list(params.named_parameters().values())

        def step():
            for d in dialogues:
                ad.zero_grad(named)
                ad.backward(variant_loss(params, d, "ten").loss)

        return time_call(step, max(1, repeat // 200)) / len(dialogues)
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<28}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, call in kernel_cases(rng).items():
        py = time_call(lambda: call(_kernels_py), args.repeat) * 1e6
        if compiled is None:
            print(f"{name:<28}{py:>14.2f}")
            continue
        cy = time_call(lambda: call(compiled), args.repeat) * 1e6
        as_tuple = lambda out: out if isinstance(out, tuple) else (out,)
        for a, b in zip(as_tuple(call(_kernels_py)), as_tuple(call(compiled))):
            np.testing.assert_allclose(a, b, atol=1e-12)
        print(f"{name:<28}{py:>14.2f}{cy:>14.2f}{py / cy:>9.1f}x")
    py = train_step_time(_kernels_py, args.repeat) * 1e3
    line = f"{'train step per dialogue':<28}{py:>11.2f} ms"
    if compiled is not None:
        cy = train_step_time(compiled, args.repeat) * 1e3
        line += f"{cy:>11.2f} ms{py / cy:>9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
