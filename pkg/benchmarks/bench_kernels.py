"""Times the jitted kernels against the pure-numpy fallback.

Run from the repo root:

    python benchmarks/bench_kernels.py [--batch 256] [--repeats 50]

Both backends are imported side by side, checked for agreement on shared
inputs, then timed. The first jitted call compiles; that cost is reported
separately from the steady-state numbers.
"""

import argparse
import time

import numpy as np

from eslm.experiment import render_aligned
from eslm.kernels import numpy_backend

try:
    from eslm.kernels import numba_backend
except ImportError:
    numba_backend = None


def make_inputs(rng, B, L, d, h, dk, vocab):
    tgt = rng.standard_normal((B, d))
    seq = rng.standard_normal((B, L, d))
    seq_len = rng.integers(0, L + 1, B)
    seq[np.arange(L)[None, :] >= seq_len[:, None]] = 0.0
    wq, wk, wv = (rng.standard_normal((h, d, dk)) for _ in range(3))
    ws = rng.standard_normal((h * dk, d))
    fwd = numpy_backend.attention_forward(tgt, seq, seq_len, wq, wk, wv, ws)
    summary, concat, weights, q, k, v = fwd
    return {
        "softmax": (rng.standard_normal((B, h, L)),
                    np.ascontiguousarray(np.broadcast_to(
                        (np.arange(L)[None, None, :]
                         < seq_len[:, None, None]), (B, h, L)))),
        "attention_forward": (tgt, seq, seq_len, wq, wk, wv, ws),
        "attention_backward": (rng.standard_normal((B, d)), tgt, seq, seq_len,
                               wq, wk, wv, ws, q, k, v, weights, concat),
        "scatter_add_rows": (np.zeros((vocab, d)),
                             rng.integers(0, vocab, 4 * B),
                             rng.standard_normal((4 * B, d))),
        "adagrad_dense": (rng.standard_normal((vocab, d)),
                          rng.standard_normal((vocab, d)),
                          rng.uniform(0.1, 1.0, (vocab, d)), 0.01, 1e-8),
        "adagrad_rows": (rng.standard_normal((vocab, d)),
                         rng.standard_normal((vocab, d)),
                         rng.uniform(0.1, 1.0, (vocab, d)),
                         np.unique(rng.integers(0, vocab, 2 * B)), 0.01, 1e-8),
    }


_KERNELS = ("softmax", "attention_forward", "attention_backward",
            "scatter_add_rows", "adagrad_rows", "adagrad_dense")

_MUTATES = {"scatter_add_rows": (0,), "adagrad_dense": (0, 2),
            "adagrad_rows": (0, 2)}


def _fresh(name, args):
    mutated = _MUTATES.get(name, ())
    return tuple(a.copy() if i in mutated else a for i, a in enumerate(args))


def _call(backend, name, args):
    fn = getattr(backend, name if name != "softmax" else "masked_softmax")
    return fn(*args)


def check_agreement(inputs):
    """Both backends must produce the same numbers on the same inputs."""
    for name in _KERNELS:
        a_args = _fresh(name, inputs[name])
        b_args = _fresh(name, inputs[name])
        out_np = _call(numpy_backend, name, a_args)
        out_nb = _call(numba_backend, name, b_args)
        if name in _MUTATES:  # compare the tensors updated in place
            out_np = [a_args[i] for i in _MUTATES[name]]
            out_nb = [b_args[i] for i in _MUTATES[name]]
        elif not isinstance(out_np, tuple):
            out_np, out_nb = (out_np,), (out_nb,)
        for x, y in zip(out_np, out_nb):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12,
                                       err_msg=name)


def time_kernel(backend, name, args, repeats):
    trials = [_fresh(name, args) for _ in range(repeats)]
    t0 = time.perf_counter()
    for trial in trials:
        _call(backend, name, trial)
    return (time.perf_counter() - t0) / repeats


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--seq-len", type=int, default=20)
    ap.add_argument("--emb-dim", type=int, default=32)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--head-dim", type=int, default=8)
    ap.add_argument("--vocab", type=int, default=7000)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if numba_backend is None:
        print("numba is not importable; nothing to compare against")
        return 1

    rng = np.random.default_rng(args.seed)
    inputs = make_inputs(rng, args.batch, args.seq_len, args.emb_dim,
                         args.heads, args.head_dim, args.vocab)

    t0 = time.perf_counter()
    check_agreement(inputs)  # first jitted calls land here
    compile_s = time.perf_counter() - t0
    print(f"backends agree on all kernels "
          f"(first-call pass incl. compilation: {compile_s:.1f}s)\n")

    rows = []
    for name in _KERNELS:
        ms_np = time_kernel(numpy_backend, name, inputs[name],
                            args.repeats) * 1e3
        ms_nb = time_kernel(numba_backend, name, inputs[name],
                            args.repeats) * 1e3
        rows.append([name, f"{ms_np:.3f}", f"{ms_nb:.3f}",
                     f"{ms_np / ms_nb:.2f}x"])
    print(render_aligned(["kernel", "numpy ms", "numba ms", "speedup"], rows))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
