"""Time the numba kernels against the numpy fallback and check they agree.

    python3 benchmarks/bench_kernels.py [--repeats 20]
"""
import argparse
import timeit

import numpy as np

from stabdesign import kernels


def cases(rng):
    coords = rng.uniform(0, 60, (400, 3))
    logits = rng.normal(size=(4, 128, 128)).astype(np.float32)
    mask = rng.random((128, 128)) < 0.2
    mask[np.arange(128), np.arange(128)] = True
    y = kernels.numpy_impl.masked_softmax(logits, mask)
    gy = rng.normal(size=y.shape).astype(np.float32)
    a, b = rng.normal(size=(300, 25)), rng.normal(size=(228, 25))
    return {
        "contact_pairs (400 residues)": ("contact_pairs", (coords, 8.0)),
        "masked_softmax (4x128x128)": ("masked_softmax", (logits, mask)),
        "softmax_backward (4x128x128)": ("softmax_backward", (y, gy)),
        "rbf_kernel (300x228x25)": ("rbf_kernel", (a, b, 1.0, 1.0)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    if kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  max |diff|")
    for label, (name, inputs) in cases(rng).items():
        fast, slow = getattr(kernels.numba_impl, name), getattr(kernels.numpy_impl, name)
        ref, got = slow(*inputs), fast(*inputs)  # also triggers compilation
        diff = 0.0 if ref.dtype.kind in "iu" and np.array_equal(ref, got) else float(np.max(np.abs(ref - got)))
        t_np = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeats)) * 1e3
        t_nb = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeats)) * 1e3
        print(f"{label:32s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
