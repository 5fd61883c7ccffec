#!/usr/bin/env python3
"""Time the compiled kernel extension against the numpy fallback.

Runs every hot kernel at clip-sized, batch-sized, and stress shapes and
prints a table of per-call times plus the speedup. Pass --json for a
machine-readable report, --end-to-end to also time one small discriminator
training under each backend in a subprocess (that choice is made at import,
so it cannot be flipped in-process).
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from stylescout.numerics.kernels import pure

try:
    from stylescout.numerics.kernels import _core as compiled
except ImportError:
    compiled = None

SHAPES = [(64, 32), (256, 128), (1024, 256)]


def make_cases(rows, dim, rng):
    """(name, args-builder) pairs; builders return fresh arrays per call so
    in-place kernels cannot contaminate the next timing."""
    x = rng.normal(size=(rows, dim))
    gamma = rng.normal(size=dim) + 1.0
    beta = rng.normal(size=dim)
    dy = rng.normal(size=(rows, dim))
    _, xhat, inv_std = pure.layer_norm_forward(x, gamma, beta)
    mask = (rng.random(dim) < 0.8).astype(np.uint8)
    mask[0] = 1
    probs = pure.masked_softmax_forward(x, mask)
    sig = pure.sigmoid_forward(x)
    row_mask = (rng.random(rows) < 0.8).astype(np.uint8)
    row_mask[0] = 1
    count = int(row_mask.sum())
    dmean = rng.normal(size=dim)
    grad = rng.normal(size=(rows, dim))

    return [
        ("layer_norm_forward", lambda: (x, gamma, beta)),
        ("layer_norm_backward", lambda: (dy, xhat, inv_std, gamma)),
        ("masked_softmax_forward", lambda: (x, mask)),
        ("softmax_backward", lambda: (dy, probs)),
        ("gelu_forward", lambda: (x,)),
        ("gelu_backward", lambda: (dy, x)),
        ("sigmoid_forward", lambda: (x,)),
        ("sigmoid_backward", lambda: (dy, sig)),
        ("masked_mean_forward", lambda: (x, row_mask)),
        ("masked_mean_backward", lambda: (dmean, row_mask, count, (rows, dim))),
        (
            "adam_update",
            lambda: (x.copy(), grad, np.zeros_like(x), np.zeros_like(x), 1, 1e-3, 0.9, 0.999, 1e-8),
        ),
    ]


def time_call(fn, build_args, iters, repeats):
    """Median per-call seconds over ``repeats`` timed batches."""
    samples = []
    for _ in range(repeats):
        argsets = [build_args() for _ in range(iters)]
        t0 = time.perf_counter()
        for args in argsets:
            fn(*args)
        samples.append((time.perf_counter() - t0) / iters)
    return statistics.median(samples)


def bench_kernels(iters, repeats, seed):
    rng = np.random.default_rng(seed)
    rows_out = []
    for rows, dim in SHAPES:
        for name, build in make_cases(rows, dim, rng):
            pure_s = time_call(getattr(pure, name), build, iters, repeats)
            entry = {
                "kernel": name,
                "shape": f"{rows}x{dim}",
                "pure_us": pure_s * 1e6,
                "compiled_us": None,
                "speedup": None,
            }
            if compiled is not None:
                comp_s = time_call(getattr(compiled, name), build, iters, repeats)
                entry["compiled_us"] = comp_s * 1e6
                entry["speedup"] = pure_s / comp_s
            rows_out.append(entry)
    return rows_out


def bench_end_to_end():
    """One small training run per backend, each in its own interpreter."""
    code = (
        "import time\n"
        "from stylescout.encoder import EncoderConfig\n"
        "from stylescout.gail import TrainConfig, train_style_model\n"
        "from stylescout.synth import SynthSpec, sample_corpus\n"
        "corpus = sample_corpus(SynthSpec.default(seed=5, alpha=1.0, train_per_profile=8, test_per_profile=1))\n"
        "experts = corpus.train['entry_rusher']\n"
        "others = [c for n, cs in corpus.train.items() if n != 'entry_rusher' for c in cs]\n"
        "t0 = time.perf_counter()\n"
        "train_style_model(experts, others,\n"
        "    encoder_config=EncoderConfig(d_embed=8, d_model=16, n_layers=1, n_heads=2),\n"
        "    train_config=TrainConfig(seed=0, epochs=10, batch_size=4))\n"
        "print(time.perf_counter() - t0)\n"
    )
    out = {}
    for label, extra_env in (("compiled", {}), ("pure", {"STYLESCOUT_PURE": "1"})):
        proc = subprocess.run(
            [sys.executable, "-c", code],
            env=dict(os.environ, **extra_env),
            capture_output=True,
            text=True,
            check=True,
        )
        out[label] = float(proc.stdout.strip())
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iters", type=int, default=200, help="calls per timed batch")
    ap.add_argument("--repeats", type=int, default=5, help="timed batches per kernel (median)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--end-to-end", action="store_true")
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    if compiled is None:
        print("note: compiled extension not built; timing the fallback only", file=sys.stderr)

    results = bench_kernels(args.iters, args.repeats, args.seed)
    report = {"kernels": results}
    if args.end_to_end:
        report["end_to_end_s"] = bench_end_to_end()

    if args.json:
        print(json.dumps(report, indent=2))
        return 0

    header = f"{'kernel':<24} {'shape':>10} {'pure us':>10} {'compiled us':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for r in results:
        comp = f"{r['compiled_us']:.1f}" if r["compiled_us"] is not None else "-"
        speed = f"{r['speedup']:.2f}x" if r["speedup"] is not None else "-"
        print(f"{r['kernel']:<24} {r['shape']:>10} {r['pure_us']:>10.1f} {comp:>12} {speed:>8}")
    if "end_to_end_s" in report:
        e2e = report["end_to_end_s"]
        print(
            f"\nend-to-end small training: compiled {e2e['compiled']:.2f}s, "
            f"pure {e2e['pure']:.2f}s ({e2e['pure'] / e2e['compiled']:.2f}x)"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
