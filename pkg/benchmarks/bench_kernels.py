#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Three sections, identical inputs per section:

* split search — one call of the exact greedy split kernel over a full node,
* ensemble predict — margin prediction for a trained ensemble,
* end-to-end train — a complete training run per backend, each in a child
  process so the backend is fixed by ``FORTRESS_DISABLE_NUMBA`` at import
  time, with the serialized models compared byte for byte.

Every timed pair is first checked for bit-identical results; a timing table
for diverging implementations would be meaningless.

Usage::

    python benchmarks/bench_kernels.py [--rows N] [--features D] [--repeats K]
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from fortress import _kernels as K
from fortress.model import TrainConfig, TrainMatrix, dumps_canonical, serialize, train


def _time_best(fn, *args, repeats: int) -> tuple[float, object]:
    """Best-of-``repeats`` wall time and the (last) result."""
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def _make_matrix(args) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.rows, args.features))
    X[rng.random(X.shape) < args.nan] = np.nan
    y = (rng.random(args.rows) < 0.4).astype(np.float64)
    return X, y


def bench_split(args) -> None:
    X, y = _make_matrix(args)
    tm = TrainMatrix(X, y)
    vals_sorted, sort_rows, offsets = tm.presort
    rng = np.random.default_rng(args.seed + 1)
    p = 1.0 / (1.0 + np.exp(-rng.normal(size=args.rows)))
    g = p - y
    h = p * (1.0 - p)
    in_node = np.ones(args.rows, dtype=np.bool_)
    active = np.arange(args.features, dtype=np.int64)
    call = (vals_sorted, sort_rows, offsets, in_node, g, h,
            float(g.sum()), float(h.sum()), active, 1.0, 0.0, 1.0)

    t_np, r_np = _time_best(K.best_split_numpy, *call, repeats=args.repeats)
    print(f"split search  ({args.rows} rows x {args.features} features, "
          f"{args.nan:.0%} missing, best of {args.repeats})")
    if K.HAS_NUMBA:
        K.best_split_numba(*call)  # warm the dispatcher before timing
        t_nb, r_nb = _time_best(K.best_split_numba, *call, repeats=args.repeats)
        same = (
            r_nb[0] == r_np[0]
            and int(r_nb[1]) == int(r_np[1])
            and (np.isnan(r_nb[2]) and np.isnan(r_np[2]) or r_nb[2] == r_np[2])
            and bool(r_nb[3]) == bool(r_np[3])
        )
        print(f"  numba: {t_nb * 1e3:8.2f} ms")
        print(f"  numpy: {t_np * 1e3:8.2f} ms   ({t_np / t_nb:.1f}x numba)")
        print(f"  results identical: {same}")
        if not same:
            sys.exit("backend mismatch in split search")
    else:
        print(f"  numpy: {t_np * 1e3:8.2f} ms   (numba unavailable)")


def bench_predict(args) -> None:
    X, y = _make_matrix(args)
    model = train(TrainMatrix(X, y), config=TrainConfig(rounds=args.train_rounds))
    feat, thr, dl, left, right, wt, roots = model._ensure_arena()
    call = (X, feat, thr, dl, left, right, wt, roots, model.base_score)

    t_np, m_np = _time_best(K.predict_margin_numpy, *call, repeats=args.repeats)
    print(f"ensemble predict  ({len(model.trees)} trees, {args.rows} rows, "
          f"best of {args.repeats})")
    if K.HAS_NUMBA:
        K.predict_margin_numba(*call)
        t_nb, m_nb = _time_best(K.predict_margin_numba, *call, repeats=args.repeats)
        same = bool(np.array_equal(m_nb, m_np))
        print(f"  numba: {t_nb * 1e3:8.2f} ms")
        print(f"  numpy: {t_np * 1e3:8.2f} ms   ({t_np / t_nb:.1f}x numba)")
        print(f"  results identical: {same}")
        if not same:
            sys.exit("backend mismatch in prediction")
    else:
        print(f"  numpy: {t_np * 1e3:8.2f} ms   (numba unavailable)")


def child_train(args) -> None:
    """Train once with the backend the environment selected; emit JSON."""
    X, y = _make_matrix(args)
    tm = TrainMatrix(X, y)
    tm.presort  # presort cost is backend-independent; keep it out of the timing
    t0 = time.perf_counter()
    model = train(tm, config=TrainConfig(rounds=args.train_rounds))
    seconds = time.perf_counter() - t0
    digest = hashlib.sha256(dumps_canonical(serialize(model)).encode()).hexdigest()
    print(json.dumps({
        "backend": K.backend_name(),
        "seconds": seconds,
        "digest": digest,
    }))


def bench_train(args) -> None:
    def run(disable: str) -> dict:
        env = dict(os.environ, FORTRESS_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, __file__, "--child-train",
             "--rows", str(args.rows), "--features", str(args.features),
             "--nan", str(args.nan), "--train-rounds", str(args.train_rounds),
             "--seed", str(args.seed)],
            env=env, capture_output=True, text=True, check=True,
        )
        return json.loads(out.stdout.strip().splitlines()[-1])

    print(f"end-to-end train  ({args.rows} rows x {args.features} features, "
          f"{args.train_rounds} rounds, one run per backend)")
    numpy_run = run("1")
    print(f"  {numpy_run['backend']}: {numpy_run['seconds']:6.2f} s")
    if K.HAS_NUMBA:
        numba_run = run("0")
        ratio = numpy_run["seconds"] / numba_run["seconds"]
        print(f"  {numba_run['backend']}: {numba_run['seconds']:6.2f} s   "
              f"(numpy is {ratio:.1f}x slower)")
        same = numba_run["digest"] == numpy_run["digest"]
        print(f"  serialized models identical: {same}")
        if not same:
            sys.exit("backend mismatch in end-to-end training")


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--features", type=int, default=25)
    ap.add_argument("--nan", type=float, default=0.3, help="missing fraction")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--train-rounds", type=int, default=50)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--child-train", action="store_true", help=argparse.SUPPRESS)
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    if args.child_train:
        child_train(args)
        return
    bench_split(args)
    print()
    bench_predict(args)
    print()
    bench_train(args)


if __name__ == "__main__":
    main()
