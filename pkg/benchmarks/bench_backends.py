"""Time the compiled kernels against the pure-Python fallback.

Runs the hot kernels through every importable backend module on
identical inputs and prints a comparison table.  Two batch regimes
matter: exact enumeration and the per-step redraw sampler evaluate many
tiny row batches (interpreter dispatch dominates, the compiled loop
wins), while the fused permutation chunks of the marginal sampler hand
numpy one large batch per step (vectorization amortizes the dispatch,
the two backends meet).  Both backends are bit-identical by
construction, and the benchmark asserts that on every output it times.

    python3 benchmarks/bench_backends.py [--repeat K]
"""

import argparse
import time

import numpy as np

from coalition_attrib import backend
from coalition_attrib.dsl import compile_program, parse_model
from coalition_attrib.schema import Feature, FeatureSchema

MODEL = ("indicator(x0 > 0.2) * 3 * x1 - indicator(x0 <= 0.2) * x1"
         " + x2 ^ 3 + min(x3, x4) * max(x0, x5) - (x1 + x2) ^ 2")


def timed(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="repetitions per case, best-of (default 5)")
    args = parser.parse_args()

    m = 6
    schema = FeatureSchema(tuple(Feature(f"x{i}") for i in range(m)))
    program = compile_program(parse_model(MODEL, schema))
    p = (program.ops, program.args, program.consts, program.stack_need)
    rng = np.random.default_rng(0)

    big_rows = rng.normal(size=(200_000, m))
    small_rows = rng.normal(size=(24, m))
    values = rng.normal(size=200_000)
    big3 = rng.normal(size=(512, 16, m))
    big_orders = np.argsort(rng.random((512, m)), axis=1).astype(np.int64)
    small3 = rng.normal(size=(32, 10, m))
    small_orders = np.argsort(rng.random((32, m)), axis=1).astype(np.int64)
    x = rng.normal(size=m)

    def eval_many_small(impl):
        out = None
        for _ in range(2000):
            out = impl.eval_rows(*p, small_rows)
        return out

    def walk_many_small(impl):
        out = None
        for _ in range(100):
            out = impl.walk_chunk(*p, small3.copy(), small_orders, x, 1.234)
        return out

    cases = [
        ("eval 200k rows x1", lambda impl: impl.eval_rows(*p, big_rows)),
        ("eval 24 rows x2000", eval_many_small),
        ("pairwise_sum 200k", lambda impl: impl.pairwise_sum(values)),
        ("walk 512x16 x1",
         lambda impl: impl.walk_chunk(*p, big3.copy(), big_orders, x, 1.234)),
        ("walk 32x10 x100", walk_many_small),
    ]

    modules = backend.available_modules()
    if "compiled" not in modules:
        print("note: compiled extension not importable; "
              "timing the python kernels only")
    print(f"{'case':<22}" + "".join(f"{name:>14}" for name in modules)
          + ("      speedup" if len(modules) > 1 else ""))
    for case, run in cases:
        times = {}
        outputs = {}
        for name, impl in modules.items():
            times[name], outputs[name] = timed(lambda: run(impl),
                                               args.repeat)
        if len(outputs) > 1:
            assert same(outputs["python"], outputs["compiled"]), case
        line = f"{case:<22}" + "".join(
            f"{times[name] * 1e3:>12.2f}ms" for name in modules)
        if len(modules) > 1:
            line += f"{times['python'] / times['compiled']:>12.1f}x"
        print(line)


if __name__ == "__main__":
    main()
