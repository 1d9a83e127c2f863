"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy kernels
are the fallback.  Both produce bit-identical results by construction
(see _kernels_py), so switching backends never changes any report.
``COALITION_ATTRIB_BACKEND=python|compiled`` forces the choice, which the
benchmark and the identity tests use.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import _kernels_py
from .dsl import OPCODE_TABLE, Program

_modules = {"python": _kernels_py}

try:
    from . import _speedups as _compiled
except ImportError:
    _compiled = None
else:
    if getattr(_compiled, "OPCODES", None) == OPCODE_TABLE:
        _modules["compiled"] = _compiled
    else:
        warnings.warn("stale compiled kernel (opcode table mismatch); "
                      "using pure-Python kernels", RuntimeWarning)
        _compiled = None

_forced = os.environ.get("COALITION_ATTRIB_BACKEND")
if _forced:
    if _forced not in ("python", "compiled"):
        raise ImportError(
            f"COALITION_ATTRIB_BACKEND={_forced!r}; expected python|compiled")
    if _forced not in _modules:
        raise ImportError(
            "COALITION_ATTRIB_BACKEND=compiled but the extension is not built")
    ACTIVE = _forced
else:
    ACTIVE = "compiled" if "compiled" in _modules else "python"

_impl = _modules[ACTIVE]


def available_modules() -> dict:
    """Importable kernel modules keyed by backend name."""
    return dict(_modules)


def eval_rows(program: Program, rows) -> np.ndarray:
    """Evaluate a compiled model program on a (n, m) row matrix."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != program.m:
        raise ValueError(f"expected (n, {program.m}) rows, got {rows.shape}")
    return _impl.eval_rows(program.ops, program.args, program.consts,
                           program.stack_need, rows)


def pairwise_sum(values) -> float:
    return _impl.pairwise_sum(np.ascontiguousarray(values, dtype=np.float64))


def pairwise_mean(values) -> float:
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("mean of empty array")
    return _impl.pairwise_sum(values) / values.shape[0]


def pairwise_sum_axis1(values) -> np.ndarray:
    return _impl.pairwise_sum_axis1(
        np.ascontiguousarray(values, dtype=np.float64))


def walk_chunk(program: Program, rows3, orders, x, fx: float):
    """Run permutation walks for a chunk of permutations.

    rows3 (c, r, m) holds per-permutation reference draws and is consumed
    (clamped in place); orders (c, m) are the permutations.  Returns
    (deltas (c, m), base (c,)).
    """
    rows3 = np.ascontiguousarray(rows3, dtype=np.float64)
    orders = np.ascontiguousarray(orders, dtype=np.int64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.walk_chunk(program.ops, program.args, program.consts,
                            program.stack_need, rows3, orders, x, float(fx))
