"""Pure-Python (numpy) kernels.

Reference implementation of the hot loops; `_speedups.pyx` mirrors these
bit for bit.  Keeping the two in lockstep requires care in three places:

* only IEEE-exact scalar operations (add, sub, mul, div, compare, min,
  max selected by explicit comparison) appear in programs, and integer
  powers are expanded to the same left-to-right multiply chain;
* reductions use one fixed pairwise tree: level by level, element 2i is
  added to element 2i+1 and a trailing odd element is carried;
* both backends consume rows produced by the same (Python-side) RNG.

Anything that holds here must hold in the compiled kernel; the test suite
cross-checks them on random programs.
"""

from __future__ import annotations

import numpy as np

from .dsl import (OP_ADD, OP_CONST, OP_DIV, OP_EQ, OP_GE, OP_GT, OP_IND,
                  OP_LE, OP_LT, OP_MAX, OP_MIN, OP_MUL, OP_NEG, OP_POW,
                  OP_SUB, OP_VAR)
from .errors import DivisionByZeroError

KERNEL_NAME = "python"


def eval_rows(ops, args, consts, stack_need, rows):
    """Evaluate a stack program on a (n, m) row matrix; returns (n,)."""
    n = rows.shape[0]
    stack = np.empty((max(stack_need, 1), n), dtype=np.float64)
    sp = 0
    for k in range(ops.shape[0]):
        op = int(ops[k])
        if op == OP_CONST:
            stack[sp] = consts[args[k]]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = rows[:, args[k]]
            sp += 1
        elif op == OP_NEG:
            np.negative(stack[sp - 1], out=stack[sp - 1])
        elif op == OP_IND:
            a = stack[sp - 1]
            stack[sp - 1] = np.where(a != 0.0, 1.0, 0.0)
        elif op == OP_POW:
            e = int(args[k])
            a = stack[sp - 1]
            if e == 0:
                stack[sp - 1] = 1.0
            else:
                acc = a.copy()
                for _ in range(abs(e) - 1):
                    acc *= a
                if e < 0:
                    bad = np.flatnonzero(acc == 0.0)
                    if bad.size:
                        raise DivisionByZeroError(int(bad[0]))
                    acc = 1.0 / acc
                stack[sp - 1] = acc
        else:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                bad = np.flatnonzero(b == 0.0)
                if bad.size:
                    raise DivisionByZeroError(int(bad[0]))
                stack[sp - 1] = a / b
            elif op == OP_LT:
                stack[sp - 1] = np.where(a < b, 1.0, 0.0)
            elif op == OP_LE:
                stack[sp - 1] = np.where(a <= b, 1.0, 0.0)
            elif op == OP_GT:
                stack[sp - 1] = np.where(a > b, 1.0, 0.0)
            elif op == OP_GE:
                stack[sp - 1] = np.where(a >= b, 1.0, 0.0)
            elif op == OP_EQ:
                stack[sp - 1] = np.where(a == b, 1.0, 0.0)
            elif op == OP_MIN:
                stack[sp - 1] = np.where(b < a, b, a)
            elif op == OP_MAX:
                stack[sp - 1] = np.where(b > a, b, a)
            else:
                raise ValueError(f"bad opcode {op}")
    return np.ascontiguousarray(stack[0])


def pairwise_sum(values):
    """Fixed-tree pairwise sum of a 1-D array."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    n = v.shape[0]
    if n == 0:
        return 0.0
    while n > 1:
        half = n // 2
        odd = n - 2 * half
        nxt = np.empty(half + odd, dtype=np.float64)
        np.add(v[0:2 * half:2], v[1:2 * half:2], out=nxt[:half])
        if odd:
            nxt[half] = v[n - 1]
        v = nxt
        n = half + odd
    return float(v[0])


def pairwise_sum_axis1(values):
    """Row-wise fixed-tree pairwise sum of a (c, n) array; returns (c,)."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    c, n = v.shape
    if n == 0:
        return np.zeros(c, dtype=np.float64)
    while n > 1:
        half = n // 2
        odd = n - 2 * half
        nxt = np.empty((c, half + odd), dtype=np.float64)
        np.add(v[:, 0:2 * half:2], v[:, 1:2 * half:2], out=nxt[:, :half])
        if odd:
            nxt[:, half] = v[:, n - 1]
        v = nxt
        n = half + odd
    return np.ascontiguousarray(v[:, 0])


def walk_chunk(ops, args, consts, stack_need, rows3, orders, x, fx):
    """Permutation walks under static reference draws.

    ``rows3`` is (c, r, m): r reference rows per permutation, clobbered in
    place as features are clamped to ``x`` in the order given by
    ``orders``.  The final prefix value is ``fx`` by construction, so the
    per-permutation contributions telescope exactly to ``fx`` minus the
    empty-prefix estimate.  Returns (deltas (c, m), base (c,)).
    """
    c, r, m = rows3.shape
    flat = rows3.reshape(c * r, m)
    deltas = np.empty((c, m), dtype=np.float64)
    rows_idx = np.arange(c)

    vals = eval_rows(ops, args, consts, stack_need, flat).reshape(c, r)
    v_prev = pairwise_sum_axis1(vals) / r
    base = v_prev.copy()
    for t in range(m):
        cols = orders[:, t]
        rows3[rows_idx[:, None], np.arange(r)[None, :], cols[:, None]] = \
            x[cols][:, None]
        if t == m - 1:
            v = np.full(c, fx, dtype=np.float64)
        else:
            vals = eval_rows(ops, args, consts, stack_need, flat).reshape(c, r)
            v = pairwise_sum_axis1(vals) / r
        deltas[rows_idx, cols] = v - v_prev
        v_prev = v
    return deltas, base
