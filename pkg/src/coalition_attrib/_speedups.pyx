# cython: boundscheck=False, wraparound=False, nonecheck=False
# cython: cdivision=True, language_level=3
"""Compiled kernels.

Mirror of _kernels_py: same operation order per element, same pairwise
reduction tree, so results are bit-identical to the pure-Python backend.
Loops release the GIL so sampled runs can overlap across worker threads.
"""

import numpy as np

cimport numpy as cnp

from .errors import DivisionByZeroError

cnp.import_array()

KERNEL_NAME = "compiled"

cdef enum:
    OP_CONST = 0
    OP_VAR = 1
    OP_NEG = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_LT = 7
    OP_LE = 8
    OP_GT = 9
    OP_GE = 10
    OP_EQ = 11
    OP_IND = 12
    OP_MIN = 13
    OP_MAX = 14
    OP_POW = 15

# checked against dsl.OPCODE_TABLE at import by backend.py
OPCODES = {
    "OP_CONST": OP_CONST, "OP_VAR": OP_VAR, "OP_NEG": OP_NEG,
    "OP_ADD": OP_ADD, "OP_SUB": OP_SUB, "OP_MUL": OP_MUL, "OP_DIV": OP_DIV,
    "OP_LT": OP_LT, "OP_LE": OP_LE, "OP_GT": OP_GT, "OP_GE": OP_GE,
    "OP_EQ": OP_EQ, "OP_IND": OP_IND, "OP_MIN": OP_MIN, "OP_MAX": OP_MAX,
    "OP_POW": OP_POW,
}


cdef inline int _eval_row(const long long* ops, const long long* args,
                          Py_ssize_t n_ops, const double* consts,
                          const double* row, double* stack,
                          double* out) noexcept nogil:
    """Run the program on one row; 0 on success, 1 on division by zero."""
    cdef Py_ssize_t k, sp = 0
    cdef long long op, e, i, reps
    cdef double a, b, acc
    for k in range(n_ops):
        op = ops[k]
        if op == OP_CONST:
            stack[sp] = consts[args[k]]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = row[args[k]]
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_IND:
            stack[sp - 1] = 1.0 if stack[sp - 1] != 0.0 else 0.0
        elif op == OP_POW:
            e = args[k]
            a = stack[sp - 1]
            if e == 0:
                stack[sp - 1] = 1.0
            else:
                acc = a
                reps = e if e > 0 else -e
                for i in range(reps - 1):
                    acc = acc * a
                if e < 0:
                    if acc == 0.0:
                        return 1
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
                if b == 0.0:
                    return 1
                stack[sp - 1] = a / b
            elif op == OP_LT:
                stack[sp - 1] = 1.0 if a < b else 0.0
            elif op == OP_LE:
                stack[sp - 1] = 1.0 if a <= b else 0.0
            elif op == OP_GT:
                stack[sp - 1] = 1.0 if a > b else 0.0
            elif op == OP_GE:
                stack[sp - 1] = 1.0 if a >= b else 0.0
            elif op == OP_EQ:
                stack[sp - 1] = 1.0 if a == b else 0.0
            elif op == OP_MIN:
                stack[sp - 1] = b if b < a else a
            elif op == OP_MAX:
                stack[sp - 1] = b if b > a else a
            else:
                return 2
    out[0] = stack[0]
    return 0


cdef inline double _pairwise(double* buf, Py_ssize_t n) noexcept nogil:
    """In-place pairwise fold; same tree as _kernels_py.pairwise_sum."""
    cdef Py_ssize_t half, i
    if n == 0:
        return 0.0
    while n > 1:
        half = n >> 1
        for i in range(half):
            buf[i] = buf[2 * i] + buf[2 * i + 1]
        if n & 1:
            buf[half] = buf[n - 1]
            n = half + 1
        else:
            n = half
    return buf[0]


def eval_rows(ops, args, consts, int stack_need, rows):
    cdef const long long[::1] o = ops
    cdef const long long[::1] a = args
    cdef const double[::1] c = consts
    cdef const double[:, ::1] r = rows
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t n_ops = o.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    stack_arr = np.empty(max(stack_need, 1), dtype=np.float64)
    cdef double[::1] stack = stack_arr
    cdef Py_ssize_t i
    cdef int rc = 0
    cdef Py_ssize_t bad = -1
    if n > 0:
        with nogil:
            for i in range(n):
                rc = _eval_row(&o[0], &a[0], n_ops, &c[0] if c.shape[0] else NULL,
                               &r[i, 0], &stack[0], &out[i])
                if rc != 0:
                    bad = i
                    break
    if rc == 1:
        raise DivisionByZeroError(int(bad))
    if rc != 0:
        raise ValueError("bad opcode in program")
    return out_arr


def pairwise_sum(values):
    buf_arr = np.array(values, dtype=np.float64, copy=True, order="C")
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t n = buf.shape[0]
    cdef double total
    if n == 0:
        return 0.0
    with nogil:
        total = _pairwise(&buf[0], n)
    return float(total)


def pairwise_sum_axis1(values):
    arr = np.array(values, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] v = arr
    cdef Py_ssize_t c = v.shape[0], n = v.shape[1]
    out_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    if n == 0:
        out_arr[:] = 0.0
        return out_arr
    with nogil:
        for i in range(c):
            out[i] = _pairwise(&v[i, 0], n)
    return out_arr


def walk_chunk(ops, args, consts, int stack_need, rows3, orders, x, double fx):
    """Permutation walks; see _kernels_py.walk_chunk for the contract."""
    cdef const long long[::1] o = ops
    cdef const long long[::1] a = args
    cdef const double[::1] cst = consts
    cdef double[:, :, ::1] rw = rows3
    cdef const long long[:, ::1] orq = orders
    cdef const double[::1] xv = x
    cdef Py_ssize_t c = rw.shape[0], r = rw.shape[1], m = rw.shape[2]
    cdef Py_ssize_t n_ops = o.shape[0]
    deltas_arr = np.empty((c, m), dtype=np.float64)
    base_arr = np.empty(c, dtype=np.float64)
    cdef double[:, ::1] deltas = deltas_arr
    cdef double[::1] base = base_arr
    vals_arr = np.empty(r, dtype=np.float64)
    cdef double[::1] vals = vals_arr
    stack_arr = np.empty(max(stack_need, 1), dtype=np.float64)
    cdef double[::1] stack = stack_arr
    cdef Py_ssize_t ci, ri, t
    cdef long long j
    cdef double v_prev, v
    cdef int rc = 0
    cdef const double* cptr = &cst[0] if cst.shape[0] else NULL
    with nogil:
        for ci in range(c):
            for ri in range(r):
                rc = _eval_row(&o[0], &a[0], n_ops, cptr, &rw[ci, ri, 0],
                               &stack[0], &vals[ri])
                if rc != 0:
                    break
            if rc != 0:
                break
            v_prev = _pairwise(&vals[0], r) / r
            base[ci] = v_prev
            for t in range(m):
                j = orq[ci, t]
                for ri in range(r):
                    rw[ci, ri, j] = xv[j]
                if t == m - 1:
                    v = fx
                else:
                    for ri in range(r):
                        rc = _eval_row(&o[0], &a[0], n_ops, cptr,
                                       &rw[ci, ri, 0], &stack[0], &vals[ri])
                        if rc != 0:
                            break
                    if rc != 0:
                        break
                    v = _pairwise(&vals[0], r) / r
                deltas[ci, j] = v - v_prev
                v_prev = v
            if rc != 0:
                break
    if rc == 1:
        raise DivisionByZeroError()
    if rc != 0:
        raise ValueError("bad opcode in program")
    return deltas_arr, base_arr
