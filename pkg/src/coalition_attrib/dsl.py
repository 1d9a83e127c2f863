"""Expression DSL for model definitions.

Models are closed-form scalar expressions over schema features.  The
grammar (see docs/grammar.ebnf for the EBNF) in decreasing binding
strength:

    power       atom '^' signed-integer
    unary       '-' unary
    term        unary (('*' | '/') unary)*
    additive    term (('+' | '-') term)*
    comparison  additive (('>' | '>=' | '<' | '<=' | '==') additive)?
    atom        number | feature | builtin '(' args ')' | '(' expr ')'

Builtins: ``indicator(e)`` (1.0 where e is nonzero, else 0.0), ``min``,
``max`` (two or more arguments, folded left).  Comparisons evaluate to
exactly 0.0 or 1.0.  Comparisons touching categorical features are
rejected at parse time; level indices have no order.  Exponents are
integer literals so every model restricts to IEEE-exact operations, which
is what lets the compiled and pure-Python evaluators agree bit for bit.

Whitespace is insignificant; number literals are locale-independent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import FrozenSet, Iterator, List, Optional, Tuple

import numpy as np

from .errors import (CategoricalComparisonError, DivisionByZeroError,
                     MissingFeatureError, ParseError, UnknownFeatureError)
from .schema import FeatureSchema, Instance

# --- AST -------------------------------------------------------------------


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str
    index: int


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Arith(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Compare(Expr):
    op: str  # one of < <= > >= ==
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Indicator(Expr):
    operand: Expr


@dataclass(frozen=True)
class Extremum(Expr):
    op: str  # min | max
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class ModelExpr:
    """A parsed model: immutable AST root plus the schema it binds to."""

    root: Expr
    schema: FeatureSchema


# --- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|==|[<>+\-*/^(),])"
    r"|(?P<ws>\s+)")

_CMP_OPS = ("<", "<=", ">", ">=", "==")
_BUILTINS = ("indicator", "min", "max")


@dataclass(frozen=True)
class _Token:
    kind: str  # num | name | op | eof
    text: str
    pos: int


def _lex(source: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(pos, f"unrecognized character {source[pos]!r}")
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(source)))
    return tokens


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: List[_Token], schema: FeatureSchema):
        self.tokens = tokens
        self.schema = schema
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def match_op(self, *ops: str) -> Optional[_Token]:
        tok = self.peek()
        if tok.kind == "op" and tok.text in ops:
            return self.advance()
        return None

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise ParseError(tok.pos, f"expected {op!r}")
        return self.advance()

    def expression(self) -> Expr:
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.additive()
        tok = self.match_op(*_CMP_OPS)
        if tok is None:
            return left
        right = self.additive()
        if self.peek().kind == "op" and self.peek().text in _CMP_OPS:
            raise ParseError(self.peek().pos,
                             "chained comparison; parenthesize")
        return Compare(tok.text, left, right)

    def additive(self) -> Expr:
        left = self.term()
        while True:
            tok = self.match_op("+", "-")
            if tok is None:
                return left
            left = Arith(tok.text, left, self.term())

    def term(self) -> Expr:
        left = self.unary()
        while True:
            tok = self.match_op("*", "/")
            if tok is None:
                return left
            left = Arith(tok.text, left, self.unary())

    def unary(self) -> Expr:
        if self.match_op("-"):
            operand = self.unary()
            # fold a negated literal so printed negative constants round-trip
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Neg(operand)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.match_op("^"):
            sign = -1 if self.match_op("-") else 1
            tok = self.peek()
            if tok.kind != "num" or not re.fullmatch(r"\d+", tok.text):
                raise ParseError(tok.pos, "expected integer exponent")
            self.advance()
            return Power(base, sign * int(tok.text))
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text in _BUILTINS:
                return self.builtin(tok)
            if tok.text not in self.schema:
                raise UnknownFeatureError(tok.pos, tok.text)
            return Var(tok.text, self.schema.index(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.expression()
            self.expect_op(")")
            return inner
        raise ParseError(tok.pos, "expected a number, feature, or '('")

    def builtin(self, tok: _Token) -> Expr:
        self.expect_op("(")
        args = [self.expression()]
        while self.match_op(","):
            args.append(self.expression())
        self.expect_op(")")
        if tok.text == "indicator":
            if len(args) != 1:
                raise ParseError(tok.pos, "indicator takes exactly 1 argument")
            return Indicator(args[0])
        if len(args) < 2:
            raise ParseError(tok.pos, f"{tok.text} takes at least 2 arguments")
        out = args[0]
        for arg in args[1:]:
            out = Extremum(tok.text, out, arg)
        return out


def parse_model(source: str, schema: FeatureSchema) -> ModelExpr:
    """Parse model source text against a feature schema.

    Parameters
    ----------
    source : str
        Non-empty expression text.
    schema : FeatureSchema
        Declares the feature names the expression may reference.

    Returns
    -------
    ModelExpr

    Raises
    ------
    ParseError
        Syntax error; carries the 0-based source position.
    UnknownFeatureError
        A referenced name is not in the schema.
    CategoricalComparisonError
        A comparison operand references a categorical feature.
    """
    if not source or not source.strip():
        raise ParseError(0, "empty model source")
    parser = _Parser(_lex(source), schema)
    root = parser.expression()
    tok = parser.peek()
    if tok.kind != "eof":
        raise ParseError(tok.pos, f"unexpected {tok.text!r}")
    _reject_categorical_comparisons(root, schema)
    return ModelExpr(root, schema)


def _reject_categorical_comparisons(expr: Expr, schema: FeatureSchema):
    cats = {f.name for f in schema.features if f.kind == "categorical"}
    if not cats:
        return
    for node in walk(expr):
        if isinstance(node, Compare):
            used = _referenced(node) & cats
            if used:
                raise CategoricalComparisonError(0, sorted(used))


# --- traversal helpers -----------------------------------------------------


def _children(expr: Expr) -> Tuple[Expr, ...]:
    if isinstance(expr, (Const, Var)):
        return ()
    if isinstance(expr, (Neg, Indicator)):
        return (expr.operand,)
    if isinstance(expr, Power):
        return (expr.base,)
    return (expr.left, expr.right)


def walk(expr: Expr) -> Iterator[Expr]:
    """Yield every node of the tree, preorder."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(_children(node)))


def _referenced(expr: Expr) -> FrozenSet[str]:
    return frozenset(n.name for n in walk(expr) if isinstance(n, Var))


def referenced_features(model) -> FrozenSet[str]:
    """Set of feature names the model actually reads."""
    root = model.root if isinstance(model, ModelExpr) else model
    return _referenced(root)


def swap_features(model: ModelExpr, name_a: str, name_b: str) -> ModelExpr:
    """Return the model with two feature references exchanged."""
    ia, ib = model.schema.index(name_a), model.schema.index(name_b)

    def rebuild(node: Expr) -> Expr:
        if isinstance(node, Var):
            if node.index == ia:
                return Var(name_b, ib)
            if node.index == ib:
                return Var(name_a, ia)
            return node
        if isinstance(node, Const):
            return node
        if isinstance(node, Neg):
            return Neg(rebuild(node.operand))
        if isinstance(node, Indicator):
            return Indicator(rebuild(node.operand))
        if isinstance(node, Power):
            return Power(rebuild(node.base), node.exponent)
        if isinstance(node, Arith):
            return Arith(node.op, rebuild(node.left), rebuild(node.right))
        if isinstance(node, Compare):
            return Compare(node.op, rebuild(node.left), rebuild(node.right))
        if isinstance(node, Extremum):
            return Extremum(node.op, rebuild(node.left), rebuild(node.right))
        raise TypeError(f"unknown node {node!r}")

    return ModelExpr(rebuild(model.root), model.schema)


# --- printing --------------------------------------------------------------

# binding levels: comparison 1, additive 2, term 3, unary 4, power 5, atom 6
def _level(expr: Expr) -> int:
    if isinstance(expr, Const):
        # a negative literal behaves like a unary-minus application
        return 6 if expr.value >= 0 else 4
    if isinstance(expr, (Var, Indicator, Extremum)):
        return 6
    if isinstance(expr, Power):
        return 5
    if isinstance(expr, Neg):
        return 4
    if isinstance(expr, Arith):
        return 3 if expr.op in "*/" else 2
    if isinstance(expr, Compare):
        return 1
    raise TypeError(f"unknown node {expr!r}")


def _fmt(expr: Expr) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        inner = _fmt(expr.operand)
        if _level(expr.operand) < 4:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, Indicator):
        return f"indicator({_fmt(expr.operand)})"
    if isinstance(expr, Extremum):
        return f"{expr.op}({_fmt(expr.left)}, {_fmt(expr.right)})"
    if isinstance(expr, Power):
        base = _fmt(expr.base)
        if _level(expr.base) < 6:
            base = f"({base})"
        return f"{base}^{expr.exponent}"
    if isinstance(expr, Arith):
        mine = _level(expr)
        left = _fmt(expr.left)
        if _level(expr.left) < mine:
            left = f"({left})"
        right = _fmt(expr.right)
        # left-associative: a - (b - c) must keep its parentheses
        if _level(expr.right) <= mine:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, Compare):
        left = _fmt(expr.left)
        if _level(expr.left) < 2:
            left = f"({left})"
        right = _fmt(expr.right)
        if _level(expr.right) < 2:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    raise TypeError(f"unknown node {expr!r}")


def to_source(model) -> str:
    """Render a model back to parseable source.

    ``parse_model(to_source(m), m.schema)`` reproduces the AST exactly.
    """
    root = model.root if isinstance(model, ModelExpr) else model
    return _fmt(root)


# --- stack program ---------------------------------------------------------

# opcodes; the literal values are mirrored in _speedups.pyx and checked at
# import by backend.py
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

OPCODE_TABLE = {
    "OP_CONST": OP_CONST, "OP_VAR": OP_VAR, "OP_NEG": OP_NEG,
    "OP_ADD": OP_ADD, "OP_SUB": OP_SUB, "OP_MUL": OP_MUL, "OP_DIV": OP_DIV,
    "OP_LT": OP_LT, "OP_LE": OP_LE, "OP_GT": OP_GT, "OP_GE": OP_GE,
    "OP_EQ": OP_EQ, "OP_IND": OP_IND, "OP_MIN": OP_MIN, "OP_MAX": OP_MAX,
    "OP_POW": OP_POW,
}

_ARITH_OP = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}
_CMP_OP = {"<": OP_LT, "<=": OP_LE, ">": OP_GT, ">=": OP_GE, "==": OP_EQ}


@dataclass(frozen=True, eq=False)
class Program:
    """Flat postfix form of a model, executed by either kernel backend.

    ``ops[k]``/``args[k]`` encode instruction k; ``args`` holds a constant
    index for OP_CONST, a feature index for OP_VAR, and the (possibly
    negative) exponent for OP_POW.  ``stack_need`` is the exact stack depth
    the program requires.
    """

    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    stack_need: int
    m: int
    has_division: bool


def compile_program(model: ModelExpr) -> Program:
    """Flatten a model AST into a :class:`Program`."""
    ops: List[int] = []
    args: List[int] = []
    consts: List[float] = []

    def emit(node: Expr):
        if isinstance(node, Const):
            ops.append(OP_CONST)
            args.append(len(consts))
            consts.append(node.value)
        elif isinstance(node, Var):
            ops.append(OP_VAR)
            args.append(node.index)
        elif isinstance(node, Neg):
            emit(node.operand)
            ops.append(OP_NEG)
            args.append(0)
        elif isinstance(node, Indicator):
            emit(node.operand)
            ops.append(OP_IND)
            args.append(0)
        elif isinstance(node, Power):
            emit(node.base)
            ops.append(OP_POW)
            args.append(node.exponent)
        elif isinstance(node, Arith):
            emit(node.left)
            emit(node.right)
            ops.append(_ARITH_OP[node.op])
            args.append(0)
        elif isinstance(node, Compare):
            emit(node.left)
            emit(node.right)
            ops.append(_CMP_OP[node.op])
            args.append(0)
        elif isinstance(node, Extremum):
            emit(node.left)
            emit(node.right)
            ops.append(OP_MIN if node.op == "min" else OP_MAX)
            args.append(0)
        else:
            raise TypeError(f"unknown node {node!r}")

    emit(model.root)

    depth = peak = 0
    for op in ops:
        if op in (OP_CONST, OP_VAR):
            depth += 1
        elif op in (OP_NEG, OP_IND, OP_POW):
            pass  # one in, one out
        else:
            depth -= 1
        peak = max(peak, depth)

    return Program(
        ops=np.asarray(ops, dtype=np.int64),
        args=np.asarray(args, dtype=np.int64),
        consts=np.asarray(consts, dtype=np.float64),
        stack_need=peak,
        m=model.schema.m,
        has_division=OP_DIV in ops or any(
            o == OP_POW and a < 0 for o, a in zip(ops, args)),
    )


def eval_model(model: ModelExpr, instance) -> float:
    """Evaluate the model at one observation.

    ``instance`` is an :class:`Instance` or a name-to-value mapping.  Runs
    through the same compiled program as batch evaluation, so the scalar
    result is bit-identical to any batch containing the same row.

    Raises
    ------
    MissingFeatureError
        The mapping lacks a schema feature.
    DivisionByZeroError
        A division or negative power hit a zero operand.
    """
    from . import backend  # at call time: backend imports dsl

    if isinstance(instance, Instance):
        row = instance.values
    else:
        for name in instance:
            if name not in model.schema:
                raise UnknownFeatureError(0, name)
        row = np.empty(model.schema.m, dtype=np.float64)
        for i, f in enumerate(model.schema.features):
            if f.name not in instance:
                raise MissingFeatureError(f.name)
            row[i] = float(instance[f.name])
    out = backend.eval_rows(compile_program(model), row.reshape(1, -1))
    return float(out[0])


# --- discontinuity scan ----------------------------------------------------


def _const_value(expr: Expr) -> Optional[float]:
    """Evaluate a variable-free subtree; None if it references features
    or fails (e.g. divides by zero)."""
    if _referenced(expr):
        return None
    try:
        return _eval_const(expr)
    except ZeroDivisionError:
        return None


def _eval_const(expr: Expr) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Neg):
        return -_eval_const(expr.operand)
    if isinstance(expr, Indicator):
        return 1.0 if _eval_const(expr.operand) != 0.0 else 0.0
    if isinstance(expr, Power):
        base = _eval_const(expr.base)
        e = expr.exponent
        if e == 0:
            return 1.0
        acc = base
        for _ in range(abs(e) - 1):
            acc = acc * base
        if e < 0:
            if acc == 0.0:
                raise ZeroDivisionError
            return 1.0 / acc
        return acc
    if isinstance(expr, Arith):
        a, b = _eval_const(expr.left), _eval_const(expr.right)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if b == 0.0:
            raise ZeroDivisionError
        return a / b
    if isinstance(expr, Compare):
        a, b = _eval_const(expr.left), _eval_const(expr.right)
        ok = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
              "==": a == b}[expr.op]
        return 1.0 if ok else 0.0
    if isinstance(expr, Extremum):
        a, b = _eval_const(expr.left), _eval_const(expr.right)
        if expr.op == "min":
            return b if b < a else a
        return b if b > a else a
    raise TypeError(f"unknown node {expr!r}")


def scan_discontinuities(model: ModelExpr):
    """Locate axis-aligned breakpoints of the model.

    Returns
    -------
    thresholds : dict[int, tuple[float, ...]]
        Feature index -> sorted constants where the model jumps or kinks
        along that axis (from ``feature OP constant`` comparisons, bare
        ``indicator(feature)``, and ``min/max(feature, constant)``).
    rough : frozenset[int]
        Feature indices involved in a discontinuity or kink that is not of
        that simple form; exact integration falls back to a dense rule for
        these and accuracy is only approximate.
    """
    thresholds: dict = {}
    rough = set()

    def add(idx: int, value: float):
        thresholds.setdefault(idx, set()).add(value)

    def mark_rough(expr: Expr):
        for name in _referenced(expr):
            rough.add(model.schema.index(name))

    def split_pair(left: Expr, right: Expr) -> Optional[Tuple[int, float]]:
        for a, b in ((left, right), (right, left)):
            if isinstance(a, Var):
                c = _const_value(b)
                if c is not None:
                    return a.index, c
        return None

    for node in walk(model.root):
        if isinstance(node, Compare):
            pair = split_pair(node.left, node.right)
            if pair is None:
                mark_rough(node)
            else:
                add(*pair)
        elif isinstance(node, Extremum):
            pair = split_pair(node.left, node.right)
            if pair is None:
                if _referenced(node.left) and _referenced(node.right):
                    mark_rough(node)
            else:
                add(*pair)
        elif isinstance(node, Indicator):
            if isinstance(node.operand, Var):
                add(node.operand.index, 0.0)
            elif not isinstance(node.operand, Compare):
                mark_rough(node.operand)
        elif isinstance(node, Arith) and node.op == "/":
            # integrand may blow up where the divisor crosses zero
            mark_rough(node.right)

    return ({i: tuple(sorted(v)) for i, v in thresholds.items()},
            frozenset(rough))


# --- random models (property tests, linearity partners) --------------------


def random_expr(schema: FeatureSchema, rng: np.random.Generator,
                depth: int = 4, allow_comparisons: bool = True,
                allow_division: bool = False) -> Expr:
    """Draw a random AST over the schema.

    Used by the property-validation diagnostic to synthesize a second
    model for the linearity check, and by the test suite.  Constants are
    kept nonnegative (negation is a separate node) and divisors are built
    as ``1 + e^2`` so evaluation never divides by zero unless
    ``allow_division`` is set to produce raw divisions.
    """
    numeric = [i for i, f in enumerate(schema.features)
               if f.kind != "categorical"]

    def leaf() -> Expr:
        if not numeric or rng.random() < 0.25:
            return Const(float(np.round(rng.uniform(0.0, 3.0), 3)))
        i = int(rng.choice(numeric))
        return Var(schema.features[i].name, i)

    def build(d: int) -> Expr:
        if d <= 0 or rng.random() < 0.2:
            return leaf()
        kinds = ["+", "-", "*", "neg", "pow", "min", "max"]
        if allow_comparisons:
            kinds.append("cmp")
        if allow_division:
            kinds.append("/")
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "neg":
            operand = build(d - 1)
            if isinstance(operand, Const):
                # keep to parser-canonical form (negative literals fold)
                return Const(-operand.value)
            return Neg(operand)
        if kind == "pow":
            return Power(build(d - 1), int(rng.integers(1, 4)))
        if kind == "cmp":
            # keep to the splittable var-vs-constant form
            if not numeric:
                return leaf()
            i = int(rng.choice(numeric))
            op = _CMP_OPS[int(rng.integers(4))]  # skip == on continuous
            return Compare(op, Var(schema.features[i].name, i),
                           Const(float(np.round(rng.uniform(-1.0, 2.0), 3))))
        if kind == "/":
            denom = Arith("+", Const(1.0), Power(build(d - 1), 2))
            return Arith("/", build(d - 1), denom)
        if kind in ("min", "max"):
            return Extremum(kind, build(d - 1), build(d - 1))
        return Arith(kind, build(d - 1), build(d - 1))

    return build(depth)
