"""Arithmetic-expression benchmark.

Grammar (terminals are tokens, ``sin(`` and ``exp(`` are single tokens)::

    S -> S '+' T | S '*' T | S '/' T | T
    T -> '(' S ')' | 'sin(' S ')' | 'exp(' S ')' | 'v' | '1' | '2' | '3'

All binary operators live on ``S`` with a ``T`` right operand, so every
chain is left-associated with no precedence between ``+``, ``*`` and ``/``:
``v + 1 * 2`` means ``(v + 1) * 2``.
"""
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ExprSyntaxError

TOKENS = ("+", "*", "/", "(", ")", "sin(", "exp(", "v", "1", "2", "3")
BINARY_OPS = {"+": "Add", "*": "Mul", "/": "Div"}
WRAPPERS = {"(": "Paren", "sin(": "Sin", "exp(": "Exp"}
TERMINALS = ("v", "1", "2", "3")

GRID = np.linspace(-10.0, 10.0, 1000)
MSE_FLOOR = 1e-10
PENALTY = math.log(1e10)
DIV_EPS = 1e-12

_TOKEN_RE = re.compile(r"\s*(sin\(|exp\(|[+*/()v123])")


@dataclass(frozen=True)
class Node:
    """Expression tree node.

    ``kind`` is one of Add, Mul, Div, Paren, Sin, Exp, Var, Const; constants
    carry their digit in ``value``.
    """

    kind: str
    children: tuple = ()
    value: int = 0

    def tokens(self):
        out = []
        _emit(self, out)
        return out

    def __str__(self):
        return to_string(self)


def _emit(node, out):
    k = node.kind
    if k == "Var":
        out.append("v")
    elif k == "Const":
        out.append(str(node.value))
    elif k in ("Add", "Mul", "Div"):
        _emit(node.children[0], out)
        out.append({"Add": "+", "Mul": "*", "Div": "/"}[k])
        _emit(node.children[1], out)
    else:
        out.append({"Paren": "(", "Sin": "sin(", "Exp": "exp("}[k])
        _emit(node.children[0], out)
        out.append(")")


def to_string(tree):
    """Space-separated token string, e.g. ``sin( v ) * 2``."""
    return " ".join(tree.tokens())


def tokenize(text):
    """Split an expression string into grammar tokens (spaces optional)."""
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unknown symbol {text[pos:].lstrip()[:8]!r}", len(toks))
        toks.append(m.group(1))
        pos = m.end()
    return toks


def _terminal(tok):
    return Node("Var") if tok == "v" else Node("Const", value=int(tok))


def generate_expression(rng, max_depth=6):
    """Random derivation from the grammar by uniform production choice.

    Each expansion step increases depth by one.  From ``max_depth`` on,
    ``S`` is forced to ``T`` and ``T`` to a terminal, so ``max_depth=1``
    always yields a single terminal.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    return _gen_s(rng, 1, max_depth)


def _gen_s(rng, depth, max_depth):
    if depth >= max_depth:
        return _gen_t(rng, depth + 1, max_depth)
    choice = int(rng.integers(4))
    if choice == 3:
        return _gen_t(rng, depth + 1, max_depth)
    op = ("Add", "Mul", "Div")[choice]
    left = _gen_s(rng, depth + 1, max_depth)
    right = _gen_t(rng, depth + 1, max_depth)
    return Node(op, (left, right))


def _gen_t(rng, depth, max_depth):
    if depth >= max_depth:
        return _terminal(TERMINALS[int(rng.integers(4))])
    choice = int(rng.integers(7))
    if choice < 3:
        kind = ("Paren", "Sin", "Exp")[choice]
        return Node(kind, (_gen_s(rng, depth + 1, max_depth),))
    return _terminal(TERMINALS[choice - 3])


class _Parser:
    def __init__(self, tokens):
        self.toks = list(tokens)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def parse_s(self):
        node = self.parse_t()
        while self.peek() in BINARY_OPS:
            op = BINARY_OPS[self.toks[self.pos]]
            self.pos += 1
            node = Node(op, (node, self.parse_t()))
        return node

    def parse_t(self):
        tok = self.peek()
        if tok is None:
            raise ExprSyntaxError("unexpected end of input", self.pos)
        if tok in WRAPPERS:
            self.pos += 1
            inner = self.parse_s()
            if self.peek() != ")":
                where = "end of input" if self.peek() is None else repr(self.peek())
                raise ExprSyntaxError(f"expected ')' but found {where}", self.pos)
            self.pos += 1
            return Node(WRAPPERS[tok], (inner,))
        if tok in TERMINALS:
            self.pos += 1
            return _terminal(tok)
        raise ExprSyntaxError(f"unexpected token {tok!r}", self.pos)


def parse(tokens):
    """Parse a token list (or an expression string) into a tree."""
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    p = _Parser(tokens)
    tree = p.parse_s()
    if p.pos != len(p.toks):
        raise ExprSyntaxError(f"trailing token {p.toks[p.pos]!r}", p.pos)
    return tree


def evaluate(tree, v):
    """Evaluate ``tree`` at scalar or array ``v``.

    Division by anything smaller than 1e-12 in magnitude gives NaN and exp
    overflow gives inf; both propagate.
    """
    v = np.asarray(v, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(tree, v)
    out = np.broadcast_to(out, v.shape).astype(float)
    return float(out) if out.ndim == 0 else out


def _eval(node, v):
    k = node.kind
    if k == "Var":
        return v
    if k == "Const":
        return np.full(v.shape, float(node.value))
    if k == "Paren":
        return _eval(node.children[0], v)
    if k == "Sin":
        return np.sin(_eval(node.children[0], v))
    if k == "Exp":
        return np.exp(_eval(node.children[0], v))
    a = _eval(node.children[0], v)
    b = _eval(node.children[1], v)
    if k == "Add":
        return a + b
    if k == "Mul":
        return a * b
    small = np.abs(b) < DIV_EPS
    return np.where(small, np.nan, a / np.where(small, 1.0, b))


def target_values(v=GRID):
    return (1.0 / 3.0) * v * np.sin(v * v)


TARGET = "1 / 3 * v * sin( v * v )"
_TARGET_ON_GRID = target_values(GRID)


def objective(tree, mse_floor=MSE_FLOOR, penalty=PENALTY):
    """Log-MSE of ``tree`` against ``v sin(v^2) / 3`` on the 1000-point grid.

    Minimization.  The result is clamped to ``[log(mse_floor), penalty]``;
    any non-finite evaluation scores ``penalty``.
    """
    if isinstance(tree, str):
        tree = parse(tree)
    vals = evaluate(tree, GRID)
    if not np.all(np.isfinite(vals)):
        return penalty
    with np.errstate(all="ignore"):
        mse = float(np.mean((vals - _TARGET_ON_GRID) ** 2))
    if not math.isfinite(mse):
        return penalty
    return min(math.log(max(mse, mse_floor)), penalty)


def generate_database(size, seed=0, max_depth=6):
    """``size`` distinct expression strings (deduplicated by token string)."""
    rng = np.random.default_rng(seed)
    seen = {}
    attempts = 0
    while len(seen) < size:
        s = to_string(generate_expression(rng, max_depth))
        seen.setdefault(s, None)
        attempts += 1
        if attempts > 200 * size:
            raise RuntimeError(f"could only generate {len(seen)} distinct expressions")
    return list(seen)


class ExpressionBenchmark:
    """Bundles tokenizer and objective so the BO engine stays generic."""

    name = "expr"

    def __init__(self, mse_floor=MSE_FLOOR, penalty=PENALTY):
        self.mse_floor = mse_floor
        self.penalty = penalty
        self._cache = {}

    def tokens(self, structure):
        return structure.split() if isinstance(structure, str) else structure.tokens()

    def __call__(self, structure):
        if structure not in self._cache:
            self._cache[structure] = objective(parse(structure), self.mse_floor, self.penalty)
        return self._cache[structure]
