"""Expressions over tree branches, and histogramming of their values.

Grammar, loosest binding first::

    expr    := and ("||" and)*
    and     := cmp ("&&" cmp)*
    cmp     := add (("==" | "!=" | "<" | "<=" | ">" | ">=") add)*
    add     := mul (("+" | "-") mul)*
    mul     := unary (("*" | "/" | "%") unary)*
    unary   := ("-" | "!") unary | primary
    primary := NUMBER | NAME "(" [expr ("," expr)*] ")" | DOTTED_NAME | "(" expr ")"

Values are floats; comparisons and logical operators yield 0 or 1.  ``&&``
and ``||`` short-circuit, and a branch is read only when evaluation actually
reaches it.  Division by zero follows IEEE rules instead of raising.
"""
from __future__ import annotations

import inspect
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Union

from .errors import (
    ArityError,
    DuplicateNameError,
    ExpressionError,
    NoSuchFunctionError,
    ParseError,
)
from .hist import Hist1D
from .schema import DynamicRecord, Kind
from .tree import Tree, TreeReader


# AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class BranchRef:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Number, BranchRef, Unary, Binary, Call]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<op>&&|\|\||==|!=|<=|>=|[-+*/%<>!(),])
    """,
    re.VERBOSE,
)

_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!=", "<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/", "%"),
]


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, text, pos = self.next()
        if text != value or kind != "op":
            raise ParseError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        expr = self.binary(0)
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", pos)
        return expr

    def binary(self, level: int) -> Expr:
        if level == len(_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in _LEVELS[level]:
                self.next()
                left = Binary(text, left, self.binary(level + 1))
            else:
                return left

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text in ("-", "!"):
            self.next()
            return Unary(text, self.unary())
        return self.primary()

    def primary(self) -> Expr:
        kind, text, pos = self.next()
        if kind == "num":
            return Number(float(text))
        if kind == "name":
            nkind, ntext, npos = self.peek()
            if nkind == "op" and ntext == "(":
                if "." in text:
                    raise ParseError(f"{text!r} is not a function name", pos)
                self.next()
                args = []
                if self.peek()[1] != ")":
                    args.append(self.binary(0))
                    while self.peek()[1] == ",":
                        self.next()
                        args.append(self.binary(0))
                self.expect(")")
                return Call(text, tuple(args))
            return BranchRef(text)
        if kind == "op" and text == "(":
            inner = self.binary(0)
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {text or 'end of input'!r}", pos)


def parse(text: str) -> Expr:
    return _Parser(text).parse()


def to_text(expr: Expr) -> str:
    """Fully parenthesized rendering; ``parse(to_text(e)) == e``."""
    if isinstance(expr, Number):
        # an overflowing literal parses to inf; keep it a literal
        return "1e999" if expr.value == math.inf else repr(expr.value)
    if isinstance(expr, BranchRef):
        return expr.name
    if isinstance(expr, Unary):
        return f"({expr.op}{to_text(expr.operand)})"
    if isinstance(expr, Binary):
        return f"({to_text(expr.left)} {expr.op} {to_text(expr.right)})"
    return f"{expr.name}({', '.join(to_text(a) for a in expr.args)})"


def branch_refs(expr: Expr) -> set[str]:
    """Every branch name mentioned anywhere in ``expr``."""
    if isinstance(expr, BranchRef):
        return {expr.name}
    if isinstance(expr, Unary):
        return branch_refs(expr.operand)
    if isinstance(expr, Binary):
        return branch_refs(expr.left) | branch_refs(expr.right)
    if isinstance(expr, Call):
        return set().union(*(branch_refs(a) for a in expr.args))
    return set()


def function_names(expr: Expr) -> set[str]:
    if isinstance(expr, Call):
        return {expr.name}.union(*(function_names(a) for a in expr.args))
    if isinstance(expr, Unary):
        return function_names(expr.operand)
    if isinstance(expr, Binary):
        return function_names(expr.left) | function_names(expr.right)
    return set()


# functions -----------------------------------------------------------------


def _sqrt(x):
    return math.sqrt(x) if x >= 0 else math.nan


def _log(x):
    if x > 0:
        return math.log(x)
    return -math.inf if x == 0 else math.nan


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _pow(x, y):
    try:
        return math.pow(x, y)
    except OverflowError:
        return math.inf
    except ValueError:
        return math.inf if x == 0 else math.nan


def _ieee(fn):
    def wrapped(x):
        try:
            return fn(x)
        except ValueError:
            return math.nan

    wrapped.__name__ = fn.__name__
    return wrapped


BUILTIN_FUNCTIONS: dict[str, tuple[Callable, int | None]] = {
    "sin": (_ieee(math.sin), 1),
    "cos": (_ieee(math.cos), 1),
    "tan": (_ieee(math.tan), 1),
    "sqrt": (_sqrt, 1),
    "exp": (_exp, 1),
    "log": (_log, 1),
    "abs": (abs, 1),
    "pow": (_pow, 2),
    "min": (min, 2),
    "max": (max, 2),
}


class FunctionRegistry:
    def __init__(self, preload: bool = True):
        self._fns: dict[str, tuple[Callable, int | None]] = dict(BUILTIN_FUNCTIONS) if preload else {}

    def register(self, name: str, fn: Callable, arity: int | None = None) -> None:
        if name in self._fns:
            raise DuplicateNameError(f"function {name!r} is already registered")
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ValueError(f"invalid function name {name!r}")
        if arity is None:
            try:
                params = inspect.signature(fn).parameters.values()
            except (TypeError, ValueError):
                params = None
            if params is not None and all(
                p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD) and p.default is p.empty for p in params
            ):
                arity = len(list(params))
        self._fns[name] = (fn, arity)

    def lookup(self, name: str) -> tuple[Callable, int | None]:
        try:
            return self._fns[name]
        except KeyError:
            raise NoSuchFunctionError(f"no function named {name!r}") from None

    def call(self, name: str, args: list[float]) -> float:
        fn, arity = self.lookup(name)
        if arity is not None and len(args) != arity:
            raise ArityError(f"{name}() takes {arity} argument(s), got {len(args)}")
        return float(fn(*args))

    def __contains__(self, name: str) -> bool:
        return name in self._fns

    def names(self) -> list[str]:
        return sorted(self._fns)


def register_function(registry: FunctionRegistry, name: str, fn: Callable, arity: int | None = None) -> None:
    registry.register(name, fn, arity)


# evaluation -----------------------------------------------------------------


@dataclass
class EvalContext:
    reader: TreeReader
    entry: int = 0
    functions: FunctionRegistry = field(default_factory=FunctionRegistry)
    element: int | None = None
    cache: dict = field(default_factory=dict)
    read_set: set = field(default_factory=set)

    @property
    def tree(self) -> Tree:
        return self.reader.tree

    def move_to(self, entry: int) -> None:
        self.entry = entry
        self.element = None
        self.cache.clear()

    def branch_value(self, name: str):
        if name not in self.cache:
            self.cache[name] = self.reader.read(name, self.entry)
            self.read_set.add(name)
        return self.cache[name]


def _numeric(name: str, value) -> float:
    if isinstance(value, (bool, int, float)):
        return float(value)
    raise ExpressionError(f"branch {name!r} is not numeric (value {value!r})")


def _divide(a: float, b: float) -> float:
    if b == 0:
        if a == 0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _modulo(a: float, b: float) -> float:
    try:
        return math.fmod(a, b)
    except ValueError:
        return math.nan


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _divide,
    "%": _modulo,
    "==": lambda a, b: float(a == b),
    "!=": lambda a, b: float(a != b),
    "<": lambda a, b: float(a < b),
    "<=": lambda a, b: float(a <= b),
    ">": lambda a, b: float(a > b),
    ">=": lambda a, b: float(a >= b),
}


def evaluate(expr: Expr, ctx: EvalContext) -> float:
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, BranchRef):
        value = ctx.branch_value(expr.name)
        if ctx.tree.plan(expr.name).axis is not None:
            if ctx.element is None:
                raise ExpressionError(f"list branch {expr.name!r} used outside an element loop")
            value = value[ctx.element]
        return _numeric(expr.name, value)
    if isinstance(expr, Binary):
        op = expr.op
        if op == "&&":
            return 1.0 if evaluate(expr.left, ctx) != 0 and evaluate(expr.right, ctx) != 0 else 0.0
        if op == "||":
            return 1.0 if evaluate(expr.left, ctx) != 0 or evaluate(expr.right, ctx) != 0 else 0.0
        return _ARITH[op](evaluate(expr.left, ctx), evaluate(expr.right, ctx))
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, ctx)
        return -v if expr.op == "-" else float(v == 0)
    if isinstance(expr, Call):
        return ctx.functions.call(expr.name, [evaluate(a, ctx) for a in expr.args])
    raise TypeError(f"not an expression node: {expr!r}")


eval_expr = evaluate


# drawing ------------------------------------------------------------------

SKIP = object()


@dataclass(frozen=True)
class HistSpec:
    """Binning for draw(); leave lo/hi unset for automatic range."""

    nbins: int = 100
    lo: float | None = None
    hi: float | None = None

    @property
    def auto(self) -> bool:
        return self.lo is None or self.hi is None


def auto_range(values: list[float]) -> tuple[float, float]:
    """100-bin style range over the finite values; infinities land in under/overflow."""
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if hi == lo:
        return lo, lo + 1.0
    return lo, hi + (hi - lo) / 100


class EntryAccessor:
    """Lazy view of one entry handed to per-entry functions."""

    def __init__(self, ctx: EvalContext):
        self._ctx = ctx

    @property
    def entry(self) -> int:
        return self._ctx.entry

    def __call__(self, name: str):
        return self._ctx.branch_value(name)

    __getitem__ = __call__


class Query:
    """Runs draw/map passes over one tree, tracking what was read."""

    def __init__(self, tree: Tree, functions: FunctionRegistry | None = None):
        self.tree = tree
        self.functions = functions or FunctionRegistry()
        self.reader = tree.reader()
        self.read_set: set[str] = set()
        self.nan_skipped = 0

    @property
    def trace(self):
        return self.reader.trace

    def _axis(self, exprs: list[Expr]) -> str | None:
        axes = set()
        for e in exprs:
            for name in branch_refs(e):
                plan = self.tree.plan(name)
                if plan.kind not in (Kind.INT64, Kind.FLOAT64, Kind.BOOL):
                    raise ExpressionError(f"branch {name!r} is not numeric ({plan.kind.label})")
                if plan.nested:
                    raise ExpressionError(f"branch {name!r} crosses nested lists")
                if plan.axis is not None:
                    axes.add(plan.axis)
            for fname in function_names(e):
                self.functions.lookup(fname)
        if len(axes) > 1:
            raise ExpressionError(f"expression mixes collection axes {sorted(axes)}")
        return axes.pop() if axes else None

    def _pairs(self, expr: Expr, selection: Expr | None):
        axis = self._axis([expr] + ([selection] if selection is not None else []))
        ctx = EvalContext(self.reader, functions=self.functions, read_set=self.read_set)
        for i in range(self.tree.entries):
            ctx.move_to(i)
            if axis is None:
                elements = (None,)
            else:
                elements = range(self.reader.read(f"{axis}_n", i))
            for k in elements:
                ctx.element = k
                w = 1.0 if selection is None else evaluate(selection, ctx)
                if w == 0:
                    continue
                if math.isnan(w):
                    self.nan_skipped += 1
                    continue
                v = evaluate(expr, ctx)
                if math.isnan(v):
                    self.nan_skipped += 1
                    continue
                yield v, w

    def draw(self, expr_text: str, selection_text: str | None = "", spec: HistSpec | None = None) -> Hist1D:
        spec = spec or HistSpec()
        expr = parse(expr_text)
        selection = parse(selection_text) if selection_text and selection_text.strip() else None
        return _histogram(expr_text, list(self._pairs(expr, selection)), spec)

    def map_entries(self, fn: Callable, spec: HistSpec | None = None, name: str = "map") -> Hist1D:
        """Histogram ``fn(accessor)`` over every entry; ``None`` or SKIP omits an entry."""
        spec = spec or HistSpec()
        ctx = EvalContext(self.reader, functions=self.functions, read_set=self.read_set)
        accessor = EntryAccessor(ctx)
        pairs = []
        for i in range(self.tree.entries):
            ctx.move_to(i)
            v = fn(accessor)
            if v is None or v is SKIP:
                continue
            v = float(v)
            if math.isnan(v):
                self.nan_skipped += 1
                continue
            pairs.append((v, 1.0))
        return _histogram(name, pairs, spec)


def _histogram(name: str, pairs: list[tuple[float, float]], spec: HistSpec) -> Hist1D:
    if spec.auto:
        lo, hi = auto_range([v for v, _ in pairs])
    else:
        lo, hi = spec.lo, spec.hi
    h = Hist1D(name, spec.nbins, lo, hi)
    for v, w in pairs:
        h.fill(v, w)
    return h


def draw(tree: Tree, expr_text: str, selection_text: str | None = "", spec: HistSpec | None = None,
         functions: FunctionRegistry | None = None) -> Hist1D:
    return Query(tree, functions).draw(expr_text, selection_text, spec)


def map_entries(tree: Tree, fn: Callable, spec: HistSpec | None = None,
                functions: FunctionRegistry | None = None) -> Hist1D:
    return Query(tree, functions).map_entries(fn, spec)


def materialize(record: DynamicRecord) -> dict:
    """Flatten a record into ``{dotted path: value}`` for every scalar or list field."""
    out = {}

    def walk(prefix, value):
        if isinstance(value, DynamicRecord):
            for k, v in value.values:
                walk(f"{prefix}.{k}" if prefix else k, v)
        else:
            out[prefix] = value

    walk("", record)
    return out
