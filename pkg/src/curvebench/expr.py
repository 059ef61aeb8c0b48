"""Immutable scalar expression trees with a canonical textual grammar.

An expression is built from four node kinds: the single free variable ``x``,
real constants, n-ary linear combinations (weighted sums with an offset), and
atom applications. Trees are frozen dataclasses, safe to share across threads;
every operation here is pure.

The printed grammar (whitespace-insignificant)::

    expr    := term (('+'|'-') term)*
    term    := [number] factor | number
    factor  := 'x' | ref | atomcall | '(' expr ')' | '-' factor
             | '||' expr '||_' p ['^2']          (p in {1, 2, inf})
    atomcall:= name '(' expr (',' expr)* ')'
    ref     := 'g_' digits

Coefficients are printed at 3 significant digits; synthesis rounds them before
tree construction so print/parse/evaluate agree bit-exactly.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError

__all__ = [
    "Expr", "Var", "Const", "LinComb", "Apply", "Ref", "Interval", "X",
    "fmt_real", "round_sig", "neg", "is_negation", "print_expr", "parse_expr",
    "evaluate", "evaluate_grid", "structural_depth", "iter_nodes", "substitute_refs",
]


@dataclass(frozen=True, slots=True)
class Var:
    """The free variable ``x``."""


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class LinComb:
    """Weighted sum ``sum_i coeff_i * child_i + offset``.

    At least one term; no coefficient is exactly zero. Nested LinComb children
    are permitted (no forced flattening).
    """

    terms: tuple[tuple[float, "Expr"], ...]
    offset: float = 0.0

    def __post_init__(self):
        if not self.terms:
            raise ValueError("LinComb requires at least one term")
        if any(c == 0.0 for c, _ in self.terms):
            raise ValueError("LinComb coefficients must be nonzero")


@dataclass(frozen=True, slots=True)
class Apply:
    """Application of a registered atom to one or more argument expressions."""

    atom: str
    args: tuple["Expr", ...]

    def __post_init__(self):
        if not self.args:
            raise ValueError("Apply requires at least one argument")


@dataclass(frozen=True, slots=True)
class Ref:
    """Opaque leaf reference to an earlier sub-function (decomposition only)."""

    name: str


Expr = Var | Const | LinComb | Apply | Ref

X = Var()


def neg(e: Expr) -> LinComb:
    """The negation wrapper ``-(e)`` as a single-term LinComb."""
    return LinComb(((-1.0, e),), 0.0)


def is_negation(e: Expr) -> bool:
    return isinstance(e, LinComb) and len(e.terms) == 1 and e.terms[0][0] == -1.0 and e.offset == 0.0


# ---------------------------------------------------------------------------
# Intervals
# ---------------------------------------------------------------------------

_INF = math.inf


@dataclass(frozen=True, slots=True)
class Interval:
    """Extended-real interval with open/closed endpoint flags.

    Infinite endpoints are always open. ``lo == hi`` forces both closed.
    """

    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("NaN interval endpoint")
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if self.lo == self.hi:
            # degenerate intervals are closed; image maps may collapse wide
            # inputs onto a point (e.g. softplus far into the left tail)
            object.__setattr__(self, "lo_open", False)
            object.__setattr__(self, "hi_open", False)
        if math.isinf(self.lo) and not self.lo_open:
            object.__setattr__(self, "lo_open", True)
        if math.isinf(self.hi) and not self.hi_open:
            object.__setattr__(self, "hi_open", True)

    @classmethod
    def real_line(cls) -> "Interval":
        return cls(-_INF, _INF, True, True)

    @classmethod
    def positive(cls) -> "Interval":
        return cls(0.0, _INF, True, True)

    @classmethod
    def negative(cls) -> "Interval":
        return cls(-_INF, 0.0, True, True)

    @classmethod
    def nonneg(cls) -> "Interval":
        return cls(0.0, _INF, False, True)

    @classmethod
    def nonpos(cls) -> "Interval":
        return cls(-_INF, 0.0, True, False)

    @classmethod
    def point(cls, v: float) -> "Interval":
        return cls(v, v)

    def contains(self, v: float) -> bool:
        if math.isnan(v):
            return False
        if v < self.lo or (v == self.lo and self.lo_open):
            return False
        if v > self.hi or (v == self.hi and self.hi_open):
            return False
        return True

    def issubset(self, other: "Interval") -> bool:
        lo_ok = self.lo > other.lo or (self.lo == other.lo and (not other.lo_open or self.lo_open))
        hi_ok = self.hi < other.hi or (self.hi == other.hi and (not other.hi_open or self.hi_open))
        return lo_ok and hi_ok

    def coarse(self) -> str:
        """Project to the pos/neg/any sign vocabulary."""
        if self.lo > 0.0 or (self.lo == 0.0 and self.lo_open):
            return "pos"
        if self.hi < 0.0 or (self.hi == 0.0 and self.hi_open):
            return "neg"
        return "any"

    # interval arithmetic -------------------------------------------------

    def shift(self, b: float) -> "Interval":
        return Interval(self.lo + b, self.hi + b, self.lo_open, self.hi_open)

    def scale(self, a: float) -> "Interval":
        if a == 0.0:
            return Interval.point(0.0)
        if a > 0.0:
            return Interval(a * self.lo, a * self.hi, self.lo_open, self.hi_open)
        return Interval(a * self.hi, a * self.lo, self.hi_open, self.lo_open)

    def add(self, other: "Interval") -> "Interval":
        lo = self.lo + other.lo
        hi = self.hi + other.hi
        if math.isnan(lo):  # inf + -inf cancellation: widen soundly
            lo = -_INF
        if math.isnan(hi):
            hi = _INF
        return Interval(lo, hi, self.lo_open or other.lo_open, self.hi_open or other.hi_open)

    def hull(self, other: "Interval") -> "Interval":
        if self.lo < other.lo:
            lo, lo_open = self.lo, self.lo_open
        elif other.lo < self.lo:
            lo, lo_open = other.lo, other.lo_open
        else:
            lo, lo_open = self.lo, self.lo_open and other.lo_open
        if self.hi > other.hi:
            hi, hi_open = self.hi, self.hi_open
        elif other.hi > self.hi:
            hi, hi_open = other.hi, other.hi_open
        else:
            hi, hi_open = self.hi, self.hi_open and other.hi_open
        return Interval(lo, hi, lo_open, hi_open)

    def max_with(self, other: "Interval") -> "Interval":
        """Image of pointwise max over the two intervals."""
        if self.lo > other.lo:
            lo, lo_open = self.lo, self.lo_open
        elif other.lo > self.lo:
            lo, lo_open = other.lo, other.lo_open
        else:
            # tied lower bounds: the max attains it only if both sides do
            lo, lo_open = self.lo, self.lo_open or other.lo_open
        if self.hi > other.hi:
            hi, hi_open = self.hi, self.hi_open
        elif other.hi > self.hi:
            hi, hi_open = other.hi, other.hi_open
        else:
            hi, hi_open = self.hi, self.hi_open and other.hi_open
        return Interval(lo, hi, lo_open, hi_open)

    def __str__(self) -> str:
        lb = "(" if self.lo_open else "["
        rb = ")" if self.hi_open else "]"
        return f"{lb}{self.lo:g}, {self.hi:g}{rb}"


def coarse_interval(tag: str) -> Interval:
    """Expand a pos/neg/any tag to its interval."""
    if tag == "pos":
        return Interval.positive()
    if tag == "neg":
        return Interval.negative()
    return Interval.real_line()


# ---------------------------------------------------------------------------
# Real formatting
# ---------------------------------------------------------------------------

def round_sig(v: float) -> float:
    """Round to 3 significant digits (the storage precision for coefficients)."""
    return float(f"{v:.3g}")


def fmt_real(v: float) -> str:
    if v == 0.0:
        return "0"
    return f"{v:.3g}"


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_NORM_TEMPLATES = {
    "norm1": ("||", "||_1"), "norm2": ("||", "||_2"), "norm_inf": ("||", "||_inf"),
    "sqnorm2": ("||", "||_2^2"),
    "neg_norm1": ("-||", "||_1"), "neg_norm2": ("-||", "||_2"), "neg_norm_inf": ("-||", "||_inf"),
}

_CALL_TEMPLATES = {
    "exp": ("exp(", ")"), "neg_exp": ("-exp(", ")"),
    "log": ("log(", ")"), "sqrt": ("sqrt(", ")"), "neg_sqrt": ("-sqrt(", ")"),
    "softplus": ("log(1+exp(", "))"), "neg_softplus": ("-log(1+exp(", "))"),
    "relu": ("max(0,", ")"), "neg_relu": ("-max(0,", ")"),
    "hinge": ("hinge(", ")"),
}


def print_expr(e: Expr) -> str:
    """Deterministic canonical rendering of an expression tree."""
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Const):
        return fmt_real(e.value)
    if isinstance(e, Apply):
        return _print_apply(e)
    if isinstance(e, LinComb):
        return _print_lincomb(e)
    raise TypeError(f"not an expression: {e!r}")


def _print_apply(e: Apply) -> str:
    inner = [print_expr(a) for a in e.args]
    if e.atom in _NORM_TEMPLATES:
        pre, post = _NORM_TEMPLATES[e.atom]
        return pre + inner[0] + post
    if e.atom in _CALL_TEMPLATES:
        pre, post = _CALL_TEMPLATES[e.atom]
        return pre + inner[0] + post
    if e.atom == "log_sum_exp":
        return "log(" + "+".join(f"exp({s})" for s in inner) + ")"
    # generic variadic call: max(u1,u2), sum(u1,u2)
    return f"{e.atom}(" + ",".join(inner) + ")"


def _starts_negative(e: Expr, s: str) -> bool:
    """Whether a term's rendering already begins with a unary minus."""
    return s.startswith("-")


def _print_term(coeff: float, child: Expr) -> str:
    """Render one LinComb term with its sign folded in."""
    s = print_expr(child)
    if isinstance(child, Var) or isinstance(child, Ref):
        if coeff == 1.0:
            return s
        if coeff == -1.0:
            return "-" + s
        return fmt_real(coeff) + s
    # compound child: parenthesize unless coeff folds to +1 with a self-signed head
    if coeff == 1.0:
        if isinstance(child, LinComb):
            return "(" + s + ")"
        return s
    if coeff == -1.0:
        return "-(" + s + ")"
    return fmt_real(coeff) + "(" + s + ")"


def _print_lincomb(e: LinComb) -> str:
    parts: list[str] = []
    for coeff, child in e.terms:
        rendered = _print_term(coeff, child)
        if parts and not _starts_negative(child, rendered):
            parts.append("+" + rendered)
        else:
            parts.append(rendered)
    out = "".join(parts)
    if e.offset != 0.0:
        out += ("+" if e.offset > 0 else "-") + fmt_real(abs(e.offset))
    return out


# ---------------------------------------------------------------------------
# Parsing (recursive descent over the canonical grammar)
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# atom names with a registered negated counterpart ("-exp(" parses to neg_exp)
_NEGATED_CALLS = {"exp": "neg_exp", "sqrt": "neg_sqrt", "softplus": "neg_softplus"}
_NEGATED_NORMS = {"norm1": "neg_norm1", "norm2": "neg_norm2", "norm_inf": "neg_norm_inf"}


class _Parser:
    def __init__(self, text: str, allow_refs: bool):
        self.text = text
        self.pos = 0
        self.allow_refs = allow_refs

    def error(self, message: str):
        raise ParseError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, lit: str) -> bool:
        self.skip_ws()
        return self.text.startswith(lit, self.pos)

    def eat(self, lit: str) -> bool:
        if self.peek(lit):
            self.pos += len(lit)
            return True
        return False

    def expect(self, lit: str):
        if not self.eat(lit):
            self.error(f"expected {lit!r}")

    def number(self) -> float | None:
        self.skip_ws()
        m = _NUMBER_RE.match(self.text, self.pos)
        if not m:
            return None
        self.pos = m.end()
        return float(m.group())

    def name(self) -> str | None:
        self.skip_ws()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            return None
        self.pos = m.end()
        return m.group()

    # grammar -------------------------------------------------------------

    def parse_expr(self) -> Expr:
        terms: list[tuple[float, Expr]] = []
        offset = 0.0
        sign = 1.0
        if self.eat("-"):
            sign = -1.0
        elif self.eat("+"):
            pass
        while True:
            coeff, node = self.parse_term(sign)
            if node is None:
                offset += coeff
            else:
                terms.append((coeff, node))
            self.skip_ws()
            if self.eat("+"):
                sign = 1.0
            elif self.peek("-"):
                # the '-' doubles as separator and sign of the next term
                self.eat("-")
                sign = -1.0
            else:
                break
        if not terms:
            return Const(offset)
        if len(terms) == 1 and offset == 0.0 and terms[0][0] == 1.0:
            return terms[0][1]
        return LinComb(tuple(terms), offset)

    def parse_term(self, sign: float) -> tuple[float, Expr | None]:
        """One signed term: returns (coeff, node) or (value, None) for a bare number."""
        num = self.number()
        if num is not None:
            node = self.parse_factor_opt(allow_sign=False, allow_norm=False)
            if node is None:
                return sign * num, None
            return sign * num, node
        node = self.parse_factor_opt(allow_sign=True, sign=sign)
        if node is None:
            self.error("expected a term")
        # negated atom heads fold the leading sign into the factor itself
        if isinstance(node, tuple):
            return node  # (coeff, expr) already resolved
        return sign, node

    def parse_factor_opt(self, allow_sign: bool, sign: float = 1.0, allow_norm: bool = True):
        """Parse a factor; returns Expr, (coeff, Expr), or None."""
        self.skip_ws()
        if self.pos >= len(self.text):
            return None
        ch = self.text[self.pos]
        if ch == "(":
            self.pos += 1
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if ch == "|" and allow_norm and self.peek("||"):
            atom_id, arg = self.parse_norm()
            if sign == -1.0 and allow_sign and atom_id in _NEGATED_NORMS:
                return (1.0, Apply(_NEGATED_NORMS[atom_id], (arg,)))
            return Apply(atom_id, (arg,))
        m = _NAME_RE.match(self.text, self.pos)
        if m:
            word = m.group()
            if word == "x":
                self.pos = m.end()
                return Var()
            if word.startswith("g_") and word[2:].isdigit():
                if not self.allow_refs:
                    self.error(f"sub-function reference {word!r} not allowed here")
                self.pos = m.end()
                return Ref(word)
            self.pos = m.end()
            call = self.parse_call(word)
            if sign == -1.0 and allow_sign:
                folded = self.fold_negated_call(call)
                if folded is not None:
                    return (1.0, folded)
            return call
        return None

    def parse_norm(self) -> tuple[str, Expr]:
        self.expect("||")
        arg = self.parse_expr()
        self.expect("||_")
        if self.eat("inf"):
            return "norm_inf", arg
        if self.eat("2"):
            if self.eat("^2"):
                return "sqnorm2", arg
            return "norm2", arg
        if self.eat("1"):
            return "norm1", arg
        self.error("expected norm order 1, 2, or inf")

    def parse_call(self, word: str) -> Expr:
        self.skip_ws()
        if word == "log":
            return self.parse_log()
        self.expect("(")
        args = [self.parse_expr()]
        while self.eat(","):
            args.append(self.parse_expr())
        self.expect(")")
        if word == "max":
            if len(args) == 2 and args[0] == Const(0.0):
                return Apply("relu", (args[1],))
            if len(args) < 2:
                self.error("variadic max needs at least 2 arguments")
            return Apply("max", tuple(args))
        if word == "sum":
            if len(args) < 2:
                self.error("variadic sum needs at least 2 arguments")
            return Apply("sum", tuple(args))
        if word == "hinge":
            if len(args) != 1:
                self.error("hinge takes exactly 1 argument")
            return Apply("hinge", (args[0],))
        if word in ("exp", "sqrt"):
            if len(args) != 1:
                self.error(f"{word} takes exactly 1 argument")
            return Apply(word, (args[0],))
        self.error(f"unknown function name {word!r}")

    def parse_log(self) -> Expr:
        """log with positional special forms: softplus and log-sum-exp."""
        self.expect("(")
        save = self.pos
        # canonical softplus template log(1+exp(u)); backtrack if it is not one
        if self.eat("1") and self.eat("+") and self.eat("exp") and self.eat("("):
            try:
                u = self.parse_expr()
                if self.eat(")") and self.eat(")"):
                    return Apply("softplus", (u,))
            except ParseError:
                pass
        self.pos = save
        arg = self.parse_expr()
        self.expect(")")
        lse_args = _match_lse(arg)
        if lse_args is not None:
            return Apply("log_sum_exp", lse_args)
        return Apply("log", (arg,))

    def fold_negated_call(self, call: Expr) -> Expr | None:
        if isinstance(call, Apply):
            if call.atom in _NEGATED_CALLS:
                return Apply(_NEGATED_CALLS[call.atom], call.args)
            if call.atom == "relu":
                return Apply("neg_relu", call.args)
        return None


def _match_lse(arg: Expr) -> tuple[Expr, ...] | None:
    """Recognize the canonical log-sum-exp body: unit-coefficient sum of exp terms."""
    if not isinstance(arg, LinComb) or arg.offset != 0.0 or len(arg.terms) < 2:
        return None
    out = []
    for coeff, child in arg.terms:
        if coeff != 1.0 or not isinstance(child, Apply) or child.atom != "exp":
            return None
        out.append(child.args[0])
    return tuple(out)


def parse_expr(s: str, *, allow_refs: bool = False) -> Expr:
    """Parse canonical expression text; raises ParseError on malformed input."""
    p = _Parser(s, allow_refs)
    e = p.parse_expr()
    p.skip_ws()
    if p.pos != len(s):
        p.error("trailing characters after expression")
    return e


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_grid(e: Expr, xs: np.ndarray, ref_values: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Vectorized evaluation over an array of points.

    Overflow, domain violations, and NaN propagation yield non-finite entries;
    this never raises.
    """
    xs = np.asarray(xs, dtype=float)
    with np.errstate(all="ignore"):
        return _eval(e, xs, ref_values or {})


def _eval(e: Expr, xs: np.ndarray, refs: dict[str, np.ndarray]) -> np.ndarray:
    if isinstance(e, Var):
        return xs
    if isinstance(e, Const):
        return np.full_like(xs, e.value)
    if isinstance(e, Ref):
        if e.name not in refs:
            raise KeyError(f"no value bound for reference {e.name}")
        return refs[e.name]
    if isinstance(e, LinComb):
        acc = np.full_like(xs, e.offset)
        for coeff, child in e.terms:
            acc = acc + coeff * _eval(child, xs, refs)
        return acc
    assert isinstance(e, Apply)
    vals = [_eval(a, xs, refs) for a in e.args]
    return _APPLY_KERNELS[e.atom](vals)


def _guarded_log(u: np.ndarray) -> np.ndarray:
    return np.where(u > 0, np.log(np.where(u > 0, u, 1.0)), np.nan)


def _guarded_sqrt(u: np.ndarray) -> np.ndarray:
    return np.where(u >= 0, np.sqrt(np.abs(u)), np.nan)


def _softplus(u: np.ndarray) -> np.ndarray:
    # stable: log(1+e^u) = max(u,0) + log1p(e^{-|u|})
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


_APPLY_KERNELS = {
    "exp": lambda v: np.exp(v[0]),
    "neg_exp": lambda v: -np.exp(v[0]),
    "log": lambda v: _guarded_log(v[0]),
    "sqrt": lambda v: _guarded_sqrt(v[0]),
    "neg_sqrt": lambda v: -_guarded_sqrt(v[0]),
    "softplus": lambda v: _softplus(v[0]),
    "neg_softplus": lambda v: -_softplus(v[0]),
    "relu": lambda v: np.maximum(v[0], 0.0),
    "neg_relu": lambda v: -np.maximum(v[0], 0.0),
    "hinge": lambda v: np.maximum(v[0] - 1.0, 0.0),
    "norm1": lambda v: np.abs(v[0]),
    "norm2": lambda v: np.abs(v[0]),
    "norm_inf": lambda v: np.abs(v[0]),
    "neg_norm1": lambda v: -np.abs(v[0]),
    "neg_norm2": lambda v: -np.abs(v[0]),
    "neg_norm_inf": lambda v: -np.abs(v[0]),
    "sqnorm2": lambda v: np.square(v[0]),
    "max": lambda v: np.maximum.reduce(v),
    "sum": lambda v: np.add.reduce(v),
    "log_sum_exp": lambda v: _lse_reduce(v),
}


def _lse_reduce(vals: list[np.ndarray]) -> np.ndarray:
    acc = vals[0]
    for v in vals[1:]:
        acc = np.logaddexp(acc, v)
    return acc


def evaluate(e: Expr, x: float) -> float:
    """Evaluate at a single point; non-finite results are values, not errors."""
    return float(evaluate_grid(e, np.array([x]))[0])


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------

def structural_depth(e: Expr) -> int:
    """Composition depth: Apply layers plus maximal runs of nested LinComb nodes
    along the deepest root-to-variable path. A run of adjacent LinComb nodes is
    the affine layer it denotes, counted once."""
    return _depth(e, in_run=False)


def _depth(e: Expr, in_run: bool) -> int:
    if isinstance(e, (Var, Const, Ref)):
        return 0
    if isinstance(e, Apply):
        return 1 + max(_depth(a, in_run=False) for a in e.args)
    assert isinstance(e, LinComb)
    inc = 0 if in_run else 1
    return inc + max(_depth(c, in_run=True) for _, c in e.terms)


def iter_nodes(e: Expr):
    """Yield every node of the tree, parents before children."""
    yield e
    if isinstance(e, LinComb):
        for _, c in e.terms:
            yield from iter_nodes(c)
    elif isinstance(e, Apply):
        for a in e.args:
            yield from iter_nodes(a)


def substitute_refs(e: Expr, bindings: dict[str, Expr], partial: bool = False) -> Expr:
    """Replace Ref leaves by bound expressions (used by recomposition).

    With ``partial`` unknown references pass through; otherwise they raise.
    """
    if isinstance(e, Ref):
        if e.name not in bindings:
            if partial:
                return e
            from .errors import DanglingReferenceError

            raise DanglingReferenceError(f"undefined sub-function {e.name}")
        return bindings[e.name]
    if isinstance(e, LinComb):
        terms: list[tuple[float, Expr]] = []
        offset = e.offset
        for c, ch in e.terms:
            sub = substitute_refs(ch, bindings, partial)
            if c == 1.0 and isinstance(ch, Ref) and isinstance(sub, LinComb):
                # a bare reference to an affine tail rejoins its host sum flat,
                # mirroring how such sums print (no parenthesized +(ax+b) term)
                terms.extend(sub.terms)
                offset += sub.offset
            else:
                terms.append((c, sub))
        return LinComb(tuple(terms), offset)
    if isinstance(e, Apply):
        return Apply(e.atom, tuple(substitute_refs(a, bindings, partial) for a in e.args))
    return e
