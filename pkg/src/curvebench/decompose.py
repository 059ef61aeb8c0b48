"""Dependency-structured decomposition of an expression into named
sub-functions g_1..g_k.

The cut points follow the composition structure: every affine layer and every
atom application becomes a sub-function, except that an atom keeps three kinds
of content inline in its own body: plain x/constant leaves, reference-free
affine arguments (``-||1.37x+0.0336||_1`` stays one body), and negation
wrappers (``exp(-g_6)``). The granularity limit then reshapes those natural
units in two directions:

* bodies longer than ``max_len`` give up their inline affine arguments to
  fresh sub-functions (an atom application that still exceeds the limit is an
  irreducible unit and is kept whole);
* at coarse granularities (above 50 characters) single-use sub-functions are
  folded back into their consumer while the merged body fits the budget,
  which is what turns a depth-100 chain into a few dozen reasoning steps.

Sub-function bodies reference only x and strictly earlier names, the last
sub-function is the root, and recompose(decompose(e)) is the structural
identity at every granularity.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import MissingStateError
from .expr import (Apply, Const, Expr, LinComb, Ref, Var, is_negation,
                   print_expr, substitute_refs)

__all__ = ["SubFunction", "DependencyGraph", "decompose", "recompose",
           "focused_context", "full_context"]

_MERGE_GATE = 50  # merging only engages at granularities above this
_MERGE_RESERVE = 40  # merged bodies stay at most max_len - reserve long


@dataclass(frozen=True)
class SubFunction:
    index: int  # 1-based
    name: str  # "g_<index>"
    body: Expr  # over {x, g_1 .. g_{index-1}}
    printed_form: str


@dataclass(frozen=True)
class DependencyGraph:
    parents: dict[int, tuple[int, ...]]  # direct dependencies, sorted

    def of(self, i: int) -> tuple[int, ...]:
        return self.parents.get(i, ())


def _body_len(e: Expr) -> int:
    return sum(1 for c in print_expr(e) if not c.isspace())


def _inline_affine(e: Expr) -> bool:
    """A single affine layer over plain leaves; deeper affine nests are their
    own composition layers and become sub-functions."""
    if isinstance(e, (Var, Const)):
        return True
    if isinstance(e, LinComb):
        return all(isinstance(c, (Var, Const)) for _, c in e.terms)
    return False


def _refs_in(e: Expr) -> list[str]:
    out: list[str] = []

    def go(n: Expr):
        if isinstance(n, Ref):
            out.append(n.name)
        elif isinstance(n, LinComb):
            for _, c in n.terms:
                go(c)
        elif isinstance(n, Apply):
            for a in n.args:
                go(a)

    go(e)
    return out


class _Units:
    """Ordered unit store with temporary names (children before parents)."""

    def __init__(self):
        self.order: list[str] = []
        self.bodies: dict[str, Expr] = {}
        self._n = 0

    def add(self, body: Expr, before: str | None = None) -> str:
        name = f"u{self._n}"
        self._n += 1
        if before is None:
            self.order.append(name)
        else:
            self.order.insert(self.order.index(before), name)
        self.bodies[name] = body
        return name


def _build_units(e: Expr, units: _Units) -> str:
    """Cut the tree into natural units; returns the root unit's temp name."""

    def cut(node: Expr) -> str:
        return units.add(body_of(node))

    def body_of(node: Expr) -> Expr:
        if isinstance(node, (Var, Const)):
            return node
        if isinstance(node, LinComb):
            is_leaf = [isinstance(ch, (Var, Const)) for _, ch in node.terms]
            leaf_positions = [i for i, f in enumerate(is_leaf) if f]
            contiguous = bool(leaf_positions) and \
                leaf_positions == list(range(leaf_positions[0], leaf_positions[-1] + 1))
            if not leaf_positions or all(is_leaf) or not contiguous:
                terms = tuple((c, ch if lf else Ref(cut(ch)))
                              for (c, ch), lf in zip(node.terms, is_leaf))
                return LinComb(terms, node.offset)
            # a mixed sum carries its bare affine tail (one contiguous run,
            # which is where flat siblings land) as its own sub-function
            tail_terms = tuple(node.terms[i] for i in leaf_positions)
            tail = units.add(LinComb(tail_terms, node.offset))
            terms = []
            for i, (c, ch) in enumerate(node.terms):
                if is_leaf[i]:
                    if i == leaf_positions[0]:
                        terms.append((1.0, Ref(tail)))
                else:
                    terms.append((c, Ref(cut(ch))))
            return LinComb(tuple(terms), 0.0)
        assert isinstance(node, Apply)
        return Apply(node.atom, tuple(arg_of(a) for a in node.args))

    def arg_of(node: Expr) -> Expr:
        if isinstance(node, (Var, Const)):
            return node
        if _inline_affine(node):
            return node
        if is_negation(node):
            return LinComb(((-1.0, arg_of(node.terms[0][1])),), 0.0)
        return Ref(cut(node))

    return cut(e)


def _split_oversize(units: _Units, max_len: int):
    """Extract inline affine arguments from bodies that exceed the limit."""
    for name in list(units.order):
        body = units.bodies[name]
        if _body_len(body) <= max_len or not isinstance(body, Apply):
            continue

        def extract(node: Expr) -> Expr:
            if isinstance(node, (Var, Const, Ref)):
                return node
            if is_negation(node):
                return LinComb(((-1.0, extract(node.terms[0][1])),), 0.0)
            if _inline_affine(node) and not isinstance(node, (Var, Const)):
                return Ref(units.add(node, before=name))
            return node

        new_args = tuple(extract(a) for a in body.args)
        units.bodies[name] = Apply(body.atom, new_args)


def _merge_chains(units: _Units, max_len: int):
    """Fold single-use units into their consumer while the result fits."""
    budget = max_len - _MERGE_RESERVE
    changed = True
    while changed:
        changed = False
        counts: dict[str, list[str]] = {}
        for name in units.order:
            for r in _refs_in(units.bodies[name]):
                counts.setdefault(r, []).append(name)
        for name in list(units.order[:-1]):  # root never merges away
            users = counts.get(name, [])
            if len(users) != 1:
                continue
            consumer = users[0]
            merged = substitute_refs(units.bodies[consumer], {name: units.bodies[name]},
                                     partial=True)
            if _body_len(merged) > budget:
                continue
            units.bodies[consumer] = merged
            units.order.remove(name)
            del units.bodies[name]
            changed = True
            break


def decompose(e: Expr, max_len: int) -> tuple[list[SubFunction], DependencyGraph]:
    """Cut an expression into ordered sub-functions at the given granularity."""
    if max_len < 8:
        raise ValueError("max_len must be >= 8")
    units = _Units()
    _build_units(e, units)
    _split_oversize(units, max_len)
    if max_len > _MERGE_GATE:
        _merge_chains(units, max_len)

    rename = {temp: f"g_{i + 1}" for i, temp in enumerate(units.order)}
    subs: list[SubFunction] = []
    parents: dict[int, tuple[int, ...]] = {}
    for i, temp in enumerate(units.order):
        body = _rename_refs(units.bodies[temp], rename)
        idx = i + 1
        deps = sorted({int(r.split("_")[1]) for r in _refs_in(body)})
        parents[idx] = tuple(deps)
        subs.append(SubFunction(idx, f"g_{idx}", body, print_expr(body)))
    return subs, DependencyGraph(parents)


def _rename_refs(e: Expr, rename: dict[str, str]) -> Expr:
    if isinstance(e, Ref):
        return Ref(rename[e.name])
    if isinstance(e, LinComb):
        return LinComb(tuple((c, _rename_refs(ch, rename)) for c, ch in e.terms), e.offset)
    if isinstance(e, Apply):
        return Apply(e.atom, tuple(_rename_refs(a, rename) for a in e.args))
    return e


def recompose(subs: list[SubFunction]) -> Expr:
    """Inline the references back into the final sub-function."""
    resolved: dict[str, Expr] = {}
    for sf in subs:
        resolved[sf.name] = substitute_refs(sf.body, resolved)
    return resolved[subs[-1].name]


def focused_context(i: int, subs: list[SubFunction], graph: DependencyGraph,
                    states: dict[int, object]) -> list[tuple[SubFunction, object]]:
    """Exactly the direct dependencies of g_i with their states, in order."""
    out = []
    for j in graph.of(i):
        if j not in states:
            raise MissingStateError(f"no state for g_{j} (needed by g_{i})")
        out.append((subs[j - 1], states[j]))
    return out


def full_context(i: int, subs: list[SubFunction],
                 states: dict[int, object]) -> list[tuple[SubFunction, object]]:
    """All earlier sub-functions with their states, in index order."""
    out = []
    for j in range(1, i):
        if j not in states:
            raise MissingStateError(f"no state for g_{j} (needed by g_{i})")
        out.append((subs[j - 1], states[j]))
    return out
