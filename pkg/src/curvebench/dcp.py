"""Certified curvature propagation through expression trees.

The analyzer walks an expression bottom-up maintaining, per node, a
(curvature, monotonicity, range) state and applies the standard composition
rules of disciplined convex programming:

* scalar composition ``h(g)``: convex-nondecreasing of convex is convex,
  convex-nonincreasing of concave is convex, concave-nondecreasing of concave
  is concave, concave-nonincreasing of convex is concave, anything of affine
  keeps the outer curvature;
* weighted sums: nonnegative combinations preserve curvature, negation flips
  it, mixed-curvature sums are not certified;
* variadic max of convex/affine arguments is convex;
* norms and squared norms of affine arguments are convex;
* ``log(1+exp(u))`` is convex for convex/affine ``u`` (negated: concave);
* log-sum-exp bodies (a positive combination of exp terms inside a log) are
  convex when every exponent is convex/affine.

``unknown`` means "no rule fires": the expression may still be convex or
concave, so it is never itself a proof of the ``neither`` label.

Monotonicity of nonmonotonic atoms is refined by the argument's range (an
absolute value over a nonnegative range is nondecreasing); this is what makes
chains through norms certifiable.

Sub-function bodies use ``Ref`` leaves whose states come from a caller-supplied
map, so the same walker powers whole-tree labeling, per-step ground truth, and
the rule-based oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from . import atoms
from .atoms import NONDEC, NONINC, NONMONO
from .errors import DomainError
from .expr import Apply, Const, Expr, Interval, LinComb, Ref, Var, print_expr

__all__ = [
    "CurvatureState", "analyze", "analyze_table", "certified_label", "CertifiedLabel",
    "AFFINE", "CONVEX", "CONCAVE", "UNKNOWN",
]

AFFINE = "affine"
CONVEX = "convex"
CONCAVE = "concave"
UNKNOWN = "unknown"

_MONO_UNKNOWN = "unknown"

# V-shaped atoms whose monotonicity resolves once the argument has a sign
_VSHAPE_SIGN = {
    "norm1": 1, "norm2": 1, "norm_inf": 1, "sqnorm2": 1,
    "neg_norm1": -1, "neg_norm2": -1, "neg_norm_inf": -1,
}


@dataclass(frozen=True)
class CurvatureState:
    """Propagated state of one sub-expression."""

    curvature: str  # affine | convex | concave | unknown
    monotonicity: str  # nondecreasing | nonincreasing | nonmonotonic | unknown
    range: Interval

    @property
    def coarse_range(self) -> str:
        return self.range.coarse()


def flip(curv: str) -> str:
    if curv == CONVEX:
        return CONCAVE
    if curv == CONCAVE:
        return CONVEX
    return curv


def _flip_mono(mono: str) -> str:
    if mono == NONDEC:
        return NONINC
    if mono == NONINC:
        return NONDEC
    return mono


def _curv_add(a: str, b: str) -> str:
    """Curvature of a sum of two certified terms."""
    if a == UNKNOWN or b == UNKNOWN:
        return UNKNOWN
    if a == AFFINE:
        return b
    if b == AFFINE:
        return a
    return a if a == b else UNKNOWN


def _mono_add(monos: list[str]) -> str:
    if any(m == _MONO_UNKNOWN for m in monos):
        return _MONO_UNKNOWN
    if all(m == NONDEC for m in monos):
        return NONDEC
    if all(m == NONINC for m in monos):
        return NONINC
    return NONMONO


def _compose_curvature(h_curv: str, h_mono: str, g_curv: str) -> str:
    """Certified curvature of the scalar composition h(g) for one argument."""
    if g_curv == UNKNOWN:
        return UNKNOWN
    if g_curv == AFFINE:
        return h_curv
    if h_curv == AFFINE:
        if h_mono == NONDEC:
            return g_curv
        if h_mono == NONINC:
            return flip(g_curv)
        return UNKNOWN
    if h_curv == CONVEX:
        if (h_mono == NONDEC and g_curv == CONVEX) or (h_mono == NONINC and g_curv == CONCAVE):
            return CONVEX
        return UNKNOWN
    if h_curv == CONCAVE:
        if (h_mono == NONDEC and g_curv == CONCAVE) or (h_mono == NONINC and g_curv == CONVEX):
            return CONCAVE
        return UNKNOWN
    return UNKNOWN


def _chain_mono(h_mono: str, g_mono: str) -> str:
    if h_mono == _MONO_UNKNOWN or g_mono == _MONO_UNKNOWN:
        return _MONO_UNKNOWN
    if h_mono == NONMONO or g_mono == NONMONO:
        return NONMONO
    return NONDEC if h_mono == g_mono else NONINC


def _effective_mono(atom_id: str, spec_mono: str, arg_range: Interval) -> str:
    if spec_mono != NONMONO or atom_id not in _VSHAPE_SIGN:
        return spec_mono
    sign = _VSHAPE_SIGN[atom_id]
    if arg_range.issubset(Interval.nonneg()):
        return NONDEC if sign > 0 else NONINC
    if arg_range.issubset(Interval.nonpos()):
        return NONINC if sign > 0 else NONDEC
    return NONMONO


class _Walker:
    def __init__(self, ref_states: dict[str, tuple[str, Interval]] | None,
                 collect: list | None):
        self.ref_states = ref_states or {}
        self.collect = collect
        self.memo: dict[int, CurvatureState] = {}

    def state(self, e: Expr, path: str) -> CurvatureState:
        s = self._state(e, path)
        self.memo[id(e)] = s
        if self.collect is not None:
            self.collect.append({
                "path": path,
                "expression": print_expr(e),
                "curvature": s.curvature,
                "monotonicity": s.monotonicity,
                "range": str(s.range),
                "coarse_range": s.coarse_range,
            })
        return s

    def _state(self, e: Expr, path: str) -> CurvatureState:
        if isinstance(e, Var):
            return CurvatureState(AFFINE, NONDEC, Interval.real_line())
        if isinstance(e, Const):
            return CurvatureState(AFFINE, NONDEC, Interval.point(e.value))
        if isinstance(e, Ref):
            if e.name not in self.ref_states:
                raise DomainError(f"no state bound for reference {e.name}", path)
            curv, rng = self.ref_states[e.name]
            return CurvatureState(curv, _MONO_UNKNOWN, rng)
        if isinstance(e, LinComb):
            return self._lincomb(e, path)
        assert isinstance(e, Apply)
        return self._apply(e, path)

    def _lincomb(self, e: LinComb, path: str) -> CurvatureState:
        curv = AFFINE
        monos: list[str] = []
        rng = Interval.point(e.offset)
        for i, (coeff, child) in enumerate(e.terms):
            cs = self.state(child, f"{path}.t{i}")
            contrib = cs.curvature if coeff > 0 else flip(cs.curvature)
            curv = _curv_add(curv, contrib)
            monos.append(cs.monotonicity if coeff > 0 else _flip_mono(cs.monotonicity))
            rng = rng.add(cs.range.scale(coeff))
        return CurvatureState(curv, _mono_add(monos), rng)

    def _apply(self, e: Apply, path: str) -> CurvatureState:
        spec = atoms.lookup(e.atom)
        if not spec.check_arity(len(e.args)):
            raise DomainError(f"{e.atom} applied to {len(e.args)} argument(s)", path)
        arg_states = [self.state(a, f"{path}.a{i}") for i, a in enumerate(e.args)]
        for i, st in enumerate(arg_states):
            if not st.range.issubset(spec.domain):
                raise DomainError(
                    f"argument range {st.range} exits domain {spec.domain} of {e.atom}",
                    f"{path}.a{i}",
                )
        rng = spec.range_map([st.range for st in arg_states])

        h_monos = [_effective_mono(e.atom, spec.monotonicity, st.range) for st in arg_states]
        per_arg = [_compose_curvature(spec.curvature, h_monos[i], arg_states[i].curvature)
                   for i in range(len(arg_states))]
        if spec.curvature == AFFINE:
            curv = AFFINE
            for c in per_arg:
                curv = _curv_add(curv, c)
        else:
            curv = spec.curvature if all(c == spec.curvature for c in per_arg) else UNKNOWN

        if curv == UNKNOWN and e.atom == "log":
            curv = self._log_sum_exp_pattern(e.args[0])

        chained = [_chain_mono(h_monos[i], arg_states[i].monotonicity)
                   for i in range(len(arg_states))]
        return CurvatureState(curv, _mono_add(chained), rng)

    def _log_sum_exp_pattern(self, arg: Expr) -> str:
        """Convexity of log(sum_i c_i exp(u_i) + c_0) with c_i > 0, c_0 >= 0
        and every u_i convex or affine."""
        if not isinstance(arg, LinComb) or arg.offset < 0.0:
            return UNKNOWN
        for coeff, child in arg.terms:
            if coeff <= 0.0 or not isinstance(child, Apply) or child.atom != "exp":
                return UNKNOWN
            inner = self.memo.get(id(child.args[0]))
            if inner is None or inner.curvature not in (CONVEX, AFFINE):
                return UNKNOWN
        return CONVEX


def analyze(e: Expr, ref_states: dict[str, tuple[str, Interval]] | None = None) -> CurvatureState:
    """Propagate curvature, monotonicity, and range bottom-up.

    ``ref_states`` binds Ref leaves (sub-function bodies) to
    ``(curvature, range)`` pairs. Raises DomainError when an argument range
    exits an atom's domain, naming the offending sub-expression path.
    """
    return _Walker(ref_states, None).state(e, "root")


def analyze_table(e: Expr) -> list[dict]:
    """Per-node state rows (children before parents) for debugging output."""
    rows: list = []
    _Walker(None, rows).state(e, "root")
    return rows


class CertifiedLabel(NamedTuple):
    label: str  # convex | concave | uncertified
    affine: bool

    def matches(self, target: str) -> bool:
        """Whether this certificate proves the given convex/concave label."""
        if self.affine:
            return target in ("convex", "concave")
        return self.label == target


def certified_label(e: Expr) -> CertifiedLabel:
    """Map the propagated curvature to a benchmark-facing certificate.

    ``uncertified`` means no rule chain applies; it is not a proof that the
    function is neither convex nor concave.
    """
    s = analyze(e)
    if s.curvature == AFFINE:
        return CertifiedLabel("convex", True)
    if s.curvature == CONVEX:
        return CertifiedLabel("convex", False)
    if s.curvature == CONCAVE:
        return CertifiedLabel("concave", False)
    return CertifiedLabel("uncertified", False)
