"""Atom registry: elementary functions with curvature, monotonicity, domain,
and range maps.

Each atom carries the property tuple used both for composition-rule checking
and for sampling. Most atoms are distinct tree heads (``Apply`` nodes); the
``affine``, ``sum``, and ``exp_neg`` entries are realized structurally out of
LinComb / exp nodes by the synthesizer but keep registry entries so they can
be sampled, traced, and documented uniformly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .errors import DomainError, UnknownAtomError
from .expr import Interval

__all__ = ["AtomSpec", "lookup", "output_range", "atom_ids", "registry_manifest", "VARIADIC"]

VARIADIC = -1  # arity sentinel: >= 2 arguments

NONDEC = "nondecreasing"
NONINC = "nonincreasing"
NONMONO = "nonmonotonic"


def _safe_exp(t: float) -> float:
    try:
        return math.exp(t)
    except OverflowError:
        return math.inf


def _softplus(t: float) -> float:
    if not math.isfinite(t):
        return max(t, 0.0) if not math.isnan(t) else t
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


def _lse(*ts: float) -> float:
    m = max(ts)
    if not math.isfinite(m):
        return m
    return m + math.log(sum(math.exp(t - m) for t in ts))


@dataclass(frozen=True)
class AtomSpec:
    """One library atom and its full property tuple."""

    id: str
    arity: int  # 1 for unary, VARIADIC for >= 2
    curvature: str  # affine | convex | concave
    monotonicity: str  # per argument; variadic atoms are uniform across args
    domain: Interval  # per argument
    declared_range: Interval
    eval: Callable[..., float]
    range_map: Callable[[list[Interval]], Interval]
    head: bool = True  # False: realized structurally by the synthesizer
    extended: bool = False  # excluded under --strict-atoms

    def check_arity(self, n: int) -> bool:
        return n >= 2 if self.arity == VARIADIC else n == self.arity


def _monotone_image(fn: Callable[[float], float], r: Interval, increasing: bool) -> Interval:
    lo_v, hi_v = fn(r.lo), fn(r.hi)
    if increasing:
        return Interval(lo_v, hi_v, r.lo_open, r.hi_open)
    return Interval(hi_v, lo_v, r.hi_open, r.lo_open)


def _abs_image(r: Interval) -> Interval:
    if r.lo >= 0.0:
        return Interval(r.lo, r.hi, r.lo_open, r.hi_open)
    if r.hi <= 0.0:
        return Interval(-r.hi, -r.lo, r.hi_open, r.lo_open)
    # straddles zero: minimum 0 is attained (0 is interior)
    if -r.lo > r.hi:
        hi, hi_open = -r.lo, r.lo_open
    elif r.hi > -r.lo:
        hi, hi_open = r.hi, r.hi_open
    else:
        hi, hi_open = r.hi, r.hi_open and r.lo_open
    return Interval(0.0, hi, False, hi_open)


def _clamp_below(r: Interval) -> Interval:
    """Image of max(0, t): used by relu/hinge shapes."""
    if r.hi <= 0.0:
        return Interval.point(0.0)
    lo = max(r.lo, 0.0)
    lo_open = r.lo_open if r.lo >= 0.0 else False
    return Interval(lo, r.hi, lo_open, r.hi_open)


def _square_image(r: Interval) -> Interval:
    a = _abs_image(r)
    hi = a.hi * a.hi if math.isfinite(a.hi) else math.inf
    return Interval(a.lo * a.lo, hi, a.lo_open, a.hi_open)


_TINY = 5e-324


def _strictly_positive(iv: Interval) -> Interval:
    """Restore real-math openness at 0 where float endpoint eval underflowed."""
    lo, hi, lo_open, hi_open = iv.lo, iv.hi, iv.lo_open, iv.hi_open
    if hi == 0.0:
        hi, hi_open = _TINY, False
    if lo == 0.0 and not lo_open:
        lo_open = True
    return Interval(lo, hi, lo_open, hi_open)


def _exp_map(rs):
    return _strictly_positive(_monotone_image(_safe_exp, rs[0], increasing=True))


def _exp_neg_map(rs):
    return _strictly_positive(_monotone_image(lambda t: _safe_exp(-t), rs[0], increasing=False))


def _softplus_map(rs):
    return _strictly_positive(_monotone_image(_softplus, rs[0], increasing=True))


def _log_map(rs):
    return _monotone_image(lambda t: math.log(t) if t > 0 else -math.inf, rs[0], increasing=True)


def _sqrt_map(rs):
    return _monotone_image(lambda t: math.sqrt(t) if t >= 0 else 0.0, rs[0], increasing=True)


def _lse_map(rs):
    lo = _lse(*[r.lo for r in rs])
    hi = _lse(*[r.hi for r in rs])
    return Interval(lo, hi, any(r.lo_open for r in rs), any(r.hi_open for r in rs))


def _sum_map(rs):
    acc = rs[0]
    for r in rs[1:]:
        acc = acc.add(r)
    return acc


def _max_map(rs):
    acc = rs[0]
    for r in rs[1:]:
        acc = acc.max_with(r)
    return acc


_R = Interval.real_line()
_POS = Interval.positive()
_NEG = Interval.negative()
_NONNEG = Interval.nonneg()
_NONPOS = Interval.nonpos()

_REGISTRY: dict[str, AtomSpec] = {}


def _register(spec: AtomSpec):
    _REGISTRY[spec.id] = spec


_register(AtomSpec("affine", 1, "affine", NONMONO, _R, _R,
                   eval=lambda t: t, range_map=lambda rs: _R, head=False))
_register(AtomSpec("exp", 1, "convex", NONDEC, _R, _POS, eval=_safe_exp, range_map=_exp_map))
_register(AtomSpec("softplus", 1, "convex", NONDEC, _R, _POS, eval=_softplus,
                   range_map=_softplus_map))
_register(AtomSpec("hinge", 1, "convex", NONDEC, _R, _NONNEG,
                   eval=lambda t: max(0.0, t - 1.0),
                   range_map=lambda rs: _clamp_below(rs[0].shift(-1.0))))
_register(AtomSpec("relu", 1, "convex", NONDEC, _R, _NONNEG,
                   eval=lambda t: max(0.0, t), range_map=lambda rs: _clamp_below(rs[0])))
_register(AtomSpec("sum", VARIADIC, "affine", NONDEC, _R, _R,
                   eval=lambda *ts: sum(ts), range_map=_sum_map, head=True))
_register(AtomSpec("max", VARIADIC, "convex", NONDEC, _R, _R,
                   eval=lambda *ts: max(ts), range_map=_max_map))
_register(AtomSpec("log_sum_exp", VARIADIC, "convex", NONDEC, _R, _R,
                   eval=_lse, range_map=_lse_map))
_register(AtomSpec("exp_neg", 1, "convex", NONINC, _R, _POS,
                   eval=lambda t: _safe_exp(-t), range_map=_exp_neg_map, head=False))
_register(AtomSpec("neg_sqrt", 1, "convex", NONINC, _NONNEG, _NONPOS,
                   eval=lambda t: -math.sqrt(t) if t >= 0 else math.nan,
                   range_map=lambda rs: _sqrt_map(rs).scale(-1.0)))
_register(AtomSpec("norm1", 1, "convex", NONMONO, _R, _NONNEG,
                   eval=lambda t: abs(t), range_map=lambda rs: _abs_image(rs[0])))
_register(AtomSpec("norm2", 1, "convex", NONMONO, _R, _NONNEG,
                   eval=lambda t: abs(t), range_map=lambda rs: _abs_image(rs[0])))
_register(AtomSpec("norm_inf", 1, "convex", NONMONO, _R, _NONNEG,
                   eval=lambda t: abs(t), range_map=lambda rs: _abs_image(rs[0])))
_register(AtomSpec("log", 1, "concave", NONDEC, _POS, _R,
                   eval=lambda t: math.log(t) if t > 0 else math.nan, range_map=_log_map))
_register(AtomSpec("sqrt", 1, "concave", NONDEC, _NONNEG, _NONNEG,
                   eval=lambda t: math.sqrt(t) if t >= 0 else math.nan, range_map=_sqrt_map))
_register(AtomSpec("neg_exp", 1, "concave", NONINC, _R, _NEG,
                   eval=lambda t: -_safe_exp(t), range_map=lambda rs: _exp_map(rs).scale(-1.0)))
_register(AtomSpec("neg_softplus", 1, "concave", NONINC, _R, _NEG,
                   eval=lambda t: -_softplus(t),
                   range_map=lambda rs: _softplus_map(rs).scale(-1.0)))
_register(AtomSpec("neg_relu", 1, "concave", NONINC, _R, _NONPOS,
                   eval=lambda t: -max(0.0, t),
                   range_map=lambda rs: _clamp_below(rs[0]).scale(-1.0)))
_register(AtomSpec("neg_norm1", 1, "concave", NONMONO, _R, _NONPOS,
                   eval=lambda t: -abs(t), range_map=lambda rs: _abs_image(rs[0]).scale(-1.0)))
_register(AtomSpec("neg_norm2", 1, "concave", NONMONO, _R, _NONPOS,
                   eval=lambda t: -abs(t), range_map=lambda rs: _abs_image(rs[0]).scale(-1.0)))
_register(AtomSpec("neg_norm_inf", 1, "concave", NONMONO, _R, _NONPOS,
                   eval=lambda t: -abs(t), range_map=lambda rs: _abs_image(rs[0]).scale(-1.0)))
_register(AtomSpec("sqnorm2", 1, "convex", NONMONO, _R, _NONNEG,
                   eval=lambda t: t * t, range_map=lambda rs: _square_image(rs[0]),
                   extended=True))


def lookup(atom_id: str) -> AtomSpec:
    """Fetch an atom spec; raises UnknownAtomError for unregistered ids."""
    try:
        return _REGISTRY[atom_id]
    except KeyError:
        raise UnknownAtomError(f"unknown atom {atom_id!r}") from None


def atom_ids(strict: bool = False) -> list[str]:
    """All registered ids, optionally excluding extended atoms."""
    return [a for a, s in _REGISTRY.items() if not (strict and s.extended)]


def output_range(atom_id: str, arg_ranges: list[Interval]) -> Interval:
    """Sound over-approximation of the atom's image interval over the given
    argument ranges (exact for monotone atoms)."""
    spec = lookup(atom_id)
    if not spec.check_arity(len(arg_ranges)):
        raise DomainError(f"{atom_id} does not accept {len(arg_ranges)} argument(s)")
    for i, r in enumerate(arg_ranges):
        if not r.issubset(spec.domain):
            raise DomainError(f"argument {i} range {r} exits domain {spec.domain} of {atom_id}")
    return spec.range_map(arg_ranges)


def registry_manifest(strict: bool = False) -> list[dict]:
    """Serializable description of the registry for documentation and
    cross-implementation conformance checks."""
    out = []
    for aid in atom_ids(strict):
        s = _REGISTRY[aid]
        out.append({
            "id": s.id,
            "arity": "variadic" if s.arity == VARIADIC else s.arity,
            "curvature": s.curvature,
            "monotonicity": s.monotonicity,
            "domain": str(s.domain),
            "range": str(s.declared_range),
            "head": s.head,
            "extended": s.extended,
        })
    return out
