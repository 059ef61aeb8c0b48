"""Label-guided synthesis of deeply composed benchmark expressions.

A chain starts from an affine base layer and is wrapped outward one layer at a
time. Every layer is admitted through the same coarse certified-state engine
the rule oracle uses (curvature plus pos/neg/any range), so emitted convex and
concave instances are certifiable by construction. The ``neither`` sampler
relaxes the curvature rules (domain compatibility still holds) and accepts an
expression only once violations of both convexity and concavity are found.

Layer realizations:

* ``affine``      -> LinComb wrap ``a*u + b`` (one affine layer; never stacked
                     directly on another LinComb so depth stays exact)
* ``exp_neg``     -> ``exp(-(u))``, taken only over affine-topped chains where
                     the inner negation merges into the existing affine layer
* ``sum``         -> n-ary LinComb over the chain plus 1-2 sibling branches
* ``max``/``log_sum_exp`` -> variadic heads over the chain plus siblings
* ``negate``      -> final-layer curvature flip ``-(u)``
* unary heads     -> plain atom application

Sampling per layer is uniform over the admissible move set; admission also
requires the composed expression to remain finite on at least 90% of the
probe grid over [-3, 3], which keeps deep exp-chains evaluable.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import atoms, dcp
from .dcp import AFFINE, CONCAVE, CONVEX, UNKNOWN, flip
from .errors import DomainError, SynthesisExhaustedError
from .expr import (Apply, Expr, Interval, LinComb, Ref, Var, X, coarse_interval,
                   evaluate_grid, neg, round_sig, structural_depth)
from .jensen import Counterexample, JensenConfig, find_counterexample

__all__ = [
    "SynthesisTarget", "BenchmarkInstance", "sample_affine_coeffs",
    "sample_chain", "sample_neither", "generate_instance", "generate_batch",
    "instance_seed", "DEFAULT_DEPTHS", "DEFAULT_COUNT_PER_CLASS",
]

DEFAULT_DEPTHS = (2, 5, 10, 20, 40, 60, 80, 100)
DEFAULT_COUNT_PER_CLASS = 100

_PROBE_GRID = np.linspace(-3.0, 3.0, 33)
_MIN_FINITE_FRACTION = 0.9

_UNARY_HEADS = ["exp", "softplus", "hinge", "relu", "neg_exp", "neg_softplus",
                "neg_relu", "log", "sqrt", "neg_sqrt", "norm1", "norm2",
                "norm_inf", "sqnorm2"]
_VARIADIC_HEADS = ["max", "log_sum_exp"]


@dataclass(frozen=True)
class SynthesisTarget:
    """Configuration of one sampling run toward a target label."""

    label: str  # convex | concave | neither
    depth: int
    seed: int
    coeff_slope_range: tuple[float, float] = (0.1, 3.0)
    coeff_offset_range: tuple[float, float] = (-3.0, 3.0)
    sibling_max_depth: int = 2
    max_resample_attempts: int = 300
    strict_atoms: bool = False

    def __post_init__(self):
        if self.label not in ("convex", "concave", "neither"):
            raise ValueError(f"bad label {self.label!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        # sibling branches never reach deeper than the chain below them
        clamped = max(1, min(self.sibling_max_depth, self.depth - 1))
        object.__setattr__(self, "sibling_max_depth", clamped)


@dataclass
class BenchmarkInstance:
    """One labeled expression with provenance and verification artifacts."""

    id: str
    expression: Expr
    label: str
    depth: int
    atom_trace: list[str]
    seed: int
    counterexamples: dict[str, Counterexample] | None = None
    decompositions: dict[int, list] = field(default_factory=dict)


def sample_affine_coeffs(rng: random.Random, target: SynthesisTarget) -> tuple[float, float]:
    """Slope with equiprobable sign and offset, rounded to 3 significant
    digits; the slope is never zero."""
    lo, hi = target.coeff_slope_range
    olo, ohi = target.coeff_offset_range
    while True:
        a = round_sig(rng.uniform(lo, hi))
        if rng.random() < 0.5:
            a = -a
        b = round_sig(rng.uniform(olo, ohi))
        if abs(a) == 1.0 and b == 0.0:
            continue  # reserved shape: bare negation/identity wraps are moves, not draws
        return a, b


class _Layer(NamedTuple):
    expr: Expr
    curvature: str
    tag: str  # pos | neg | any
    probe: np.ndarray
    trace: tuple[str, ...]

    @property
    def top(self) -> str:
        if isinstance(self.expr, LinComb):
            return "lincomb"
        if isinstance(self.expr, Apply):
            return "apply"
        return "leaf"


class _DeadEnd(Exception):
    pass


def _derive(body: Expr, refs: dict[str, tuple[str, str]]) -> tuple[str, str] | None:
    """Coarse certified state of a one-layer body; None on domain violation."""
    states = {name: (curv, coarse_interval(tag)) for name, (curv, tag) in refs.items()}
    try:
        s = dcp.analyze(body, ref_states=states)
    except DomainError:
        return None
    return s.curvature, s.coarse_range


class _Sampler:
    def __init__(self, rng: random.Random, target: SynthesisTarget, relaxed: bool):
        self.rng = rng
        self.target = target
        self.relaxed = relaxed
        self.heads = [h for h in _UNARY_HEADS
                      if not (target.strict_atoms and atoms.lookup(h).extended)]
        self._admit_cache: dict[tuple, bool] = {}

    # -- layer bodies -------------------------------------------------------

    def _base(self) -> _Layer:
        if self.relaxed:
            # relaxed chains may start from a bare atom over x, which is what
            # makes shallow uncertified shapes like exp(-max(0,x)) reachable
            picks = ["affine"] + [h for h in self.heads
                                  if _derive(Apply(h, (X,)), {}) is not None]
            head = self.rng.choice(sorted(picks))
            if head != "affine":
                expr = Apply(head, (X,))
                curv, tag = _derive(expr, {})
                probe = evaluate_grid(expr, _PROBE_GRID)
                return _Layer(expr, curv, tag, probe, (head,))
        a, b = sample_affine_coeffs(self.rng, self.target)
        expr = LinComb(((a, X),), b)
        probe = a * _PROBE_GRID + b
        return _Layer(expr, AFFINE, "any", probe, ("affine",))

    def _structural_moves(self, top: str, final: bool) -> list[str]:
        moves = list(self.heads) + _VARIADIC_HEADS.copy()
        if top != "lincomb":
            moves.append("affine")
        if top == "lincomb":
            moves.append("exp_neg")
        if top == "apply":
            moves.append("sum")
            if final:
                moves.append("negate")
        return moves

    def _quick_body(self, move: str, n_args: int = 2) -> Expr:
        u = Ref("u")
        if move == "affine":
            return LinComb(((2.0, u),), 0.5)
        if move == "negate":
            return neg(u)
        if move == "exp_neg":
            return Apply("exp", (neg(u),))
        if move == "sum":
            return LinComb(tuple([(0.5, u)] + [(0.5, Ref(f"s{i}")) for i in range(n_args - 1)]), 0.0)
        if move in _VARIADIC_HEADS:
            return Apply(move, tuple([u] + [Ref(f"s{i}") for i in range(n_args - 1)]))
        return Apply(move, (u,))

    def _admissible(self, move: str, state: tuple[str, str], strict: bool,
                    final_label: str | None) -> bool:
        """Rule/domain admissibility with a hypothetical affine sibling."""
        key = (move, state, strict, final_label)
        if key in self._admit_cache:
            return self._admit_cache[key]
        refs = {"u": state, "s0": (AFFINE, "any")}
        derived = _derive(self._quick_body(move), refs)
        if derived is None:
            ok = False
        elif move == "affine" or move == "sum":
            # sign choices make affine wraps reach either curvature direction
            curv = state[0]
            ok = (not strict) or curv != UNKNOWN
            if ok and final_label is not None:
                ok = curv in (final_label, flip(final_label), AFFINE)
        elif move == "negate":
            ok = ((not strict) or state[0] != UNKNOWN) and \
                 (final_label is None or flip(state[0]) == final_label)
        else:
            curv = derived[0]
            ok = (not strict) or curv != UNKNOWN
            if ok and final_label is not None:
                ok = curv in (final_label, AFFINE)
        self._admit_cache[key] = ok
        return ok

    # -- realization --------------------------------------------------------

    def _realize(self, move: str, layer: _Layer, strict: bool,
                 final_label: str | None, depth_below: int) -> _Layer | None:
        rng = self.rng
        u_state = (layer.curvature, layer.tag)
        refs: dict[str, tuple[str, str]] = {"u": u_state}
        ref_probes: dict[str, np.ndarray] = {"u": layer.probe}
        bindings: dict[str, Expr] = {"u": layer.expr}

        if move == "affine":
            a, b = sample_affine_coeffs(rng, self.target)
            if final_label is not None and layer.curvature in (CONVEX, CONCAVE):
                want_flip = layer.curvature != final_label
                if (a < 0) != want_flip:
                    a = -a
            body: Expr = LinComb(((a, Ref("u")),), b)
        elif move == "negate":
            body = neg(Ref("u"))
        elif move == "exp_neg":
            body = Apply("exp", (neg(Ref("u")),))
        elif move == "sum" or move in _VARIADIC_HEADS:
            body = self._realize_variadic(move, layer, strict, refs, ref_probes,
                                          bindings, depth_below)
            if body is None:
                return None
        else:
            body = Apply(move, (Ref("u"),))

        derived = _derive(body, refs)
        if derived is None:
            return None
        curv, tag = derived
        if strict and curv == UNKNOWN:
            return None
        if final_label is not None and not (curv == final_label or curv == AFFINE):
            return None

        probe = evaluate_grid(body, _PROBE_GRID, ref_values=ref_probes)
        if np.isfinite(probe).mean() < _MIN_FINITE_FRACTION:
            return None
        from .expr import substitute_refs
        expr = substitute_refs(body, bindings)
        return _Layer(expr, curv, tag, probe, layer.trace + (move,))

    def _realize_variadic(self, move, layer, strict, refs, ref_probes, bindings,
                          depth_below) -> Expr | None:
        n_sibs = 1 if self.rng.random() < 0.75 else 2
        budget = max(1, min(self.target.sibling_max_depth, depth_below))
        if strict:
            if move == "sum":
                allowed = (layer.curvature, AFFINE) if layer.curvature != AFFINE else (AFFINE,)
            else:
                allowed = (CONVEX, AFFINE)
        else:
            allowed = None
        sib_names = []
        for i in range(n_sibs):
            branch = self._sample_branch(allowed, budget)
            if branch is None:
                return None
            expr_i, state_i, probe_i = branch
            name = f"s{i}"
            refs[name] = state_i
            ref_probes[name] = probe_i
            bindings[name] = expr_i
            sib_names.append(name)

        if move in _VARIADIC_HEADS:
            return Apply(move, tuple([Ref("u")] + [Ref(n) for n in sib_names]))
        # weighted-sum realization; a unit coefficient now and then matches the
        # bare-term style of deep printed instances
        children = ["u"] + sib_names
        while True:
            coeffs = []
            for _ in children:
                if self.rng.random() < 1 / 3:
                    coeffs.append(1.0)
                else:
                    coeffs.append(round_sig(self.rng.uniform(*self.target.coeff_slope_range)))
            all_exp = all(isinstance(bindings[c], Apply) and bindings[c].atom == "exp"
                          for c in children)
            if not (all_exp and all(c == 1.0 for c in coeffs)):
                break  # that exact shape is the log-sum-exp print form
        terms = tuple((coeffs[i], Ref(c)) for i, c in enumerate(children))
        return LinComb(terms, 0.0)

    def _sample_branch(self, allowed: tuple[str, ...] | None, budget: int):
        """A small independent sub-chain over x for one variadic argument."""
        for _ in range(6):
            depth = self.rng.randint(1, budget)
            a, b = sample_affine_coeffs(self.rng, self.target)
            expr: Expr = LinComb(((a, X),), b)
            state = (AFFINE, "any")
            probe = a * _PROBE_GRID + b
            ok = True
            for _level in range(depth - 1):
                picks = [h for h in self.heads + ["exp_neg"]
                         if self._admissible(h, state, strict=allowed is not None,
                                             final_label=None)]
                picks = [h for h in picks if h != "exp_neg" or isinstance(expr, LinComb)]
                if not picks:
                    ok = False
                    break
                head = self.rng.choice(sorted(picks))
                if head == "exp_neg":
                    body = Apply("exp", (neg(Ref("u")),))
                else:
                    body = Apply(head, (Ref("u"),))
                derived = _derive(body, {"u": state})
                if derived is None:
                    ok = False
                    break
                new_probe = evaluate_grid(body, _PROBE_GRID, ref_values={"u": probe})
                if np.isfinite(new_probe).mean() < _MIN_FINITE_FRACTION:
                    ok = False
                    break
                from .expr import substitute_refs
                expr = substitute_refs(body, {"u": expr})
                state, probe = derived, new_probe
            if not ok:
                continue
            if allowed is not None and state[0] not in allowed:
                continue
            return expr, state, probe
        return None

    # -- chain growth -------------------------------------------------------

    def grow(self) -> tuple[Expr, list[str]]:
        target = self.target
        stack: list[_Layer] = [self._base()]
        backtracks = 0
        while len(stack) < target.depth:
            d = len(stack) + 1
            layer = self._extend(stack[-1], d)
            if layer is None:
                backtracks += 1
                if backtracks > target.max_resample_attempts:
                    raise SynthesisExhaustedError(
                        f"no compatible atom after {backtracks} backtracks "
                        f"(label={target.label}, depth={target.depth}, seed={target.seed})")
                if len(stack) > 1:
                    stack.pop()
                else:
                    stack = [self._base()]
                continue
            stack.append(layer)
        return stack[-1].expr, list(stack[-1].trace)

    def _extend(self, layer: _Layer, d: int) -> _Layer | None:
        target = self.target
        final = d == target.depth
        final_label = target.label if (final and not self.relaxed) else None
        strict = not self.relaxed
        if self.relaxed and self.rng.random() < 0.5:
            strict = True  # half the relaxed layers still follow the rules
        state = (layer.curvature, layer.tag)

        moves = [m for m in self._structural_moves(layer.top, final)
                 if self._admissible(m, state, strict, final_label)]
        if self.relaxed and not moves and strict:
            strict = False
            moves = [m for m in self._structural_moves(layer.top, final)
                     if self._admissible(m, state, strict, final_label)]
        while moves:
            move = self.rng.choice(sorted(moves))
            for _ in range(3):
                out = self._realize(move, layer, strict, final_label, depth_below=d - 1)
                if out is not None:
                    return out
            moves.remove(move)
        return None


def sample_chain(target: SynthesisTarget) -> BenchmarkInstance:
    """Grow a certified convex or concave instance of exactly the target depth."""
    if target.label not in ("convex", "concave"):
        raise ValueError("sample_chain targets convex/concave; use sample_neither")
    rng = random.Random(target.seed)
    sampler = _Sampler(rng, target, relaxed=False)
    if target.depth == 1:
        layer = sampler._base()
        expr, trace = layer.expr, list(layer.trace)
    else:
        expr, trace = sampler.grow()
    cert = dcp.certified_label(expr)
    if not cert.matches(target.label):
        raise SynthesisExhaustedError(
            f"certification mismatch: built {cert.label}, wanted {target.label}")
    if structural_depth(expr) != target.depth:
        raise SynthesisExhaustedError(
            f"depth drift: built {structural_depth(expr)}, wanted {target.depth}")
    return BenchmarkInstance(
        id=f"{target.label}-d{target.depth:03d}-s{target.seed:x}",
        expression=expr, label=target.label, depth=target.depth,
        atom_trace=trace, seed=target.seed)


def sample_neither(target: SynthesisTarget,
                   jensen_cfg: JensenConfig | None = None) -> BenchmarkInstance:
    """Relaxed sampling plus the counterexample filter: accept only when both
    convexity and concavity are violated."""
    if target.label != "neither":
        raise ValueError("sample_neither requires label=neither")
    cfg = jensen_cfg or JensenConfig()
    rng = random.Random(target.seed)
    sampler = _Sampler(rng, target, relaxed=True)
    for _ in range(target.max_resample_attempts):
        if target.depth == 1:
            expr, trace = sampler._base().expr, ["affine"]
        else:
            try:
                expr, trace = sampler.grow()
            except SynthesisExhaustedError:
                continue
        if dcp.certified_label(expr).label != "uncertified":
            continue  # certified chains cannot violate both directions
        scan_seed = rng.getrandbits(32)
        cx = find_counterexample(expr, "convexity", cfg, seed=scan_seed)
        if cx is None:
            continue
        cc = find_counterexample(expr, "concavity", cfg, seed=scan_seed)
        if cc is None:
            continue
        if structural_depth(expr) != target.depth:
            continue
        return BenchmarkInstance(
            id=f"neither-d{target.depth:03d}-s{target.seed:x}",
            expression=expr, label="neither", depth=target.depth,
            atom_trace=trace, seed=target.seed,
            counterexamples={"convexity": cx, "concavity": cc})
    raise SynthesisExhaustedError(
        f"no dual counterexample after {target.max_resample_attempts} attempts "
        f"(depth={target.depth}, seed={target.seed})")


def generate_instance(target: SynthesisTarget) -> BenchmarkInstance:
    if target.label == "neither":
        return sample_neither(target)
    return sample_chain(target)


def instance_seed(base_seed: int, label: str, depth: int, index: int) -> int:
    """Stable per-instance seed derivation (independent of hash randomization)."""
    key = f"{base_seed}:{label}:{depth}:{index}".encode()
    return int.from_bytes(hashlib.blake2s(key, digest_size=8).digest(), "big")


def generate_batch(label: str, depth: int, count: int, base_seed: int,
                   strict_atoms: bool = False, sibling_max_depth: int = 2,
                   max_resample_attempts: int = 300) -> list[BenchmarkInstance]:
    """Independent instances; reproducible per (base_seed, label, depth, index)."""
    out = []
    for i in range(count):
        target = SynthesisTarget(
            label=label, depth=depth, seed=instance_seed(base_seed, label, depth, i),
            strict_atoms=strict_atoms, sibling_max_depth=sibling_max_depth,
            max_resample_attempts=max_resample_attempts)
        inst = generate_instance(target)
        inst.id = f"{label}-d{depth:03d}-{i:03d}"
        out.append(inst)
    return out
