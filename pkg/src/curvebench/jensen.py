"""Randomized and gridded convexity testing via the interpolation inequality.

For sampled triples (x, y, lam) the scanner compares f(lam*x + (1-lam)*y)
against lam*f(x) + (1-lam)*f(y). Exceeding the right side breaks convexity;
falling below breaks concavity. Comparisons use a relative margin because deep
compositions reach extreme magnitudes. Non-finite evaluations are skipped, not
errors: deep exp-chains legitimately overflow inside the sampling window.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamplesError
from .expr import Expr, evaluate_grid

__all__ = [
    "JensenConfig", "JensenReport", "Counterexample",
    "jensen_scan", "find_counterexample", "numeric_classify", "verify_counterexample",
]

_RECORD_CAP = 64  # violations stored per direction; totals are still counted


@dataclass(frozen=True)
class JensenConfig:
    sample_count: int = 4096
    window: tuple[float, float] = (-3.0, 3.0)
    grid_points: int = 33  # fixed grid mixed into the x/y draws
    lambda_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    violation_margin: float = 1e-9  # relative
    min_valid_samples: int = 100

    def __post_init__(self):
        if not (self.sample_count >= self.min_valid_samples >= 100):
            raise ValueError("need sample_count >= min_valid_samples >= 100")


@dataclass(frozen=True)
class Counterexample:
    x: float
    y: float
    lam: float
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        """Relative violation size, positive regardless of direction."""
        return abs(self.lhs - self.rhs) / (1.0 + abs(self.rhs))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "lam": self.lam, "lhs": self.lhs, "rhs": self.rhs}

    @classmethod
    def from_dict(cls, d: dict) -> "Counterexample":
        return cls(d["x"], d["y"], d["lam"], d["lhs"], d["rhs"])


@dataclass
class JensenReport:
    convex_violations: list[Counterexample] = field(default_factory=list)
    concave_violations: list[Counterexample] = field(default_factory=list)
    n_convex_violations: int = 0
    n_concave_violations: int = 0
    valid_samples: int = 0
    skipped_nonfinite: int = 0


def _sample_triples(cfg: JensenConfig, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    n = cfg.sample_count
    lo, hi = cfg.window
    grid = np.linspace(lo, hi, cfg.grid_points)

    xs = rng.uniform(lo, hi, n)
    ys = rng.uniform(lo, hi, n)
    # mix the fixed grid into half of each coordinate
    take = rng.random(n) < 0.5
    xs[take] = rng.choice(grid, take.sum())
    take = rng.random(n) < 0.5
    ys[take] = rng.choice(grid, take.sum())

    lams = rng.uniform(0.0, 1.0, n)
    fixed = rng.random(n) < 0.5
    lams[fixed] = rng.choice(np.asarray(cfg.lambda_grid), fixed.sum())
    return xs, ys, lams


def _scan_arrays(e: Expr, xs, ys, lams, margin: float):
    n = len(xs)
    mids = lams * xs + (1.0 - lams) * ys
    vals = evaluate_grid(e, np.concatenate([xs, ys, mids]))
    fx, fy, fmid = vals[:n], vals[n:2 * n], vals[2 * n:]
    valid = np.isfinite(fx) & np.isfinite(fy) & np.isfinite(fmid)
    rhs = lams * fx + (1.0 - lams) * fy
    tol = margin * (1.0 + np.abs(rhs))
    with np.errstate(invalid="ignore"):
        breaks_convex = valid & (fmid > rhs + tol)
        breaks_concave = valid & (fmid < rhs - tol)
    return fmid, rhs, valid, breaks_convex, breaks_concave


def jensen_scan(e: Expr, cfg: JensenConfig | None = None, seed: int = 0) -> JensenReport:
    """Scan sampled triples; reports violations in both directions.

    Raises InsufficientSamplesError when the expression overflows on too much
    of the sampling window to collect ``min_valid_samples`` finite triples.
    """
    cfg = cfg or JensenConfig()
    xs, ys, lams = _sample_triples(cfg, seed)
    fmid, rhs, valid, breaks_convex, breaks_concave = _scan_arrays(
        e, xs, ys, lams, cfg.violation_margin)

    report = JensenReport(
        n_convex_violations=int(breaks_convex.sum()),
        n_concave_violations=int(breaks_concave.sum()),
        valid_samples=int(valid.sum()),
        skipped_nonfinite=int(len(xs) - valid.sum()),
    )
    if report.valid_samples < cfg.min_valid_samples:
        raise InsufficientSamplesError(
            f"only {report.valid_samples} finite triples "
            f"(need {cfg.min_valid_samples}); expression overflows the window")
    for mask, bucket in ((breaks_convex, report.convex_violations),
                         (breaks_concave, report.concave_violations)):
        for i in np.nonzero(mask)[0][:_RECORD_CAP]:
            bucket.append(Counterexample(float(xs[i]), float(ys[i]), float(lams[i]),
                                         float(fmid[i]), float(rhs[i])))
    return report


def verify_counterexample(e: Expr, ce: Counterexample, direction: str, margin: float = 1e-9) -> bool:
    """Re-evaluate a stored triple and confirm it still violates with margin."""
    pts = np.array([ce.x, ce.y, ce.lam * ce.x + (1.0 - ce.lam) * ce.y])
    fx, fy, fmid = evaluate_grid(e, pts)
    if not (np.isfinite(fx) and np.isfinite(fy) and np.isfinite(fmid)):
        return False
    rhs = ce.lam * fx + (1.0 - ce.lam) * fy
    tol = margin * (1.0 + abs(rhs))
    if direction == "convexity":
        return fmid > rhs + tol
    return fmid < rhs - tol


def _refine_lambda(e: Expr, x: float, y: float, direction: str) -> Counterexample | None:
    """Maximize the violation margin over lam for a fixed (x, y) pair."""
    sign = 1.0 if direction == "convexity" else -1.0
    lams = np.linspace(0.02, 0.98, 49)
    for _ in range(3):
        mids = lams * x + (1 - lams) * y
        vals = evaluate_grid(e, np.concatenate([[x, y], mids]))
        fx, fy, fmid = vals[0], vals[1], vals[2:]
        rhs = lams * fx + (1 - lams) * fy
        with np.errstate(invalid="ignore"):
            gain = sign * (fmid - rhs) / (1.0 + np.abs(rhs))
        gain = np.where(np.isfinite(gain), gain, -np.inf)
        best = int(np.argmax(gain))
        if not np.isfinite(gain[best]) or gain[best] <= 0:
            return None
        width = (lams[-1] - lams[0]) / 8
        center = lams[best]
        lams = np.linspace(max(0.001, center - width), min(0.999, center + width), 25)
        result = Counterexample(x, y, float(center), float(fmid[best]), float(rhs[best]))
    return result


def find_counterexample(e: Expr, direction: str, cfg: JensenConfig | None = None,
                        seed: int = 0) -> Counterexample | None:
    """First violating triple in the given direction, with the interpolation
    weight refined locally to maximize the margin. None when the scan exhausts
    (absence is a value, not an error)."""
    if direction not in ("convexity", "concavity"):
        raise ValueError(f"direction must be convexity or concavity, got {direction!r}")
    cfg = cfg or JensenConfig()
    try:
        report = jensen_scan(e, cfg, seed)
    except InsufficientSamplesError:
        return None
    found = report.convex_violations if direction == "convexity" else report.concave_violations
    if not found:
        return None
    first = found[0]
    refined = _refine_lambda(e, first.x, first.y, direction)
    if refined is not None and verify_counterexample(e, refined, direction, cfg.violation_margin) \
            and refined.margin >= first.margin:
        return refined
    return first


def numeric_classify(e: Expr, cfg: JensenConfig | None = None) -> str:
    """Brute-force label for shallow expressions via a dense triple grid.

    Returns convex | concave | affine | neither | inconclusive. Intended as an
    independent oracle for depth <= 4 where dense scanning is cheap.
    """
    cfg = cfg or JensenConfig()
    lo, hi = cfg.window
    pts = np.linspace(lo, hi, 41)
    xi, yi = np.triu_indices(len(pts), k=1)
    base_x, base_y = pts[xi], pts[yi]
    lams = np.asarray(cfg.lambda_grid)
    xs = np.repeat(base_x, len(lams))
    ys = np.repeat(base_y, len(lams))
    ll = np.tile(lams, len(base_x))

    fmid, rhs, valid, breaks_convex, breaks_concave = _scan_arrays(
        e, xs, ys, ll, cfg.violation_margin)
    if valid.sum() < 0.5 * len(xs):
        return "inconclusive"
    has_cx = bool(breaks_convex.any())
    has_cc = bool(breaks_concave.any())
    if has_cx and has_cc:
        return "neither"
    if has_cx:
        return "concave"
    if has_cc:
        return "convex"
    # no violations either way: confirm flat second differences
    h = pts[1] - pts[0]
    vals = evaluate_grid(e, pts)
    finite = np.isfinite(vals)
    if finite.sum() < 3:
        return "inconclusive"
    d2 = vals[2:] - 2 * vals[1:-1] + vals[:-2]
    d2 = d2[np.isfinite(d2)]
    scale = max(1.0, float(np.nanmax(np.abs(vals[finite]))))
    if len(d2) and np.max(np.abs(d2)) <= 1e-7 * scale:
        return "affine"
    return "inconclusive"
