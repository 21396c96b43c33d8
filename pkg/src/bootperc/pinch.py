"""Perturbed hyperplanes: height functions, pinches, and ranges.

A pinch is a hyperplane with normal u, offset by lambda and lifted by
compactly supported squared-cosine bumps at k scales; the bump for an
augmentation point z at level i has height 2^4 * gamma * Delta_i and
support radius (pi/64) * g_i.  Per-level separation of the augmentation
(pairwise distance > g_i / 2) guarantees at most one active bump per level
at any point.  The range is the open region strictly below the surface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError
from .families import UpdateFamily
from .lattice import LatticeWindow
from .renorm import ScaleSchedule
from .rng import stream

_HYPERPLANE_TOL = 1e-9
_SEPARATION_SLACK = 1e-9


def bump(x: float) -> float:
    """cos(x)^2 on |x| <= pi/2, zero outside; differentiable everywhere."""
    ax = abs(x)
    if ax >= math.pi / 2:
        return 0.0
    c = math.cos(ax)
    return c * c


def _bump_array(x: np.ndarray) -> np.ndarray:
    out = np.cos(np.minimum(np.abs(x), math.pi / 2)) ** 2
    out[np.abs(x) >= math.pi / 2] = 0.0
    return out


@dataclass(frozen=True)
class Pinch:
    """Surface {x + h(x) u : x in the hyperplane through the origin normal to u}."""

    u: "Direction"
    lam: float
    z_levels: tuple  # tuple of (m_i, d) float arrays, level i = 1..k
    schedule: ScaleSchedule
    gamma: float
    check_separation: bool = True

    def __post_init__(self):
        arrays = tuple(np.array(z, dtype=float).reshape(-1, self.u.d) for z in self.z_levels)
        object.__setattr__(self, "z_levels", arrays)
        if len(arrays) > self.schedule.k_max:
            raise ValidationError("more augmentation levels than the schedule provides")
        ua = np.array(self.u.vector)
        for i, z in enumerate(arrays, start=1):
            if z.size and np.max(np.abs(z @ ua)) > _HYPERPLANE_TOL:
                raise ValidationError(f"augmentation level {i} has points off the base hyperplane")
        if self.check_separation:
            bad = separation_violations(self)
            if bad:
                i, a, b, dist = bad[0]
                raise ValidationError(
                    f"augmentation level {i} not separated: points {a} and {b} at distance {dist:.6g} <= g_i/2"
                )

    @property
    def k(self) -> int:
        return len(self.z_levels)

    def project(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ua = np.array(self.u.vector)
        return y - (y @ ua)[..., None] * ua if y.ndim > 1 else y - (y @ ua) * ua

    def support_radius(self, i: int) -> float:
        return (math.pi / 64.0) * self.schedule.g(i)

    def to_json(self) -> dict:
        return {
            "u": self.u.to_json(),
            "lambda": self.lam,
            "gamma": self.gamma,
            "schedule": {
                "d": self.schedule.d,
                "p": self.schedule.p,
                "beta": self.schedule.beta,
                "k_max": self.schedule.k_max,
                "delta1_override": self.schedule.delta1_override,
            },
            "Z": [z.tolist() for z in self.z_levels],
        }

    @classmethod
    def from_json(cls, doc, gamma=None) -> "Pinch":
        from .renorm import build_schedule
        from .stability import Direction

        s = doc["schedule"]
        schedule = build_schedule(s["d"], s["p"], s["beta"], s["k_max"], s.get("delta1_override"))
        return cls(
            Direction.from_json(doc["u"]),
            doc["lambda"],
            tuple(np.array(z) for z in doc["Z"]),
            schedule,
            gamma if gamma is not None else doc["gamma"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def separation_violations(pinch: Pinch) -> list:
    """Pairs within one level closer than g_i / 2 (strict, with float slack)."""
    out = []
    for i, z in enumerate(pinch.z_levels, start=1):
        half_g = pinch.schedule.g(i) / 2
        for a in range(len(z)):
            for b in range(a + 1, len(z)):
                dist = float(np.linalg.norm(z[a] - z[b]))
                if not dist > half_g - _SEPARATION_SLACK:
                    out.append((i, z[a].copy(), z[b].copy(), dist))
    return out


def height(pinch: Pinch, x, j: int = 1) -> float:
    """Partial height h_j at the hyperplane point x (projected if off-plane):
    lambda plus the level >= j bump contributions."""
    if not 1 <= j <= pinch.k + 1:
        raise ParameterError(f"level j must lie in [1, {pinch.k + 1}]")
    x = pinch.project(np.asarray(x, dtype=float))
    h = pinch.lam
    for i in range(j, pinch.k + 1):
        z = pinch.z_levels[i - 1]
        if not len(z):
            continue
        g = pinch.schedule.g(i)
        dists = np.linalg.norm(z - x, axis=1)
        near = dists < pinch.support_radius(i)
        if near.any():
            h += 2**4 * pinch.gamma * pinch.schedule.delta(i) * float(
                _bump_array(2**5 * dists[near] / g).sum()
            )
    return h


def height_grid(pinch: Pinch, points: np.ndarray, j: int = 1) -> np.ndarray:
    """Vectorized h_j over an (N, d) array of hyperplane points."""
    pts = pinch.project(np.asarray(points, dtype=float))
    h = np.full(len(pts), pinch.lam)
    for i in range(j, pinch.k + 1):
        z = pinch.z_levels[i - 1]
        if not len(z):
            continue
        g = pinch.schedule.g(i)
        coef = 2**4 * pinch.gamma * pinch.schedule.delta(i)
        for zz in z:
            dists = np.linalg.norm(pts - zz, axis=1)
            mask = dists < pinch.support_radius(i)
            if mask.any():
                h[mask] += coef * _bump_array(2**5 * dists[mask] / g)
    return h


@dataclass(frozen=True)
class Range:
    """The open region strictly below the pinch surface."""

    pinch: Pinch

    def contains(self, y) -> bool:
        return in_range(self, y)

    def surplus(self, y) -> float:
        """Signed distance along u to the surface: positive strictly inside."""
        ua = np.array(self.pinch.u.vector)
        y = np.asarray(y, dtype=float)
        return height(self.pinch, y) - float(y @ ua)

    def membership_grid(self, points: np.ndarray) -> np.ndarray:
        ua = np.array(self.pinch.u.vector)
        pts = np.asarray(points, dtype=float)
        return (pts @ ua) < height_grid(self.pinch, pts)


def in_range(range_: Range, y) -> bool:
    """Strict membership <y, u> < h(proj y)."""
    return range_.surplus(y) > 0.0


@dataclass(frozen=True)
class HeightBoundsReport:
    samples: int
    violations: tuple
    separation_violations: tuple
    max_step_ratio: float      # |h_j - h_{j+1}| / (2^4 gamma Delta_j)
    max_total_ratio: float     # |h_j - lambda| / (2^5 gamma Delta_k)
    max_lipschitz_ratio: float # |h_j(x) - h_j(y)| / (2^10 gamma Delta_j^(1-beta) |x-y|)
    max_gradient_ratio: float

    @property
    def ok(self) -> bool:
        return not self.violations and not self.separation_violations


def _tangent_basis(u: np.ndarray) -> np.ndarray:
    d = len(u)
    basis = []
    for e in np.eye(d):
        v = e - (e @ u) * u
        for b in basis:
            v -= (v @ b) * b
        n = np.linalg.norm(v)
        if n > 1e-9:
            basis.append(v / n)
    return np.array(basis)


def verify_height_bounds(pinch: Pinch, samples: int, seed: int) -> HeightBoundsReport:
    """Sampled verification of the height bounds: per-level step size
    |h_j - h_{j+1}| <= 2^4 gamma Delta_j, total lift |h_j - lambda| <=
    2^5 gamma Delta_k, the Lipschitz bound 2^10 gamma Delta_j^(1-beta) on
    pair differences, and finite-difference gradient norms against the same
    constant.  Separation violations are reported first."""
    if samples < 1:
        raise ParameterError("samples must be at least 1")
    sep = tuple(separation_violations(pinch))
    if sep:
        return HeightBoundsReport(0, (), sep, math.nan, math.nan, math.nan, math.nan)
    rng = stream(seed, 0)
    d = pinch.u.d
    k = pinch.k
    ua = np.array(pinch.u.vector)
    basis = _tangent_basis(ua)
    if pinch.k == 0:
        return HeightBoundsReport(samples, (), (), 0.0, 0.0, 0.0, 0.0)
    center = np.mean([z.mean(axis=0) for z in pinch.z_levels if len(z)], axis=0) if any(
        len(z) for z in pinch.z_levels
    ) else np.zeros(d)
    radius = max(
        [np.linalg.norm(z - center, axis=1).max() + pinch.support_radius(i) for i, z in enumerate(pinch.z_levels, 1) if len(z)],
        default=1.0,
    ) * 1.5 + pinch.schedule.g(k)
    gamma = pinch.gamma
    beta = pinch.schedule.beta
    violations = []
    max_step = max_total = max_lip = max_grad = 0.0
    fd_step = min(pinch.support_radius(1), 1.0) * 1e-3
    gradient_budget = min(samples, 2000)
    for n in range(samples):
        coeffs = rng.normal(size=(2, len(basis)))
        coeffs /= np.maximum(np.linalg.norm(coeffs, axis=1, keepdims=True), 1e-12)
        radii = rng.uniform(0, radius, size=2)
        x = center + coeffs[0] @ basis * radii[0]
        y = center + coeffs[1] @ basis * radii[1]
        hx = [height(pinch, x, j) for j in range(1, k + 2)]
        hy = [height(pinch, y, j) for j in range(1, k + 2)]
        for j in range(1, k + 1):
            dj = pinch.schedule.delta(j)
            step_bound = 2**4 * gamma * dj
            total_bound = 2**5 * gamma * pinch.schedule.delta(k)
            lip = 2**10 * gamma * dj ** (1 - beta)
            step = abs(hx[j - 1] - hx[j])
            total = abs(hx[j - 1] - pinch.lam)
            max_step = max(max_step, step / step_bound)
            max_total = max(max_total, total / total_bound)
            if step > step_bound * (1 + 1e-12):
                violations.append(("step", j, x.copy(), step, step_bound))
            if total > total_bound * (1 + 1e-12):
                violations.append(("total", j, x.copy(), total, total_bound))
            sep_xy = float(np.linalg.norm(x - y))
            if sep_xy > 1e-12:
                diff = abs(hx[j - 1] - hy[j - 1])
                max_lip = max(max_lip, diff / (lip * sep_xy))
                if diff > lip * sep_xy * (1 + 1e-12):
                    violations.append(("lipschitz", j, (x.copy(), y.copy()), diff, lip * sep_xy))
        if n < gradient_budget:
            grad = np.zeros(len(basis))
            for bi, b in enumerate(basis):
                grad[bi] = (height(pinch, x + fd_step * b) - height(pinch, x - fd_step * b)) / (2 * fd_step)
            gnorm = float(np.linalg.norm(grad))
            lip1 = 2**10 * gamma * pinch.schedule.delta(1) ** (1 - beta)
            max_grad = max(max_grad, gnorm / lip1)
            if gnorm > lip1 + 1e-6:
                violations.append(("gradient", 1, x.copy(), gnorm, lip1))
    return HeightBoundsReport(samples, tuple(violations), (), max_step, max_total, max_lip, max_grad)


def verify_range_closed(range_: Range, window: LatticeWindow, family: UpdateFamily) -> list:
    """Exhaustive closedness check of the range's lattice restriction.

    Every lattice point of the window interior (margin ceil(R)) that lies
    outside the range is tested against every rule; returns the list of
    (site, rule_index) pairs where a rule translate lies entirely inside.
    Membership everywhere (pad included) comes from the exact surface
    predicate, so the scan is self-contained.
    """
    pinch = range_.pinch
    d = window.d
    if family.d != d or pinch.u.d != d:
        raise ParameterError("dimension mismatch")
    m = max(family.reach, 1)
    if any(s <= 2 * m for s in window.shape):
        raise ParameterError("window too small for the rule radius margin")
    lows = [lo - m for lo in window.lower]
    highs = [hi + m for hi in window.upper]
    axes = [np.arange(lo, hi) for lo, hi in zip(lows, highs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1).astype(float)
    member = range_.membership_grid(pts).reshape([len(a) for a in axes])
    shape = window.shape
    core = tuple(slice(m, m + s) for s in shape)
    inside = member[core]
    fired_by = []
    for ri, sites in enumerate(family.rule_arrays()):
        conj = None
        for s in sites:
            view = member[tuple(slice(m + int(s[a]), m + int(s[a]) + shape[a]) for a in range(d))]
            conj = view.copy() if conj is None else np.logical_and(conj, view, out=conj)
        viol = conj & ~inside
        for idx in np.argwhere(viol):
            site = tuple(int(i) + lo for i, lo in zip(idx, window.lower))
            fired_by.append((site, ri))
    fired_by.sort()
    return fired_by
