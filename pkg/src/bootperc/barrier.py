"""Barrier construction: pinches extended past bad clusters, per-cluster
covers, and the global closed cover.

A level-k cover of a bad cluster is the intersection, over the certified
directions, of ranges whose flat bases sit at offset 3d * Delta_k from the
cluster anchor; each pinch is extended downward level by level, adding one
bump over every bad cluster that meets the moving slab.  Every hypothesis
and post-condition the construction relies on is re-verified numerically at
run time; failures abort with a structured report naming the violated
condition rather than emitting an unverified barrier.  The asymptotic
constant-chain inequalities behind those conditions are evaluated and
recorded in the diagnostics but are not themselves fatal: at desk scale
several of them fail even for parameter sets whose constructions verify
cleanly end to end.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverAssertionFailure, HypothesisViolation, ParameterError, PostAssertionFailure
from .families import UpdateFamily
from .lattice import Configuration, LatticeWindow, closure
from .pinch import Pinch, Range, height, height_grid
from .renorm import (
    BAD,
    GOOD,
    INDET,
    BadCluster,
    ScaleSchedule,
    SparseHierarchy,
    WindowHierarchy,
    box_gap_sq,
    classify,
    cube_box,
    extract_clusters,
)
from .stability import StabilityCertificate


# ---------------------------------------------------------------------------
# slab tests


def slab_membership(pinch: Pinch, y, halfwidth: float) -> bool:
    """Exact inner test: |<y, u> - h(proj y)| <= halfwidth."""
    ua = np.array(pinch.u.vector)
    y = np.asarray(y, dtype=float)
    return abs(float(y @ ua) - height(pinch, y)) <= halfwidth


def _pinch_lipschitz_sum(pinch: Pinch) -> float:
    """Sound global Lipschitz bound for the height function: the sum of the
    per-level maximal bump slopes (no alignment assumptions)."""
    total = 0.0
    for i, z in enumerate(pinch.z_levels, start=1):
        if len(z):
            total += 2**9 * pinch.gamma * pinch.schedule.delta(i) ** (1 - pinch.schedule.beta)
    return total


def _box_u_interval(lo, hi, ua):
    m = 0.0
    M = 0.0
    for a in range(len(lo)):
        m += min(lo[a] * ua[a], hi[a] * ua[a])
        M += max(lo[a] * ua[a], hi[a] * ua[a])
    return m, M


def slab_box_outer(pinch: Pinch, lo, hi, halfwidth: float, samples_per_axis: int = 12) -> bool:
    """Conservative outer test: False only when the closed box provably
    misses the slab.  The surface height over the box's shadow is bracketed
    by sampled evaluations padded with the global Lipschitz bound."""
    ua = np.array(pinch.u.vector)
    m_u, M_u = _box_u_interval(lo, hi, ua)
    d = len(lo)
    axes = [np.linspace(lo[a], hi[a], samples_per_axis) for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    h = height_grid(pinch, pts)
    spacing = max((hi[a] - lo[a]) / (samples_per_axis - 1) for a in range(d))
    pad = _pinch_lipschitz_sum(pinch) * spacing * math.sqrt(d) / 2
    h_lo = float(h.min()) - pad
    h_hi = float(h.max()) + pad
    # heights never drop below the base and never exceed base + all bumps
    h_lo = max(h_lo, pinch.lam)
    h_hi = min(
        h_hi,
        pinch.lam
        + sum(
            2**4 * pinch.gamma * pinch.schedule.delta(i)
            for i, z in enumerate(pinch.z_levels, start=1)
            if len(z)
        ),
    )
    return not (M_u < h_lo - halfwidth or m_u > h_hi + halfwidth)


def _lex_lattice_point_in_flat_slab(lo, hi, ua, lo_dot, hi_dot):
    """Lexicographically smallest integer point of [lo, hi) with
    lo_dot <= <y, ua> <= hi_dot, or None.  Recursive per-axis search with
    interval pruning; efficient even for very large cubes."""
    d = len(lo)

    def rest_range(axis):
        m = M = 0.0
        for a in range(axis, d):
            cands = (lo[a] * ua[a], (hi[a] - 1) * ua[a])
            m += min(cands)
            M += max(cands)
        return m, M

    point = [0] * d

    def rec(axis, lo_d, hi_d):
        if axis == d - 1:
            u = ua[axis]
            if abs(u) < 1e-15:
                if lo_d <= 0.0 <= hi_d:
                    point[axis] = lo[axis]
                    return True
                return False
            a, b = lo_d / u, hi_d / u
            if a > b:
                a, b = b, a
            start = max(lo[axis], math.ceil(a - 1e-9))
            end = min(hi[axis] - 1, math.floor(b + 1e-9))
            if start > end:
                return False
            point[axis] = start
            return True
        for x in range(lo[axis], hi[axis]):
            nlo, nhi = lo_d - x * ua[axis], hi_d - x * ua[axis]
            m, M = rest_range(axis + 1)
            if M < nlo or m > nhi:
                continue
            point[axis] = x
            if rec(axis + 1, nlo, nhi):
                return True
        return False

    return tuple(point) if rec(0, lo_dot, hi_dot) else None


def _cluster_pick_point(pinch: Pinch, members, delta: int, halfwidth: float):
    """Point of the cluster inside the slab: the lexicographically smallest
    lattice point passing the exact membership test, else the first
    member-cube center that passes, else None.

    Returns (point, used_center_fallback).
    """
    ua = np.array(pinch.u.vector)
    for m in sorted(members):
        lo, hi = cube_box(m, delta)
        if delta ** len(lo) <= 1_000_000:
            # exact: enumerate the cube's lattice points
            axes = [np.arange(lo[a], hi[a]) for a in range(len(lo))]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([g.ravel() for g in mesh], axis=-1).astype(float)
            ok = np.abs(pts @ ua - height_grid(pinch, pts)) <= halfwidth
            if ok.any():
                hits = pts[ok]
                order = np.lexsort(hits.T[::-1])
                return tuple(int(c) for c in hits[order[0]]), False
        else:
            # large cube: interval search against the flat base, then the
            # exact membership test (bumps only raise the surface)
            y = _lex_lattice_point_in_flat_slab(
                lo, hi, ua, pinch.lam - halfwidth, pinch.lam + halfwidth
            )
            if y is not None and slab_membership(pinch, y, halfwidth):
                return y, False
    for m in sorted(members):
        lo, hi = cube_box(m, delta)
        center = tuple((a + b) / 2 for a, b in zip(lo, hi))
        if slab_membership(pinch, center, halfwidth):
            return center, True
    return None, False


# ---------------------------------------------------------------------------
# pinch construction


def _chain_inequalities(schedule: ScaleSchedule, gamma: float, i: int) -> list:
    """Asymptotic constant-chain inequalities behind the construction,
    evaluated for the record (not fatal; the conclusions they support are
    verified directly)."""
    out = []
    if i < schedule.k_max:
        d_next = schedule.delta(i + 1)
        out.append((f"4*gamma*Delta_{i} <= Delta_{i + 1}", 4 * gamma * schedule.delta(i), d_next))
        out.append(((f"(2^4+4)*gamma*Delta_{i} <= Delta_{i + 1}"), 20 * gamma * schedule.delta(i), d_next))
    out.append((f"2*sqrt(d)*Delta_{i} <= g_{i}", 2 * math.sqrt(schedule.d) * schedule.delta(i), schedule.g(i)))
    return [(name, lhs, rhs, lhs <= rhs) for name, lhs, rhs in out]


def extend_pinch(pinch: Pinch, i: int, hierarchy) -> tuple:
    """One inductive extension step: add level-i bumps over every bad
    level-i cluster meeting the slab of halfwidth 4 * gamma * Delta_i.

    Hypothesis (checked): no bad (i+1)-cube meets the slab of halfwidth
    Delta_{i+1}.  Post-conditions (checked): the new point set is
    i-separated, and no bad (i)-cube meets the new surface's slab.

    Returns (z_points, extended_pinch, diagnostics).
    """
    schedule = pinch.schedule
    gamma = pinch.gamma
    if not 1 <= i <= schedule.k_max:
        raise ParameterError("level i out of schedule range")
    if len(pinch.z_levels) >= i and any(len(z) for z in pinch.z_levels[: i]):
        raise ParameterError("levels at or below i must be empty before extension")
    diagnostics = {
        "level": i,
        "chain_inequalities": _chain_inequalities(schedule, gamma, i),
        "clusters_in_slab": 0,
        "center_fallbacks": 0,
        "outer_only_clusters": 0,
    }
    # hypothesis: bad (i+1)-cubes clear of Sigma + L^{(i+1)}
    if i + 1 <= schedule.k_max:
        for idx in sorted(hierarchy.bad_indices(i + 1)):
            lo, hi = cube_box(idx, schedule.delta(i + 1))
            if slab_box_outer(pinch, lo, hi, schedule.delta(i + 1)):
                raise HypothesisViolation(
                    f"bad level-{i + 1} cube {idx} meets the base slab",
                    report={"level": i + 1, "cube": idx, "halfwidth": schedule.delta(i + 1)},
                )
    halfwidth = 4 * gamma * schedule.delta(i)
    delta = schedule.delta(i)
    chosen = []
    for members in sorted(hierarchy.clusters(i)):
        point, fallback = _cluster_pick_point(pinch, members, delta, halfwidth)
        if point is None:
            if any(slab_box_outer(pinch, *cube_box(m, delta), halfwidth) for m in members):
                diagnostics["outer_only_clusters"] += 1
            continue
        diagnostics["clusters_in_slab"] += 1
        diagnostics["center_fallbacks"] += int(fallback)
        chosen.append(np.asarray(point, dtype=float))
    ua = np.array(pinch.u.vector)
    z_i = np.array([y - (y @ ua) * ua for y in chosen]).reshape(-1, pinch.u.d)
    # i-separation post-assertion
    for a in range(len(z_i)):
        for b in range(a + 1, len(z_i)):
            dist = float(np.linalg.norm(z_i[a] - z_i[b]))
            if not dist > schedule.g(i) / 2:
                raise PostAssertionFailure(
                    f"chosen level-{i} points at distance {dist:.6g} <= g_{i}/2",
                    report={"level": i, "points": (z_i[a].tolist(), z_i[b].tolist()), "distance": dist},
                )
    levels = list(pinch.z_levels)
    while len(levels) < i:
        levels.insert(0, np.zeros((0, pinch.u.d)))
    levels[i - 1] = z_i
    extended = Pinch(pinch.u, pinch.lam, tuple(levels), schedule, gamma)
    # goodness post-assertion against the conservative outer test
    for idx in sorted(hierarchy.bad_indices(i)):
        lo, hi = cube_box(idx, delta)
        if slab_box_outer(extended, lo, hi, halfwidth):
            raise PostAssertionFailure(
                f"bad level-{i} cube {idx} still meets the extended slab",
                report={"level": i, "cube": idx, "halfwidth": halfwidth},
            )
    return z_i, extended, diagnostics


def construct_pinch(u, lam: float, hierarchy, k: int, gamma: float) -> tuple:
    """Build a level-k pinch with base offset ``lam`` whose slabs avoid all
    bad cubes, by repeated extension from level k down to level 1.

    Hypothesis (checked): no bad (k+1)-cube meets the flat base's slab of
    halfwidth Delta_{k+1}.  Final assertion: for each level i, no bad
    (i)-cube meets the final surface's slab of halfwidth 3 * gamma *
    Delta_i.

    Returns (pinch, diagnostics list).
    """
    schedule = hierarchy.schedule
    if k < 0 or k > schedule.k_max:
        raise ParameterError("pinch level out of schedule range")
    flat = Pinch(u, lam, tuple(np.zeros((0, u.d)) for _ in range(k)), schedule, gamma)
    diag = []
    if k + 1 <= schedule.k_max:
        for idx in sorted(hierarchy.bad_indices(k + 1)):
            lo, hi = cube_box(idx, schedule.delta(k + 1))
            if slab_box_outer(flat, lo, hi, schedule.delta(k + 1)):
                raise HypothesisViolation(
                    f"bad level-{k + 1} cube {idx} meets the base slab",
                    report={"level": k + 1, "cube": idx},
                )
    if k == 0:
        return flat, diag
    pinch = flat
    for i in range(k, 0, -1):
        _, pinch, d_i = extend_pinch(pinch, i, hierarchy)
        diag.append(d_i)
    for i in range(1, k + 1):
        hw = 3 * gamma * schedule.delta(i)
        for idx in sorted(hierarchy.bad_indices(i)):
            lo, hi = cube_box(idx, schedule.delta(i))
            if slab_box_outer(pinch, lo, hi, hw):
                raise PostAssertionFailure(
                    f"final surface: bad level-{i} cube {idx} within 3*gamma*Delta_{i}",
                    report={"level": i, "cube": idx, "halfwidth": hw},
                )
    return pinch, diag


# ---------------------------------------------------------------------------
# covers


@dataclass(frozen=True)
class Cover:
    """Intersection of ranges around one bad cluster."""

    level: int
    cluster: BadCluster
    anchor: tuple
    ranges: tuple
    gamma: float
    schedule: ScaleSchedule
    clearance: tuple = ()
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def radius_bound(self) -> float:
        return self.gamma * self.schedule.delta(self.level)

    def contains(self, y) -> bool:
        return all(r.contains(y) for r in self.ranges)

    def membership_grid(self, pts: np.ndarray) -> np.ndarray:
        out = None
        for r in self.ranges:
            m = r.membership_grid(pts)
            out = m if out is None else (out & m)
        return out

    def bounding_box(self) -> tuple:
        rad = math.ceil(self.radius_bound) + 1
        lo = tuple(int(a) - rad for a in self.anchor)
        hi = tuple(int(a) + rad + 1 for a in self.anchor)
        return lo, hi

    def rasterize(self, clip: LatticeWindow | None = None) -> tuple:
        """(lower_corner, bool mask over the bounding box lattice)."""
        lo, hi = self.bounding_box()
        if clip is not None:
            lo = tuple(max(a, b) for a, b in zip(lo, clip.lower))
            hi = tuple(min(a, b) for a, b in zip(hi, clip.upper))
        if any(a >= b for a, b in zip(lo, hi)):
            return lo, np.zeros((0,) * len(lo), dtype=bool)
        axes = [np.arange(a, b) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1).astype(float)
        mask = self.membership_grid(pts).reshape([len(ax) for ax in axes])
        return lo, mask

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "members": [list(m) for m in self.cluster.members],
            "anchor": list(self.anchor),
            "gamma": self.gamma,
            "pinches": [r.pinch.to_json() for r in self.ranges],
            "clearance": [list(c) for c in self.clearance],
        }


def _max_surface_offset(range_: Range) -> float:
    p = range_.pinch
    return p.lam + sum(
        2**4 * p.gamma * p.schedule.delta(i) for i, z in enumerate(p.z_levels, start=1) if len(z)
    )


def _polytope_circumradius_about(anchor, dirs, offsets):
    d = len(anchor)
    best = 0.0
    for idx in itertools.combinations(range(len(dirs)), d):
        A = dirs[list(idx)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, offsets[list(idx)])
        if np.all(dirs @ x <= offsets + 1e-9 * np.maximum(1.0, np.abs(offsets))):
            best = max(best, float(np.linalg.norm(x)))
    return best


def _cube_boundary_distance(cover: Cover, lo, hi) -> float:
    """Sound lower bound on the distance from the closed box to the cover's
    boundary surface, via per-direction vertical gaps scaled by the surface
    Lipschitz bound."""
    best = math.inf
    inside_all = True
    outside_some = -math.inf
    per_dir = []
    for r in cover.ranges:
        p = r.pinch
        ua = np.array(p.u.vector)
        m_u, M_u = _box_u_interval(lo, hi, ua)
        if all(not len(z) for z in p.z_levels):
            h = p.lam
            gap_below = h - M_u   # positive: box fully below the surface
            gap_above = m_u - h   # positive: box fully above
            lip = 0.0
        else:
            axes = [np.linspace(lo[a], hi[a], 8) for a in range(len(lo))]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([g.ravel() for g in mesh], axis=-1)
            hvals = height_grid(p, pts)
            lip = _pinch_lipschitz_sum(p)
            spacing = max((hi[a] - lo[a]) / 7 for a in range(len(lo)))
            pad = lip * spacing * math.sqrt(len(lo)) / 2
            gap_below = float(hvals.min()) - pad - M_u
            gap_above = m_u - (float(hvals.max()) + pad)
        scale = math.sqrt(1 + lip * lip)
        if gap_below > 0:
            per_dir.append(gap_below / scale)
        elif gap_above > 0:
            inside_all = False
            outside_some = max(outside_some, gap_above / scale)
            per_dir.append(0.0)
        else:
            inside_all = False
            per_dir.append(0.0)
    if inside_all:
        return min(per_dir)
    if outside_some > 0:
        return outside_some
    return 0.0


def build_cover(cluster: BadCluster, hierarchy, sites, cert: StabilityCertificate) -> Cover:
    """Level-k cover of a cluster: reclassify the sites restricted to the
    ball of radius 2 * gamma * Delta_k about the anchor, build one pinch per
    certified direction at base offset 3d * Delta_k, intersect the ranges,
    and verify the containments and the boundary-clearance property."""
    schedule = hierarchy.schedule
    k = cluster.level
    gamma = cert.gamma
    d = schedule.d
    dk = schedule.delta(k)
    x_q = np.asarray(cluster.anchor, dtype=float)
    ball = 2 * gamma * dk
    local_sites = [s for s in sites if math.dist(s, cluster.anchor) <= ball]
    local = SparseHierarchy.from_sites(local_sites, schedule, min(k + 1, schedule.k_max))
    ranges = []
    diag_all = {"per_direction": [], "local_sites": len(local_sites)}
    for u in cert.directions:
        lam = float(x_q @ np.array(u.vector)) + 3 * d * dk
        pinch, diag = construct_pinch(u, lam, local, k - 1, gamma)
        ranges.append(Range(pinch))
        diag_all["per_direction"].append({"u": u.to_json(), "levels": diag})
    cover = Cover(k, cluster, cluster.anchor, tuple(ranges), gamma, schedule, (), diag_all)

    # containment: cluster inside the cover (every lattice point of members)
    for m in cluster.members:
        lo, hi = cube_box(m, dk)
        if dk ** d <= 1_000_000:
            axes = [np.arange(lo[a], hi[a]) for a in range(d)]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([g.ravel() for g in mesh], axis=-1).astype(float)
            if not cover.membership_grid(pts).all():
                raise CoverAssertionFailure(
                    f"cluster cube {m} not contained in its cover",
                    report={"cube": m, "level": k},
                )
        else:
            corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
            for r in ranges:
                ua = np.array(r.pinch.u.vector)
                if not np.all(corners @ ua < r.pinch.lam):
                    raise CoverAssertionFailure(
                        f"cluster cube {m} not contained below the flat base",
                        report={"cube": m, "level": k},
                    )

    # containment: cover inside the gamma-ball about the anchor
    dirs = np.array([r.pinch.u.vector for r in ranges])
    offsets = np.array([_max_surface_offset(r) - float(x_q @ np.array(r.pinch.u.vector)) for r in ranges])
    circ = _polytope_circumradius_about(cluster.anchor, dirs, offsets)
    if circ > gamma * dk + 1e-9:
        raise CoverAssertionFailure(
            f"cover outer polytope circumradius {circ:.6g} exceeds gamma*Delta_k = {gamma * dk:.6g}",
            report={"circumradius": circ, "bound": gamma * dk},
        )

    # boundary clearance for every bad cube of every level (global states)
    clearance = []
    member_set = set(cluster.members)
    for i in range(1, k + 1):
        di = schedule.delta(i)
        need = 2 * gamma * di
        for idx in sorted(hierarchy.bad_indices(i)):
            if i == k and idx in member_set:
                continue
            lo, hi = cube_box(idx, di)
            if box_gap_sq(lo, hi, tuple(x_q), tuple(x_q)) > (gamma * dk + need + math.sqrt(d) * di) ** 2:
                continue  # provably far from the whole cover
            dist_lb = _cube_boundary_distance(cover, lo, hi)
            clearance.append((i, idx, dist_lb, need))
            if dist_lb < need:
                raise CoverAssertionFailure(
                    f"bad level-{i} cube {idx} within {dist_lb:.6g} < 2*gamma*Delta_{i} of the cover boundary",
                    report={"level": i, "cube": idx, "distance": dist_lb, "required": need},
                )
    return Cover(k, cluster, cluster.anchor, tuple(ranges), gamma, schedule, tuple(clearance), diag_all)


def verify_cover_closed(cover: Cover, window: LatticeWindow, family: UpdateFamily) -> list:
    """Exhaustive closedness scan of the cover's lattice set within the window."""
    m = max(family.reach, 1)
    lo = tuple(l - m for l in window.lower)
    hi = tuple(h + m for h in window.upper)
    axes = [np.arange(a, b) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1).astype(float)
    member = cover.membership_grid(pts).reshape([len(a) for a in axes])
    return _scan_mask_closed(member, m, window, family)


def _scan_mask_closed(member: np.ndarray, m: int, window: LatticeWindow, family: UpdateFamily) -> list:
    shape = window.shape
    core = tuple(slice(m, m + s) for s in shape)
    inside = member[core]
    out = []
    for ri, sites in enumerate(family.rule_arrays()):
        conj = None
        for s in sites:
            view = member[tuple(slice(m + int(s[a]), m + int(s[a]) + shape[a]) for a in range(window.d))]
            conj = view.copy() if conj is None else np.logical_and(conj, view, out=conj)
        viol = conj & ~inside
        for idx in np.argwhere(viol):
            out.append((tuple(int(i) + lo for i, lo in zip(idx, window.lower)), ri))
    out.sort()
    return out


def check_pairwise(cover_a: Cover, cover_b: Cover, radius: float) -> dict:
    """Classify a cover pair as nested, strongly disjoint (lattice set
    distance > 2R), or a violation with witness points."""
    if cover_a is cover_b:
        return {"relation": "nested", "inner": "a", "certified_by": "identity"}
    gap_lb = (
        math.dist(cover_a.anchor, cover_b.anchor)
        - cover_a.radius_bound
        - cover_b.radius_bound
    )
    if gap_lb > 2 * radius:
        return {"relation": "strongly_disjoint", "distance_lb": gap_lb, "certified_by": "anchor-geometry"}
    lo_a, mask_a = cover_a.rasterize()
    lo_b, mask_b = cover_b.rasterize()
    cells_a = np.argwhere(mask_a) + np.array(lo_a)
    cells_b = np.argwhere(mask_b) + np.array(lo_b)
    if len(cells_a) == 0 or len(cells_b) == 0:
        return {"relation": "strongly_disjoint", "distance_lb": math.inf, "certified_by": "empty-raster"}
    small, big, tag = (cells_a, cover_b, "a_in_b") if len(cells_a) <= len(cells_b) else (cells_b, cover_a, "b_in_a")
    if big.membership_grid(small.astype(float)).all():
        return {"relation": "nested", "inner": tag[0], "certified_by": "raster"}
    from scipy.spatial import cKDTree

    tree = cKDTree(cells_b)
    dmin, j = tree.query(cells_a, k=1)
    gap = float(dmin.min())
    if gap > 2 * radius:
        return {"relation": "strongly_disjoint", "distance_lb": gap, "certified_by": "raster"}
    i = int(np.argmin(dmin))
    return {
        "relation": "violation",
        "distance": gap,
        "witness": (tuple(map(int, cells_a[i])), tuple(map(int, cells_b[int(j[i])]))),
    }


@dataclass
class GlobalCover:
    window: LatticeWindow
    schedule: ScaleSchedule
    k_max: int
    covers: list
    failures: list
    pairwise: list
    closedness_violations: list
    uncovered_sites: list
    closure_contained: bool | None
    origin_in_cover: bool | None
    origin_cubes_good: bool

    @property
    def ok(self) -> bool:
        return (
            not self.failures
            and not self.closedness_violations
            and not self.uncovered_sites
            and all(p["relation"] in ("nested", "strongly_disjoint") for p in self.pairwise)
            and (self.closure_contained is not False)
        )

    def to_json(self) -> dict:
        return {
            "window": {"lower": list(self.window.lower), "upper": list(self.window.upper)},
            "k_max": self.k_max,
            "covers": [c.to_json() for c in self.covers],
            "failures": _jsonable(self.failures),
            "pairwise": _jsonable(self.pairwise),
            "closedness_violations": [[list(site), ri] for site, ri in self.closedness_violations],
            "uncovered_sites": [list(s) for s in self.uncovered_sites],
            "closure_contained": self.closure_contained,
            "origin_in_cover": self.origin_in_cover,
            "origin_cubes_good": self.origin_cubes_good,
            "ok": self.ok,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def build_global_cover(
    config: Configuration,
    schedule: ScaleSchedule,
    cert: StabilityCertificate,
    k_max: int,
    family: UpdateFamily | None = None,
) -> GlobalCover:
    """Classify, extract clusters for k = 1..k_max, build and verify all
    covers, check pairwise relations and global closedness, and compare the
    union against the closure oracle.  All failures are aggregated into the
    returned diagnostics; nothing is silent."""
    if schedule.k_max < k_max + 1:
        raise ParameterError("schedule must be built with k_max one level above the cover depth")
    hier = classify(config, schedule)
    sites = config.sites()
    covers: list[Cover] = []
    failures = []
    for k in range(1, k_max + 1):
        for cluster in extract_clusters(hier, k):
            adapter = _WindowBadAdapter(hier)
            try:
                covers.append(build_cover(cluster, adapter, sites, cert))
            except (HypothesisViolation, PostAssertionFailure, CoverAssertionFailure) as e:
                failures.append(
                    {
                        "level": k,
                        "cluster": [list(m) for m in cluster.members],
                        "error": type(e).__name__,
                        "message": str(e),
                        "report": _jsonable(e.report),
                    }
                )
    pairwise = []
    radius = family.radius if family is not None else 0.0
    for a, b in itertools.combinations(range(len(covers)), 2):
        res = check_pairwise(covers[a], covers[b], radius)
        res["pair"] = (a, b)
        pairwise.append(res)

    window = config.window
    t_mask = np.zeros(window.shape, dtype=bool)
    for c in covers:
        lo, mask = c.rasterize(clip=window)
        if mask.size == 0:
            continue
        sl = tuple(slice(l - wl, l - wl + s) for l, wl, s in zip(lo, window.lower, mask.shape))
        t_mask[sl] |= mask

    closedness = []
    closure_contained = None
    if family is not None:
        m = max(family.reach, 1)
        padded = np.pad(t_mask, m, constant_values=False)
        closedness = _scan_mask_closed(padded, m, window, family)
        closed_cfg = closure(config, family)
        closure_contained = bool(np.all(t_mask >= closed_cfg.infected))

    uncovered = [s for s in sites if not t_mask[window.index(s)]]

    origin_good = True
    origin_in_cover = None
    if window.contains((0,) * window.d):
        for k in range(1, schedule.k_max + 1):
            idx = tuple(0 // schedule.delta(k) for _ in range(window.d))
            lvl = hier.level(k)
            if lvl.in_range(idx) and lvl.state(idx) == BAD:
                origin_good = False
        origin_in_cover = bool(t_mask[window.index((0,) * window.d)])

    return GlobalCover(
        window,
        schedule,
        k_max,
        covers,
        failures,
        pairwise,
        closedness,
        uncovered,
        closure_contained,
        origin_in_cover,
        origin_good,
    )


class _WindowBadAdapter:
    """Expose a WindowHierarchy's bad sets through the sparse interface used
    by the cover builder."""

    def __init__(self, hier: WindowHierarchy):
        self._hier = hier
        self.schedule = hier.schedule

    def bad_indices(self, k: int) -> set:
        return set(map(tuple, self._hier.level(k).bad_indices()))

    def clusters(self, k: int):
        from .renorm import _maximal_adjacent_cliques

        return _maximal_adjacent_cliques(self.bad_indices(k))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj
