"""Multi-scale cube hierarchy: scale schedules, good/bad classification,
clusters, influence radii, and Monte Carlo verification of the level-wise
bad-cube probability bound.

Cubes at level k are the half-open boxes x + [0, Delta_k)^d anchored on the
global grid (Delta_k Z)^d; a level-1 cube is bad when it meets the infected
set, and a level-k cube is bad when two non-adjacent bad (k-1)-cubes both
sit within distance g_{k-1} of it.  Distances are continuous Euclidean set
distances between closed cubes; "adjacent" means set distance zero, corner
contact included.

Window classification marks a cube indeterminate when deciding it would
need cube states outside the window; indeterminacy is purely geometric, so
classification of the same window is reproducible and monotone in the
infected set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .lattice import Configuration, LatticeWindow
from .rng import stream

GOOD, BAD, INDET = 0, 1, 2


@dataclass(frozen=True)
class ScaleSchedule:
    """Side lengths Delta_k and interaction ranges g_k = Delta_k^beta."""

    d: int
    p: float
    beta: float
    k_max: int
    deltas: tuple[int, ...]
    gs: tuple[float, ...]
    delta1_override: int | None = None
    side_conditions: tuple = ()

    def delta(self, k: int) -> int:
        return self.deltas[k - 1]

    def g(self, k: int) -> float:
        return self.gs[k - 1]


def build_schedule(d: int, p: float, beta: float, k_max: int, delta1_override: int | None = None) -> ScaleSchedule:
    """Delta_1 = floor(p^(-1/(3d+2))) unless overridden; Delta_{k+1} =
    floor(sqrt(Delta_k)) * Delta_k; g_k = Delta_k^beta.

    Records, without failing, whether the asymptotic side conditions hold at
    each level; at desk scale they frequently do not.
    """
    if not 0 < p < 1:
        raise ParameterError("p must lie in (0, 1)")
    if not 1 < beta < 1.5:
        raise ParameterError("beta must lie in (1, 3/2)")
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    if delta1_override is not None:
        d1 = int(delta1_override)
    else:
        d1 = math.floor(p ** (-1.0 / (3 * d + 2)))
    if d1 < 2:
        raise ParameterError(f"degenerate scale Delta_1 = {d1} < 2")
    deltas = [d1]
    while len(deltas) < k_max:
        prev = deltas[-1]
        deltas.append(math.isqrt(prev) * prev)
    gs = [delta ** beta for delta in deltas]
    conditions = []
    for k in range(2, k_max + 1):
        lhs = 3 * gs[k - 2]
        rhs = deltas[k - 1] / 3
        conditions.append((f"3*g_{k - 1} < Delta_{k}/3", lhs, rhs, lhs < rhs))
    for k in range(1, k_max + 1):
        lhs = gs[k - 1] + math.sqrt(d) * deltas[k - 1]
        rhs = 2 * deltas[k - 1] ** beta
        conditions.append((f"g_{k} + sqrt(d)*Delta_{k} <= 2*Delta_{k}^beta", lhs, rhs, lhs <= rhs))
    return ScaleSchedule(d, p, beta, k_max, tuple(deltas), tuple(gs), delta1_override, tuple(conditions))


def influence_radius(schedule: ScaleSchedule, k: int) -> float:
    """Radius within which sites can affect a level-k cube's state:
    sum_{i<k} (g_i + sqrt(d) * Delta_i)."""
    if k < 1:
        raise ParameterError("k must be at least 1")
    return sum(schedule.gs[i] + math.sqrt(schedule.d) * schedule.deltas[i] for i in range(k - 1))


def box_gap_sq(lo1, hi1, lo2, hi2) -> float:
    """Squared Euclidean set distance between two closed boxes."""
    s = 0.0
    for a in range(len(lo1)):
        gap = max(0, lo1[a] - hi2[a], lo2[a] - hi1[a])
        s += gap * gap
    return s


def cube_box(index, delta):
    lo = tuple(i * delta for i in index)
    hi = tuple(c + delta for c in lo)
    return lo, hi


def _candidate_offsets(schedule: ScaleSchedule, k: int) -> list[tuple[tuple[int, ...], bool]]:
    """Relative level-(k-1) cube offsets within g_{k-1} of a level-k cube.

    Offsets are relative to the level-k cube's first sub-cube index; the
    flag marks offsets always within range (interior of the cube) so the
    exact distance test can be skipped.
    """
    d = schedule.d
    dk, dk1 = schedule.delta(k), schedule.delta(k - 1)
    g = schedule.g(k - 1)
    ratio = dk // dk1
    reach = math.ceil(g / dk1) + 1
    lo_q = (0,) * d
    hi_q = (dk,) * d
    out = []
    for off in itertools.product(range(-reach, ratio + reach), repeat=d):
        lo, hi = cube_box(off, dk1)
        if box_gap_sq(lo, hi, lo_q, hi_q) <= g * g:
            interior = all(0 <= o < ratio for o in off)
            out.append((off, interior))
    return out


def _has_nonadjacent_pair(indices) -> tuple | None:
    """Pair of cube indices at Chebyshev distance >= 2, if any.

    A set of cubes is pairwise adjacent exactly when all indices fit in a
    2-window per axis, so the extremes along some axis witness a pair.
    """
    if len(indices) < 2:
        return None
    arr = list(indices)
    d = len(arr[0])
    for a in range(d):
        lo = min(arr, key=lambda t: t[a])
        hi = max(arr, key=lambda t: t[a])
        if hi[a] - lo[a] >= 2:
            return (lo, hi)
    return None


@dataclass
class _Level:
    k: int
    delta: int
    base: tuple[int, ...]   # index of the window's first cube at this level
    shape: tuple[int, ...]
    states: np.ndarray      # GOOD / BAD / INDET
    witnesses: dict = field(default_factory=dict)

    def in_range(self, idx) -> bool:
        return all(0 <= i - b < s for i, b, s in zip(idx, self.base, self.shape))

    def state(self, idx) -> int:
        return int(self.states[tuple(i - b for i, b in zip(idx, self.base))])

    def set_state(self, idx, value) -> None:
        self.states[tuple(i - b for i, b in zip(idx, self.base))] = value

    def indices(self):
        return (tuple(i + b for i, b in zip(idx, self.base)) for idx in np.ndindex(*self.shape))

    def bad_indices(self) -> list[tuple[int, ...]]:
        return [tuple(int(i) + b for i, b in zip(idx, self.base)) for idx in np.argwhere(self.states == BAD)]


@dataclass
class WindowHierarchy:
    """Good/bad/indeterminate states for every level over an aligned window."""

    schedule: ScaleSchedule
    window: LatticeWindow
    levels: list[_Level]

    def level(self, k: int) -> _Level:
        return self.levels[k - 1]

    def state(self, k: int, idx) -> int:
        return self.level(k).state(idx)

    def counts(self, k: int) -> dict:
        st = self.level(k).states
        return {
            "good": int((st == GOOD).sum()),
            "bad": int((st == BAD).sum()),
            "indeterminate": int((st == INDET).sum()),
        }


def classify(config: Configuration, schedule: ScaleSchedule) -> WindowHierarchy:
    """Classify every cube of every level over the configuration's window.

    The window must be aligned to the top-level cube grid.  Level-1 states
    come straight from the infected bit-state; higher levels use the
    two-witness rule, marking a cube indeterminate when its candidate set
    leaves the window or contains indeterminate cubes.
    """
    window = config.window
    d = schedule.d
    top = schedule.delta(schedule.k_max)
    for lo, hi in zip(window.lower, window.upper):
        if lo % top or hi % top:
            raise ParameterError(f"window must be aligned to multiples of Delta_{schedule.k_max} = {top}")
    levels: list[_Level] = []
    # level 1 by block-reduction of the infected mask
    d1 = schedule.delta(1)
    base1 = tuple(lo // d1 for lo in window.lower)
    shape1 = tuple(s // d1 for s in window.shape)
    mask = config.infected
    reduced = mask.reshape(tuple(x for s in shape1 for x in (s, d1)))
    axes = tuple(range(1, 2 * d, 2))
    bad1 = reduced.any(axis=axes)
    states1 = np.where(bad1, BAD, GOOD).astype(np.uint8)
    levels.append(_Level(1, d1, base1, shape1, states1))

    for k in range(2, schedule.k_max + 1):
        dk = schedule.delta(k)
        prev = levels[-1]
        base = tuple(lo // dk for lo in window.lower)
        shape = tuple(s // dk for s in window.shape)
        lvl = _Level(k, dk, base, shape, np.zeros(shape, dtype=np.uint8))
        ratio = dk // schedule.delta(k - 1)
        offsets = _candidate_offsets(schedule, k)
        for idx in lvl.indices():
            anchor = tuple(i * ratio for i in idx)
            bad_cands = []
            saw_unknown = False
            for off, _interior in offsets:
                j = tuple(a + o for a, o in zip(anchor, off))
                if not prev.in_range(j):
                    saw_unknown = True
                    continue
                s = prev.state(j)
                if s == INDET:
                    saw_unknown = True
                elif s == BAD:
                    bad_cands.append(j)
            if saw_unknown:
                # the candidate set leaves the window: never silently classify
                lvl.set_state(idx, INDET)
                continue
            pair = _has_nonadjacent_pair(bad_cands)
            if pair is not None:
                lvl.set_state(idx, BAD)
                lvl.witnesses[idx] = pair
            else:
                lvl.set_state(idx, GOOD)
        levels.append(lvl)
    return WindowHierarchy(schedule, window, levels)


@dataclass(frozen=True)
class BadCluster:
    """A maximal pairwise-adjacent union of bad level-k cubes."""

    level: int
    members: tuple[tuple[int, ...], ...]
    anchor: tuple[int, ...]
    touches_good_parent: bool

    @property
    def size(self) -> int:
        return len(self.members)


def _maximal_adjacent_cliques(bad: set) -> list[tuple]:
    """Maximal subsets of pairwise-adjacent cubes: maximal non-empty
    intersections of the bad set with 2-blocks {m, m+1}^d."""
    if not bad:
        return []
    d = len(next(iter(bad)))
    blocks = {}
    for idx in bad:
        for off in itertools.product((0, -1), repeat=d):
            m = tuple(i + o for i, o in zip(idx, off))
            members = frozenset(
                j for j in (tuple(mi + e for mi, e in zip(m, delta)) for delta in itertools.product((0, 1), repeat=d))
                if j in bad
            )
            if members:
                blocks[m] = members
    uniq = set(blocks.values())
    maximal = [c for c in uniq if not any(c < other for other in uniq)]
    return [tuple(sorted(c)) for c in maximal]


def _touching_parent_indices(member, delta_k, delta_k1):
    """Indices of level-(k+1) cubes whose closed boxes touch the member's closed box."""
    lo, hi = cube_box(member, delta_k)
    ranges = []
    for a in range(len(member)):
        first = math.floor(lo[a] / delta_k1)
        last = math.floor(hi[a] / delta_k1)
        if hi[a] % delta_k1 == 0:
            last = hi[a] // delta_k1  # closed contact with the next cube at the face
        ranges.append(range(first, last + 1))
    return itertools.product(*ranges)


def extract_clusters(hierarchy: WindowHierarchy, k: int) -> list[BadCluster]:
    """Clusters at level k: maximal pairwise-adjacent bad-cube unions that
    touch a determinate good (k+1)-cube.  Anchor is the lexicographically
    smallest corner of the lexicographically smallest member."""
    if k + 1 > hierarchy.schedule.k_max:
        raise ParameterError("cluster extraction needs level k+1 classified")
    lvl = hierarchy.level(k)
    parent = hierarchy.level(k + 1)
    bad = set(lvl.bad_indices())
    out = []
    for members in _maximal_adjacent_cliques(bad):
        touches = False
        for m in members:
            for pj in _touching_parent_indices(m, lvl.delta, parent.delta):
                if parent.in_range(pj) and parent.state(pj) == GOOD:
                    touches = True
                    break
            if touches:
                break
        anchor = tuple(c * lvl.delta for c in min(members))
        if touches:
            out.append(BadCluster(k, tuple(members), anchor, True))
    return out


@dataclass
class SparseHierarchy:
    """Exact classification with respect to a fully known finite site set.

    No window: any cube anywhere can be queried; absent means good.  Used by
    the barrier pipeline, which reclassifies locally restricted site sets.
    """

    schedule: ScaleSchedule
    sites: tuple
    bad: list  # bad[k-1] = set of bad cube indices at level k
    witnesses: list

    @classmethod
    def from_sites(cls, sites, schedule: ScaleSchedule, levels: int) -> "SparseHierarchy":
        sites = tuple(map(tuple, sites))
        d = schedule.d
        bad = []
        wit = []
        lvl1 = {tuple(c // schedule.delta(1) for c in s) for s in sites}
        bad.append(lvl1)
        wit.append({})
        for k in range(2, levels + 1):
            dk, dk1 = schedule.delta(k), schedule.delta(k - 1)
            g = schedule.g(k - 1)
            prev = bad[-1]
            reach = math.ceil((g + dk1) / dk) + 1
            candidates = set()
            for j in prev:
                lo, hi = cube_box(j, dk1)
                lo_k = tuple(math.floor((c - g) / dk) for c in lo)
                hi_k = tuple(math.floor((c + g) / dk) for c in hi)
                for idx in itertools.product(*(range(a, b + 1) for a, b in zip(lo_k, hi_k))):
                    candidates.add(idx)
            cur = set()
            wk = {}
            for idx in candidates:
                lo_q, hi_q = cube_box(idx, dk)
                near = [
                    j for j in prev
                    if box_gap_sq(*cube_box(j, dk1), lo_q, hi_q) <= g * g
                ]
                pair = _has_nonadjacent_pair(near)
                if pair is not None:
                    cur.add(idx)
                    wk[idx] = pair
            bad.append(cur)
            wit.append(wk)
        return cls(schedule, sites, bad, wit)

    def is_bad(self, k: int, idx) -> bool:
        return tuple(idx) in self.bad[k - 1]

    def bad_indices(self, k: int) -> set:
        return self.bad[k - 1]

    def clusters(self, k: int) -> list[tuple]:
        return _maximal_adjacent_cliques(self.bad[k - 1])


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    phat = successes / trials
    denom = 1 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass(frozen=True)
class BadProbabilityEstimate:
    k: int
    p: float
    trials: int
    bad_count: int
    estimate: float
    lo: float
    hi: float
    reference_bound: float  # Delta_k^{-(2d+2)}
    exact_level1: float | None

    @property
    def within_bound(self) -> bool:
        return self.estimate <= self.reference_bound


def _target_cube_classifier(schedule: ScaleSchedule, k: int):
    """Per-trial classifier for the level-k cube at the origin over a batch
    of level-1 bad masks, plus the window geometry it needs.

    Returns (window_lower, window_shape_level1, classify(batch_bad1)).
    """
    d = schedule.d
    dk = schedule.delta(k)
    margin = influence_radius(schedule, k)
    d1 = schedule.delta(1)
    m1 = math.ceil(margin / d1)
    # level-1 index window [-m1, dk/d1 + m1) per axis
    ratio = dk // d1
    lo1 = -m1
    n1 = ratio + 2 * m1

    # recursive offsets: for each level j, list of cube indices (absolute,
    # in level-j units) whose states feed the target cube
    def classify(batch_bad1: np.ndarray) -> np.ndarray:
        cur = batch_bad1  # (B, n1, n1, ...) level-1 bad masks, index origin at lo1
        base = (lo1,) * d
        delta_prev = d1
        for j in range(2, k + 1):
            dj = schedule.delta(j)
            g = schedule.g(j - 1)
            ratio_j = dj // delta_prev
            # enumerate level-j cubes still relevant; at the top only index 0
            if j < k:
                span = math.ceil((influence_radius(schedule, k) - influence_radius(schedule, j)) / dj) + 1
                idx_lo, idx_hi = -span, (schedule.delta(k) // dj) + span
            else:
                idx_lo, idx_hi = 0, 1
            offsets = _candidate_offsets(schedule, j)
            shape_new = (idx_hi - idx_lo,) * d
            B = cur.shape[0]
            new = np.zeros((B,) + shape_new, dtype=bool)
            for idx in itertools.product(range(idx_lo, idx_hi), repeat=d):
                anchor = tuple(i * ratio_j for i in idx)
                cols = []
                for off, _ in offsets:
                    cell = tuple(a + o for a, o in zip(anchor, off))
                    arr_idx = tuple(c - b for c, b in zip(cell, base))
                    if all(0 <= c < s for c, s in zip(arr_idx, cur.shape[1:])):
                        cols.append((cell, arr_idx))
                if len(cols) < 2:
                    continue
                stack = np.stack([cur[(slice(None),) + ai] for _, ai in cols], axis=1)  # (B, ncand)
                cells = [c for c, _ in cols]
                pair_a, pair_b = [], []
                for i1, i2 in itertools.combinations(range(len(cells)), 2):
                    if max(abs(a - b) for a, b in zip(cells[i1], cells[i2])) >= 2:
                        pair_a.append(i1)
                        pair_b.append(i2)
                if not pair_a:
                    continue
                fired = (stack[:, pair_a] & stack[:, pair_b]).any(axis=1)
                new[(slice(None),) + tuple(i - idx_lo for i in idx)] = fired
            cur = new
            base = (idx_lo,) * d
            delta_prev = dj
        return cur.reshape(cur.shape[0], -1).any(axis=1) if k > 1 else cur[(slice(None),) + ((-lo1),) * d]

    window_lower = tuple(lo1 * d1 for _ in range(d))
    return window_lower, (n1,) * d, classify


def mc_bad_probability(
    schedule: ScaleSchedule, k: int, p: float, trials: int, seed: int, batch: int = 256
) -> BadProbabilityEstimate:
    """Monte Carlo estimate of P(the centered level-k cube is bad) under
    p-random infection, sampled with margin >= influence_radius(k).

    Compares against the reference bound Delta_k^{-(2d+2)} and, at level 1,
    the closed form 1 - (1-p)^(Delta_1^d).
    """
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    if k > schedule.k_max:
        raise ParameterError("k exceeds schedule k_max")
    d = schedule.d
    _, shape1, classify_batch = _target_cube_classifier(schedule, k)
    d1 = schedule.delta(1)
    site_shape = tuple(s * d1 for s in shape1)
    bad_count = 0
    done = 0
    ti = 0
    while done < trials:
        b = min(batch, trials - done)
        fields = np.empty((b,) + site_shape)
        for i in range(b):
            fields[i] = stream(seed, ti).random(site_shape)
            ti += 1
        masks = fields < p
        reduced = masks.reshape((b,) + tuple(x for s in shape1 for x in (s, d1)))
        axes = tuple(range(2, 2 * d + 2, 2))
        bad1 = reduced.any(axis=axes)
        if k == 1:
            # margin is zero at level 1: the window is the single target cube
            flags = bad1.reshape(b, -1).any(axis=1)
        else:
            flags = classify_batch(bad1)
        bad_count += int(flags.sum())
        done += b
    estimate = bad_count / trials
    lo, hi = wilson_interval(bad_count, trials)
    q_k = schedule.delta(k) ** (-(2 * d + 2))
    exact = 1 - (1 - p) ** (schedule.delta(1) ** d) if k == 1 else None
    return BadProbabilityEstimate(k, p, trials, bad_count, estimate, lo, hi, q_k, exact)


@dataclass(frozen=True)
class IndependenceReport:
    p: float
    trials: int
    p1: float
    p2: float
    p_both: float
    discrepancy: float
    sigma: float

    @property
    def studentized(self) -> float:
        return self.discrepancy / self.sigma if self.sigma > 0 else math.inf


def independence_check(
    schedule: ScaleSchedule,
    k: int,
    p: float,
    trials: int,
    seed: int,
    same_cube: bool = False,
    batch: int = 256,
) -> IndependenceReport:
    """Estimate P(both bad) - P(bad)^2 for two level-k cubes with disjoint
    influence regions over shared samples; the studentized discrepancy is
    consistent with zero exactly when the states are independent.

    ``same_cube=True`` is the positive control: the same cube paired with
    itself has discrepancy P(bad)(1 - P(bad)).
    """
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    d = schedule.d
    dk = schedule.delta(k)
    margin = influence_radius(schedule, k)
    d1 = schedule.delta(1)
    m1 = math.ceil(margin / d1)
    ratio = dk // d1
    # two target cubes on the first axis, separated beyond twice the margin
    sep_cubes = 2 * m1 + ratio + math.ceil(2.0 / d1)
    n_axis0 = ratio + sep_cubes + ratio + 2 * m1
    shape1 = (n_axis0,) + (ratio + 2 * m1,) * (d - 1)
    site_shape = tuple(s * d1 for s in shape1)
    _, single_shape, classify_batch = _target_cube_classifier(schedule, k)
    m_span = single_shape[0]

    both = b1 = b2 = 0
    done = 0
    ti = 0
    while done < trials:
        b = min(batch, trials - done)
        fields = np.empty((b,) + site_shape)
        for i in range(b):
            fields[i] = stream(seed, ti).random(site_shape)
            ti += 1
        masks = fields < p
        reduced = masks.reshape((b,) + tuple(x for s in shape1 for x in (s, d1)))
        axes = tuple(range(2, 2 * d + 2, 2))
        bad1 = reduced.any(axis=axes)
        win1 = bad1[:, :m_span]
        flags1 = classify_batch(win1) if k > 1 else win1[(slice(None), m1) + ((m1),) * (d - 1)]
        if same_cube:
            flags2 = flags1
        else:
            start = sep_cubes + ratio
            win2 = bad1[:, start:start + m_span]
            flags2 = classify_batch(win2) if k > 1 else win2[(slice(None), m1) + ((m1),) * (d - 1)]
        b1 += int(flags1.sum())
        b2 += int(flags2.sum())
        both += int((flags1 & flags2).sum())
        done += b
    p1, p2, pb = b1 / trials, b2 / trials, both / trials
    disc = pb - p1 * p2
    sigma = math.sqrt(max(p1 * (1 - p1) * p2 * (1 - p2), 1e-300) / trials)
    return IndependenceReport(p, trials, p1, p2, pb, disc, sigma)
