"""Stable directions and certified covering direction sets.

A direction u is stable when no rule fits inside the open half-space
{x : <x,u> < 0}; it is strongly stable when a whole neighbourhood of u is
stable.  The certifier below retains candidate directions whose stability
margin and pair-alignment margin are both positive, and succeeds when their
convex hull surrounds the origin — equivalently, when every open hemisphere
contains a retained direction.  The certificate carries the margin radius
epsilon and the scale-free constant gamma used by the barrier pipeline.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UncertainStabilityError, ValidationError
from .families import UpdateFamily
from .lattice import Configuration, HalfSpace, LatticeWindow, closure
from .rng import stream

_FLOAT_BAND = 1e-9


def _gcd_reduce(vec):
    g = 0
    for c in vec:
        g = math.gcd(g, abs(int(c)))
    g = g or 1
    return tuple(int(c) // g for c in vec)


@dataclass(frozen=True)
class Direction:
    """A unit vector, optionally backed by an exact integer representative."""

    vector: tuple[float, ...]
    integer: tuple[int, ...] | None = None

    def __post_init__(self):
        v = tuple(float(c) for c in self.vector)
        norm = math.sqrt(sum(c * c for c in v))
        if abs(norm - 1.0) > 1e-12:
            raise ValidationError(f"direction must be a unit vector (norm {norm})")
        object.__setattr__(self, "vector", v)
        if self.integer is not None:
            z = tuple(int(c) for c in self.integer)
            zn = math.sqrt(sum(c * c for c in z))
            if zn == 0 or any(abs(c / zn - f) > 1e-12 for c, f in zip(z, v)):
                raise ValidationError("integer representative does not normalize to the unit vector")
            object.__setattr__(self, "integer", z)

    @classmethod
    def from_integer(cls, vec) -> "Direction":
        z = _gcd_reduce(vec)
        if all(c == 0 for c in z):
            raise ValidationError("direction vector must be non-zero")
        norm = math.sqrt(sum(c * c for c in z))
        return cls(tuple(c / norm for c in z), z)

    @classmethod
    def from_float(cls, vec) -> "Direction":
        v = np.asarray(vec, dtype=float)
        norm = float(np.linalg.norm(v))
        if norm == 0:
            raise ValidationError("direction vector must be non-zero")
        return cls(tuple(v / norm))

    @property
    def d(self) -> int:
        return len(self.vector)

    def arr(self) -> np.ndarray:
        return np.array(self.vector)

    def to_json(self) -> dict:
        return {"vector": list(self.vector), "integer": list(self.integer) if self.integer else None}

    @classmethod
    def from_json(cls, doc) -> "Direction":
        if doc.get("integer"):
            return cls.from_integer(doc["integer"])
        return cls(tuple(doc["vector"]))


def is_stable(family: UpdateFamily, u: Direction) -> bool:
    """True iff no rule lies entirely in the open half-space below u.

    Exact integer arithmetic when ``u`` carries a rational representative.
    With a float-only direction, any rule whose largest site product falls
    inside the tolerance band makes the verdict uncertain and raises.
    """
    if u.d != family.d:
        raise ParameterError("direction dimension mismatch")
    if u.integer is not None:
        z = u.integer
        for X in family.rules:
            if all(sum(c * x for c, x in zip(z, s)) < 0 for s in X):
                return False
        return True
    v = u.vector
    uncertain = False
    for X in family.rules:
        best = max(sum(c * x for c, x in zip(v, s)) for s in X)
        if best <= -_FLOAT_BAND:
            return False
        if best < _FLOAT_BAND:
            uncertain = True
    if uncertain:
        raise UncertainStabilityError(
            "stability verdict depends on dot products inside the 1e-9 band; "
            "supply a rational direction"
        )
    return True


def is_stable_simulated(family: UpdateFamily, u: Direction, window: LatticeWindow) -> bool:
    """Half-space simulation oracle: run the dynamics on a window whose
    exterior below the hyperplane is infected, and report whether any site
    on or above the hyperplane ever becomes infected."""
    if u.integer is None:
        raise ParameterError("simulation requires a direction with a rational representative")
    z = u.integer
    if not (isinstance(window.boundary, HalfSpace) and window.boundary.normal == z and window.boundary.offset == 0):
        raise ParameterError("window boundary must be half-space(u, 0)")
    reach = max(4 * math.ceil(family.radius), 4)
    if min(window.shape) < reach:
        raise ParameterError(f"window too small relative to rule radius (needs min side >= {reach})")
    cfg = Configuration(window)
    idx = np.indices(window.shape)
    dot = np.zeros(window.shape, dtype=np.int64)
    for a in range(window.d):
        dot += (idx[a] + window.lower[a]) * z[a]
    cfg.infected[:] = dot < 0
    out = closure(cfg, family)
    return not bool((out.infected & (dot >= 0)).any())


def stability_margin(family: UpdateFamily, u: Direction) -> float:
    """min over rules of max over rule sites of <x,u>/|x|.

    Positive values certify a stability ball: every v with |u - v| <= margin
    is stable.  Zero or negative for boundary-stable or unstable directions.
    Empty family: +inf (vacuous minimum).
    """
    if u.d != family.d:
        raise ParameterError("direction dimension mismatch")
    v = u.vector
    worst = math.inf
    for X in family.rules:
        best = max(sum(c * x for c, x in zip(v, s)) / math.sqrt(sum(x * x for x in s)) for s in X)
        worst = min(worst, best)
    return worst


def f_margin(family: UpdateFamily, u: Direction) -> float:
    """min over rules and site pairs within a rule of |<x - y, u>| / |x - y|.

    A certified lower bound on the distance from u to any direction
    perpendicular to a within-rule difference.  Rules with a single site
    contribute nothing; +inf when no rule has two sites.
    """
    if u.d != family.d:
        raise ParameterError("direction dimension mismatch")
    v = u.vector
    worst = math.inf
    for X in family.rules:
        for x, y in itertools.combinations(X, 2):
            diff = tuple(a - b for a, b in zip(x, y))
            dn = math.sqrt(sum(c * c for c in diff))
            worst = min(worst, abs(sum(c * w for c, w in zip(diff, v))) / dn)
    return worst


@dataclass(frozen=True)
class StabilityCertificate:
    family_hash: str
    d: int
    directions: tuple[Direction, ...]
    stability_margins: tuple[float, ...]
    f_margins: tuple[float, ...]
    epsilon: float
    r_cov: float
    gamma: float

    def __post_init__(self):
        if self.r_cov <= 0:
            raise ValidationError("certificate requires r_cov > 0")
        if not all(m > 0 for m in self.stability_margins) or not all(m > 0 for m in self.f_margins):
            raise ValidationError("certificate requires positive margins for every direction")
        # constant checklist collected from the construction's requirements
        sd = math.sqrt(self.d)
        if not self.gamma > 2 * sd + 1:
            raise ValidationError("gamma must exceed 2*sqrt(d) + 1")
        if not self.gamma >= 2 * sd + 2:
            raise ValidationError("gamma must be at least 2*sqrt(d) + 2")
        _probe_gamma_containment(self.directions, self.d, self.gamma)

    def to_json(self) -> dict:
        return {
            "family_hash": self.family_hash,
            "d": self.d,
            "directions": [u.to_json() for u in self.directions],
            "stability_margins": list(self.stability_margins),
            "f_margins": list(self.f_margins),
            "epsilon": self.epsilon if math.isfinite(self.epsilon) else "inf",
            "r_cov": self.r_cov,
            "gamma": self.gamma,
        }

    @classmethod
    def from_json(cls, doc) -> "StabilityCertificate":
        eps = doc["epsilon"]
        return cls(
            family_hash=doc["family_hash"],
            d=doc["d"],
            directions=tuple(Direction.from_json(x) for x in doc["directions"]),
            stability_margins=tuple(doc["stability_margins"]),
            f_margins=tuple(doc["f_margins"]),
            epsilon=math.inf if eps == "inf" else float(eps),
            r_cov=doc["r_cov"],
            gamma=doc["gamma"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    @classmethod
    def loads(cls, text: str) -> "StabilityCertificate":
        return cls.from_json(json.loads(text))


@dataclass(frozen=True)
class CertifyResult:
    ok: bool
    certificate: StabilityCertificate | None = None
    reason: str | None = None
    candidates_tested: int = 0


def _chebyshev_radius_about_origin(points: np.ndarray) -> float:
    """Largest t with B_t(0) inside conv(points); <= 0 when the origin is not interior."""
    d = points.shape[1]
    if d == 1:
        lo, hi = points.min(), points.max()
        return float(min(-lo, hi)) if lo < 0 < hi else 0.0
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(points)
    except QhullError:
        return 0.0  # degenerate hull: origin cannot be interior
    # qhull facet equations n.x + b <= 0 with unit outward n; origin distance = -b
    return float(np.min(-hull.equations[:, -1]))


def _polytope_circumradius(dirs: np.ndarray, offsets: np.ndarray) -> float | None:
    """Exact circumradius of {x : <x, u_i> <= c_i} by vertex enumeration (d <= 3)."""
    d = dirs.shape[1]
    if d > 3:
        return None
    best = 0.0
    for idx in itertools.combinations(range(len(dirs)), d):
        A = dirs[list(idx)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, offsets[list(idx)])
        if np.all(dirs @ x <= offsets + 1e-9 * np.maximum(1.0, np.abs(offsets))):
            best = max(best, float(np.linalg.norm(x)))
    return best


def _probe_gamma_containment(directions, d, gamma, samples=1000):
    """Sampled re-verification of the containment defining gamma: points just
    outside B_gamma violate some face constraint <x,u> <= 4d."""
    rng = stream(0x6A6D6D61, 0)
    dirs = np.array([u.vector for u in directions])
    pts = rng.normal(size=(samples, d))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= gamma + 1e-6
    worst = (dirs @ pts.T).max(axis=0)
    if not np.all(worst > 4 * d):
        raise ValidationError("gamma containment probe failed: sampled point inside all face constraints")


def compute_gamma(cert_or_directions, d: int | None = None, r_cov: float | None = None) -> float:
    """Scale-free constant: circumradius of the polytope {<x,u> <= 4d, u in S*}.

    Exact by vertex enumeration for d <= 3, else the upper bound 4d / r_cov
    (sound: any polytope point x has some direction aligned at least r_cov
    with x, so |x| <= 4d / r_cov).  Always at least 2*sqrt(d) + 2.

    Accepts a StabilityCertificate or the raw (directions, d, r_cov) triple.
    """
    if isinstance(cert_or_directions, StabilityCertificate):
        cert = cert_or_directions
        directions, d, r_cov = cert.directions, cert.d, cert.r_cov
    else:
        directions = tuple(cert_or_directions)
        if d is None or r_cov is None:
            raise ParameterError("d and r_cov required when not passing a certificate")
    if r_cov < 1e-6:
        raise ParameterError("coverage too thin: r_cov below 1e-6, gamma diverges")
    dirs = np.array([u.vector for u in directions])
    offsets = np.full(len(directions), 4.0 * d)
    exact = _polytope_circumradius(dirs, offsets)
    bound = exact if exact is not None else 4.0 * d / r_cov
    return max(2 * math.sqrt(d) + 2, bound)


def certify_strongly_stable_set(family: UpdateFamily, candidates) -> CertifyResult:
    """Filter candidates by positive margins and certify hemisphere coverage.

    Succeeds iff the retained directions' convex hull contains a ball of
    positive radius r_cov around the origin, which holds exactly when every
    open hemisphere contains a retained direction.
    """
    candidates = list(candidates)
    if not candidates:
        raise ParameterError("candidates must be non-empty")
    kept, ms_list, mf_list = [], [], []
    for u in candidates:
        ms = stability_margin(family, u)
        mf = f_margin(family, u)
        if ms > 0 and mf > 0:
            kept.append(u)
            ms_list.append(ms)
            mf_list.append(mf)
    n = len(candidates)
    if not kept:
        return CertifyResult(False, reason="no candidate strongly stable", candidates_tested=n)
    pts = np.array([u.vector for u in kept])
    r_cov = _chebyshev_radius_about_origin(pts)
    if r_cov <= 0:
        return CertifyResult(False, reason="origin not interior to convex hull", candidates_tested=n)
    eps = min(min(ms_list), min(mf_list))
    gamma = compute_gamma(tuple(kept), family.d, r_cov)
    cert = StabilityCertificate(
        family_hash=family.family_hash,
        d=family.d,
        directions=tuple(kept),
        stability_margins=tuple(ms_list),
        f_margins=tuple(mf_list),
        epsilon=eps,
        r_cov=r_cov,
        gamma=gamma,
    )
    return CertifyResult(True, certificate=cert, candidates_tested=n)


def _axis_directions(d: int) -> list[Direction]:
    out = []
    for axis in range(d):
        for sign in (1, -1):
            e = [0] * d
            e[axis] = sign
            out.append(Direction.from_integer(tuple(e)))
    return out


def _height_candidates(d: int, h: int, seen: set) -> list[Direction]:
    out = []
    for vec in itertools.product(range(-h, h + 1), repeat=d):
        if not any(vec) or max(abs(c) for c in vec) != h:
            continue
        z = _gcd_reduce(vec)
        if z in seen:
            continue
        seen.add(z)
        out.append(Direction.from_integer(z))
    return out


_RANDOM_PHASE_HEIGHT = 8


def search_strongly_stable_set(family: UpdateFamily, budget: int, seed: int) -> CertifyResult:
    """Enumerate rational directions of growing height and certify the
    accumulated strongly stable set after each height round; past height 8
    the stream is widened with seeded random integer directions.

    Returns the first success, or failure after ``budget`` candidates: at
    that point non-coverage is evidence, not proof.
    Deterministic given ``seed``.
    """
    if budget <= 0:
        raise ParameterError("budget must be positive")
    d = family.d
    if not family.rules:
        # With no rules every direction is stable with vacuous (infinite)
        # margins; certify with the axis directions.
        axes = _axis_directions(d)
        res = certify_strongly_stable_set(family, axes)
        return res
    rng = stream(seed, 0)
    seen: set = set()
    kept: list[Direction] = []
    tested = 0
    h = 1
    while tested < budget:
        batch = _height_candidates(d, h, seen)
        if h > _RANDOM_PHASE_HEIGHT:
            # the low-height rational grid has had its chance; widen the
            # stream with seeded random rational directions
            for _ in range(32):
                vec = tuple(int(c) for c in rng.integers(-8 * h, 8 * h + 1, size=d))
                if any(vec):
                    z = _gcd_reduce(vec)
                    if z not in seen:
                        seen.add(z)
                        batch.append(Direction.from_integer(z))
        for u in batch:
            if tested >= budget:
                break
            tested += 1
            if stability_margin(family, u) > 0 and f_margin(family, u) > 0:
                kept.append(u)
        if kept:
            res = certify_strongly_stable_set(family, kept)
            if res.ok:
                return CertifyResult(True, certificate=res.certificate, candidates_tested=tested)
        h += 1
    reason = "no candidate strongly stable" if not kept else "origin not interior to convex hull"
    return CertifyResult(False, reason=reason, candidates_tested=tested)


def certificate_report(result: CertifyResult, family: UpdateFamily) -> str:
    """Human-readable stability report."""
    lines = [f"family {family.family_hash} (d={family.d}, {len(family.rules)} rules, R={family.radius:.4g})"]
    if not result.ok:
        lines.append(f"FAILED: {result.reason} ({result.candidates_tested} candidates tested)")
        return "\n".join(lines)
    c = result.certificate
    lines.append(f"certified covering set of {len(c.directions)} directions")
    for u, ms, mf in zip(c.directions, c.stability_margins, c.f_margins):
        rep = u.integer if u.integer else tuple(round(x, 6) for x in u.vector)
        lines.append(f"  u={rep}  stability_margin={ms:.6g}  pair_margin={mf:.6g}")
    lines.append(f"epsilon={c.epsilon:.6g}  r_cov={c.r_cov:.6g}  gamma={c.gamma:.6g}")
    return "\n".join(lines)
