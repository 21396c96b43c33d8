"""Finite lattice windows, configurations, and the monotone closure dynamics.

A window is a half-open axis-aligned box of Z^d with one of three boundary
policies: ``free`` (off-window sites permanently healthy — rules reaching
outside cannot fire, which lower-bounds the full-lattice closure), ``torus``
(coordinates wrap), or a half-space (off-window sites below the hyperplane
permanently infected, above permanently healthy; used to cross-check
direction stability).

Two closure routines are provided on purpose: :func:`closure` is the
production frontier/work-queue algorithm, :func:`closure_naive` iterates the
vectorized :func:`step` to a fixed point and serves as its independent
oracle in tests.  Monotone updates are confluent, so both must agree
exactly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError, ValidationError
from .families import UpdateFamily

Vec = tuple[int, ...]


@dataclass(frozen=True)
class HalfSpace:
    """Half-space boundary: off-window sites x with <x, normal> < offset are infected."""

    normal: Vec
    offset: int = 0

    def __post_init__(self):
        normal = tuple(int(c) for c in self.normal)
        if all(c == 0 for c in normal):
            raise ValidationError("half-space normal must be non-zero")
        object.__setattr__(self, "normal", normal)

    def infected_outside(self, site) -> bool:
        return sum(c * x for c, x in zip(self.normal, site)) < self.offset


@dataclass(frozen=True)
class LatticeWindow:
    lower: Vec
    upper: Vec
    boundary: str | HalfSpace = "free"

    def __post_init__(self):
        lower = tuple(int(c) for c in self.lower)
        upper = tuple(int(c) for c in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper):
            raise ValidationError("lower and upper must have the same dimension")
        if not all(lo < hi for lo, hi in zip(lower, upper)):
            raise ValidationError("window requires lower < upper coordinatewise")
        vol = 1
        for lo, hi in zip(lower, upper):
            vol *= hi - lo
            if vol >= 1 << 63:
                raise ValidationError("window volume does not fit in a 64-bit count")
        if isinstance(self.boundary, str):
            if self.boundary not in ("free", "torus"):
                raise ValidationError(f"unknown boundary policy {self.boundary!r}")
        elif isinstance(self.boundary, HalfSpace):
            if len(self.boundary.normal) != len(lower):
                raise ValidationError("half-space normal dimension mismatch")
        else:
            raise ValidationError("boundary must be 'free', 'torus', or a HalfSpace")

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))

    @property
    def volume(self) -> int:
        v = 1
        for s in self.shape:
            v *= s
        return v

    def contains(self, site) -> bool:
        return all(lo <= x < hi for lo, x, hi in zip(self.lower, site, self.upper))

    def index(self, site) -> tuple[int, ...]:
        return tuple(x - lo for x, lo in zip(site, self.lower))

    def site(self, index) -> Vec:
        return tuple(i + lo for i, lo in zip(index, self.lower))


class Configuration:
    """A window plus a dense bit-state of infected sites.

    Exclusively owned by one execution context while mutated; the engines
    below never mutate their inputs.
    """

    __slots__ = ("window", "infected")

    def __init__(self, window: LatticeWindow, infected: np.ndarray | None = None):
        self.window = window
        if infected is None:
            infected = np.zeros(window.shape, dtype=bool)
        else:
            infected = np.asarray(infected, dtype=bool)
            if infected.shape != window.shape:
                raise ParameterError(f"state shape {infected.shape} != window shape {window.shape}")
        self.infected = infected

    @classmethod
    def from_sites(cls, window: LatticeWindow, sites) -> "Configuration":
        cfg = cls(window)
        for s in sites:
            if not window.contains(s):
                raise ParameterError(f"site {tuple(s)} outside window")
            cfg.infected[window.index(s)] = True
        return cfg

    def sites(self) -> list[Vec]:
        lows = np.array(self.window.lower)
        return [tuple(map(int, idx + lows)) for idx in np.argwhere(self.infected)]

    def copy(self) -> "Configuration":
        return Configuration(self.window, self.infected.copy())

    def count(self) -> int:
        return int(self.infected.sum())

    def __eq__(self, other):
        return (
            isinstance(other, Configuration)
            and self.window == other.window
            and np.array_equal(self.infected, other.infected)
        )


@lru_cache(maxsize=64)
def _halfspace_pad_mask(lower: Vec, shape: tuple[int, ...], margin: int, normal: Vec, offset: int):
    """Infected-indicator over the padded grid for a half-space boundary (pad region only)."""
    d = len(shape)
    dot = np.zeros(tuple(s + 2 * margin for s in shape), dtype=np.int64)
    for axis in range(d):
        coords = np.arange(lower[axis] - margin, lower[axis] + shape[axis] + margin, dtype=np.int64)
        view = coords * normal[axis]
        expand = [None] * d
        expand[axis] = slice(None)
        dot = dot + view[tuple(expand)]
    mask = dot < offset
    core = tuple(slice(margin, margin + s) for s in shape)
    interior = np.zeros_like(mask)
    interior[core] = True
    mask &= ~interior
    mask.setflags(write=False)
    return mask


def _pad_states(cfg: Configuration, margin: int) -> np.ndarray:
    b = cfg.window.boundary
    if b == "torus":
        return np.pad(cfg.infected, margin, mode="wrap")
    padded = np.pad(cfg.infected, margin, constant_values=False)
    if isinstance(b, HalfSpace):
        padded |= _halfspace_pad_mask(cfg.window.lower, cfg.window.shape, margin, b.normal, b.offset)
    return padded


def step(cfg: Configuration, family: UpdateFamily) -> Configuration:
    """One synchronous update: x joins iff some rule translate x + X is fully infected."""
    if family.d != cfg.window.d:
        raise ParameterError(f"family dimension {family.d} != window dimension {cfg.window.d}")
    if not family.rules:
        return cfg.copy()
    m = family.reach
    shape = cfg.window.shape
    padded = _pad_states(cfg, m)
    new = cfg.infected.copy()
    for sites in family.rule_arrays():
        conj = None
        for s in sites:
            view = padded[tuple(slice(m + int(s[a]), m + int(s[a]) + shape[a]) for a in range(len(shape)))]
            conj = view.copy() if conj is None else np.logical_and(conj, view, out=conj)
        np.logical_or(new, conj, out=new)
    return Configuration(cfg.window, new)


def closure_naive(cfg: Configuration, family: UpdateFamily) -> Configuration:
    """Iterate :func:`step` to stabilization.  Oracle for :func:`closure`."""
    cur = cfg
    while True:
        nxt = step(cur, family)
        if np.array_equal(nxt.infected, cur.infected):
            return nxt
        cur = nxt


def _ball_offsets(d: int, m: int) -> list[Vec]:
    if m == 0:
        return []
    ranges = [range(-m, m + 1)] * d
    out = []

    def rec(prefix, axis):
        if axis == d:
            if any(prefix):
                out.append(tuple(prefix))
            return
        for v in ranges[axis]:
            rec(prefix + [v], axis + 1)

    rec([], 0)
    return out


def closure(cfg: Configuration, family: UpdateFamily) -> Configuration:
    """Least fixed point of :func:`step` containing ``cfg``.

    Frontier algorithm: when x becomes infected every site within Chebyshev
    distance ceil(R) is enqueued and re-tested against all rules on dequeue.
    That re-examination set is sufficient because a rule translate seen from
    y only reaches sites within reach of y.
    """
    if family.d != cfg.window.d:
        raise ParameterError(f"family dimension {family.d} != window dimension {cfg.window.d}")
    if not family.rules:
        return cfg.copy()
    window = cfg.window
    grid = cfg.infected.copy()
    shape = window.shape
    lower = window.lower
    boundary = window.boundary
    m = family.reach
    ball = _ball_offsets(window.d, m)
    rules = [tuple(map(tuple, X)) for X in family.rules]

    def infected_at(idx):
        inside = True
        wrapped = []
        for a, (i, n) in enumerate(zip(idx, shape)):
            if 0 <= i < n:
                wrapped.append(i)
            elif boundary == "torus":
                wrapped.append(i % n)
            else:
                inside = False
                break
        if inside:
            return bool(grid[tuple(wrapped)])
        if boundary == "free" or boundary == "torus":
            return False
        site = tuple(i + lo for i, lo in zip(idx, lower))
        return boundary.infected_outside(site)

    queue = deque()
    queued = set()

    def enqueue_around(idx):
        for off in ball:
            j = tuple(i + o for i, o in zip(idx, off))
            if boundary == "torus":
                j = tuple(c % n for c, n in zip(j, shape))
            elif not all(0 <= c < n for c, n in zip(j, shape)):
                continue
            if not grid[j] and j not in queued:
                queued.add(j)
                queue.append(j)

    for idx in map(tuple, np.argwhere(grid)):
        enqueue_around(idx)

    while queue:
        idx = queue.popleft()
        queued.discard(idx)
        if grid[idx]:
            continue
        fired = False
        for X in rules:
            if all(infected_at(tuple(i + s for i, s in zip(idx, site))) for site in X):
                fired = True
                break
        if fired:
            grid[idx] = True
            enqueue_around(idx)
    return Configuration(window, grid)


def percolates(cfg: Configuration, family: UpdateFamily) -> bool:
    """True iff the closure fills the entire window (torus surrogate for Z^d)."""
    return bool(closure(cfg, family).infected.all())


def save_snapshot(cfg: Configuration, path) -> None:
    """Plain-text snapshot: a window header plus one line per infected site."""
    w = cfg.window
    if isinstance(w.boundary, HalfSpace):
        policy = "halfspace;u=%s;offset=%d" % (",".join(map(str, w.boundary.normal)), w.boundary.offset)
    else:
        policy = w.boundary
    lines = [
        "# window lower=%s upper=%s policy=%s"
        % (",".join(map(str, w.lower)), ",".join(map(str, w.upper)), policy)
    ]
    lines += [" ".join(map(str, s)) for s in cfg.sites()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_snapshot(path) -> Configuration:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# window "):
        raise ValidationError("snapshot must start with a '# window' header line")
    fields = dict(part.split("=", 1) for part in lines[0][len("# window "):].split(" "))
    lower = tuple(int(c) for c in fields["lower"].split(","))
    upper = tuple(int(c) for c in fields["upper"].split(","))
    policy = fields["policy"]
    if policy.startswith("halfspace"):
        opts = dict(p.split("=", 1) for p in policy.split(";")[1:])
        boundary: str | HalfSpace = HalfSpace(tuple(int(c) for c in opts["u"].split(",")), int(opts["offset"]))
    else:
        boundary = policy
    window = LatticeWindow(lower, upper, boundary)
    sites = [tuple(int(c) for c in ln.split()) for ln in lines[1:]]
    return Configuration.from_sites(window, sites)
