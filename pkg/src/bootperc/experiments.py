"""Monte Carlo experiment drivers: percolation probability on tori, the
finite-size critical-probability bisection, and one-arm curves.

Every trial owns an independent random stream derived from (master seed,
trial index); a trial draws one uniform field and thresholds it at p, so
the infected sets are coupled monotonically across the whole p range and
every estimated curve is monotone trial by trial, with no statistical
inversions.  Results are reduced in trial-index order, making output files
bit-identical across batch sizes and worker counts.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .families import UpdateFamily
from .lattice import HalfSpace, LatticeWindow
from .renorm import wilson_interval
from .rng import stream


def _closure_mask_batch(states: np.ndarray, family: UpdateFamily, torus: bool) -> np.ndarray:
    """Fixed-point closure of a batch of configurations (leading batch axis).

    Same dynamics as the single-configuration engines; iterating the
    vectorized step until nothing changes is exact because the update is
    monotone and confluent.
    """
    if not family.rules:
        return states.copy()
    m = family.reach
    d = states.ndim - 1
    shape = states.shape[1:]
    cur = states.copy()
    pad_width = ((0, 0),) + ((m, m),) * d
    while True:
        padded = np.pad(cur, pad_width, mode="wrap" if torus else "constant")
        new = cur.copy()
        for sites in family.rule_arrays():
            conj = None
            for s in sites:
                sl = (slice(None),) + tuple(slice(m + int(s[a]), m + int(s[a]) + shape[a]) for a in range(d))
                view = padded[sl]
                conj = view.copy() if conj is None else np.logical_and(conj, view, out=conj)
            np.logical_or(new, conj, out=new)
        if np.array_equal(new, cur):
            return new
        cur = new


@dataclass(frozen=True)
class ResultRow:
    mode: str
    family_hash: str
    n: int
    p: float | None
    estimate: float
    lo: float
    hi: float
    trials: int
    seed: int
    ms: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.lo - 1e-12 <= self.estimate <= self.hi + 1e-12:
            raise ParameterError("interval must contain the estimate")


def _chunk_ranges(trials: int, workers: int) -> list[tuple[int, int]]:
    per = math.ceil(trials / max(workers, 1))
    return [(a, min(a + per, trials)) for a in range(0, trials, per)]


def _perc_chunk(args) -> list[bool]:
    family_doc, n, p, seed, lo, hi, batch = args
    from .families import parse_family

    family = parse_family(family_doc)
    out: list[bool] = []
    i = lo
    while i < hi:
        b = min(batch, hi - i)
        fields = np.empty((b, *(n,) * family.d))
        for j in range(b):
            fields[j] = stream(seed, i + j).random((n,) * family.d)
        closed = _closure_mask_batch(fields < p, family, torus=True)
        out.extend(bool(x) for x in closed.reshape(b, -1).all(axis=1))
        i += b
    return out


def perc_probability(
    family: UpdateFamily, n: int, p: float, trials: int, seed: int, workers: int = 1, batch: int = 64
) -> ResultRow:
    """Fraction of p-random torus configurations that fill the whole torus."""
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    if n < 4 * max(family.radius, 1):
        raise ParameterError("torus side must be at least 4R")
    from .families import family_to_json

    t0 = time.perf_counter()
    chunks = _chunk_ranges(trials, workers)
    args = [(family_to_json(family), n, p, seed, lo, hi, batch) for lo, hi in chunks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_perc_chunk, args))
    else:
        parts = [_perc_chunk(a) for a in args]
    flags = [f for part in parts for f in part]
    hits = sum(flags)
    lo, hi = wilson_interval(hits, trials)
    ms = int((time.perf_counter() - t0) * 1000)
    return ResultRow("perc-prob", family.family_hash, n, p, hits / trials, lo, hi, trials, seed, ms)


@dataclass(frozen=True)
class BisectResult:
    ok: bool
    estimate: float | None
    bracket: tuple[float, float]
    evaluations: tuple
    reason: str | None = None


def pc_bisect(
    family: UpdateFamily,
    n: int,
    trials: int,
    bracket: tuple[float, float],
    tol: float,
    seed: int,
    batch: int = 64,
) -> BisectResult:
    """Bisection on p for an estimated filling probability of 1/2 on the
    torus, under exact monotone coupling: each trial draws one uniform field
    reused across every probed p, so per-trial outcomes are monotone in p
    and the estimated curve cannot invert."""
    lo_p, hi_p = bracket
    if not 0 <= lo_p < hi_p <= 1:
        raise ParameterError("bracket must satisfy 0 <= lo < hi <= 1")
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    d = family.d
    fields = np.empty((trials, *(n,) * d))
    for i in range(trials):
        fields[i] = stream(seed, i).random((n,) * d)

    evaluations = []

    def phi(p: float) -> float:
        frac_total = 0
        for a in range(0, trials, batch):
            chunk = fields[a : a + batch]
            closed = _closure_mask_batch(chunk < p, family, torus=True)
            frac_total += int(closed.reshape(len(chunk), -1).all(axis=1).sum())
        frac = frac_total / trials
        evaluations.append((p, frac))
        return frac

    f_lo, f_hi = phi(lo_p), phi(hi_p)
    if f_lo >= 0.5 or f_hi < 0.5:
        return BisectResult(
            False, None, bracket, tuple(evaluations),
            reason=f"bracket does not straddle 1/2: phi({lo_p})={f_lo}, phi({hi_p})={f_hi}",
        )
    a, b = lo_p, hi_p
    while b - a > tol:
        mid = (a + b) / 2
        if phi(mid) >= 0.5:
            b = mid
        else:
            a = mid
    return BisectResult(True, (a + b) / 2, bracket, tuple(evaluations))


def _one_arm_chunk(args) -> np.ndarray:
    family_doc, half, p_grid, seed, lo, hi, batch = args
    from .families import parse_family

    family = parse_family(family_doc)
    d = family.d
    shape = (2 * half,) * d
    origin = (half,) * d
    counts = np.zeros(len(p_grid), dtype=np.int64)
    i = lo
    while i < hi:
        b = min(batch, hi - i)
        fields = np.empty((b, *shape))
        for j in range(b):
            fields[j] = stream(seed, i + j).random(shape)
        for pi, p in enumerate(p_grid):
            closed = _closure_mask_batch(fields < p, family, torus=False)
            counts[pi] += int(closed[(slice(None),) + origin].sum())
        i += b
    return counts


def one_arm(
    family: UpdateFamily,
    p_grid,
    half: int,
    trials: int,
    seed: int,
    workers: int = 1,
    batch: int = 64,
) -> list[ResultRow]:
    """Estimate, for each p, the probability that the origin joins the
    closure of the p-random set restricted to the centered free-boundary
    window [-half, half)^d.  The finite window under-estimates the full
    closure, so each row is labelled a lower bound.  The per-trial shared
    field makes the curve exactly monotone in p."""
    p_grid = [float(p) for p in p_grid]
    if any(not 0 <= p <= 1 for p in p_grid):
        raise ParameterError("p values must lie in [0, 1]")
    if sorted(p_grid) != p_grid:
        raise ParameterError("p grid must be ascending")
    t0 = time.perf_counter()
    from .families import family_to_json

    chunks = _chunk_ranges(trials, workers)
    args = [(family_to_json(family), half, p_grid, seed, lo, hi, batch) for lo, hi in chunks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_one_arm_chunk, args))
    else:
        parts = [_one_arm_chunk(a) for a in args]
    counts = np.sum(parts, axis=0)
    ms = int((time.perf_counter() - t0) * 1000)
    d = family.d
    exponent = (2 * d + 2) / (3 * d + 2)
    rows = []
    for p, c in zip(p_grid, counts):
        est = int(c) / trials
        lo, hi = wilson_interval(int(c), trials)
        extra = {
            "bound_kind": "lower bound (finite window)",
            "ratio_p23": est / p ** (2 / 3) if p > 0 else math.nan,
            "ratio_proof_exponent": est / p ** exponent if p > 0 else math.nan,
        }
        rows.append(
            ResultRow("one-arm", family.family_hash, 2 * half, p, est, lo, hi, trials, seed, ms, extra)
        )
    return rows


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative experiment description; ``run_spec`` dispatches it through
    the CLI driver so library and command line share one code path."""

    mode: str
    family_file: str
    out_dir: str
    seed: int = 1
    trials: int = 100
    n: int | None = None
    window: int | None = None
    p: float | None = None
    p_grid: tuple = ()
    bracket: tuple | None = None
    tol: float = 1e-3
    k_max: int = 1
    delta1: int | None = None
    beta: float = 1.25
    cert_file: str | None = None
    config_file: str | None = None
    workers: int = 1
    plot: bool = False

    def to_argv(self) -> list[str]:
        argv = [self.mode, "--seed", str(self.seed), "--out", self.out_dir]
        if self.mode != "renorm-mc" or self.family_file:
            argv += ["--family", self.family_file]
        if self.workers != 1:
            argv += ["--workers", str(self.workers)]
        if self.plot:
            argv += ["--plot"]
        if self.mode == "perc-prob":
            argv += ["--n", str(self.n), "--p", str(self.p), "--trials", str(self.trials)]
        elif self.mode == "pc-bisect":
            argv += ["--n", str(self.n), "--bracket", str(self.bracket[0]), str(self.bracket[1]),
                     "--tol", str(self.tol), "--trials", str(self.trials)]
        elif self.mode == "one-arm":
            argv += ["--window", str(self.window), "--pgrid", ",".join(map(str, self.p_grid)),
                     "--trials", str(self.trials)]
        elif self.mode == "renorm-mc":
            argv += ["--p", str(self.p), "--kmax", str(self.k_max), "--trials", str(self.trials)]
            if self.delta1 is not None:
                argv += ["--delta1", str(self.delta1)]
        elif self.mode in ("barrier-run", "barrier"):
            argv += ["--window", str(self.window), "--kmax", str(self.k_max),
                     "--delta1", str(self.delta1 or 10), "--beta", str(self.beta)]
            if self.cert_file:
                argv += ["--cert", self.cert_file]
            if self.config_file:
                argv += ["--config", self.config_file]
            elif self.p is not None:
                argv += ["--p", str(self.p)]
        else:
            raise ParameterError(f"unknown mode {self.mode!r}")
        return argv


def run_spec(spec: ExperimentSpec) -> int:
    """Run the experiment and write results.csv / results.json (plus figures
    with ``plot``); the JSON meta echoes the seed-chain formula for replay."""
    from .cli import main as cli_main

    return cli_main(spec.to_argv())
