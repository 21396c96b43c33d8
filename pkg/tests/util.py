"""Shared generators for randomized tests: small families, directions, configurations."""

import numpy as np

from bootperc.families import UpdateFamily
from bootperc.lattice import Configuration, LatticeWindow
from bootperc.rng import stream


def random_family(rng, d=2, max_rules=4, max_sites=4, coord_range=2) -> UpdateFamily:
    """A random small family with non-empty, duplicate-free rules in [-c, c]^d \\ {0}."""
    n_rules = int(rng.integers(1, max_rules + 1))
    rules = []
    seen = set()
    for _ in range(n_rules):
        n_sites = int(rng.integers(1, max_sites + 1))
        sites = set()
        guard = 0
        while len(sites) < n_sites and guard < 100:
            guard += 1
            v = tuple(int(c) for c in rng.integers(-coord_range, coord_range + 1, size=d))
            if any(v):
                sites.add(v)
        rule = tuple(sorted(sites))
        if rule and frozenset(rule) not in seen:
            seen.add(frozenset(rule))
            rules.append(rule)
    return UpdateFamily(d, tuple(rules))


def random_direction_vector(rng, d=2, height=5) -> tuple:
    """A random non-zero integer vector, the rational representative of a direction."""
    while True:
        v = tuple(int(c) for c in rng.integers(-height, height + 1, size=d))
        if any(v):
            return v


def random_configuration(rng, window: LatticeWindow, p: float) -> Configuration:
    field = rng.random(window.shape)
    return Configuration(window, field < p)


def trial_rng(master: int, i: int) -> np.random.Generator:
    return stream(master, i)


def tangent_basis(u_arr: np.ndarray) -> np.ndarray:
    d = len(u_arr)
    basis = []
    for e in np.eye(d):
        v = e - (e @ u_arr) * u_arr
        for b in basis:
            v -= (v @ b) * b
        n = np.linalg.norm(v)
        if n > 1e-9:
            basis.append(v / n)
    return np.array(basis)


def random_pinch(rng, u, schedule, gamma, k, lam=0.0, span=None, max_points=3,
                 cross_level_clearance=True):
    """Random pinch with per-level separation and (by default) enough
    clearance between bump supports across levels that no two supports come
    within two lattice steps of each other."""
    from bootperc.pinch import Pinch

    ua = np.asarray(u.vector)
    basis = tangent_basis(ua)
    if span is None:
        span = 4.0 * schedule.g(min(k, schedule.k_max)) if k else 10.0
    placed = []  # (point, support_radius)
    z_levels = []
    for i in range(1, k + 1):
        pts = []
        support_i = (np.pi / 64.0) * schedule.g(i)
        want = int(rng.integers(0, max_points + 1))
        tries = 0
        while len(pts) < want and tries < 200:
            tries += 1
            coeff = rng.uniform(-span, span, size=len(basis))
            z = coeff @ basis
            ok = all(np.linalg.norm(z - q) > schedule.g(i) / 2 + 1e-6 for q in pts)
            if ok and cross_level_clearance:
                ok = all(
                    np.linalg.norm(z - q) > support_i + rq + 2.5 for q, rq in placed
                )
            if ok:
                pts.append(z)
        for z in pts:
            placed.append((z, support_i))
        z_levels.append(np.array(pts).reshape(-1, len(ua)))
    return Pinch(u, lam, tuple(z_levels), schedule, gamma)
