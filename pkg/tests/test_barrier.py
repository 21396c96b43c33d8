import math

import numpy as np
import pytest

from bootperc.barrier import (
    PostAssertionFailure,
    build_cover,
    build_global_cover,
    check_pairwise,
    construct_pinch,
    extend_pinch,
    slab_membership,
    verify_cover_closed,
)
from bootperc.errors import HypothesisViolation
from bootperc.families import neighbourhood_family
from bootperc.lattice import Configuration, LatticeWindow, closure
from bootperc.pinch import Pinch, Range, height
from bootperc.renorm import SparseHierarchy, build_schedule, classify, extract_clusters
from bootperc.stability import search_strongly_stable_set

N3 = neighbourhood_family(2, 3)
CERT = search_strongly_stable_set(N3, budget=10_000, seed=5).certificate
GAMMA = CERT.gamma
U = CERT.directions[-1]  # (2, 1)/sqrt(5)

# Synthetic scales: large enough that bump supports dwarf cube diameters, the
# regime in which the construction's own post-conditions are satisfiable.
BIG = build_schedule(2, 1e-8, 1.49, 2, delta1_override=32768)
DESK = build_schedule(2, 1e-8, 1.25, 3)  # Delta = (10, 30, 150)


def desk_window():
    return LatticeWindow((-450, -450), (600, 600))


def test_extend_pinch_no_clusters_in_slab():
    hier = SparseHierarchy.from_sites([], BIG, 2)
    flat = Pinch(U, 0.0, (np.zeros((0, 2)),), BIG, GAMMA)
    z, extended, diag = extend_pinch(flat, 1, hier)
    assert len(z) == 0
    assert diag["clusters_in_slab"] == 0
    assert height(extended, (0.0, 0.0)) == 0.0


def test_extend_pinch_single_cluster_bump():
    site = (4096, -8192)  # <site, u> = 0: squarely in the slab
    hier = SparseHierarchy.from_sites([site], BIG, 2)
    flat = Pinch(U, 0.0, (np.zeros((0, 2)),), BIG, GAMMA)
    z, extended, diag = extend_pinch(flat, 1, hier)
    assert len(z) == 1
    assert diag["clusters_in_slab"] == 1
    assert diag["center_fallbacks"] == 0
    lift = height(extended, z[0]) - 0.0
    assert math.isclose(lift, 16 * GAMMA * BIG.delta(1))
    # the cluster's lattice points are now strictly outside the 4-gamma slab
    assert not slab_membership(extended, site, 4 * GAMMA * BIG.delta(1))


def test_extend_pinch_two_clusters_separated():
    # far enough apart that no (2)-cube sees both as witnesses, close enough
    # along u that both clusters sit in the slab
    m = 10_000_000
    sites = [(4096, -8192), (4096 + m, -8192 - 2 * m)]
    hier = SparseHierarchy.from_sites(sites, BIG, 2)
    assert not hier.bad_indices(2)
    flat = Pinch(U, 0.0, (np.zeros((0, 2)),), BIG, GAMMA)
    z, extended, diag = extend_pinch(flat, 1, hier)
    assert len(z) == 2
    assert np.linalg.norm(z[0] - z[1]) > BIG.g(1) / 2


def test_extend_pinch_hypothesis_violation():
    # plant a bad (2)-cube straddling the base: two non-adjacent bad
    # (1)-clusters close to each other force it
    d1 = BIG.delta(1)
    sites = [(0, 0), (3 * d1, 1)]
    hier = SparseHierarchy.from_sites(sites, BIG, 2)
    assert hier.bad_indices(2)
    flat = Pinch(U, 0.0, (np.zeros((0, 2)),), BIG, GAMMA)
    with pytest.raises(HypothesisViolation, match="level-2"):
        extend_pinch(flat, 1, hier)


def test_construct_pinch_flat_and_single_divert():
    hier = SparseHierarchy.from_sites([], BIG, 2)
    p, diag = construct_pinch(U, 5.0, hier, 0, GAMMA)
    assert p.k == 0 and height(p, (3.0, 4.0)) == 5.0
    site = (4096, -8192)
    hier = SparseHierarchy.from_sites([site], BIG, 2)
    p, diag = construct_pinch(U, 0.0, hier, 1, GAMMA)
    assert len(p.z_levels[0]) == 1
    assert diag[0]["clusters_in_slab"] == 1


def test_desk_scale_level2_extension_fails_post_assertion():
    # Negative control, pinned: at Delta_1 = 10 the bump support radius is
    # ~0.87 lattice units while a level-1 cube's shadow is ~14 wide, so one
    # bump cannot lift the slab off its cluster; the goodness post-condition
    # must fail rather than emit an unverified surface.
    sites = [(165, 175), (185, 175)]
    hier = SparseHierarchy.from_sites(sites, DESK, 2)
    x_q = np.array([150.0, 150.0])
    lam = float(x_q @ np.array(U.vector)) + 6 * DESK.delta(2)
    flat = Pinch(U, lam, (np.zeros((0, 2)),), DESK, GAMMA)
    with pytest.raises(PostAssertionFailure, match="still meets the extended slab"):
        extend_pinch(flat, 1, hier)


def global_cover(sites, k_max=2, family=N3):
    cfg = Configuration.from_sites(desk_window(), sites)
    return build_global_cover(cfg, DESK, CERT, k_max, family=family)


def test_global_cover_empty_configuration():
    gc = global_cover([])
    assert gc.ok
    assert gc.covers == [] and gc.uncovered_sites == []
    assert gc.closure_contained is True
    assert gc.origin_in_cover is False


def test_global_cover_single_site():
    gc = global_cover([(165, 165)])
    assert gc.ok, (gc.failures, gc.closedness_violations[:3])
    assert len(gc.covers) == 1
    cov = gc.covers[0]
    assert cov.level == 1
    assert cov.anchor == (160, 160)
    assert gc.closure_contained is True
    assert gc.origin_in_cover is False and gc.origin_cubes_good
    # flat cover: every pinch has an empty augmentation
    assert all(not len(z) for r in cov.ranges for z in r.pinch.z_levels)


def test_global_cover_single_cluster():
    gc = global_cover([(165, 165), (172, 171)])
    assert gc.ok, gc.failures
    assert len(gc.covers) == 1
    assert gc.covers[0].cluster.size == 2
    assert gc.closure_contained is True


def test_global_cover_two_far_singletons_strongly_disjoint():
    gc = global_cover([(-285, -290), (165, 165)])
    assert gc.ok, gc.failures
    assert len(gc.covers) == 2
    assert len(gc.pairwise) == 1
    assert gc.pairwise[0]["relation"] == "strongly_disjoint"


def test_global_cover_closure_oracle_containment():
    sites = [(165, 165), (166, 165), (165, 166), (166, 166), (167, 165)]
    gc = global_cover(sites)
    assert gc.ok, gc.failures
    cfg = Configuration.from_sites(desk_window(), sites)
    closed = closure(cfg, N3)
    lo, mask = gc.covers[0].rasterize()
    for s in closed.sites():
        idx = tuple(a - b for a, b in zip(s, lo))
        assert mask[idx]


def test_global_cover_level2_cluster_fails_with_structured_report():
    # two non-adjacent bad (1)-clusters within g_1 of one (2)-cube force a
    # level-2 cluster; at desk scale its cover construction must abort in
    # the extension post-condition, never emitting an unverified barrier
    gc = global_cover([(165, 175), (185, 175)])
    assert not gc.ok
    assert gc.failures
    f = gc.failures[0]
    assert f["level"] == 2
    assert f["error"] == "PostAssertionFailure"
    assert "still meets the extended slab" in f["message"]
    # the level-1 clusters sit interior to the bad (2)-cube, so no level-1
    # covers exist and the sites are reported uncovered
    assert gc.uncovered_sites


def test_verify_cover_closed_flat_cover():
    gc = global_cover([(165, 165)])
    cov = gc.covers[0]
    lo, hi = cov.bounding_box()
    w = LatticeWindow(lo, hi)
    assert verify_cover_closed(cov, w, N3) == []


def test_check_pairwise_self_nested():
    gc = global_cover([(165, 165)])
    res = check_pairwise(gc.covers[0], gc.covers[0], N3.radius)
    assert res["relation"] == "nested"


def test_check_pairwise_raster_paths():
    gc = global_cover([(165, 165), (-135, 165)])
    assert len(gc.covers) == 2
    a, b = gc.covers
    res = check_pairwise(a, b, N3.radius)
    assert res["relation"] == "strongly_disjoint"
    # synthetic nested: a small flat cover hand-built inside a big one
    small = gc.covers[0]
    big_ranges = tuple(
        Range(Pinch(r.pinch.u, r.pinch.lam + 600.0, r.pinch.z_levels, DESK, GAMMA))
        for r in small.ranges
    )
    big = type(small)(
        small.level, small.cluster, small.anchor, big_ranges, GAMMA * 8, DESK
    )
    res = check_pairwise(small, big, N3.radius)
    assert res["relation"] == "nested"


def test_global_cover_serialization_deterministic():
    gc1 = global_cover([(165, 165), (172, 171)])
    gc2 = global_cover([(165, 165), (172, 171)])
    assert gc1.dumps() == gc2.dumps()


def test_build_cover_directly_matches_global():
    cfg = Configuration.from_sites(desk_window(), [(165, 165)])
    hier = classify(cfg, DESK)
    clusters = extract_clusters(hier, 1)
    assert len(clusters) == 1
    from bootperc.barrier import _WindowBadAdapter

    cov = build_cover(clusters[0], _WindowBadAdapter(hier), cfg.sites(), CERT)
    assert cov.level == 1
    assert cov.contains((165.0, 165.0))
    assert not cov.contains((165.0 + 2 * GAMMA * 10, 165.0))
