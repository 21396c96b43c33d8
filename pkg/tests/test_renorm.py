import itertools
import math

import numpy as np
import pytest

from bootperc.errors import ParameterError
from bootperc.lattice import Configuration, LatticeWindow
from bootperc.renorm import (
    BAD,
    GOOD,
    INDET,
    SparseHierarchy,
    box_gap_sq,
    build_schedule,
    classify,
    cube_box,
    extract_clusters,
    independence_check,
    influence_radius,
    mc_bad_probability,
    wilson_interval,
)
from bootperc.rng import stream


def sched(p=1e-8, beta=1.25, k_max=3, d=2, delta1=None):
    return build_schedule(d, p, beta, k_max, delta1)


def test_schedule_values():
    s = sched()
    assert s.deltas == (10, 30, 150)
    assert math.isclose(s.g(1), 10 ** 1.25)
    assert math.isclose(s.g(1), 17.78279410038923)


def test_schedule_override_and_errors():
    assert sched(delta1=8).deltas[0] == 8
    with pytest.raises(ParameterError):
        build_schedule(2, 1.5, 1.25, 2)
    with pytest.raises(ParameterError):
        build_schedule(2, 1e-8, 1.6, 2)
    with pytest.raises(ParameterError):
        build_schedule(2, 0.5, 1.25, 1)  # Delta_1 = 1 degenerate


def test_schedule_side_conditions_recorded():
    s = sched()
    names = [c[0] for c in s.side_conditions]
    assert any("3*g_1 < Delta_2/3" in n for n in names)
    conds = {c[0]: c[3] for c in s.side_conditions}
    # desk scale: 3*g_1 = 53.3 is not < Delta_2/3 = 10; recorded, not fatal
    assert conds["3*g_1 < Delta_2/3"] is False


def test_influence_radius_values():
    s = sched()
    assert influence_radius(s, 1) == 0.0
    assert math.isclose(influence_radius(s, 2), 31.92492972412018)
    assert math.isclose(influence_radius(s, 3), 144.5617561749345)


def window(lo, hi):
    return LatticeWindow((lo, lo), (hi, hi))


def test_classify_empty_all_good():
    s = sched(k_max=2)
    cfg = Configuration(window(0, 300))
    h = classify(cfg, s)
    assert h.counts(1) == {"good": 900, "bad": 0, "indeterminate": 0}
    assert h.counts(2)["bad"] == 0
    assert h.counts(2)["good"] > 0


def test_classify_single_site():
    s = sched(k_max=2)
    cfg = Configuration.from_sites(window(0, 300), [(150, 150)])
    h = classify(cfg, s)
    assert h.state(1, (15, 15)) == BAD
    assert h.counts(1)["bad"] == 1
    assert h.counts(2)["bad"] == 0  # one bad cube cannot form a non-adjacent pair


def test_classify_witnessed_bad_two_cube():
    # two non-adjacent bad (1)-cubes, both within g_1 of the (2)-cube [150,180)^2
    s = sched(k_max=2)
    cfg = Configuration.from_sites(window(0, 300), [(165, 165), (185, 165)])
    h = classify(cfg, s)
    assert h.state(1, (16, 16)) == BAD
    assert h.state(1, (18, 16)) == BAD
    assert h.state(2, (5, 5)) == BAD
    # interior (2)-cube far away is good
    assert h.state(2, (1, 1)) == GOOD
    # the witness pair is stored and valid
    q1, q2 = h.level(2).witnesses[(5, 5)]
    assert max(abs(a - b) for a, b in zip(q1, q2)) >= 2
    g = s.g(1)
    lo_q, hi_q = cube_box((5, 5), 30)
    for j in (q1, q2):
        assert box_gap_sq(*cube_box(j, 10), lo_q, hi_q) <= g * g


def test_classify_window_misaligned():
    s = sched(k_max=2)
    with pytest.raises(ParameterError):
        classify(Configuration(window(0, 310)), s)


def test_classify_edge_cubes_indeterminate():
    s = sched(k_max=2)
    h = classify(Configuration(window(0, 300)), s)
    # corner (2)-cube needs level-1 candidates outside the window
    assert h.state(2, (0, 0)) == INDET
    # interior cube is determinate
    assert h.state(2, (5, 5)) == GOOD


def test_indeterminacy_is_geometric_and_classification_monotone():
    s = sched(k_max=2)
    rng = stream(41, 0)
    w = window(0, 300)
    field = rng.random(w.shape)
    small = Configuration(w, field < 0.001)
    large = Configuration(w, field < 0.004)
    hs, hl = classify(small, s), classify(large, s)
    for k in (1, 2):
        st_s, st_l = hs.level(k).states, hl.level(k).states
        assert np.array_equal(st_s == INDET, st_l == INDET)
        # goodness is decreasing: bad never turns good as sites are added
        assert not np.any((st_s == BAD) & (st_l == GOOD))


def test_classify_deterministic():
    s = sched(k_max=2)
    rng = stream(43, 0)
    cfg = Configuration(window(0, 300), rng.random((300, 300)) < 0.002)
    h1, h2 = classify(cfg, s), classify(cfg, s)
    for k in (1, 2):
        assert np.array_equal(h1.level(k).states, h2.level(k).states)


def test_classify_locality_outside_influence():
    s = sched(k_max=2)
    w = window(0, 300)
    base = Configuration.from_sites(w, [(165, 165), (185, 165)])
    mod = Configuration.from_sites(w, [(165, 165), (185, 165), (15, 290)])
    h1, h2 = classify(base, s), classify(mod, s)
    # the far site is beyond influence_radius(2) of the cube at (5,5)
    assert h1.state(2, (5, 5)) == h2.state(2, (5, 5)) == BAD
    assert h1.state(2, (4, 4)) == h2.state(2, (4, 4))


def test_extract_clusters_cases():
    s = sched(k_max=2)
    w = window(0, 300)
    # isolated bad cube touching good (2)-cubes -> singleton cluster
    h = classify(Configuration.from_sites(w, [(155, 155)]), s)
    clusters = extract_clusters(h, 1)
    assert len(clusters) == 1
    assert clusters[0].members == ((15, 15),)
    assert clusters[0].anchor == (150, 150)
    # two diagonally adjacent bad cubes -> one cluster of size 2
    h = classify(Configuration.from_sites(w, [(155, 155), (165, 165)]), s)
    clusters = extract_clusters(h, 1)
    assert len(clusters) == 1
    assert set(clusters[0].members) == {(15, 15), (16, 16)}


def test_cluster_skipped_when_all_parents_bad():
    # every (2)-cube touching the central bad (1)-cluster is bad: plant
    # witness pairs around all neighbouring (2)-cubes
    s = sched(k_max=3)
    w = window(0, 600)
    sites = [(305, 305)]
    # make all (2)-cubes within corner contact of cube (30,30) bad
    for cx in (8, 9, 10, 11):
        for cy in (8, 9, 10, 11):
            x0, y0 = cx * 30, cy * 30
            sites += [(x0 + 5, y0 + 5), (x0 + 25, y0 + 25)]
    cfg = Configuration.from_sites(w, sites)
    h = classify(cfg, s)
    for cx in (9, 10, 11):
        for cy in (9, 10, 11):
            assert h.state(2, (cx, cy)) == BAD
    clusters = extract_clusters(h, 1)
    assert all((30, 30) not in c.members for c in clusters)


def test_cluster_members_pairwise_adjacent_and_bounded():
    s = sched(k_max=2)
    rng = stream(47, 0)
    w = window(0, 300)
    for _ in range(10):
        cfg = Configuration(w, rng.random((300, 300)) < 0.004)
        h = classify(cfg, s)
        for c in extract_clusters(h, 1):
            assert 1 <= c.size <= 4
            for a, b in itertools.combinations(c.members, 2):
                assert max(abs(x - y) for x, y in zip(a, b)) <= 1


def test_sparse_hierarchy_matches_dense_on_interior():
    s = sched(k_max=2)
    rng = stream(53, 0)
    w = window(0, 300)
    cfg = Configuration(w, rng.random((300, 300)) < 0.003)
    h = classify(cfg, s)
    sp = SparseHierarchy.from_sites(cfg.sites(), s, 2)
    assert set(map(tuple, h.level(1).bad_indices())) == sp.bad_indices(1)
    for idx in h.level(2).indices():
        if h.state(2, idx) == INDET:
            continue
        assert (h.state(2, idx) == BAD) == sp.is_bad(2, idx)


def test_wilson_interval_closed_form():
    lo, hi = wilson_interval(50, 100)
    z = 1.959963984540054
    denom = 1 + z * z / 100
    center = (0.5 + z * z / 200) / denom
    half = z * math.sqrt(0.25 / 100 + z * z / 40000) / denom
    assert math.isclose(lo, center - half)
    assert math.isclose(hi, center + half)
    lo0, hi0 = wilson_interval(0, 10)
    assert lo0 == 0.0 and hi0 > 0


def test_mc_bad_probability_level1_exact_and_zero_p():
    s = sched(k_max=2)
    est = mc_bad_probability(s, 1, 1e-3, trials=20_000, seed=99)
    exact = 1 - (1 - 1e-3) ** 100
    assert math.isclose(est.exact_level1, exact)
    assert est.lo - 0.01 <= exact <= est.hi + 0.01
    est0 = mc_bad_probability(s, 1, 0.0, trials=500, seed=3)
    assert est0.estimate == 0.0


def test_mc_bad_probability_bound_fields():
    s = sched(k_max=2)
    est = mc_bad_probability(s, 1, 1e-8, trials=10, seed=1)
    assert math.isclose(est.reference_bound, 1e-6)


def brute_force_bad2(sites, s):
    """Independent reclassification of the (2)-cube [0, Delta_2)^d: straight
    from the definition with per-pair distance checks."""
    d1, d2, g1 = s.delta(1), s.delta(2), s.g(1)
    bad1 = {tuple(c // d1 for c in site) for site in sites}
    lo_q, hi_q = (0, 0), (d2, d2)
    near = [j for j in bad1 if box_gap_sq(*cube_box(j, d1), lo_q, hi_q) <= g1 * g1]
    for a, b in itertools.combinations(near, 2):
        if max(abs(x - y) for x, y in zip(a, b)) >= 2:
            return True
    return False


def test_mc_level2_matches_bruteforce_oracle_exactly():
    s = sched(k_max=2)
    p, trials, seed = 1e-3, 400, 1234
    est = mc_bad_probability(s, 2, p, trials=trials, seed=seed)
    # replay the identical sample stream and classify each sample naively
    from bootperc.renorm import _target_cube_classifier

    lower, shape1, _ = _target_cube_classifier(s, 2)
    site_shape = tuple(n * s.delta(1) for n in shape1)
    count = 0
    for i in range(trials):
        field = stream(seed, i).random(site_shape)
        idx = np.argwhere(field < p)
        sites = [tuple(int(c) + lower[a] * 1 for a, c in enumerate(pt)) for pt in idx]
        sites = [tuple(int(c) + lower[a] for a, c in enumerate(pt)) for pt in idx]
        if brute_force_bad2(sites, s):
            count += 1
    assert count == est.bad_count


def test_independence_nonadjacent_within_3_sigma():
    s = sched(k_max=2)
    rep = independence_check(s, 2, 5e-4, trials=20_000, seed=7)
    assert abs(rep.studentized) < 3.0


def test_independence_same_cube_control():
    s = sched(k_max=2)
    rep = independence_check(s, 2, 5e-4, trials=5_000, seed=7, same_cube=True)
    assert rep.studentized > 10.0
    assert math.isclose(rep.discrepancy, rep.p1 * (1 - rep.p1), abs_tol=1e-12)
