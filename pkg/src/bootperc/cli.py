"""Command line driver.

    bootperc <mode> --family F.json [--cert C.json] --n/--window
             --p/--pgrid/--bracket --trials --seed --out DIR

Modes: perc-prob, pc-bisect, one-arm, renorm-mc, barrier-run (alias:
barrier), stability, renorm, pinch-verify.  Exit codes: 0 success, 1
assertion/verification failure, 2 usage error.  Output files are
byte-identical for identical arguments and seed, across worker counts;
wall-clock timing goes to stderr (and into the files only with --timing).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .barrier import build_global_cover
from .errors import ParameterError, ValidationError
from .experiments import ResultRow, one_arm, pc_bisect, perc_probability
from .families import load_family
from .lattice import Configuration, LatticeWindow, load_snapshot
from .pinch import Pinch, Range, verify_height_bounds, verify_range_closed
from .renorm import build_schedule, classify, extract_clusters, independence_check, mc_bad_probability
from .rng import stream
from .report import (
    plot_bisect,
    plot_cover_mask,
    plot_estimates,
    plot_one_arm,
    write_results,
)
from .stability import StabilityCertificate, certificate_report, search_strongly_stable_set


def _add_common(sub, family_required=True):
    sub.add_argument("--family", required=family_required, help="family JSON file")
    sub.add_argument("--seed", type=int, default=1, help="64-bit master seed")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--plot", action="store_true", help="render figures next to the CSV/JSON")
    sub.add_argument("--timing", action="store_true", help="write measured ms into result files")
    sub.add_argument("--workers", type=int, default=1, help="worker processes for trials")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bootperc", description=__doc__.strip().splitlines()[0])
    sp = ap.add_subparsers(dest="mode", required=True)

    p = sp.add_parser("perc-prob", help="torus filling probability at one p")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--trials", type=int, default=200)

    p = sp.add_parser("pc-bisect", help="bisect p for filling probability 1/2")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--bracket", type=float, nargs=2, required=True, metavar=("LO", "HI"))
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--trials", type=int, default=200)

    p = sp.add_parser("one-arm", help="P(origin in closure) over a p grid")
    _add_common(p)
    p.add_argument("--window", type=int, required=True, help="window side (free boundary, centered)")
    p.add_argument("--pgrid", required=True, help="comma-separated ascending p values")
    p.add_argument("--trials", type=int, default=1000)

    p = sp.add_parser("renorm-mc", help="Monte Carlo bad-cube probability and independence")
    _add_common(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.25)
    p.add_argument("--kmax", type=int, default=2)
    p.add_argument("--delta1", type=int, default=None)
    p.add_argument("--k", type=int, default=1, help="level whose cube is classified")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--independence", action="store_true", help="also run the two-cube independence check")

    p = sp.add_parser("renorm", help="classify a sampled window and dump counts and clusters")
    _add_common(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.25)
    p.add_argument("--kmax", type=int, default=2)
    p.add_argument("--delta1", type=int, default=None)
    p.add_argument("--window", type=int, required=True, help="window side, multiple of Delta_kmax")
    p.add_argument("--trials", type=int, default=1)

    p = sp.add_parser("stability", help="search and certify a covering direction set")
    _add_common(p)
    p.add_argument("--budget", type=int, default=10000)

    for name in ("barrier-run", "barrier"):
        p = sp.add_parser(name, help="build and verify the global cover")
        _add_common(p)
        p.add_argument("--cert", help="certificate JSON (searched if omitted)")
        p.add_argument("--config", help="snapshot file of initial sites (else sampled with --p)")
        p.add_argument("--p", type=float, help="sampling density when --config is omitted")
        p.add_argument("--window", type=int, required=True, help="window side, multiple of Delta_{kmax+1}")
        p.add_argument("--kmax", type=int, default=1)
        p.add_argument("--delta1", type=int, default=10)
        p.add_argument("--beta", type=float, default=1.25)
        p.add_argument("--budget", type=int, default=10000)

    p = sp.add_parser("pinch-verify", help="verify height bounds and range closedness")
    _add_common(p)
    p.add_argument("--pinch", required=True, help="pinch JSON file")
    p.add_argument("--window", type=int, default=64, help="window side for the closedness scan")
    p.add_argument("--samples", type=int, default=2000)
    return ap


def _meta(args, **kw) -> dict:
    meta = {"mode": args.mode, "seed": args.seed, "argv_mode": args.mode}
    meta.update(kw)
    return meta


def _run_perc(args) -> int:
    family = load_family(args.family)
    row = perc_probability(family, args.n, args.p, args.trials, args.seed, workers=args.workers)
    csv_path, _ = write_results(args.out, [row], _meta(args, n=args.n, p=args.p), args.timing)
    if args.plot:
        plot_estimates([row], os.path.join(args.out, "results_perc-prob.png"))
    print(f"perc-prob estimate {row.estimate} [{row.lo}, {row.hi}] ({row.ms} ms) -> {csv_path}", file=sys.stderr)
    return 0


def _run_bisect(args) -> int:
    family = load_family(args.family)
    res = pc_bisect(family, args.n, args.trials, tuple(args.bracket), args.tol, args.seed)
    rows = [
        ResultRow("pc-bisect", family.family_hash, args.n, p, frac, frac, frac, args.trials, args.seed)
        for p, frac in res.evaluations
    ]
    if res.ok:
        rows.append(
            ResultRow("pc-bisect", family.family_hash, args.n, res.estimate, 0.5, 0.5, 0.5, args.trials, args.seed,
                      extra={"kind": "estimate"})
        )
    meta = _meta(args, bracket=list(args.bracket), tol=args.tol, ok=res.ok, reason=res.reason,
                 estimate=res.estimate,
                 note="finite-n crossing proxy for the critical probability (the infinite-lattice "
                      "event has probability 0 or 1)")
    write_results(args.out, rows, meta, args.timing)
    if args.plot:
        plot_bisect(res, os.path.join(args.out, "results_pc-bisect.png"))
    if not res.ok:
        print(f"pc-bisect: {res.reason}", file=sys.stderr)
        return 1
    print(f"pc-bisect estimate {res.estimate}", file=sys.stderr)
    return 0


def _run_one_arm(args) -> int:
    family = load_family(args.family)
    p_grid = [float(x) for x in args.pgrid.split(",")]
    rows = one_arm(family, p_grid, args.window // 2, args.trials, args.seed, workers=args.workers)
    meta = _meta(args, window=args.window, pgrid=p_grid,
                 note="finite-window estimates are lower bounds for the infinite-lattice quantity")
    write_results(args.out, rows, meta, args.timing)
    if args.plot:
        plot_one_arm(rows, os.path.join(args.out, "results_one-arm.png"))
    for r in rows:
        print(f"one-arm p={r.p} estimate={r.estimate} ratio/p^(2/3)={r.extra['ratio_p23']:.4g}", file=sys.stderr)
    return 0


def _run_renorm_mc(args) -> int:
    schedule = build_schedule(2, args.p, args.beta, args.kmax, args.delta1)
    est = mc_bad_probability(schedule, args.k, args.p, args.trials, args.seed)
    fam_hash = "-"
    if args.family:
        fam_hash = load_family(args.family).family_hash
    rows = [
        ResultRow("renorm-mc", fam_hash, schedule.delta(args.k), args.p, est.estimate, est.lo, est.hi,
                  args.trials, args.seed,
                  extra={"reference_bound": est.reference_bound, "exact_level1": est.exact_level1,
                         "within_bound": est.within_bound})
    ]
    meta = _meta(args, k=args.k, deltas=list(schedule.deltas), beta=args.beta)
    if args.independence:
        rep = independence_check(schedule, args.k, args.p, args.trials, args.seed)
        meta["independence"] = {
            "p1": rep.p1, "p2": rep.p2, "p_both": rep.p_both,
            "discrepancy": rep.discrepancy, "sigma": rep.sigma, "studentized": rep.studentized,
        }
    write_results(args.out, rows, meta, args.timing)
    if args.plot:
        plot_estimates(rows, os.path.join(args.out, "results_renorm-mc.png"))
    print(f"renorm-mc level {args.k}: estimate {est.estimate} vs bound {est.reference_bound}", file=sys.stderr)
    return 0


def _run_renorm(args) -> int:
    schedule = build_schedule(2, args.p, args.beta, args.kmax, args.delta1)
    fam_hash = load_family(args.family).family_hash if args.family else "-"
    top = schedule.delta(schedule.k_max)
    side = args.window - args.window % top
    if side <= 0:
        raise ParameterError("window smaller than the top-level cube")
    half = side // 2 - (side // 2) % top
    window = LatticeWindow((-half, -half), (side - half, side - half))
    os.makedirs(args.out, exist_ok=True)
    lines = ["trial,level,good,bad,indeterminate"]
    clusters_doc = {}
    for t in range(args.trials):
        field = stream(args.seed, t).random(window.shape)
        cfg = Configuration(window, field < args.p)
        hier = classify(cfg, schedule)
        for k in range(1, schedule.k_max + 1):
            c = hier.counts(k)
            lines.append(f"{t},{k},{c['good']},{c['bad']},{c['indeterminate']}")
        clusters_doc[str(t)] = {
            str(k): [
                {"members": [list(m) for m in cl.members], "anchor": list(cl.anchor)}
                for cl in extract_clusters(hier, k)
            ]
            for k in range(1, schedule.k_max)
        }
    csv_path = os.path.join(args.out, "results.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(args.out, "results.json"), "w", encoding="utf-8") as fh:
        json.dump({"meta": {"mode": "renorm", "seed": args.seed, "family_hash": fam_hash,
                            "deltas": list(schedule.deltas)},
                   "clusters": clusters_doc}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"renorm: wrote {csv_path}", file=sys.stderr)
    return 0


def _run_stability(args) -> int:
    family = load_family(args.family)
    res = search_strongly_stable_set(family, args.budget, args.seed)
    print(certificate_report(res, family))
    os.makedirs(args.out, exist_ok=True)
    out_doc = {"ok": res.ok, "reason": res.reason, "candidates_tested": res.candidates_tested,
               "certificate": res.certificate.to_json() if res.ok else None}
    with open(os.path.join(args.out, "certificate.json"), "w", encoding="utf-8") as fh:
        json.dump(out_doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0 if res.ok else 1


def _run_barrier(args) -> int:
    family = load_family(args.family)
    if args.cert:
        with open(args.cert, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        cert = StabilityCertificate.from_json(doc.get("certificate", doc))
    else:
        res = search_strongly_stable_set(family, args.budget, args.seed)
        if not res.ok:
            print(f"barrier: no certificate: {res.reason}", file=sys.stderr)
            return 1
        cert = res.certificate
    schedule = build_schedule(family.d, 1e-8, args.beta, args.kmax + 1, args.delta1)
    top = schedule.delta(schedule.k_max)
    side = args.window - args.window % top
    half = side // 2 - (side // 2) % top
    window = LatticeWindow((-half,) * family.d, (side - half,) * family.d)
    if args.config:
        cfg_in = load_snapshot(args.config)
        cfg = Configuration.from_sites(window, cfg_in.sites())
    elif args.p is not None:
        field = stream(args.seed, 0).random(window.shape)
        cfg = Configuration(window, field < args.p)
    else:
        print("barrier: provide --config or --p", file=sys.stderr)
        return 2
    gc = build_global_cover(cfg, schedule, cert, args.kmax, family=family)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "global_cover.json"), "w", encoding="utf-8") as fh:
        fh.write(gc.dumps() + "\n")
    report_lines = [
        f"covers built: {len(gc.covers)}",
        f"construction failures: {len(gc.failures)}",
        f"pairwise relations: {[p['relation'] for p in gc.pairwise]}",
        f"closedness violations: {len(gc.closedness_violations)}",
        f"uncovered sites: {len(gc.uncovered_sites)}",
        f"closure contained: {gc.closure_contained}",
        f"origin cubes good: {gc.origin_cubes_good}; origin in cover: {gc.origin_in_cover}",
        f"ok: {gc.ok}",
    ]
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_lines) + "\n")
    rows = [ResultRow("barrier-run", family.family_hash, side, args.p, 1.0 if gc.ok else 0.0,
                      1.0 if gc.ok else 0.0, 1.0 if gc.ok else 0.0, 1, args.seed)]
    write_results(args.out, rows, _meta(args, kmax=args.kmax, delta1=args.delta1), args.timing)
    if args.plot:
        t_mask = np.zeros(window.shape, dtype=bool)
        for c in gc.covers:
            lo, mask = c.rasterize(clip=window)
            if mask.size:
                sl = tuple(slice(l - wl, l - wl + s) for l, wl, s in zip(lo, window.lower, mask.shape))
                t_mask[sl] |= mask
        plot_cover_mask(t_mask, cfg.sites(), window, os.path.join(args.out, "results_barrier.png"))
    print("\n".join(report_lines), file=sys.stderr)
    return 0 if gc.ok else 1


def _run_pinch_verify(args) -> int:
    with open(args.pinch, "r", encoding="utf-8") as fh:
        pinch = Pinch.from_json(json.load(fh))
    family = load_family(args.family)
    rep = verify_height_bounds(pinch, args.samples, args.seed)
    half = args.window // 2
    window = LatticeWindow((-half,) * pinch.u.d, (half,) * pinch.u.d)
    viol = verify_range_closed(Range(pinch), window, family)
    lines = [
        f"height bounds: {'PASS' if rep.ok else 'FAIL'}",
        f"  worst step ratio {rep.max_step_ratio:.6g}, total ratio {rep.max_total_ratio:.6g}, "
        f"lipschitz ratio {rep.max_lipschitz_ratio:.6g}, gradient ratio {rep.max_gradient_ratio:.6g}",
        f"  separation violations: {len(rep.separation_violations)}",
        f"range closedness: {'PASS' if not viol else 'FAIL'} ({len(viol)} violations)",
    ]
    if viol:
        lines += [f"  first violation at site {viol[0][0]} rule {viol[0][1]}"]
    print("\n".join(lines))
    return 0 if rep.ok and not viol else 1


_DISPATCH = {
    "perc-prob": _run_perc,
    "pc-bisect": _run_bisect,
    "one-arm": _run_one_arm,
    "renorm-mc": _run_renorm_mc,
    "renorm": _run_renorm,
    "stability": _run_stability,
    "barrier-run": _run_barrier,
    "barrier": _run_barrier,
    "pinch-verify": _run_pinch_verify,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return _DISPATCH[args.mode](args)
    except (ParameterError, ValidationError, FileNotFoundError) as e:
        print(f"bootperc: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
