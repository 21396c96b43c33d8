"""Delimited output and figures for experiment runs.

CSV and JSON are the machine contract: bit-identical for identical
(spec, seed), which is why the wall-time column is zeroed unless timing
output is explicitly requested.  Figures are an optional convenience
rendered next to the delimited files.
"""

from __future__ import annotations

import json
import os

CSV_HEADER = "mode,family_hash,n,p,estimate,lo,hi,trials,seed,ms"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows, include_timing: bool = False) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        ms = r.ms if include_timing else 0
        lines.append(
            ",".join(
                _fmt(v)
                for v in (r.mode, r.family_hash, r.n, r.p, r.estimate, r.lo, r.hi, r.trials, r.seed, ms)
            )
        )
    return "\n".join(lines) + "\n"


def rows_to_json(rows, meta: dict, include_timing: bool = False) -> str:
    doc = {
        "meta": dict(meta),
        "rows": [
            {
                "mode": r.mode,
                "family_hash": r.family_hash,
                "n": r.n,
                "p": r.p,
                "estimate": r.estimate,
                "lo": r.lo,
                "hi": r.hi,
                "trials": r.trials,
                "seed": r.seed,
                "ms": r.ms if include_timing else 0,
                "extra": r.extra,
            }
            for r in rows
        ],
    }
    doc["meta"].setdefault(
        "seed_chain",
        "trial i uses PCG64 seeded with splitmix64(master + (i+1)*0x9E3779B97F4A7C15)",
    )
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_results(outdir, rows, meta: dict, include_timing: bool = False) -> tuple[str, str]:
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "results.csv")
    json_path = os.path.join(outdir, "results.json")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows, include_timing))
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(rows_to_json(rows, meta, include_timing))
    return csv_path, json_path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_estimates(rows, path, logx: bool = False) -> str:
    """Estimate-vs-p curve with Wilson error bars."""
    plt = _pyplot()
    xs = [r.p for r in rows]
    ys = [r.estimate for r in rows]
    yerr = [[r.estimate - r.lo for r in rows], [r.hi - r.estimate for r in rows]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, ys, yerr=yerr, fmt="o-", capsize=3)
    if logx:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("p")
    ax.set_ylabel("estimate")
    ax.set_title(rows[0].mode if rows else "estimates")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_one_arm(rows, path) -> str:
    plt = _pyplot()
    xs = [r.p for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.errorbar(
        xs,
        [r.estimate for r in rows],
        yerr=[[r.estimate - r.lo for r in rows], [r.hi - r.estimate for r in rows]],
        fmt="o-",
        capsize=3,
    )
    ax1.plot(xs, xs, "--", color="gray", label="p (direct infection)")
    ax1.set_xscale("log")
    ax1.set_yscale("log")
    ax1.set_xlabel("p")
    ax1.set_ylabel("P(origin in closure)")
    ax1.legend()
    ax1.grid(True, alpha=0.3)
    ax2.plot(xs, [r.extra["ratio_p23"] for r in rows], "o-", label="estimate / p^(2/3)")
    ax2.plot(xs, [r.extra["ratio_proof_exponent"] for r in rows], "s-", label="estimate / p^((2d+2)/(3d+2))")
    ax2.set_xscale("log")
    ax2.set_xlabel("p")
    ax2.set_ylabel("ratio")
    ax2.legend()
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_bisect(result, path) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    evals = sorted(result.evaluations)
    ax.plot([e[0] for e in evals], [e[1] for e in evals], "o-")
    ax.axhline(0.5, color="gray", linestyle=":")
    if result.estimate is not None:
        ax.axvline(result.estimate, color="r", linestyle="--", label=f"estimate {result.estimate:.5g}")
        ax.legend()
    ax.set_xlabel("p")
    ax.set_ylabel("filling fraction")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_cover_mask(mask, sites, window, path) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(mask.T, origin="lower", extent=(window.lower[0], window.upper[0], window.lower[1], window.upper[1]),
              cmap="Blues", alpha=0.8)
    if sites:
        xs = [s[0] for s in sites]
        ys = [s[1] for s in sites]
        ax.plot(xs, ys, "r.", markersize=3, label="infected sites")
        ax.legend(loc="upper right")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title("cover union")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
