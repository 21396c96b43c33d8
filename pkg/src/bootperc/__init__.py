"""Bootstrap percolation on Z^d.

Library and CLI for monotone cellular automata driven by update families:
closure dynamics on finite windows, stable-direction analysis with certified
covering direction sets, multi-scale good/bad cube renormalization, pinched
barrier construction, and seeded Monte Carlo experiments.
"""

from .families import UpdateFamily, neighbourhood_family, parse_family, family_to_json
from .lattice import (
    Configuration,
    HalfSpace,
    LatticeWindow,
    closure,
    closure_naive,
    percolates,
    step,
)
from .stability import (
    Direction,
    StabilityCertificate,
    certify_strongly_stable_set,
    compute_gamma,
    f_margin,
    is_stable,
    is_stable_simulated,
    search_strongly_stable_set,
    stability_margin,
)
from .renorm import (
    BadCluster,
    ScaleSchedule,
    WindowHierarchy,
    build_schedule,
    classify,
    extract_clusters,
    influence_radius,
    independence_check,
    mc_bad_probability,
)
from .pinch import Pinch, Range, bump, height, in_range, verify_height_bounds, verify_range_closed
from .barrier import (
    Cover,
    GlobalCover,
    build_cover,
    build_global_cover,
    check_pairwise,
    construct_pinch,
    extend_pinch,
    verify_cover_closed,
)

from .experiments import ExperimentSpec, ResultRow, one_arm, pc_bisect, perc_probability, run_spec

__version__ = "0.1.0"

__all__ = [
    "UpdateFamily",
    "neighbourhood_family",
    "parse_family",
    "family_to_json",
    "Configuration",
    "HalfSpace",
    "LatticeWindow",
    "closure",
    "closure_naive",
    "percolates",
    "step",
    "Direction",
    "StabilityCertificate",
    "certify_strongly_stable_set",
    "compute_gamma",
    "f_margin",
    "is_stable",
    "is_stable_simulated",
    "search_strongly_stable_set",
    "stability_margin",
    "BadCluster",
    "ScaleSchedule",
    "WindowHierarchy",
    "build_schedule",
    "classify",
    "extract_clusters",
    "influence_radius",
    "independence_check",
    "mc_bad_probability",
    "Pinch",
    "Range",
    "bump",
    "height",
    "in_range",
    "verify_height_bounds",
    "verify_range_closed",
    "Cover",
    "GlobalCover",
    "build_cover",
    "build_global_cover",
    "check_pairwise",
    "construct_pinch",
    "extend_pinch",
    "verify_cover_closed",
    "ExperimentSpec",
    "ResultRow",
    "one_arm",
    "pc_bisect",
    "perc_probability",
    "run_spec",
]
