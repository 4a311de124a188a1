"""Built-in example problems and their published reference designs.

Example 1: five two-level factors, the first two hard to change, arranged in
four whole plots of sizes (4, 4, 4, 3); the requirement set is all main
effects plus x1*x2 and x1*x3 (p = 7, N = 32).

Example 2: one two-level whole-plot factor and two three-level subplot
factors in four whole plots of sizes (2, 2, 3, 3); the requirement set is all
main-effect components plus the x1-by-x2 and x1-by-x3 components (p = 9,
N = 18).

``REFERENCE_DESIGNS`` carries the four published designs (D1/D2 for Example 1,
D3/D4 for Example 2) with their reported phi, pi-root and loss-root values at
alpha = 1, d = 1, sigma_eps^2 = 1.
"""

from __future__ import annotations

from .contrasts import FactorLayout, RequirementSet
from .design import SplitPlotDesign, WholePlot

EXAMPLE_CONFIGS = {
    1: {
        "layout": {
            "factors": [
                {"name": "F1", "levels": 2, "role": "whole-plot"},
                {"name": "F2", "levels": 2, "role": "whole-plot"},
                {"name": "F3", "levels": 2, "role": "subplot"},
                {"name": "F4", "levels": 2, "role": "subplot"},
                {"name": "F5", "levels": 2, "role": "subplot"},
            ]
        },
        "plots": {"b": 4, "sizes": [4, 4, 4, 3]},
        "requirement": ["x1", "x2", "x3", "x4", "x5", "x1*x2", "x1*x3"],
        "variance": {"sigma_eps_sq": 1.0, "sigma_gamma_sq": 1.0},
        "alpha": 1.0,
        "anneal": {
            "T0": 0.001, "M0": 50, "N_T": 100, "a_b": 3, "e_max": 3,
            "f": 0.8, "seed": 0, "restarts": 10,
        },
    },
    2: {
        "layout": {
            "factors": [
                {"name": "F1", "levels": 2, "role": "whole-plot"},
                {"name": "F2", "levels": 3, "role": "subplot"},
                {"name": "F3", "levels": 3, "role": "subplot"},
            ]
        },
        "plots": {"b": 4, "sizes": [2, 2, 3, 3]},
        "requirement": [
            "x1", "x2L", "x2Q", "x3L", "x3Q",
            "x1*x2L", "x1*x2Q", "x1*x3L", "x1*x3Q",
        ],
        "variance": {"sigma_eps_sq": 1.0, "sigma_gamma_sq": 1.0},
        "alpha": 1.0,
        "anneal": {
            "T0": 0.001, "M0": 50, "N_T": 100, "a_b": 3, "e_max": 2,
            "f": 0.8, "seed": 0, "restarts": 10,
        },
    },
}

# levels are 0-based: for two-level factors 0 ~ -1 and 1 ~ +1;
# three-level factors use their natural 0/1/2 labels
_D1 = [
    ((1, 0), [(1, 1, 1), (0, 0, 0), (0, 0, 1), (1, 1, 0)]),
    ((0, 1), [(1, 1, 0), (1, 0, 0), (0, 1, 1), (0, 0, 1)]),
    ((0, 0), [(0, 0, 0), (1, 0, 1), (0, 1, 0), (1, 1, 1)]),
    ((1, 1), [(1, 0, 0), (0, 1, 1), (0, 1, 0)]),
]
_D2 = [
    ((1, 1), [(0, 1, 1), (1, 0, 0), (1, 1, 0), (0, 0, 1)]),
    ((0, 0), [(0, 0, 1), (1, 0, 0), (1, 1, 1), (0, 1, 0)]),
    ((1, 0), [(0, 0, 0), (1, 0, 1), (0, 1, 0), (1, 1, 1)]),
    ((0, 1), [(0, 0, 1), (1, 1, 0), (0, 1, 0)]),
]
_D3 = [
    ((0,), [(0, 0), (1, 1)]),
    ((1,), [(0, 2), (0, 1)]),
    ((0,), [(2, 2), (2, 0), (0, 1)]),
    ((1,), [(2, 1), (1, 2), (1, 0)]),
]
_D4 = [
    ((0,), [(2, 2), (1, 1)]),
    ((1,), [(2, 0), (0, 2)]),
    ((0,), [(1, 0), (0, 2), (2, 1)]),
    ((1,), [(2, 1), (0, 0), (1, 2)]),
]

#: published values at alpha = 1, d = 1: (phi, pi^(1/(1+p)), L^(1/(1+p)))
REFERENCE_DESIGNS = {
    "D1": {"example": 1, "plots": _D1, "phi": 0.6733, "pi_root": 6.7468, "loss_root": 0.2188},
    "D2": {"example": 1, "plots": _D2, "phi": 0.6323, "pi_root": 6.7339, "loss_root": 0.2176},
    "D3": {"example": 2, "plots": _D3, "phi": 0.9074, "pi_root": 4.5472, "loss_root": 0.2925},
    "D4": {"example": 2, "plots": _D4, "phi": 0.6667, "pi_root": 4.5472, "loss_root": 0.2842},
}


def example_config(number: int) -> dict:
    """A deep copy of the raw config dict for preset 1 or 2."""
    import copy

    if number not in EXAMPLE_CONFIGS:
        raise KeyError(f"no example {number}; choose 1 or 2")
    return copy.deepcopy(EXAMPLE_CONFIGS[number])


def example_layout(number: int) -> FactorLayout:
    cfg = EXAMPLE_CONFIGS[number]
    return FactorLayout.create(
        (f["name"], f["levels"], f["role"]) for f in cfg["layout"]["factors"]
    )


def example_requirement(number: int) -> RequirementSet:
    layout = example_layout(number)
    return RequirementSet.parse(EXAMPLE_CONFIGS[number]["requirement"], layout)


def reference_design(name: str) -> SplitPlotDesign:
    """One of the published designs D1..D4 as a SplitPlotDesign."""
    entry = REFERENCE_DESIGNS[name]
    layout = example_layout(entry["example"])
    plots = tuple(
        WholePlot(w=tuple(w), subplots=tuple(tuple(t) for t in ts))
        for w, ts in entry["plots"]
    )
    return SplitPlotDesign(layout=layout, plots=plots)
