import numpy as np
import pytest

from robustspd import (
    AnnealParams,
    FactorLayout,
    RequirementSet,
    VarianceSpec,
    initial_design,
)
from robustspd.design import ModelContext
from robustspd import kernels
from robustspd.presets import example_layout, example_requirement, reference_design


@pytest.fixture(scope="session")
def ex1():
    layout = example_layout(1)
    return {
        "layout": layout,
        "requirement": example_requirement(1),
        "b": 4,
        "sizes": (4, 4, 4, 3),
        "var": VarianceSpec(1.0, 1.0),
        "alpha": 1.0,
    }


@pytest.fixture(scope="session")
def ex2():
    layout = example_layout(2)
    return {
        "layout": layout,
        "requirement": example_requirement(2),
        "b": 4,
        "sizes": (2, 2, 3, 3),
        "var": VarianceSpec(1.0, 1.0),
        "alpha": 1.0,
    }


@pytest.fixture(scope="session")
def designs():
    return {name: reference_design(name) for name in ("D1", "D2", "D3", "D4")}


@pytest.fixture(scope="session")
def ex1_ctx(ex1):
    return ModelContext.build(ex1["layout"], ex1["requirement"])


def random_design(layout, b, sizes, seed):
    """A valid random design drawn from the deterministic stream for `seed`."""
    state = kernels.rng_seed(np.uint64(seed), np.uint64(0))
    return initial_design(layout, b, list(sizes), state)


def small_layout(spec):
    """Layout from compact specs like ((2, 'w'), (2, 's'), (3, 's'))."""
    roles = {"w": "whole-plot", "s": "subplot"}
    return FactorLayout.create(
        (f"F{i + 1}", levels, roles[r]) for i, (levels, r) in enumerate(spec)
    )


def main_effects(layout):
    """Requirement set of all main-effect components of the layout."""
    terms = []
    for i, f in enumerate(layout.factors):
        for k in range(1, f.levels):
            suffix = {1: "L", 2: "Q", 3: "C"}[k] if f.levels > 2 else ""
            terms.append(f"x{i + 1}{suffix}")
    return RequirementSet.parse(terms, layout)
