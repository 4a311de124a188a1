"""Timing harness: incremental updates versus from-scratch recomputation.

Builds a synthetic split-plot problem near a requested (n, p), replays random
moves of all three kinds through the update engine, and times each committed
update against a full model-matrix rebuild plus state recomputation. Rows
come back as dicts ready for CSV emission.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from ._backend import BACKEND
from .annealer import initial_design
from .contrasts import FactorLayout, RequirementSet, enumerate_all_terms
from .criterion import compute_state
from .design import ModelContext, VarianceSpec, build_model_matrices
from .updates import apply_delta, delta_interchange, delta_sp_exchange, delta_wp_exchange


def synthetic_problem(n_target: int, p_target: int):
    """A layout/requirement/design triple with roughly the requested n and p."""
    layout = FactorLayout.create(
        [
            ("F1", 2, "whole-plot"),
            ("F2", 3, "whole-plot"),
            ("F3", 3, "subplot"),
            ("F4", 3, "subplot"),
            ("F5", 3, "subplot"),
        ]
    )
    terms = [t for t in enumerate_all_terms(layout) if len(t.components) <= 2]
    if p_target > len(terms):
        raise ValueError(f"p_target {p_target} exceeds available terms {len(terms)}")
    requirement = RequirementSet(tuple(terms[:p_target]))
    plot_size = 6
    b = max(2, round(n_target / plot_size))
    sizes = [plot_size] * b
    design = initial_design(layout, b, sizes, kernels.rng_seed(np.uint64(7), np.uint64(0)))
    return layout, requirement, design, sizes


def bench_updates(n_target: int = 60, p_target: int = 20, moves: int = 200,
                  d: float = 1.0, seed: int = 0) -> list[dict]:
    """Per-move-type mean times (seconds) for update vs full recompute."""
    layout, requirement, design, sizes = synthetic_problem(n_target, p_target)
    var = VarianceSpec.from_ratio(d)
    ctx = ModelContext.build(layout, requirement)
    matrices = build_model_matrices(design, requirement, ctx.contrasts)
    state = compute_state(matrices, design, var)
    rng = np.random.default_rng(seed)
    b = design.b
    cands = ctx.sp_levels

    totals = {"wp-exchange": [0.0, 0.0, 0], "interchange": [0.0, 0.0, 0],
              "sp-exchange": [0.0, 0.0, 0]}

    def random_delta(kind):
        if kind == "wp-exchange":
            count = int(rng.integers(1, 4))
            plots = rng.choice(b, size=count, replace=False)
            new_ws = [tuple(ctx.wp_levels[rng.integers(ctx.wp_levels.shape[0])])
                      for _ in plots]
            return delta_wp_exchange(ctx, design, var, plots, new_ws)
        if kind == "interchange":
            i = int(rng.integers(b))
            l = int(rng.integers(b - 1))
            if l >= i:
                l += 1
            j = int(rng.integers(design.plots[i].size))
            k = int(rng.integers(design.plots[l].size))
            return delta_interchange(ctx, design, var, i, l, j, k)
        i = int(rng.integers(b))
        used = {tuple(t) for t in design.plots[i].subplots}
        avail = [tuple(r) for r in cands if tuple(r) not in used]
        if not avail:
            return None
        e = int(rng.integers(1, min(3, design.plots[i].size, len(avail)) + 1))
        subs = rng.choice(design.plots[i].size, size=e, replace=False)
        repl = [avail[j] for j in rng.choice(len(avail), size=e, replace=False)]
        return delta_sp_exchange(ctx, design, var, i, subs, repl)

    kinds = ["wp-exchange", "interchange", "sp-exchange"]
    for m in range(moves):
        kind = kinds[m % 3]
        delta = random_delta(kind)
        if delta is None:
            continue
        t0 = time.perf_counter()
        new_state = apply_delta(state, delta)
        t1 = time.perf_counter()
        fresh_matrices = build_model_matrices(delta.design_after, requirement, ctx.contrasts)
        fresh_state = compute_state(fresh_matrices, delta.design_after, var)
        t2 = time.perf_counter()
        totals[kind][0] += t1 - t0
        totals[kind][1] += t2 - t1
        totals[kind][2] += 1
        design = delta.design_after
        state = fresh_state if (m + 1) % 64 == 0 else new_state

    rows = []
    for kind in kinds:
        upd, rec, count = totals[kind]
        if count == 0:
            continue
        rows.append(
            {
                "n": design.n,
                "p": requirement.p,
                "move_type": kind,
                "update_time": upd / count,
                "recompute_time": rec / count,
                "backend": BACKEND,
            }
        )
    return rows
