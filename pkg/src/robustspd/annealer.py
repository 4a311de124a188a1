"""Annealing/point-exchange search for minimax split-plot designs.

Each restart anneals independently: per temperature it runs ``n_t`` sweeps,
one sweep being a whole-plot exchange proposal (a plots replaced from the
whole-plot candidate set, a ~ U{1..a_b}), one interchange proposal between two
plots, and one subplot exchange proposal per plot (e ~ U{1..e_max_i}, drawn
from the subplot candidates not currently in the plot). Worse designs are
accepted with probability exp(-(L* - L)/T); the temperature decays by the
factor f after every n_t sweeps, m0 times.

The best design ever seen is returned (the final state is also reported).
Restarts derive independent RNG streams from (seed, restart index), so
results are identical no matter how many worker threads run them.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .criterion import PD_TOL, LossReport, compute_state, loss
from .design import (
    ModelContext,
    SplitPlotDesign,
    VarianceSpec,
    WholePlot,
    _require_whole_plot_structure,
    covariance_coefficients,
)
from .contrasts import FactorLayout, RequirementSet, level_combinations
from .errors import InfeasibleDesignError

DRIFT_TOL = 1e-8
MAX_PROPOSAL_RETRIES = 20
_INIT_ATTEMPTS = 1000


@dataclass(frozen=True)
class AnnealParams:
    """Schedule and proposal bounds for the annealing search."""

    t0: float = 0.001
    m0: int = 50
    n_t: int = 100
    a_b: int = 3
    e_max: int | tuple[int, ...] = 3
    f: float = 0.8
    seed: int = 0
    restarts: int = 1
    refresh_interval: int = 64

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError(f"T0 must be > 0, got {self.t0}")
        if self.m0 < 1:
            raise ValueError(f"M0 must be >= 1, got {self.m0}")
        if self.n_t < 0:
            raise ValueError(f"N_T must be >= 0, got {self.n_t}")
        if not 0 < self.f < 1:
            raise ValueError(f"cooling factor f must be in (0, 1), got {self.f}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.refresh_interval < 0:
            raise ValueError(f"refresh_interval must be >= 0, got {self.refresh_interval}")

    def resolve_e_max(self, sizes) -> np.ndarray:
        if isinstance(self.e_max, int):
            values = [self.e_max] * len(sizes)
        else:
            values = list(self.e_max)
            if len(values) != len(sizes):
                raise ValueError(
                    f"e_max has {len(values)} entries but the design has {len(sizes)} plots"
                )
        out = np.empty(len(sizes), dtype=np.int64)
        for i, (e, ni) in enumerate(zip(values, sizes)):
            if not 1 <= e <= ni:
                raise ValueError(f"e_max[{i}] = {e} must lie in [1, n_{i + 1} = {ni}]")
            out[i] = e
        return out

    def check_a_b(self, b: int) -> None:
        if not 1 <= self.a_b <= b:
            raise ValueError(f"a_b = {self.a_b} must lie in [1, b = {b}]")


@dataclass(frozen=True)
class CandidateSets:
    """Whole-plot candidate set A and subplot candidate set E (full factorials)."""

    whole: np.ndarray
    sub: np.ndarray

    @classmethod
    def from_layout(cls, layout: FactorLayout) -> "CandidateSets":
        wp = level_combinations([layout.factors[i].levels for i in layout.wp_indices])
        sp = level_combinations([layout.factors[i].levels for i in layout.sp_indices])
        return cls(whole=wp, sub=sp)

    def sub_candidates_excluding(self, plot: WholePlot) -> np.ndarray:
        """E_i: subplot combinations not currently used by the plot."""
        used = {tuple(t) for t in plot.subplots}
        keep = [r for r in range(self.sub.shape[0]) if tuple(self.sub[r]) not in used]
        return self.sub[keep]


def _as_state(rng) -> np.ndarray:
    if isinstance(rng, np.ndarray):
        return rng
    return kernels.rng_seed(np.uint64(int(rng) % 2**64), np.uint64(0))


def initial_design(layout: FactorLayout, b: int, sizes, rng) -> SplitPlotDesign:
    """Random b-plot design with all runs distinct; deterministic in the stream.

    Whole-plot levels are drawn uniformly from A per plot (repeats across
    plots allowed); each group of plots sharing w then receives disjoint
    subplot points sampled without replacement from E.
    """
    sizes = [int(s) for s in sizes]
    if b < 1 or len(sizes) != b:
        raise InfeasibleDesignError(f"need b >= 1 plot sizes, got b={b}, sizes={sizes}")
    if any(s < 1 for s in sizes):
        raise InfeasibleDesignError(f"every plot needs >= 1 subplot, got {sizes}")
    cands = CandidateSets.from_layout(layout)
    n_sub = cands.sub.shape[0]
    n_whole = cands.whole.shape[0]
    n = sum(sizes)
    if n > layout.n_full:
        raise InfeasibleDesignError(
            f"cannot place n = {n} distinct runs: the full factorial has only "
            f"N = {layout.n_full}"
        )
    for i, s in enumerate(sizes):
        if s > n_sub:
            raise InfeasibleDesignError(
                f"plot {i + 1} asks for {s} subplot points but |E| = {n_sub}"
            )
    state = _as_state(rng)
    for _ in range(_INIT_ATTEMPTS):
        w_idx = [int(kernels.rng_below(state, n_whole)) for _ in range(b)]
        groups: dict[int, list[int]] = {}
        for i, wi in enumerate(w_idx):
            groups.setdefault(wi, []).append(i)
        if any(sum(sizes[i] for i in plots) > n_sub for plots in groups.values()):
            continue  # this w assignment cannot host disjoint subplot sets
        subplots: list[tuple[tuple[int, ...], ...]] = [()] * b
        for plots in groups.values():
            need = sum(sizes[i] for i in plots)
            pool = np.arange(n_sub, dtype=np.int64)
            kernels.sample_distinct(state, pool, n_sub, need)
            ofs = 0
            for i in plots:
                rows = pool[ofs:ofs + sizes[i]]
                subplots[i] = tuple(tuple(int(v) for v in cands.sub[r]) for r in rows)
                ofs += sizes[i]
        plots_out = [
            WholePlot(w=tuple(int(v) for v in cands.whole[w_idx[i]]), subplots=subplots[i])
            for i in range(b)
        ]
        return SplitPlotDesign(layout=layout, plots=tuple(plots_out))
    raise InfeasibleDesignError(
        f"no feasible whole-plot assignment found in {_INIT_ATTEMPTS} attempts: "
        f"plot sizes {sizes} cannot be packed into |A| = {n_whole} groups of "
        f"capacity |E| = {n_sub}"
    )


def accept(loss_new: float, loss_old: float, temperature: float, rng) -> bool:
    """Metropolis rule on raw losses: downhill always, uphill with exp(-dL/T)."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if loss_new < loss_old:
        return True
    state = rng if isinstance(rng, np.ndarray) else _as_state(rng)
    return bool(
        kernels.rng_u01(state) < math.exp(-(loss_new - loss_old) / temperature)
    )


@dataclass
class RestartResult:
    restart: int
    best_log_loss: float
    final_log_loss: float
    best_w: np.ndarray
    best_t: np.ndarray
    final_w: np.ndarray
    final_t: np.ndarray
    trace_current: np.ndarray
    trace_best: np.ndarray
    counters: np.ndarray
    uphill_deltas: np.ndarray


@dataclass
class SearchResult:
    best_design: SplitPlotDesign
    report: LossReport
    best_restart: int
    final_design: SplitPlotDesign
    final_log_loss: float
    restarts: list[RestartResult]
    q: int
    median_uphill_delta: float | None = None
    _sweeps_per_stage: int = field(default=1, repr=False)

    def trace_rows(self):
        """(temperature_step, iteration, current_loss_root, best_loss_root) rows.

        The trace belongs to the winning restart; one row per sweep, roots are
        the (1+p)-th roots of the raw losses.
        """
        win = self.restarts[self.best_restart]
        per_stage = self._sweeps_per_stage
        rows = []
        for idx in range(len(win.trace_current)):
            rows.append(
                (
                    idx // per_stage + 1,
                    idx % per_stage + 1,
                    math.exp(win.trace_current[idx] / self.q),
                    math.exp(win.trace_best[idx] / self.q),
                )
            )
        return rows

    def counters_dict(self) -> dict:
        win = self.restarts[self.best_restart]
        names = (
            "proposed", "accepted", "duplicate_rejections", "skipped_steps",
            "periodic_refreshes", "drift_refreshes", "degenerate_updates",
            "from_scratch_evaluations",
        )
        return {k: int(v) for k, v in zip(names, win.counters)}


def search(layout: FactorLayout, requirement: RequirementSet, b: int, sizes,
           var: VarianceSpec, alpha: float, params: AnnealParams,
           threads: int | None = None) -> SearchResult:
    """Run the full annealing search; returns the best design across restarts.

    Ties between restarts break toward the lower restart index, so the result
    is independent of the number of worker threads.
    """
    sizes = [int(s) for s in sizes]
    requirement.validate(layout)
    _require_whole_plot_structure(layout, var)
    params.check_a_b(b)
    e_max = params.resolve_e_max(sizes)
    n = sum(sizes)
    if requirement.p + 1 > n:
        raise InfeasibleDesignError(
            f"requirement needs p + 1 = {requirement.p + 1} estimable columns "
            f"but the design has only n = {n} runs"
        )

    ctx = ModelContext.build(layout, requirement)
    offsets = np.zeros(b + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    nper = np.asarray(sizes, dtype=np.int64)
    coef1, coef2 = covariance_coefficients(sizes, var)
    s2inv = 1.0 / var.sigma_eps_sq
    s4inv = s2inv * s2inv
    n_full = float(layout.n_full)

    def run_one(restart: int) -> RestartResult:
        state = kernels.rng_seed(
            np.uint64(int(params.seed) % 2**64), np.uint64(restart)
        )
        start = initial_design(layout, b, sizes, state)
        w0, t0 = ctx.design_indices(start)
        (best_w, best_t, best_log, fin_w, fin_t, fin_log,
         trace_cur, trace_best, counters, calib, calib_n) = kernels.anneal_restart(
            ctx.wp_table, ctx.sp_table, ctx.sp_table_g,
            w0, t0, offsets, nper,
            coef1, coef2, s2inv, s4inv,
            n_full, float(alpha),
            float(params.t0), float(params.f),
            np.int64(params.m0), np.int64(params.n_t), np.int64(params.a_b), e_max,
            np.int64(params.refresh_interval), PD_TOL, DRIFT_TOL,
            np.int64(MAX_PROPOSAL_RETRIES),
            state,
        )
        return RestartResult(
            restart=restart,
            best_log_loss=float(best_log),
            final_log_loss=float(fin_log),
            best_w=best_w, best_t=best_t,
            final_w=fin_w, final_t=fin_t,
            trace_current=trace_cur, trace_best=trace_best,
            counters=counters,
            uphill_deltas=calib[:calib_n].copy(),
        )

    if threads is None:
        threads = min(params.restarts, os.cpu_count() or 1)
    threads = max(1, int(threads))
    if threads == 1 or params.restarts == 1:
        results = [run_one(r) for r in range(params.restarts)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_one, r) for r in range(params.restarts)]
            results = [f.result() for f in futures]

    best_idx = 0
    for r in range(1, len(results)):
        if results[r].best_log_loss < results[best_idx].best_log_loss:
            best_idx = r
    win = results[best_idx]
    if not math.isfinite(win.best_log_loss):
        raise InfeasibleDesignError(
            "no nonsingular design was found; increase the run budget or "
            "shrink the requirement set"
        )
    best_design = ctx.design_from_indices(win.best_w, win.best_t, sizes)
    final_design = ctx.design_from_indices(win.final_w, win.final_t, sizes)

    from .design import build_model_matrices

    matrices = build_model_matrices(best_design, requirement, ctx.contrasts)
    report = loss(compute_state(matrices, best_design, var), layout.n_full, alpha)

    pooled = np.concatenate([r.uphill_deltas for r in results]) if results else np.array([])
    median_uphill = float(np.median(pooled)) if pooled.size else None

    out = SearchResult(
        best_design=best_design,
        report=report,
        best_restart=best_idx,
        final_design=final_design,
        final_log_loss=win.final_log_loss,
        restarts=results,
        q=requirement.p + 1,
        median_uphill_delta=median_uphill,
    )
    out._sweeps_per_stage = max(1, params.n_t)
    return out
