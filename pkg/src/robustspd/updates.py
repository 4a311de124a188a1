"""Incremental criterion maintenance under the three move types.

Every move reduces to one generic delta: rows leaving X1/G1, rows entering,
and per-plot row-sum replacements. Assembled as P' diag(d) P that delta
specializes exactly to the three printed update blocks (whole-plot exchange,
interchange, subplot exchange); the determinant and both inverses then follow
from |M + P'DP| = |M||D||D^-1 + P M^-1 P'| and Sherman-Morrison-Woodbury.

The interchange needs care: when the two plots share whole-plot levels the
swap only relabels plot membership and the delta is the pure plot-sum form;
when they differ, the swapped points are re-coded under the destination
whole-plot levels, so the delta additionally carries the four changed rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .criterion import CriterionState, compute_state
from .design import ModelContext, SplitPlotDesign, VarianceSpec, WholePlot
from .errors import UpdateDegenerateError


@dataclass(frozen=True)
class PlotSumChange:
    """Replacement of one plot's X1/G1 row sums (plot size never changes)."""

    plot: int
    old_x: np.ndarray
    new_x: np.ndarray
    old_g: np.ndarray
    new_g: np.ndarray
    size: int
    coef: tuple[float, float]  # d/(1+d n_i), (2d+d^2 n_i)/(1+d n_i)^2


@dataclass(frozen=True)
class MoveDelta:
    """Value object describing one size-preserving move."""

    removed: tuple[tuple[np.ndarray, np.ndarray], ...]  # (f-row, g-row) pairs
    added: tuple[tuple[np.ndarray, np.ndarray], ...]
    plot_sums: tuple[PlotSumChange, ...]
    design_after: SplitPlotDesign

    def __post_init__(self):
        if len(self.removed) != len(self.added):
            raise ValueError("moves are size preserving: |removed| must equal |added|")
        plots = [c.plot for c in self.plot_sums]
        if len(set(plots)) != len(plots):
            raise ValueError("every affected plot must appear exactly once")

    def assemble(self, sigma_eps_sq: float):
        """(P1, P2, d1, d2) in the printed order: rows out, rows in, old sums, new sums."""
        s2inv = 1.0 / sigma_eps_sq
        s4inv = s2inv * s2inv
        p1_rows, p2_rows, d1_vals, d2_vals = [], [], [], []
        for f_row, g_row in self.removed:
            p1_rows.append(f_row)
            p2_rows.append(g_row)
            d1_vals.append(-s2inv)
            d2_vals.append(-s4inv)
        for f_row, g_row in self.added:
            p1_rows.append(f_row)
            p2_rows.append(g_row)
            d1_vals.append(s2inv)
            d2_vals.append(s4inv)
        for change in self.plot_sums:
            if change.coef[0] == 0.0:
                continue  # d = 0: the plot-sum correction vanishes
            p1_rows.append(change.old_x)
            p2_rows.append(change.old_g)
            d1_vals.append(change.coef[0] * s2inv)
            d2_vals.append(change.coef[1] * s4inv)
        for change in self.plot_sums:
            if change.coef[0] == 0.0:
                continue
            p1_rows.append(change.new_x)
            p2_rows.append(change.new_g)
            d1_vals.append(-change.coef[0] * s2inv)
            d2_vals.append(-change.coef[1] * s4inv)
        if not p1_rows:
            q = self.removed[0][0].shape[0] if self.removed else 0
            return (np.zeros((0, q)), np.zeros((0, q)), np.zeros(0), np.zeros(0))
        return (
            np.ascontiguousarray(np.vstack(p1_rows)),
            np.ascontiguousarray(np.vstack(p2_rows)),
            np.array(d1_vals),
            np.array(d2_vals),
        )


def _plot_rows(ctx: ModelContext, plot: WholePlot):
    w_idx = ctx.w_index(plot.w)
    f_rows = [ctx.f_row(w_idx, ctx.t_index(t)) for t in plot.subplots]
    g_rows = [ctx.g_row(w_idx, ctx.t_index(t)) for t in plot.subplots]
    return f_rows, g_rows


def _sum_change(ctx: ModelContext, state_coefs, plot_id: int,
                old_plot: WholePlot, new_plot: WholePlot) -> PlotSumChange:
    of, og = _plot_rows(ctx, old_plot)
    nf, ng = _plot_rows(ctx, new_plot)
    c1, c2 = state_coefs
    return PlotSumChange(
        plot=plot_id,
        old_x=np.sum(of, axis=0),
        new_x=np.sum(nf, axis=0),
        old_g=np.sum(og, axis=0),
        new_g=np.sum(ng, axis=0),
        size=old_plot.size,
        coef=(float(c1[plot_id]), float(c2[plot_id])),
    )


def _coefs(design: SplitPlotDesign, var: VarianceSpec):
    from .design import covariance_coefficients

    return covariance_coefficients(design.sizes, var)


def _replace_plots(design: SplitPlotDesign, replacements: dict) -> SplitPlotDesign | None:
    plots = [replacements.get(i, p) for i, p in enumerate(design.plots)]
    try:
        return SplitPlotDesign(layout=design.layout, plots=tuple(plots))
    except Exception:
        return None  # run-uniqueness violation: move rejected, proposer retries


def delta_wp_exchange(ctx: ModelContext, design: SplitPlotDesign, var: VarianceSpec,
                      plot_indices, new_ws) -> MoveDelta | None:
    """Replace the whole-plot levels of the given plots, keeping their subplots.

    Returns None when the resulting design would repeat a run.
    """
    plot_indices = list(plot_indices)
    if len(set(plot_indices)) != len(plot_indices):
        raise ValueError("plot indices must be distinct")
    replacements = {}
    for i, w_new in zip(plot_indices, new_ws):
        old = design.plots[i]
        replacements[i] = WholePlot(w=tuple(w_new), subplots=old.subplots)
    after = _replace_plots(design, replacements)
    if after is None:
        return None
    c = _coefs(design, var)
    removed, added, sums = [], [], []
    for i in plot_indices:
        of, og = _plot_rows(ctx, design.plots[i])
        removed += list(zip(of, og))
    for i in plot_indices:
        nf, ng = _plot_rows(ctx, after.plots[i])
        added += list(zip(nf, ng))
        sums.append(_sum_change(ctx, c, i, design.plots[i], after.plots[i]))
    return MoveDelta(tuple(removed), tuple(added), tuple(sums), after)


def delta_interchange(ctx: ModelContext, design: SplitPlotDesign, var: VarianceSpec,
                      plot_i: int, plot_l: int, sub_j: int, sub_k: int) -> MoveDelta | None:
    """Swap subplot point j of plot i with subplot point k of plot l (i != l)."""
    if plot_i == plot_l:
        raise ValueError("interchange requires two distinct plots")
    pi, pl = design.plots[plot_i], design.plots[plot_l]
    t_ij, t_lk = pi.subplots[sub_j], pl.subplots[sub_k]
    subs_i = list(pi.subplots)
    subs_l = list(pl.subplots)
    subs_i[sub_j] = t_lk
    subs_l[sub_k] = t_ij
    after = _replace_plots(
        design,
        {
            plot_i: WholePlot(w=pi.w, subplots=tuple(subs_i)),
            plot_l: WholePlot(w=pl.w, subplots=tuple(subs_l)),
        },
    )
    if after is None:
        return None
    c = _coefs(design, var)
    removed, added = [], []
    if pi.w != pl.w:
        # re-coding under the destination whole-plot levels changes the rows;
        # with equal whole-plot levels the row set is untouched (pure plot-sum
        # delta, the printed interchange block)
        wi, wl = ctx.w_index(pi.w), ctx.w_index(pl.w)
        ti, tl = ctx.t_index(t_ij), ctx.t_index(t_lk)
        removed = [
            (ctx.f_row(wi, ti), ctx.g_row(wi, ti)),
            (ctx.f_row(wl, tl), ctx.g_row(wl, tl)),
        ]
        added = [
            (ctx.f_row(wi, tl), ctx.g_row(wi, tl)),
            (ctx.f_row(wl, ti), ctx.g_row(wl, ti)),
        ]
    sums = (
        _sum_change(ctx, c, plot_i, pi, after.plots[plot_i]),
        _sum_change(ctx, c, plot_l, pl, after.plots[plot_l]),
    )
    return MoveDelta(tuple(removed), tuple(added), sums, after)


def delta_sp_exchange(ctx: ModelContext, design: SplitPlotDesign, var: VarianceSpec,
                      plot_i: int, sub_indices, replacements) -> MoveDelta | None:
    """Replace the given subplot points of plot i (whole-plot levels fixed)."""
    sub_indices = list(sub_indices)
    if len(set(sub_indices)) != len(sub_indices):
        raise ValueError("subplot indices must be distinct")
    pi = design.plots[plot_i]
    subs = list(pi.subplots)
    for j, t_new in zip(sub_indices, replacements):
        subs[j] = tuple(t_new)
    after = _replace_plots(design, {plot_i: WholePlot(w=pi.w, subplots=tuple(subs))})
    if after is None:
        return None
    c = _coefs(design, var)
    wi = ctx.w_index(pi.w)
    removed, added = [], []
    for j, t_new in zip(sub_indices, replacements):
        ti = ctx.t_index(pi.subplots[j])
        tn = ctx.t_index(tuple(t_new))
        removed.append((ctx.f_row(wi, ti), ctx.g_row(wi, ti)))
        added.append((ctx.f_row(wi, tn), ctx.g_row(wi, tn)))
    sums = (_sum_change(ctx, c, plot_i, pi, after.plots[plot_i]),)
    return MoveDelta(tuple(removed), tuple(added), sums, after)


def apply_delta(state: CriterionState, delta: MoveDelta) -> CriterionState:
    """New state with logdet M1, M1^-1, M2, M2^-1, M3 and plot sums updated.

    Raises :class:`UpdateDegenerateError` when a core matrix is numerically
    singular; the caller should fall back to :func:`refresh`.
    """
    p1, p2, d1, d2 = delta.assemble(state.sigma_eps_sq)
    k = p1.shape[0]
    out = state.copy()
    if k == 0:
        _install_sums(out, delta)
        return out
    ok, logdet_new, m2c, m3c, core1 = kernels.delta_eval(
        state.m1_inv, state.m2, state.m3, state.logdet_m1, p1, p2, d1, d2, k
    )
    if not ok:
        raise UpdateDegenerateError(
            "determinant update core is singular or indefinite; recompute from scratch"
        )
    ok1, m1_inv = kernels.smw_inverse(state.m1_inv, p1, d1, k)
    ok2, m2_inv = kernels.smw_inverse(state.m2_inv, p2, d1, k)
    if not (ok1 and ok2):
        raise UpdateDegenerateError(
            "Sherman-Morrison-Woodbury core is singular; recompute from scratch"
        )
    out.logdet_m1 = float(logdet_new)
    out.m1 = kernels.rank_update(state.m1, p1, d1, k)
    out.m1_inv = m1_inv
    out.m2 = m2c
    out.m2_inv = m2_inv
    out.m3 = m3c
    _install_sums(out, delta)
    return out


def _install_sums(state: CriterionState, delta: MoveDelta) -> None:
    for change in delta.plot_sums:
        state.x_sums[change.plot] = change.new_x
        state.g_sums[change.plot] = change.new_g


def refresh(state: CriterionState, matrices, design: SplitPlotDesign,
            var: VarianceSpec) -> CriterionState:
    """From-scratch recomputation of every cached quantity (drift control)."""
    return compute_state(matrices, design, var)
