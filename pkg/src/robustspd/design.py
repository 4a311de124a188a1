"""Split-plot designs, their model matrices, and the block covariance.

Runs are stored plot-major so the covariance of the response is block
diagonal, one compound-symmetry block per whole plot:

    Sigma_i      = sigma_eps^2 (I + d J)
    Sigma_i^-1   = sigma_eps^-2 (I - d/(1+d n_i) J)
    Sigma_i^-2   = sigma_eps^-4 (I - (2d + d^2 n_i)/(1+d n_i)^2 J)

with J the all-ones matrix and d the whole-plot to subplot variance ratio.
The inverse-square block equals (Sigma_i^-1)^2 because Sigma is symmetric
positive definite, so no spectral decomposition is ever needed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .contrasts import (
    ContrastSystem,
    FactorLayout,
    RequirementSet,
    build_contrasts,
    level_combinations,
    term_values,
)
from .errors import MalformedDesignError, SingularDesignError


@dataclass(frozen=True)
class VarianceSpec:
    """Error variances of the two strata; ``d`` is their ratio."""

    sigma_eps_sq: float = 1.0
    sigma_gamma_sq: float = 1.0

    def __post_init__(self):
        if not self.sigma_eps_sq > 0:
            raise ValueError(f"sigma_eps_sq must be > 0, got {self.sigma_eps_sq}")
        if self.sigma_gamma_sq < 0:
            raise ValueError(f"sigma_gamma_sq must be >= 0, got {self.sigma_gamma_sq}")

    @property
    def d(self) -> float:
        return self.sigma_gamma_sq / self.sigma_eps_sq

    @classmethod
    def from_ratio(cls, d: float, sigma_eps_sq: float = 1.0) -> "VarianceSpec":
        return cls(sigma_eps_sq=sigma_eps_sq, sigma_gamma_sq=d * sigma_eps_sq)


@dataclass(frozen=True)
class WholePlot:
    """One whole plot: its factor levels and the subplot level combinations."""

    w: tuple[int, ...]
    subplots: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(int(v) for v in self.w))
        object.__setattr__(
            self, "subplots", tuple(tuple(int(v) for v in t) for t in self.subplots)
        )

    @property
    def size(self) -> int:
        return len(self.subplots)


@dataclass(frozen=True)
class SplitPlotDesign:
    """b whole plots of distinct runs; levels are 0-based throughout."""

    layout: FactorLayout
    plots: tuple[WholePlot, ...]

    def __post_init__(self):
        object.__setattr__(self, "plots", tuple(self.plots))
        if not self.plots:
            raise MalformedDesignError("design needs at least one whole plot")
        wp_idx = self.layout.wp_indices
        sp_idx = self.layout.sp_indices
        seen: dict[tuple, tuple[int, int]] = {}
        for i, plot in enumerate(self.plots, start=1):
            if len(plot.w) != len(wp_idx):
                raise MalformedDesignError(
                    f"plot {i}: expected {len(wp_idx)} whole-plot levels, got {len(plot.w)}"
                )
            for v, fi in zip(plot.w, wp_idx):
                self._check_level(v, fi, f"plot {i}")
            if plot.size < 1:
                raise MalformedDesignError(f"plot {i} has no subplots")
            for j, t in enumerate(plot.subplots, start=1):
                if len(t) != len(sp_idx):
                    raise MalformedDesignError(
                        f"plot {i}, subplot {j}: expected {len(sp_idx)} subplot levels, "
                        f"got {len(t)}"
                    )
                for v, fi in zip(t, sp_idx):
                    self._check_level(v, fi, f"plot {i}, subplot {j}")
                run = (plot.w, t)
                if run in seen:
                    pi, pj = seen[run]
                    raise MalformedDesignError(
                        f"duplicate run: plot {i}, subplot {j} repeats "
                        f"plot {pi}, subplot {pj}"
                    )
                seen[run] = (i, j)

    def _check_level(self, value, factor_index, where):
        s = self.layout.factors[factor_index].levels
        if not 0 <= value < s:
            raise MalformedDesignError(
                f"{where}: level {value} out of range for factor "
                f"{self.layout.factors[factor_index].name} (0..{s - 1})"
            )

    @property
    def b(self) -> int:
        return len(self.plots)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.plots)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def runs(self) -> np.ndarray:
        """(n, m) array of full level rows, plot-major."""
        wp_idx = self.layout.wp_indices
        sp_idx = self.layout.sp_indices
        out = np.empty((self.n, self.layout.m), dtype=np.int64)
        r = 0
        for plot in self.plots:
            for t in plot.subplots:
                for v, fi in zip(plot.w, wp_idx):
                    out[r, fi] = v
                for v, fi in zip(t, sp_idx):
                    out[r, fi] = v
                r += 1
        return out

    def offsets(self) -> np.ndarray:
        out = np.zeros(self.b + 1, dtype=np.int64)
        np.cumsum(self.sizes, out=out[1:])
        return out


@dataclass(frozen=True)
class ModelMatrices:
    """X1, its column-rescaled twin G1 = X1 V1^{-1/2}, and plot row ranges."""

    x1: np.ndarray
    g1: np.ndarray
    v1: np.ndarray
    offsets: np.ndarray
    labels: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def q(self) -> int:
        return self.x1.shape[1]

    @property
    def b(self) -> int:
        return len(self.offsets) - 1

    def plot_rows(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))


def build_model_matrices(design: SplitPlotDesign, requirement: RequirementSet,
                         contrasts: ContrastSystem | None = None) -> ModelMatrices:
    """Assemble X1 (intercept first, then R in order) and G1, plot-major."""
    from .contrasts import v1_diagonal

    layout = design.layout
    requirement.validate(layout)
    contrasts = contrasts or build_contrasts(layout)
    runs = design.runs()
    cols = [np.ones(runs.shape[0])]
    cols += [term_values(t, runs, contrasts) for t in requirement.terms]
    x1 = np.column_stack(cols)
    v1 = v1_diagonal(requirement, layout, contrasts)
    g1 = x1 / np.sqrt(v1)
    return ModelMatrices(
        x1=x1, g1=g1, v1=v1, offsets=design.offsets(),
        labels=requirement.labels(layout),
    )


def covariance_coefficients(sizes, var: VarianceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-plot J coefficients of Sigma_i^-1 and Sigma_i^-2 (without sigma factors)."""
    n_i = np.asarray(sizes, dtype=np.float64)
    d = var.d
    c1 = d / (1.0 + d * n_i)
    c2 = (2.0 * d + d * d * n_i) / (1.0 + d * n_i) ** 2
    return c1, c2


def sigma_inverse_blocks(design: SplitPlotDesign, var: VarianceSpec):
    """Per-plot (Sigma_i^-1, Sigma_i^-2) in closed form."""
    c1, c2 = covariance_coefficients(design.sizes, var)
    s2 = var.sigma_eps_sq
    blocks = []
    for i, ni in enumerate(design.sizes):
        eye = np.eye(ni)
        ones = np.ones((ni, ni))
        inv1 = (eye - c1[i] * ones) / s2
        inv2 = (eye - c2[i] * ones) / s2**2
        blocks.append((inv1, inv2))
    return blocks


def assemble_sigma(design: SplitPlotDesign, var: VarianceSpec) -> np.ndarray:
    """The dense n x n covariance (oracle/test paths only)."""
    n = design.n
    out = np.zeros((n, n))
    d = var.d
    ofs = 0
    for ni in design.sizes:
        out[ofs:ofs + ni, ofs:ofs + ni] = d
        ofs += ni
    out += np.eye(n)
    return var.sigma_eps_sq * out


def glse_estimate(design: SplitPlotDesign, matrices: ModelMatrices,
                  var: VarianceSpec, y) -> tuple[np.ndarray, np.ndarray]:
    """Generalized least squares: beta = (X'S^-1 X)^-1 X'S^-1 y, cov = (X'S^-1 X)^-1."""
    _require_whole_plot_structure(design.layout, var)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != matrices.n:
        raise ValueError(f"response length {y.shape[0]} != n = {matrices.n}")
    blocks = sigma_inverse_blocks(design, var)
    q = matrices.q
    info = np.zeros((q, q))
    xty = np.zeros(q)
    for i, (inv1, _) in enumerate(blocks):
        rows = matrices.plot_rows(i)
        xi = matrices.x1[rows]
        info += xi.T @ inv1 @ xi
        xty += xi.T @ inv1 @ y[rows]
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise SingularDesignError(
            "X1' Sigma^-1 X1 is singular; the design cannot estimate the requirement set"
        ) from None
    beta = np.linalg.solve(info, xty)
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return beta, cov


def _require_whole_plot_structure(layout: FactorLayout, var: VarianceSpec) -> None:
    if layout.m_w == 0 and var.d != 0.0:
        raise MalformedDesignError(
            "layout has no whole-plot factors; only d = 0 (completely randomized) "
            "is meaningful"
        )


# ---------------------------------------------------------------------------
# Candidate tables: every term value factors into a whole-plot part times a
# subplot part, so rows of X1 never need the full-factorial H.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelContext:
    """Layout + requirement + contrasts with precomputed candidate row tables.

    ``wp_table[a] * sp_table[e]`` is the X1 row of the run combining whole-plot
    combination a with subplot combination e; ``sp_table_g`` folds in the
    V1^{-1/2} column scaling so the G1 row is ``wp_table[a] * sp_table_g[e]``.
    """

    layout: FactorLayout
    requirement: RequirementSet
    contrasts: ContrastSystem
    v1: np.ndarray
    wp_levels: np.ndarray
    sp_levels: np.ndarray
    wp_table: np.ndarray
    sp_table: np.ndarray
    sp_table_g: np.ndarray

    @classmethod
    def build(cls, layout: FactorLayout, requirement: RequirementSet,
              contrasts: ContrastSystem | None = None) -> "ModelContext":
        from .contrasts import v1_diagonal

        requirement.validate(layout)
        contrasts = contrasts or build_contrasts(layout)
        wp_idx = layout.wp_indices
        sp_idx = layout.sp_indices
        wp_levels = level_combinations([layout.factors[i].levels for i in wp_idx])
        sp_levels = level_combinations([layout.factors[i].levels for i in sp_idx])
        q = requirement.p + 1
        wp_table = np.ones((wp_levels.shape[0], q))
        sp_table = np.ones((sp_levels.shape[0], q))
        pos_w = {fi: c for c, fi in enumerate(wp_idx)}
        pos_s = {fi: c for c, fi in enumerate(sp_idx)}
        for j, term in enumerate(requirement.terms, start=1):
            for f, k in term.components:
                col = contrasts.matrix(f)[:, k - 1]
                if f in pos_w:
                    wp_table[:, j] *= col[wp_levels[:, pos_w[f]]]
                else:
                    sp_table[:, j] *= col[sp_levels[:, pos_s[f]]]
        v1 = v1_diagonal(requirement, layout, contrasts)
        sp_table_g = sp_table / np.sqrt(v1)
        return cls(
            layout=layout,
            requirement=requirement,
            contrasts=contrasts,
            v1=v1,
            wp_levels=wp_levels,
            sp_levels=sp_levels,
            wp_table=wp_table,
            sp_table=sp_table,
            sp_table_g=sp_table_g,
        )

    @property
    def q(self) -> int:
        return self.requirement.p + 1

    @property
    def n_whole(self) -> int:
        return self.wp_table.shape[0]

    @property
    def n_sub(self) -> int:
        return self.sp_table.shape[0]

    def w_index(self, w: tuple[int, ...]) -> int:
        idx = 0
        for c, fi in enumerate(self.layout.wp_indices):
            idx = idx * self.layout.factors[fi].levels + w[c]
        return idx

    def t_index(self, t: tuple[int, ...]) -> int:
        idx = 0
        for c, fi in enumerate(self.layout.sp_indices):
            idx = idx * self.layout.factors[fi].levels + t[c]
        return idx

    def design_indices(self, design: SplitPlotDesign) -> tuple[np.ndarray, np.ndarray]:
        """(w index per plot, t index per run) for the engine's array form."""
        w = np.array([self.w_index(p.w) for p in design.plots], dtype=np.int64)
        t = np.array(
            [self.t_index(t) for p in design.plots for t in p.subplots], dtype=np.int64
        )
        return w, t

    def design_from_indices(self, w_idx, t_idx, sizes) -> SplitPlotDesign:
        plots = []
        ofs = 0
        for i, ni in enumerate(sizes):
            w = tuple(int(v) for v in self.wp_levels[w_idx[i]])
            subs = tuple(
                tuple(int(v) for v in self.sp_levels[t_idx[r]])
                for r in range(ofs, ofs + ni)
            )
            plots.append(WholePlot(w=w, subplots=subs))
            ofs += ni
        return SplitPlotDesign(layout=self.layout, plots=tuple(plots))

    def f_row(self, w_idx: int, t_idx: int) -> np.ndarray:
        return self.wp_table[w_idx] * self.sp_table[t_idx]

    def g_row(self, w_idx: int, t_idx: int) -> np.ndarray:
        return self.wp_table[w_idx] * self.sp_table_g[t_idx]


# ---------------------------------------------------------------------------
# Design CSV: header `plot,<wp factor names>,<sp factor names>`, one row per
# run, plots numbered 1..b. Two-level factors are written as -1/+1 (and both
# -1/+1 and 0/1 are accepted on ingest); wider factors use 0..s-1.
# ---------------------------------------------------------------------------


def _format_level(value: int, levels: int) -> str:
    if levels == 2:
        return "-1" if value == 0 else "1"
    return str(value)


def _parse_level(text: str, levels: int, where: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise MalformedDesignError(f"{where}: level {text!r} is not an integer") from None
    if levels == 2 and value in (-1, 1):
        return 0 if value == -1 else 1
    if 0 <= value < levels:
        return value
    raise MalformedDesignError(
        f"{where}: level {value} invalid for a {levels}-level factor"
    )


def design_to_csv(design: SplitPlotDesign) -> str:
    layout = design.layout
    wp_idx = layout.wp_indices
    sp_idx = layout.sp_indices
    header = ["plot"] + [layout.factors[i].name for i in wp_idx + sp_idx]
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for i, plot in enumerate(design.plots, start=1):
        for t in plot.subplots:
            cells = [str(i)]
            cells += [
                _format_level(v, layout.factors[fi].levels)
                for v, fi in zip(plot.w, wp_idx)
            ]
            cells += [
                _format_level(v, layout.factors[fi].levels)
                for v, fi in zip(t, sp_idx)
            ]
            out.write(",".join(cells) + "\n")
    return out.getvalue()


def design_from_csv(text: str, layout: FactorLayout) -> SplitPlotDesign:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedDesignError("design CSV is empty")
    wp_idx = layout.wp_indices
    sp_idx = layout.sp_indices
    expected = ["plot"] + [layout.factors[i].name for i in wp_idx + sp_idx]
    header = [c.strip() for c in lines[0].split(",")]
    if header != expected:
        raise MalformedDesignError(
            f"design CSV header {header} does not match expected {expected}"
        )
    groups: dict[int, list[tuple[tuple[int, ...], tuple[int, ...]]]] = {}
    order: list[int] = []
    for ln_no, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(expected):
            raise MalformedDesignError(
                f"line {ln_no}: expected {len(expected)} columns, got {len(cells)}"
            )
        try:
            plot_no = int(cells[0])
        except ValueError:
            raise MalformedDesignError(
                f"line {ln_no}: plot id {cells[0]!r} is not an integer"
            ) from None
        if plot_no < 1:
            raise MalformedDesignError(f"line {ln_no}: plot ids must be >= 1")
        w = tuple(
            _parse_level(cells[1 + c], layout.factors[fi].levels, f"line {ln_no}")
            for c, fi in enumerate(wp_idx)
        )
        t = tuple(
            _parse_level(
                cells[1 + len(wp_idx) + c], layout.factors[fi].levels, f"line {ln_no}"
            )
            for c, fi in enumerate(sp_idx)
        )
        if plot_no not in groups:
            groups[plot_no] = []
            order.append(plot_no)
        groups[plot_no].append((w, t))
    if sorted(order) != list(range(1, len(order) + 1)):
        raise MalformedDesignError(
            f"plot ids must cover 1..b contiguously, got {sorted(order)}"
        )
    plots = []
    for plot_no in range(1, len(order) + 1):
        rows = groups[plot_no]
        w0 = rows[0][0]
        for w, _ in rows:
            if w != w0:
                raise MalformedDesignError(
                    f"plot {plot_no}: whole-plot levels vary within the plot"
                )
        plots.append(WholePlot(w=w0, subplots=tuple(t for _, t in rows)))
    return SplitPlotDesign(layout=layout, plots=tuple(plots))
