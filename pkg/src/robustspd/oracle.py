"""Brute-force verification paths for the closed-form criterion.

These deliberately share nothing with the fast path: the covariance is
assembled densely and inverted, the loss is evaluated straight from its
eigenvalue definition, and the worst case over the misspecification
ellipsoid is found through the explicit complement block X2. They exist to
catch regressions in the closed forms and the incremental updates, so they
stay simple and guarded to desk-scale problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contrasts import (
    ContrastSystem,
    FactorLayout,
    RequirementSet,
    build_contrasts,
    build_h2,
    complement_terms,
    term_values,
)
from .design import (
    ModelMatrices,
    SplitPlotDesign,
    VarianceSpec,
    assemble_sigma,
    build_model_matrices,
)
from .errors import CapacityError

#: naive paths refuse to assemble covariance blocks beyond this many runs
DENSE_RUN_GUARD = 512


@dataclass(frozen=True)
class EllipsoidSpec:
    """The misspecification set: (1/N) beta2' V2 beta2 <= alpha^2."""

    alpha: float
    v2: np.ndarray
    n_full: int

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    def boundary_point(self, direction: np.ndarray) -> np.ndarray:
        """The boundary vector along ``direction`` (V2-ellipsoid geometry)."""
        u = direction / np.linalg.norm(direction)
        return np.sqrt(self.n_full) * self.alpha * (u / np.sqrt(self.v2))


def _guard_runs(design: SplitPlotDesign) -> None:
    if design.n > DENSE_RUN_GUARD:
        raise CapacityError(
            f"design has n = {design.n} > {DENSE_RUN_GUARD} runs; the dense "
            "oracle is desk-scale only",
            DENSE_RUN_GUARD,
        )


def naive_loss(design: SplitPlotDesign, requirement: RequirementSet,
               var: VarianceSpec, alpha: float) -> float:
    """The loss by literal evaluation: dense Sigma^-1, Sigma^-2 = (Sigma^-1)^2,
    and the greatest eigenvalue of the (nonsymmetric) criterion matrix."""
    _guard_runs(design)
    matrices = build_model_matrices(design, requirement)
    x1, v1 = matrices.x1, matrices.v1
    sigma_inv = np.linalg.inv(assemble_sigma(design, var))
    sigma_inv2 = sigma_inv @ sigma_inv
    info = x1.T @ sigma_inv @ x1
    info_inv = np.linalg.inv(info)
    rv = np.sqrt(v1)
    middle = (
        np.diag(rv) @ info_inv @ x1.T @ sigma_inv2 @ x1 @ np.diag(1.0 / rv)
        - np.diag(1.0 / rv) @ info @ np.diag(1.0 / rv)
    )
    lam = float(np.max(np.linalg.eigvals(middle).real))
    return float((1.0 + design.layout.n_full * alpha * alpha * lam) / np.linalg.det(info))


def _x2_matrix(design: SplitPlotDesign, requirement: RequirementSet,
               contrasts: ContrastSystem | None = None) -> tuple[np.ndarray, np.ndarray]:
    """X2 (complement columns at the design runs) and the full-factorial V2."""
    contrasts = contrasts or build_contrasts(design.layout)
    _, v2 = build_h2(requirement, design.layout, contrasts)
    runs = design.runs()
    cols = [term_values(t, runs, contrasts)
            for t in complement_terms(requirement, design.layout)]
    x2 = np.column_stack(cols) if cols else np.zeros((design.n, 0))
    return x2, v2


def mse_determinant(design: SplitPlotDesign, requirement: RequirementSet,
                    var: VarianceSpec, beta2: np.ndarray) -> float:
    """|cov + bias bias'| at one misspecification vector, assembled literally."""
    _guard_runs(design)
    matrices = build_model_matrices(design, requirement)
    x2, _ = _x2_matrix(design, requirement)
    sigma_inv = np.linalg.inv(assemble_sigma(design, var))
    info = matrices.x1.T @ sigma_inv @ matrices.x1
    cov = np.linalg.inv(info)
    bias = cov @ matrices.x1.T @ sigma_inv @ x2 @ np.asarray(beta2, dtype=np.float64)
    return float(np.linalg.det(cov + np.outer(bias, bias)))


def ellipsoid_max(design: SplitPlotDesign, requirement: RequirementSet,
                  var: VarianceSpec, alpha: float) -> tuple[float, np.ndarray]:
    """Maximize |MSE| over the ellipsoid through the explicit complement block.

    By the determinant lemma the maximum is |cov| (1 + N alpha^2 lam_max(B))
    with B = V2^{-1/2} X2' S^-1 X1 (X1'S^-1X1)^-1 X1'S^-1 X2 V2^{-1/2}; the
    argmax lies along the top eigenvector, scaled to the ellipsoid boundary.
    """
    _guard_runs(design)
    matrices = build_model_matrices(design, requirement)
    x2, v2 = _x2_matrix(design, requirement)
    sigma_inv = np.linalg.inv(assemble_sigma(design, var))
    info = matrices.x1.T @ sigma_inv @ matrices.x1
    cross = x2.T @ sigma_inv @ matrices.x1  # (N-p-1, 1+p)
    half = cross @ np.linalg.inv(info) @ cross.T
    scale = 1.0 / np.sqrt(v2)
    bmat = half * np.outer(scale, scale)
    bmat = 0.5 * (bmat + bmat.T)
    w, vecs = np.linalg.eigh(bmat)
    lam, vec = float(w[-1]), vecs[:, -1]
    n_full = design.layout.n_full
    value = float((1.0 + n_full * alpha * alpha * lam) / np.linalg.det(info))
    spec = EllipsoidSpec(alpha=alpha, v2=v2, n_full=n_full)
    beta2 = spec.boundary_point(vec) if alpha > 0 else np.zeros_like(vec)
    return value, beta2


def sampling_lower_bound(design: SplitPlotDesign, requirement: RequirementSet,
                         var: VarianceSpec, alpha: float, samples: int,
                         rng: np.random.Generator) -> float:
    """Max of |MSE| over uniform draws on the ellipsoid boundary.

    A Monte Carlo sanity bound: never exceeds the closed-form loss and
    approaches it as the sample count grows. Directions are uniform on the
    transformed sphere (normalized Gaussians rescaled by V2^{-1/2}).
    """
    _guard_runs(design)
    matrices = build_model_matrices(design, requirement)
    x2, v2 = _x2_matrix(design, requirement)
    sigma_inv = np.linalg.inv(assemble_sigma(design, var))
    info = matrices.x1.T @ sigma_inv @ matrices.x1
    cov = np.linalg.inv(info)
    bias_map = cov @ matrices.x1.T @ sigma_inv @ x2  # (1+p, N-p-1)
    n_full = design.layout.n_full
    best = float(np.linalg.det(cov))  # beta2 = 0 is always feasible
    if alpha == 0 or x2.shape[1] == 0:
        return best
    dim = x2.shape[1]
    root_scale = np.sqrt(n_full) * alpha / np.sqrt(v2)
    for _ in range(samples):
        z = rng.standard_normal(dim)
        beta2 = root_scale * (z / np.linalg.norm(z))
        bias = bias_map @ beta2
        value = float(np.linalg.det(cov + np.outer(bias, bias)))
        if value > best:
            best = value
    return best
