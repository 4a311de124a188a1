"""The minimax loss: phi, pi, and L = (1 + N alpha^2 phi) / pi.

With M1 = X1' Sigma^-1 X1, M2 = G1' Sigma^-1 G1, M3 = G1' Sigma^-2 G1 and
G1 = X1 V1^{-1/2}, the worst-case determinant of the estimator's MSE matrix
over the misspecification ellipsoid is

    L = (1 + N alpha^2 * lam_max(M2^-1 M3 - M2)) / |M1|.

All three M matrices have per-plot closed forms (compound-symmetry blocks),
so no n x n matrix is ever formed on this path. pi = |M1| is carried as a
log-determinant throughout: at Example-1 scale pi is already ~4e6 and larger
requirement sets overflow doubles quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import (
    ModelMatrices,
    SplitPlotDesign,
    VarianceSpec,
    _require_whole_plot_structure,
    covariance_coefficients,
)
from .errors import InvalidScaleError, SingularDesignError

#: lam_min(M2) must exceed PD_TOL * trace(M2) / (1+p), else the design is singular.
PD_TOL = 1e-10


@dataclass
class CriterionState:
    """Cached quantities supporting both evaluation and incremental updates."""

    logdet_m1: float
    m1: np.ndarray
    m1_inv: np.ndarray
    m2: np.ndarray
    m2_inv: np.ndarray
    m3: np.ndarray
    x_sums: np.ndarray
    g_sums: np.ndarray
    n_per_plot: np.ndarray
    coef1: np.ndarray
    coef2: np.ndarray
    sigma_eps_sq: float
    d: float

    @property
    def q(self) -> int:
        return self.m2.shape[0]

    @property
    def p(self) -> int:
        return self.q - 1

    @property
    def b(self) -> int:
        return len(self.n_per_plot)

    @property
    def n(self) -> int:
        return int(self.n_per_plot.sum())

    def copy(self) -> "CriterionState":
        return CriterionState(
            logdet_m1=self.logdet_m1,
            m1=self.m1.copy(),
            m1_inv=self.m1_inv.copy(),
            m2=self.m2.copy(),
            m2_inv=self.m2_inv.copy(),
            m3=self.m3.copy(),
            x_sums=self.x_sums.copy(),
            g_sums=self.g_sums.copy(),
            n_per_plot=self.n_per_plot.copy(),
            coef1=self.coef1.copy(),
            coef2=self.coef2.copy(),
            sigma_eps_sq=self.sigma_eps_sq,
            d=self.d,
        )


@dataclass(frozen=True)
class LossReport:
    """phi, pi and L for one design; pi and L as logs and (1+p)-th roots."""

    phi: float
    log_pi: float
    log_loss: float
    alpha: float
    d: float
    sigma_eps_sq: float
    p: int
    n_full: int
    n: int
    b: int

    @property
    def pi_root(self) -> float:
        return math.exp(self.log_pi / (self.p + 1))

    @property
    def loss_root(self) -> float:
        return math.exp(self.log_loss / (self.p + 1))

    @property
    def loss(self) -> float:
        return math.exp(self.log_loss)

    @property
    def pi(self) -> float:
        return math.exp(self.log_pi)

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "pi_root": self.pi_root,
            "loss_root": self.loss_root,
            "log_pi": self.log_pi,
            "log_loss": self.log_loss,
            "alpha": self.alpha,
            "d": self.d,
            "sigma_eps_sq": self.sigma_eps_sq,
            "p": self.p,
            "N": self.n_full,
            "n": self.n,
            "b": self.b,
        }


def _sym_inv_sqrt(m2: np.ndarray) -> np.ndarray:
    w, vecs = np.linalg.eigh(m2)
    return (vecs / np.sqrt(w)) @ vecs.T


def _check_pd(m2: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(m2)
    q = m2.shape[0]
    if w[0] <= PD_TOL * np.trace(m2) / q:
        raise SingularDesignError(
            "M2 is not positive definite within tolerance; the criterion is "
            "undefined for this design"
        )
    return w


def compute_state(matrices: ModelMatrices, design: SplitPlotDesign,
                  var: VarianceSpec) -> CriterionState:
    """M1, M2, M3 (closed per-plot forms), their cached inverses, and logdet M1.

    Raises :class:`SingularDesignError` on rank deficiency, naming the
    requirement columns implicated by the null direction.
    """
    _require_whole_plot_structure(design.layout, var)
    c1, c2 = covariance_coefficients(design.sizes, var)
    s2inv = 1.0 / var.sigma_eps_sq
    s4inv = s2inv * s2inv
    x1, g1 = matrices.x1, matrices.g1
    m1 = x1.T @ x1
    m2 = g1.T @ g1
    m3 = m2.copy()
    b = matrices.b
    q = matrices.q
    x_sums = np.empty((b, q))
    g_sums = np.empty((b, q))
    for i in range(b):
        rows = matrices.plot_rows(i)
        xs = x1[rows].sum(axis=0)
        gs = g1[rows].sum(axis=0)
        x_sums[i] = xs
        g_sums[i] = gs
        m1 -= c1[i] * np.outer(xs, xs)
        m2 -= c1[i] * np.outer(gs, gs)
        m3 -= c2[i] * np.outer(gs, gs)
    m1 *= s2inv
    m2 *= s2inv
    m3 *= s4inv

    w2 = np.linalg.eigvalsh(m2)
    if w2[0] <= PD_TOL * np.trace(m2) / q:
        _raise_singular(m2, matrices, design)
    sign, logdet = np.linalg.slogdet(m1)
    if sign <= 0 or not np.isfinite(logdet):
        _raise_singular(m2, matrices, design)

    return CriterionState(
        logdet_m1=float(logdet),
        m1=m1,
        m1_inv=np.linalg.inv(m1),
        m2=m2,
        m2_inv=np.linalg.inv(m2),
        m3=m3,
        x_sums=x_sums,
        g_sums=g_sums,
        n_per_plot=np.asarray(design.sizes, dtype=np.int64),
        coef1=c1,
        coef2=c2,
        sigma_eps_sq=var.sigma_eps_sq,
        d=var.d,
    )


def _raise_singular(m2, matrices, design):
    _, vecs = np.linalg.eigh(m2)
    null = np.abs(vecs[:, 0])
    implicated = [j for j in range(len(null)) if null[j] > 0.3 * null.max()]
    if matrices.labels is not None:
        names = [matrices.labels[j] for j in implicated]
    else:
        names = [f"column {j}" for j in implicated]
    raise SingularDesignError(
        "singular information matrix: the design cannot estimate the "
        f"requirement set; the null direction involves {', '.join(names)}"
    )


def phi(state: CriterionState) -> float:
    """lam_max of M2^{-1/2} M3 M2^{-1/2} - M2 (similar to M2^-1 M3 - M2)."""
    _check_pd(state.m2)
    s = _sym_inv_sqrt(state.m2)
    bmat = s @ state.m3 @ s - state.m2
    bmat = 0.5 * (bmat + bmat.T)
    return float(np.linalg.eigvalsh(bmat)[-1])


def loss(state: CriterionState, n_full: int, alpha: float) -> LossReport:
    """The minimax loss (1 + N alpha^2 phi) / pi, computed in log space."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    phi_val = phi(state)
    log_loss = math.log1p(n_full * alpha * alpha * phi_val) - state.logdet_m1
    return LossReport(
        phi=phi_val,
        log_pi=state.logdet_m1,
        log_loss=log_loss,
        alpha=alpha,
        d=state.d,
        sigma_eps_sq=state.sigma_eps_sq,
        p=state.p,
        n_full=n_full,
        n=state.n,
        b=state.b,
    )


def evaluate_design(design: SplitPlotDesign, requirement, var: VarianceSpec,
                    alpha: float, contrasts=None) -> LossReport:
    """Convenience wrapper: matrices -> state -> loss for one design."""
    from .design import build_model_matrices

    matrices = build_model_matrices(design, requirement, contrasts)
    state = compute_state(matrices, design, var)
    return loss(state, design.layout.n_full, alpha)


def loss_crd(matrices: ModelMatrices, v1: np.ndarray, alpha: float,
             sigma_eps_sq: float, n_full: int) -> float:
    """The d = 0 reduction: a lam_min form over the completely randomized model.

    L = sigma^(2(p+1)) * [1 + (N alpha^2/sigma^2)(1 - lam_min(V^-1/2 X'X V^-1/2))]
        / |X'X|
    """
    x1 = matrices.x1
    gram = x1.T @ x1
    scale = 1.0 / np.sqrt(v1)
    inner = gram * np.outer(scale, scale)
    lam_min = float(np.linalg.eigvalsh(inner)[0])
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularDesignError("X1'X1 is singular; the CRD loss is undefined")
    p1 = matrices.q
    bracket = 1.0 + (n_full * alpha * alpha / sigma_eps_sq) * (1.0 - lam_min)
    return float(np.exp(p1 * np.log(sigma_eps_sq) + np.log(bracket) - logdet))


def rescaled_loss(matrices: ModelMatrices, design: SplitPlotDesign,
                  var: VarianceSpec, scales, n_full: int, alpha: float) -> float:
    """Loss after rescaling the p effect columns by c_1..c_p.

    Equals the unscaled loss divided by prod(c_i^2); the criterion's argmin is
    therefore scale invariant.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != (matrices.q - 1,):
        raise InvalidScaleError(
            f"need {matrices.q - 1} scale constants, got shape {scales.shape}"
        )
    if np.any(scales <= 0):
        raise InvalidScaleError("scale constants must be strictly positive")
    c = np.concatenate(([1.0], scales))
    x1 = matrices.x1 * c
    v1 = matrices.v1 * c * c
    scaled = ModelMatrices(x1=x1, g1=x1 / np.sqrt(v1), v1=v1, offsets=matrices.offsets)
    state = compute_state(scaled, design, var)
    return loss(state, n_full, alpha).loss
