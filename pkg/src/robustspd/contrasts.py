"""Orthogonal contrast systems and requirement-set column bases.

Factor levels are coded as orthogonal polynomial contrasts scaled so the mean
square of every contrast column equals one. Under that normalization the full
factorial model matrix H (one column per effect, intercept included) satisfies
H'H = N I, so every diagonal scaling matrix is N times an identity.

Two- and three-level factors use the fixed codings (-1, +1) and
sqrt(3/2)*(-1, 0, +1) / sqrt(1/2)*(+1, -2, +1); higher level counts fall back
to Gram-Schmidt orthogonal polynomials on equally spaced scores.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, InvalidTermError

ROLE_WHOLE = "whole-plot"
ROLE_SUB = "subplot"

#: Largest full factorial the dense-H oracle paths may materialize.
FULL_FACTORIAL_GUARD = 4096

_DEGREE_SUFFIX = {"L": 1, "Q": 2, "C": 3}
_SUFFIX_FOR_DEGREE = {v: k for k, v in _DEGREE_SUFFIX.items()}
_TERM_PART = re.compile(r"^x(\d+)([LQC])?$")


@dataclass(frozen=True)
class Factor:
    name: str
    levels: int
    role: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("factor name must be non-empty")
        if self.levels < 2:
            raise ValueError(f"factor {self.name!r} needs >= 2 levels, got {self.levels}")
        if self.role not in (ROLE_WHOLE, ROLE_SUB):
            raise ValueError(f"factor {self.name!r} role must be {ROLE_WHOLE!r} or {ROLE_SUB!r}")


@dataclass(frozen=True)
class FactorLayout:
    """The experiment's factors; whole-plot factors are the hard-to-change ones."""

    factors: tuple[Factor, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("layout needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("factor names must be distinct")
        if self.m_s == 0:
            raise ValueError("layout needs at least one subplot factor")
        # An all-subplot layout is legal but only meaningful with d = 0; that
        # is enforced where a variance spec is in hand (design/criterion).

    @classmethod
    def create(cls, specs) -> "FactorLayout":
        """Build from an iterable of (name, levels, role) triples."""
        return cls(tuple(Factor(str(n), int(s), str(r)) for n, s, r in specs))

    @property
    def m(self) -> int:
        return len(self.factors)

    @property
    def wp_indices(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.factors) if f.role == ROLE_WHOLE)

    @property
    def sp_indices(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.factors) if f.role == ROLE_SUB)

    @property
    def m_w(self) -> int:
        return len(self.wp_indices)

    @property
    def m_s(self) -> int:
        return len(self.sp_indices)

    @property
    def n_full(self) -> int:
        """N, the run count of the full factorial."""
        out = 1
        for f in self.factors:
            out *= f.levels
        return out

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.factors):
            if f.name == name:
                return i
        raise KeyError(name)


def level_combinations(level_counts) -> np.ndarray:
    """All level tuples for the given counts, lexicographic, last factor fastest."""
    counts = tuple(int(c) for c in level_counts)
    if not counts:
        return np.zeros((1, 0), dtype=np.int64)
    rows = list(itertools.product(*(range(c) for c in counts)))
    return np.array(rows, dtype=np.int64)


@dataclass(frozen=True)
class ContrastSystem:
    """Per-factor contrast matrices of shape (s_i, s_i - 1); column k-1 is degree k."""

    matrices: tuple[np.ndarray, ...]

    def matrix(self, factor: int) -> np.ndarray:
        return self.matrices[factor]

    def value(self, factor: int, level: int, degree: int) -> float:
        return float(self.matrices[factor][level, degree - 1])

    def mean_square(self, factor: int, degree: int) -> float:
        col = self.matrices[factor][:, degree - 1]
        return float(np.mean(col * col))


def _orthogonal_polynomials(levels: int) -> np.ndarray:
    # Gram-Schmidt on (1, x, x^2, ...) over equally spaced scores, then scale
    # each column to mean square one.
    scores = np.arange(levels, dtype=np.float64)
    basis = np.vander(scores, levels, increasing=True)
    out = np.empty((levels, levels - 1))
    kept = [np.ones(levels)]
    for k in range(1, levels):
        v = basis[:, k].copy()
        for u in kept:
            v -= (v @ u) / (u @ u) * u
        out[:, k - 1] = v / np.sqrt(np.mean(v * v))
        kept.append(v)
    return out


def build_contrasts(layout: FactorLayout) -> ContrastSystem:
    """Orthogonal contrasts for every factor in the layout.

    Two- and three-level factors use the canonical codings; the three-level
    linear/quadratic columns are sqrt(3/2)*(-1, 0, +1) and sqrt(1/2)*(+1, -2, +1).
    """
    mats = []
    for f in layout.factors:
        if f.levels == 2:
            m = np.array([[-1.0], [1.0]])
        elif f.levels == 3:
            m = np.column_stack(
                [
                    np.sqrt(3.0 / 2.0) * np.array([-1.0, 0.0, 1.0]),
                    np.sqrt(1.0 / 2.0) * np.array([1.0, -2.0, 1.0]),
                ]
            )
        else:
            m = _orthogonal_polynomials(f.levels)
        mats.append(m)
    return ContrastSystem(tuple(mats))


@dataclass(frozen=True)
class Term:
    """A product effect: ((factor index, component degree), ...), ascending.

    The empty tuple is the intercept.
    """

    components: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        comps = tuple((int(f), int(k)) for f, k in self.components)
        object.__setattr__(self, "components", comps)
        idx = [f for f, _ in comps]
        if sorted(set(idx)) != idx:
            raise InvalidTermError(f"term factors must be distinct and ascending: {comps}")
        for f, k in comps:
            if f < 0 or k < 1:
                raise InvalidTermError(f"bad term component ({f}, {k})")

    @property
    def is_intercept(self) -> bool:
        return not self.components

    def validate(self, layout: FactorLayout) -> None:
        for f, k in self.components:
            if f >= layout.m:
                raise InvalidTermError(f"unknown factor x{f + 1}")
            if k > layout.factors[f].levels - 1:
                raise InvalidTermError(
                    f"degree {k} out of range for factor {layout.factors[f].name} "
                    f"({layout.factors[f].levels} levels)"
                )

    def label(self, layout: FactorLayout) -> str:
        if self.is_intercept:
            return "1"
        parts = []
        for f, k in self.components:
            suffix = _SUFFIX_FOR_DEGREE[k] if layout.factors[f].levels > 2 else ""
            parts.append(f"x{f + 1}{suffix}")
        return "*".join(parts)


def parse_term(text: str, layout: FactorLayout) -> Term:
    """Parse `x1`, `x2Q`, `x1*x3`, ... against the layout.

    A trailing L/Q/C picks component degree 1/2/3; no suffix means degree 1.
    """
    comps = []
    for part in text.split("*"):
        part = part.strip()
        m = _TERM_PART.match(part)
        if not m:
            raise InvalidTermError(f"cannot parse term part {part!r} in {text!r}")
        idx = int(m.group(1)) - 1
        if idx < 0 or idx >= layout.m:
            raise InvalidTermError(f"unknown factor x{m.group(1)}")
        degree = _DEGREE_SUFFIX[m.group(2)] if m.group(2) else 1
        comps.append((idx, degree))
    comps.sort()
    if len({f for f, _ in comps}) != len(comps):
        raise InvalidTermError(f"repeated factor in term {text!r}")
    term = Term(tuple(comps))
    term.validate(layout)
    return term


@dataclass(frozen=True)
class RequirementSet:
    """The ordered p model terms; the intercept is implicit and never listed."""

    terms: tuple[Term, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if any(t.is_intercept for t in self.terms):
            raise InvalidTermError("the intercept is implicit; do not list it")
        if len(set(self.terms)) != len(self.terms):
            raise InvalidTermError("requirement terms must be distinct")

    @classmethod
    def parse(cls, strings, layout: FactorLayout) -> "RequirementSet":
        return cls(tuple(parse_term(s, layout) for s in strings))

    @property
    def p(self) -> int:
        return len(self.terms)

    def validate(self, layout: FactorLayout) -> None:
        for t in self.terms:
            t.validate(layout)
        if self.p + 1 > layout.n_full:
            raise InvalidTermError(
                f"requirement has p + 1 = {self.p + 1} columns but the full "
                f"factorial only spans N = {layout.n_full}"
            )

    def labels(self, layout: FactorLayout) -> tuple[str, ...]:
        return ("1",) + tuple(t.label(layout) for t in self.terms)


def term_column(term: Term, run, contrasts: ContrastSystem) -> float:
    """One entry of H: the term's contrast product at a single run.

    ``run`` supplies a 0-based level for every factor; the intercept gives 1.
    """
    value = 1.0
    for f, k in term.components:
        mat = contrasts.matrix(f)
        if k > mat.shape[1]:
            raise InvalidTermError(f"degree {k} out of range for factor index {f}")
        value *= mat[run[f], k - 1]
    return float(value)


def term_values(term: Term, runs: np.ndarray, contrasts: ContrastSystem) -> np.ndarray:
    """Vectorized :func:`term_column` over an (n, m) array of level rows."""
    out = np.ones(runs.shape[0])
    for f, k in term.components:
        mat = contrasts.matrix(f)
        if k > mat.shape[1]:
            raise InvalidTermError(f"degree {k} out of range for factor index {f}")
        out *= mat[runs[:, f], k - 1]
    return out


def v1_diagonal(requirement: RequirementSet, layout: FactorLayout,
                contrasts: ContrastSystem | None = None) -> np.ndarray:
    """Diagonal of H1'H1: N times the product of per-component mean squares.

    Under the default normalized coding every entry equals N.
    """
    contrasts = contrasts or build_contrasts(layout)
    n_full = float(layout.n_full)
    diag = np.empty(requirement.p + 1)
    diag[0] = n_full
    for j, term in enumerate(requirement.terms, start=1):
        ms = 1.0
        for f, k in term.components:
            ms *= contrasts.mean_square(f, k)
        diag[j] = n_full * ms
    return diag


def enumerate_all_terms(layout: FactorLayout) -> tuple[Term, ...]:
    """Every non-intercept effect of the full factorial, in canonical order."""
    degree_ranges = [range(f.levels) for f in layout.factors]
    terms = []
    for degrees in itertools.product(*degree_ranges):
        comps = tuple((f, k) for f, k in enumerate(degrees) if k > 0)
        if comps:
            terms.append(Term(comps))
    return tuple(terms)


def build_h1(requirement: RequirementSet, layout: FactorLayout,
             contrasts: ContrastSystem | None = None) -> np.ndarray:
    """Materialize the N x (1+p) requirement block of H (oracle/test use)."""
    _guard_full(layout)
    contrasts = contrasts or build_contrasts(layout)
    runs = level_combinations([f.levels for f in layout.factors])
    cols = [np.ones(runs.shape[0])]
    cols += [term_values(t, runs, contrasts) for t in requirement.terms]
    return np.column_stack(cols)


def build_h2(requirement: RequirementSet, layout: FactorLayout,
             contrasts: ContrastSystem | None = None) -> tuple[np.ndarray, np.ndarray]:
    """The N x (N-p-1) complement block H2 and the diagonal of H2'H2.

    Columns are all full-factorial effects outside the requirement set, in
    canonical enumeration order. Oracle use only; N is guarded.
    """
    _guard_full(layout)
    contrasts = contrasts or build_contrasts(layout)
    requirement.validate(layout)
    in_r = set(requirement.terms)
    runs = level_combinations([f.levels for f in layout.factors])
    cols = [term_values(t, runs, contrasts)
            for t in enumerate_all_terms(layout) if t not in in_r]
    h2 = np.column_stack(cols) if cols else np.zeros((runs.shape[0], 0))
    v2 = np.einsum("ij,ij->j", h2, h2)
    return h2, v2


def complement_terms(requirement: RequirementSet, layout: FactorLayout) -> tuple[Term, ...]:
    """The effects spanning H2, in the same order as :func:`build_h2` columns."""
    in_r = set(requirement.terms)
    return tuple(t for t in enumerate_all_terms(layout) if t not in in_r)


def _guard_full(layout: FactorLayout) -> None:
    if layout.n_full > FULL_FACTORIAL_GUARD:
        raise CapacityError(
            f"full factorial has N = {layout.n_full} > {FULL_FACTORIAL_GUARD} runs; "
            "materializing H is reserved for the brute-force oracle - use the "
            "closed-form criterion path instead",
            FULL_FACTORIAL_GUARD,
        )
