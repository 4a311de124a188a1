"""Contrast systems, term algebra, and the H1/H2 column bases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustspd import (
    CapacityError,
    FactorLayout,
    InvalidTermError,
    RequirementSet,
    Term,
    build_contrasts,
    build_h1,
    build_h2,
    parse_term,
    term_column,
    v1_diagonal,
)
from robustspd.contrasts import enumerate_all_terms, level_combinations, term_values

from conftest import small_layout


class TestBuildContrasts:
    def test_two_level_coding(self):
        layout = small_layout([(2, "w"), (2, "s")])
        cs = build_contrasts(layout)
        np.testing.assert_array_equal(cs.matrix(0), [[-1.0], [1.0]])

    def test_three_level_coding_matches_published_values(self):
        layout = small_layout([(2, "w"), (3, "s")])
        cs = build_contrasts(layout)
        lin = np.sqrt(3.0 / 2.0) * np.array([-1.0, 0.0, 1.0])
        quad = np.sqrt(1.0 / 2.0) * np.array([1.0, -2.0, 1.0])
        np.testing.assert_array_equal(cs.matrix(1)[:, 0], lin)
        np.testing.assert_array_equal(cs.matrix(1)[:, 1], quad)

    @pytest.mark.parametrize("levels", [4, 5, 6])
    def test_higher_levels_are_orthonormal_polynomials(self, levels):
        layout = small_layout([(2, "w"), (levels, "s")])
        m = build_contrasts(layout).matrix(1)
        assert m.shape == (levels, levels - 1)
        np.testing.assert_allclose(m.sum(axis=0), 0.0, atol=1e-12)
        gram = m.T @ m
        np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-10)
        np.testing.assert_allclose(np.mean(m * m, axis=0), 1.0, atol=1e-12)

    @given(
        st.lists(st.integers(min_value=2, max_value=6), min_size=1, max_size=3)
    )
    @settings(max_examples=40, deadline=None)
    def test_contrast_invariants_hold_for_random_layouts(self, level_list):
        spec = [(level_list[0], "w")] + [(s, "s") for s in level_list]
        layout = small_layout(spec)
        cs = build_contrasts(layout)
        for i, f in enumerate(layout.factors):
            m = cs.matrix(i)
            np.testing.assert_allclose(m.sum(axis=0), 0.0, atol=1e-10)
            np.testing.assert_allclose(np.mean(m * m, axis=0), 1.0, atol=1e-10)


class TestFullFactorialOrthogonality:
    @pytest.mark.parametrize(
        "spec",
        [
            [(2, "w"), (2, "w"), (2, "s"), (2, "s"), (2, "s")],
            [(2, "w"), (3, "s"), (3, "s")],
            [(4, "w"), (3, "s")],
            [(2, "w"), (3, "s"), (4, "s")],
            [(5, "w"), (2, "s"), (2, "s")],
        ],
    )
    def test_full_h_is_orthogonal_with_norm_n(self, spec):
        layout = small_layout(spec)
        cs = build_contrasts(layout)
        runs = level_combinations([f.levels for f in layout.factors])
        cols = [np.ones(runs.shape[0])]
        cols += [term_values(t, runs, cs) for t in enumerate_all_terms(layout)]
        h = np.column_stack(cols)
        n = layout.n_full
        assert h.shape == (n, n)
        err = np.max(np.abs(h.T @ h - n * np.eye(n)))
        assert err <= 1e-10

    def test_every_noninterecept_column_sums_to_zero(self):
        layout = small_layout([(2, "w"), (3, "s"), (3, "s")])
        cs = build_contrasts(layout)
        runs = level_combinations([f.levels for f in layout.factors])
        for term in enumerate_all_terms(layout):
            col = term_values(term, runs, cs)
            assert abs(col.sum()) <= 1e-10


class TestTermColumn:
    def test_intercept_is_one(self):
        layout = small_layout([(2, "w"), (2, "s")])
        cs = build_contrasts(layout)
        assert term_column(Term(()), (0, 1), cs) == 1.0

    def test_two_level_main_effect_at_high_level(self):
        layout = small_layout([(2, "w"), (2, "s")])
        cs = build_contrasts(layout)
        assert term_column(Term(((0, 1),)), (1, 0), cs) == 1.0

    def test_mixed_degree_product(self):
        # linear at the low level of a 2-level factor times quadratic at the
        # middle level of a 3-level factor: (-1) * (-2 sqrt(1/2)) = sqrt(2)
        layout = small_layout([(2, "w"), (3, "s")])
        cs = build_contrasts(layout)
        value = term_column(Term(((0, 1), (1, 2))), (0, 1), cs)
        assert value == pytest.approx(np.sqrt(2.0), abs=1e-14)

    def test_degree_out_of_range_raises(self):
        layout = small_layout([(2, "w"), (2, "s")])
        cs = build_contrasts(layout)
        with pytest.raises(InvalidTermError):
            term_column(Term(((0, 2),)), (0, 0), cs)


class TestV1Diagonal:
    def test_example1_layout_gives_all_32(self, ex1):
        v1 = v1_diagonal(ex1["requirement"], ex1["layout"])
        h1 = build_h1(ex1["requirement"], ex1["layout"])
        explicit = np.diag(h1.T @ h1)
        np.testing.assert_allclose(v1, explicit, atol=1e-10)
        np.testing.assert_allclose(v1, 32.0, atol=1e-10)
        off = h1.T @ h1 - np.diag(explicit)
        assert np.max(np.abs(off)) <= 1e-10

    def test_example2_layout_gives_all_18(self, ex2):
        v1 = v1_diagonal(ex2["requirement"], ex2["layout"])
        h1 = build_h1(ex2["requirement"], ex2["layout"])
        np.testing.assert_allclose(v1, np.diag(h1.T @ h1), atol=1e-10)
        np.testing.assert_allclose(v1, 18.0, atol=1e-10)

    def test_single_two_level_factor(self):
        layout = small_layout([(2, "w"), (2, "s")])
        req = RequirementSet.parse(["x1"], layout)
        sub = FactorLayout.create([("A", 2, "subplot")])
        req_sub = RequirementSet.parse(["x1"], sub)
        np.testing.assert_allclose(v1_diagonal(req_sub, sub), [2.0, 2.0], atol=1e-12)


class TestBuildH2:
    def test_two_by_two_leaves_single_interaction_column(self):
        layout = small_layout([(2, "w"), (2, "s")])
        req = RequirementSet.parse(["x1", "x2"], layout)
        h2, v2 = build_h2(req, layout)
        assert h2.shape == (4, 1)
        np.testing.assert_allclose(v2, [4.0], atol=1e-12)
        runs = level_combinations([2, 2])
        prod = build_contrasts(layout).matrix(0)[runs[:, 0], 0] * \
            build_contrasts(layout).matrix(1)[runs[:, 1], 0]
        np.testing.assert_allclose(h2[:, 0], prod, atol=1e-14)

    def test_example1_complement_has_24_orthogonal_columns(self, ex1):
        h2, v2 = build_h2(ex1["requirement"], ex1["layout"])
        h1 = build_h1(ex1["requirement"], ex1["layout"])
        assert h2.shape == (32, 24)
        assert np.max(np.abs(h1.T @ h2)) <= 1e-12
        np.testing.assert_allclose(v2, 32.0, atol=1e-10)

    def test_example2_complement_has_8_columns(self, ex2):
        h2, _ = build_h2(ex2["requirement"], ex2["layout"])
        h1 = build_h1(ex2["requirement"], ex2["layout"])
        assert h2.shape == (18, 8)
        assert np.max(np.abs(h1.T @ h2)) <= 1e-12

    def test_capacity_guard(self):
        layout = small_layout([(2, "w")] + [(2, "s")] * 12)  # N = 8192
        req = RequirementSet.parse(["x1"], layout)
        with pytest.raises(CapacityError):
            build_h2(req, layout)


class TestParseTerm:
    def setup_method(self):
        self.layout = small_layout([(2, "w"), (3, "s"), (2, "s"), (4, "s")])

    def test_plain_main_effect(self):
        assert parse_term("x1", self.layout) == Term(((0, 1),))

    def test_degree_suffixes(self):
        assert parse_term("x2L", self.layout) == Term(((1, 1),))
        assert parse_term("x2Q", self.layout) == Term(((1, 2),))
        assert parse_term("x4C", self.layout) == Term(((3, 3),))

    def test_interaction(self):
        assert parse_term("x1*x2Q", self.layout) == Term(((0, 1), (1, 2)))

    def test_unknown_factor_message(self):
        with pytest.raises(InvalidTermError, match="unknown factor x9"):
            parse_term("x9", self.layout)

    def test_degree_beyond_levels(self):
        with pytest.raises(InvalidTermError, match="degree"):
            parse_term("x3Q", self.layout)  # x3 has 2 levels

    def test_repeated_factor(self):
        with pytest.raises(InvalidTermError, match="repeated"):
            parse_term("x1*x1", self.layout)

    def test_garbage(self):
        with pytest.raises(InvalidTermError):
            parse_term("y2", self.layout)

    def test_requirement_rejects_duplicates(self):
        with pytest.raises(InvalidTermError, match="distinct"):
            RequirementSet.parse(["x1", "x1"], self.layout)
