"""Designs, model matrices, covariance blocks, GLS estimation, CSV format."""

import numpy as np
import pytest

from robustspd import (
    MalformedDesignError,
    SingularDesignError,
    SplitPlotDesign,
    VarianceSpec,
    WholePlot,
    build_model_matrices,
    design_from_csv,
    design_to_csv,
    glse_estimate,
    sigma_inverse_blocks,
)
from robustspd.design import assemble_sigma

from conftest import main_effects, random_design, small_layout


class TestVarianceSpec:
    def test_ratio(self):
        assert VarianceSpec(2.0, 1.0).d == 0.5
        assert VarianceSpec.from_ratio(4.0, 2.0).sigma_gamma_sq == 8.0

    def test_validation(self):
        with pytest.raises(ValueError):
            VarianceSpec(0.0, 1.0)
        with pytest.raises(ValueError):
            VarianceSpec(1.0, -0.5)


class TestSplitPlotDesign:
    def test_duplicate_run_names_plot_and_subplot(self):
        layout = small_layout([(2, "w"), (2, "s"), (2, "s")])
        with pytest.raises(MalformedDesignError, match=r"plot 2, subplot 2 repeats plot 1, subplot 1"):
            SplitPlotDesign(
                layout=layout,
                plots=(
                    WholePlot(w=(0,), subplots=((0, 0), (0, 1))),
                    WholePlot(w=(0,), subplots=((1, 1), (0, 0))),
                ),
            )

    def test_same_subplot_under_different_w_is_fine(self):
        layout = small_layout([(2, "w"), (2, "s"), (2, "s")])
        d = SplitPlotDesign(
            layout=layout,
            plots=(
                WholePlot(w=(0,), subplots=((0, 0),)),
                WholePlot(w=(1,), subplots=((0, 0),)),
            ),
        )
        assert d.n == 2 and d.b == 2 and d.sizes == (1, 1)

    def test_level_out_of_range(self):
        layout = small_layout([(2, "w"), (3, "s")])
        with pytest.raises(MalformedDesignError, match="out of range"):
            SplitPlotDesign(
                layout=layout, plots=(WholePlot(w=(2,), subplots=((0,),)),)
            )


class TestModelMatrices:
    def test_d1_is_15_by_8_with_unit_intercept(self, ex1, designs):
        m = build_model_matrices(designs["D1"], ex1["requirement"])
        assert m.x1.shape == (15, 8)
        np.testing.assert_array_equal(m.x1[:, 0], 1.0)
        np.testing.assert_allclose(m.g1, m.x1 / np.sqrt(32.0), atol=1e-14)

    def test_single_run_main_effect(self):
        layout = small_layout([(2, "w"), (2, "s")])
        from robustspd import RequirementSet

        req = RequirementSet.parse(["x1"], layout)
        d = SplitPlotDesign(layout=layout, plots=(WholePlot(w=(1,), subplots=((0,),)),))
        m = build_model_matrices(d, req)
        np.testing.assert_array_equal(m.x1, [[1.0, 1.0]])

    def test_d3_entries_come_from_the_mixed_level_coding(self, ex2, designs):
        m = build_model_matrices(designs["D3"], ex2["requirement"])
        assert m.x1.shape == (10, 10)
        allowed = {0.0, 1.0, np.sqrt(0.5), 2.0 * np.sqrt(0.5), np.sqrt(1.5)}
        for value in np.abs(m.x1).ravel():
            assert any(abs(value - a) <= 1e-12 for a in allowed), value


class TestSigmaBlocks:
    def test_two_run_plot_with_unit_ratio(self):
        layout = small_layout([(2, "w"), (2, "s"), (2, "s")])
        d = SplitPlotDesign(
            layout=layout, plots=(WholePlot(w=(0,), subplots=((0, 0), (0, 1))),)
        )
        (inv1, inv2), = sigma_inverse_blocks(d, VarianceSpec(1.0, 1.0))
        np.testing.assert_allclose(inv1, [[2 / 3, -1 / 3], [-1 / 3, 2 / 3]], atol=1e-14)
        np.testing.assert_allclose(inv2, [[5 / 9, -4 / 9], [-4 / 9, 5 / 9]], atol=1e-14)

    def test_crd_reduction(self):
        layout = small_layout([(2, "w"), (2, "s"), (2, "s")])
        d = SplitPlotDesign(
            layout=layout, plots=(WholePlot(w=(0,), subplots=((0, 0), (0, 1))),)
        )
        (inv1, inv2), = sigma_inverse_blocks(d, VarianceSpec(2.0, 0.0))
        np.testing.assert_allclose(inv1, np.eye(2) / 2.0, atol=1e-14)
        np.testing.assert_allclose(inv2, np.eye(2) / 4.0, atol=1e-14)

    def test_four_run_plot_against_dense_inversion(self):
        layout = small_layout([(2, "w"), (2, "s"), (2, "s")])
        d = SplitPlotDesign(
            layout=layout,
            plots=(WholePlot(w=(0,), subplots=((0, 0), (0, 1), (1, 0), (1, 1))),),
        )
        var = VarianceSpec(1.0, 1.0)
        (inv1, inv2), = sigma_inverse_blocks(d, var)
        assert inv1[0, 1] == pytest.approx(-1.0 / 5.0, abs=1e-14)
        sigma = var.sigma_eps_sq * (np.eye(4) + var.d * np.ones((4, 4)))
        np.testing.assert_allclose(inv1 @ sigma, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(inv2, np.linalg.inv(sigma) @ np.linalg.inv(sigma), atol=1e-12)

    @pytest.mark.parametrize("d_ratio", [0.0, 0.5, 1.0, 4.0])
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_assembled_inverse_times_sigma_is_identity(self, d_ratio, seed):
        layout = small_layout([(2, "w"), (2, "w"), (2, "s"), (2, "s"), (2, "s")])
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(1, 9)) for _ in range(3)]
        design = random_design(layout, 3, sizes, seed)
        var = VarianceSpec.from_ratio(d_ratio, sigma_eps_sq=1.5)
        blocks = sigma_inverse_blocks(design, var)
        n = design.n
        full_inv = np.zeros((n, n))
        ofs = 0
        for inv1, _ in blocks:
            k = inv1.shape[0]
            full_inv[ofs:ofs + k, ofs:ofs + k] = inv1
            ofs += k
        sigma = assemble_sigma(design, var)
        assert np.max(np.abs(full_inv @ sigma - np.eye(n))) <= 1e-10


class TestGlse:
    def _problem(self):
        layout = small_layout([(2, "w"), (2, "w"), (2, "s"), (2, "s"), (2, "s")])
        req = main_effects(layout)
        design = random_design(layout, 4, [4, 4, 4, 4], 11)
        matrices = build_model_matrices(design, req)
        return layout, req, design, matrices

    def test_noiseless_recovery(self):
        _, _, design, matrices = self._problem()
        beta = np.arange(1.0, matrices.q + 1)
        y = matrices.x1 @ beta
        est, cov = glse_estimate(design, matrices, VarianceSpec(1.0, 1.0), y)
        np.testing.assert_allclose(est, beta, atol=1e-10)
        # SPD covariance whenever the design has full column rank
        np.linalg.cholesky(cov)

    def test_crd_equals_ordinary_least_squares(self):
        _, _, design, matrices = self._problem()
        rng = np.random.default_rng(3)
        y = rng.normal(size=matrices.n)
        est, _ = glse_estimate(design, matrices, VarianceSpec(1.0, 0.0), y)
        ols, *_ = np.linalg.lstsq(matrices.x1, y, rcond=None)
        np.testing.assert_allclose(est, ols, atol=1e-10)

    def test_monte_carlo_unbiasedness(self):
        _, _, design, matrices = self._problem()
        var = VarianceSpec(1.0, 1.0)
        beta = np.linspace(-1.0, 1.0, matrices.q)
        mean_signal = matrices.x1 @ beta
        rng = np.random.default_rng(42)
        reps = 10_000
        n, b = matrices.n, matrices.b
        # vectorized GLSE: beta_hat = A y for the fixed design
        blocks = sigma_inverse_blocks(design, var)
        info = np.zeros((matrices.q, matrices.q))
        proj = np.zeros((matrices.q, n))
        for i, (inv1, _) in enumerate(blocks):
            rows = matrices.plot_rows(i)
            info += matrices.x1[rows].T @ inv1 @ matrices.x1[rows]
            proj[:, rows] = matrices.x1[rows].T @ inv1
        a_map = np.linalg.solve(info, proj)
        gamma = rng.standard_normal((b, reps)) * np.sqrt(var.sigma_gamma_sq)
        eps = rng.standard_normal((n, reps)) * np.sqrt(var.sigma_eps_sq)
        plot_of_run = np.concatenate(
            [np.full(s, i) for i, s in enumerate(design.sizes)]
        )
        ys = mean_signal[:, None] + gamma[plot_of_run] + eps
        betas = a_map @ ys
        cov = np.linalg.inv(info)
        se_of_mean = np.sqrt(np.diag(cov) / reps)
        assert np.all(np.abs(betas.mean(axis=1) - beta) <= 3.0 * se_of_mean)

    def test_singular_design_raises(self):
        layout = small_layout([(2, "w"), (2, "s")])
        from robustspd import RequirementSet

        req = RequirementSet.parse(["x1", "x2", "x1*x2"], layout)
        d = SplitPlotDesign(
            layout=layout,
            plots=(
                WholePlot(w=(0,), subplots=((0,),)),
                WholePlot(w=(1,), subplots=((1,),)),
            ),
        )
        matrices = build_model_matrices(d, req)
        with pytest.raises(SingularDesignError):
            glse_estimate(d, matrices, VarianceSpec(1.0, 1.0), np.zeros(2))


class TestDesignCsv:
    def test_round_trip(self, designs):
        for name in ("D1", "D3"):
            design = designs[name]
            text = design_to_csv(design)
            back = design_from_csv(text, design.layout)
            assert back == design

    def test_two_level_accepts_minus_plus_and_binary(self):
        layout = small_layout([(2, "w"), (2, "s")])
        a = design_from_csv("plot,F1,F2\n1,-1,1\n1,-1,-1\n", layout)
        b = design_from_csv("plot,F1,F2\n1,0,1\n1,0,0\n", layout)
        assert a == b

    def test_header_mismatch(self):
        layout = small_layout([(2, "w"), (2, "s")])
        with pytest.raises(MalformedDesignError, match="header"):
            design_from_csv("plot,A,B\n1,0,0\n", layout)

    def test_duplicate_run_is_reported(self):
        layout = small_layout([(2, "w"), (2, "s")])
        text = "plot,F1,F2\n1,-1,1\n2,-1,1\n"
        with pytest.raises(MalformedDesignError, match="duplicate run"):
            design_from_csv(text, layout)

    def test_plot_ids_must_be_contiguous(self):
        layout = small_layout([(2, "w"), (2, "s")])
        with pytest.raises(MalformedDesignError, match="contiguous"):
            design_from_csv("plot,F1,F2\n1,0,0\n3,1,1\n", layout)

    def test_whole_plot_levels_must_be_constant_within_plot(self):
        layout = small_layout([(2, "w"), (2, "s")])
        with pytest.raises(MalformedDesignError, match="vary"):
            design_from_csv("plot,F1,F2\n1,0,0\n1,1,1\n", layout)

    def test_paper_table_text_parses(self, ex1, designs):
        rows = ["plot,F1,F2,F3,F4,F5"]
        table = [
            (1, [1, -1, 1, 1, 1]), (1, [1, -1, -1, -1, -1]),
            (1, [1, -1, -1, -1, 1]), (1, [1, -1, 1, 1, -1]),
            (2, [-1, 1, 1, 1, -1]), (2, [-1, 1, 1, -1, -1]),
            (2, [-1, 1, -1, 1, 1]), (2, [-1, 1, -1, -1, 1]),
            (3, [-1, -1, -1, -1, -1]), (3, [-1, -1, 1, -1, 1]),
            (3, [-1, -1, -1, 1, -1]), (3, [-1, -1, 1, 1, 1]),
            (4, [1, 1, 1, -1, -1]), (4, [1, 1, -1, 1, 1]), (4, [1, 1, -1, 1, -1]),
        ]
        rows += [f"{p}," + ",".join(str(v) for v in vals) for p, vals in table]
        parsed = design_from_csv("\n".join(rows), ex1["layout"])
        assert parsed == designs["D1"]
