"""Experiment harnesses: specs, determinism, budget guard, small smoke runs."""

import json

import numpy as np
import pandas as pd
import pytest

from gslope.experiments import (
    BudgetError,
    ExperimentSpec,
    block_sigma,
    compound_sigma,
    load_spec,
    run_experiment,
    run_fig1,
    run_fig2,
    run_fig3,
    run_hidden_factor,
)
from gslope.runmeta import file_sha256


TINY_FIG2 = dict(design="fig2", p=10, block=5, alphas=(0.3, 1.0), M=8, seed=4)


class TestSpec:
    def test_defaults_fill_in(self):
        spec = ExperimentSpec(design="fig3")
        assert spec.p == 20
        assert len(spec.alphas) == 20
        assert len(spec.gslope_rescale) == len(spec.nus)

    def test_unknown_design_rejected(self):
        with pytest.raises(ValueError):
            ExperimentSpec(design="fig9")

    def test_dimension_cap(self):
        with pytest.raises(ValueError, match="capped"):
            ExperimentSpec(design="fig1", p=40, block=10)

    def test_load_spec_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"design": "fig2", "bogus": 1}))
        with pytest.raises(ValueError, match="unknown spec keys"):
            load_spec(path)

    def test_load_spec_rejects_duplicate_keys(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text('{"design": "fig2", "p": 10, "p": 20}')
        with pytest.raises(ValueError, match="duplicate"):
            load_spec(path)

    def test_load_spec_type_error_is_descriptive(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"design": "fig2", "p": "twenty"}))
        with pytest.raises((ValueError, TypeError)):
            load_spec(path)

    def test_empty_spec_with_design_gets_defaults(self):
        spec = load_spec({}, design="fig1")
        assert spec.design == "fig1"
        assert spec.n_list == (200, 1000, 5000)

    def test_shipped_specs_validate(self):
        for name in ("fig1", "fig2", "fig3", "hidden_factor"):
            spec = load_spec(f"specs/{name}.json")
            assert spec.design == name


class TestGeometry:
    def test_block_sigma_entries(self):
        S = block_sigma(20, 10, 0.2)
        assert S[0, 0] == 1.0
        assert S[0, 1] == 0.2
        assert S[0, 10] == 0.0
        assert S.shape == (20, 20)

    def test_compound_sigma(self):
        S = compound_sigma(4, 0.3)
        assert S[1, 2] == 0.3 and S[0, 0] == 1.0


class TestRuns:
    def test_fig2_contraction_and_columns(self):
        df = run_fig2(ExperimentSpec(**TINY_FIG2))
        assert set(df.columns) >= {"method", "alpha", "rmse_asym", "rmse_cl"}
        assert (df.rmse_cl <= df.rmse_offdiag + 1e-12).all()
        assert sorted(df.method.unique()) == ["glasso", "gslope"]

    def test_fig1_columns_and_alpha_zero_coincide(self):
        spec = ExperimentSpec(
            design="fig1", p=10, block=5, alphas=(0.0,), M=6,
            n_list=(150,), reps=6, seed=2,
        )
        df = run_fig1(spec)
        # without a penalty the two weight profiles are the same estimator
        g = df[df.method == "glasso"].sqrt_n_rmse.to_numpy()
        s = df[df.method == "gslope"].sqrt_n_rmse.to_numpy()
        np.testing.assert_allclose(g, s, rtol=1e-10)
        assert (df.n_failed == 0).all()

    def test_fig3_tiny_run_orders_nu5(self):
        spec = ExperimentSpec(
            design="fig3", p=10, block=5, alphas=(0.2, 0.8), M=10,
            nus=(5.0,), gslope_rescale=(2.7,), seed=3,
        )
        df = run_fig3(spec)
        ts = df[df.method == "tslope"].mean_sq_vech.min()
        gs = df[df.method == "gslope"].mean_sq_vech.min()
        assert ts < gs  # heavy tails penalize the gaussian loss

    def test_fig3_rejects_nu_at_most_four(self):
        spec = ExperimentSpec(
            design="fig3", p=10, block=5, alphas=(0.5,), M=4,
            nus=(4.0,), gslope_rescale=(1.0,), seed=3,
        )
        with pytest.raises(ValueError, match="nu > 4"):
            run_fig3(spec)

    def test_hidden_factor_tiny(self):
        spec = ExperimentSpec(
            design="hidden_factor", k_assets=12, t_obs=150, runs=2,
            rho_grid=(0.0, 0.4, 1.0), seed=5, budget_seconds=600,
        )
        df, mats = run_hidden_factor(spec)
        assert len(df) == 2 * 4
        assert set(df.method.unique()) == {"glasso", "tlasso", "gslope", "tslope"}
        assert np.isfinite(df.min_frob_error).all()
        assert "oracle" in mats and mats["tslope"].shape == (12, 12)

    def test_budget_guard_aborts(self):
        spec = ExperimentSpec(**{**TINY_FIG2, "budget_seconds": 1e-6})
        with pytest.raises(BudgetError, match="budget"):
            run_fig2(spec)

    def test_fig2_slope_improves_clustering_at_matched_total(self):
        # the motivating trade-off: somewhere on the grid the slope weights
        # dominate the constant ones (no worse total error, strictly lower
        # clustering error)
        spec = ExperimentSpec(
            design="fig2", p=10, block=5,
            alphas=tuple(np.geomspace(0.05, 2.5, 10).tolist()),
            M=60, seed=12,
        )
        df = run_fig2(spec)
        gs = df[df.method == "gslope"]
        gl = df[df.method == "glasso"]
        dominates = False
        for _, row in gl.iterrows():
            better = gs[
                (gs.rmse_asym <= row.rmse_asym + row.se_rmse_asym)
                & (gs.rmse_cl < row.rmse_cl)
            ]
            if len(better):
                dominates = True
                break
        assert dominates


class TestDeterminism:
    def test_fig2_rerun_bitwise(self, tmp_path):
        spec = ExperimentSpec(**TINY_FIG2)
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        run_experiment(spec, out_dir=d1)
        run_experiment(spec, out_dir=d2)
        assert file_sha256(d1 / "fig2.csv") == file_sha256(d2 / "fig2.csv")
        m1 = json.load(open(d1 / "manifest.json"))
        m2 = json.load(open(d2 / "manifest.json"))
        assert m1["spec_hash"] == m2["spec_hash"]
        assert m1["output_hashes"] == m2["output_hashes"]

    def test_parallel_equals_serial(self):
        from dataclasses import replace

        spec = ExperimentSpec(**TINY_FIG2)
        df1 = run_fig2(spec)
        df2 = run_fig2(replace(spec, n_jobs=2))
        pd.testing.assert_frame_equal(df1, df2)

    def test_manifest_contents(self, tmp_path):
        spec = ExperimentSpec(**TINY_FIG2)
        run_experiment(spec, out_dir=tmp_path / "out")
        manifest = json.load(open(tmp_path / "out" / "manifest.json"))
        assert manifest["seed"] == spec.seed
        assert manifest["outputs"] == ["fig2.csv"]
        assert manifest["artifact_version"]
