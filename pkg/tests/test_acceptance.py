"""Acceptance suite: one test per criterion, one printed verdict line each.

Runs everything at the stated scales and tolerances; the heavyweight
simulation criteria take a few minutes apiece, about twenty minutes total.
"""

import json
import time
from pathlib import Path

import numpy as np

import instances
import synthetic
from gslope.asymptotics import (
    finite_sample_mc,
    limit_objective,
    monte_carlo,
    solve_limit,
)
from gslope.datagen import RadialLaw, sample_gaussian
from gslope.empirical import EstimatorConfig as EmpCfg
from gslope.empirical import ch_path, edge_matrix, kmeans_ch, yearly_estimates
from gslope.estimator import EstimatorConfig, estimate, objective_value
from gslope.experiments import compound_sigma, load_spec, run_fig1, run_fig3, run_hidden_factor
from gslope.losses import (
    AsymptoticCoefficients,
    LossModel,
    coeffs_gaussian,
    coeffs_t_data_gaussian_loss,
    radial_moments,
    second_moment,
    spherical_fourth_moment_apply,
)
from gslope.slope import (
    DirectionalPenalty,
    LambdaSequence,
    PatternProjector,
    bh_sequence_gaussian,
    constant_sequence,
    pattern,
    prox_objective,
    slope_prox,
)
from gslope.symcore import StructuredOperator, symmetrize, vec_plus

DATA = Path(__file__).parent / "data"
SPECS = Path(__file__).parents[1] / "specs"


def _verdict(num: int, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    return ok


def test_criterion_01_prox_against_subgradient_oracle():
    oracle = json.load(open(DATA / "prox_oracle.json"))["objectives"]
    inst = instances.prox_instances()
    assert len(inst) == len(oracle) == 1000
    t0 = time.time()
    worst = -np.inf
    for d, ref in zip(inst, oracle):
        lam = LambdaSequence(d["weights"], strict=False)
        x = slope_prox(d["y"], lam, d["t"])
        worst = max(worst, prox_objective(x, d["y"], lam, d["t"]) - ref)
    elapsed = time.time() - t0
    ok = worst <= 1e-8 and elapsed < 10.0
    assert _verdict(
        1, ok,
        f"1000 prox instances, max(objective - oracle) = {worst:.2e} "
        f"(tol 1e-8), runtime {elapsed:.2f}s (< 10s)",
    )


def test_criterion_02_pattern_and_projection_exact():
    theta_plus = np.array([0.6, 0.6, 0.4, 0.6, -0.4, 0.0])
    patt = pattern(theta_plus, tol=1e-12)
    codes_ok = patt.codes.tolist() == [2, 2, 1, 2, -1, 0]
    proj = PatternProjector(patt)
    u = np.array([0.5, 0.8, -0.3, 0.8, 0.3, 0.4])
    Pu, resid = proj.project(u)
    proj_ok = np.allclose(Pu, [0.7, 0.7, -0.3, 0.7, 0.3, 0.0], atol=1e-14)
    total = float(np.dot(u, u))
    cl = float(np.dot(resid, resid))
    ratio_pp = 100.0 * cl / total
    ok = (
        codes_ok and proj_ok
        and abs(total - 1.87) < 1e-12
        and abs(cl - 0.22) < 1e-12
        and abs(ratio_pp - 11.8) <= 0.1
    )
    assert _verdict(
        2, ok,
        f"pattern {patt.codes.tolist()}, ||u||^2={total}, clustering "
        f"error={cl:.4f}, ratio {ratio_pp:.2f}% (11.8 +- 0.1)",
    )


def test_criterion_03_estimator_sanity():
    rng = np.random.default_rng(77)
    A = rng.normal(size=(10, 10))
    sigma = symmetrize(A @ A.T / 10 + np.eye(10))
    X = sample_gaussian(sigma, 200, 42)
    res = estimate(
        X, LossModel.gaussian(10), bh_sequence_gaussian(10, 0.5),
        EstimatorConfig(alpha=0.0, tol_kkt=1e-7),
    )
    mle_gap = float(np.linalg.norm(res.theta_hat - np.linalg.inv(second_moment(X))))

    from sklearn.covariance import graphical_lasso

    worst_gl = -np.inf
    for seed in (5, 6):
        g = np.random.default_rng(seed)
        B = g.normal(size=(4, 4))
        sig4 = symmetrize(B @ B.T / 4 + np.eye(4))
        X4 = sample_gaussian(sig4, 120, seed)
        X4 = X4 - X4.mean(0)
        lam = constant_sequence(6, 1.0)
        cfg = EstimatorConfig(alpha=0.12, scale_mode="absolute", tol_kkt=1e-10)
        model = LossModel.gaussian(4)
        ours = estimate(X4, model, lam, cfg)
        _, prec = graphical_lasso(second_moment(X4), alpha=0.12, tol=1e-12,
                                  max_iter=2000)
        worst_gl = max(
            worst_gl,
            objective_value(model, X4, lam, cfg, ours.theta_hat)
            - objective_value(model, X4, lam, cfg, prec),
        )
    ok = mle_gap <= 1e-6 and worst_gl <= 1e-6
    assert _verdict(
        3, ok,
        f"alpha=0 vs inverse moment: frob {mle_gap:.2e} (tol 1e-6); "
        f"constant-weight vs graphical-lasso oracle: gap {worst_gl:.2e} (tol 1e-6)",
    )


def test_criterion_04_coefficient_identities():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(4, 4))
    sigma = symmetrize(A @ A.T / 4 + np.eye(4))
    # (a) gaussian provenance: identical coefficient pairs, exactly
    co = coeffs_gaussian(sigma)
    a_ok = co.hessian.a == co.score_cov.a and co.hessian.b == co.score_cov.b
    # (b) inflation coefficients at nu = 5 and nu = 10
    k5 = 2 * coeffs_t_data_gaussian_loss(sigma, 5.0).score_cov.a - 1
    k10 = 2 * coeffs_t_data_gaussian_loss(sigma, 10.0).score_cov.a - 1
    b_ok = abs(k5 - 2.0) < 1e-12 and abs(k10 - 1.0 / 3.0) < 1e-12
    # (c) analytic E[xi] vs Monte Carlo within 3 SE
    c_ok = True
    c_detail = []
    for p, nu in [(4, 6.0), (10, 8.0)]:
        analytic = p * (p + 2) / (nu + p + 2)
        law = RadialLaw("t", nu=nu)
        mc = radial_moments(
            RadialLaw("custom", sampler=lambda r, n, pp: law.sample(r, n, pp)),
            p=p, nu_loss=nu, n_draws=500_000, seed=123,
        )
        z = abs(mc.e_xi - analytic) / mc.se_e_xi
        c_ok &= z <= 3.0
        c_detail.append(f"(p={p},nu={nu}): {z:.2f} SE")
    # (d) spherical fourth-moment identity within 5 SE
    d_ok = True
    for p in (2, 5):
        n = 300_000
        Z = rng.standard_normal((n, p))
        U = Z / np.linalg.norm(Z, axis=1, keepdims=True)
        M = symmetrize(rng.normal(size=(p, p)))
        quad = np.einsum("ni,ij,nj->n", U, M, U)
        stack = U[:, :, None] * U[:, None, :] * quad[:, None, None]
        est = stack.mean(axis=0)
        se = stack.std(axis=0, ddof=1) / np.sqrt(n)
        d_ok &= bool(np.all(np.abs(est - spherical_fourth_moment_apply(M, p)) <= 5 * se))
    ok = a_ok and b_ok and c_ok and d_ok
    assert _verdict(
        4, ok,
        f"(a) gaussian C_delta == C: {a_ok}; (b) inflation 2 and 1/3: {b_ok}; "
        f"(c) E[xi] MC {', '.join(c_detail)} (<= 3 SE); (d) spherical identity "
        f"p in (2,5) within 5 SE: {d_ok}",
    )


def test_criterion_05_limit_solver_against_oracle():
    oracle = json.load(open(DATA / "limit_oracle.json"))["objectives"]
    inst = instances.limit_instances()
    assert len(inst) == len(oracle) == 200
    rng = np.random.default_rng(55)
    worst_gap = -np.inf
    worst_cert = np.inf
    for d, ref in zip(inst, oracle):
        lam = LambdaSequence(d["weights"], strict=False)
        op = StructuredOperator(d["sigma"], d["a"], d["b"])
        co = AsymptoticCoefficients(d["sigma"], op, op, "test")
        U = solve_limit(d["theta0"], co, lam, d["W"], tol=1e-12, tol_kkt=1e-8)
        pen = DirectionalPenalty(vec_plus(d["theta0"]), lam)
        f0 = limit_objective(pen, co.hessian, d["W"], U)
        worst_gap = max(worst_gap, f0 - ref)
        for _ in range(50):
            D = symmetrize(rng.normal(size=(4, 4)))
            D /= np.linalg.norm(D)
            f1 = limit_objective(pen, co.hessian, d["W"], U + 1e-6 * D)
            worst_cert = min(worst_cert, (f1 - f0) / 1e-6)
    ok = worst_gap <= 1e-6 and worst_cert >= -1e-6
    assert _verdict(
        5, ok,
        f"200 limit instances: max(objective - oracle) = {worst_gap:.2e} "
        f"(tol 1e-6); worst directional certificate {worst_cert:.2e} (>= -1e-6)",
    )


def test_criterion_06_fig1_convergence():
    spec = load_spec(SPECS / "fig1.json")
    assert spec.n_list == (200, 1000, 5000) and spec.reps == 200 and spec.M == 100
    t0 = time.time()
    df = run_fig1(spec)
    elapsed = time.time() - t0
    ok = True
    lines = []
    for (m, a), sub in df.groupby(["method", "alpha"]):
        sub = sub.sort_values("n")
        gaps = np.abs(sub.sqrt_n_rmse.to_numpy() - sub.rmse_asym.iloc[0])
        rel_final = gaps[-1] / sub.rmse_asym.iloc[0]
        # the finite-sample curve closes in on the limit monotonically in n
        # (from below at penalized alpha on this design, from above at 0)
        mono = bool(np.all(np.diff(gaps) < 0))
        ok &= mono and rel_final <= 0.10
        lines.append(f"{m}@{a:g}: gaps {np.round(gaps, 3).tolist()} "
                     f"final {rel_final:.1%}")
    assert _verdict(
        6, ok,
        f"monotone convergence to the limit, final gap <= 10% "
        f"({'; '.join(lines)}); runtime {elapsed/60:.1f} min (< 30)",
    ) and elapsed < 1800


def test_criterion_07_fig3_orderings():
    spec = load_spec(SPECS / "fig3.json")
    assert spec.M == 100 and len(spec.alphas) == 20
    df = run_fig3(spec)

    def min_and_se(nu, method):
        sub = df[(df.nu == nu) & (df.method == method)]
        i = sub.mean_sq_vech.idxmin()
        return float(sub.loc[i, "mean_sq_vech"]), float(sub.loc[i, "se_mean_sq"])

    t5, _ = min_and_se(5.0, "tslope")
    g5, _ = min_and_se(5.0, "gslope")
    t10, _ = min_and_se(10.0, "tslope")
    g10, _ = min_and_se(10.0, "gslope")
    t1k, se_t = min_and_se(1000.0, "tslope")
    g1k, se_g = min_and_se(1000.0, "gslope")
    near = abs(t1k - g1k) <= 2 * np.hypot(se_t, se_g)
    ok = (t5 < g5) and (g10 <= t10) and near
    assert _verdict(
        7, ok,
        f"nu=5: tslope {t5:.1f} < gslope {g5:.1f}; nu=10: gslope {g10:.1f} <= "
        f"tslope {t10:.1f}; nu=1000: |{t1k:.1f} - {g1k:.1f}| <= "
        f"2*SE={2*np.hypot(se_t, se_g):.1f}",
    )


def test_criterion_08_pattern_convergence():
    p = 6
    sigma = compound_sigma(p, 0.2)
    T0 = np.linalg.inv(sigma)
    theta0 = np.where(np.eye(p) > 0, T0[0, 0], T0[1, 0])
    co = coeffs_gaussian(sigma)
    lam = bh_sequence_gaussian(p, 0.5)
    alpha = 3.0
    model = LossModel.gaussian(p)

    def sampler(n, rng):
        return sample_gaussian(sigma, n, rng)

    asym = monte_carlo(theta0, co, lam.scaled(alpha), M=2000, seed=10)
    fin = finite_sample_mc(
        theta0, sampler, model, lam,
        EstimatorConfig(alpha=alpha, scale_mode="n_inv_sqrt", tol_kkt=1e-7,
                        max_iter=6000),
        n=5000, reps=500, seed=20, pattern_tol=1e-6,
    )
    big = {k: v for k, v in asym.pattern_freqs.items() if v >= 0.05}
    ok = len(big) >= 1
    lines = []
    for patt_t, f in sorted(big.items(), key=lambda kv: -kv[1]):
        f_fin = fin.pattern_freqs.get(patt_t, 0.0)
        se = np.sqrt(f * (1 - f) * (1 / 2000 + 1 / 500))
        z = abs(f_fin - f) / se
        ok &= z <= 3.0
        lines.append(f"freq {f:.3f} vs {f_fin:.3f} ({z:.2f} SE)")
    assert _verdict(
        8, ok,
        f"{len(big)} pattern(s) >= 5%: {'; '.join(lines)} (tol 3 SE; "
        f"finite side non-convergences: {fin.n_failed}/500)",
    )


def test_criterion_09_hidden_factor_ordering():
    spec = load_spec(SPECS / "hidden_factor.json")
    assert spec.k_assets == 30 and spec.t_obs == 500 and spec.runs == 20
    assert spec.nu_hf == 4.0 and not spec.paper_scale
    df, _ = run_hidden_factor(spec)
    med = df.groupby("method").min_frob_error.median()
    ok = (med["tslope"] < med["glasso"]) and (med["tslope"] == med.min())
    assert _verdict(
        9, ok,
        "median min Frobenius error: "
        + ", ".join(f"{m}={med[m]:.3f}" for m in ("tslope", "tlasso", "gslope", "glasso"))
        + " (tslope strictly below glasso and smallest of the four)",
    )


def test_criterion_10_empirical_planted_recovery(tmp_path):
    from sklearn.metrics import adjusted_rand_score

    df, labels = synthetic.planted_panel(
        years=26, n_per_year=synthetic.ACCEPTANCE_N_PER_YEAR, seed=3
    )
    path = tmp_path / "planted.csv"
    df.to_csv(path, index=False)
    from gslope.empirical import ingest_csv

    panel, _ = ingest_csv(path)
    q = synthetic.ACCEPTANCE_Q
    cfg = EmpCfg(scale_mode="absolute", tol_kkt=1e-5, max_iter=2500)
    table = ch_path(
        panel, ["gslope", "tslope", "glasso"], synthetic.ACCEPTANCE_GRID,
        k=3, cfg=cfg, q=q, nu=5.0, restarts=10, seed=0,
    )
    best = {}
    for m in ("gslope", "tslope", "glasso"):
        sub = table[(table.method == m)].dropna(subset=["ch_index"])
        i = sub.ch_index.idxmax()
        best[m] = (float(sub.loc[i, "ch_index"]), float(sub.loc[i, "alpha"]))
    ch_ok = best["gslope"][0] > best["glasso"][0] and best["tslope"][0] > best["glasso"][0]

    aris = {}
    for m in ("gslope", "tslope"):
        model = LossModel.student_t(25, 5.0) if m == "tslope" else LossModel.gaussian(25)
        res = yearly_estimates(panel, model, best[m][1], cfg, q=q)
        rep = kmeans_ch(edge_matrix(res), 3, restarts=10, seed=0)
        aris[m] = adjusted_rand_score(labels, rep.assignments)
    ari_ok = all(v >= 0.9 for v in aris.values())
    ok = ch_ok and ari_ok
    assert _verdict(
        10, ok,
        f"max CH gslope {best['gslope'][0]:.0f} / tslope {best['tslope'][0]:.0f} "
        f"> glasso {best['glasso'][0]:.0f}; adjusted Rand at CH-optimal alpha: "
        f"gslope {aris['gslope']:.3f}, tslope {aris['tslope']:.3f} (>= 0.9)",
    )
