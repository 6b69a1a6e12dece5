"""Limiting-distribution machinery.

Draws the Gaussian noise of the limiting problem, solves

    min_{U in Sym(p)}  vec(U)^T C vec(U) / 2 - <W, U> + Pen'(Theta0; U)

exactly via accelerated proximal gradient with the cluster-decomposed prox of
the directional penalty, and aggregates Monte Carlo estimates of the
asymptotic RMSE, the clustering RMSE and pattern probabilities.  A finite
sample analogue runs the estimator on simulated data and collects the same
statistics for the root-n rescaled error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from joblib import Parallel, delayed

from .estimator import EstimatorConfig, estimate
from .losses import AsymptoticCoefficients, LossModel
from .seeding import as_generator, substream
from .slope import DirectionalPenalty, LambdaSequence, SlopePattern, pattern
from .symcore import (
    StructuredOperator,
    spd_sqrt,
    sym_from_lower,
    symmetrize,
    vec_plus,
    vech,
)


def sample_limit_noise(
    coeffs: AsymptoticCoefficients,
    seed,
    sigma_sqrt: np.ndarray | None = None,
) -> np.ndarray:
    """Symmetric Gaussian draw whose covariance on vec(Sym(p)) is score_cov.

    Uses the structured square root of a*(Sigma (x) Sigma) + b*r1: with G a
    GOE-scaled symmetric Gaussian (diagonal variance 2, off-diagonal 1),

        V = sqrt(a/2) * (G - tr(G)/p * I) + sqrt((a + p b)/p) * z * I,
        W = Sigma^{1/2} V Sigma^{1/2},

    which matches the target covariance exactly; requires a >= 0 and
    a + p*b >= 0 (positive semidefiniteness on the symmetric subspace).
    """
    rng = as_generator(seed)
    op = coeffs.score_cov
    p = op.dim
    a, b = op.a, op.b
    if a < 0:
        raise ValueError("score covariance has negative Kronecker coefficient")
    trace_var = a + p * b
    if trace_var < -1e-12 * max(1.0, a):
        raise ValueError("score covariance is not PSD on Sym(p)")
    trace_var = max(trace_var, 0.0)
    if sigma_sqrt is None:
        sigma_sqrt = spd_sqrt(op.sigma)
    Z = rng.standard_normal((p, p))
    G = (Z + Z.T) / np.sqrt(2.0)
    z = rng.standard_normal()
    V = np.sqrt(a / 2.0) * (G - (np.trace(G) / p) * np.eye(p))
    V += np.sqrt(trace_var / p) * z * np.eye(p)
    return symmetrize(sigma_sqrt @ V @ sigma_sqrt)


def limit_objective(
    pen: DirectionalPenalty, hessian: StructuredOperator, W: np.ndarray, U: np.ndarray
) -> float:
    """Value of the limiting objective at U."""
    return (
        0.5 * hessian.quadform(U)
        - float(np.sum(W * U))
        + pen.value(vec_plus(U))
    )


def solve_limit(
    theta0: np.ndarray,
    coeffs: AsymptoticCoefficients,
    lam: LambdaSequence,
    W: np.ndarray,
    tol: float = 1e-8,
    tol_kkt: float = 1e-6,
    max_iter: int = 20_000,
    lipschitz: float | None = None,
    strong_mu: float | None = None,
    pen: DirectionalPenalty | None = None,
    method: str = "prox",
    u_init: np.ndarray | None = None,
) -> np.ndarray:
    """Unique minimizer of the limiting problem over Sym(p).

    The quadratic part must be positive definite on Sym(p) (strict convexity;
    anything else is an error).  ``method='prox'`` runs monotone accelerated
    proximal gradient with the exact prox of the directional penalty.

    ``tol`` bounds the optimality gap: by strong convexity a subdifferential
    residual r certifies F(x) - F* <= r^2 / (2 mu), so iteration stops once
    r <= min(sqrt(2 mu tol), tol_kkt) or the objective stops moving at
    machine resolution.  ``method='subgradient'`` is the slow
    cross-validation fallback.
    """
    C = coeffs.hessian
    if not C.is_positive_definite_sym():
        raise ValueError("hessian is not positive definite on Sym(p)")
    if pen is None:
        pen = DirectionalPenalty(vec_plus(theta0), lam)
    if method == "subgradient":
        from .reference import limit_subgradient

        return limit_subgradient(pen, C, W, u_init=u_init)
    if method != "prox":
        raise ValueError(f"unknown method {method!r}")
    if lipschitz is None:
        lipschitz = C.max_eigenvalue_sym()
    if strong_mu is None:
        strong_mu = C.min_eigenvalue_sym()
    r_target = min(np.sqrt(2.0 * strong_mu * tol), tol_kkt)
    t = 1.0 / lipschitz
    p = C.dim

    x = np.zeros((p, p)) if u_init is None else symmetrize(np.asarray(u_init, float))
    x_prev = x
    y = x

    def smooth_grad(U):
        return C.apply(U) - W

    def full_value(U):
        return 0.5 * C.quadform(U) - float(np.sum(W * U)) + pen.value(vec_plus(U))

    Fx = full_value(x)
    tk = 1.0
    stale = 0
    for it in range(1, max_iter + 1):
        g = smooth_grad(y)
        V = y - t * g
        cand = sym_from_lower(pen.prox(vec_plus(V), 0.5 * t), np.diag(V).copy())
        F_cand = full_value(cand)
        tk1 = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        if F_cand <= Fx:
            x_new, F_new = cand, F_cand
        else:
            x_new, F_new = x, Fx
        y = x_new + (tk / tk1) * (cand - x_new) + ((tk - 1.0) / tk1) * (x_new - x_prev)
        if F_cand > Fx:
            tk1 = 1.0
        stale = stale + 1 if F_new == Fx else 0
        x_prev, x, Fx, tk = x, x_new, F_new, tk1

        if it % 10 == 0 or it == max_iter:
            gx = smooth_grad(x)
            resid = pen.subdiff_distance(-2.0 * vec_plus(gx), vec_plus(x))
            kkt = float(np.hypot(resid, np.linalg.norm(np.diag(gx))))
            if kkt <= r_target or stale > 300:
                break
    return x


@dataclass(frozen=True)
class MonteCarloSummary:
    """Aggregates over independent realizations of the limiting problem."""

    M: int
    rmse_asym: float
    se_rmse_asym: float
    rmse_cl: float | None
    se_rmse_cl: float | None
    mean_total_sq: float
    se_total_sq: float
    mean_offdiag_sq: float
    mean_cluster_sq: float | None
    pattern_freqs: dict
    n_failed: int = 0

    @property
    def top_pattern(self):
        if not self.pattern_freqs:
            return None
        return max(self.pattern_freqs.items(), key=lambda kv: kv[1])

    def pattern_se(self, patt: tuple) -> float:
        f = self.pattern_freqs.get(patt, 0.0)
        return float(np.sqrt(f * (1.0 - f) / self.M))


def _aggregate(total_sq, offdiag_sq, cluster_sq, patterns, n_failed=0):
    total_sq = np.asarray(total_sq, dtype=float)
    M = total_sq.size
    mean_total = float(np.mean(total_sq))
    se_total = float(np.std(total_sq, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    rmse = float(np.sqrt(mean_total))
    se_rmse = se_total / (2.0 * rmse) if rmse > 0 else 0.0
    if cluster_sq is not None:
        cluster_sq = np.asarray(cluster_sq, dtype=float)
        mean_cl = float(np.mean(cluster_sq))
        se_cl = float(np.std(cluster_sq, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        rmse_cl = float(np.sqrt(mean_cl))
        se_rmse_cl = se_cl / (2.0 * rmse_cl) if rmse_cl > 0 else 0.0
    else:
        mean_cl = rmse_cl = se_rmse_cl = None
    freqs: dict = {}
    for t in patterns:
        freqs[t] = freqs.get(t, 0) + 1
    freqs = {k: v / M for k, v in freqs.items()}
    return MonteCarloSummary(
        M=M,
        rmse_asym=rmse,
        se_rmse_asym=se_rmse,
        rmse_cl=rmse_cl,
        se_rmse_cl=se_rmse_cl,
        mean_total_sq=mean_total,
        se_total_sq=se_total,
        mean_offdiag_sq=float(np.mean(offdiag_sq)),
        mean_cluster_sq=mean_cl,
        pattern_freqs=freqs,
        n_failed=n_failed,
    )


def _run_jobs(fn: Callable, count: int, n_jobs: int):
    if n_jobs in (None, 0, 1):
        return [fn(r) for r in range(count)]
    out = Parallel(n_jobs=n_jobs)(delayed(fn)(r) for r in range(count))
    return list(out)


def monte_carlo(
    theta0: np.ndarray,
    coeffs: AsymptoticCoefficients,
    lam: LambdaSequence,
    M: int,
    seed: int,
    projector=None,
    tol: float = 1e-8,
    pattern_tol: float = 1e-8,
    n_jobs: int = 1,
) -> MonteCarloSummary:
    """Monte Carlo summary of the limiting law: RMSEs and pattern frequencies.

    Deterministic given the seed: replication r draws from substream
    (seed, r), and results are reduced in replication order regardless of the
    worker count.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    pen = DirectionalPenalty(vec_plus(theta0), lam)
    L = coeffs.hessian.max_eigenvalue_sym()
    mu = coeffs.hessian.min_eigenvalue_sym()
    sig_sqrt = spd_sqrt(coeffs.sigma)

    def one(r: int):
        rng = substream(seed, r)
        W = sample_limit_noise(coeffs, rng, sigma_sqrt=sig_sqrt)
        U = solve_limit(
            theta0, coeffs, lam, W, tol=tol, lipschitz=L, strong_mu=mu, pen=pen
        )
        u_plus = vec_plus(U)
        total_sq = float(np.sum(vech(U) ** 2))
        off_sq = float(np.sum(u_plus**2))
        cl_sq = None
        if projector is not None:
            _, resid = projector.project(u_plus)
            cl_sq = float(np.sum(resid**2))
        return total_sq, off_sq, cl_sq, pattern(u_plus, tol=pattern_tol).as_tuple()

    rows = _run_jobs(one, M, n_jobs)
    totals = [r[0] for r in rows]
    offs = [r[1] for r in rows]
    cls = [r[2] for r in rows] if projector is not None else None
    patts = [r[3] for r in rows]
    return _aggregate(totals, offs, cls, patts)


def finite_sample_mc(
    theta0: np.ndarray,
    sampler: Callable,
    model: LossModel,
    lam: LambdaSequence,
    cfg: EstimatorConfig,
    n: int,
    reps: int,
    seed: int,
    projector=None,
    pattern_tol: float = 1e-6,
    n_jobs: int = 1,
) -> MonteCarloSummary:
    """Monte Carlo for the root-n rescaled finite-sample error.

    ``sampler(n, rng)`` draws one n x p data set.  All reported quantities
    refer to sqrt(n) * (theta_hat - theta0); rmse_asym therefore estimates
    the sqrt(n)-scaled RMSE directly comparable to the limiting one.
    Estimator non-convergence is counted, not hidden.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    root_n = np.sqrt(n)

    def one(r: int):
        rng = substream(seed, r)
        X = sampler(n, rng)
        res = estimate(X, model, lam, cfg)
        err = root_n * (res.theta_hat - theta0)
        e_plus = vec_plus(err)
        cl_sq = None
        if projector is not None:
            _, resid = projector.project(e_plus)
            cl_sq = float(np.sum(resid**2))
        return (
            float(np.sum(vech(err) ** 2)),
            float(np.sum(e_plus**2)),
            cl_sq,
            pattern(e_plus, tol=pattern_tol * root_n).as_tuple(),
            0 if res.converged else 1,
        )

    rows = _run_jobs(one, reps, n_jobs)
    totals = [r[0] for r in rows]
    offs = [r[1] for r in rows]
    cls = [r[2] for r in rows] if projector is not None else None
    patts = [r[3] for r in rows]
    failed = sum(r[4] for r in rows)
    return _aggregate(totals, offs, cls, patts, n_failed=failed)


def finite_n_rmse(
    theta0: np.ndarray,
    sampler: Callable,
    model: LossModel,
    lam: LambdaSequence,
    cfg: EstimatorConfig,
    n: int,
    reps: int,
    seed: int,
    n_jobs: int = 1,
) -> tuple[float, float]:
    """(RMSE, sqrt(n)*RMSE) of the estimator under the supplied sampler."""
    summary = finite_sample_mc(
        theta0, sampler, model, lam, cfg, n, reps, seed, n_jobs=n_jobs
    )
    return summary.rmse_asym / np.sqrt(n), summary.rmse_asym


__all__ = [
    "MonteCarloSummary",
    "SlopePattern",
    "finite_n_rmse",
    "finite_sample_mc",
    "limit_objective",
    "monte_carlo",
    "sample_limit_noise",
    "solve_limit",
]
