"""Penalized precision-matrix estimation over the positive-definite cone.

Solves

    min_{Theta PD}  mean loss(x_i, Theta) + w * sum_j lambda_j |vec_+(Theta)|_(j)

for either loss model, where w is the penalty strength (alpha, optionally
scaled by n^{-1/2}).  The diagonal is unpenalized.  Algorithm: accelerated
proximal gradient with backtracking; a step whose prox output leaves the cone
(Cholesky failure) is rejected like a failed line search, and momentum is
restarted whenever it would increase the objective, so accepted objective
values are nonincreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from types import SimpleNamespace

import numpy as np
from scipy.linalg import cho_solve

from .losses import GAUSSIAN, LossModel, second_moment
from .slope import LambdaSequence, SlopePattern, pattern, slope_prox, slope_subdiff_distance
from .symcore import (
    NotPositiveDefiniteError,
    num_offdiag,
    spd_cholesky,
    sym_from_lower,
    symmetrize,
    vec_plus,
)


class DivergenceError(RuntimeError):
    """Iterates exceeded the eigenvalue cap; the problem is unbounded or
    effectively so (degenerate data with insufficient penalization)."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Solver settings.

    scale_mode 'n_inv_sqrt' multiplies the penalty by n^{-1/2} (the scaling
    of the root-n asymptotics); 'absolute' uses alpha as-is, which is what
    the tuning-grid pipelines do.
    """

    alpha: float = 1.0
    scale_mode: str = "n_inv_sqrt"
    max_iter: int = 10_000
    tol_kkt: float = 1e-7
    step0: float = 1.0
    backtrack: float = 0.5
    center: bool = False
    pattern_tol: float = 1e-8
    max_eig_cap: float = 1e8
    kkt_every: int = 10

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.scale_mode not in ("n_inv_sqrt", "absolute"):
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")
        if self.tol_kkt <= 0:
            raise ValueError("tol_kkt must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")


@dataclass(frozen=True)
class EstimateResult:
    theta_hat: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    pattern: SlopePattern
    converged: bool

    def to_json_dict(self) -> dict:
        from .symcore import sym_to_json_dict

        return {
            "theta_hat": sym_to_json_dict(self.theta_hat),
            "objective": self.objective,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "pattern": self.pattern.as_tuple(),
            "converged": self.converged,
        }


def _prepare(model: LossModel, X: np.ndarray, center: bool) -> SimpleNamespace:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an n x p matrix")
    n, p = X.shape
    if p != model.p:
        raise ValueError(f"data has {p} columns but model.p = {model.p}")
    if n < 2:
        raise ValueError("need at least two observations")
    if center:
        X = X - X.mean(axis=0)
    return SimpleNamespace(X=X, S=second_moment(X), n=n, p=p)


def _f_and_grad(model: LossModel, prep, theta: np.ndarray):
    """(loss, gradient) at theta; raises if theta is not PD."""
    L = spd_cholesky(theta)
    ld = 2.0 * float(np.sum(np.log(np.diag(L))))
    theta_inv = cho_solve((L, True), np.eye(prep.p))
    if model.kind == GAUSSIAN:
        f = -0.5 * ld + 0.5 * float(np.sum(prep.S * theta))
        g = 0.5 * (prep.S - theta_inv)
    else:
        q = np.sum((prep.X @ theta) * prep.X, axis=1)
        f = -0.5 * ld + (model.nu + prep.p) / (2 * prep.n) * float(
            np.sum(np.log(model.nu + q))
        )
        M = (prep.X / (model.nu + q)[:, None]).T @ prep.X / prep.n
        g = 0.5 * (-theta_inv + (model.nu + prep.p) * M)
    return f, symmetrize(g)


def _f_only(model: LossModel, prep, theta: np.ndarray) -> float:
    L = spd_cholesky(theta)
    ld = 2.0 * float(np.sum(np.log(np.diag(L))))
    if model.kind == GAUSSIAN:
        return -0.5 * ld + 0.5 * float(np.sum(prep.S * theta))
    q = np.sum((prep.X @ theta) * prep.X, axis=1)
    return -0.5 * ld + (model.nu + prep.p) / (2 * prep.n) * float(
        np.sum(np.log(model.nu + q))
    )


def _prox_cone(V: np.ndarray, lam: LambdaSequence, half_step: float):
    """Penalty prox in the Frobenius metric: SLOPE on off-diagonals, identity
    on the diagonal.  Off-diagonal pairs appear twice in ||.||_F, hence the
    halved step."""
    new_plus = slope_prox(vec_plus(V), lam, half_step)
    return sym_from_lower(new_plus, np.diag(V).copy())


def _kkt_residual(
    model: LossModel,
    prep,
    theta: np.ndarray,
    lam_w: LambdaSequence,
) -> float:
    """Distance from -grad to the penalty subdifferential, plus the diagonal
    gradient norm.  Off-diagonal coordinates carry a factor two because each
    pair appears twice in the matrix parameterization.  Exact-tie face
    detection: iterates are prox outputs, so their ties are bitwise."""
    _, g = _f_and_grad(model, prep, theta)
    off = slope_subdiff_distance(-2.0 * vec_plus(g), vec_plus(theta), lam_w)
    diag = float(np.linalg.norm(np.diag(g)))
    return float(np.hypot(off, diag))


def objective_value(
    model: LossModel, X: np.ndarray, lam: LambdaSequence, cfg: EstimatorConfig,
    theta: np.ndarray,
) -> float:
    """Full penalized objective at theta (for oracles and diagnostics)."""
    from .slope import slope_norm

    prep = _prepare(model, X, cfg.center)
    w = cfg.alpha * (prep.n ** -0.5 if cfg.scale_mode == "n_inv_sqrt" else 1.0)
    return _f_only(model, prep, theta) + w * slope_norm(vec_plus(theta), lam)


def estimate(
    X: np.ndarray,
    model: LossModel,
    lam: LambdaSequence,
    cfg: EstimatorConfig,
    theta_init: np.ndarray | None = None,
    trace: list | None = None,
) -> EstimateResult:
    """Solve the penalized problem; returns a certified-PD estimate.

    Convergence means the KKT residual (subdifferential distance of the
    negative gradient plus diagonal gradient norm) fell below cfg.tol_kkt.
    On max_iter the best iterate is returned with converged=False.  When
    ``trace`` is a list it receives the accepted objective value of every
    iteration (nonincreasing by construction).
    """
    prep = _prepare(model, X, cfg.center)
    m = num_offdiag(prep.p)
    if len(lam) != m:
        raise ValueError(f"lambda sequence has length {len(lam)}, expected {m}")
    w = cfg.alpha * (prep.n ** -0.5 if cfg.scale_mode == "n_inv_sqrt" else 1.0)
    lam_w = lam.scaled(w)

    from .slope import slope_norm

    def penalty(theta):
        return slope_norm(vec_plus(theta), lam_w) if w > 0 else 0.0

    if theta_init is None:
        eps = 1e-3 * np.trace(prep.S) / prep.p
        theta = np.linalg.inv(prep.S + eps * np.eye(prep.p))
        theta = symmetrize(theta)
    else:
        theta = symmetrize(np.asarray(theta_init, dtype=float))
        spd_cholesky(theta)

    x = theta
    x_prev = theta
    y = theta
    t = cfg.step0
    tk = 1.0
    Fx = _f_only(model, prep, x) + penalty(x)
    kkt = np.inf
    it = 0
    stale = 0

    # monotone accelerated scheme: the trial point drives the momentum
    # combination, but x only ever moves to a trial with a lower objective
    for it in range(1, cfg.max_iter + 1):
        try:
            fy, gy = _f_and_grad(model, prep, y)
        except NotPositiveDefiniteError:
            # momentum left the cone: restart from the last accepted iterate
            y = x
            tk = 1.0
            fy, gy = _f_and_grad(model, prep, y)

        trial = None
        t = min(t * 1.1, 1e6 * cfg.step0)
        while t > 1e-18:
            V = y - t * gy
            cand = _prox_cone(V, lam, 0.5 * t * w)
            try:
                f_cand = _f_only(model, prep, cand)
            except NotPositiveDefiniteError:
                t *= cfg.backtrack
                continue
            diff = cand - y
            quad = fy + float(np.sum(gy * diff)) + float(np.sum(diff * diff)) / (2 * t)
            if f_cand <= quad + 1e-12 * max(1.0, abs(fy)):
                trial = (f_cand, cand)
                break
            t *= cfg.backtrack
        if trial is None:
            break

        F_cand = trial[0] + penalty(trial[1])
        cand = trial[1]
        tk1 = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        if F_cand <= Fx:
            x_new, F_new = cand, F_cand
        else:
            x_new, F_new = x, Fx
        y = x_new + (tk / tk1) * (cand - x_new) + ((tk - 1.0) / tk1) * (x_new - x_prev)
        if F_cand > Fx:
            tk1 = 1.0  # the trial worsened: restart the acceleration
        stale = stale + 1 if F_new == Fx else 0
        x_prev, x, Fx, tk = x, x_new, F_new, tk1
        if trace is not None:
            trace.append(Fx)

        if it % cfg.kkt_every == 0 or it == cfg.max_iter:
            eig_max = float(np.linalg.eigvalsh(x)[-1])
            if eig_max > cfg.max_eig_cap:
                raise DivergenceError(
                    f"largest eigenvalue {eig_max:.3e} exceeded the cap "
                    f"{cfg.max_eig_cap:.1e}; data too degenerate for alpha={cfg.alpha}"
                )
            kkt = _kkt_residual(model, prep, x, lam_w)
            # no objective movement for many steps: double precision is
            # exhausted, keep whatever residual is attainable
            if kkt <= cfg.tol_kkt or stale > 300:
                break

    theta_hat = x
    spd_cholesky(theta_hat)
    if not np.isfinite(kkt):
        kkt = _kkt_residual(model, prep, theta_hat, lam_w)
    converged = kkt <= cfg.tol_kkt
    return EstimateResult(
        theta_hat=theta_hat,
        objective=_f_only(model, prep, theta_hat) + penalty(theta_hat),
        iterations=it,
        kkt_residual=float(kkt),
        pattern=pattern(vec_plus(theta_hat), tol=cfg.pattern_tol),
        converged=converged,
    )


def estimate_path(
    X: np.ndarray,
    model: LossModel,
    lam: LambdaSequence,
    alphas,
    cfg: EstimatorConfig,
) -> list[EstimateResult]:
    """Warm-started solutions along an increasing grid of penalty strengths."""
    alphas = list(alphas)
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be sorted ascending")
    results = []
    warm = None
    for a in alphas:
        res = estimate(X, model, lam, replace(cfg, alpha=a), theta_init=warm)
        results.append(res)
        warm = res.theta_hat
    return results
