"""Slow reference solvers for cross-validating the fast paths.

These share the objective definitions but none of the prox/PAV machinery:
subgradients come straight from the sort-based formulas, and feasibility is
enforced by eigenvalue projection.  They exist so every fast solver can be
checked against an algorithm with nothing in common beyond the objective.
"""

from __future__ import annotations

import numpy as np

from .estimator import EstimatorConfig, _f_and_grad, _prepare
from .losses import LossModel
from .slope import DirectionalPenalty, LambdaSequence
from .symcore import StructuredOperator, sym_from_lower, symmetrize, vec_plus


def slope_norm_subgradient(theta: np.ndarray, lam: LambdaSequence) -> np.ndarray:
    """One valid subgradient of the SLOPE norm at theta.

    Pairs the k-th largest weight with the k-th largest magnitude (stable
    tie-break); zero coordinates receive zero, which is always admissible.
    """
    theta = np.asarray(theta, dtype=float)
    order = np.argsort(-np.abs(theta), kind="stable")
    g = np.zeros_like(theta)
    g[order] = lam.weights * np.sign(theta[order])
    return g


def directional_penalty_subgradient(pen: DirectionalPenalty, u: np.ndarray) -> np.ndarray:
    """One valid subgradient of Pen'(theta0; .) at u via the limit ordering."""
    u = np.asarray(u, dtype=float)
    theta0 = pen.theta0
    is_zero = np.abs(theta0) <= pen.tol
    d = np.where(is_zero, np.abs(u), np.sign(theta0) * u)
    order = np.lexsort((-d, -np.abs(theta0)))
    g = np.zeros_like(u)
    slope_dir = np.where(is_zero, np.sign(u), np.sign(theta0))
    g[order] = pen.lam.weights * slope_dir[order]
    return g


def limit_subgradient(
    pen: DirectionalPenalty,
    hessian: StructuredOperator,
    W: np.ndarray,
    iters: int = 200_000,
    step0: float | None = None,
    decay: float = 0.7,
    decay_every: int = 4000,
    u_init: np.ndarray | None = None,
) -> np.ndarray:
    """Plain subgradient descent on the limiting objective (best iterate).

    Geometric step decay; slow but independent of the prox solver.
    """
    p = hessian.dim
    x = np.zeros((p, p)) if u_init is None else symmetrize(np.asarray(u_init, float))
    if step0 is None:
        step0 = 1.0 / hessian.max_eigenvalue_sym()

    def value(U):
        return (
            0.5 * hessian.quadform(U)
            - float(np.sum(W * U))
            + pen.value(vec_plus(U))
        )

    best = x
    best_val = value(x)
    step = step0
    for k in range(iters):
        g_smooth = hessian.apply(x) - W
        g_pen_plus = directional_penalty_subgradient(pen, vec_plus(x))
        # off-diagonal pairs appear twice in the matrix parameterization
        G = g_smooth + 0.5 * sym_from_lower(g_pen_plus, np.zeros(p))
        x = x - step * G
        if (k + 1) % decay_every == 0:
            step *= decay
        v = value(x)
        if v < best_val:
            best_val, best = v, x
    return best


def estimator_subgradient(
    X: np.ndarray,
    model: LossModel,
    lam: LambdaSequence,
    cfg: EstimatorConfig,
    iters: int = 200_000,
    step0: float = 0.05,
    decay: float = 0.7,
    decay_every: int = 4000,
    eig_floor: float = 1e-8,
    theta_init: np.ndarray | None = None,
) -> np.ndarray:
    """Projected subgradient descent on the penalized estimation objective.

    Feasibility is kept by clipping eigenvalues at ``eig_floor`` after every
    step (the projection), so this never touches the Cholesky line search or
    the prox used by the fast path.  Returns the best feasible iterate.
    """
    prep = _prepare(model, X, cfg.center)
    w = cfg.alpha * (prep.n ** -0.5 if cfg.scale_mode == "n_inv_sqrt" else 1.0)

    def project(theta):
        vals, vecs = np.linalg.eigh(symmetrize(theta))
        return (vecs * np.maximum(vals, eig_floor)) @ vecs.T

    def value(theta):
        from .slope import slope_norm

        f, _ = _f_and_grad(model, prep, theta)
        return f + w * slope_norm(vec_plus(theta), lam)

    if theta_init is None:
        eps = 1e-3 * np.trace(prep.S) / prep.p
        theta = project(np.linalg.inv(prep.S + eps * np.eye(prep.p)))
    else:
        theta = project(np.asarray(theta_init, dtype=float))
    best = theta
    best_val = value(theta)
    step = step0
    for k in range(iters):
        _, g_smooth = _f_and_grad(model, prep, theta)
        g_pen = slope_norm_subgradient(vec_plus(theta), lam)
        G = g_smooth + 0.5 * w * sym_from_lower(g_pen, np.zeros(prep.p))
        theta = project(theta - step * G)
        if (k + 1) % decay_every == 0:
            step *= decay
        v = value(theta)
        if v < best_val:
            best_val, best = v, theta
    return best
