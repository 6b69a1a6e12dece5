"""Loss models and the coefficient pairs of the limiting problem.

Two losses are supported: the Gaussian negative log-likelihood

    l(x, Theta) = -log det(Theta)/2 + x^T Theta x / 2

and the multivariate-t negative log-likelihood (up to an additive constant)

    l(x, Theta) = -log det(Theta)/2 + (nu + p)/2 * log(nu + x^T Theta x).

For each data/loss pairing the limiting quadratic operator (the population
Hessian at the target) and the score covariance both take the structured form
a*(Sigma (x) Sigma) + b*vec(Sigma)vec(Sigma)^T, so they are stored as
:class:`~gslope.symcore.StructuredOperator` coefficient pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .datagen import RadialLaw
from .seeding import as_generator
from .symcore import (
    NotPositiveDefiniteError,
    StructuredOperator,
    check_symmetric,
    logdet_spd,
    spd_cholesky,
    symmetrize,
)

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"


@dataclass(frozen=True)
class LossModel:
    """Loss specification: Gaussian or Student-t with tail index nu > 2."""

    kind: str
    p: int
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, STUDENT_T):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == STUDENT_T:
            if self.nu is None or self.nu <= 2:
                raise ValueError("student_t loss requires nu > 2")

    @classmethod
    def gaussian(cls, p: int) -> "LossModel":
        return cls(GAUSSIAN, p)

    @classmethod
    def student_t(cls, p: int, nu: float) -> "LossModel":
        return cls(STUDENT_T, p, nu)


def second_moment(X: np.ndarray) -> np.ndarray:
    """Sample second-moment matrix X^T X / n (rows are observations)."""
    X = np.asarray(X, dtype=float)
    return symmetrize(X.T @ X / X.shape[0])


def loss_value(
    model: LossModel,
    data: np.ndarray,
    theta: np.ndarray,
    second_moment_matrix: np.ndarray | None = None,
    chol: np.ndarray | None = None,
) -> float:
    """Average loss over the sample; theta must be positive definite.

    For the Gaussian loss ``second_moment_matrix`` may replace the raw sample
    (it is sufficient); the t loss always needs the rows.
    """
    theta = np.asarray(theta, dtype=float)
    L = spd_cholesky(theta) if chol is None else chol
    ld = logdet_spd(theta, chol=L)
    if model.kind == GAUSSIAN:
        S = second_moment_matrix
        if S is None:
            S = second_moment(data)
        return -0.5 * ld + 0.5 * float(np.sum(S * theta))
    X = np.asarray(data, dtype=float)
    q = np.einsum("ij,jk,ik->i", X, theta, X)
    return -0.5 * ld + (model.nu + model.p) / (2 * X.shape[0]) * float(
        np.sum(np.log(model.nu + q))
    )


def loss_gradient(
    model: LossModel,
    data: np.ndarray,
    theta: np.ndarray,
    second_moment_matrix: np.ndarray | None = None,
    chol: np.ndarray | None = None,
) -> np.ndarray:
    """Average gradient of the loss over the sample (a symmetric matrix)."""
    theta = np.asarray(theta, dtype=float)
    L = spd_cholesky(theta) if chol is None else chol
    theta_inv = cho_solve((L, True), np.eye(theta.shape[0]))
    if model.kind == GAUSSIAN:
        S = second_moment_matrix
        if S is None:
            S = second_moment(data)
        return symmetrize(0.5 * (S - theta_inv))
    X = np.asarray(data, dtype=float)
    q = np.einsum("ij,jk,ik->i", X, theta, X)
    w = 1.0 / (model.nu + q)
    M = (X * w[:, None]).T @ X / X.shape[0]
    return symmetrize(0.5 * (-theta_inv + (model.nu + model.p) * M))


# ---------------------------------------------------------------------------
# radial moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialMoments:
    """Moments of the radius entering the limiting coefficients.

    e_xi is E[(nu+p) R^4 / (nu+R^2)^2] for the t loss with tail index nu; it
    always lies strictly between 0 and p.  mean_r2_ratio is E[R^2/(nu+R^2)],
    whose value p/(nu+p) is the consistency condition of the t loss.  er4 is
    None when the fourth moment is infinite for the declared law.
    """

    er2: float
    er4: float | None
    e_xi: float | None = None
    mean_r2_ratio: float | None = None
    source: str = "analytic"
    law_kind: str | None = None
    n_draws: int | None = None
    seed: int | None = None
    se_er4: float | None = None
    se_e_xi: float | None = None

    def __post_init__(self):
        if self.er2 <= 0:
            raise ValueError("E[R^2] must be positive")
        if self.er4 is not None and self.er4 < self.er2**2:
            raise ValueError("E[R^4] must be at least E[R^2]^2")


def radial_moments(
    law: RadialLaw,
    p: int,
    nu_loss: float | None = None,
    n_draws: int = 1_000_000,
    seed: int = 0,
) -> RadialMoments:
    """Radial moments for dimension p, analytic where the law allows.

    nu_loss is the tail index of the t loss the moments will feed (needed for
    e_xi and the consistency ratio); for the t radius with nu_loss equal to
    the law's own nu both are analytic, otherwise Monte Carlo with reported
    standard errors.
    """
    if law.kind == "chi":
        er2, er4 = float(p), float(p * (p + 2))
        if nu_loss is None:
            return RadialMoments(er2, er4, law_kind="chi")
        e_xi, ratio, se = _mc_xi(law, p, nu_loss, n_draws, seed)
        return RadialMoments(
            er2, er4, e_xi, ratio, source="monte_carlo", law_kind="chi",
            n_draws=n_draws, seed=seed, se_e_xi=se,
        )
    if law.kind == "t":
        er2 = law.second_moment(p)
        er4 = law.fourth_moment(p) if law.nu > 4 else None
        if nu_loss is None:
            return RadialMoments(er2, er4, law_kind="t")
        if nu_loss == law.nu:
            e_xi = p * (p + 2) / (nu_loss + p + 2)
            return RadialMoments(
                er2, er4, e_xi, p / (nu_loss + p), law_kind="t",
            )
        e_xi, ratio, se = _mc_xi(law, p, nu_loss, n_draws, seed)
        return RadialMoments(
            er2, er4, e_xi, ratio, source="monte_carlo", law_kind="t",
            n_draws=n_draws, seed=seed, se_e_xi=se,
        )
    # custom law: everything by Monte Carlo
    rng = as_generator(seed)
    r = law.sample(rng, n_draws, p)
    r2 = r**2
    er2 = float(np.mean(r2))
    er4 = float(np.mean(r2**2))
    se_er4 = float(np.std(r2**2) / np.sqrt(n_draws))
    if nu_loss is None:
        return RadialMoments(
            er2, er4, source="monte_carlo", law_kind="custom",
            n_draws=n_draws, seed=seed, se_er4=se_er4,
        )
    xi = (nu_loss + p) * r2**2 / (nu_loss + r2) ** 2
    ratio = r2 / (nu_loss + r2)
    return RadialMoments(
        er2, er4, float(np.mean(xi)), float(np.mean(ratio)),
        source="monte_carlo", law_kind="custom", n_draws=n_draws, seed=seed,
        se_er4=se_er4, se_e_xi=float(np.std(xi) / np.sqrt(n_draws)),
    )


def _mc_xi(law, p, nu_loss, n_draws, seed):
    rng = as_generator(seed)
    r2 = law.sample(rng, n_draws, p) ** 2
    xi = (nu_loss + p) * r2**2 / (nu_loss + r2) ** 2
    return (
        float(np.mean(xi)),
        float(np.mean(r2 / (nu_loss + r2))),
        float(np.std(xi) / np.sqrt(n_draws)),
    )


# ---------------------------------------------------------------------------
# limiting coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticCoefficients:
    """Hessian and score covariance of the limiting problem, structured form.

    ``hessian`` is the population curvature at the target parameter and
    ``score_cov`` the covariance of the score; both act on vec(Sym(p)).
    ``fit_rel_residual`` is set when score_cov was fitted to an externally
    supplied dense matrix rather than derived in closed form.
    """

    sigma: np.ndarray
    hessian: StructuredOperator
    score_cov: StructuredOperator
    provenance: str
    fit_rel_residual: float | None = None

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def to_json_dict(self) -> dict:
        from .symcore import sym_to_json_dict

        return {
            "sigma": sym_to_json_dict(self.sigma),
            "a_C": self.hessian.a,
            "b_C": self.hessian.b,
            "a_Cd": self.score_cov.a,
            "b_Cd": self.score_cov.b,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AsymptoticCoefficients":
        from .symcore import sym_from_json_dict

        sigma = sym_from_json_dict(d["sigma"])
        return cls(
            sigma=sigma,
            hessian=StructuredOperator(sigma, float(d["a_C"]), float(d["b_C"])),
            score_cov=StructuredOperator(sigma, float(d["a_Cd"]), float(d["b_Cd"])),
            provenance=str(d["provenance"]),
        )


def _commutation_matrix(p: int) -> np.ndarray:
    """K vec(A) = vec(A^T); dense, for the small-p fitting path only."""
    K = np.zeros((p * p, p * p))
    for i in range(p):
        for j in range(p):
            K[j * p + i, i * p + j] = 1.0
    return K


def _gaussian_hessian(sigma: np.ndarray) -> StructuredOperator:
    return StructuredOperator(sigma, 0.5, 0.0)


def coeffs_gaussian(sigma: np.ndarray) -> AsymptoticCoefficients:
    """Gaussian data under the Gaussian loss: score covariance equals Hessian."""
    sigma = check_symmetric(sigma)
    C = _gaussian_hessian(sigma)
    return AsymptoticCoefficients(sigma, C, C, "gaussian")


def coeffs_gaussian_loss_general(
    sigma: np.ndarray, fourth_moment_cov: np.ndarray | None = None
) -> AsymptoticCoefficients:
    """Gaussian loss with a general fourth moment.

    The score covariance is Cov(vec(XX^T))/4.  Without ``fourth_moment_cov``
    Gaussian data are assumed and it equals the Hessian.  A supplied dense
    Cov(vec(XX^T)) (p^2 x p^2, column-major vec) is projected onto the
    structured family by least squares; the relative residual of that fit is
    recorded, and is zero in exact arithmetic for any elliptical model.
    """
    sigma = check_symmetric(sigma)
    C = _gaussian_hessian(sigma)
    if fourth_moment_cov is None:
        return AsymptoticCoefficients(sigma, C, C, "gaussian")
    M = np.asarray(fourth_moment_cov, dtype=float)
    p = sigma.shape[0]
    if M.shape != (p * p, p * p):
        raise ValueError(f"fourth_moment_cov must be {p*p} x {p*p}")
    if np.max(np.abs(M - M.T)) > 1e-8 * max(1.0, np.max(np.abs(M))):
        raise ValueError("fourth_moment_cov must be symmetric")
    if np.linalg.eigvalsh(symmetrize(M)).min() < -1e-8 * max(1.0, np.max(np.abs(M))):
        raise ValueError("fourth_moment_cov must be positive semidefinite")
    # the comparison lives on vec(Sym(p)): project both sides through the
    # symmetrizer (I + K_commutation)/2 before the two-parameter fit
    P_sym = 0.5 * (np.eye(p * p) + _commutation_matrix(p))
    target = P_sym @ (symmetrize(M) / 4.0) @ P_sym
    K = P_sym @ np.kron(sigma, sigma) @ P_sym
    v = sigma.reshape(-1, order="F")
    R = np.outer(v, v)
    G = np.array([[np.sum(K * K), np.sum(K * R)], [np.sum(K * R), np.sum(R * R)]])
    rhs = np.array([np.sum(K * target), np.sum(R * target)])
    a, b = np.linalg.solve(G, rhs)
    resid = float(
        np.linalg.norm(target - a * K - b * R) / max(np.linalg.norm(target), 1e-300)
    )
    C_delta = StructuredOperator(sigma, float(a), float(b))
    return AsymptoticCoefficients(sigma, C, C_delta, "gaussian", fit_rel_residual=resid)


def coeffs_elliptical_gaussian_loss(
    sigma: np.ndarray, moments: RadialMoments
) -> AsymptoticCoefficients:
    """Elliptical data (E[R^2] = p) under the Gaussian loss.

    The score covariance inflates the Gaussian one by
    kappa = E[R^4]/(p(p+2)) - 1 applied to (C + vec(Sigma)vec(Sigma)^T/4).
    """
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    if moments.er4 is None:
        raise ValueError("E[R^4] is infinite for the supplied radial law")
    if abs(moments.er2 - p) > 1e-9 * max(1.0, p):
        raise ValueError(
            f"elliptical coefficients require E[R^2] = p; got {moments.er2} vs p={p}"
        )
    kappa = moments.er4 / (p * (p + 2)) - 1.0
    C = _gaussian_hessian(sigma)
    C_delta = StructuredOperator(sigma, 0.5 * (1.0 + kappa), kappa / 4.0)
    return AsymptoticCoefficients(sigma, C, C_delta, "elliptical_gaussian_loss")


def coeffs_t_data_gaussian_loss(sigma: np.ndarray, nu: float) -> AsymptoticCoefficients:
    """t data (rescaled by sqrt(1 - 2/nu)) under the Gaussian loss, nu > 4.

    The inflation coefficient is 2/(nu - 4); it multiplies the same
    correction shape as in the general elliptical case.
    """
    if nu <= 4:
        raise ValueError("nu must exceed 4 (fourth moment infinite otherwise)")
    sigma = check_symmetric(sigma)
    kappa = 2.0 / (nu - 4.0)
    C = _gaussian_hessian(sigma)
    C_delta = StructuredOperator(sigma, 0.5 * (1.0 + kappa), kappa / 4.0)
    return AsymptoticCoefficients(sigma, C, C_delta, "t_data_gaussian_loss")


def coeffs_t_loss(
    sigma: np.ndarray,
    nu: float,
    moments: RadialMoments,
    consistency_tol: float = 1e-6,
) -> AsymptoticCoefficients:
    """Elliptical data under the t loss with tail index nu.

    Requires the consistency condition E[R^2/(nu+R^2)] = p/(nu+p) (else the
    loss does not target the supplied parameter, a hard error).  With
    E = E[xi_R]:

        C       = (1/2 - E/(p(p+2))) * (Sigma (x) Sigma) - E/(2 p (p+2)) * r1
        C_delta = C + tau * ((Sigma (x) Sigma)/2 + r1/4)

    where r1 = vec(Sigma)vec(Sigma)^T and tau = (nu+p+2) E / (p(p+2)) - 1.
    For the t radius with matching nu, E = p(p+2)/(nu+p+2), so tau = 0 and
    the two operators coincide.
    """
    if nu <= 2:
        raise ValueError("nu must exceed 2")
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    if moments.e_xi is None:
        raise ValueError("moments lack e_xi; build them with nu_loss set")
    if moments.mean_r2_ratio is not None:
        if abs(moments.mean_r2_ratio - p / (nu + p)) > consistency_tol:
            raise ValueError(
                "radial law violates the t-loss consistency condition: "
                f"E[R^2/(nu+R^2)] = {moments.mean_r2_ratio:.8f} vs required "
                f"{p / (nu + p):.8f}"
            )
    E = moments.e_xi
    if not 0 < E < p:
        raise ValueError(f"E[xi_R] must lie in (0, p); got {E}")
    a_c = 0.5 - E / (p * (p + 2))
    b_c = -E / (2 * p * (p + 2))
    tau = (nu + p + 2) * E / (p * (p + 2)) - 1.0
    C = StructuredOperator(sigma, a_c, b_c)
    C_delta = StructuredOperator(sigma, a_c + 0.5 * tau, b_c + 0.25 * tau)
    provenance = (
        "t_data_t_loss"
        if moments.law_kind == "t" and moments.source == "analytic"
        else "elliptical_t_loss"
    )
    return AsymptoticCoefficients(sigma, C, C_delta, provenance)


# ---------------------------------------------------------------------------
# diagnostics and small identities
# ---------------------------------------------------------------------------

def spherical_fourth_moment_apply(A: np.ndarray, p: int) -> np.ndarray:
    """E[(u^T A u) uu^T] for u uniform on the sphere and symmetric A.

    Equals (2A + tr(A) I) / (p (p + 2)); the closed form behind every
    coefficient derivation above, exposed for Monte Carlo validation.
    """
    A = check_symmetric(A)
    return (2.0 * A + np.trace(A) * np.eye(p)) / (p * (p + 2))


def check_theorem_conditions(theta0: np.ndarray, coeffs: AsymptoticCoefficients) -> dict:
    """Runtime diagnostics for the limit theorem's checkable conditions.

    Verifies that the target is interior to the cone, the Hessian is positive
    definite on vec(Sym(p)) and the score covariance is positive
    semidefinite and finite.  (The envelope/domination conditions hold
    analytically for both built-in losses.)
    """
    out = {}
    try:
        spd_cholesky(np.asarray(theta0, dtype=float))
        out["theta0_interior"] = True
    except NotPositiveDefiniteError:
        out["theta0_interior"] = False
    C, D = coeffs.hessian, coeffs.score_cov
    out["hessian_pd"] = C.is_positive_definite_sym()
    out["hessian_min_eig"] = C.min_eigenvalue_sym()
    out["score_cov_psd"] = D.is_positive_semidefinite_sym(tol=1e-12)
    out["score_cov_finite"] = bool(
        np.isfinite(D.a) and np.isfinite(D.b) and np.all(np.isfinite(D.sigma))
    )
    out["ok"] = bool(
        out["theta0_interior"]
        and out["hessian_pd"]
        and out["hessian_min_eig"] > 0
        and out["score_cov_psd"]
        and out["score_cov_finite"]
    )
    return out


def sample_fourth_moment_cov(X: np.ndarray, chunk: int = 100_000) -> np.ndarray:
    """Sample Cov(vec(XX^T)) accumulated in chunks (column-major vec)."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    d = p * p
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    for start in range(0, n, chunk):
        part = X[start : start + chunk]
        V = np.einsum("ni,nj->nij", part, part).reshape(part.shape[0], d)
        s1 += V.sum(axis=0)
        s2 += V.T @ V
    mean = s1 / n
    return s2 / n - np.outer(mean, mean)
