"""Samplers for every data model used by the experiments.

Gaussian, elliptical with configurable radial law, multivariate t (as a
Gaussian scaled by an independent inverse-chi radius), and the hidden-factor
return panel with its block covariance oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .seeding import as_generator
from .symcore import spd_cholesky


@dataclass(frozen=True)
class RadialLaw:
    """Radius distribution for the elliptical sampler X = Sigma^{1/2} u R.

    kinds:
      chi        R^2 ~ chi^2_p (recovers the Gaussian),
      t          R = sqrt(chi^2_p / (chi^2_nu / nu)), requires nu > 2,
      custom     user sampler(rng, n, p) -> radii, moments unknown analytically.
    """

    kind: str
    nu: float | None = None
    sampler: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("chi", "t", "custom"):
            raise ValueError(f"unknown radial law kind {self.kind!r}")
        if self.kind == "t":
            if self.nu is None or self.nu <= 2:
                raise ValueError("t radius requires nu > 2 for a finite second moment")
        if self.kind == "custom" and self.sampler is None:
            raise ValueError("custom radial law requires a sampler")

    def sample(self, rng: np.random.Generator, n: int, p: int) -> np.ndarray:
        if self.kind == "chi":
            return np.sqrt(rng.chisquare(p, size=n))
        if self.kind == "t":
            return np.sqrt(rng.chisquare(p, size=n) / (rng.chisquare(self.nu, size=n) / self.nu))
        return np.asarray(self.sampler(rng, n, p), dtype=float)

    def second_moment(self, p: int) -> float | None:
        """E[R^2] where known analytically; None for custom laws."""
        if self.kind == "chi":
            return float(p)
        if self.kind == "t":
            return float(p * self.nu / (self.nu - 2))
        return None

    def fourth_moment(self, p: int) -> float | None:
        """E[R^4] where known analytically and finite."""
        if self.kind == "chi":
            return float(p * (p + 2))
        if self.kind == "t":
            if self.nu <= 4:
                raise ValueError("E[R^4] infinite for t radius with nu <= 4")
            return float(self.nu**2 * p * (p + 2) / ((self.nu - 2) * (self.nu - 4)))
        return None


def sample_gaussian(sigma: np.ndarray, n: int, seed) -> np.ndarray:
    """n i.i.d. rows from N(0, sigma)."""
    rng = as_generator(seed)
    L = spd_cholesky(np.asarray(sigma, dtype=float))
    Z = rng.standard_normal((n, sigma.shape[0]))
    return Z @ L.T


def sample_elliptical(
    sigma: np.ndarray,
    law: RadialLaw,
    n: int,
    seed,
    rescale_gamma: bool = False,
    mc_moment_draws: int = 200_000,
) -> np.ndarray:
    """n i.i.d. rows of Sigma^{1/2} u R, u uniform on the unit sphere.

    With ``rescale_gamma`` the sample is multiplied by sqrt(p / E[R^2]) so the
    second-moment matrix of the output equals sigma; for custom laws E[R^2]
    is estimated by Monte Carlo on a dedicated substream.
    """
    rng = as_generator(seed)
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    L = spd_cholesky(sigma)
    Z = rng.standard_normal((n, p))
    U = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    R = law.sample(rng, n, p)
    X = (U * R[:, None]) @ L.T
    if rescale_gamma:
        er2 = law.second_moment(p)
        if er2 is None:
            er2 = float(np.mean(law.sample(rng, mc_moment_draws, p) ** 2))
        X = X * np.sqrt(p / er2)
    return X


def sample_student_t(sigma: np.ndarray, nu: float, n: int, seed) -> np.ndarray:
    """Multivariate t with scale matrix sigma: N(0, sigma) / sqrt(chi^2_nu / nu).

    Scale convention: sigma is the scale matrix of the construction, so the
    covariance of the output is sigma * nu/(nu-2) for nu > 2.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    rng = as_generator(seed)
    G = sample_gaussian(sigma, n, rng)
    w = np.sqrt(rng.chisquare(nu, size=n) / nu)
    return G / w[:, None]


# ---------------------------------------------------------------------------
# hidden-factor return panel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HiddenFactorConfig:
    """Geometry of the simulated factor model.

    Assets split into ``n_groups`` equal groups; each group loads ``loading``
    on its own pair of factors and zero elsewhere, so the implied covariance
    is block diagonal: B^T B + noise_scale * I.

    ``convention`` fixes what the t scale matrices mean: under "covariance"
    (default) factor and error draws are rescaled by sqrt((nu-2)/nu) so their
    covariance equals the stated matrix and the population covariance of the
    returns is exactly B^T B + noise_scale * I; under "scale" the draws keep
    the raw t scale matrices, inflating the covariance by nu/(nu-2).
    """

    t_obs: int
    k_assets: int
    r_factors: int
    nu: float
    loading: float = 0.5
    noise_scale: float = 0.15
    n_groups: int = 3
    seed: int = 0
    convention: str = "covariance"

    def __post_init__(self):
        if self.k_assets % self.n_groups != 0:
            raise ValueError("k_assets must be divisible by n_groups")
        if self.r_factors != 2 * self.n_groups:
            raise ValueError("this design uses exactly two factors per group")
        if self.nu <= 2:
            raise ValueError("nu must exceed 2")
        if self.convention not in ("covariance", "scale"):
            raise ValueError(f"unknown convention {self.convention!r}")


def loading_matrix(cfg: HiddenFactorConfig) -> np.ndarray:
    """r x k loading matrix: column block g loads on factors 2g, 2g+1."""
    B = np.zeros((cfg.r_factors, cfg.k_assets))
    per_group = cfg.k_assets // cfg.n_groups
    for g in range(cfg.n_groups):
        cols = slice(g * per_group, (g + 1) * per_group)
        B[2 * g, cols] = cfg.loading
        B[2 * g + 1, cols] = cfg.loading
    return B


def hidden_factor_oracle(cfg: HiddenFactorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Population covariance B^T B + noise*I and its inverse.

    The covariance is block diagonal, so the inverse is assembled block by
    block: cross-group entries of the precision matrix are exact zeros.
    """
    B = loading_matrix(cfg)
    sigma = B.T @ B + cfg.noise_scale * np.eye(cfg.k_assets)
    theta = np.zeros_like(sigma)
    per_group = cfg.k_assets // cfg.n_groups
    for g in range(cfg.n_groups):
        blk = slice(g * per_group, (g + 1) * per_group)
        theta[blk, blk] = np.linalg.inv(sigma[blk, blk])
    return sigma, theta


def sample_hidden_factor(cfg: HiddenFactorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate the return panel; returns (returns, sigma_oracle, theta_oracle).

    Factor rows and error rows are multivariate t draws with identity and
    noise_scale * I scale matrices respectively (scale-matrix convention: the
    covariance of a t draw is its scale times nu/(nu-2)).
    """
    rng = as_generator(cfg.seed)
    B = loading_matrix(cfg)
    F = sample_student_t(np.eye(cfg.r_factors), cfg.nu, cfg.t_obs, rng)
    eps = sample_student_t(cfg.noise_scale * np.eye(cfg.k_assets), cfg.nu, cfg.t_obs, rng)
    if cfg.convention == "covariance":
        shrink = np.sqrt((cfg.nu - 2.0) / cfg.nu)
        F = F * shrink
        eps = eps * shrink
    returns = F @ B + eps
    sigma, theta = hidden_factor_oracle(cfg)
    return returns, sigma, theta
