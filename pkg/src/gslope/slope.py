"""Sorted-L1 (SLOPE) penalty machinery.

Weight sequences, norm evaluation, the exact proximal operator, pattern
extraction, pattern-space projection, and the one-sided directional derivative
of the penalty together with its exact prox and subdifferential geometry.

Everything here operates on plain 1-d arrays holding strictly-lower matrix
entries in the canonical order of :mod:`gslope.symcore`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri, stdtrit

from .symcore import dim_from_offdiag


# ---------------------------------------------------------------------------
# weight sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaSequence:
    """Nonincreasing nonnegative penalty weights.

    ``strict`` marks sequences that are strictly decreasing with positive tail
    (the SLOPE norm is a proper norm in that case).  Constant sequences (the
    lasso specializations) carry ``strict=False``.
    """

    weights: np.ndarray
    strict: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.diff(w) > 1e-12 * max(1.0, w[0])):
            raise ValueError("weights must be nonincreasing")
        if self.strict:
            if w[-1] <= 0:
                raise ValueError("strict sequence requires a positive last weight")
            if np.any(np.diff(w) >= 0):
                raise ValueError("strict sequence must be strictly decreasing")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.weights))

    def scaled(self, factor: float) -> "LambdaSequence":
        if factor < 0:
            raise ValueError("scale factor must be nonnegative")
        if factor == 0:
            return LambdaSequence(np.zeros_like(self.weights), strict=False)
        return LambdaSequence(factor * self.weights, strict=self.strict)

    def to_json(self) -> list:
        return self.weights.tolist()

    @classmethod
    def from_json(cls, data, strict: bool | None = None) -> "LambdaSequence":
        w = np.asarray(data, dtype=float)
        if strict is None:
            strict = bool(w.size and np.all(np.diff(w) < 0) and w[-1] > 0)
        return cls(w, strict=strict)


def constant_sequence(m: int, value: float = 1.0) -> LambdaSequence:
    """Constant weights: the graphical-lasso specialization."""
    if value < 0:
        raise ValueError("value must be nonnegative")
    return LambdaSequence(np.full(m, float(value)), strict=False)


def bh_sequence_gaussian(p: int, q: float) -> LambdaSequence:
    """Normal-quantile sequence, normalized to mean one.

    lambda_j = ndtri(1 - q*j / (p(p-1))) / lam_bar, j = 1..p(p-1)/2, where
    lam_bar is the mean of the unnormalized values.  Since q < 1 every
    quantile argument stays above 1/2, so all weights are positive.
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    m = p * (p - 1) // 2
    j = np.arange(1, m + 1)
    raw = ndtri(1.0 - q * j / (p * (p - 1)))
    return _as_sequence(raw / raw.mean())


def bh_sequence_t(n: int, m: int, q: float) -> LambdaSequence:
    """Finite-sample sequence from Student-t quantiles with n-2 df.

    lambda_k = t_k / sqrt((n-2) + t_k^2) with t_k the (1 - q*k/(2m)) quantile
    of t_{n-2}; all values lie in (0, 1) by the algebraic bound.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    k = np.arange(1, m + 1)
    tk = stdtrit(n - 2, 1.0 - q * k / (2 * m))
    return _as_sequence(tk / np.sqrt((n - 2) + tk**2))


def bh_sequence_hf(nu: float, m: int, alpha_fdr: float) -> LambdaSequence:
    """Student-t quantile sequence with nu-2 df used by the factor study.

    Same algebraic form as :func:`bh_sequence_t` but parameterized by the tail
    index nu of the return model rather than a sample size.  The length m is a
    free parameter (the number of penalized coefficients).
    """
    if nu <= 2:
        raise ValueError("nu must exceed 2")
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 < alpha_fdr < 1:
        raise ValueError(f"alpha_fdr must lie in (0, 1), got {alpha_fdr}")
    j = np.arange(1, m + 1)
    tj = stdtrit(nu - 2, 1.0 - alpha_fdr * j / (2 * m))
    return _as_sequence(tj / np.sqrt((nu - 2) + tj**2))


def _as_sequence(w: np.ndarray) -> LambdaSequence:
    # quantile spacing can fall below float resolution for very long
    # sequences; only then is the strict flag dropped
    strict = bool(np.all(np.diff(w) < 0) and w[-1] > 0)
    return LambdaSequence(w, strict=strict)


# ---------------------------------------------------------------------------
# norm and prox
# ---------------------------------------------------------------------------

def slope_norm(theta: np.ndarray, lam: LambdaSequence) -> float:
    """sum_j lambda_j * |theta|_(j) with magnitudes sorted nonincreasing."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != len(lam):
        raise ValueError(
            f"length mismatch: theta has {theta.shape[0]}, weights {len(lam)}"
        )
    mags = np.sort(np.abs(theta))[::-1]
    return float(np.dot(lam.weights, mags))


def _pav_core(z: np.ndarray) -> np.ndarray:
    n = z.shape[0]
    out = np.empty(n)
    vals = np.empty(n)
    cnts = np.empty(n, dtype=np.int64)
    top = 0
    for i in range(n):
        v = z[i]
        c = 1
        # merging keeps the stack strictly decreasing in pooled value
        while top > 0 and vals[top - 1] <= v:
            top -= 1
            v = (vals[top] * cnts[top] + v * c) / (cnts[top] + c)
            c += cnts[top]
        vals[top] = v
        cnts[top] = c
        top += 1
    pos = 0
    for k in range(top):
        for _ in range(cnts[k]):
            out[pos] = vals[k]
            pos += 1
    return out


try:  # the hot loop of every prox call; compiled when numba is present
    from numba import njit as _njit

    _pav_core = _njit(cache=True)(_pav_core)
except ImportError:  # pragma: no cover
    pass


def pav_nonincreasing(z: np.ndarray) -> np.ndarray:
    """Project z onto the cone of nonincreasing sequences (least squares).

    Single stack-based pool-adjacent-violators pass, O(len(z)).
    """
    return _pav_core(np.ascontiguousarray(z, dtype=float))


def prox_sorted_linear(y: np.ndarray, weights: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Prox of the sorted linear penalty h(x) = sum_j w_j * x_(j).

    h pairs weights (nonincreasing) with the coordinates of x sorted in
    decreasing value, i.e. the support function of the permutahedron generated
    by w.  The prox preserves the ordering of y, so it reduces to one PAV pass
    on the sorted input minus t*w, with no sign handling.
    """
    y = np.asarray(y, dtype=float)
    order = np.argsort(-y, kind="stable")
    x_sorted = pav_nonincreasing(y[order] - t * np.asarray(weights, dtype=float))
    x = np.empty_like(y)
    x[order] = x_sorted
    return x


def slope_prox(y: np.ndarray, lam: LambdaSequence, t: float = 1.0) -> np.ndarray:
    """Exact minimizer of 0.5*||x - y||^2 + t * slope_norm(x, lam).

    Sign/sort reduction followed by a single PAV pass and a clamp at zero.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] != len(lam):
        raise ValueError(
            f"length mismatch: y has {y.shape[0]}, weights {len(lam)}"
        )
    if t < 0:
        raise ValueError("t must be nonnegative")
    signs = np.sign(y)
    a = np.abs(y)
    order = np.argsort(-a, kind="stable")
    pooled = pav_nonincreasing(a[order] - t * lam.weights)
    np.maximum(pooled, 0.0, out=pooled)
    x = np.empty_like(y)
    x[order] = pooled
    return signs * x


def prox_objective(x: np.ndarray, y: np.ndarray, lam: LambdaSequence, t: float) -> float:
    return 0.5 * float(np.sum((x - y) ** 2)) + t * slope_norm(x, lam)


# ---------------------------------------------------------------------------
# patterns and the pattern space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopePattern:
    """Integer codes rank(|theta|) * sign(theta); zeros code to 0.

    Rank 1 is the smallest nonzero magnitude; tied magnitudes share a rank.
    """

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        object.__setattr__(self, "codes", codes)
        k = int(np.max(np.abs(codes))) if codes.size else 0
        present = set(np.abs(codes[codes != 0]).tolist())
        if present != set(range(1, k + 1)):
            raise ValueError("pattern ranks must cover 1..k with no gaps")

    @property
    def m(self) -> int:
        return self.codes.size

    @property
    def p(self) -> int:
        return dim_from_offdiag(self.m)

    @property
    def n_clusters(self) -> int:
        return int(np.max(np.abs(self.codes))) if self.codes.size else 0

    def as_tuple(self) -> tuple:
        return tuple(int(c) for c in self.codes)

    def clusters_desc(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(indices, signs) per nonzero cluster, largest magnitude first."""
        out = []
        for rank in range(self.n_clusters, 0, -1):
            idx = np.flatnonzero(np.abs(self.codes) == rank)
            out.append((idx, np.sign(self.codes[idx]).astype(float)))
        return out

    def zero_indices(self) -> np.ndarray:
        return np.flatnonzero(self.codes == 0)


def pattern(theta: np.ndarray, tol: float = 0.0) -> SlopePattern:
    """SLOPE pattern of theta, clustering magnitudes within absolute tol.

    Entries with |theta_i| <= tol are zeros.  The remaining magnitudes are
    grouped transitively: consecutive sorted magnitudes closer than tol join
    the same cluster (floating-point prox output ties only up to roundoff).
    """
    theta = np.asarray(theta, dtype=float)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    codes = np.zeros(theta.shape[0], dtype=np.int64)
    mags = np.abs(theta)
    nz = np.flatnonzero(mags > tol)
    if nz.size:
        order = nz[np.argsort(mags[nz], kind="stable")]
        sorted_mags = mags[order]
        ranks = np.ones(order.size, dtype=np.int64)
        ranks[1:] += np.cumsum(np.diff(sorted_mags) > tol)
        codes[order] = ranks * np.sign(theta[order]).astype(np.int64)
    return SlopePattern(codes)


class PatternProjector:
    """Orthogonal projection onto the span of vectors sharing a pattern.

    Coordinates in the zero cluster map to 0; within a nonzero cluster K with
    signs s the projection is s_i * mean_{j in K}(s_j u_j).
    """

    def __init__(self, patt: SlopePattern):
        self.pattern = patt
        self._clusters = patt.clusters_desc()
        self._zero = patt.zero_indices()

    @property
    def m(self) -> int:
        return self.pattern.m

    def project(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (projection, residual); their sum is u and they are orthogonal."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.m:
            raise ValueError(f"expected length {self.m}, got {u.shape[0]}")
        proj = np.zeros_like(u)
        for idx, signs in self._clusters:
            proj[idx] = signs * (float(np.dot(signs, u[idx])) / idx.size)
        return proj, u - proj

    def matrix(self) -> np.ndarray:
        """Dense m x m projection matrix (tests and diagnostics)."""
        m = self.m
        P = np.zeros((m, m))
        for idx, signs in self._clusters:
            P[np.ix_(idx, idx)] = np.outer(signs, signs) / idx.size
        return P


# ---------------------------------------------------------------------------
# directional derivative of the penalty at a fixed reference point
# ---------------------------------------------------------------------------

def _limit_permutation_keys(theta0: np.ndarray, u: np.ndarray, tol: float):
    """First-order expansion terms of |theta0 + eps*u| used for sorting.

    Returns (is_zero, d) where d_j = sign(theta0_j)*u_j on the support and
    d_j = |u_j| on the zero set; the eps -> 0 ordering sorts lexicographically
    by (|theta0_j|, d_j), both descending.
    """
    theta0 = np.asarray(theta0, dtype=float)
    u = np.asarray(u, dtype=float)
    is_zero = np.abs(theta0) <= tol
    d = np.where(is_zero, np.abs(u), np.sign(theta0) * u)
    return is_zero, d


def directional_derivative(
    theta0: np.ndarray, u: np.ndarray, lam: LambdaSequence, tol: float = 0.0
) -> float:
    """One-sided derivative of the SLOPE norm at theta0 in direction u.

    Value is sum_j lambda_{pi(j)} * d_j where d is the first-order term of
    |theta0 + eps*u| and pi is the eps -> 0 limit ordering: descending
    lexicographic sort on (|theta0_j|, d_j).  Within exact ties of both keys
    the value is sort-order invariant, so a stable sort suffices.
    """
    theta0 = np.asarray(theta0, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (theta0.shape[0] == u.shape[0] == len(lam)):
        raise ValueError("theta0, u and weights must share one length")
    _, d = _limit_permutation_keys(theta0, u, tol)
    order = np.lexsort((-d, -np.abs(theta0)))
    return float(np.dot(lam.weights, d[order]))


@dataclass
class DirectionalPenalty:
    """Pen'(theta0; .) as a structured convex penalty with exact prox.

    The reference point's magnitude clusters fix a contiguous block of the
    weight sequence per cluster (largest magnitudes first; the zero cluster
    takes the tail).  On a nonzero cluster with signs s the penalty is the
    sorted-linear function of the signed coordinates s*u; on the zero cluster
    it is the SLOPE norm under the tail weights.  All three of value, prox and
    distance-to-subdifferential decompose over these blocks.
    """

    theta0: np.ndarray
    lam: LambdaSequence
    tol: float = 1e-12
    _blocks: list = field(init=False, repr=False)
    _zero_idx: np.ndarray = field(init=False, repr=False)
    _zero_lam: LambdaSequence | None = field(init=False, repr=False)

    def __post_init__(self):
        theta0 = np.asarray(self.theta0, dtype=float)
        if theta0.shape[0] != len(self.lam):
            raise ValueError("theta0 and weights must share one length")
        self.theta0 = theta0
        patt = pattern(theta0, tol=self.tol)
        self._blocks = []
        start = 0
        for idx, signs in patt.clusters_desc():
            block = self.lam.weights[start : start + idx.size]
            self._blocks.append((idx, signs, block))
            start += idx.size
        self._zero_idx = patt.zero_indices()
        if self._zero_idx.size:
            tail = self.lam.weights[start:]
            self._zero_lam = LambdaSequence(tail, strict=False)
        else:
            self._zero_lam = None

    @property
    def m(self) -> int:
        return self.theta0.shape[0]

    def value(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        total = 0.0
        for idx, signs, block in self._blocks:
            d = np.sort(signs * u[idx])[::-1]
            total += float(np.dot(block, d))
        if self._zero_lam is not None:
            total += slope_norm(u[self._zero_idx], self._zero_lam)
        return total

    def prox(self, v: np.ndarray, t: float) -> np.ndarray:
        """argmin_x 0.5*||x - v||^2 + t * value(x), exactly."""
        v = np.asarray(v, dtype=float)
        x = np.empty_like(v)
        for idx, signs, block in self._blocks:
            x[idx] = signs * prox_sorted_linear(signs * v[idx], block, t)
        if self._zero_lam is not None:
            x[self._zero_idx] = slope_prox(v[self._zero_idx], self._zero_lam, t)
        return x

    def subdiff_distance(self, g: np.ndarray, u: np.ndarray, tol: float = 0.0) -> float:
        """Euclidean distance from g to the subdifferential at u.

        Each block's subdifferential is the face of a permutahedron (or of the
        dual-ball product for the zero cluster), and by Moreau decomposition
        the distance to it is the norm of the corresponding unit-step prox
        residual evaluated blockwise on the u-level sets.  The default
        tol = 0 detects exact ties only, which is right for prox outputs
        (their ties are bitwise); pass a positive tol for general points.
        """
        g = np.asarray(g, dtype=float)
        u = np.asarray(u, dtype=float)
        sq = 0.0
        for idx, signs, block in self._blocks:
            sq += _sorted_linear_face_dist_sq(signs * u[idx], signs * g[idx], block, tol)
        if self._zero_lam is not None:
            sq += _slope_face_dist_sq(
                u[self._zero_idx], g[self._zero_idx], self._zero_lam.weights, tol
            )
        return float(np.sqrt(sq))


def _sorted_linear_face_dist_sq(
    w: np.ndarray, h: np.ndarray, weights: np.ndarray, tol: float
) -> float:
    """Squared distance from h to the face of the permutahedron exposed by w.

    Level sets of w (within tol, descending) split the weight block into
    sub-blocks; the face is the product of the sub-permutahedra, and distance
    to each factor is the norm of PAV(sorted(h_sub) - w_sub).
    """
    order = np.argsort(-w, kind="stable")
    w_sorted = w[order]
    h_sorted = h[order]
    sq = 0.0
    start = 0
    n = w.size
    while start < n:
        end = start + 1
        while end < n and w_sorted[end - 1] - w_sorted[end] <= tol:
            end += 1
        seg = np.sort(h_sorted[start:end])[::-1] - weights[start:end]
        resid = pav_nonincreasing(seg)
        sq += float(np.dot(resid, resid))
        start = end
    return sq


def _slope_face_dist_sq(
    x: np.ndarray, g: np.ndarray, weights: np.ndarray, tol: float
) -> float:
    """Squared distance from g to the SLOPE-norm subdifferential at x.

    Nonzero magnitude clusters of x expose permutahedron faces on the signed
    coordinates; the zero set contributes distance to the dual ball of the
    remaining tail weights, which by Moreau is the norm of the unit prox.
    """
    patt = pattern(x, tol=tol)
    sq = 0.0
    start = 0
    for idx, signs, in patt.clusters_desc():
        block = weights[start : start + idx.size]
        sq += _sorted_linear_face_dist_sq(
            signs * x[idx], signs * g[idx], block, tol
        )
        start += idx.size
    zero_idx = patt.zero_indices()
    if zero_idx.size:
        tail = LambdaSequence(weights[start:], strict=False)
        resid = slope_prox(g[zero_idx], tail, 1.0)
        sq += float(np.dot(resid, resid))
    return sq


def slope_subdiff_distance(
    g: np.ndarray, theta: np.ndarray, lam: LambdaSequence, tol: float = 0.0
) -> float:
    """Euclidean distance from g to the SLOPE-norm subdifferential at theta.

    The optimality residual used by the estimator: at a minimizer the
    negative loss gradient lies in the subdifferential, so this distance is
    the off-diagonal KKT residual.
    """
    g = np.asarray(g, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not (g.shape[0] == theta.shape[0] == len(lam)):
        raise ValueError("g, theta and weights must share one length")
    return float(np.sqrt(_slope_face_dist_sq(theta, g, lam.weights, tol)))
