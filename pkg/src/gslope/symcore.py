"""Symmetric-matrix storage, vectorization maps and structured Kronecker operators.

All modules share one vectorization convention: the strictly-lower triangle is
read column by column (column-major), so for a p x p matrix the k-th entry of
``vec_plus`` is S[i, j] with j the slowest index and i > j.  ``vech`` uses the
same order but includes the diagonal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class DimensionError(ValueError):
    """Raised when matrix or vector dimensions are inconsistent."""


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix required to be positive definite is not."""


@lru_cache(maxsize=None)
def lower_pair_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the strictly-lower triangle in canonical order.

    The canonical order is column-major: (1,0), (2,0), ..., (p-1,0), (2,1), ...
    Every module that touches off-diagonal coefficients (penalties, patterns,
    edge trajectories) uses this one function, so index k always refers to the
    same matrix entry everywhere.
    """
    cols, rows = np.triu_indices(p, k=1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


@lru_cache(maxsize=None)
def _half_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    cols, rows = np.triu_indices(p)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def num_offdiag(p: int) -> int:
    return p * (p - 1) // 2


def dim_from_offdiag(m: int) -> int:
    p = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if p * (p - 1) // 2 != m:
        raise DimensionError(f"{m} is not p(p-1)/2 for any integer p")
    return p


def vec_plus(S: np.ndarray) -> np.ndarray:
    """Strictly-lower entries of a symmetric matrix, canonical order."""
    S = np.asarray(S, dtype=float)
    rows, cols = lower_pair_indices(S.shape[0])
    return S[rows, cols].copy()


def sym_from_lower(values: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """Rebuild a symmetric matrix from strict-lower entries and a diagonal."""
    values = np.asarray(values, dtype=float)
    diag = np.asarray(diag, dtype=float)
    p = diag.shape[0]
    if values.shape[0] != num_offdiag(p):
        raise DimensionError(
            f"expected {num_offdiag(p)} off-diagonal values for p={p}, "
            f"got {values.shape[0]}"
        )
    S = np.zeros((p, p))
    rows, cols = lower_pair_indices(p)
    S[rows, cols] = values
    S[cols, rows] = values
    S[np.diag_indices(p)] = diag
    return S


def vech(S: np.ndarray) -> np.ndarray:
    """Lower triangle including the diagonal, column-major order."""
    S = np.asarray(S, dtype=float)
    rows, cols = _half_indices(S.shape[0])
    return S[rows, cols].copy()


def sym_from_vech(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    p = int(round((np.sqrt(1 + 8 * n) - 1) / 2))
    if p * (p + 1) // 2 != n:
        raise DimensionError(f"{n} is not p(p+1)/2 for any integer p")
    S = np.zeros((p, p))
    rows, cols = _half_indices(p)
    S[rows, cols] = v
    S[cols, rows] = v
    return S


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def check_symmetric(S: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    if np.max(np.abs(S - S.T)) > tol * max(1.0, np.max(np.abs(S))):
        raise ValueError("matrix is not symmetric")
    return symmetrize(S)


def spd_cholesky(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises NotPositiveDefiniteError on failure.

    Cholesky doubles as the positive-definiteness test everywhere (it is the
    cheapest certificate and its failure is the line-search signal that an
    iterate left the cone).
    """
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def is_spd(S: np.ndarray) -> bool:
    try:
        spd_cholesky(S)
        return True
    except NotPositiveDefiniteError:
        return False


def spd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix via eigendecomposition."""
    w, V = np.linalg.eigh(symmetrize(S))
    if w.min() <= 0:
        raise NotPositiveDefiniteError("matrix has a non-positive eigenvalue")
    return (V * np.sqrt(w)) @ V.T


def logdet_spd(S: np.ndarray, chol: np.ndarray | None = None) -> float:
    L = spd_cholesky(S) if chol is None else chol
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass(frozen=True)
class StructuredOperator:
    """Linear map a*(Sigma (x) Sigma) + b*vec(Sigma)vec(Sigma)^T on vec(Sym(p)).

    Stores only Sigma and the two scalar coefficients; the p^2 x p^2 matrix is
    never materialized except by :meth:`as_dense`, which exists for small-p
    test oracles.  Acting on a symmetric A:

        apply(A)   = a * Sigma A Sigma + b * tr(Sigma A) * Sigma
        quadform(A) = a * tr(Sigma A Sigma A) + b * tr(Sigma A)^2

    Restricted to vec(Sym(p)), the operator is positive definite exactly when
    a > 0 and a + p*b > 0 (congruence by Sigma^{1/2} (x) Sigma^{1/2} reduces it
    to a*I on traceless matrices and (a + p*b) on the identity direction).
    """

    sigma: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_symmetric(self.sigma))

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def apply(self, A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        if A.shape != self.sigma.shape:
            raise DimensionError(
                f"operand shape {A.shape} does not match operator dim {self.dim}"
            )
        S = self.sigma
        out = self.a * (S @ A @ S)
        if self.b != 0.0:
            out = out + self.b * float(np.sum(S * A)) * S
        # exact symmetry regardless of roundoff in the matmuls
        return symmetrize(out)

    def quadform(self, A: np.ndarray) -> float:
        A = np.asarray(A, dtype=float)
        if A.shape != self.sigma.shape:
            raise DimensionError(
                f"operand shape {A.shape} does not match operator dim {self.dim}"
            )
        SA = self.sigma @ A
        return self.a * float(np.sum(SA * SA.T)) + self.b * float(np.trace(SA)) ** 2

    def is_positive_definite_sym(self) -> bool:
        return self.a > 0 and self.a + self.dim * self.b > 0

    def is_positive_semidefinite_sym(self, tol: float = 0.0) -> bool:
        return self.a >= -tol and self.a + self.dim * self.b >= -tol

    def min_eigenvalue_sym(self) -> float:
        """Smallest eigenvalue of the induced quadratic form on Sym(p).

        Numeric check over an orthonormal basis of Sym(p); used as a runtime
        diagnostic next to the exact sign conditions.
        """
        G = self.sym_form_matrix()
        return float(np.linalg.eigvalsh(G)[0])

    def max_eigenvalue_sym(self) -> float:
        G = self.sym_form_matrix()
        return float(np.linalg.eigvalsh(G)[-1])

    def sym_form_matrix(self) -> np.ndarray:
        """Matrix of the quadratic form over an orthonormal basis of Sym(p).

        Basis: E_ii and (E_ij + E_ji)/sqrt(2).  Dimension p(p+1)/2, so this is
        cheap for the p <= 30 problems this package targets.
        """
        p = self.dim
        basis = []
        for j in range(p):
            for i in range(j, p):
                B = np.zeros((p, p))
                if i == j:
                    B[i, i] = 1.0
                else:
                    B[i, j] = B[j, i] = 1.0 / np.sqrt(2.0)
                basis.append(B)
        d = len(basis)
        applied = [self.apply(B) for B in basis]
        G = np.empty((d, d))
        for r in range(d):
            for c in range(r, d):
                G[r, c] = G[c, r] = float(np.sum(applied[r] * basis[c]))
        return G

    def as_dense(self) -> np.ndarray:
        """Dense p^2 x p^2 representation (test oracle only, small p)."""
        S = self.sigma
        v = S.reshape(-1, order="F")
        return self.a * np.kron(S, S) + self.b * np.outer(v, v)

    def scaled(self, factor: float) -> "StructuredOperator":
        return StructuredOperator(self.sigma, factor * self.a, factor * self.b)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def sym_to_json_dict(S: np.ndarray) -> dict:
    S = check_symmetric(S)
    return {"dim": int(S.shape[0]), "lower_triangular": vech(S).tolist()}


def sym_from_json_dict(d: dict) -> np.ndarray:
    S = sym_from_vech(np.asarray(d["lower_triangular"], dtype=float))
    if S.shape[0] != int(d["dim"]):
        raise DimensionError("dim field inconsistent with lower_triangular length")
    return S


def save_matrix_json(path, S: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump(sym_to_json_dict(S), fh)


def load_matrix_json(path) -> np.ndarray:
    with open(path) as fh:
        return sym_from_json_dict(json.load(fh))


def save_matrix_csv(path, S: np.ndarray) -> None:
    np.savetxt(path, np.asarray(S, dtype=float), delimiter=",")


def load_matrix_csv(path) -> np.ndarray:
    S = np.loadtxt(path, delimiter=",", ndmin=2)
    return check_symmetric(S)
