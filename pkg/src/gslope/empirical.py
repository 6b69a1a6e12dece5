"""Returns-panel pipeline: yearly precision estimates, edge trajectories,
k-means clustering and the Calinski-Harabasz path.

The panel is a dated n x p matrix of (percent) returns.  For every calendar
year the columns are standardized and a precision matrix is estimated with a
per-year Student-t quantile weight sequence; the strictly off-diagonal
coefficients of the yearly estimates form an m x Y trajectory matrix (rows in
the canonical off-diagonal order) that is clustered with k-means and scored
with the Calinski-Harabasz index along the regularization path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from .estimator import EstimatorConfig, EstimateResult, estimate
from .losses import LossModel
from .slope import LambdaSequence, bh_sequence_t, constant_sequence
from .symcore import lower_pair_indices, num_offdiag, vec_plus


@dataclass(frozen=True)
class ReturnsPanel:
    dates: pd.DatetimeIndex
    assets: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.dates), len(self.assets)):
            raise ValueError("values shape must match dates x assets")
        if not self.dates.is_monotonic_increasing or self.dates.has_duplicates:
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("panel contains missing values after ingestion")

    @property
    def p(self) -> int:
        return len(self.assets)

    def years(self) -> list[int]:
        return sorted(set(self.dates.year))


@dataclass(frozen=True)
class IngestionReport:
    n_rows_read: int
    n_rows_dropped: int
    date_min: str
    date_max: str
    assets: tuple


DEFAULT_SENTINELS = (-99.99, -999.0)


def ingest_csv(path, sentinels=DEFAULT_SENTINELS) -> tuple[ReturnsPanel, IngestionReport]:
    """Load a returns CSV: first column dates (YYYYMMDD or ISO), rest numeric.

    Sentinel values mark missing data in the source convention; any row with
    a missing cell is dropped and counted.
    """
    df = pd.read_csv(path)
    if df.shape[1] < 2:
        raise ValueError("need a date column plus at least one return column")
    if df.shape[0] == 0:
        raise ValueError("empty panel")
    raw_dates = df.iloc[:, 0]
    if pd.api.types.is_integer_dtype(raw_dates) or (
        raw_dates.astype(str).str.fullmatch(r"\d{8}").all()
    ):
        dates = pd.to_datetime(raw_dates.astype(str), format="%Y%m%d")
    else:
        dates = pd.to_datetime(raw_dates)
    values = df.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    for s in sentinels:
        values = values.mask(np.isclose(values, s))
    keep = ~values.isna().any(axis=1)
    dropped = int((~keep).sum())
    values = values[keep]
    dates = pd.DatetimeIndex(dates[keep])
    order = np.argsort(dates)
    dates = dates[order]
    values = values.iloc[np.asarray(order)]
    if len(dates) == 0:
        raise ValueError("empty panel after dropping incomplete rows")
    panel = ReturnsPanel(
        dates=dates,
        assets=tuple(str(c) for c in df.columns[1:]),
        values=values.to_numpy(dtype=float),
    )
    report = IngestionReport(
        n_rows_read=int(df.shape[0]),
        n_rows_dropped=dropped,
        date_min=str(dates[0].date()),
        date_max=str(dates[-1].date()),
        assets=panel.assets,
    )
    return panel, report


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Column-wise mean 0, standard deviation 1 (population convention)."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    if np.any(sd == 0):
        bad = np.flatnonzero(sd == 0)
        raise ValueError(f"zero variance in columns {bad.tolist()}; cannot standardize")
    return (X - mu) / sd


def yearly_estimates(
    panel: ReturnsPanel,
    model: LossModel,
    alpha: float,
    cfg: EstimatorConfig,
    q: float = 0.05,
    lam_builder=None,
    min_rows_margin: int = 5,
) -> list[tuple[int, EstimateResult, LambdaSequence]]:
    """Per-year estimates on within-year standardized returns.

    The weight sequence is rebuilt for each year from that year's sample size
    (default: the Student-t quantile sequence); years with fewer than
    p + min_rows_margin rows are skipped with a warning.
    """
    p = panel.p
    m = num_offdiag(p)
    out = []
    for year in panel.years():
        mask = panel.dates.year == year
        X = panel.values[mask]
        if X.shape[0] < p + min_rows_margin:
            warnings.warn(
                f"year {year}: only {X.shape[0]} rows for p={p}; skipped",
                stacklevel=2,
            )
            continue
        Xs = standardize_columns(X)
        lam = (
            lam_builder(X.shape[0], m) if lam_builder is not None
            else bh_sequence_t(X.shape[0], m, q)
        )
        res = estimate(Xs, model, lam, replace(cfg, alpha=alpha))
        out.append((year, res, lam))
    if not out:
        raise ValueError("no year had enough data to estimate")
    return out


@dataclass(frozen=True)
class EdgeTrajectories:
    """m x Y matrix of off-diagonal coefficients across yearly estimates.

    Row k is edge (i, j), i < j, at the canonical off-diagonal index k, so
    row order is interchangeable with every other vec_plus consumer.
    """

    edges: tuple
    years: tuple
    matrix: np.ndarray

    @property
    def m(self) -> int:
        return self.matrix.shape[0]


def edge_pairs(p: int) -> tuple:
    """(i, j) with i < j for every canonical off-diagonal index."""
    rows, cols = lower_pair_indices(p)
    return tuple((int(j), int(i)) for i, j in zip(rows, cols))


def edge_matrix(results: list) -> EdgeTrajectories:
    """Stack vec_plus of each yearly estimate as columns."""
    if not results:
        raise ValueError("no estimates supplied")
    years = tuple(int(y) for y, *_ in results)
    thetas = [r.theta_hat for _, r, *_ in results]
    p = thetas[0].shape[0]
    if any(t.shape[0] != p for t in thetas):
        raise ValueError("yearly estimates disagree on dimension")
    cols = [vec_plus(t) for t in thetas]
    return EdgeTrajectories(
        edges=edge_pairs(p), years=years, matrix=np.column_stack(cols)
    )


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusteringReport:
    k: int
    assignments: np.ndarray
    ch_index: float
    centroids: np.ndarray
    inertia: float


def calinski_harabasz(X: np.ndarray, labels: np.ndarray) -> float:
    """(between-SS / (k-1)) / (within-SS / (n-k)).

    Returns 1.0 when the within-cluster dispersion is zero (degenerate
    duplicates), matching the standard library convention.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    n = X.shape[0]
    ks = np.unique(labels)
    k = ks.size
    if k < 2 or k >= n:
        raise ValueError("need 2 <= k < n clusters for the index")
    grand = X.mean(axis=0)
    between = 0.0
    within = 0.0
    for c in ks:
        block = X[labels == c]
        mu = block.mean(axis=0)
        between += block.shape[0] * float(np.sum((mu - grand) ** 2))
        within += float(np.sum((block - mu) ** 2))
    if within == 0.0:
        return 1.0
    return (between / (k - 1)) / (within / (n - k))


def kmeans_ch(
    traj: EdgeTrajectories,
    k: int,
    restarts: int = 20,
    seed: int = 0,
    max_k_fraction: float = 0.5,
) -> ClusteringReport:
    """Best-of-restarts Lloyd clustering of edge trajectories, CH-scored.

    Cluster labels are canonicalized by ascending centroid norm, so label 0
    is the cluster of (near-)zero edges whenever one exists.
    """
    X = traj.matrix
    m = X.shape[0]
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > max_k_fraction * m:
        raise ValueError(
            f"k={k} too large for {m} edges (guard: k <= {max_k_fraction} * m)"
        )
    if np.allclose(X, X[0]):
        raise ValueError("degenerate trajectories: all rows identical")
    km = KMeans(n_clusters=k, n_init=restarts, random_state=seed, algorithm="lloyd")
    labels = km.fit_predict(X)
    order = np.argsort(np.linalg.norm(km.cluster_centers_, axis=1), kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    labels = relabel[labels]
    centroids = km.cluster_centers_[order]
    return ClusteringReport(
        k=k,
        assignments=labels,
        ch_index=calinski_harabasz(X, labels),
        centroids=centroids,
        inertia=float(km.inertia_),
    )


# ---------------------------------------------------------------------------
# the path protocol
# ---------------------------------------------------------------------------

def log_alpha_grid(lo: float = 1e-4, hi: float = 4.0, num: int = 200) -> np.ndarray:
    return np.geomspace(lo, hi, num)


GLASSO_CALIBRATION = 3.5


def ch_path(
    panel: ReturnsPanel,
    methods,
    alphas,
    k: int,
    cfg: EstimatorConfig,
    q: float = 0.05,
    nu: float = 5.0,
    restarts: int = 20,
    seed: int = 0,
    glasso_factor: float = GLASSO_CALIBRATION,
) -> pd.DataFrame:
    """Calinski-Harabasz index along the regularization path per method.

    gslope/tslope use the per-year t-quantile sequence scaled by alpha; the
    single-parameter glasso comparator runs at the constant level
    glasso_factor * alpha * mean(sequence).  Failed cells are recorded with a
    missing index rather than aborting the path.
    """
    p = panel.p
    m = num_offdiag(p)
    rows = []
    for method in methods:
        if method not in ("gslope", "tslope", "glasso"):
            raise ValueError(f"unknown method {method!r}")
        model = (
            LossModel.student_t(p, nu) if method == "tslope" else LossModel.gaussian(p)
        )
        for alpha in alphas:
            if method == "glasso":
                def lam_builder(n_year, m_, _a=alpha):
                    seq = bh_sequence_t(n_year, m_, q)
                    return constant_sequence(m_, glasso_factor * _a * seq.mean)

                eff_alpha = 1.0
            else:
                lam_builder = lambda n_year, m_: bh_sequence_t(n_year, m_, q)  # noqa: E731
                eff_alpha = alpha
            try:
                results = yearly_estimates(
                    panel, model, eff_alpha, cfg, q=q, lam_builder=lam_builder
                )
                traj = edge_matrix(results)
                report = kmeans_ch(traj, k, restarts=restarts, seed=seed)
                rows.append(
                    {"method": method, "alpha": alpha, "ch_index": report.ch_index}
                )
            except (ValueError, RuntimeError) as exc:
                rows.append(
                    {"method": method, "alpha": alpha, "ch_index": np.nan,
                     "error": str(exc)}
                )
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def cluster_artifacts(
    report: ClusteringReport, traj: EdgeTrajectories
) -> dict[str, pd.DataFrame]:
    """Plot-ready tables: assignment heatmap grid, per-year per-cluster
    boxplot statistics (Tukey whiskers, outliers omitted) and the network
    edge list."""
    p = int((1 + np.sqrt(1 + 8 * traj.m)) / 2)
    heat = np.full((p, p), -1, dtype=int)
    for (i, j), c in zip(traj.edges, report.assignments):
        heat[i, j] = heat[j, i] = int(c)
    heatmap = pd.DataFrame(heat)

    assignments = pd.DataFrame(
        {
            "i": [e[0] for e in traj.edges],
            "j": [e[1] for e in traj.edges],
            "cluster": report.assignments,
            "mean_weight": traj.matrix.mean(axis=1),
        }
    )

    box_rows = []
    for yi, year in enumerate(traj.years):
        for c in range(report.k):
            vals = traj.matrix[report.assignments == c, yi]
            if vals.size == 0:
                continue
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            iqr = q3 - q1
            in_lo = vals[vals >= q1 - 1.5 * iqr]
            in_hi = vals[vals <= q3 + 1.5 * iqr]
            box_rows.append(
                {
                    "year": year,
                    "cluster": c,
                    "q1": q1,
                    "median": med,
                    "q3": q3,
                    "whisker_lo": float(in_lo.min()),
                    "whisker_hi": float(in_hi.max()),
                    "n": int(vals.size),
                }
            )
    boxplots = pd.DataFrame(box_rows)
    return {
        "heatmap": heatmap,
        "assignments": assignments,
        "boxplots": boxplots,
        "network_edges": assignments.rename(columns={"mean_weight": "weight"}),
    }
