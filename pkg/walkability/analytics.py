import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, special, stats
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.preprocessing import MinMaxScaler, StandardScaler

from .config import BEHAVIOR_FEATURES, MODEL_PREDICTORS
from .model import AnalysisError

logger = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"
ENVIRONMENT_FEATURES = [
    "segment_slope",
    "avg_effective_width",
    "irregularity_index",
    "unevenness_index",
    "avg_ped_density",
    "avg_ped_speed",
]


def stars(p, dot=False):
    """Significance marker; ``dot`` adds ``.`` for p < 0.1."""
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if dot and p < 0.1:
        return "."
    return ""


def _none_if_nan(value):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


@dataclass(eq=False)
class FeatureMatrix:
    """Feature rows (one per traversal) with named columns; NaN marks missing cells."""

    frame: pd.DataFrame

    def __post_init__(self):
        dup = self.frame.columns[self.frame.columns.duplicated()]
        if len(dup):
            raise AnalysisError(f"Duplicate feature columns: {list(dup)}")

    @classmethod
    def from_csv(cls, path, kind="all"):
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise AnalysisError(f"Cannot read feature table {path}: {e}") from e
        return cls(frame).filter_kind(kind)

    def filter_kind(self, kind):
        if kind == "all" or "segment_kind" not in self.frame.columns:
            return self
        return FeatureMatrix(self.frame[self.frame["segment_kind"] == kind].reset_index(drop=True))

    def __len__(self):
        return len(self.frame)

    @property
    def columns(self):
        return list(self.frame.columns)

    @property
    def mask(self):
        return self.frame.isna()

    def require(self, columns):
        missing = [c for c in columns if c not in self.frame.columns]
        if missing:
            raise AnalysisError(f"Feature table lacks columns {missing}")

    def numeric(self, columns=None):
        columns = list(columns) if columns is not None else [
            c for c in self.frame.columns if pd.api.types.is_numeric_dtype(self.frame[c])
        ]
        self.require(columns)
        return self.frame[columns].apply(pd.to_numeric, errors="coerce").astype(float)

    def complete(self, columns):
        return self.numeric(columns).dropna()


# --- correlation -----------------------------------------------------------


def pearson_matrix(m: FeatureMatrix, columns: Optional[Sequence[str]] = None, min_periods=3) -> pd.DataFrame:
    """Pairwise-complete Pearson correlation; undefined entries are NaN."""
    data = m.numeric(columns)
    r = data.corr(method="pearson", min_periods=min_periods)
    for col in r.columns:
        values = data[col].dropna()
        defined = len(values) >= min_periods and values.nunique() > 1
        r.loc[col, col] = 1.0 if defined else np.nan
    return r


def correlation_report(r: pd.DataFrame, n_rows, config=None):
    names = list(r.columns)
    return {
        "features": names,
        "values": [[_none_if_nan(r.iloc[i, j]) for j in range(len(names))] for i in range(len(names))],
        "n_rows": int(n_rows),
        "config": config or {},
    }


# --- outliers and tests ----------------------------------------------------


def iqr_filter(values) -> np.ndarray:
    """Mask of values inside ``[Q1 - 1.5 IQR, Q3 + 1.5 IQR]``; missing values are not retained."""
    x = np.asarray(values, dtype=float)
    present = np.isfinite(x)
    if present.sum() < 4:
        logger.warning("IQR filter needs at least 4 values, got %d; keeping all", int(present.sum()))
        return present
    q1, q3 = np.percentile(x[present], [25, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return present & (x >= lo) & (x <= hi)


class TTestResult(NamedTuple):
    t: Optional[float]
    dof: Optional[float]
    p: Optional[float]


def welch_ttest(a, b, equal_var=False) -> TTestResult:
    """Two-sided independent-samples t-test (Welch by default, Student when ``equal_var``).

    The two-sided p-value is the regularized incomplete beta
    ``I_{dof/(dof+t^2)}(dof/2, 1/2)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = a[np.isfinite(a)], b[np.isfinite(b)]
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        logger.debug("t-test needs two values per sample, got %d and %d", na, nb)
        return TTestResult(None, None, None)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        return TTestResult(None, None, None)
    diff = a.mean() - b.mean()
    if equal_var:
        dof = na + nb - 2.0
        pooled = ((na - 1) * va + (nb - 1) * vb) / dof
        se2 = pooled * (1.0 / na + 1.0 / nb)
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        dof = se2**2 / (qa**2 / (na - 1) + qb**2 / (nb - 1))
    t = diff / np.sqrt(se2)
    p = float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return TTestResult(float(t), float(dof), min(max(p, 0.0), 1.0))


# --- clustering ------------------------------------------------------------


@dataclass
class ClusterResult:
    assignments: pd.Series
    features: List[str]
    sizes: Dict[int, int]
    means: pd.DataFrame
    sds: pd.DataFrame
    pvalues: pd.DataFrame
    merge_heights: List[float]
    n_input: int
    n_iqr_removed: int
    config: dict = field(default_factory=dict)

    @property
    def labels(self):
        return sorted(self.sizes)

    def to_report(self):
        clusters = []
        for label in self.labels:
            feats = {}
            for col in self.means.columns:
                p = self.pvalues.loc[label, col] if label in self.pvalues.index else np.nan
                feats[col] = {
                    "mean": _none_if_nan(self.means.loc[label, col]),
                    "sd": _none_if_nan(self.sds.loc[label, col]),
                    "p": _none_if_nan(p),
                    "stars": stars(p),
                }
            clusters.append({"label": int(label), "size": int(self.sizes[label]), "features": feats})
        return {
            "clusters": clusters,
            "behavior_features": list(self.features),
            "reference_cluster": 0,
            "n_input": self.n_input,
            "n_iqr_removed": self.n_iqr_removed,
            "n_retained": int(sum(self.sizes.values())),
            "merge_heights": list(self.merge_heights),
            "config": self.config,
        }


class BehaviorClustering:
    """Hierarchical agglomerative clustering of pedestrian behaviour.

    Rows are pruned with the IQR rule on the turn count, z-scored, merged
    with the chosen linkage and cut into ``n_clusters``. Cluster 0 has the
    lowest mean speed variation; the others follow by ascending mean turns.

    .. code-block:: python

        >>> hc = BehaviorClustering(n_clusters=3)
        >>> hc.detect(m)
        >>> result = hc.summarize(m)
    """

    def __init__(self, n_clusters=3, method="ward", features=None, iqr_column="ped_turns", equal_var=False):
        self.n_clusters = n_clusters
        self.method = method
        self.features = list(features or BEHAVIOR_FEATURES)
        self.iqr_column = iqr_column
        self.equal_var = equal_var

    def detect(self, m: FeatureMatrix):
        data = m.complete(self.features)
        self.n_input_ = len(data)
        if self.iqr_column in self.features:
            keep = iqr_filter(data[self.iqr_column].to_numpy())
            self.n_iqr_removed_ = int((~keep).sum())
            data = data[keep]
        else:
            self.n_iqr_removed_ = 0
        if len(data) < max(self.n_clusters, 2):
            raise AnalysisError(
                f"Clustering needs at least {max(self.n_clusters, 2)} complete rows, got {len(data)}"
            )

        z = StandardScaler().fit_transform(data.to_numpy())
        Z = linkage(z, method=self.method, metric="euclidean")
        raw = fcluster(Z, t=self.n_clusters, criterion="maxclust")

        means = data.groupby(raw).mean()
        reference = means[self.features[0]].sort_values(kind="mergesort").index[0]
        rest = means.drop(index=reference)
        if len(self.features) > 1:
            rest = rest.sort_values(self.features[1], kind="mergesort")
        order = [reference] + list(rest.index)
        relabel = {old: new for new, old in enumerate(order)}
        self.labels_ = pd.Series([relabel[c] for c in raw], index=data.index, name="cluster")
        self.linkage_ = Z
        self.data_ = data
        return self

    def get_stats(self):
        return {
            "n_clusters": self.n_clusters,
            "method": self.method,
            "n_input": getattr(self, "n_input_", 0),
            "n_retained": len(getattr(self, "labels_", [])),
        }

    def summarize(self, m: FeatureMatrix, extra_features=None) -> ClusterResult:
        if not hasattr(self, "labels_"):
            self.detect(m)
        extra = [c for c in (extra_features if extra_features is not None else ENVIRONMENT_FEATURES)
                 if c in m.frame.columns and c not in self.features]
        cols = self.features + extra
        rows = m.numeric(cols).loc[self.labels_.index]
        grouped = rows.groupby(self.labels_)
        means = grouped.mean()
        sds = grouped.std(ddof=1)

        pvalues = pd.DataFrame(np.nan, index=means.index, columns=cols)
        reference = rows[self.labels_ == 0]
        for label in means.index:
            if label == 0:
                continue
            members = rows[self.labels_ == label]
            for col in cols:
                res = welch_ttest(members[col], reference[col], equal_var=self.equal_var)
                pvalues.loc[label, col] = np.nan if res.p is None else res.p

        return ClusterResult(
            assignments=self.labels_,
            features=self.features,
            sizes={int(k): int(v) for k, v in self.labels_.value_counts().sort_index().items()},
            means=means,
            sds=sds,
            pvalues=pvalues,
            merge_heights=[float(h) for h in self.linkage_[:, 2]],
            n_input=self.n_input_,
            n_iqr_removed=self.n_iqr_removed_,
            config={"linkage": self.method, "n_clusters": self.n_clusters, "equal_var": self.equal_var},
        )


def hcluster(m: FeatureMatrix, k=3, method="ward", equal_var=False) -> ClusterResult:
    return BehaviorClustering(n_clusters=k, method=method, equal_var=equal_var).detect(m).summarize(m)


# --- regression ------------------------------------------------------------


@dataclass
class RegressionResult:
    response: str
    predictors: List[str]
    coefficients: pd.DataFrame
    r2: Optional[float]
    adj_r2: Optional[float]
    f_stat: Optional[float]
    f_pvalue: Optional[float]
    n_obs: int
    dof_resid: int
    fitted: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)
    config: dict = field(default_factory=dict)

    @property
    def intercept(self):
        return float(self.coefficients.loc[INTERCEPT, "estimate"])

    def pvalue(self, name):
        return float(self.coefficients.loc[name, "p"])

    def summary_dict(self):
        return {
            "r2": _none_if_nan(self.r2),
            "adj_r2": _none_if_nan(self.adj_r2),
            "f_stat": _none_if_nan(self.f_stat),
            "f_pvalue": _none_if_nan(self.f_pvalue),
            "n_obs": self.n_obs,
        }


def _prepare_design(m, response, predictors, density_epsilon):
    cols = [response] + list(predictors)
    m.require(cols)
    data = m.complete(cols)
    y = data[response].to_numpy(dtype=float)
    X = data[list(predictors)].copy()
    if "avg_ped_density" in X.columns:
        X["avg_ped_density"] = np.log(X["avg_ped_density"].clip(lower=0) + density_epsilon)
    if len(predictors):
        scaler = MinMaxScaler()
        Xs = scaler.fit_transform(X.to_numpy(dtype=float))
        ranges = {c: [float(a), float(b)] for c, a, b in zip(predictors, scaler.data_min_, scaler.data_max_)}
    else:
        Xs = np.empty((len(data), 0))
        ranges = {}
    design = np.column_stack([np.ones(len(data)), Xs])
    return design, y, ranges


def _collinear_message(design, names, rank, piv):
    independent = piv[:rank]
    parts = []
    for j in piv[rank:]:
        coef, *_ = np.linalg.lstsq(design[:, independent], design[:, j], rcond=None)
        partners = [names[i] for i, c in zip(independent, coef) if abs(c) > 1e-8 and names[i] != INTERCEPT]
        if partners:
            parts.append(f"'{names[j]}' is collinear with {', '.join(repr(p) for p in partners)}")
        else:
            parts.append(f"'{names[j]}' is constant over the complete rows")
    return "Rank-deficient design: " + "; ".join(parts)


def ols(
    m: FeatureMatrix,
    response="avg_ped_speed",
    predictors: Optional[Sequence[str]] = None,
    density_epsilon=1e-4,
) -> RegressionResult:
    """Ordinary least squares on [0, 1]-scaled predictors with an intercept.

    Rows missing the response or any predictor are dropped; average density
    is log-transformed before scaling. Solved by pivoted QR.
    """
    predictors = list(MODEL_PREDICTORS if predictors is None else predictors)
    X, y, ranges = _prepare_design(m, response, predictors, density_epsilon)
    names = [INTERCEPT] + predictors
    n, k = X.shape
    if n <= k:
        raise AnalysisError(f"Regression needs more complete rows ({n}) than parameters ({k})")

    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < k:
        raise AnalysisError(_collinear_message(X, names, rank, piv))

    beta = np.empty(k)
    beta[piv] = linalg.solve_triangular(R, Q.T @ y)
    fitted = X @ beta
    resid = y - fitted
    dof = n - k
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    sigma2 = ss_res / dof

    r_inv = linalg.solve_triangular(R, np.eye(k))
    cov = np.empty((k, k))
    cov[np.ix_(piv, piv)] = r_inv @ r_inv.T
    se = np.sqrt(np.maximum(np.diag(cov) * sigma2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.inf)
    p = np.where(se > 0, 2.0 * stats.t.sf(np.abs(t), dof), 0.0)

    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
        adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / dof
    else:
        r2 = adj_r2 = None
    if k > 1 and ss_tot > 0:
        ss_reg = ss_tot - ss_res
        f_stat = np.inf if ss_res == 0 else (ss_reg / (k - 1)) / (ss_res / dof)
        f_pvalue = 0.0 if not np.isfinite(f_stat) else float(stats.f.sf(f_stat, k - 1, dof))
    else:
        f_stat = f_pvalue = None

    coefficients = pd.DataFrame({"estimate": beta, "std_error": se, "t": t, "p": p}, index=names)
    return RegressionResult(
        response=response,
        predictors=predictors,
        coefficients=coefficients,
        r2=r2,
        adj_r2=adj_r2,
        f_stat=None if f_stat is None else float(f_stat),
        f_pvalue=f_pvalue,
        n_obs=n,
        dof_resid=dof,
        fitted=fitted,
        residuals=resid,
        design=X,
        config={"density_epsilon": density_epsilon, "predictor_ranges": ranges},
    )


def reduce_model(full: RegressionResult, m: FeatureMatrix, threshold=0.1) -> RegressionResult:
    """Refit once without every predictor whose full-model p-value exceeds ``threshold``."""
    keep = [name for name in full.predictors if full.pvalue(name) <= threshold]
    if not keep:
        logger.warning("Every predictor exceeds p=%.2f; reduced model is intercept-only", threshold)
    if keep == full.predictors:
        return full
    return ols(m, full.response, keep, full.config.get("density_epsilon", 1e-4))


def regression_report(full: RegressionResult, reduced: Optional[RegressionResult] = None, config=None):
    def entry(res, name):
        if res is None or name not in res.coefficients.index:
            return None
        row = res.coefficients.loc[name]
        return {
            "estimate": _none_if_nan(row["estimate"]),
            "std_error": _none_if_nan(row["std_error"]),
            "p": _none_if_nan(row["p"]),
            "stars": stars(row["p"], dot=True),
        }

    variables = [
        {"name": name, "full": entry(full, name), "reduced": entry(reduced, name)}
        for name in [INTERCEPT] + full.predictors
    ]
    return {
        "response": full.response,
        "variables": variables,
        "full": full.summary_dict(),
        "reduced": reduced.summary_dict() if reduced is not None else None,
        "config": {**full.config, **(config or {})},
    }


def get_analysis_function(mode):
    """Return the analysis entry point for a CLI mode name."""
    mode_map = {
        "correlate": pearson_matrix,
        "cluster": hcluster,
        "regress": ols,
    }
    if mode not in mode_map:
        raise AnalysisError(f"Unknown analysis mode: {mode}")
    return mode_map[mode]


def write_assignments(result: ClusterResult, m: FeatureMatrix, path):
    frame = m.frame.loc[result.assignments.index]
    keys = [c for c in ("trip_id", "segment_id") if c in frame.columns]
    out = frame[keys].copy()
    out["cluster"] = result.assignments.to_numpy()
    out.to_csv(Path(path), index=False)
    return path
