"""Diagnostic regressions and supporting inference.

Two estimators drive every report in the package: the pooled
error-on-revision regression (overreaction diagnostic) and the
forecast-on-lagged-returns panel regression with two-way fixed effects
(extrapolation diagnostic). Covariance options cover classical,
heteroskedasticity-robust, one-way clustered, and two-way clustered
(unit + time - intersection) with a PSD repair for the last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInputError,
    InferenceError,
    PlanError,
    SingularDesignError,
)

MAX_LAG = 11


@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    r_squared: float
    n: int
    residuals: np.ndarray
    se_mode: str

    @property
    def intercept(self) -> float:
        return float(self.coef[self.names.index("intercept")])

    @property
    def slope(self) -> float:
        """First non-intercept coefficient (the b of a bivariate fit)."""
        for i, name in enumerate(self.names):
            if name != "intercept":
                return float(self.coef[i])
        raise ValueError("no slope in this regression")

    @property
    def slope_se(self) -> float:
        for i, name in enumerate(self.names):
            if name != "intercept":
                return float(self.se[i])
        raise ValueError("no slope in this regression")

    @property
    def slope_t(self) -> float:
        for i, name in enumerate(self.names):
            if name != "intercept":
                return float(self.t[i])
        raise ValueError("no slope in this regression")


def _independent_columns(X: np.ndarray) -> list[int]:
    """Greedy maximal set of linearly independent columns, in order."""
    kept: list[int] = []
    for j in range(X.shape[1]):
        cand = X[:, kept + [j]]
        if np.linalg.matrix_rank(cand) == len(kept) + 1:
            kept.append(j)
    return kept

def _solve_ols(X: np.ndarray, y: np.ndarray, names: list[str]):
    """QR solve with an explicit rank check naming the collinear columns."""
    n, k = X.shape
    if n <= k:
        raise SingularDesignError(f"n={n} too small for {k} regressors")
    if np.linalg.matrix_rank(X) < k:
        kept = set(_independent_columns(X))
        bad = [names[j] for j in range(k) if j not in kept]
        raise SingularDesignError(f"collinear columns: {', '.join(bad)}")
    q, r = np.linalg.qr(X)
    coef = np.linalg.solve(r, q.T @ y)
    r_inv = np.linalg.inv(r)
    xtx_inv = r_inv @ r_inv.T
    return coef, xtx_inv


def ols(
    y,
    X,
    intercept: bool = True,
    se_mode: str = "classical",
    names: list[str] | None = None,
) -> RegressionResult:
    """Ordinary least squares with classical or HC1 standard errors."""
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    names = list(names)
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["intercept"] + names
    if se_mode not in ("classical", "hc1"):
        raise ValueError(f"unknown se_mode {se_mode!r}")

    coef, xtx_inv = _solve_ols(X, y, names)
    resid = y - X @ coef
    n, k = X.shape
    ssr = float(resid @ resid)
    if se_mode == "classical":
        vcov = xtx_inv * (ssr / (n - k))
    else:
        meat = (X * resid[:, None] ** 2).T @ X
        vcov = xtx_inv @ meat @ xtx_inv * (n / (n - k))
    se = np.sqrt(np.diag(vcov))

    if intercept:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    r2 = 0.0 if tss == 0 else max(0.0, 1.0 - ssr / tss)

    return RegressionResult(
        names=names,
        coef=coef,
        se=se,
        t=coef / se,
        r_squared=r2,
        n=n,
        residuals=resid,
        se_mode=se_mode,
    )


def error_revision_regression(panel, se_mode: str = "classical") -> RegressionResult:
    """Regress forecast errors on forecast revisions, pooled within one cell.

    A negative slope means upward revisions predict negative errors, the
    overreaction signature.
    """
    if len(panel) == 0:
        raise EmptyInputError("empty forecast panel")
    errors = panel.errors
    revisions = panel.revisions
    if float(np.var(revisions)) == 0.0:
        raise SingularDesignError("collinear columns: revision (zero variance)")
    return ols(errors, revisions, intercept=True, se_mode=se_mode, names=["revision"])


def _codes(labels) -> tuple[np.ndarray, int]:
    _, codes = np.unique(np.asarray(labels), return_inverse=True)
    return codes, int(codes.max()) + 1


def _group_demean(V: np.ndarray, codes: np.ndarray, n_groups: int) -> None:
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    for j in range(V.shape[1]):
        sums = np.bincount(codes, weights=V[:, j], minlength=n_groups)
        V[:, j] -= (sums / counts)[codes]


def within_transform(
    values, units, times, tol: float = 1e-10, max_iter: int = 1000
) -> np.ndarray:
    """Demean by unit and time groups (grand mean absorbed) by alternating
    projections; iterated until the largest cell change is below tol, which
    handles unbalanced panels where no closed form exists. Singleton groups
    are retained and end up contributing zeros.
    """
    V = np.array(values, dtype=float)
    squeeze = V.ndim == 1
    if squeeze:
        V = V[:, None]
    u_codes, n_u = _codes(units)
    t_codes, n_t = _codes(times)
    for _ in range(max_iter):
        before = V.copy()
        _group_demean(V, u_codes, n_u)
        _group_demean(V, t_codes, n_t)
        if np.max(np.abs(V - before)) < tol:
            break
    return V[:, 0] if squeeze else V


@dataclass(frozen=True)
class PanelSpec:
    """What to estimate: which lags enter, which effects are absorbed, and
    how to cluster. Cluster is one of none | unit | time | two-way."""

    lags: tuple[int, ...] = tuple(range(12))
    unit_fe: bool = True
    time_fe: bool = True
    cluster: str = "two-way"
    dependent: str = "forecast"

    def __post_init__(self):
        if any(s < 0 or s > MAX_LAG for s in self.lags):
            raise PlanError(f"lags must lie in 0..{MAX_LAG}, got {self.lags}")
        if self.cluster not in ("none", "unit", "time", "two-way"):
            raise PlanError(f"unknown cluster mode {self.cluster!r}")


@dataclass
class PanelResult:
    lag_names: list[str]
    beta: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    t: np.ndarray
    within_r_squared: float
    n: int
    n_units: int
    n_times: int
    spec: PanelSpec
    intercept: float | None = None

    def by_lag(self) -> dict[str, tuple[float, float]]:
        """name -> (coefficient, t-stat) for report tables."""
        return {
            name: (float(b), float(t))
            for name, b, t in zip(self.lag_names, self.beta, self.t)
        }


def _cluster_meat(X: np.ndarray, resid: np.ndarray, codes: np.ndarray, n_groups: int):
    scores = X * resid[:, None]
    k = X.shape[1]
    sums = np.zeros((n_groups, k))
    for j in range(k):
        sums[:, j] = np.bincount(codes, weights=scores[:, j], minlength=n_groups)
    return sums.T @ sums


def _psd_repair(V: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues to zero; the two-way estimator can be
    indefinite in small samples."""
    V = (V + V.T) / 2.0
    eigval, eigvec = np.linalg.eigh(V)
    if eigval.min() >= 0:
        return V
    eigval = np.clip(eigval, 0.0, None)
    return eigvec @ np.diag(eigval) @ eigvec.T


def cluster_robust_vcov(
    X,
    residuals,
    clusters,
    k_params: int | None = None,
) -> np.ndarray:
    """Cluster-robust sandwich covariance.

    `clusters` is one label array (one-way) or a pair (two-way, combined as
    V_unit + V_time - V_intersection). Each component carries the
    small-sample factor G/(G-1) * (n-1)/(n-k); the two-way result is
    PSD-repaired by eigenvalue clamping.
    """
    X = np.asarray(X, dtype=float)
    resid = np.asarray(residuals, dtype=float).ravel()
    n = X.shape[0]
    k = X.shape[1] if k_params is None else k_params

    if isinstance(clusters, (list, tuple)) and len(clusters) == 2:
        label_sets = [np.asarray(clusters[0]), np.asarray(clusters[1])]
        pair = np.array(
            [f"{a}\x1f{b}" for a, b in zip(label_sets[0], label_sets[1])]
        )
        label_sets.append(pair)
        signs = [1.0, 1.0, -1.0]
    else:
        label_sets = [np.asarray(clusters[0] if isinstance(clusters, (list, tuple)) else clusters)]
        signs = [1.0]

    xtx_inv = np.linalg.inv(X.T @ X)
    V = np.zeros((X.shape[1], X.shape[1]))
    for labels, sign in zip(label_sets, signs):
        codes, n_groups = _codes(labels)
        if n_groups < 2:
            raise InferenceError("need at least 2 clusters per dimension")
        factor = (n_groups / (n_groups - 1)) * ((n - 1) / (n - k))
        meat = _cluster_meat(X, resid, codes, n_groups)
        V = V + sign * factor * (xtx_inv @ meat @ xtx_inv)

    if len(label_sets) > 1:
        V = _psd_repair(V)
    return V


def panel_fe_regression(
    y,
    lag_matrix,
    units,
    times,
    spec: PanelSpec,
    extra=None,
    extra_names: list[str] | None = None,
) -> PanelResult:
    """Forecast-on-lags panel regression with optional two-way fixed effects.

    Every row must already carry all requested lags (incomplete rows are
    dropped upstream). `extra` is a hook for additional control columns.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(lag_matrix, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != len(spec.lags):
        raise SingularDesignError(
            f"lag matrix has {X.shape[1]} columns for {len(spec.lags)} lags"
        )
    names = [f"r_lag{s}" for s in spec.lags]
    if extra is not None:
        extra = np.asarray(extra, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        X = np.column_stack([X, extra])
        names = names + (extra_names or [f"ctrl{j}" for j in range(extra.shape[1])])

    if len(y) == 0:
        raise EmptyInputError("empty panel")
    u_codes, n_u = _codes(units)
    t_codes, n_t = _codes(times)

    if spec.cluster == "unit" and n_u < 2:
        raise InferenceError("need at least 2 unit clusters")
    if spec.cluster == "time" and n_t < 2:
        raise InferenceError("need at least 2 time clusters")
    if spec.cluster == "two-way" and (n_u < 2 or n_t < 2):
        raise InferenceError("need at least 2 clusters in each dimension")

    if spec.unit_fe and spec.time_fe:
        stack = within_transform(np.column_stack([y, X]), units, times)
        y_d, X_d = stack[:, 0], stack[:, 1:]
        absorbed = n_u + n_t - 1
        intercept = None
    elif spec.unit_fe or spec.time_fe:
        codes, n_g = (u_codes, n_u) if spec.unit_fe else (t_codes, n_t)
        stack = np.column_stack([y, X]).astype(float)
        _group_demean(stack, codes, n_g)
        y_d, X_d = stack[:, 0], stack[:, 1:]
        absorbed = n_g
        intercept = None
    else:
        y_d, X_d = y, X
        absorbed = 0
        intercept = 0.0  # replaced after the fit

    n = len(y_d)
    if absorbed > 0:
        fit_X = X_d
        fit_names = names
    else:
        fit_X = np.column_stack([np.ones(n), X_d])
        fit_names = ["intercept"] + names
    coef, xtx_inv = _solve_ols(fit_X, y_d, fit_names)
    resid = y_d - fit_X @ coef
    k_total = fit_X.shape[1] + absorbed

    if spec.cluster == "none":
        sigma2 = float(resid @ resid) / (n - k_total)
        vcov = xtx_inv * sigma2
    else:
        labels = {
            "unit": units,
            "time": times,
            "two-way": (units, times),
        }[spec.cluster]
        vcov = cluster_robust_vcov(fit_X, resid, labels, k_params=k_total)

    ssr = float(resid @ resid)
    if absorbed > 0:
        tss = float(y_d @ y_d)
    else:
        tss = float(np.sum((y_d - y_d.mean()) ** 2))
    within_r2 = 0.0 if tss == 0 else max(0.0, 1.0 - ssr / tss)

    se = np.sqrt(np.diag(vcov))
    if absorbed == 0:
        intercept = float(coef[0])
        coef, se, vcov = coef[1:], se[1:], vcov[1:, 1:]

    return PanelResult(
        lag_names=names,
        beta=coef,
        vcov=vcov,
        se=se,
        t=coef / se,
        within_r_squared=within_r2,
        n=n,
        n_units=n_u,
        n_times=n_t,
        spec=spec,
        intercept=intercept,
    )


def descriptive_stats(values) -> dict:
    """Mean, sample SD, quartiles (linear interpolation), and count."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInputError("no values")
    p25, median, p75 = np.percentile(v, [25, 50, 75])
    return {
        "mean": float(v.mean()),
        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "p25": float(p25),
        "median": float(median),
        "p75": float(p75),
        "n": int(v.size),
    }
