"""Least-squares estimation with high-dimensional fixed effects.

The workhorse is :class:`AbsorbingOLS`: fixed-effect dimensions are absorbed
by iterated within-group demeaning (alternating projections), slopes are
solved by QR on the demeaned design, and the absorbed group effects are
recovered afterwards under a drop-first normalization so the grand intercept
is explicit. Slopes, residuals and standard errors match the ordinary
regression with every dummy materialized, which the test-suite verifies
directly.

:class:`DiDEstimator` and :class:`TripleDiffEstimator` wrap the same engine
with the announcement-study designs (Post x Near interactions, optionally
interacted again with the multi-wave indicator).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..errors import (
    DegenerateDesignError,
    InsufficientDataError,
    NumericalError,
)
from ..ledger import EventSample
from ..validation import as_design_matrix, as_float_vector, check_consistent_length
from .design import (
    Design,
    ModelSpec,
    STANDARD_CONTROLS,
    TOKEN_CONTROLS,
    TREATMENT_DISCRETE,
    build_design,
)

log = logging.getLogger(__name__)

DEMEAN_TOL = 1e-10
MAX_SWEEPS = 10_000
PIVOT_RTOL = 1e-10


@dataclass(frozen=True)
class Coefficient:
    estimate: float
    std_error: float
    t_stat: float
    p_value: float
    stars: str


@dataclass
class FitResult:
    """Estimates, diagnostics and recovered fixed effects from one fit."""

    coefficients: dict[str, Coefficient]
    n_obs: int
    adj_r2: float
    residuals: np.ndarray
    fe_estimates: dict[str, dict[int, float]]
    intercept: float | None
    dropped_columns: list[str]
    se_type: str
    fe_dimensions: tuple[str, ...]
    dof_resid: int

    def __getitem__(self, term: str) -> Coefficient:
        return self.coefficients[term]


# ---------------------------------------------------------------------------
# demeaning and fixed-effect recovery
# ---------------------------------------------------------------------------


def _encode_labels(fe_labels: Mapping[str, np.ndarray], n: int):
    """Factorize label arrays into (codes, counts, sorted levels) per dimension."""
    encoded = {}
    for dim, labels in fe_labels.items():
        arr = np.asarray(labels)
        check_consistent_length(n, arr, names=f"fe labels for {dim!r}")
        levels, codes = np.unique(arr, return_inverse=True)
        encoded[dim] = (codes, np.bincount(codes).astype(np.float64), levels)
    return encoded


def _group_demean_inplace(Z: np.ndarray, codes: np.ndarray, counts: np.ndarray) -> None:
    for j in range(Z.shape[1]):
        means = np.bincount(codes, weights=Z[:, j]) / counts
        Z[:, j] -= means[codes]


def _demean(Z: np.ndarray, encoded, tol: float, max_sweeps: int) -> np.ndarray:
    """Iterated within-group demeaning of the columns of Z, all dimensions."""
    Z = Z.copy()
    if not encoded:
        return Z
    dims = list(encoded.values())
    if len(dims) == 1:
        codes, counts, _ = dims[0]
        _group_demean_inplace(Z, codes, counts)
        return Z
    for sweep in range(max_sweeps):
        before = Z.copy()
        for codes, counts, _ in dims:
            _group_demean_inplace(Z, codes, counts)
        change = float(np.max(np.abs(Z - before))) if Z.size else 0.0
        if change < tol:
            return Z
    raise NumericalError(
        f"fixed-effect demeaning did not converge in {max_sweeps} sweeps "
        f"(last max change {change:.3e})"
    )


def absorb_fixed_effects(
    response,
    regressors,
    fe_labels: Mapping[str, np.ndarray],
    tol: float = DEMEAN_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (response, regressors) with every fixed-effect dimension demeaned."""
    y = as_float_vector(response, "response")
    X = as_design_matrix(regressors, "regressors")
    check_consistent_length(len(y), X, names="response/regressors")
    encoded = _encode_labels(fe_labels, len(y))
    Z = _demean(np.column_stack([y, X]), encoded, tol, max_sweeps)
    return Z[:, 0], Z[:, 1:]


def _recover_fixed_effects(
    partial_resid: np.ndarray, encoded, tol: float, max_sweeps: int
) -> tuple[float, dict[str, dict[int, float]]]:
    """Decompose y - X beta into an intercept plus per-dimension level effects.

    Uses the same alternating group means as the demeaning step; each
    dimension's first (lowest) level is normalized to zero and the freed
    constants accumulate into the intercept.
    """
    effects = {dim: np.zeros(len(levels)) for dim, (_, _, levels) in encoded.items()}
    for _ in range(max_sweeps):
        max_change = 0.0
        for dim, (codes, counts, _) in encoded.items():
            others = partial_resid.copy()
            for other_dim, (other_codes, _, _) in encoded.items():
                if other_dim != dim:
                    others -= effects[other_dim][other_codes]
            new = np.bincount(codes, weights=others) / counts
            max_change = max(max_change, float(np.max(np.abs(new - effects[dim]))))
            effects[dim] = new
        if max_change < tol:
            break
    else:
        raise NumericalError(
            f"fixed-effect recovery did not converge in {max_sweeps} sweeps "
            f"(last max change {max_change:.3e})"
        )
    intercept = 0.0
    fe_estimates: dict[str, dict[int, float]] = {}
    for dim, (_, _, levels) in encoded.items():
        base = float(effects[dim][0])
        intercept += base
        fe_estimates[dim] = {
            _as_scalar(level): float(val - base)
            for level, val in zip(levels, effects[dim])
        }
    return intercept, fe_estimates


def _as_scalar(level):
    return level.item() if hasattr(level, "item") else level


# ---------------------------------------------------------------------------
# column selection
# ---------------------------------------------------------------------------


def _select_columns(X: np.ndarray, rtol: float) -> tuple[list[int], list[int]]:
    """Greedy left-to-right retention of linearly independent columns.

    A column is dropped when its residual norm after projecting on the
    already-retained basis falls below ``rtol`` times the leading pivot, so
    later-listed columns are the first to go under exact collinearity.
    """
    n, k = X.shape
    scale = float(np.max(np.abs(X))) if X.size else 0.0
    retained: list[int] = []
    dropped: list[int] = []
    basis: list[np.ndarray] = []
    leading = None
    for j in range(k):
        v = X[:, j].astype(np.float64, copy=True)
        for q in basis:
            v -= (q @ X[:, j]) * q
        # second orthogonalization pass for numerical safety
        for q in basis:
            v -= (q @ v) * q
        norm = float(np.linalg.norm(v))
        threshold = rtol * leading if leading is not None else rtol * max(scale, 1.0) * np.sqrt(n)
        if norm <= threshold:
            dropped.append(j)
            continue
        if leading is None:
            leading = norm
        retained.append(j)
        basis.append(v / norm)
    return retained, dropped


# ---------------------------------------------------------------------------
# significance helpers
# ---------------------------------------------------------------------------


def _p_value(t_stat: float, dof: int, n_obs: int) -> float:
    if np.isnan(t_stat):
        return float("nan")
    if n_obs > 100:
        return float(2.0 * stats.norm.sf(abs(t_stat)))
    return float(2.0 * stats.t.sf(abs(t_stat), max(dof, 1)))


def _stars(p_value: float) -> str:
    if np.isnan(p_value):
        return ""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.1:
        return "*"
    return ""


# ---------------------------------------------------------------------------
# the absorbed-OLS engine
# ---------------------------------------------------------------------------


class AbsorbingOLS(BaseEstimator):
    """Least squares with fixed-effect dimensions absorbed by demeaning.

    Parameters
    ----------
    se_type : {"classical", "hc1"}
        Classical homoskedastic standard errors, or the HC1 sandwich scaled
        by n / (n - k_total).
    demean_tol, max_sweeps : float, int
        Convergence control for the alternating-projection demeaning.
    pivot_rtol : float
        Relative pivot threshold below which a column counts as collinear.

    Degrees of freedom charge the slopes plus every absorbed level, minus
    one level per dimension after the first (their grand means are nested),
    matching the regression with explicit dummy columns.
    """

    def __init__(
        self,
        se_type: str = "classical",
        demean_tol: float = DEMEAN_TOL,
        max_sweeps: int = MAX_SWEEPS,
        pivot_rtol: float = PIVOT_RTOL,
    ):
        self.se_type = se_type
        self.demean_tol = demean_tol
        self.max_sweeps = max_sweeps
        self.pivot_rtol = pivot_rtol

    def fit(self, X, y, fe_labels: Mapping[str, np.ndarray] | None = None,
            columns: Sequence[str] | None = None) -> "AbsorbingOLS":
        """Fit on regressors *X* and response *y*.

        ``fe_labels`` maps each absorbed dimension name to a per-row label
        array; ``columns`` names the regressors for reporting.
        """
        if self.se_type not in ("classical", "hc1"):
            raise DegenerateDesignError(f"unknown se_type {self.se_type!r}")
        X = as_design_matrix(X, "X")
        y = as_float_vector(y, "y")
        check_consistent_length(len(y), X, names="X/y")
        n, k = X.shape
        names = list(columns) if columns is not None else [f"x{j}" for j in range(k)]
        if len(names) != k:
            raise DegenerateDesignError(f"{k} columns but {len(names)} names")

        fe_labels = dict(fe_labels or {})
        encoded = _encode_labels(fe_labels, n)
        n_dims = len(encoded)
        n_levels = sum(len(levels) for _, _, levels in encoded.values())
        fe_params = (n_levels - n_dims + 1) if n_dims else 0

        tss = float(np.sum((y - y.mean()) ** 2))

        Z = _demean(np.column_stack([y, X]), encoded, self.demean_tol, self.max_sweeps)
        y_t, X_t = Z[:, 0], Z[:, 1:]

        retained, dropped_idx = _select_columns(X_t, self.pivot_rtol)
        dropped = [names[j] for j in dropped_idx]
        if dropped:
            log.info("dropping collinear columns: %s", dropped)

        k_ret = len(retained)
        dof = n - k_ret - fe_params
        if dof <= 0:
            raise InsufficientDataError(
                f"{n} observations cannot support {k_ret} slopes plus "
                f"{fe_params} absorbed parameters"
            )

        if k_ret:
            Q, R = np.linalg.qr(X_t[:, retained])
            beta = np.linalg.solve(R, Q.T @ y_t)
            resid = y_t - X_t[:, retained] @ beta
        else:
            beta = np.empty(0)
            resid = y_t.copy()

        rss = float(resid @ resid)
        sigma2 = rss / dof

        if k_ret:
            r_inv = np.linalg.solve(R, np.eye(k_ret))
            xtx_inv = r_inv @ r_inv.T
            if self.se_type == "hc1":
                Xr = X_t[:, retained]
                meat = (Xr * (resid ** 2)[:, None]).T @ Xr
                cov = xtx_inv @ meat @ xtx_inv * (n / dof)
            else:
                cov = sigma2 * xtx_inv
            se = np.sqrt(np.maximum(np.diag(cov), 0.0))
        else:
            se = np.empty(0)

        coefficients: dict[str, Coefficient] = {}
        for pos, j in enumerate(retained):
            est = float(beta[pos])
            err = float(se[pos])
            if err > 0:
                t = est / err
            else:
                t = 0.0 if est == 0 else float(np.sign(est)) * float("inf")
            p = _p_value(t, dof, n)
            coefficients[names[j]] = Coefficient(est, err, t, p, _stars(p))

        if encoded:
            partial = y - (X[:, retained] @ beta if k_ret else 0.0)
            intercept, fe_estimates = _recover_fixed_effects(
                partial, encoded, self.demean_tol, self.max_sweeps
            )
        else:
            intercept, fe_estimates = None, {}

        adj_r2 = float("nan")
        if n > 1 and tss > 0:
            adj_r2 = 1.0 - (rss / dof) / (tss / (n - 1))
        elif tss == 0:
            adj_r2 = 1.0

        self.result_ = FitResult(
            coefficients=coefficients,
            n_obs=n,
            adj_r2=adj_r2,
            residuals=resid,
            fe_estimates=fe_estimates,
            intercept=intercept,
            dropped_columns=dropped,
            se_type=self.se_type,
            fe_dimensions=tuple(fe_labels),
            dof_resid=dof,
        )
        self.coef_ = beta
        self.columns_ = [names[j] for j in retained]
        self._retained_idx = retained
        return self

    def predict(self, X, fe_labels: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        """Fitted values for new rows; absorbed effects require their labels."""
        if not hasattr(self, "result_"):
            raise NotFittedError("AbsorbingOLS instance is not fitted yet")
        X = as_design_matrix(X, "X")
        yhat = X[:, self._retained_idx] @ self.coef_ if len(self.coef_) else np.zeros(len(X))
        if self.result_.intercept is not None:
            yhat = yhat + self.result_.intercept
        for dim, labels in (fe_labels or {}).items():
            table = self.result_.fe_estimates[dim]
            yhat = yhat + np.array([table[_as_scalar(v)] for v in np.asarray(labels)])
        return yhat


def ols_fit(
    response,
    regressors,
    columns: Sequence[str] | None = None,
    fe_labels: Mapping[str, np.ndarray] | None = None,
    se_type: str = "classical",
) -> FitResult:
    """One-shot absorbed least squares; see :class:`AbsorbingOLS`."""
    est = AbsorbingOLS(se_type=se_type)
    est.fit(regressors, response, fe_labels=fe_labels, columns=columns)
    return est.result_


# ---------------------------------------------------------------------------
# announcement-study estimators
# ---------------------------------------------------------------------------


def _require_cells(samples: Sequence[EventSample], spec: ModelSpec) -> None:
    if spec.treatment == TREATMENT_DISCRETE:
        for near_v, post_v in ((False, False), (False, True), (True, False), (True, True)):
            if not any(s.near == near_v and s.post == post_v for s in samples):
                cell = f"{'near' if near_v else 'far'}/{'post' if post_v else 'pre'}"
                raise DegenerateDesignError(f"empty treatment-period cell: {cell}")
    elif spec.treatment is not None:
        posts = {s.post for s in samples}
        if len(posts) < 2:
            raise DegenerateDesignError("only one announcement period represented")
    if spec.include_multi_interactions:
        if len({s.multi for s in samples}) < 2:
            raise DegenerateDesignError("multi indicator is constant across samples")


class DiDEstimator(BaseEstimator):
    """Hedonic difference-in-differences around supply announcements.

    Regresses log price on Post, the treatment (Near dummy or log distance),
    their interaction and the chosen controls, absorbing the requested
    fixed-effect dimensions. The coefficient of interest is the Post x
    treatment interaction, available as ``effect_`` after fitting.
    """

    def __init__(
        self,
        treatment: str = TREATMENT_DISCRETE,
        include_multi_interactions: bool = False,
        controls: tuple[str, ...] = ("log_lot_size", "premium") + TOKEN_CONTROLS,
        fe_dimensions: tuple[str, ...] = ("day", "mint_wave"),
        se_type: str = "classical",
    ):
        self.treatment = treatment
        self.include_multi_interactions = include_multi_interactions
        self.controls = controls
        self.fe_dimensions = fe_dimensions
        self.se_type = se_type

    def _spec(self) -> ModelSpec:
        return ModelSpec(
            treatment=self.treatment,
            include_multi_interactions=self.include_multi_interactions,
            controls=tuple(self.controls),
            fe_dimensions=tuple(self.fe_dimensions),
            se_type=self.se_type,
        )

    def fit(self, samples: Sequence[EventSample], y=None) -> "DiDEstimator":
        spec = self._spec()
        samples = list(samples)
        _require_cells(samples, spec)
        design = build_design(samples, spec)
        engine = AbsorbingOLS(se_type=spec.se_type)
        engine.fit(design.X, design.y, fe_labels=design.fe_labels, columns=design.columns)
        self.result_ = engine.result_
        treat_col = spec.treatment_column
        self.effect_column_ = (
            f"post_x_{treat_col}_x_multi" if spec.include_multi_interactions
            else f"post_x_{treat_col}"
        )
        if self.effect_column_ not in self.result_.coefficients:
            raise DegenerateDesignError(
                f"coefficient of interest {self.effect_column_!r} was dropped "
                f"as collinear"
            )
        self.effect_ = self.result_.coefficients[self.effect_column_]
        return self


class TripleDiffEstimator(DiDEstimator):
    """DiD further interacted with the multi-wave announcement indicator."""

    def __init__(
        self,
        treatment: str = TREATMENT_DISCRETE,
        controls: tuple[str, ...] = ("log_lot_size", "premium") + TOKEN_CONTROLS,
        fe_dimensions: tuple[str, ...] = ("day", "mint_wave"),
        se_type: str = "classical",
    ):
        super().__init__(
            treatment=treatment,
            include_multi_interactions=True,
            controls=controls,
            fe_dimensions=fe_dimensions,
            se_type=se_type,
        )


def estimate_did(samples: Sequence[EventSample], spec: ModelSpec) -> FitResult:
    """Fit the DiD regression described by *spec* and return its result."""
    est = DiDEstimator(
        treatment=spec.treatment,
        include_multi_interactions=spec.include_multi_interactions,
        controls=spec.controls,
        fe_dimensions=spec.fe_dimensions,
        se_type=spec.se_type,
    )
    return est.fit(samples).result_


def estimate_triple_diff(samples: Sequence[EventSample], spec: ModelSpec) -> FitResult:
    """Fit the triple-differences regression (spec forced to multi interactions)."""
    if not spec.include_multi_interactions:
        spec = ModelSpec(
            dependent=spec.dependent,
            treatment=spec.treatment,
            include_multi_interactions=True,
            controls=spec.controls,
            fe_dimensions=spec.fe_dimensions,
            se_type=spec.se_type,
        )
    return estimate_did(samples, spec)
