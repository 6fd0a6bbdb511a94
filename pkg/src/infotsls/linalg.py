"""Least squares via pivoted Householder QR, and TSLS with sandwich standard errors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _backend
from .errors import DimensionError, PreconditionError, RankDeficiencyError, ZeroFirstStageError

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DimensionError("design matrix must be 2-D")
        n, k = v.shape
        if k < 1 or n < k:
            raise DimensionError(f"need n >= k >= 1, got n={n}, k={k}")
        if not np.all(np.isfinite(v)):
            bad = np.flatnonzero(~np.all(np.isfinite(v), axis=1))
            raise PreconditionError(f"non-finite entries in rows {bad[:10].tolist()}")
        labels = tuple(self.labels) if self.labels else tuple(f"x{j}" for j in range(k))
        if len(labels) != k:
            raise DimensionError(f"{len(labels)} labels for {k} columns")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def stack(cls, *blocks: "DesignMatrix") -> "DesignMatrix":
        return cls(np.hstack([b.values for b in blocks]), sum((b.labels for b in blocks), ()))


@dataclass
class QR:
    qr: np.ndarray
    tau: np.ndarray
    perm: np.ndarray
    rank: int

    @property
    def R(self) -> np.ndarray:
        k = self.qr.shape[1]
        return np.triu(self.qr[:k, :k])


def factorize(X: np.ndarray, tol: float = RANK_TOL) -> QR:
    qr, tau, perm = _backend.qr_pivoted(X)
    k = qr.shape[1]
    diag = np.abs(np.diag(qr[:k, :k]))
    scale = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > tol * scale)) if scale > 0 else 0
    return QR(qr, tau, perm, rank)


@dataclass
class OLSResult:
    coef: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    labels: tuple
    factor: QR = field(repr=False)

    def bread(self) -> np.ndarray:
        """``(X'X)^{-1}`` in the original column order."""
        return _bread(self.factor)


def _bread(f: QR) -> np.ndarray:
    k = f.qr.shape[1]
    rinv = solve_triangular(f.R, np.eye(k))
    inv_perm = np.empty(k, dtype=np.int64)
    inv_perm[f.perm] = np.arange(k)
    b = rinv @ rinv.T
    return b[np.ix_(inv_perm, inv_perm)]


def _solve(f: QR, y: np.ndarray) -> np.ndarray:
    k = f.qr.shape[1]
    qty = _backend.apply_qt(f.qr, f.tau, y)
    z = solve_triangular(f.R, qty[:k])
    coef = np.empty_like(z)
    coef[f.perm] = z
    return coef


def ols(X: DesignMatrix | np.ndarray, y, tol: float = RANK_TOL) -> OLSResult:
    """Least squares of ``y`` on the columns of ``X``.

    Raises :class:`RankDeficiencyError` naming the columns the pivoted QR
    would drop when the numerical rank is below the column count.
    """
    if not isinstance(X, DesignMatrix):
        X = DesignMatrix(X)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    if y.shape[0] != n:
        raise DimensionError(f"y has {y.shape[0]} rows, X has {n}")
    if not np.all(np.isfinite(y)):
        raise PreconditionError("non-finite response values")
    f = factorize(X.values, tol)
    if f.rank < k:
        dropped = [X.labels[j] for j in f.perm[f.rank:]]
        raise RankDeficiencyError(
            f"design has numerical rank {f.rank} < {k}; dependent columns: {dropped}", dropped
        )
    coef = _solve(f, y)
    fitted = X.values @ coef
    return OLSResult(coef, y - fitted, fitted, X.labels, f)


def robust_vcov(X: np.ndarray, resid: np.ndarray, bread: np.ndarray, kind: str = "HC1") -> np.ndarray:
    """Heteroskedasticity-robust sandwich ``B (sum u_i^2 x_i x_i') B``."""
    n, k = X.shape
    xu = X * resid[:, None]
    meat = xu.T @ xu
    v = bread @ meat @ bread
    if kind == "HC1":
        v *= n / (n - k)
    elif kind != "HC0":
        raise PreconditionError(f"unknown robust covariance {kind!r}")
    return v


@dataclass
class TSLSFit:
    """Two-stage least squares fit with a single endogenous regressor."""

    gamma: float
    gamma_se: float
    pi: np.ndarray
    pi_se: np.ndarray
    exog_coef: np.ndarray
    exog_se: np.ndarray
    exog_labels: tuple
    instrument_labels: tuple
    n: int
    first_stage_f: float
    vcov: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    fitted_endog: np.ndarray = field(repr=False)
    partialled_instrument: np.ndarray = field(repr=False)
    first_stage_coef: np.ndarray = field(repr=False)
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma": float(self.gamma),
            "gamma_se": float(self.gamma_se),
            "pi": {l: float(v) for l, v in zip(self.instrument_labels, self.pi)},
            "pi_se": {l: float(v) for l, v in zip(self.instrument_labels, self.pi_se)},
            "exog": {l: float(v) for l, v in zip(self.exog_labels, self.exog_coef)},
            "exog_se": {l: float(v) for l, v in zip(self.exog_labels, self.exog_se)},
            "n": int(self.n),
            "first_stage_f": float(self.first_stage_f),
            "spec": self.spec,
        }


def tsls(y, endog, exog: DesignMatrix, instruments: DesignMatrix, *, se: str = "HC1",
         tol: float = RANK_TOL) -> TSLSFit:
    """TSLS of ``y`` on ``[exog, endog]`` instrumenting ``endog`` with ``instruments``.

    Standard errors are robust sandwich errors built from second-stage
    residuals that use the actual (not fitted) endogenous regressor.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(endog, dtype=np.float64)
    n = y.shape[0]
    if x.shape[0] != n or exog.shape[0] != n or instruments.shape[0] != n:
        raise DimensionError("y, endog, exog and instruments must have the same rows")
    kx, kz = exog.shape[1], instruments.shape[1]
    if kz < 1:
        raise PreconditionError("at least one instrument is required")

    fx = factorize(exog.values, tol)
    if fx.rank < kx:
        dropped = [exog.labels[j] for j in fx.perm[fx.rank:]]
        raise RankDeficiencyError(f"exogenous block is rank deficient; dependent columns: {dropped}",
                                  dropped)
    # instruments net of exog: zero means no excluded variation at all
    z_tilde = instruments.values - exog.values @ _solve(fx, instruments.values)
    z_scale = max(np.abs(instruments.values).max(), 1.0)
    if np.abs(z_tilde).max() <= tol * z_scale * np.sqrt(n):
        raise ZeroFirstStageError("instruments carry no variation beyond the exogenous controls")

    first = ols(DesignMatrix.stack(exog, instruments), x, tol)
    pi = first.coef[kx:]
    fitted = first.fitted
    # fitted endog net of exog; equals z_tilde @ pi
    f_tilde = z_tilde @ pi
    if np.linalg.norm(f_tilde) <= tol * max(np.linalg.norm(fitted), 1.0):
        raise ZeroFirstStageError("fitted endogenous variable is collinear with the exogenous controls")

    X2 = np.column_stack([exog.values, fitted])
    f2 = factorize(X2, tol)
    if f2.rank < kx + 1:
        raise ZeroFirstStageError("second stage is rank deficient: no first-stage signal")
    coef = _solve(f2, y)
    resid = y - np.column_stack([exog.values, x]) @ coef
    vcov = robust_vcov(X2, resid, _bread(f2), se)
    se_all = np.sqrt(np.diag(vcov))

    fs_X = np.hstack([exog.values, instruments.values])
    fs_v = robust_vcov(fs_X, first.residuals, first.bread(), se)
    v_pi = fs_v[kx:, kx:]
    try:
        f_stat = float(pi @ np.linalg.solve(v_pi, pi)) / kz
    except np.linalg.LinAlgError:
        f_stat = float("inf")

    return TSLSFit(
        gamma=float(coef[-1]),
        gamma_se=float(se_all[-1]),
        pi=pi,
        pi_se=np.sqrt(np.diag(v_pi)),
        exog_coef=coef[:-1],
        exog_se=se_all[:-1],
        exog_labels=exog.labels,
        instrument_labels=instruments.labels,
        n=n,
        first_stage_f=f_stat,
        vcov=vcov,
        residuals=resid,
        fitted_endog=fitted,
        partialled_instrument=f_tilde,
        first_stage_coef=first.coef,
    )
