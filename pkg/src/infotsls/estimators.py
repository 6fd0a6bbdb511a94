"""TSLS specifications for passive, active and conditional comparisons.

Estimators only read realized :class:`~infotsls.experiment.Records`; the
counterfactual panel is reserved for diagnostics.
"""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np

from .errors import DataSchemaError, DomainError, PreconditionError, RankDeficiencyError
from .experiment import Records
from .linalg import DesignMatrix, TSLSFit, tsls

INTERACTIONS = ("sign", "gap", "one_gap", "one_prior", "one_signal_prior")
GAP_NORMALIZATIONS = ("none", "percent")


def canonical_interaction(kind: str) -> str:
    k = kind.replace("-", "_").lower()
    if k not in INTERACTIONS:
        raise PreconditionError(f"unknown interaction {kind!r}; expected one of {INTERACTIONS}")
    return k


def perception_gap(records: Records, gap_normalization: str = "none") -> np.ndarray:
    """``S^T - prior feature``, optionally as a fraction of the signal."""
    if records.design != "passive":
        raise PreconditionError("the perception gap needs a passive design")
    s = records.treatment_signal
    if s is None or np.any(np.isnan(s)):
        rows = [] if s is None else np.flatnonzero(np.isnan(s)).tolist()
        raise DataSchemaError("treatment signal missing; it is required on every row, "
                              f"control rows included (rows {rows[:10]})", rows=rows)
    gap = s - records.prior_feature
    if gap_normalization == "none":
        return gap
    if gap_normalization == "percent":
        zero = s == 0
        if zero.any():
            raise DomainError("percent-of-signal gaps need nonzero signals",
                              rows=np.flatnonzero(zero))
        return gap / s
    raise PreconditionError(f"unknown gap normalization {gap_normalization!r}")


def build_interaction(records: Records, kind: str, gap_normalization: str = "none") -> DesignMatrix:
    """Interaction columns ``I_i`` for a passive specification.

    ``sign`` uses ``sign(0) = 0`` so zero-gap agents drop out of identification.
    """
    kind = canonical_interaction(kind)
    gap = perception_gap(records, gap_normalization)
    one = np.ones(records.n)
    if kind == "sign":
        return DesignMatrix(np.sign(gap)[:, None], ("I_sign",))
    if kind == "gap":
        return DesignMatrix(gap[:, None], ("I_gap",))
    if kind == "one_gap":
        return DesignMatrix(np.column_stack([one, gap]), ("I_one", "I_gap"))
    if kind == "one_prior":
        return DesignMatrix(np.column_stack([one, records.prior_feature]), ("I_one", "I_prior"))
    s = records.treatment_signal
    if np.ptp(s[records.treated] if records.treated.any() else s) == 0:
        raise RankDeficiencyError(
            "one_signal_prior needs heterogeneous treatment signals; the signal column is "
            "collinear with the constant", ["I_signal"],
        )
    return DesignMatrix(np.column_stack([one, s, records.prior_feature]),
                        ("I_one", "I_signal", "I_prior"))


def _controls(records: Records, controls) -> DesignMatrix | None:
    if controls is None:
        return None
    if isinstance(controls, DesignMatrix):
        return controls
    if isinstance(controls, (list, tuple)) and all(isinstance(c, str) for c in controls):
        if not controls:
            return None
        labels = records.covariate_labels
        missing = [c for c in controls if c not in labels]
        if missing:
            raise DataSchemaError(f"unknown covariates {missing}; available {list(labels)}")
        cols = [labels.index(c) for c in controls]
        return DesignMatrix(records.covariates[:, cols], tuple(controls))
    return DesignMatrix(np.asarray(controls, dtype=np.float64))


def _exog(n: int, interaction: DesignMatrix, controls: DesignMatrix | None) -> DesignMatrix:
    """Constant, then the non-constant interaction columns, then controls."""
    cols = [np.ones(n)]
    labels = ["const"]
    for j, lab in enumerate(interaction.labels):
        col = interaction.values[:, j]
        # a constant interaction column is absorbed by the intercept
        if np.ptp(col) == 0:
            continue
        cols.append(col)
        labels.append(lab)
    if controls is not None:
        cols.extend(controls.values.T)
        labels.extend(controls.labels)
    return DesignMatrix(np.column_stack(cols), tuple(labels))


def general_tsls(records: Records, interaction: DesignMatrix, controls=None,
                 se: str = "HC1") -> TSLSFit:
    """TSLS of outcome on posterior feature, instrumented by ``1{second group} * I_i``.

    ``W`` holds a constant, ``I_i`` and the controls.
    """
    n = records.n
    if interaction.shape[0] != n:
        raise PreconditionError("interaction rows do not match records")
    if len(set(np.unique(records.group))) > 2 or not np.all(np.isin(records.group, records.groups)):
        raise DataSchemaError(f"records must contain only groups {records.groups}")
    d = records.treated.astype(np.float64)
    exog = _exog(n, interaction, _controls(records, controls))
    inst = DesignMatrix(d[:, None] * interaction.values,
                        tuple(f"{records.groups[1]}*{l}" for l in interaction.labels))
    fit = tsls(records.outcome, records.posterior_feature, exog, inst, se=se)
    fit.spec = {"design": records.design}
    return fit


def passive_tsls(records: Records, kind: str = "sign", controls=None, gap_normalization: str = "none",
                 strict_one_prior: bool = False, se: str = "HC1") -> TSLSFit:
    """Passive control specification with interaction ``kind``."""
    if records.design != "passive":
        raise PreconditionError("passive_tsls needs passive records")
    kind = canonical_interaction(kind)
    if kind == "one_prior":
        s = records.treatment_signal
        if s is not None and np.ptp(s[records.treated] if records.treated.any() else s) > 0:
            msg = "one_prior is intended for common signals; treatment signals vary across agents"
            if strict_one_prior:
                raise PreconditionError(msg)
            warnings.warn(msg, UserWarning, stacklevel=2)
    fit = general_tsls(records, build_interaction(records, kind, gap_normalization), controls, se)
    fit.spec = {"design": "passive", "interaction": kind, "gap_normalization": gap_normalization,
                "controls": _control_echo(controls)}
    return fit


def active_tsls(records: Records, controls=None, se: str = "HC1") -> TSLSFit:
    """Active control specification: instrument ``1{G = H}``."""
    if records.design != "active":
        raise PreconditionError("active_tsls needs active records")
    one = DesignMatrix(np.ones((records.n, 1)), ("I_one",))
    fit = general_tsls(records, one, controls, se)
    fit.spec = {"design": "active", "controls": _control_echo(controls)}
    return fit


def conditional_tsls(records: Records, correction, group_pair: Sequence[str] | None = None,
                     controls=None, se: str = "HC1") -> TSLSFit:
    """Conditional specification with a known correction term ``c_i``.

    ``correction`` is an array or a callable of the records; records outside
    ``group_pair`` are dropped first.
    """
    if group_pair is not None:
        pair = tuple(group_pair)
        if set(pair) != set(records.groups) or len(pair) != 2:
            raise PreconditionError(f"group pair {pair} does not match the records' groups {records.groups}")
        keep = np.isin(records.group, pair)
        records = records.subset(keep)
    c = correction(records) if callable(correction) else np.asarray(correction, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.shape[0] != records.n:
        raise PreconditionError("correction term has the wrong length")
    fit = general_tsls(records, DesignMatrix(c[:, None], ("c",)), controls, se)
    fit.spec = {"design": records.design, "correction": getattr(correction, "__name__", "array"),
                "controls": _control_echo(controls)}
    return fit


def sign_gap(records: Records) -> np.ndarray:
    """Correction ``sign(S^T - prior feature)``."""
    return np.sign(perception_gap(records))


def constant_one(records: Records) -> np.ndarray:
    return np.ones(records.n)


def sign_signal_spread(records: Records) -> np.ndarray:
    """Correction ``sign(S^H - S^L)`` for active designs."""
    return np.sign(records.signal_high - records.signal_low)


CORRECTIONS: dict[str, Callable] = {
    "sign_gap": sign_gap,
    "one": constant_one,
    "sign_signal_spread": sign_signal_spread,
}


def elasticity_tsls(records: Records, power: int = 1, spec: str | None = None, kind: str = "sign",
                    **kwargs) -> TSLSFit:
    """Run a specification on ``log(Y^n)`` and ``log(phi^n)``."""
    if int(power) != power or power < 1:
        raise PreconditionError(f"power must be a positive integer, got {power!r}")
    power = int(power)
    y = np.power(records.outcome, power)
    f = np.power(records.posterior_feature, power)
    bad = ~((y > 0) & (f > 0))
    if bad.any():
        rows = np.flatnonzero(bad)
        raise DomainError(f"log transform needs positive Y^{power} and phi^{power}; "
                          f"offending rows {rows[:20].tolist()}", rows=rows)
    logged = records.with_values(posterior_feature=np.log(f), outcome=np.log(y))
    spec = spec or records.design
    if spec == "passive":
        fit = passive_tsls(logged, kind, **kwargs)
    elif spec == "active":
        fit = active_tsls(logged, **kwargs)
    else:
        raise PreconditionError(f"unknown specification {spec!r}")
    fit.spec["elasticity"] = power
    return fit


def aggregate_pairs(betas, alphas) -> float:
    """Convex combination of pairwise estimands."""
    b = np.asarray(betas, dtype=np.float64).reshape(-1)
    a = np.asarray(alphas, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size == 0:
        raise PreconditionError("betas and alphas must be nonempty and of equal length")
    if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-12:
        raise PreconditionError("aggregation weights must be nonnegative and sum to one")
    return float(a @ b)


def _control_echo(controls):
    if controls is None:
        return []
    if isinstance(controls, (list, tuple)) and all(isinstance(c, str) for c in controls):
        return list(controls)
    if isinstance(controls, DesignMatrix):
        return list(controls.labels)
    return "array"
