"""Population weights behind TSLS estimands, and sample-side bin characterizations.

For a comparison of groups ``g`` and ``h`` with interaction ``I`` and first
stage ``pi``, agent ``i`` gets weight proportional to
``(phi_h - phi_g) * I_i'pi`` and the estimand is the weighted mean of the
within-agent APEs. Weights are normalized to mean one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .actions import AffineInFeature
from .beliefs import Bayesian, Feature, GaussianBelief, NoUpdate
from .errors import DegenerateWeightsError, PreconditionError
from .estimators import (
    active_tsls,
    build_interaction,
    canonical_interaction,
    passive_tsls,
    perception_gap,
)
from .experiment import (
    Agent,
    CounterfactualPanel,
    Design,
    Passive,
    Records,
    counterfactual_panel,
    neutrality_from_panel,
    stability_from_panel,
)
from .linalg import TSLSFit

# interactions whose weights are certified nonnegative from observables
SIGN_CERTIFIED = ("sign", "gap", "active")


def _kind(kind: str) -> str:
    return "active" if kind == "active" else canonical_interaction(kind)


def _interaction_matrix(panel_or_records, kind: str, gap_normalization: str = "none") -> np.ndarray:
    if kind == "active":
        return np.ones((panel_or_records.n, 1))
    rec = panel_or_records.records() if isinstance(panel_or_records, CounterfactualPanel) else panel_or_records
    return build_interaction(rec, kind, gap_normalization).values


def population_first_stage(panel: CounterfactualPanel, kind: str,
                           gap_normalization: str = "none") -> np.ndarray:
    """``E[I I']^{-1} E[I dphi]``: the first-stage coefficients under random assignment."""
    kind = _kind(kind)
    I = _interaction_matrix(panel, kind, gap_normalization)
    n = panel.n
    gram = I.T @ I / n
    rhs = I.T @ panel.delta_feature / n
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateWeightsError(f"E[I I'] is singular for interaction {kind!r}") from exc


def _resolve_pi(panel, kind, pi, gap_normalization):
    if pi is None:
        return population_first_stage(panel, kind, gap_normalization)
    if isinstance(pi, TSLSFit):
        pi = pi.pi
    return np.asarray(pi, dtype=np.float64).reshape(-1)


@dataclass
class WeightReport:
    kind: str
    weights: np.ndarray
    denominator: float
    ape: np.ndarray
    pi: np.ndarray
    estimand: float
    negative_share: float
    negative_mass: float
    sign_certified: bool

    @property
    def n(self) -> int:
        return self.weights.size

    def normalized(self, mode: str = "mean") -> np.ndarray:
        """Weights scaled to mean one (``mode="mean"``) or to sum to one (``"sum"``)."""
        if mode == "mean":
            return self.weights
        if mode == "sum":
            return self.weights / self.weights.size
        raise PreconditionError(f"unknown normalization {mode!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "denominator": float(self.denominator),
            "pi": [float(x) for x in self.pi],
            "estimand": float(self.estimand),
            "negative_share": float(self.negative_share),
            "negative_mass": float(self.negative_mass),
            "sign_certified": self.sign_certified,
            "weight_summary": {
                "min": float(self.weights.min()),
                "max": float(self.weights.max()),
                "mean": float(self.weights.mean()),
            },
        }


def _weights(kind, dphi, index, ape, pi) -> WeightReport:
    raw = np.abs(dphi) * np.sign(dphi) * index
    den = raw.mean()
    scale = np.abs(raw).mean()
    if scale == 0 or not np.isfinite(den) or abs(den) <= 1e-12 * scale:
        raise DegenerateWeightsError(f"weight denominator is zero for {kind!r}")
    w = raw / den
    neg = w < 0
    absw = np.abs(w)
    return WeightReport(
        kind=kind,
        weights=w,
        denominator=float(den),
        ape=ape,
        pi=np.asarray(pi, dtype=np.float64),
        estimand=float(np.mean(w * ape)),
        negative_share=float(neg.mean()),
        negative_mass=float(absw[neg].sum() / absw.sum()),
        sign_certified=kind in SIGN_CERTIFIED,
    )


def population_weights_passive(panel: CounterfactualPanel, kind: str = "sign", pi=None,
                               gap_normalization: str = "none") -> WeightReport:
    """Passive-comparison weights. ``pi`` defaults to the population first stage."""
    if panel.design != "passive":
        raise PreconditionError("passive weights need a passive panel")
    kind = canonical_interaction(kind)
    pi = _resolve_pi(panel, kind, pi, gap_normalization)
    I = _interaction_matrix(panel, kind, gap_normalization)
    if I.shape[1] != pi.size:
        raise PreconditionError(f"pi has {pi.size} entries, interaction has {I.shape[1]} columns")
    return _weights(kind, panel.delta_feature, I @ pi, panel.ape, pi)


def population_weights_active(panel: CounterfactualPanel) -> WeightReport:
    """Active-comparison weights (interaction ``I = 1``)."""
    if panel.design != "active":
        raise PreconditionError("active weights need an active panel")
    return _weights("active", panel.delta_feature, np.ones(panel.n), panel.ape, np.ones(1))


def population_weights(panel: CounterfactualPanel, kind: str = "sign", pi=None,
                       gap_normalization: str = "none") -> WeightReport:
    if panel.design == "active":
        return population_weights_active(panel)
    return population_weights_passive(panel, kind, pi, gap_normalization)


def panel_estimand(panel: CounterfactualPanel, kind: str = "sign", pi=None,
                   gap_normalization: str = "none") -> float:
    """``E[I'pi dY] / E[I'pi dphi]`` evaluated directly over the panel."""
    kind = "active" if panel.design == "active" else canonical_interaction(kind)
    pi = np.ones(1) if kind == "active" else _resolve_pi(panel, kind, pi, gap_normalization)
    index = _interaction_matrix(panel, kind, gap_normalization) @ pi
    num = np.mean(index * panel.delta_outcome)
    den = np.mean(index * panel.delta_feature)
    if den == 0 or not np.isfinite(den):
        raise DegenerateWeightsError(f"estimand denominator is zero for {kind!r}")
    return float(num / den)


# ---------------------------------------------------------------------------
# closed-form characterizations
# ---------------------------------------------------------------------------


@dataclass
class CharacterizationResult:
    matches: bool
    max_abs_dev: float
    applicable: bool
    reasons: list = field(default_factory=list)
    closed_form: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"matches": self.matches, "max_abs_dev": float(self.max_abs_dev),
                "applicable": self.applicable, "reasons": list(self.reasons)}


def _applicability(panel: CounterfactualPanel) -> list:
    """Reasons the monotone closed forms may fail; empty when they apply."""
    reasons = []
    if panel.design == "passive":
        cond = stability_from_panel(panel)
        if not cond.all:
            reasons.append(f"control-group stability fails for {int((~cond.holds).sum())} agents")
        direction = np.sign(panel.treatment_signal - panel.prior_feature)
        moved = np.sign(panel.feature["T"] - panel.probe_feature)
    else:
        cond = neutrality_from_panel(panel)
        if not cond.all:
            reasons.append(f"treatment-group neutrality fails for {int((~cond.holds).sum())} agents")
        direction = np.sign(panel.signal_high - panel.signal_low)
        moved = np.sign(panel.feature["H"] - panel.probe_feature)
    bad = direction * moved < 0
    if bad.any():
        reasons.append(f"posterior moves against the signal for {int(bad.sum())} agents")
    return reasons


def closed_form_weights(panel: CounterfactualPanel, kind: str, pi=None,
                        gap_normalization: str = "none") -> np.ndarray | None:
    """Unnormalized weights from the monotone closed forms; ``None`` when none is known."""
    dphi = panel.delta_feature
    adphi = np.abs(dphi)
    if panel.design == "active":
        return adphi
    kind = canonical_interaction(kind)
    gap = perception_gap(panel.records(), gap_normalization)
    psi = np.sign(dphi)
    if kind == "sign":
        return adphi * (gap != 0)
    if kind == "gap":
        return adphi * np.abs(gap)
    if kind == "one_signal_prior":
        return None
    pi = _resolve_pi(panel, kind, pi, gap_normalization)
    if kind == "one_gap":
        return adphi * (pi[0] * psi + pi[1] * np.abs(gap))
    return adphi * (pi[0] * psi + pi[1] * psi * panel.prior_feature)


def verify_weight_characterization(panel: CounterfactualPanel, kind: str = "sign", pi=None,
                                   gap_normalization: str = "none",
                                   tol: float = 1e-8) -> CharacterizationResult:
    """Compare general weights against the closed form, both normalized to mean one."""
    kind = "active" if panel.design == "active" else canonical_interaction(kind)
    reasons = _applicability(panel)
    report = population_weights(panel, kind, pi, gap_normalization)
    cf = closed_form_weights(panel, kind, report.pi, gap_normalization)
    if cf is None:
        return CharacterizationResult(False, float("nan"), False,
                                      reasons + [f"no closed form for {kind!r}"])
    den = cf.mean()
    if den == 0:
        return CharacterizationResult(False, float("inf"), not reasons,
                                      reasons + ["closed form has zero mean"], cf)
    dev = float(np.max(np.abs(cf / den - report.weights)))
    return CharacterizationResult(dev < tol, dev, not reasons, reasons, cf)


# ---------------------------------------------------------------------------
# bins
# ---------------------------------------------------------------------------


@dataclass
class BinReport:
    """Per-bin average weights or contributions over a conditioning statistic.

    Bins are ``[e_0, e_1], (e_1, e_2], ...``. ``total`` is the share-weighted
    sum over nonempty bins: one for weights, the TSLS coefficient for
    contributions.
    """

    quantity: str
    kind: str
    method: str
    edges: np.ndarray
    counts: np.ndarray
    shares: np.ndarray
    values: np.ndarray
    empty: np.ndarray
    total: float
    gamma: float
    sign_certified: bool

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "kind": self.kind,
            "method": self.method,
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
            "shares": [float(s) for s in self.shares],
            "values": [None if e else float(v) for v, e in zip(self.values, self.empty)],
            "empty_bins": [int(j) for j in np.flatnonzero(self.empty)],
            "total": float(self.total),
            "gamma": float(self.gamma),
            "sign_certified": self.sign_certified,
        }

    def plot_rows(self):
        """``(lower, upper, count, share, value)`` per bin, for plotting tables."""
        for j in range(self.counts.size):
            yield (float(self.edges[j]), float(self.edges[j + 1]), int(self.counts[j]),
                   float(self.shares[j]), float(self.values[j]))


def bin_index(stat: np.ndarray, edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.size < 2 or np.any(np.diff(edges) < 0):
        raise PreconditionError("bin edges must be nondecreasing with at least two entries")
    if stat.min() < edges[0] or stat.max() > edges[-1]:
        raise PreconditionError("bin edges must cover the observed range of the statistic")
    return np.clip(np.searchsorted(edges, stat, side="left") - 1, 0, edges.size - 2)


def _statistic(records: Records, statistic, kind: str, gap_normalization: str) -> np.ndarray:
    if statistic is None:
        if kind == "active":
            return records.prior_feature
        return perception_gap(records, gap_normalization)
    stat = statistic(records) if callable(statistic) else statistic
    stat = np.asarray(stat, dtype=np.float64).reshape(-1)
    if stat.size != records.n or not np.all(np.isfinite(stat)):
        raise PreconditionError("statistic must be finite with one value per record")
    return stat


def _fit(records, kind, controls, gap_normalization):
    if kind == "active":
        return active_tsls(records, controls)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return passive_tsls(records, kind, controls, gap_normalization)


def _bins(records: Records, kind: str, quantity: str, statistic=None, edges=None, bins: int = 10,
          fit: TSLSFit | None = None, method: str = "residualized", controls=None,
          gap_normalization: str = "none") -> BinReport:
    kind = "active" if records.design == "active" else canonical_interaction(kind)
    if fit is None:
        fit = _fit(records, kind, controls, gap_normalization)
    stat = _statistic(records, statistic, kind, gap_normalization)
    if edges is None:
        edges = np.quantile(stat, np.linspace(0.0, 1.0, int(bins) + 1))
    edges = np.asarray(edges, dtype=np.float64)
    idx = bin_index(stat, edges)
    J = edges.size - 1
    counts = np.bincount(idx, minlength=J)
    shares = counts / records.n
    empty = counts == 0
    if empty.any():
        warnings.warn(f"{int(empty.sum())} empty bins excluded", UserWarning, stacklevel=3)
    target = records.posterior_feature if quantity == "weight" else records.outcome

    if method == "residualized":
        # residualized fitted first stage; reproduces the TSLS coefficient exactly
        z = fit.partialled_instrument
        den = np.mean(z * records.posterior_feature)
        sums = np.bincount(idx, weights=z * target, minlength=J)
    elif method == "group_means":
        index = _interaction_matrix(records, kind, gap_normalization) @ fit.pi
        t = records.treated
        if t.all() or not t.any():
            raise PreconditionError("group-mean bins need both groups present")
        nt, nc = t.sum(), (~t).sum()
        den = (np.sum(index[t] * records.posterior_feature[t]) / nt
               - np.sum(index[~t] * records.posterior_feature[~t]) / nc)
        contrib = index * target * np.where(t, 1.0 / nt, -1.0 / nc)
        sums = np.bincount(idx, weights=contrib, minlength=J) * records.n
    else:
        raise PreconditionError(f"unknown bin method {method!r}")
    if den == 0:
        raise DegenerateWeightsError("first-stage denominator is zero")
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(empty, np.nan, sums / (records.n * np.where(empty, 1.0, shares)) / den)
    total = float(np.sum(shares[~empty] * values[~empty]))
    return BinReport(quantity, kind, method, edges, counts, shares, values, empty, total,
                     float(fit.gamma), kind in SIGN_CERTIFIED)


def bin_weight_characterization(records: Records, kind: str = "sign", statistic=None, edges=None,
                                bins: int = 10, fit: TSLSFit | None = None,
                                method: str = "residualized", controls=None,
                                gap_normalization: str = "none") -> BinReport:
    """Average TSLS weight within bins of ``statistic`` (default: perception-gap deciles)."""
    return _bins(records, kind, "weight", statistic, edges, bins, fit, method, controls,
                 gap_normalization)


def bin_contribution_characterization(records: Records, kind: str = "sign", statistic=None,
                                      edges=None, bins: int = 10, fit: TSLSFit | None = None,
                                      method: str = "residualized", controls=None,
                                      gap_normalization: str = "none") -> BinReport:
    """Average weighted APE within bins; share-weighted values sum to the TSLS coefficient."""
    return _bins(records, kind, "contribution", statistic, edges, bins, fit, method, controls,
                 gap_normalization)


# ---------------------------------------------------------------------------
# sign-reversal construction
# ---------------------------------------------------------------------------

SIGN_REVERSAL_PI = (1.0, -2.5)


def sign_reversal_example():
    """Two-type population where OnePrior weights reverse the sign of the estimand.

    Gaussian agents with unit prior and perceived-noise variances (learning
    rate one half) see the common signal 2. Type A has prior mean 0 and
    partial effect 1; type B has prior mean 1 and partial effect 3. Feature
    changes are 1 and 1/2. Under the first stage ``(1, -2.5)`` the index
    ``pi_1 + pi_2 * prior`` is ``(1, -1.5)``, the weights are ``(8, -6)`` and the
    estimand is ``-5`` although every partial effect is positive.

    Returns
    -------
    panel : CounterfactualPanel
    pi : ndarray
    """
    agents = [
        Agent(i, GaussianBelief(mu, 1.0), {"C": NoUpdate(), "T": Bayesian()}, 1.0, AffineInFeature(0.0, slope))
        for i, (mu, slope) in enumerate([(0.0, 1.0), (1.0, 3.0)])
    ]
    design = Design(Passive(lambda a: 2.0))
    panel = counterfactual_panel(agents, design, Feature.mean(), np.array(["C", "T"]))
    return panel, np.array(SIGN_REVERSAL_PI)
