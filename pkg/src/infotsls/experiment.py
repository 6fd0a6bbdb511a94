"""Populations, group assignment, and realized and counterfactual experiment data.

Randomness
----------
All draws descend from one integer seed through
``np.random.SeedSequence(seed).spawn(2)``: stream 0 generates populations
(see :mod:`infotsls.config`) and stream 1 draws group assignment. The
assignment stream never touches agent fields, so assignment is independent of
priors, covariates and signals by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import _backend
from .actions import ActionFunction, batch_ape, batch_outcomes
from .beliefs import (
    TOL,
    Bayesian,
    Drift,
    Feature,
    GaussianBelief,
    Grether,
    GridBelief,
    NoUpdate,
    SignalFamily,
    UpdateRule,
    apply_rule,
    feature_value,
)
from .errors import DegenerateEvidenceError, DimensionError, PreconditionError

POPULATION_STREAM = 0
ASSIGNMENT_STREAM = 1

PASSIVE_GROUPS = ("C", "T")
ACTIVE_GROUPS = ("L", "H")


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)).spawn(2)[stream])


@dataclass(eq=False)
class Agent:
    """One experimental subject.

    ``channels`` maps groups to the perceived signal model: a
    :class:`SignalFamily` for grid priors, the perceived signal variance for
    Gaussian priors. A single object is shared by every group. A missing
    control-group rule means :class:`NoUpdate`.
    """

    id: int
    prior: Union[GridBelief, GaussianBelief]
    rules: dict
    channels: object
    action: ActionFunction
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=np.float64).reshape(-1)
        if not isinstance(self.channels, dict):
            self.channels = {g: self.channels for g in PASSIVE_GROUPS + ACTIVE_GROUPS}

    def rule(self, group: str) -> UpdateRule:
        if group in self.rules:
            return self.rules[group]
        if group == "C":
            return NoUpdate()
        raise PreconditionError(f"agent {self.id}: no update rule for group {group!r}")

    def channel(self, group: str):
        return self.channels.get(group)


@dataclass(frozen=True)
class Passive:
    signal_fn: Callable[[Agent], float]
    kind = "passive"


@dataclass(frozen=True)
class Active:
    low_fn: Callable[[Agent], float]
    high_fn: Callable[[Agent], float]
    kind = "active"


@dataclass(frozen=True)
class Design:
    arm: Union[Passive, Active]
    assignment_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.assignment_prob < 1.0:
            raise PreconditionError(f"assignment_prob must lie in (0, 1), got {self.assignment_prob!r}")

    @property
    def kind(self) -> str:
        return self.arm.kind

    @property
    def groups(self) -> tuple:
        return PASSIVE_GROUPS if self.kind == "passive" else ACTIVE_GROUPS


def assign_groups(n: int, p: float, seed: int, labels: tuple = PASSIVE_GROUPS) -> np.ndarray:
    """I.i.d. Bernoulli(``p``) assignment to ``labels[1]``; reproducible for a given seed."""
    if not 0.0 < p < 1.0:
        raise PreconditionError(f"assignment probability must lie in (0, 1), got {p!r}")
    draws = rng_stream(seed, ASSIGNMENT_STREAM).random(int(n)) < p
    return np.where(draws, labels[1], labels[0])


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentRecord:
    id: int
    group: str
    signal: float | None
    prior_feature: float
    posterior_feature: float
    outcome: float
    covariates: tuple


def _nan_or(x):
    return None if np.isnan(x) else float(x)


@dataclass(eq=False)
class Records:
    """Realized observations, one entry per agent, stored by column.

    ``signal`` is the signal the agent actually received (NaN in the passive
    control group). Passive designs also carry ``treatment_signal``, the
    treatment signal on every row including control; active designs carry
    both arm signals.
    """

    design: str
    id: np.ndarray
    group: np.ndarray
    signal: np.ndarray
    prior_feature: np.ndarray
    posterior_feature: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    treatment_signal: np.ndarray | None = None
    signal_low: np.ndarray | None = None
    signal_high: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.id)
        self.covariates = np.asarray(self.covariates, dtype=np.float64).reshape(n, -1)
        for name in ("signal", "prior_feature", "posterior_feature", "outcome",
                     "treatment_signal", "signal_low", "signal_high"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise DimensionError(f"column {name} has {len(v)} entries, expected {n}")

    @property
    def groups(self) -> tuple:
        return PASSIVE_GROUPS if self.design == "passive" else ACTIVE_GROUPS

    @property
    def n(self) -> int:
        return len(self.id)

    def __len__(self):
        return self.n

    @property
    def covariate_labels(self) -> tuple:
        return tuple(f"x{j + 1}" for j in range(self.covariates.shape[1]))

    @property
    def treated(self) -> np.ndarray:
        """Indicator of the second group (T or H)."""
        return self.group == self.groups[1]

    def row(self, i: int) -> ExperimentRecord:
        return ExperimentRecord(
            int(self.id[i]), str(self.group[i]), _nan_or(self.signal[i]),
            float(self.prior_feature[i]), float(self.posterior_feature[i]),
            float(self.outcome[i]), tuple(float(x) for x in self.covariates[i]),
        )

    def subset(self, mask) -> "Records":
        def take(v):
            return None if v is None else v[mask]

        return Records(
            self.design, self.id[mask], self.group[mask], self.signal[mask],
            self.prior_feature[mask], self.posterior_feature[mask], self.outcome[mask],
            self.covariates[mask], take(self.treatment_signal), take(self.signal_low),
            take(self.signal_high),
        )

    def with_values(self, posterior_feature=None, outcome=None) -> "Records":
        return Records(
            self.design, self.id, self.group, self.signal, self.prior_feature,
            self.posterior_feature if posterior_feature is None else posterior_feature,
            self.outcome if outcome is None else outcome,
            self.covariates, self.treatment_signal, self.signal_low, self.signal_high,
        )


@dataclass(eq=False)
class CounterfactualPanel:
    """Posterior features and outcomes for every agent under every group.

    ``probe_feature`` is the second-group posterior feature at a reference
    signal: the prior feature for passive designs (stability) and the low
    signal for active designs (neutrality).
    """

    design: str
    id: np.ndarray
    group: np.ndarray
    prior_feature: np.ndarray
    feature: dict
    outcome: dict
    ape: np.ndarray
    probe_feature: np.ndarray
    covariates: np.ndarray
    treatment_signal: np.ndarray | None = None
    signal_low: np.ndarray | None = None
    signal_high: np.ndarray | None = None

    @property
    def groups(self) -> tuple:
        return PASSIVE_GROUPS if self.design == "passive" else ACTIVE_GROUPS

    @property
    def n(self) -> int:
        return len(self.id)

    @property
    def delta_feature(self) -> np.ndarray:
        g, h = self.groups
        return self.feature[h] - self.feature[g]

    @property
    def delta_outcome(self) -> np.ndarray:
        g, h = self.groups
        return self.outcome[h] - self.outcome[g]

    @property
    def perception_gap(self) -> np.ndarray:
        if self.design != "passive":
            raise PreconditionError("the perception gap is defined for passive designs only")
        return self.treatment_signal - self.prior_feature

    def records(self) -> Records:
        """Realized records: each agent's row at its assigned group."""
        g, h = self.groups
        treated = self.group == h
        post = np.where(treated, self.feature[h], self.feature[g])
        out = np.where(treated, self.outcome[h], self.outcome[g])
        if self.design == "passive":
            signal = np.where(treated, self.treatment_signal, np.nan)
        else:
            signal = np.where(treated, self.signal_high, self.signal_low)
        return Records(
            self.design, self.id.copy(), self.group.copy(), signal, self.prior_feature.copy(),
            post, out, self.covariates.copy(), _copy(self.treatment_signal),
            _copy(self.signal_low), _copy(self.signal_high),
        )


def _copy(v):
    return None if v is None else v.copy()


# ---------------------------------------------------------------------------
# batched posterior features
# ---------------------------------------------------------------------------


def _gaussian_moments(rules, mean, var, noise, s):
    """Vectorized Gaussian updating; returns posterior (mean, variance) arrays."""
    m = mean.copy()
    v = var.copy()
    kinds = np.array([r.kind for r in rules])
    for kind in np.unique(kinds):
        idx = np.flatnonzero(kinds == kind)
        if kind == "none":
            continue
        if kind == "drift":
            bm, bv = _gaussian_moments([rules[i].base for i in idx], mean[idx], var[idx],
                                       noise[idx], s[idx])
            m[idx] = bm + np.array([rules[i].shift for i in idx])
            v[idx] = bv
            continue
        if np.any(np.isnan(s[idx])):
            raise PreconditionError(f"{kind} rule needs a signal")
        if np.any(~(noise[idx] > 0)):
            raise PreconditionError("perceived_noise must be positive")
        mu0, s0, nz, sg = mean[idx], var[idx], noise[idx], s[idx]
        if kind == "bayesian":
            r = s0 / (s0 + nz)
            m[idx] = r * sg + (1.0 - r) * mu0
            v[idx] = (1.0 - r) * s0
        elif kind == "grether":
            chi0 = np.array([rules[i].chi0 for i in idx])
            chi1 = np.array([rules[i].chi1 for i in idx])
            pp = chi0 / s0
            ps = chi1 / nz
            prec = pp + ps
            m[idx] = (pp * mu0 + ps * sg) / prec
            v[idx] = 1.0 / prec
        elif kind == "anchored":
            tau = np.array([rules[i].tau for i in idx])
            am = np.array([mu0[k] if rules[i].anchor is None else rules[i].anchor.mean
                           for k, i in enumerate(idx)])
            av = np.array([s0[k] if rules[i].anchor is None else rules[i].anchor.variance
                           for k, i in enumerate(idx)])
            r = s0 / (s0 + nz)
            bm = r * sg + (1.0 - r) * mu0
            bv = (1.0 - r) * s0
            mm = tau * am + (1 - tau) * bm
            second = tau * (av + am**2) + (1 - tau) * (bv + bm**2)
            m[idx] = mm
            v[idx] = np.maximum(second - mm * mm, np.finfo(float).tiny)
        else:
            raise PreconditionError(f"unsupported rule kind {kind!r}")
    return m, v


def _gaussian_feature(feature: Feature, m, v):
    if feature.kind == "mean":
        return m
    if feature.kind == "variance":
        return v
    if feature.kind == "second_moment":
        return v + m**2
    raise PreconditionError("moment features need grid beliefs")


def posterior_features(agents, group: str, signals, feature: Feature) -> np.ndarray:
    """``phi(B_1^group(. | s_i))`` for every agent; ``NaN`` signals mean no signal."""
    signals = np.asarray(signals, dtype=np.float64)
    n = len(agents)
    out = np.empty(n)
    rules = [a.rule(group) for a in agents]
    gauss = np.array([isinstance(a.prior, GaussianBelief) for a in agents], dtype=bool)

    gi = np.flatnonzero(gauss)
    if gi.size:
        mean = np.array([agents[i].prior.mean for i in gi])
        var = np.array([agents[i].prior.variance for i in gi])
        noise = np.array([_noise(agents[i], group, rules[i]) for i in gi])
        m, v = _gaussian_moments([rules[i] for i in gi], mean, var, noise, signals[gi])
        out[gi] = _gaussian_feature(feature, m, v)

    # grid agents: tempered Bayes rules through the batch kernel
    kernel_rows = [i for i in np.flatnonzero(~gauss)
                   if isinstance(rules[i], (Bayesian, Grether)) and not np.isnan(signals[i])]
    loop_rows = sorted(set(np.flatnonzero(~gauss).tolist()) - set(kernel_rows))
    by_grid: dict = {}
    for i in kernel_rows:
        by_grid.setdefault(agents[i].prior.states.tobytes(), []).append(i)
    for rows in by_grid.values():
        rows = np.array(rows)
        states = agents[rows[0]].prior.states
        log_prior = np.vstack([agents[i].prior.log_masses() for i in rows])
        log_lik = np.empty_like(log_prior)
        for i_local, i in enumerate(rows):
            fam = _family(agents[i], group)
            log_lik[i_local] = fam.log_densities[fam.index(float(signals[i]))]
        chi0 = np.array([getattr(rules[i], "chi0", 1.0) for i in rows])
        chi1 = np.array([getattr(rules[i], "chi1", 1.0) for i in rows])
        mom = _backend.posterior_moments(log_prior, log_lik, chi0, chi1, states,
                                         feature.phi_on(states))
        dead = np.isnan(mom[:, 0])
        if dead.any():
            raise DegenerateEvidenceError(
                "signal has zero likelihood under every state with prior mass",
                agent_id=int(agents[rows[dead][0]].id),
            )
        out[rows] = feature.from_moments(mom[:, 0], mom[:, 1], mom[:, 2])
    for i in loop_rows:
        s = None if np.isnan(signals[i]) else float(signals[i])
        try:
            post = apply_rule(rules[i], agents[i].prior, agents[i].channel(group), s)
        except DegenerateEvidenceError as exc:
            raise DegenerateEvidenceError(str(exc), agent_id=int(agents[i].id)) from exc
        out[i] = feature_value(post, feature)
    return out


def _noise(agent: Agent, group: str, rule) -> float:
    ch = agent.channel(group)
    if ch is None:
        return np.nan if _needs_signal(rule) else 1.0
    if isinstance(ch, SignalFamily):
        raise PreconditionError(f"agent {agent.id}: Gaussian prior needs a noise variance channel")
    return float(ch)


def _needs_signal(rule) -> bool:
    if isinstance(rule, NoUpdate):
        return False
    if isinstance(rule, Drift):
        return _needs_signal(rule.base)
    return True


def _family(agent: Agent, group: str) -> SignalFamily:
    fam = agent.channel(group)
    if not isinstance(fam, SignalFamily):
        raise PreconditionError(f"agent {agent.id}: grid prior needs a SignalFamily for group {group!r}")
    if not fam.same_states(agent.prior):
        raise DimensionError(f"agent {agent.id}: prior grid does not match the signal family")
    return fam


def prior_features(agents, feature: Feature) -> np.ndarray:
    out = np.empty(len(agents))
    cache: dict = {}
    for i, a in enumerate(agents):
        key = id(a.prior)
        if key not in cache:
            cache[key] = feature_value(a.prior, feature)
        out[i] = cache[key]
    return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _check_population(agents):
    if len(agents) == 0:
        raise PreconditionError("population is empty")
    k = agents[0].covariates.size
    for a in agents:
        if a.covariates.size != k:
            raise DimensionError(f"agent {a.id} has {a.covariates.size} covariates, expected {k}")
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise PreconditionError("agent ids must be unique")


def counterfactual_panel(population, design: Design, feature: Feature,
                         assignment=None) -> CounterfactualPanel:
    """Materialize every agent's posterior feature and outcome under both groups."""
    agents = list(population)
    _check_population(agents)
    n = len(agents)
    g, h = design.groups
    if assignment is None:
        assignment = assign_groups(n, design.assignment_prob, design.seed, design.groups)
    assignment = np.asarray(assignment).astype("<U1")
    if assignment.shape != (n,) or not np.all(np.isin(assignment, design.groups)):
        raise PreconditionError(f"assignment must label every agent with one of {design.groups}")

    f0 = prior_features(agents, feature)
    ids = np.array([a.id for a in agents], dtype=np.int64)
    cov = np.vstack([a.covariates for a in agents]) if agents[0].covariates.size else np.zeros((n, 0))
    actions = [a.action for a in agents]
    extra = {}
    if design.kind == "passive":
        s_t = np.array([design.arm.signal_fn(a) for a in agents], dtype=np.float64)
        if not np.all(np.isfinite(s_t)):
            raise PreconditionError("treatment signals must be finite")
        feat = {g: posterior_features(agents, g, np.full(n, np.nan), feature),
                h: posterior_features(agents, h, s_t, feature)}
        probe = posterior_features(agents, h, f0, feature)
        extra["treatment_signal"] = s_t
    else:
        s_l = np.array([design.arm.low_fn(a) for a in agents], dtype=np.float64)
        s_h = np.array([design.arm.high_fn(a) for a in agents], dtype=np.float64)
        bad = ~(s_l < s_h)
        if bad.any():
            raise PreconditionError(
                f"active designs need low < high signals; violated for agents {ids[bad][:10].tolist()}"
            )
        feat = {g: posterior_features(agents, g, s_l, feature),
                h: posterior_features(agents, h, s_h, feature)}
        probe = posterior_features(agents, h, s_l, feature)
        extra["signal_low"] = s_l
        extra["signal_high"] = s_h
    for grp, v in feat.items():
        if not np.all(np.isfinite(v)):
            raise PreconditionError(f"non-finite posterior features in group {grp}")
    outcome = {grp: batch_outcomes(actions, v) for grp, v in feat.items()}
    ape = batch_ape(actions, feat[g], feat[h])
    return CounterfactualPanel(design.kind, ids, assignment, f0, feat, outcome, ape, probe, cov,
                               **extra)


def simulate(population, design: Design, feature: Feature, assignment=None):
    """Run the experiment; returns ``(records, panel)``.

    ``assignment`` overrides the seeded draw with explicit group labels.
    """
    panel = counterfactual_panel(population, design, feature, assignment)
    return panel.records(), panel


# ---------------------------------------------------------------------------
# identification checks
# ---------------------------------------------------------------------------


@dataclass
class ConditionReport:
    """Per-agent strong and weak forms of stability or neutrality."""

    holds: np.ndarray
    weak_holds: np.ndarray
    deviation: np.ndarray
    movement: np.ndarray

    @property
    def all(self) -> bool:
        return bool(np.all(self.holds))

    @property
    def all_weak(self) -> bool:
        return bool(np.all(self.weak_holds))


def _condition(probe, baseline, moved, tol) -> ConditionReport:
    dev = np.abs(probe - baseline)
    mov = np.abs(moved - probe)
    # the weak form compares against movement; it is implied by the strict one
    return ConditionReport(dev <= tol, dev <= np.maximum(mov, tol), dev, mov)


def stability_from_panel(panel: CounterfactualPanel, tol: float | None = None) -> ConditionReport:
    """Control-group stability: treatment at ``s = prior feature`` matches the control posterior."""
    if panel.design != "passive":
        raise PreconditionError("stability applies to passive designs")
    tol = TOL.family if tol is None else tol
    return _condition(panel.probe_feature, panel.feature["C"], panel.feature["T"], tol)


def neutrality_from_panel(panel: CounterfactualPanel, tol: float | None = None) -> ConditionReport:
    """Treatment-group neutrality: both arms agree when given the low signal."""
    if panel.design != "active":
        raise PreconditionError("neutrality applies to active designs")
    tol = TOL.family if tol is None else tol
    return _condition(panel.probe_feature, panel.feature["L"], panel.feature["H"], tol)


def discretization_tolerance(agents, group: str, signals, feature: Feature,
                            tol: float | None = None) -> np.ndarray:
    """Per-agent tolerance for condition checks at off-grid signals.

    Grid channels snap a signal to the nearest grid point, so a probe at ``s``
    is only known up to the spread of posterior features at the two grid
    signals bracketing ``s``. Gaussian agents keep the scalar ``tol``.
    """
    tol = TOL.family if tol is None else tol
    signals = np.asarray(signals, dtype=np.float64)
    lo, hi = signals.copy(), signals.copy()
    for i, a in enumerate(agents):
        ch = a.channel(group)
        if isinstance(ch, SignalFamily):
            grid = ch.signals
            j = int(np.searchsorted(grid, signals[i]))
            lo[i], hi[i] = grid[max(j - 1, 0)], grid[min(j, grid.size - 1)]
    width = np.abs(posterior_features(agents, group, hi, feature)
                   - posterior_features(agents, group, lo, feature))
    return np.maximum(tol, width)


def condition_report(agents, panel: CounterfactualPanel, feature: Feature) -> ConditionReport:
    """Stability (passive) or neutrality (active) with grid-aware tolerances."""
    h = panel.groups[1]
    if panel.design == "passive":
        tol = discretization_tolerance(agents, h, panel.prior_feature, feature)
        return stability_from_panel(panel, tol)
    tol = discretization_tolerance(agents, h, panel.signal_low, feature)
    return neutrality_from_panel(panel, tol)


def stability_check(population, design: Design, feature: Feature,
                    tol: float | None = None) -> ConditionReport:
    """Control-group stability for a population; grid channels get :func:`discretization_tolerance`."""
    if design.kind != "passive":
        raise PreconditionError("stability applies to passive designs")
    n = len(population)
    panel = counterfactual_panel(population, design, feature, np.full(n, "C"))
    if tol is not None:
        return stability_from_panel(panel, tol)
    return condition_report(population, panel, feature)


def neutrality_check(population, design: Design, feature: Feature,
                     tol: float | None = None) -> ConditionReport:
    """Treatment-group neutrality for a population; grid channels get :func:`discretization_tolerance`."""
    if design.kind != "active":
        raise PreconditionError("neutrality applies to active designs")
    n = len(population)
    panel = counterfactual_panel(population, design, feature, np.full(n, "L"))
    if tol is not None:
        return neutrality_from_panel(panel, tol)
    return condition_report(population, panel, feature)
