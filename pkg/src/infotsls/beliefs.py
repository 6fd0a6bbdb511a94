"""Beliefs, features, perceived signal families and updating rules.

States and signals live on finite grids. A :class:`GridBelief` is a
probability vector over the state grid; a :class:`SignalFamily` holds the
perceived likelihood ``q(s_j | w_m)`` as a ``J x M`` matrix together with
trapezoidal quadrature weights over the signal grid. All updates are
computed in log space so that tempered (Grether) likelihoods far in the
tails do not underflow before normalization.

Only the Gaussian model has a continuous closed form
(:func:`gaussian_posterior`); everything else is grid arithmetic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import _backend
from .errors import DataSchemaError, DegenerateEvidenceError, DimensionError, PreconditionError


@dataclass
class Tolerances:
    probability: float = 1e-10
    identity: float = 1e-12
    family: float = 1e-8
    mlr: float = 1e-12
    snap: float = 1e-9


TOL = Tolerances()


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _strictly_increasing(a: np.ndarray) -> bool:
    return bool(np.all(np.diff(a) > 0))


# ---------------------------------------------------------------------------
# belief objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridBelief:
    """Discrete distribution over a strictly increasing state grid."""

    states: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states).reshape(-1)
        masses = _frozen(self.masses).reshape(-1)
        if states.shape != masses.shape:
            raise DimensionError(f"{states.size} states but {masses.size} masses")
        if states.size == 0:
            raise DimensionError("empty state grid")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(masses))):
            raise PreconditionError("non-finite state or mass")
        if not _strictly_increasing(states):
            raise PreconditionError("state grid must be strictly increasing")
        if np.any(masses < 0):
            raise PreconditionError("negative probability mass")
        total = masses.sum()
        if abs(total - 1.0) > TOL.probability:
            raise PreconditionError(f"masses sum to {total!r}, not 1")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_weights(cls, states, weights) -> "GridBelief":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            raise PreconditionError("weights must have positive total")
        return cls(states, w / total)

    @classmethod
    def point_mass(cls, states, at: float) -> "GridBelief":
        states = np.asarray(states, dtype=np.float64)
        m = np.zeros(states.size)
        m[int(np.argmin(np.abs(states - at)))] = 1.0
        return cls(states, m)

    @classmethod
    def uniform(cls, states) -> "GridBelief":
        states = np.asarray(states, dtype=np.float64)
        return cls(states, np.full(states.size, 1.0 / states.size))

    @classmethod
    def discretized_normal(cls, states, mean: float, sd: float) -> "GridBelief":
        states = np.asarray(states, dtype=np.float64)
        logw = -0.5 * ((states - mean) / sd) ** 2
        return cls.from_weights(states, np.exp(logw - logw.max()))

    @property
    def size(self) -> int:
        return self.states.size

    @property
    def mean(self) -> float:
        return float(self.masses @ self.states)

    @property
    def variance(self) -> float:
        d = self.states - self.mean
        return float(self.masses @ (d * d))

    def shifted(self, shift: float) -> "GridBelief":
        """Same masses on the translated grid ``states + shift``."""
        return GridBelief(self.states + shift, self.masses)

    def log_masses(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.masses)


@dataclass(frozen=True)
class GaussianBelief:
    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise PreconditionError("non-finite Gaussian parameters")
        if not self.variance > 0:
            raise PreconditionError(f"variance must be positive, got {self.variance!r}")


Belief = Union[GridBelief, GaussianBelief]


@dataclass(frozen=True, eq=False)
class Feature:
    """A real functional of a belief.

    ``kind`` is one of ``mean``, ``second_moment``, ``variance`` or
    ``moment``; the last carries ``phi``, one value per state grid point,
    and computes ``sum_m phi_m p_m``.

    Monotone updating is only guaranteed for ``mean``, ``second_moment`` and
    ``moment`` with increasing ``phi``. The variance is supported but carries
    no such guarantee.
    """

    kind: str
    phi: np.ndarray | None = None

    KINDS = ("mean", "second_moment", "variance", "moment")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise PreconditionError(f"unknown feature kind {self.kind!r}")
        if self.kind == "moment":
            if self.phi is None:
                raise PreconditionError("moment feature needs phi values")
            object.__setattr__(self, "phi", _frozen(self.phi).reshape(-1))
        elif self.phi is not None:
            raise PreconditionError(f"{self.kind} feature takes no phi values")

    @classmethod
    def mean(cls) -> "Feature":
        return cls("mean")

    @classmethod
    def second_moment(cls) -> "Feature":
        return cls("second_moment")

    @classmethod
    def variance(cls) -> "Feature":
        return cls("variance")

    @classmethod
    def moment(cls, phi) -> "Feature":
        return cls("moment", phi)

    def monotone_certified(self, states) -> bool:
        """True when MLR updating is guaranteed to move this feature monotonically on ``states``."""
        states = np.asarray(states, dtype=np.float64)
        if self.kind == "mean":
            return True
        if self.kind == "second_moment":
            # w^2 is increasing only on a nonnegative grid
            return bool(np.all(states >= 0))
        if self.kind == "moment":
            return bool(np.all(np.diff(self.phi) >= 0))
        return False

    def phi_on(self, states: np.ndarray) -> np.ndarray:
        """The integrand evaluated on ``states`` (used by batch kernels)."""
        if self.kind == "moment":
            if self.phi.size != states.size:
                raise DimensionError(
                    f"moment feature has {self.phi.size} phi values for {states.size} states"
                )
            return self.phi
        if self.kind == "second_moment":
            return states * states
        return states

    def from_moments(self, mean, var, ephi):
        """Combine kernel outputs (mean, variance, E[phi]) into the feature value."""
        if self.kind == "mean":
            return mean
        if self.kind == "variance":
            return var
        if self.kind == "second_moment":
            return var + mean * mean
        return ephi

    def __repr__(self):
        return f"Feature({self.kind!r})"


def feature_value(belief: Belief, feature: Feature) -> float:
    """Evaluate ``feature`` at ``belief``."""
    if isinstance(belief, GaussianBelief):
        if feature.kind == "mean":
            return float(belief.mean)
        if feature.kind == "variance":
            return float(belief.variance)
        if feature.kind == "second_moment":
            return float(belief.variance + belief.mean**2)
        raise PreconditionError("moment features need a grid belief")
    p, w = belief.masses, belief.states
    if feature.kind == "mean":
        return float(p @ w)
    if feature.kind == "second_moment":
        return float(p @ (w * w))
    if feature.kind == "variance":
        mu = p @ w
        d = w - mu
        return float(p @ (d * d))
    return float(p @ feature.phi_on(w))


# ---------------------------------------------------------------------------
# perceived signal families
# ---------------------------------------------------------------------------


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 1:
        return np.ones(1)
    d = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


@dataclass(frozen=True, eq=False)
class SignalFamily:
    """Perceived signal densities ``densities[j, m] = q(signals[j] | states[m])``.

    Each state column integrates to one against ``weights`` (quadrature over
    the signal grid).
    """

    states: np.ndarray
    signals: np.ndarray
    densities: np.ndarray
    weights: np.ndarray
    _log: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        states = _frozen(self.states).reshape(-1)
        signals = _frozen(self.signals).reshape(-1)
        dens = _frozen(self.densities)
        wts = _frozen(self.weights).reshape(-1)
        if dens.shape != (signals.size, states.size):
            raise DimensionError(
                f"densities shape {dens.shape} != ({signals.size}, {states.size})"
            )
        if wts.size != signals.size:
            raise DimensionError("one quadrature weight per signal point required")
        if not (_strictly_increasing(states) and _strictly_increasing(signals)):
            raise PreconditionError("state and signal grids must be strictly increasing")
        if not np.all(np.isfinite(dens)) or np.any(dens < 0):
            raise PreconditionError("densities must be finite and nonnegative")
        if np.any(wts <= 0):
            raise PreconditionError("quadrature weights must be positive")
        col = wts @ dens
        bad = np.abs(col - 1.0) > TOL.family
        if np.any(bad):
            m = int(np.argmax(bad))
            raise PreconditionError(f"density for state index {m} integrates to {col[m]!r}")
        with np.errstate(divide="ignore"):
            log = np.log(dens)
        log.setflags(write=False)
        for name, val in (("states", states), ("signals", signals), ("densities", dens),
                          ("weights", wts), ("_log", log)):
            object.__setattr__(self, name, val)

    @classmethod
    def from_likelihood(cls, states, signals, likelihood, weights=None) -> "SignalFamily":
        """Build a family from unnormalized likelihood values; columns are rescaled to integrate to one.

        Rescaling a state column by a positive constant leaves every MLR
        cross-product inequality unchanged.
        """
        signals = np.asarray(signals, dtype=np.float64)
        lik = np.asarray(likelihood, dtype=np.float64)
        wts = trapezoid_weights(signals) if weights is None else np.asarray(weights, dtype=np.float64)
        col = wts @ lik
        if np.any(col <= 0):
            raise PreconditionError("a state has zero likelihood for every signal on the grid")
        return cls(states, signals, lik / col, wts)

    @classmethod
    def gaussian(cls, states, signals, noise_sd: float) -> "SignalFamily":
        """Location family ``s | w ~ N(w, noise_sd^2)`` restricted to the signal grid."""
        if not noise_sd > 0:
            raise PreconditionError("noise_sd must be positive")
        states = np.asarray(states, dtype=np.float64)
        signals = np.asarray(signals, dtype=np.float64)
        z = (signals[:, None] - states[None, :]) / noise_sd
        return cls.from_likelihood(states, signals, np.exp(-0.5 * z * z))

    @property
    def log_densities(self) -> np.ndarray:
        return self._log

    def index(self, s: float, strict: bool = False) -> int:
        """Grid index of signal ``s``; off-grid values snap to the nearest point unless ``strict``."""
        sig = self.signals
        j = int(np.searchsorted(sig, s))
        if j == 0:
            best = 0
        elif j == sig.size:
            best = sig.size - 1
        else:
            best = j if sig[j] - s < s - sig[j - 1] else j - 1
        if strict and abs(sig[best] - s) > TOL.snap * max(1.0, abs(s)):
            raise PreconditionError(f"signal {s!r} is not on the signal grid")
        return best

    def indices(self, s) -> np.ndarray:
        """Vectorized nearest-point snapping."""
        sig = self.signals
        s = np.asarray(s, dtype=np.float64)
        j = np.clip(np.searchsorted(sig, s), 1, sig.size - 1) if sig.size > 1 else np.zeros(s.shape, int)
        if sig.size == 1:
            return j
        left = sig[j - 1]
        right = sig[j]
        return np.where(right - s < s - left, j, j - 1)

    def likelihood(self, s: float, strict: bool = False) -> np.ndarray:
        return self.densities[self.index(s, strict)]

    def same_states(self, belief: GridBelief) -> bool:
        return belief.states.shape == self.states.shape and np.allclose(
            belief.states, self.states, rtol=0, atol=1e-12
        )


# ---------------------------------------------------------------------------
# updating rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bayesian:
    kind = "bayesian"


@dataclass(frozen=True, eq=False)
class Anchored:
    """Mixture ``tau * anchor + (1 - tau) * Bayes``; ``anchor=None`` anchors on the prior."""

    tau: float
    anchor: Belief | None = None
    kind = "anchored"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise PreconditionError(f"tau must lie in [0, 1], got {self.tau!r}")


@dataclass(frozen=True)
class Grether:
    chi0: float
    chi1: float
    kind = "grether"

    def __post_init__(self):
        if not (self.chi0 > 0 and self.chi1 > 0):
            raise PreconditionError(
                f"Grether parameters must be positive, got chi0={self.chi0!r}, chi1={self.chi1!r}"
            )


@dataclass(frozen=True)
class NoUpdate:
    kind = "none"


@dataclass(frozen=True)
class Drift:
    """Apply ``base``, then translate the resulting belief by ``shift``.

    Models information acquired outside the experiment; with the default
    ``NoUpdate`` base it shifts a control group's belief without any signal.
    """

    shift: float
    base: "UpdateRule" = NoUpdate()
    kind = "drift"


UpdateRule = Union[Bayesian, Anchored, Grether, NoUpdate, Drift]


def _check_family(prior: GridBelief, family: SignalFamily):
    if not isinstance(prior, GridBelief):
        raise PreconditionError("grid updating needs a GridBelief prior")
    if not family.same_states(prior):
        raise DimensionError("prior grid does not match the family's state grid")


def _tempered(prior: GridBelief, log_lik: np.ndarray, chi0: float, chi1: float) -> GridBelief:
    a = chi1 * log_lik + chi0 * prior.log_masses()
    top = a.max()
    if not np.isfinite(top):
        raise DegenerateEvidenceError("signal has zero likelihood under every state with prior mass")
    w = np.exp(a - top)
    return GridBelief(prior.states, w / w.sum())


def bayes_update(prior: GridBelief, family: SignalFamily, s: float, strict: bool = False) -> GridBelief:
    """Posterior proportional to ``q(s | w) p(w)``."""
    _check_family(prior, family)
    return _tempered(prior, family.log_densities[family.index(s, strict)], 1.0, 1.0)


def anchored_update(prior: GridBelief, family: SignalFamily, s: float, tau: float,
                    anchor: GridBelief, strict: bool = False) -> GridBelief:
    if not 0.0 <= tau <= 1.0:
        raise PreconditionError(f"tau must lie in [0, 1], got {tau!r}")
    if not isinstance(anchor, GridBelief) or not family.same_states(anchor):
        raise DimensionError("anchor must be a GridBelief on the family's state grid")
    if tau == 1.0:
        _check_family(prior, family)
        family.index(s, strict)
        return anchor
    post = bayes_update(prior, family, s, strict)
    if tau == 0.0:
        return post
    return GridBelief(prior.states, tau * anchor.masses + (1.0 - tau) * post.masses)


def grether_update(prior: GridBelief, family: SignalFamily, s: float, chi0: float, chi1: float,
                   strict: bool = False) -> GridBelief:
    """Posterior proportional to ``q(s | w)^chi1 p(w)^chi0`` with ``0^chi = 0``."""
    if not (chi0 > 0 and chi1 > 0):
        raise PreconditionError(f"Grether parameters must be positive, got ({chi0!r}, {chi1!r})")
    _check_family(prior, family)
    return _tempered(prior, family.log_densities[family.index(s, strict)], chi0, chi1)


def gaussian_posterior(prior: GaussianBelief, s: float, perceived_noise: float):
    """Conjugate update with signal variance ``perceived_noise``.

    Returns ``(posterior, r)`` where ``r`` is the learning rate, the weight
    on the signal in the posterior mean.
    """
    if not perceived_noise > 0:
        raise PreconditionError("perceived_noise must be positive")
    r = prior.variance / (prior.variance + perceived_noise)
    mean = r * s + (1.0 - r) * prior.mean
    return GaussianBelief(mean, (1.0 - r) * prior.variance), r


def gaussian_grether(prior: GaussianBelief, s: float, perceived_noise: float,
                     chi0: float, chi1: float) -> GaussianBelief:
    """Grether rule in the Gaussian model: tempering scales each precision."""
    prec_prior = chi0 / prior.variance
    prec_sig = chi1 / perceived_noise
    prec = prec_prior + prec_sig
    return GaussianBelief((prec_prior * prior.mean + prec_sig * s) / prec, 1.0 / prec)


def _gaussian_mixture(tau: float, a: GaussianBelief, b: GaussianBelief) -> GaussianBelief:
    """Moment-matched ``tau * a + (1 - tau) * b``; mean and variance are exact."""
    mean = tau * a.mean + (1 - tau) * b.mean
    second = tau * (a.variance + a.mean**2) + (1 - tau) * (b.variance + b.mean**2)
    return GaussianBelief(mean, max(second - mean * mean, np.finfo(float).tiny))


def apply_rule(rule: UpdateRule, prior: Belief, channel, s: float | None, strict: bool = False) -> Belief:
    """Update ``prior`` under ``rule``.

    ``channel`` is a :class:`SignalFamily` for grid priors and the perceived
    signal variance for Gaussian priors. ``s=None`` means no signal.
    """
    if isinstance(rule, NoUpdate):
        return prior
    if isinstance(rule, Drift):
        post = apply_rule(rule.base, prior, channel, s, strict)
        if isinstance(post, GaussianBelief):
            return GaussianBelief(post.mean + rule.shift, post.variance)
        return post.shifted(rule.shift)
    if s is None:
        raise PreconditionError(f"{rule.kind} rule needs a signal")
    if isinstance(prior, GaussianBelief):
        if isinstance(rule, Bayesian):
            return gaussian_posterior(prior, s, channel)[0]
        if isinstance(rule, Grether):
            return gaussian_grether(prior, s, channel, rule.chi0, rule.chi1)
        if isinstance(rule, Anchored):
            anchor = prior if rule.anchor is None else rule.anchor
            if not isinstance(anchor, GaussianBelief):
                raise PreconditionError("Gaussian agents need a Gaussian anchor")
            return _gaussian_mixture(rule.tau, anchor, gaussian_posterior(prior, s, channel)[0])
    else:
        if isinstance(rule, Bayesian):
            return bayes_update(prior, channel, s, strict)
        if isinstance(rule, Grether):
            return grether_update(prior, channel, s, rule.chi0, rule.chi1, strict)
        if isinstance(rule, Anchored):
            anchor = prior if rule.anchor is None else rule.anchor
            return anchored_update(prior, channel, s, rule.tau, anchor, strict)
    raise PreconditionError(f"unsupported rule {rule!r}")


# ---------------------------------------------------------------------------
# structural checks
# ---------------------------------------------------------------------------


@dataclass
class MLRResult:
    holds: bool
    violations: list
    n_violations: int


def mlr_check(family: SignalFamily, max_violations: int = 100, tol: float | None = None) -> MLRResult:
    """Exhaustive monotone-likelihood-ratio check in cross-product form.

    For every ``s_j < s_j'`` and ``w_m < w_m'`` requires
    ``q(s_j'|w_m') q(s_j|w_m) >= q(s_j|w_m') q(s_j'|w_m) - tol``. Violations
    are reported as index quadruples ``(j, j', m, m')``.
    """
    tol = TOL.mlr if tol is None else tol
    found, total = _backend.mlr_violations(family.densities, float(tol), int(max_violations))
    return MLRResult(total == 0, [tuple(int(v) for v in row) for row in found], int(total))


@dataclass
class MonotonicityResult:
    holds: bool
    worst_violation: float
    features: np.ndarray


def posterior_feature_path(prior: GridBelief, rule: UpdateRule, family: SignalFamily,
                           feature: Feature) -> np.ndarray:
    """Posterior feature at every point of the signal grid."""
    return np.array([
        feature_value(apply_rule(rule, prior, family, float(s)), feature) for s in family.signals
    ])


def signal_monotonicity_check(prior: GridBelief, rule: UpdateRule, family: SignalFamily,
                              feature: Feature, tol: float | None = None) -> MonotonicityResult:
    """Check that the posterior feature is nondecreasing along the signal grid."""
    tol = TOL.probability if tol is None else tol
    path = posterior_feature_path(prior, rule, family, feature)
    drops = -np.diff(path)
    worst = float(max(drops.max(initial=0.0), 0.0))
    return MonotonicityResult(worst <= tol, worst, path)


def posterior_cdfs(prior: GridBelief, rule: UpdateRule, family: SignalFamily) -> np.ndarray:
    """Posterior CDFs over states, one row per signal grid point."""
    rows = [np.cumsum(apply_rule(rule, prior, family, float(s)).masses) for s in family.signals]
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_grid_belief_csv(belief: GridBelief, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "mass"])
        for s, p in zip(belief.states, belief.masses):
            w.writerow([repr(float(s)), repr(float(p))])


def read_grid_belief_csv(path) -> GridBelief:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["state", "mass"]:
        raise DataSchemaError("grid belief CSV header must be: state,mass")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise DataSchemaError(f"non-numeric value: {exc}") from None
    return GridBelief(data[:, 0], data[:, 1])


def write_signal_family_csv(family: SignalFamily, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["signal", "weight"] + [repr(float(s)) for s in family.states])
        for s, wt, row in zip(family.signals, family.weights, family.densities):
            w.writerow([repr(float(s)), repr(float(wt))] + [repr(float(v)) for v in row])


def read_signal_family_csv(path) -> SignalFamily:
    """Header ``signal,weight,<state_1>,...,<state_M>``; one row per signal point."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:2]] != ["signal", "weight"] or len(rows[0]) < 3:
        raise DataSchemaError("signal family CSV header must be: signal,weight,<state values...>")
    try:
        states = np.array([float(c) for c in rows[0][2:]])
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise DataSchemaError(f"non-numeric value: {exc}") from None
    if data.ndim != 2 or data.shape[1] != states.size + 2:
        raise DataSchemaError("every row needs signal, weight and one density per state")
    return SignalFamily(states, data[:, 0], data[:, 2:], data[:, 1])
