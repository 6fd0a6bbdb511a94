"""Feature-action functions, partial effects and within-agent APEs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import PchipInterpolator

from .beliefs import GridBelief
from .errors import DomainError, PreconditionError


def _out(x, scalar: bool):
    return float(x) if scalar else x


def fd_step(v):
    return np.maximum(1e-6, 1e-6 * np.abs(v))


@dataclass(frozen=True)
class AffineInFeature:
    intercept: float
    slope: float
    kind = "affine"


@dataclass(frozen=True, eq=False)
class Polynomial:
    coefficients: tuple
    kind = "polynomial"

    def __post_init__(self):
        c = tuple(float(x) for x in self.coefficients)
        if len(c) == 0:
            raise PreconditionError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients", c)


class MonotoneLink:
    """Strictly increasing map ``m`` from actions to the index scale, as a PCHIP spline.

    The action is ``m^{-1}(index)``; inversion is by bisection on the knot
    range.
    """

    def __init__(self, y_knots, m_knots, name: str = "custom"):
        y = np.asarray(y_knots, dtype=np.float64)
        mv = np.asarray(m_knots, dtype=np.float64)
        if y.size < 2 or y.shape != mv.shape:
            raise PreconditionError("link needs at least two matching knots")
        if not (np.all(np.diff(y) > 0) and np.all(np.diff(mv) > 0)):
            raise PreconditionError("link knots must be strictly increasing in both coordinates")
        self.name = name
        self._m = PchipInterpolator(y, mv, extrapolate=False)
        self._dm = self._m.derivative()
        self.lo, self.hi = float(y[0]), float(y[-1])
        self.m_lo, self.m_hi = float(mv[0]), float(mv[-1])
        probe = np.linspace(self.lo, self.hi, 20 * y.size + 1)
        if np.any(self._dm(probe) <= 0) or np.any(np.diff(self._m(probe)) <= 0):
            raise PreconditionError("link is not strictly increasing on its knot range")

    @classmethod
    def identity(cls, lo: float = -1e3, hi: float = 1e3) -> "MonotoneLink":
        y = np.linspace(lo, hi, 3)
        return cls(y, y, "identity")

    @classmethod
    def logistic(cls, eps: float = 1e-4, knots: int = 401) -> "MonotoneLink":
        """``m(y) = log(y / (1 - y))`` on ``[eps, 1 - eps]``, so actions are logistic in the index."""
        u = np.linspace(-1.0, 1.0, knots)
        # denser knots near the boundaries where the logit is steep
        y = 0.5 + 0.5 * np.sin(0.5 * np.pi * u) * (1 - 2 * eps)
        return cls(y, np.log(y / (1 - y)), "logistic")

    def __call__(self, y):
        return self._m(y)

    def derivative(self, y):
        return self._dm(y)

    def inverse(self, a):
        a = np.asarray(a, dtype=np.float64)
        bad = (a < self.m_lo) | (a > self.m_hi) | ~np.isfinite(a)
        if np.any(bad):
            raise DomainError(
                f"index outside the link's invertible range [{self.m_lo}, {self.m_hi}]",
                rows=np.flatnonzero(np.atleast_1d(bad)),
            )
        lo = np.full(a.shape, self.lo)
        hi = np.full(a.shape, self.hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.all((mid <= lo) | (mid >= hi)):
                break
            below = self._m(mid) < a
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class Link:
    """Quadratic-loss action ``m^{-1}(sum_k theta_k h_k)`` with non-focal features frozen."""

    link: MonotoneLink
    theta: tuple
    focal: int = 0
    frozen: tuple = ()
    kind = "link"

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        frozen = tuple(float(h) for h in self.frozen)
        if not 0 <= self.focal < len(theta):
            raise PreconditionError("focal index out of range")
        if len(frozen) != len(theta) - 1:
            raise PreconditionError(f"need {len(theta) - 1} frozen feature values")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "frozen", frozen)

    @property
    def offset(self) -> float:
        others = [t for k, t in enumerate(self.theta) if k != self.focal]
        return float(np.dot(others, self.frozen)) if others else 0.0

    def index(self, v):
        return self.theta[self.focal] * np.asarray(v, dtype=np.float64) + self.offset


@dataclass(frozen=True, eq=False)
class BinaryLatent:
    """Average action ``P(xi <= v)`` for a binary choice with outside option ``xi``."""

    thresholds: GridBelief
    kind = "binary_latent"


ActionFunction = Union[AffineInFeature, Polynomial, Link, BinaryLatent]


def outcome(fn: ActionFunction, v):
    """Action taken at feature value ``v`` (scalar or array)."""
    scalar = np.ndim(v) == 0
    v = np.asarray(v, dtype=np.float64)
    if isinstance(fn, AffineInFeature):
        y = fn.intercept + fn.slope * v
    elif isinstance(fn, Polynomial):
        y = P.polyval(v, fn.coefficients)
    elif isinstance(fn, Link):
        y = fn.link.inverse(fn.index(v))
    elif isinstance(fn, BinaryLatent):
        cdf = np.cumsum(fn.thresholds.masses)
        k = np.searchsorted(fn.thresholds.states, v, side="right")
        y = np.where(k > 0, cdf[np.maximum(k - 1, 0)], 0.0)
        y = np.minimum(y, 1.0)
    else:
        raise PreconditionError(f"unknown action function {fn!r}")
    return _out(y, scalar)


def partial_effect(fn: ActionFunction, v):
    """Derivative of :func:`outcome` in the feature value."""
    scalar = np.ndim(v) == 0
    v = np.asarray(v, dtype=np.float64)
    if isinstance(fn, AffineInFeature):
        d = np.full(v.shape, float(fn.slope))
    elif isinstance(fn, Polynomial):
        d = P.polyval(v, P.polyder(fn.coefficients)) if len(fn.coefficients) > 1 else np.zeros(v.shape)
    elif isinstance(fn, Link):
        y = fn.link.inverse(fn.index(v))
        d = fn.theta[fn.focal] / fn.link.derivative(y)
    else:
        h = fd_step(v)
        d = (outcome(fn, v + h) - outcome(fn, v - h)) / (2 * h)
    return _out(d, scalar)


def within_agent_ape(fn: ActionFunction, a, b):
    """Average of the partial effect over the segment between ``a`` and ``b``.

    Equals the secant slope ``(Y(b) - Y(a)) / (b - a)``; when ``a == b`` it
    falls back to the point partial effect.
    """
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    same = a == b
    out = np.empty(a.shape)
    if np.any(~same):
        aa, bb = a[~same], b[~same]
        out[~same] = (outcome(fn, bb) - outcome(fn, aa)) / (bb - aa)
    if np.any(same):
        out[same] = partial_effect(fn, a[same])
    return _out(out, scalar)


def batch_outcomes(fns, v) -> np.ndarray:
    """``outcome(fns[i], v[i])`` for every agent; affine agents are vectorized."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty(v.shape)
    affine = np.array([isinstance(f, AffineInFeature) for f in fns], dtype=bool)
    if affine.any():
        idx = np.flatnonzero(affine)
        c0 = np.array([fns[i].intercept for i in idx])
        c1 = np.array([fns[i].slope for i in idx])
        out[idx] = c0 + c1 * v[idx]
    for i in np.flatnonzero(~affine):
        out[i] = outcome(fns[i], v[i])
    return out


def batch_ape(fns, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty(a.shape)
    affine = np.array([isinstance(f, AffineInFeature) for f in fns], dtype=bool)
    if affine.any():
        idx = np.flatnonzero(affine)
        out[idx] = np.array([fns[i].slope for i in idx], dtype=np.float64)
    for i in np.flatnonzero(~affine):
        out[i] = within_agent_ape(fns[i], a[i], b[i])
    return out


def action_from_config(cfg: dict) -> ActionFunction:
    kind = cfg["kind"]
    if kind == "affine":
        return AffineInFeature(float(cfg.get("intercept", 0.0)), float(cfg["slope"]))
    if kind == "polynomial":
        return Polynomial(tuple(cfg["coefficients"]))
    if kind == "link":
        name = cfg.get("link", "identity")
        if name == "identity":
            link = MonotoneLink.identity()
        elif name == "logistic":
            link = MonotoneLink.logistic()
        else:
            link = MonotoneLink(cfg["y_knots"], cfg["m_knots"])
        return Link(link, tuple(cfg["theta"]), int(cfg.get("focal", 0)), tuple(cfg.get("frozen", ())))
    if kind == "binary_latent":
        return BinaryLatent(GridBelief(cfg["thresholds"], cfg["masses"]))
    raise PreconditionError(f"unknown action kind {kind!r}")
