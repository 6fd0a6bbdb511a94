import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from infotsls.actions import (
    AffineInFeature,
    BinaryLatent,
    Link,
    MonotoneLink,
    Polynomial,
    action_from_config,
    batch_ape,
    batch_outcomes,
    outcome,
    partial_effect,
    within_agent_ape,
)
from infotsls.beliefs import GridBelief
from infotsls.errors import DomainError, PreconditionError

finite = st.floats(-5, 5, allow_nan=False)


def logistic_action(theta=1.5, offset=0.2):
    return Link(MonotoneLink.logistic(), (theta, 1.0), 0, (offset,))


FUNCTIONS = [
    AffineInFeature(1.0, 2.0),
    Polynomial((0.5, -1.0, 0.3, 0.05)),
    logistic_action(),
    Link(MonotoneLink([-10.0, -5.0, 0.0, 5.0, 10.0], [-20.0, -9.0, 0.0, 5.0, 9.0]), (0.7,)),
]


class TestOutcome:
    def test_affine(self):
        assert outcome(AffineInFeature(1.0, 2.0), 3.0) == 7.0

    def test_polynomial(self):
        assert outcome(Polynomial((1.0, 0.0, 2.0)), 3.0) == 19.0

    def test_binary_latent_counts_thresholds(self):
        fn = BinaryLatent(GridBelief.uniform([0.0, 1.0, 2.0, 3.0]))
        assert outcome(fn, 1.5) == 0.5
        assert outcome(fn, -1.0) == 0.0
        assert outcome(fn, 3.0) == 1.0

    @given(st.floats(-3, 3))
    def test_identity_link_matches_affine(self, v):
        fn = Link(MonotoneLink.identity(), (2.5,))
        assert outcome(fn, v) == pytest.approx(outcome(AffineInFeature(0.0, 2.5), v), abs=1e-9)

    def test_frozen_features_shift_index(self):
        fn = Link(MonotoneLink.identity(), (2.0, 3.0), focal=1, frozen=(1.0,))
        assert outcome(fn, 1.0) == pytest.approx(5.0, abs=1e-9)

    def test_link_domain(self):
        with pytest.raises(DomainError):
            outcome(logistic_action(theta=100.0), 1.0)

    def test_vectorized(self):
        v = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(outcome(Polynomial((0.0, 0.0, 1.0)), v), v**2)


class TestPartialEffect:
    def test_affine(self):
        np.testing.assert_array_equal(partial_effect(AffineInFeature(3.0, -1.5), np.arange(3.0)), -1.5)

    def test_square(self):
        assert partial_effect(Polynomial((0.0, 0.0, 1.0)), 2.0) == 4.0

    def test_constant_polynomial(self):
        assert partial_effect(Polynomial((4.0,)), 1.0) == 0.0

    @pytest.mark.parametrize("fn", FUNCTIONS, ids=["affine", "poly", "logistic", "pchip"])
    @given(v=st.floats(-1.5, 1.5))
    def test_matches_finite_differences(self, fn, v):
        h = 1e-5
        fd = (outcome(fn, v + h) - outcome(fn, v - h)) / (2 * h)
        assert partial_effect(fn, v) == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_binary_latent_uses_finite_differences(self):
        states = np.linspace(-3, 3, 601)
        fn = BinaryLatent(GridBelief.discretized_normal(states, 0.0, 1.0))
        assert partial_effect(fn, 0.5) >= 0.0


class TestWithinAgentAPE:
    def test_constant_effect(self):
        assert within_agent_ape(AffineInFeature(0.0, 3.0), -1.0, 4.0) == 3.0

    def test_secant_of_square(self):
        assert within_agent_ape(Polynomial((0.0, 0.0, 1.0)), 0.0, 2.0) == 2.0

    def test_degenerate_interval(self):
        assert within_agent_ape(Polynomial((0.0, 0.0, 1.0)), 1.0, 1.0) == 2.0

    @pytest.mark.parametrize("fn", FUNCTIONS, ids=["affine", "poly", "logistic", "pchip"])
    @given(a=st.floats(-1.5, 1.5), b=st.floats(-1.5, 1.5))
    def test_ftc_identity_and_symmetry(self, fn, a, b):
        assume(a != b)
        ape = within_agent_ape(fn, a, b)
        assert np.sign(b - a) * abs(b - a) * ape == pytest.approx(outcome(fn, b) - outcome(fn, a),
                                                                 abs=1e-10)
        assert within_agent_ape(fn, b, a) == ape

    def test_ape_averages_the_derivative(self):
        fn = Polynomial((0.0, 1.0, -0.5, 0.2))
        grid = np.linspace(-1.0, 2.0, 200001)
        avg = np.trapezoid(partial_effect(fn, grid), grid) / 3.0
        assert within_agent_ape(fn, -1.0, 2.0) == pytest.approx(avg, rel=1e-9)


class TestBinaryLatent:
    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.lists(finite, min_size=2, max_size=20))
    def test_nondecreasing_and_bounded(self, masses, probes):
        states = np.arange(len(masses), dtype=float)
        fn = BinaryLatent(GridBelief.from_weights(states, masses))
        v = np.sort(np.array(probes))
        y = outcome(fn, v)
        assert np.all(np.diff(y) >= 0)
        assert np.all((y >= 0) & (y <= 1))


class TestMonotoneLink:
    def test_rejects_decreasing_knots(self):
        with pytest.raises(PreconditionError):
            MonotoneLink([0.0, 1.0], [1.0, 0.0])

    def test_inverse_round_trip(self):
        link = MonotoneLink.logistic()
        y = np.array([0.01, 0.3, 0.5, 0.9])
        np.testing.assert_allclose(link.inverse(link(y)), y, atol=1e-12)

    def test_logistic_shape(self):
        link = MonotoneLink.logistic()
        assert link.inverse(0.0) == pytest.approx(0.5, abs=1e-12)
        assert link.inverse(np.log(3.0)) == pytest.approx(0.75, abs=1e-5)

    def test_link_validation(self):
        with pytest.raises(PreconditionError):
            Link(MonotoneLink.identity(), (1.0, 2.0), 0, ())
        with pytest.raises(PreconditionError):
            Link(MonotoneLink.identity(), (1.0,), 1, ())


class TestBatch:
    def test_batch_matches_scalar(self):
        fns = FUNCTIONS * 3
        r = np.random.default_rng(0)
        a = r.uniform(-1, 1, len(fns))
        b = a + r.uniform(0.1, 0.5, len(fns))
        b[2] = a[2]
        np.testing.assert_allclose(batch_outcomes(fns, a), [outcome(f, x) for f, x in zip(fns, a)])
        np.testing.assert_allclose(batch_ape(fns, a, b),
                                   [within_agent_ape(f, x, y) for f, x, y in zip(fns, a, b)])


class TestFromConfig:
    @pytest.mark.parametrize("cfg, v, expected", [
        ({"kind": "affine", "intercept": 1.0, "slope": 2.0}, 3.0, 7.0),
        ({"kind": "polynomial", "coefficients": [0.0, 0.0, 1.0]}, 3.0, 9.0),
        ({"kind": "link", "link": "identity", "theta": [2.0]}, 1.5, 3.0),
        ({"kind": "binary_latent", "thresholds": [0.0, 1.0], "masses": [0.5, 0.5]}, 0.5, 0.5),
    ])
    def test_kinds(self, cfg, v, expected):
        assert outcome(action_from_config(cfg), v) == pytest.approx(expected, abs=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(PreconditionError):
            action_from_config({"kind": "cubic"})
