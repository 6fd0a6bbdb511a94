import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infotsls import _backend, _pykernels

try:
    from infotsls import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_selection():
    forced = os.environ.get("INFOTSLS_PURE_PYTHON", "") not in ("", "0")
    expected = "python" if forced or _ckernels is None else "cython"
    assert _backend.BACKEND == expected


def _reconstruct(qr, tau, perm):
    n, k = qr.shape
    q = np.eye(n)
    # Q = H_0 H_1 ... H_{k-1}
    for j in reversed(range(min(n, k))):
        v = np.zeros(n)
        v[j] = 1.0
        v[j + 1:] = qr[j + 1:, j]
        q = q - tau[j] * np.outer(v, v @ q)
    r = np.triu(qr)
    return q, r


@pytest.mark.parametrize("mod", [_pykernels, pytest.param(_ckernels, marks=needs_c)])
class TestQR:
    def test_factorization_reproduces_permuted_matrix(self, mod, rng):
        a = rng.normal(size=(30, 5))
        qr, tau, perm = mod.qr_pivoted(a)
        q, r = _reconstruct(qr, tau, perm)
        np.testing.assert_allclose(q @ r, a[:, perm], atol=1e-12)
        np.testing.assert_allclose(q.T @ q, np.eye(30), atol=1e-12)

    def test_diagonal_nonincreasing(self, mod, rng):
        a = rng.normal(size=(40, 6)) * np.array([1, 100, 0.1, 10, 1, 5])
        qr, _, _ = mod.qr_pivoted(a)
        d = np.abs(np.diag(qr))
        assert np.all(np.diff(d) <= 1e-12 * d[0])

    def test_least_squares_matches_lstsq(self, mod, rng):
        a = rng.normal(size=(50, 4))
        y = rng.normal(size=50)
        qr, tau, perm = mod.qr_pivoted(a)
        qty = mod.apply_qt(qr, tau, y)
        z = np.linalg.solve(np.triu(qr[:4]), qty[:4])
        coef = np.empty(4)
        coef[perm] = z
        np.testing.assert_allclose(coef, np.linalg.lstsq(a, y, rcond=None)[0], atol=1e-12)

    def test_apply_qt_handles_matrices(self, mod, rng):
        a = rng.normal(size=(20, 3))
        y = rng.normal(size=(20, 2))
        qr, tau, _ = mod.qr_pivoted(a)
        both = mod.apply_qt(qr, tau, y)
        for c in range(2):
            np.testing.assert_allclose(both[:, c], mod.apply_qt(qr, tau, y[:, c]), atol=1e-14)

    def test_zero_column_gets_zero_pivot(self, mod):
        a = np.column_stack([np.ones(5), np.zeros(5)])
        qr, tau, perm = mod.qr_pivoted(a)
        assert perm.tolist() == [0, 1]
        assert qr[1, 1] == 0.0 and tau[1] == 0.0


@needs_c
class TestParity:
    def test_qr_matches(self, rng):
        a = rng.normal(size=(25, 4))
        for x, y in zip(_pykernels.qr_pivoted(a), _ckernels.qr_pivoted(a)):
            np.testing.assert_allclose(x, y, atol=1e-12)

    def test_posterior_moments_match(self, rng):
        n, m = 50, 30
        lp = np.log(rng.dirichlet(np.ones(m), size=n))
        ll = rng.normal(size=(n, m))
        chi0 = rng.uniform(0.5, 2, n)
        chi1 = rng.uniform(0.5, 2, n)
        states = np.linspace(-1, 1, m)
        phi = states**3
        np.testing.assert_allclose(
            _pykernels.posterior_moments(lp, ll, chi0, chi1, states, phi),
            _ckernels.posterior_moments(lp, ll, chi0, chi1, states, phi), rtol=1e-12, atol=1e-14,
        )

    @given(st.integers(0, 2**32 - 1))
    def test_mlr_violations_match(self, seed):
        r = np.random.default_rng(seed)
        q = r.uniform(0, 1, size=(6, 5))
        a = _pykernels.mlr_violations(q, 1e-12, 1000)
        b = _ckernels.mlr_violations(q, 1e-12, 1000)
        assert a[1] == b[1]
        np.testing.assert_array_equal(a[0], b[0])


@pytest.mark.parametrize("mod", [_pykernels, pytest.param(_ckernels, marks=needs_c)])
class TestPosteriorMoments:
    def test_matches_direct_computation(self, mod, rng):
        m = 12
        states = np.linspace(0, 3, m)
        prior = rng.dirichlet(np.ones(m))
        lik = rng.uniform(0.1, 1.0, m)
        post = prior**1.5 * lik**0.7
        post /= post.sum()
        mean = post @ states
        out = mod.posterior_moments(np.log(prior)[None], np.log(lik)[None], [1.5], [0.7], states, states**2)
        np.testing.assert_allclose(out[0], [mean, post @ (states - mean) ** 2, post @ states**2], rtol=1e-12)

    def test_dead_rows_are_nan(self, mod):
        with np.errstate(divide="ignore"):
            lp = np.log(np.array([[0.5, 0.5, 0.0]]))
            ll = np.log(np.array([[0.0, 0.0, 1.0]]))
        out = mod.posterior_moments(lp, ll, [1.0], [1.0], np.arange(3.0), np.arange(3.0))
        assert np.all(np.isnan(out))


@pytest.mark.parametrize("mod", [_pykernels, pytest.param(_ckernels, marks=needs_c)])
def test_mlr_violation_count_matches_brute_force(mod, rng):
    q = rng.uniform(size=(5, 4))
    expected = []
    for j in range(5):
        for j2 in range(j + 1, 5):
            for m in range(4):
                for m2 in range(m + 1, 4):
                    if q[j2, m2] * q[j, m] < q[j, m2] * q[j2, m] - 1e-12:
                        expected.append((j, j2, m, m2))
    found, total = mod.mlr_violations(q, 1e-12, 3)
    assert total == len(expected)
    assert [tuple(r) for r in found] == expected[:3]
