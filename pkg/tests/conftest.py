import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from infotsls import AffineInFeature, Agent, Bayesian, GaussianBelief, NoUpdate
from infotsls.experiment import Records

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def gaussian_agents(mu, var, noise, slope, intercept=None, rules=None, covariates=None):
    """Gaussian agents with Bayesian treatment updating and NoUpdate control by default."""
    n = len(mu)
    intercept = np.zeros(n) if intercept is None else intercept
    rules = rules or {"C": NoUpdate(), "T": Bayesian()}
    return [
        Agent(i, GaussianBelief(float(mu[i]), float(var[i])), dict(rules), float(noise[i]),
              AffineInFeature(float(intercept[i]), float(slope[i])),
              np.zeros(0) if covariates is None else covariates[i])
        for i in range(n)
    ]


def enumerated_records(panel):
    """Stack all 2^n assignment patterns: group membership is exactly balanced per agent."""
    n = panel.n
    g, h = panel.groups
    patterns = np.array(list(itertools.product([False, True], repeat=n)))
    treated = patterns.reshape(-1)
    rep = lambda v: None if v is None else np.tile(v, len(patterns))  # noqa: E731
    post = np.where(treated, rep(panel.feature[h]), rep(panel.feature[g]))
    out = np.where(treated, rep(panel.outcome[h]), rep(panel.outcome[g]))
    if panel.design == "passive":
        signal = np.where(treated, rep(panel.treatment_signal), np.nan)
    else:
        signal = np.where(treated, rep(panel.signal_high), rep(panel.signal_low))
    return Records(panel.design, np.arange(treated.size), np.where(treated, h, g), signal,
                   rep(panel.prior_feature), post, out, np.tile(panel.covariates, (len(patterns), 1)),
                   rep(panel.treatment_signal), rep(panel.signal_low), rep(panel.signal_high))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE.setdefault(number, []).append((title, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        for title, ok, detail in _ACCEPTANCE[number]:
            status = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else ""))
