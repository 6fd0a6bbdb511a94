"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel is run on identical inputs under both backends. The table reports
the best wall time over ``--repeat`` runs and the speedup of the compiled
version. Results are also checked for agreement.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from infotsls import _pykernels

try:
    from infotsls import _ckernels
except ImportError:
    _ckernels = None


def posterior_case(rng, scale):
    n_agents, n_states = int(2000 * scale), 401
    states = np.linspace(-8, 8, n_states)
    log_prior = -0.5 * (states[None, :] - rng.normal(size=(n_agents, 1))) ** 2
    log_lik = -0.5 * (rng.normal(size=(n_agents, 1)) - states[None, :]) ** 2
    chi0 = rng.uniform(0.5, 1.5, n_agents)
    chi1 = rng.uniform(0.5, 1.5, n_agents)
    return "posterior_moments", (log_prior, log_lik, chi0, chi1, states, states.copy())


def mlr_case(rng, scale):
    n = int(150 * scale)
    states = np.linspace(-3, 3, n)
    signals = np.linspace(-6, 6, n)
    q = np.exp(-0.5 * (signals[:, None] - states[None, :]) ** 2)
    return "mlr_violations", (q, 1e-12, 10)


def qr_case(rng, scale):
    return "qr_pivoted", (rng.normal(size=(int(20000 * scale), 12)),)


def apply_case(rng, scale):
    a = rng.normal(size=(int(20000 * scale), 12))
    qr, tau, _ = _pykernels.qr_pivoted(a)
    return "apply_qt", (qr, tau, rng.normal(size=a.shape[0]))


CASES = (posterior_case, mlr_case, qr_case, apply_case)


def _first_array(result):
    return result[0] if isinstance(result, tuple) else result


def run(repeat: int, scale: float) -> list[tuple]:
    rng = np.random.default_rng(0)
    rows = []
    for make in CASES:
        name, args = make(rng, scale)
        py = getattr(_pykernels, name)
        t_py = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        if _ckernels is None:
            rows.append((name, t_py, float("nan"), float("nan"), True))
            continue
        c = getattr(_ckernels, name)
        t_c = min(timeit.repeat(lambda: c(*args), number=1, repeat=repeat))
        agree = np.allclose(_first_array(py(*args)), _first_array(c(*args)), rtol=1e-9, atol=1e-9,
                            equal_nan=True)
        rows.append((name, t_py, t_c, t_py / t_c, agree))
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiplier on problem sizes")
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels unavailable; timing the numpy fallback only", file=sys.stderr)
    print(f"{'kernel':<20}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}  agree")
    for name, t_py, t_c, speedup, agree in run(args.repeat, args.scale):
        print(f"{name:<20}{t_py:>12.4f}{t_c:>12.4f}{speedup:>10.2f}  {agree}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
