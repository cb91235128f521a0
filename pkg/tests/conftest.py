from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from mtpsnmm.simulation import (
    LongDgpParams,
    PointDgpParams,
    gen_longitudinal_dgp,
    gen_point_dgp,
)

POINT_OUTCOME = ["1", "L", "L^2", "A", "A*L"]
POINT_TREATMENT = ["1", "L", "L^2"]


@pytest.fixture(scope="session")
def point_params() -> PointDgpParams:
    return PointDgpParams()


@pytest.fixture(scope="session")
def long_params() -> LongDgpParams:
    return LongDgpParams()


@pytest.fixture(scope="session")
def point_panel(point_params):
    return gen_point_dgp(point_params, 2000, seed=11)


@pytest.fixture(scope="session")
def long_panel(long_params):
    return gen_longitudinal_dgp(long_params, 2000, seed=12)


def ols_with_se(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Textbook OLS coefficients and homoskedastic standard errors."""
    xtx_inv = np.linalg.inv(x.T @ x)
    coef = xtx_inv @ x.T @ y
    resid = y - x @ coef
    s2 = resid @ resid / (x.shape[0] - x.shape[1])
    return coef, np.sqrt(np.diag(xtx_inv) * s2)


def normal_expectation(fn, mean: np.ndarray, sd: float, nodes: int = 60) -> np.ndarray:
    """``E[fn(A)]`` for ``A ~ N(mean_i, sd^2)`` per row, by Gauss-Hermite quadrature.

    ``fn`` maps an ``(n,)`` array of treatment values to an ``(n, ...)`` array.
    """
    x, w = hermegauss(nodes)
    w = w / np.sqrt(2 * np.pi)
    total = 0.0
    for xk, wk in zip(x, w):
        total = total + wk * fn(mean + sd * xk)
    return total


def mobility_like_csv(path: Path, n: int = 600, seed: int = 5) -> Path:
    """Synthetic county-style data: an integer modifier in 1..9, one extra covariate,
    a continuous exposure and an outcome whose response to the exposure depends on
    the modifier."""
    rng = np.random.default_rng(seed)
    ruc = rng.integers(1, 10, size=n).astype(float)
    ruc[:9] = np.arange(1, 10)
    base = rng.normal(size=n)
    mob = -20.0 + 1.0 * ruc + 2.0 * base + 5.0 * rng.normal(size=n)
    y = 10.0 + 0.5 * base + 0.3 * ruc + (0.2 - 0.02 * ruc) * mob + rng.normal(size=n)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["county", "ruc", "base", "mobility", "incidence"])
        for i in range(n):
            w.writerow([f"c{i:04d}", int(ruc[i]), repr(float(base[i])), repr(float(mob[i])), repr(float(y[i]))])
    return path


MOBILITY_CONFIG = {
    "layout": "point",
    "columns": {
        "id": "county",
        "treatment": "mobility",
        "outcome": "incidence",
        "covariates": ["ruc", "base"],
        "modifiers": ["ruc"],
    },
    "policy": {"kind": "shift", "delta": -5},
    "estimator": "orthogonal",
    "folds": 5,
    "seed": 3,
}


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


ORTHO_EPS = (0.2, 0.1, 0.05)
ORTHO_SEED = 20261015


def delta_mu(h, a):
    """Direction in which the outcome regression is perturbed."""
    return np.sin(a) + 0.3 * np.asarray(h["L"]) * a


def delta_m(h):
    """Direction in which the treatment mean is perturbed."""
    return 0.5 + 0.3 * np.asarray(h["L"])


def population_scores(params, eps: float, perturb_mu: bool = True, perturb_m: bool = True,
                      n: int = 100_000, seed: int = ORTHO_SEED) -> dict[str, np.ndarray]:
    """Mean orthogonal and outcome-regression moments at the true blip parameter.

    ``L`` is sampled once, ``A | L`` is integrated out by quadrature and ``Y`` is
    replaced by its conditional mean, so the only randomness is in ``L``.
    """
    from mtpsnmm.nuisance import TreatmentModel
    from mtpsnmm.point import score_point
    from mtpsnmm.simulation import make_rng, std_normal

    l = params.sd_L * std_normal(make_rng(seed), n)
    h = {"L": l}
    s = np.column_stack([np.ones(n), l])
    psi = params.truth()
    delta = params.delta
    c_mu = eps if perturb_mu else 0.0
    c_m = eps if perturb_m else 0.0

    def mu_hat(hh, a):
        return params.outcome_mean(hh, a) + c_mu * delta_mu(hh, a)

    model = TreatmentModel(lambda hh: params.treatment_mean(hh) + c_m * delta_m(hh), params.sd_A)

    def orthogonal(a):
        return score_point(h, a, params.outcome_mean(h, a), s, delta, psi, mu_hat, model).phi

    def outcome_regression(a):
        resid = params.outcome_mean(h, a) - mu_hat(h, a + delta) + delta * (s @ psi)
        return s * resid[:, None]

    mean = params.treatment_mean(h)
    return {
        "orthogonal": normal_expectation(orthogonal, mean, params.sd_A).mean(axis=0),
        "outcome_regression": normal_expectation(outcome_regression, mean, params.sd_A).mean(axis=0),
    }


ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
