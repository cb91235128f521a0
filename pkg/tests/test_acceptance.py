"""Acceptance suite: one group of tests per criterion, each reported in the summary.

Set ``MTPSNMM_QUICK=1`` to run the longitudinal study with 200 instead of 500
replicates (coverage band widened to [0.89, 0.98]).
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest
from scipy.stats import norm

from mtpsnmm.cli import AnalysisConfig, main
from mtpsnmm.core import BlipSpec, ConfigError, Panel, PolicySpec, blip_down
from mtpsnmm.longitudinal import estimate_longitudinal
from mtpsnmm.nuisance import adjoint_pullback, adjoint_pullback_discrete, normal_ratio
from mtpsnmm.point import NuisanceConfig, estimate_point
from mtpsnmm.simulation import (
    LONG_BLIP_TERMS,
    LongDgpParams,
    MonteCarloConfig,
    PointDgpParams,
    PtPointParams,
    calibrate_psi0,
    gen_longitudinal_dgp,
    gen_point_dgp,
    gen_pt_dgp,
    gformula_oracle,
    run_monte_carlo,
)
from mtpsnmm.trends import estimate_pt_point

import conftest
from conftest import (
    MOBILITY_CONFIG,
    ORTHO_EPS,
    POINT_OUTCOME,
    POINT_TREATMENT,
    mobility_like_csv,
    normal_expectation,
    population_scores,
)

SEED = 20261015
QUICK = os.environ.get("MTPSNMM_QUICK") == "1"


@contextmanager
def criterion(number: int, detail: str):
    """Record the outcome of one part of a criterion for the terminal summary."""
    try:
        yield
    except BaseException:
        conftest.ACCEPTANCE[number] = ("FAIL", detail)
        raise
    if conftest.ACCEPTANCE.get(number, ("PASS",))[0] != "FAIL":
        prior = conftest.ACCEPTANCE.get(number, ("PASS", ""))[1]
        conftest.ACCEPTANCE[number] = ("PASS", f"{prior}; {detail}" if prior else detail)


# -- 1. point-exposure Monte Carlo ---------------------------------------------

# EmpSD per component for psi_0 and psi_1 at each n
TABLE1_EMPSD = {400: (0.056, 0.065), 1000: (0.037, 0.037), 3000: (0.020, 0.019)}


@pytest.mark.parametrize("n", sorted(TABLE1_EMPSD))
def test_criterion_1_point_monte_carlo(n):
    s = run_monte_carlo("point", n=n, R=200, seed=SEED)
    print(s.table())
    with criterion(1, f"n={n} bias={np.round(s.bias, 3)} sd={np.round(s.emp_sd, 3)} "
                      f"cov={np.round(s.coverage, 3)}"):
        assert s.failures == 0
        assert np.all(np.abs(s.bias) <= 0.01)
        npt.assert_allclose(s.emp_sd, TABLE1_EMPSD[n], rtol=0.25)
        assert np.all((s.coverage >= 0.90) & (s.coverage <= 0.975))


# -- 2. longitudinal Monte Carlo -----------------------------------------------

TABLE2_EMPSD = (0.049, 0.039, 0.033, 0.026)


def test_criterion_2_longitudinal_monte_carlo():
    R, band = (200, (0.89, 0.98)) if QUICK else (500, (0.90, 0.975))
    s = run_monte_carlo("longitudinal", n=1000, R=R, seed=SEED, config=MonteCarloConfig(n_boot=200))
    print(s.table())
    with criterion(2, f"R={R} bias={np.round(s.bias, 3)} sd={np.round(s.emp_sd, 3)} "
                      f"boot cov={np.round(s.boot_coverage, 3)}"):
        npt.assert_allclose(s.truth, [0.568, 0.084, 0.5, 0.3], atol=1e-12)
        assert np.all(np.abs(s.bias) <= 0.01)
        npt.assert_allclose(s.emp_sd, TABLE2_EMPSD, rtol=0.25)
        cov = s.boot_coverage
        assert np.all((cov >= band[0]) & (cov <= band[1]))


# -- 3. calibration --------------------------------------------------------------


def test_criterion_3_calibration():
    with criterion(3, "psi0 = (0.568, 0.084)"):
        npt.assert_allclose(calibrate_psi0(LongDgpParams()), [0.568, 0.084], rtol=0, atol=1e-12)
        npt.assert_allclose(LongDgpParams().truth(), [0.568, 0.084, 0.5, 0.3], rtol=0, atol=1e-12)


# -- 4. orthogonality ------------------------------------------------------------


def test_criterion_4_orthogonality():
    params = PointDgpParams()
    scores = [population_scores(params, e) for e in ORTHO_EPS]
    ortho = [np.linalg.norm(s["orthogonal"]) for s in scores]
    plug = [np.linalg.norm(s["outcome_regression"]) for s in scores]
    ortho_ratio = [a / b for a, b in zip(ortho, ortho[1:])]
    plug_ratio = [a / b for a, b in zip(plug, plug[1:])]
    with criterion(4, f"orthogonal halving ratios {np.round(ortho_ratio, 2)}, "
                      f"outcome regression {np.round(plug_ratio, 2)} (seed {conftest.ORTHO_SEED})"):
        assert all(3.0 <= r <= 5.0 for r in ortho_ratio)
        assert all(abs(r - 2.0) <= 0.1 for r in plug_ratio)


# -- 5. oracle equivalence -------------------------------------------------------


def combined_gap(values: np.ndarray, oracle) -> tuple[float, float]:
    se = float(np.hypot(values.std(ddof=1) / np.sqrt(values.size), oracle.se))
    return abs(float(values.mean()) - oracle.mean), se


def test_criterion_5_point_blip_down_matches_oracle():
    params = PointDgpParams()
    panel = gen_point_dgp(params, 1_000_000, seed=SEED)
    policy = PolicySpec.shift(params.delta)
    down = blip_down(panel, BlipSpec([["1", "L"]]), policy, params.truth())
    oracle = gformula_oracle(params, policy, n_mc=1_000_000, seed=SEED + 1)
    gap, se = combined_gap(down, oracle)
    with criterion(5, f"point |gap|/SE={gap / se:.2f}"):
        assert gap <= 3 * se


def test_criterion_5_longitudinal_blip_down_matches_oracle():
    params = LongDgpParams()
    panel = gen_longitudinal_dgp(params, 1_000_000, seed=SEED)
    policy = PolicySpec.shift(params.delta0, params.delta1)
    down = blip_down(panel, BlipSpec(LONG_BLIP_TERMS), policy, params.truth())
    oracle = gformula_oracle(params, policy, n_mc=1_000_000, seed=SEED + 1)
    gap, se = combined_gap(down, oracle)
    with criterion(5, f"longitudinal |gap|/SE={gap / se:.2f}"):
        assert gap <= 3 * se
    # one step: blip down only the last time, compare with the policy applied from t = 1
    down1 = blip_down(panel, BlipSpec(LONG_BLIP_TERMS), policy, params.truth(), start=1)
    oracle1 = gformula_oracle(params, policy, n_mc=1_000_000, seed=SEED + 2, start=1)
    gap1, se1 = combined_gap(down1, oracle1)
    with criterion(5, f"longitudinal from t=1 |gap|/SE={gap1 / se1:.2f}"):
        assert gap1 <= 3 * se1


def test_criterion_5_adjoint_identities():
    m, s, delta = 0.3, 1.1, 0.5
    q = np.array([[1.0, -0.4]])
    h = lambda a: np.sin(a) + 0.2 * a**2
    lhs = normal_expectation(lambda a: q * h(a + delta)[:, None], np.array([m]), s)
    rhs = normal_expectation(lambda a: adjoint_pullback(q, normal_ratio(a - m, delta, s))
                             * h(a)[:, None], np.array([m]), s, nodes=120)
    # same identity with the Normal density written out
    dens = lambda a: norm.pdf(a, loc=m, scale=s)
    direct = normal_expectation(lambda a: q * (dens(a - delta) / dens(a) * h(a))[:, None],
                                np.array([m]), s, nodes=120)
    support = [0, 1, 2]
    pmf = np.array([[0.25, 0.25, 0.5]])
    out = adjoint_pullback_discrete(np.array([[1.0, 2.0, 3.0]]), pmf, support, lambda a: min(a + 1, 2))
    with criterion(5, f"adjoint quadrature gap {np.max(np.abs(rhs - lhs)):.1e}, discrete exact"):
        assert np.max(np.abs(rhs - lhs)) <= 1e-6
        npt.assert_allclose(direct, rhs, rtol=1e-12)
        npt.assert_array_equal(out, [[0.0, 1.0, 4.0]])


# -- 6. structural reductions ------------------------------------------------------


def test_criterion_6_single_time_is_point_estimator():
    panel = gen_point_dgp(PointDgpParams(), 2000, seed=SEED)
    long = Panel("longitudinal", panel.ids, panel.covariate_names, panel.covariates,
                 panel.treatments, panel.outcomes)
    rename = lambda terms: [t.replace("L", "L_0") for t in terms]
    a = estimate_point(panel, PolicySpec.shift(0.5), ["1", "L"],
                       NuisanceConfig(POINT_OUTCOME, POINT_TREATMENT), seed=SEED)
    b = estimate_longitudinal(long, PolicySpec.shift(0.5), BlipSpec([["1", "L_0"]]),
                              NuisanceConfig(rename(POINT_OUTCOME), rename(POINT_TREATMENT)),
                              seed=SEED)
    with criterion(6, "T=1 bitwise"):
        assert a.psi.tobytes() == b.psi.tobytes()
        assert a.cov.tobytes() == b.cov.tobytes()


def test_criterion_6_zero_shift_rejected(tmp_path):
    point = gen_point_dgp(PointDgpParams(), 200, seed=1)
    pt = gen_pt_dgp("point", n=200, seed=1)
    nuis = NuisanceConfig(POINT_OUTCOME, POINT_TREATMENT)
    with criterion(6, "delta=0 rejected"):
        with pytest.raises(ConfigError):
            estimate_point(point, PolicySpec.shift(0.0), ["1", "L"], nuis)
        with pytest.raises(ConfigError):
            estimate_pt_point(pt, PolicySpec.shift(0.0), ["1", "L"], ["1", "L", "A"])
        with pytest.raises(ConfigError):
            AnalysisConfig.from_dict({**MOBILITY_CONFIG, "data": "unread.csv",
                                      "policy": {"kind": "shift", "delta": 0}})


def test_criterion_6_pt_additive_invariance_bitwise():
    panel = gen_pt_dgp("point", n=2000, seed=SEED)
    panel = panel.with_outcomes(np.round(panel.outcomes * 2.0**24) / 2.0**24)
    offsets = ((np.arange(panel.n) % 7 - 3) * 1000.0)[:, None]
    policy = PolicySpec.shift(0.5)
    terms = ["1", "L", "L^2", "A", "A*L"]
    a = estimate_pt_point(panel, policy, ["1", "L"], terms)
    b = estimate_pt_point(panel.with_outcomes(panel.outcomes + offsets), policy, ["1", "L"], terms)
    with criterion(6, "PT invariance bitwise"):
        assert a.psi.tobytes() == b.psi.tobytes()
        assert a.cov.tobytes() == b.cov.tobytes()


def test_criterion_6_commands_are_deterministic(tmp_path):
    data = mobility_like_csv(tmp_path / "d.csv")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**MOBILITY_CONFIG, "data": str(data)}))
    sim = ["simulate", "--design", "longitudinal", "--n", "300", "--reps", "2", "--boot", "100",
           "--seed", "3"]
    for tag in ("a", "b"):
        assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / f"fit_{tag}")]) == 0
        assert main(sim + ["--out", str(tmp_path / f"sim_{tag}")]) == 0
    files = [("fit", "report.json"), ("fit", "summary.txt"), ("sim", "summary.json"),
             ("sim", "replicates.csv"), ("sim", "truth.json")]
    with criterion(6, "fit/simulate deterministic"):
        for cmd, name in files:
            assert (tmp_path / f"{cmd}_a" / name).read_bytes() == (tmp_path / f"{cmd}_b" / name).read_bytes()


# -- 7. parallel trends versus exchangeability ------------------------------------


def test_criterion_7_pt_validity_and_contrast():
    pt = run_monte_carlo("pt-point", n=5000, R=100, seed=SEED)
    ex = run_monte_carlo("pt-point-exchangeability", n=5000, R=100, seed=SEED)
    mc_se = pt.emp_sd / np.sqrt(pt.R)
    print(pt.table())
    print(ex.table())
    with criterion(7, f"PT bias/SE={np.round(pt.bias / mc_se, 2)}, "
                      f"exchangeability bias/SE={np.round(ex.bias / ex.mean_se, 1)}"):
        assert np.all(np.abs(pt.bias) <= 3 * mc_se)
        assert np.all(np.abs(ex.bias) > 5 * ex.mean_se)


def test_criterion_7_designs_agree_without_confounding():
    cfg = MonteCarloConfig(params=replace(PtPointParams(), confounding=0.0))
    pt = run_monte_carlo("pt-point", n=5000, R=100, seed=SEED, config=cfg)
    ex = run_monte_carlo("pt-point-exchangeability", n=5000, R=100, seed=SEED, config=cfg)
    diff = pt.estimates.mean(axis=0) - ex.estimates.mean(axis=0)
    se = np.hypot(pt.emp_sd, ex.emp_sd) / np.sqrt(pt.R)
    with criterion(7, f"c=0 difference/SE={np.round(diff / se, 2)}"):
        assert np.all(np.abs(diff) <= 3 * se)


# -- 8. workflow shape ---------------------------------------------------------------


def test_criterion_8_fit_workflow(tmp_path):
    data = mobility_like_csv(tmp_path / "counties.csv")
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({**MOBILITY_CONFIG, "data": str(data)}))
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    psi = np.array(doc["estimate"]["psi"])
    cov = np.array(doc["estimate"]["cov"])
    delta = doc["policy"]["delta"][0]
    with criterion(8, f"psi={np.round(psi, 4)}, {len(doc['effects'])} effect rows"):
        assert psi.shape == (2,)
        assert cov.shape == (2, 2)
        assert doc["effects"]
        for row in doc["effects"]:
            assert row["effect"] == delta * (psi[0] + psi[1] * row["value"])
