from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest

from mtpsnmm.core import BlipSpec, ConfigError, Panel, PolicySpec, SingularSystemError
from mtpsnmm.longitudinal import (
    BootstrapError,
    backward_recursion_step,
    bootstrap_ci,
    estimate_longitudinal,
)
from mtpsnmm.nuisance import LinearFit, make_folds
from mtpsnmm.point import NuisanceConfig, estimate_point
from mtpsnmm.simulation import (
    LONG_BLIP_TERMS,
    LONG_OUTCOME_TERMS,
    LONG_TREATMENT_TERMS,
    gen_longitudinal_dgp,
    longitudinal_oracle,
)

from conftest import POINT_OUTCOME, POINT_TREATMENT

POLICY = PolicySpec.shift(0.4, 0.5)
BLIP = BlipSpec(LONG_BLIP_TERMS)
NUIS = NuisanceConfig(LONG_OUTCOME_TERMS, LONG_TREATMENT_TERMS)


def as_single_time(panel: Panel) -> Panel:
    return Panel("longitudinal", panel.ids, panel.covariate_names, panel.covariates,
                 panel.treatments, panel.outcomes)


def test_single_time_matches_point_estimator_bitwise(point_panel):
    long = as_single_time(point_panel)
    rename = lambda terms: [t.replace("L", "L_0") for t in terms]
    lrep = estimate_longitudinal(long, PolicySpec.shift(0.5), BlipSpec([["1", "L_0"]]),
                                 NuisanceConfig(rename(POINT_OUTCOME), rename(POINT_TREATMENT)),
                                 seed=7)
    prep = estimate_point(point_panel, PolicySpec.shift(0.5), ["1", "L"],
                          NuisanceConfig(POINT_OUTCOME, POINT_TREATMENT), seed=7)
    assert lrep.psi.tobytes() == prep.psi.tobytes()
    assert lrep.cov.tobytes() == prep.cov.tobytes()
    assert "bootstrap" not in lrep.diagnostics


def test_recovers_calibrated_truth_at_large_n(long_params):
    panel = gen_longitudinal_dgp(long_params, 100_000, seed=41)
    rep = estimate_longitudinal(panel, POLICY, BLIP, NUIS, seed=1, n_boot=0)
    truth = long_params.truth()
    assert np.all(np.abs(rep.psi - truth) < 4 * rep.se)
    assert rep.names == ("psi0[1]", "psi0[L_0]", "psi1[1]", "psi1[L_1]")


def test_oracle_nuisances_recover_truth(long_params):
    panel = gen_longitudinal_dgp(long_params, 100_000, seed=42)
    rep = estimate_longitudinal(panel, POLICY, BLIP, oracle=longitudinal_oracle(long_params))
    assert np.all(np.abs(rep.psi - long_params.truth()) < 4 * rep.se)
    assert rep.diagnostics["cross_fitted"] is False


def test_stacked_estimating_equations_are_solved(long_panel):
    rep = estimate_longitudinal(long_panel, POLICY, BLIP, NUIS, seed=2, n_boot=0)
    npt.assert_allclose(rep.influence.mean(axis=0), 0.0, atol=1e-10)
    # the Jacobian is block diagonal across times
    npt.assert_array_equal(rep.jacobian[:2, 2:], 0.0)
    assert len(rep.diagnostics["by_time"]) == 2
    assert rep.diagnostics["by_time"][1]["delta"] == 0.5


def test_backward_step_uses_held_out_model():
    folds = make_folds(6, 2, 0)
    fits = [LinearFit(np.array([1.0, 0.0])), LinearFit(np.array([0.0, 2.0]))]

    class Learner:
        @staticmethod
        def features(h, a):
            return np.column_stack([np.ones_like(a), a])

    a = np.arange(6.0)
    v = backward_recursion_step(fits, Learner, {}, a, 0.5, folds)
    expected = np.where(folds.assignment == 0, 1.0, 2.0 * (a + 0.5))
    npt.assert_array_equal(v, expected)
    with pytest.raises(ConfigError):
        backward_recursion_step(fits[:1], Learner, {}, a, 0.5, folds)


def test_bootstrap_defaults_and_determinism(long_params):
    panel = gen_longitudinal_dgp(long_params, 400, seed=43)
    a = estimate_longitudinal(panel, POLICY, BLIP, NUIS, seed=3)
    b = estimate_longitudinal(panel, POLICY, BLIP, NUIS, seed=3)
    boot = a.diagnostics["bootstrap"]
    assert boot["B"] == 200 and boot["dropped"] == 0
    assert boot == b.diagnostics["bootstrap"]
    assert np.all(np.array(boot["lower"]) < a.psi) and np.all(a.psi < np.array(boot["upper"]))


def test_bootstrap_sd_agrees_with_sandwich_for_last_time(long_params):
    panel = gen_longitudinal_dgp(long_params, 3000, seed=44)
    rep = estimate_longitudinal(panel, POLICY, BLIP, NUIS, seed=4, n_boot=200, boot_seed=5)
    sd = np.array(rep.diagnostics["bootstrap"]["sd"])
    npt.assert_allclose(sd[2:], rep.se[2:], rtol=0.25)


def test_bootstrap_error_handling(long_panel):
    with pytest.raises(ConfigError, match="100"):
        estimate_longitudinal(long_panel, POLICY, BLIP, NUIS, n_boot=50)

    calls = {"n": 0}

    def sometimes_fails(sample, fold_seed):
        calls["n"] += 1
        if calls["n"] % 25 == 0:
            raise SingularSystemError("degenerate resample")
        return estimate_longitudinal(sample, POLICY, BLIP, NUIS, seed=fold_seed, n_boot=0)

    small = long_panel.take(np.arange(200))
    res = bootstrap_ci(small, sometimes_fails, B=100, seed=1)
    assert res.dropped == 4 and res.estimates.shape == (96, 4)

    def mostly_fails(sample, fold_seed):
        raise SingularSystemError("degenerate resample")

    with pytest.raises(BootstrapError):
        bootstrap_ci(small, mostly_fails, B=100, seed=1)


def test_bootstrap_percentiles_of_a_known_statistic():
    # mean of the outcome: percentile interval tracks the textbook normal interval
    rng = np.random.default_rng(0)
    y = rng.normal(size=400)
    panel = Panel("point", np.arange(400), ("L",), np.zeros((400, 1, 1)), np.zeros((400, 1)), y)

    class Mean:
        def __init__(self, psi):
            self.psi = psi

    res = bootstrap_ci(panel, lambda s, _: Mean(np.array([s.outcomes.mean()])), B=400, seed=2)
    se = y.std(ddof=1) / np.sqrt(400)
    assert res.sd[0] == pytest.approx(se, rel=0.15)
    assert res.covers([y.mean()])[0]


def test_input_validation(long_panel, point_panel):
    with pytest.raises(ConfigError, match="time 1"):
        estimate_longitudinal(long_panel, PolicySpec.shift(0.4, 0.0), BLIP, NUIS)
    with pytest.raises(ConfigError, match="bases"):
        estimate_longitudinal(long_panel, POLICY, BlipSpec([["1"]]), NUIS)
    with pytest.raises(ConfigError, match="longitudinal layout"):
        estimate_longitudinal(point_panel, POLICY, BLIP, NUIS)
    with pytest.raises(ConfigError):
        estimate_longitudinal(long_panel, POLICY, BLIP, NUIS, ridge=[0.0])
    with pytest.raises(ConfigError):
        estimate_longitudinal(long_panel, POLICY, BLIP, NuisanceConfig([LONG_OUTCOME_TERMS[0]], ["1"]),
                              n_boot=0)
