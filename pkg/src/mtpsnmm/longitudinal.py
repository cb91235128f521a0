"""Cross-fitted orthogonal estimation for longitudinal shift policies.

Times are processed backwards. At time ``t`` the pseudo-outcome ``V_{t+1}``
(the terminal outcome when ``t = T - 1``) is regressed on ``(A_t, H_t)`` fold by
fold, the time-``t`` normal equations are accumulated from held-out
predictions, and ``V_t`` becomes the held-out prediction at ``A_t + delta_t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from .core import (
    BlipSpec,
    ConfigError,
    EstimateReport,
    FloatArray,
    History,
    MTPError,
    Panel,
    PolicySpec,
)
from .nuisance import FoldPlan, make_folds
from .point import (
    NuisanceConfig,
    OracleNuisance,
    _check_size,
    cross_fit_step,
    sandwich_variance,
    solve_step,
)

DEFAULT_BOOT = 200


class BootstrapError(MTPError):
    """Too many bootstrap replicates failed."""


def backward_recursion_step(
    fits: Sequence[Any],
    learner: Any,
    h: History,
    a: FloatArray,
    delta: float,
    folds: FoldPlan,
) -> FloatArray:
    """``V_t[i] = mu_t(A_t[i] + delta, H_t[i])`` from the fold model that held ``i`` out."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    assignment = np.asarray(folds.assignment)
    if assignment.shape != (n,):
        raise ConfigError(f"fold plan covers {assignment.shape[0]} units, panel has {n}")
    bad = np.flatnonzero((assignment < 0) | (assignment >= len(fits)))
    if bad.size:
        raise ConfigError(f"unit {int(bad[0])} has no fold model")
    x_shift = learner.features(h, a + delta)
    v = np.empty(n)
    for k, fit in enumerate(fits):
        test = np.flatnonzero(assignment == k)
        v[test] = fit.predict(x_shift[test])
    return v


def estimate_longitudinal(
    panel: Panel,
    policy: PolicySpec,
    blip: BlipSpec,
    nuisance: NuisanceConfig | None = None,
    K: int = 5,
    seed: int = 0,
    ridge: float | Sequence[float] = 0.0,
    folds: FoldPlan | None = None,
    oracle: Sequence[OracleNuisance] | None = None,
    n_boot: int | None = None,
    boot_seed: int | None = None,
) -> EstimateReport:
    """Orthogonal estimate of the stacked blip parameters ``(psi_0, ..., psi_{T-1})``.

    The sandwich covariance is always reported. When ``n_boot`` replicates are
    requested (default 200 for ``T >= 2``, none for ``T = 1``) unit-resampling
    percentile intervals are added under ``diagnostics["bootstrap"]``.
    """
    if panel.layout != "longitudinal":
        raise ConfigError(f"estimate_longitudinal needs a longitudinal layout, got {panel.layout!r}")
    T = panel.n_times
    if blip.n_times != T:
        raise ConfigError(f"blip model has {blip.n_times} bases for {T} times")
    deltas = policy.require_shift(T)
    ridges = [float(ridge)] * T if np.ndim(ridge) == 0 else [float(r) for r in ridge]
    if len(ridges) != T:
        raise ConfigError(f"need one ridge per time, got {len(ridges)}")
    if nuisance is None and oracle is None:
        raise ConfigError("need a nuisance configuration or oracle nuisances")
    if oracle is not None and len(oracle) != T:
        raise ConfigError(f"need oracle nuisances for all {T} times")
    _check_size(panel.n, max(blip.dims))
    if oracle is None and folds is None:
        folds = make_folds(panel.n, K, seed)

    n = panel.n
    v = np.asarray(panel.outcomes, dtype=float)
    psis: list[FloatArray] = [None] * T
    phis: list[FloatArray] = [None] * T
    blocks: list[FloatArray] = [None] * T
    per_time: list[dict[str, Any]] = [None] * T
    for t in range(T - 1, -1, -1):
        h = panel.history(t)
        a = panel.treatments[:, t]
        s = blip.bases[t].design(h)
        step = cross_fit_step(h, a, v, deltas[t], folds, nuisance, t,
                              None if oracle is None else oracle[t])
        psis[t], phis[t], m, used = solve_step(s, v, deltas[t], step, ridges[t])
        blocks[t] = m / n
        per_time[t] = {**step.diagnostics, "delta": deltas[t], "ridge": used}
        if oracle is None:
            v = backward_recursion_step(step.fits, nuisance.outcome_at(t), h, a, deltas[t], folds)
        else:
            v = step.mu_shift

    g = block_diag(*blocks)
    influence, cov = sandwich_variance(np.hstack(phis), g)
    diagnostics: dict[str, Any] = {
        "by_time": per_time,
        "ratio_min": min(d["ratio_min"] for d in per_time),
        "ratio_max": max(d["ratio_max"] for d in per_time),
        "ratio_clipped": sum(d["ratio_clipped"] for d in per_time),
        "folds": folds.sizes if folds is not None else None,
        "seed": folds.seed if folds is not None else None,
        "cross_fitted": oracle is None,
    }
    report = EstimateReport(
        estimator="longitudinal-orthogonal",
        names=tuple(blip.names()),
        psi=np.concatenate(psis),
        cov=cov,
        jacobian=g,
        influence=influence,
        n=n,
        diagnostics=diagnostics,
    )
    B = (DEFAULT_BOOT if T >= 2 else 0) if n_boot is None else n_boot
    if B and oracle is None:
        def refit(sample: Panel, fold_seed: int) -> EstimateReport:
            return estimate_longitudinal(sample, policy, blip, nuisance, K=K, seed=fold_seed,
                                         ridge=ridges, n_boot=0)

        boot = bootstrap_ci(panel, refit, B, seed if boot_seed is None else boot_seed)
        diagnostics["bootstrap"] = boot.to_dict()
    return report


@dataclass(frozen=True)
class BootstrapResult:
    """Percentile intervals from unit-resampling bootstrap replicates."""

    estimates: FloatArray
    lower: FloatArray
    upper: FloatArray
    B: int
    dropped: int
    seed: int

    @property
    def sd(self) -> FloatArray:
        return self.estimates.std(axis=0, ddof=1)

    def covers(self, truth: Any) -> NDArray[np.bool_]:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)

    def to_dict(self) -> dict[str, Any]:
        return {
            "B": self.B,
            "dropped": self.dropped,
            "seed": self.seed,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "sd": self.sd.tolist(),
        }


def bootstrap_ci(
    panel: Panel,
    fit: Callable[[Panel, int], EstimateReport],
    B: int = DEFAULT_BOOT,
    seed: int = 0,
    level: float = 0.95,
) -> BootstrapResult:
    """Resample units with replacement ``B`` times and refit.

    ``fit(sample, fold_seed)`` returns an :class:`EstimateReport`. Replicates
    that fail numerically are dropped and counted; more than 5% dropped raises
    :class:`BootstrapError`.
    """
    if B < 100:
        raise ConfigError(f"need at least 100 bootstrap replicates, got {B}")
    rng = np.random.default_rng(seed)
    n = panel.n
    draws = []
    dropped = 0
    for _ in range(B):
        index = rng.integers(0, n, size=n)
        fold_seed = int(rng.integers(0, 2**31 - 1))
        try:
            draws.append(fit(panel.take(index), fold_seed).psi)
        except (MTPError, np.linalg.LinAlgError):
            dropped += 1
    if dropped > 0.05 * B:
        raise BootstrapError(f"{dropped} of {B} bootstrap replicates failed")
    est = np.vstack(draws)
    alpha = (1.0 - level) / 2
    lower, upper = np.quantile(est, [alpha, 1.0 - alpha], axis=0)
    return BootstrapResult(estimates=est, lower=lower, upper=upper, B=B, dropped=dropped, seed=seed)
