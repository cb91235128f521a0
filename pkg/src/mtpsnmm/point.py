"""Point-exposure estimators of MTP blip parameters.

``estimate_point`` is the cross-fitted Neyman-orthogonal estimator with a
Normal working model (or a user-supplied density ratio) for ``A | H``.
``estimate_point_outcome_regression`` solves the plain outcome-regression
estimating equations, kept as a non-robust contrast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .core import (
    Basis,
    BlipSpec,
    ConfigError,
    EstimateReport,
    FloatArray,
    History,
    Panel,
    PolicySpec,
    SingularSystemError,
    displacement,
)
from .nuisance import (
    DEFAULT_CLIP,
    FoldPlan,
    LeastSquares,
    TreatmentModel,
    clip_ratio,
    fit_mean,
    make_folds,
    normal_ratio,
    subset,
)

RatioFn = Callable[[History, FloatArray, float, int], FloatArray]


@dataclass(frozen=True)
class NuisanceConfig:
    """Learners for ``mu_t(a, h)`` and ``m_t(h)``, one per time or shared.

    If ``ratio`` is given it replaces the Normal working model and is called as
    ``ratio(h, a, delta, t)`` on held-out rows; no treatment model is fitted.
    """

    outcome: Any
    treatment: Any = None
    ratio: RatioFn | None = None
    clip: tuple[float, float] | None = DEFAULT_CLIP

    def __post_init__(self) -> None:
        if self.treatment is None and self.ratio is None:
            raise ConfigError("need a treatment learner or a density-ratio callback")
        if self.clip is not None and not (0 < self.clip[0] <= 1 <= self.clip[1]):
            raise ConfigError(f"clip bounds must bracket 1, got {self.clip}")

    def outcome_at(self, t: int):
        return _at(self.outcome, t)

    def treatment_at(self, t: int):
        return _at(self.treatment, t)


def _at(obj: Any, t: int):
    """Learner for time ``t``; a list of strings is one basis, any other list is per time."""
    if isinstance(obj, (list, tuple)) and not all(isinstance(x, str) for x in obj):
        if not 0 <= t < len(obj):
            raise ConfigError(f"no nuisance learner configured for time {t}")
        return _as_learner(obj[t])
    return _as_learner(obj)


def _as_learner(obj: Any):
    if obj is None or hasattr(obj, "features"):
        return obj
    return LeastSquares(obj)


@dataclass(frozen=True)
class OracleNuisance:
    """Known nuisance functions for one time, used without cross-fitting."""

    mu: Callable[[History, FloatArray], FloatArray]
    treatment: TreatmentModel | None = None
    ratio: RatioFn | None = None


@dataclass
class StepResult:
    """Held-out nuisance predictions for every unit at one time."""

    mu_obs: FloatArray
    mu_shift: FloatArray
    ratio: FloatArray
    diagnostics: dict[str, Any] = field(default_factory=dict)
    fits: list[Any] = field(default_factory=list)


@dataclass(frozen=True)
class ScoreTerms:
    """Per-observation pieces of the orthogonal score."""

    resid: FloatArray
    mu_shift: FloatArray
    q: FloatArray
    q_tilde: FloatArray
    phi: FloatArray


def cross_fit_step(
    h: History,
    a: FloatArray,
    v: FloatArray,
    delta: float,
    folds: FoldPlan | None,
    config: NuisanceConfig | None,
    t: int = 0,
    oracle: OracleNuisance | None = None,
) -> StepResult:
    """Nuisance predictions at ``(A, H)`` and ``(A + delta, H)`` plus density ratios.

    Each unit's predictions come from models fitted on the folds it is not in.
    With ``oracle`` the supplied functions are evaluated on all units directly.
    """
    n = a.shape[0]
    a_shift = a + delta
    if oracle is not None:
        mu_obs = np.asarray(oracle.mu(h, a), dtype=float)
        mu_shift = np.asarray(oracle.mu(h, a_shift), dtype=float)
        if oracle.ratio is not None:
            raw = np.asarray(oracle.ratio(h, a, delta, t), dtype=float)
        else:
            raw = normal_ratio(a - oracle.treatment.mean(h), delta, oracle.treatment.sigma)
        ratio, n_clipped = clip_ratio(raw, config.clip if config else None)
        return StepResult(mu_obs, mu_shift, ratio, _ratio_diag(raw, n_clipped, []))

    out_learner = config.outcome_at(t)
    trt_learner = config.treatment_at(t) if config.ratio is None else None
    x_obs = out_learner.features(h, a)
    x_shift = out_learner.features(h, a_shift)
    x_trt = trt_learner.features(h) if trt_learner is not None else None

    mu_obs = np.empty(n)
    mu_shift = np.empty(n)
    raw = np.empty(n)
    sigmas = []
    fits = []
    for k in range(folds.K):
        train = folds.train_index(k)
        test = folds.test_index(k)
        fit = out_learner.fit(x_obs[train], v[train])
        fits.append(fit)
        mu_obs[test] = fit.predict(x_obs[test])
        mu_shift[test] = fit.predict(x_shift[test])
        if trt_learner is None:
            raw[test] = config.ratio(subset(h, test), a[test], delta, t)
            continue
        mfit = trt_learner.fit(x_trt[train], a[train])
        sigma = float(np.std(a[train] - mfit.predict(x_trt[train]), ddof=1))
        if not (np.isfinite(sigma) and sigma > 0):
            raise SingularSystemError(f"treatment residual SD is {sigma} in fold {k} at time {t}")
        sigmas.append(sigma)
        raw[test] = normal_ratio(a[test] - mfit.predict(x_trt[test]), delta, sigma)
    ratio, n_clipped = clip_ratio(raw, config.clip)
    return StepResult(mu_obs, mu_shift, ratio, _ratio_diag(raw, n_clipped, sigmas), fits)


def _ratio_diag(raw: FloatArray, n_clipped: int, sigmas: list[float]) -> dict[str, Any]:
    diag = {
        "ratio_min": float(np.min(raw)),
        "ratio_max": float(np.max(raw)),
        "ratio_clipped": n_clipped,
    }
    if sigmas:
        diag["sigma_by_fold"] = sigmas
    return diag


def _score_weight(step: StepResult, v: FloatArray) -> FloatArray:
    """Scalar multiplier ``w_i`` of ``s_i`` in the score, excluding the psi term."""
    resid = v - step.mu_obs
    return (step.mu_obs - step.mu_shift) + (1.0 - step.ratio) * resid


def solve_normal_equations(m: FloatArray, b: FloatArray, ridge: float = 0.0) -> tuple[FloatArray, float]:
    """Solve ``(M + ridge I) psi = b``.

    With ``ridge == 0`` a singular or badly conditioned ``M`` is retried with
    ``ridge = 1e-8 * trace(M) / d``; the ridge actually used is returned.
    """
    d = m.shape[0]
    if ridge == 0.0:
        try:
            if np.linalg.cond(m) < 1e12:
                return np.linalg.solve(m, b), 0.0
        except np.linalg.LinAlgError:
            pass
        ridge = 1e-8 * float(np.trace(m)) / d
        if ridge == 0.0 or not np.isfinite(ridge):
            raise SingularSystemError("normal-equation matrix is zero")
    try:
        return np.linalg.solve(m + ridge * np.eye(d), b), ridge
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"normal equations are singular: {exc}") from exc


def solve_step(s: FloatArray, v: FloatArray, delta: float, step: StepResult,
               ridge: float = 0.0) -> tuple[FloatArray, FloatArray, FloatArray, float]:
    """Accumulate and solve ``M psi = b`` for one time.

    Returns ``psi``, the per-unit scores at ``psi``, ``M`` and the ridge used.
    """
    w = _score_weight(step, v)
    m = delta * (s.T @ s)
    b = -(s.T @ w)
    psi, used = solve_normal_equations(m, b, ridge)
    phi = s * (w + delta * (s @ psi))[:, None]
    return psi, phi, m + used * np.eye(m.shape[0]), used


def sandwich_variance(scores: Any, jacobian: Any) -> tuple[FloatArray, FloatArray]:
    """Influence values ``-G^{-1} phi_i`` and ``V = Var_n(IF) / n``.

    ``Var_n`` is the empirical covariance with divisor ``n``. The result is
    symmetrised.
    """
    phi = np.atleast_2d(np.asarray(scores, dtype=float))
    if phi.shape[0] == 1 and np.ndim(scores) == 1:
        phi = phi.T
    g = np.atleast_2d(np.asarray(jacobian, dtype=float))
    n = phi.shape[0]
    try:
        influence = -np.linalg.solve(g, phi.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"Jacobian is singular: {exc}") from exc
    centered = influence - influence.mean(axis=0)
    v = centered.T @ centered / n / n
    return influence, (v + v.T) / 2


def score_point(
    h: History,
    a: FloatArray,
    y: FloatArray,
    s: FloatArray,
    delta: float,
    psi: Any,
    mu: Callable[[History, FloatArray], FloatArray],
    ratio: TreatmentModel | FloatArray,
) -> ScoreTerms:
    """Orthogonal score ``(q - q~)(Y - mu(A,H)) + q {mu(A,H) - mu(A+delta,H) - gamma}``.

    ``q = s(H)`` and ``q~ = q * r`` where ``r`` is the density ratio, either
    given directly or computed from a Normal treatment model.
    """
    a = np.asarray(a, dtype=float)
    s = np.atleast_2d(np.asarray(s, dtype=float))
    psi = np.asarray(psi, dtype=float).ravel()
    mu_obs = np.asarray(mu(h, a), dtype=float)
    mu_g = np.asarray(mu(h, a + delta), dtype=float)
    if isinstance(ratio, TreatmentModel):
        r = normal_ratio(a - ratio.mean(h), delta, ratio.sigma)
    else:
        r = np.asarray(ratio, dtype=float)
    resid = np.asarray(y, dtype=float) - mu_obs
    q_tilde = s * r[:, None]
    gamma = -delta * (s @ psi)
    phi = (s - q_tilde) * resid[:, None] + s * (mu_obs - mu_g - gamma)[:, None]
    return ScoreTerms(resid=resid, mu_shift=mu_g, q=s, q_tilde=q_tilde, phi=phi)


def _check_size(n: int, d: int) -> None:
    if n < 10 * d:
        raise ConfigError(f"need at least {10 * d} units for {d} blip parameters, got {n}")


def estimate_point(
    panel: Panel,
    policy: PolicySpec,
    blip: BlipSpec | Basis | Sequence[str],
    nuisance: NuisanceConfig | None = None,
    K: int = 5,
    seed: int = 0,
    ridge: float = 0.0,
    folds: FoldPlan | None = None,
    oracle: OracleNuisance | None = None,
) -> EstimateReport:
    """Cross-fitted orthogonal estimate of the point-exposure blip parameter."""
    if panel.layout != "point":
        raise ConfigError(f"estimate_point needs a point layout, got {panel.layout!r}")
    blip = blip if isinstance(blip, BlipSpec) else BlipSpec([blip])
    if blip.n_times != 1:
        raise ConfigError("point-exposure blip model must have a single basis")
    (delta,) = policy.require_shift(1)
    if nuisance is None and oracle is None:
        raise ConfigError("need a nuisance configuration or oracle nuisances")
    h = panel.history(0)
    a = panel.treatments[:, 0]
    y = panel.outcomes
    s = blip.bases[0].design(h)
    _check_size(panel.n, s.shape[1])
    if oracle is None and folds is None:
        folds = make_folds(panel.n, K, seed)

    step = cross_fit_step(h, a, y, delta, folds, nuisance, 0, oracle)
    psi, phi, m, used = solve_step(s, y, delta, step, ridge)
    g = m / panel.n
    influence, cov = sandwich_variance(phi, g)
    diagnostics = {
        **step.diagnostics,
        "delta": delta,
        "ridge": used,
        "folds": folds.sizes if folds is not None else None,
        "seed": folds.seed if folds is not None else None,
        "cross_fitted": oracle is None,
    }
    return EstimateReport(
        estimator="point-orthogonal",
        names=tuple(blip.names()),
        psi=psi,
        cov=cov,
        jacobian=g,
        influence=influence,
        n=panel.n,
        diagnostics=diagnostics,
    )


def estimate_point_outcome_regression(
    panel: Panel,
    policy: PolicySpec,
    blip: BlipSpec | Basis | Sequence[str],
    outcome_basis: Basis | Sequence[str],
) -> EstimateReport:
    """Solve the outcome-regression estimating equations for ``(beta, psi)``.

    The ``beta`` block is ordinary least squares of ``Y`` on the outcome basis;
    the ``psi`` block is ``sum s(H) {Y - gamma(psi) - mu(g(A), H; beta)} = 0``.
    """
    if panel.layout != "point":
        raise ConfigError(f"outcome regression needs a point layout, got {panel.layout!r}")
    blip = blip if isinstance(blip, BlipSpec) else BlipSpec([blip])
    basis = outcome_basis if isinstance(outcome_basis, Basis) else Basis(outcome_basis)
    h = panel.history(0)
    a = panel.treatments[:, 0]
    y = panel.outcomes
    n = panel.n
    shift = displacement(policy, h, a, 0)
    if not np.any(shift):
        raise ConfigError("policy leaves every treatment unchanged: blip not identified")
    s = blip.bases[0].design(h)
    x = basis.design(h, a)
    x_g = basis.design(h, a + shift)
    beta = fit_mean(x, y).coef
    r, d = x.shape[1], s.shape[1]
    m = s.T @ (s * shift[:, None])
    rhs = -(s.T @ (y - x_g @ beta))
    try:
        psi = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"psi block is singular: {exc}") from exc

    moments = np.hstack([
        x * (y - x @ beta)[:, None],
        s * (y - x_g @ beta + shift * (s @ psi))[:, None],
    ])
    jac = np.zeros((r + d, r + d))
    jac[:r, :r] = -(x.T @ x) / n
    jac[r:, :r] = -(s.T @ x_g) / n
    jac[r:, r:] = m / n
    influence, cov = sandwich_variance(moments, jac)
    return EstimateReport(
        estimator="point-outcome-regression",
        names=tuple(blip.names()),
        psi=psi,
        cov=cov[r:, r:],
        jacobian=jac,
        influence=influence[:, r:],
        n=n,
        diagnostics={"beta": beta.tolist(), "outcome_terms": list(basis.terms),
                     "max_abs_moment": float(np.max(np.abs(moments.mean(axis=0))))},
    )
