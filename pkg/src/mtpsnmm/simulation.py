"""Simulation designs, ground truth and the Monte Carlo harness.

Random streams
--------------
Every draw comes from ``numpy.random.Generator(PCG64)`` seeded through a
``SeedSequence``. Replicate ``r`` of a Monte Carlo run with base seed ``s``
uses ``SeedSequence(s, spawn_key=(r, k))`` with ``k = 0`` for the data,
``k = 1`` for the fold plan and ``k = 2`` for the bootstrap. Normal variates
are produced by the inverse CDF applied to 52-bit uniforms,
``Phi^{-1}((U + 0.5) / 2^52)`` with ``U`` uniform on ``{0, ..., 2^52 - 1}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .core import (
    BlipSpec,
    ConfigError,
    EstimateReport,
    FloatArray,
    History,
    MTPError,
    Panel,
    PolicySpec,
    apply_policy,
)
from .longitudinal import estimate_longitudinal
from .nuisance import DEFAULT_CLIP, TreatmentModel
from .point import (
    NuisanceConfig,
    OracleNuisance,
    estimate_point,
    estimate_point_outcome_regression,
)
from .trends import estimate_pt_point, estimate_pt_two_period

GENERATOR = "numpy PCG64 via SeedSequence(seed, spawn_key=(replicate, stream)); normals by inverse CDF"

SeedLike = int | np.random.SeedSequence


def make_rng(seed: SeedLike) -> np.random.Generator:
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(seq))


def replicate_seed(base_seed: int, r: int, stream: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(r), int(stream)))


def std_normal(rng: np.random.Generator, size: int) -> FloatArray:
    """Standard normal draws by inverse CDF of 52-bit uniforms."""
    u = (rng.integers(0, 2**52, size=size, dtype=np.int64) + 0.5) * 2.0**-52
    return ndtri(u)


# ---------------------------------------------------------------------------
# Exchangeability designs


@dataclass(frozen=True)
class PointDgpParams:
    """Point-exposure design with quadratic confounding and linear effect modification.

    ``L ~ N(0, sd_L^2)``, ``A | L ~ N(theta_0 + theta_1 L + theta_2 L^2, sd_A^2)``,
    ``Y = xi_0 + xi_1 L + xi_2 L^2 + (beta_0 + beta_1 L) A + N(0, sd_Y^2)``.
    """

    theta: tuple[float, float, float] = (0.2, 0.8, -0.4)
    xi: tuple[float, float, float] = (0.3, 0.5, 0.2)
    beta: tuple[float, float] = (0.8, -0.6)
    sd_L: float = 1.0
    sd_A: float = 1.0
    sd_Y: float = 1.0
    delta: float = 0.5

    def truth(self) -> FloatArray:
        return np.asarray(self.beta, dtype=float)

    def treatment_mean(self, h: History) -> FloatArray:
        l = np.asarray(h["L"], dtype=float)
        t0, t1, t2 = self.theta
        return t0 + t1 * l + t2 * l**2

    def outcome_mean(self, h: History, a: Any) -> FloatArray:
        l = np.asarray(h["L"], dtype=float)
        x0, x1, x2 = self.xi
        b0, b1 = self.beta
        return x0 + x1 * l + x2 * l**2 + (b0 + b1 * l) * np.asarray(a, dtype=float)


def gen_point_dgp(params: PointDgpParams, n: int, seed: SeedLike) -> Panel:
    if n < 1:
        raise ConfigError("n must be positive")
    rng = make_rng(seed)
    l = params.sd_L * std_normal(rng, n)
    h = {"L": l}
    a = params.treatment_mean(h) + params.sd_A * std_normal(rng, n)
    y = params.outcome_mean(h, a) + params.sd_Y * std_normal(rng, n)
    return Panel("point", np.arange(n), ("L",), l[:, None, None], a[:, None], y)


@dataclass(frozen=True)
class LongDgpParams:
    """Two-time design with an intermediate covariate.

    ``L_0 ~ N(0, 1)``, ``A_0 | L_0 ~ N(a0_slope L_0, sd_A0^2)``,
    ``L_1 = rho_0 + rho_1 L_0 + rho_2 A_0 + N(0, sd_L1^2)``,
    ``A_1 | H_1 ~ N(kappa_0 + kappa_2 L_0, sd_A1^2)``,
    ``Y = b_1(L_0, L_1) + (psi1_0 + psi1_1 L_1) A_1 + N(0, sd_Y^2)`` with
    ``b_1 = beta1_0 + beta1_L1 L_1 + beta1_L0 L_0``. ``beta1`` is ordered
    ``(beta1_0, beta1_L1, beta1_L0)``.
    """

    delta0: float = 0.4
    delta1: float = 0.5
    psi1: tuple[float, float] = (0.5, 0.3)
    rho: tuple[float, float, float] = (0.1, 0.6, 0.8)
    kappa: tuple[float, float] = (0.2, 0.35)
    beta1: tuple[float, float, float] = (0.25, 0.5, 0.2)
    sd_A0: float = 1.0
    sd_L1: float = 0.5
    sd_A1: float = 1.0
    sd_Y: float = 1.0
    sd_L0: float = 1.0
    a0_slope: float = 0.4

    def truth(self) -> FloatArray:
        return np.concatenate([calibrate_psi0(self), np.asarray(self.psi1, dtype=float)])

    def l1_mean(self, l0: Any, a0: Any) -> FloatArray:
        r0, r1, r2 = self.rho
        return r0 + r1 * np.asarray(l0, dtype=float) + r2 * np.asarray(a0, dtype=float)

    def a1_mean(self, l0: Any) -> FloatArray:
        k0, k2 = self.kappa
        return k0 + k2 * np.asarray(l0, dtype=float)

    def mu1(self, h: History, a1: Any) -> FloatArray:
        """``E[Y | H_1, A_1 = a1]``."""
        l0 = np.asarray(h["L_0"], dtype=float)
        l1 = np.asarray(h["L_1"], dtype=float)
        b0, bl1, bl0 = self.beta1
        p0, p1 = self.psi1
        return b0 + bl1 * l1 + bl0 * l0 + (p0 + p1 * l1) * np.asarray(a1, dtype=float)

    def mu0(self, h: History, a0: Any) -> FloatArray:
        """``E[mu_1(H_1, A_1 + delta_1) | L_0, A_0 = a0]`` in closed form."""
        l0 = np.asarray(h["L_0"], dtype=float)
        l1 = self.l1_mean(l0, a0)
        b0, bl1, bl0 = self.beta1
        p0, p1 = self.psi1
        return b0 + bl1 * l1 + bl0 * l0 + (p0 + p1 * l1) * (self.a1_mean(l0) + self.delta1)


def calibrate_psi0(params: LongDgpParams) -> FloatArray:
    """Time-0 blip coefficients implied by the time-1 outcome model."""
    _, _, r2 = params.rho
    k0, k2 = params.kappa
    _, bl1, _ = params.beta1
    _, p11 = params.psi1
    return np.array([r2 * bl1 + r2 * p11 * (k0 + params.delta1), r2 * p11 * k2])


def gen_longitudinal_dgp(params: LongDgpParams, n: int, seed: SeedLike) -> Panel:
    if n < 1:
        raise ConfigError("n must be positive")
    rng = make_rng(seed)
    l0 = params.sd_L0 * std_normal(rng, n)
    a0 = params.a0_slope * l0 + params.sd_A0 * std_normal(rng, n)
    l1 = params.l1_mean(l0, a0) + params.sd_L1 * std_normal(rng, n)
    a1 = params.a1_mean(l0) + params.sd_A1 * std_normal(rng, n)
    y = params.mu1({"L_0": l0, "L_1": l1}, a1) + params.sd_Y * std_normal(rng, n)
    cov = np.stack([l0, l1], axis=1)[:, :, None]
    return Panel("longitudinal", np.arange(n), ("L",), cov, np.column_stack([a0, a1]), y)


# ---------------------------------------------------------------------------
# Parallel-trends designs


@dataclass(frozen=True)
class PtPointParams:
    """Before/after design with an unmeasured confounder ``U``.

    ``A = theta_0 + theta_1 L + c U + N(0, sd_A^2)``,
    ``Y_0 = alpha0(L) + (1 + L) U + e_0`` and
    ``Y_1 = alpha1(L) + (1 + L) U + (tau_0 + tau_1 L) A + e_1``. ``U`` enters both
    waves identically so the trend is unconfounded, while ``A`` is confounded
    whenever ``c != 0``.
    """

    confounding: float = 1.0
    theta: tuple[float, float] = (0.1, 0.5)
    alpha0: tuple[float, float] = (0.5, 0.3)
    alpha1: tuple[float, float, float] = (1.0, 0.5, 0.2)
    tau: tuple[float, float] = (0.7, -0.3)
    sd_A: float = 1.0
    sd_Y: float = 1.0
    delta: float = 0.5

    def truth(self) -> FloatArray:
        return np.asarray(self.tau, dtype=float)

    def exchangeability_limit(self) -> FloatArray:
        """Probability limit of a blip estimator that ignores ``U`` (using ``Y_1`` only)."""
        c = self.confounding
        k = c / (c * c + self.sd_A**2)
        return self.truth() + k


@dataclass(frozen=True)
class PtTwoPeriodParams:
    """Three-wave design with an unmeasured confounder of the first treatment.

    ``A_0 = theta_0 + theta_1 L_0 + c U + N(0, sd_A0^2)``,
    ``L_1 = rho_0 + rho_1 L_0 + rho_2 A_0 + N(0, sd_L1^2)``,
    ``A_1 = kappa_0 + kappa_2 L_0 + N(0, sd_A1^2)`` and

    ``Y_0 = a0_0 + a0_1 L_0 + U + e_0``,
    ``Y_1 = a1_0 + a1_1 L_0 + U + (tau01_0 + tau01_1 L_0) A_0 + e_1``,
    ``Y_2 = a2_0 + a2_1 L_0 + c_L1 L_1 + U + (lam_0 + lam_1 L_0) A_0
    + (t_0 + t_1 L_1) A_1 + e_2``.
    """

    confounding: float = 1.0
    theta: tuple[float, float] = (0.1, 0.5)
    rho: tuple[float, float, float] = (0.1, 0.6, 0.8)
    kappa: tuple[float, float] = (0.2, 0.35)
    a0: tuple[float, float] = (0.2, 0.3)
    a1: tuple[float, float] = (0.5, 0.4)
    a2: tuple[float, float] = (0.8, 0.2)
    c_L1: float = 0.5
    tau01: tuple[float, float] = (0.7, -0.3)
    lam: tuple[float, float] = (0.4, 0.2)
    t: tuple[float, float] = (0.5, 0.3)
    delta: tuple[float, float] = (0.4, 0.5)
    sd_A0: float = 1.0
    sd_L1: float = 0.5
    sd_A1: float = 1.0
    sd_Y: float = 1.0

    def blocks(self) -> dict[str, FloatArray]:
        """True coefficients of the 01, 12 and 02 blips (blocks with a zero shift omitted)."""
        _, _, r2 = self.rho
        k0, k2 = self.kappa
        d0, d1 = self.delta
        t0, t1 = self.t
        out = {}
        if d0 != 0:
            out["01"] = np.asarray(self.tau01, dtype=float)
        if d1 != 0:
            out["12"] = np.asarray(self.t, dtype=float)
        if d0 != 0:
            out["02"] = np.array([
                self.c_L1 * r2 + self.lam[0] + t1 * r2 * (k0 + d1),
                self.lam[1] + t1 * r2 * k2,
            ])
        return out

    def truth(self) -> FloatArray:
        return np.concatenate(list(self.blocks().values()))


def _pt_point_draw(params: PtPointParams, n: int, rng: np.random.Generator):
    l = std_normal(rng, n)
    u = std_normal(rng, n)
    a = params.theta[0] + params.theta[1] * l + params.confounding * u + params.sd_A * std_normal(rng, n)
    e0 = params.sd_Y * std_normal(rng, n)
    e1 = params.sd_Y * std_normal(rng, n)
    return l, u, a, e0, e1


def _pt_point_y(params: PtPointParams, l, u, a, e0, e1):
    level = (1.0 + l) * u
    y0 = params.alpha0[0] + params.alpha0[1] * l + level + e0
    c0, c1, c2 = params.alpha1
    y1 = c0 + c1 * l + c2 * l**2 + level + (params.tau[0] + params.tau[1] * l) * a + e1
    return y0, y1


def _pt_two_draw(n: int, rng: np.random.Generator) -> dict[str, FloatArray]:
    return {k: std_normal(rng, n) for k in ("l0", "u", "nu0", "nu1", "nu2", "e0", "e1", "e2")}


def _pt_two_paths(params: PtTwoPeriodParams, z: Mapping[str, FloatArray],
                  policy: PolicySpec | None = None):
    """Covariates, treatments and outcomes; ``policy`` modifies each natural treatment."""
    l0, u = z["l0"], z["u"]
    a0 = params.theta[0] + params.theta[1] * l0 + params.confounding * u + params.sd_A0 * z["nu0"]
    if policy is not None:
        a0 = apply_policy(policy, {"L_0": l0}, a0, 0)
    r0, r1, r2 = params.rho
    l1 = r0 + r1 * l0 + r2 * a0 + params.sd_L1 * z["nu1"]
    a1 = params.kappa[0] + params.kappa[1] * l0 + params.sd_A1 * z["nu2"]
    if policy is not None:
        a1 = apply_policy(policy, {"L_0": l0, "L_1": l1, "A_0": a0}, a1, 1)
    sd = params.sd_Y
    y0 = params.a0[0] + params.a0[1] * l0 + u + sd * z["e0"]
    y1 = (params.a1[0] + params.a1[1] * l0 + u
          + (params.tau01[0] + params.tau01[1] * l0) * a0 + sd * z["e1"])
    y2 = (params.a2[0] + params.a2[1] * l0 + params.c_L1 * l1 + u
          + (params.lam[0] + params.lam[1] * l0) * a0
          + (params.t[0] + params.t[1] * l1) * a1 + sd * z["e2"])
    return l0, l1, a0, a1, np.column_stack([y0, y1, y2])


def gen_pt_dgp(
    kind: str,
    confounding: float | None = None,
    n: int = 1000,
    seed: SeedLike = 0,
    params: PtPointParams | PtTwoPeriodParams | None = None,
    return_confounder: bool = False,
):
    """Panel satisfying MTP parallel trends with unmeasured confounding.

    ``kind`` is ``"point"`` or ``"two-period"``. ``confounding`` overrides the
    strength ``c`` in ``params``. With ``return_confounder`` the unobserved
    ``U`` is returned alongside the panel.
    """
    if kind == "point":
        params = params or PtPointParams()
    elif kind == "two-period":
        params = params or PtTwoPeriodParams()
    else:
        raise ConfigError(f"unknown parallel-trends design {kind!r}")
    if confounding is not None:
        params = replace(params, confounding=float(confounding))
    if n < 1:
        raise ConfigError("n must be positive")
    rng = make_rng(seed)
    if kind == "point":
        l, u, a, e0, e1 = _pt_point_draw(params, n, rng)
        y0, y1 = _pt_point_y(params, l, u, a, e0, e1)
        panel = Panel("pt-point", np.arange(n), ("L",), l[:, None, None], a[:, None],
                      np.column_stack([y0, y1]))
    else:
        z = _pt_two_draw(n, rng)
        l0, l1, a0, a1, y = _pt_two_paths(params, z)
        u = z["u"]
        panel = Panel("pt-longitudinal", np.arange(n), ("L",),
                      np.stack([l0, l1], axis=1)[:, :, None], np.column_stack([a0, a1]), y)
    return (panel, u) if return_confounder else panel


def as_exchangeability_panel(panel: Panel) -> Panel:
    """Drop all but the last outcome wave, e.g. to fit an exchangeability estimator."""
    layout = {"pt-point": "point", "pt-longitudinal": "longitudinal"}.get(panel.layout)
    if layout is None:
        raise ConfigError(f"expected a parallel-trends layout, got {panel.layout!r}")
    return Panel(layout, panel.ids, panel.covariate_names, panel.covariates,
                 panel.treatments, panel.outcomes[:, -1])


def truth_record(params: Any) -> dict[str, Any]:
    """Serializable description of a design and its true blip coefficients."""
    return {"design": type(params).__name__, "params": asdict(params),
            "psi": params.truth().tolist()}


def write_truth(path: str | Path, params: Any) -> None:
    Path(path).write_text(json.dumps(truth_record(params), indent=2) + "\n")


# ---------------------------------------------------------------------------
# g-formula oracle


@dataclass(frozen=True)
class OracleResult:
    mean: float
    se: float
    n_mc: int


def gformula_oracle(
    dgp: Any,
    policy: PolicySpec,
    n_mc: int = 1_000_000,
    seed: SeedLike = 0,
    start: int = 0,
    horizon: int | None = None,
) -> OracleResult:
    """Monte Carlo mean of the counterfactual outcome under ``policy``.

    Trajectories are simulated forward from the structural equations of a
    built-in design. Treatments before ``start`` keep their natural values;
    from ``start`` on each natural value is drawn given the modified past and
    then passed through the policy. ``horizon`` picks the outcome wave in
    parallel-trends designs (default: last).
    """
    if n_mc < 2:
        raise ConfigError("n_mc must be at least 2")
    rng = make_rng(seed)
    n = int(n_mc)

    def g(h: History, a: FloatArray, t: int) -> FloatArray:
        return a if t < start else apply_policy(policy, h, a, t)

    if isinstance(dgp, PointDgpParams):
        _check_start(start, 1)
        l = dgp.sd_L * std_normal(rng, n)
        h = {"L": l}
        a = g(h, dgp.treatment_mean(h) + dgp.sd_A * std_normal(rng, n), 0)
        y = dgp.outcome_mean(h, a) + dgp.sd_Y * std_normal(rng, n)
    elif isinstance(dgp, LongDgpParams):
        _check_start(start, 2)
        l0 = dgp.sd_L0 * std_normal(rng, n)
        a0 = g({"L_0": l0}, dgp.a0_slope * l0 + dgp.sd_A0 * std_normal(rng, n), 0)
        l1 = dgp.l1_mean(l0, a0) + dgp.sd_L1 * std_normal(rng, n)
        h1 = {"L_0": l0, "L_1": l1, "A_0": a0}
        a1 = g(h1, dgp.a1_mean(l0) + dgp.sd_A1 * std_normal(rng, n), 1)
        y = dgp.mu1(h1, a1) + dgp.sd_Y * std_normal(rng, n)
    elif isinstance(dgp, PtPointParams):
        _check_start(start, 1)
        l, u, a, e0, e1 = _pt_point_draw(dgp, n, rng)
        ys = _pt_point_y(dgp, l, u, g({"L": l}, a, 0), e0, e1)
        y = ys[1 if horizon is None else horizon]
    elif isinstance(dgp, PtTwoPeriodParams):
        _check_start(start, 2)
        z = _pt_two_draw(n, rng)
        wrapped = PolicySpec("custom", 0.0, func=lambda h, a, t: g(h, a, t))
        y = _pt_two_paths(dgp, z, wrapped)[4][:, 2 if horizon is None else horizon]
    else:
        raise ConfigError(f"no structural equations known for {type(dgp).__name__}")
    return OracleResult(float(np.mean(y)), float(np.std(y, ddof=1) / math.sqrt(n)), n)


def _check_start(start: int, T: int) -> None:
    if not 0 <= start <= T:
        raise ConfigError(f"start time {start} out of range 0..{T}")


# ---------------------------------------------------------------------------
# Default estimator setups for the built-in designs

POINT_OUTCOME_TERMS = ("1", "L", "L^2", "A", "A*L")
POINT_TREATMENT_TERMS = ("1", "L", "L^2")
LONG_OUTCOME_TERMS = (("1", "L_0", "L_0^2", "A", "A*L_0"), ("1", "L_0", "L_1", "A", "A*L_1"))
LONG_TREATMENT_TERMS = (("1", "L_0"), ("1", "L_0", "L_1", "A_0"))
LONG_BLIP_TERMS = (("1", "L_0"), ("1", "L_1"))
PT_POINT_TREND_TERMS = ("1", "L", "L^2", "A", "A*L")
PT_POINT_TREATMENT_TERMS = ("1", "L")
PT_TWO_BLIP_TERMS = (("1", "L_0"), ("1", "L_1"), ("1", "L_0"))
PT_TWO_TREND_TERMS = (
    ("1", "L_0", "A", "A*L_0"),
    ("1", "L_0", "L_1", "A_0", "A_0*L_0", "A", "A*L_1"),
    ("1", "L_0", "L_0^2", "A", "A*L_0"),
)


def point_oracle(params: PointDgpParams) -> OracleNuisance:
    """True outcome regression and treatment law of the point design."""
    return OracleNuisance(mu=params.outcome_mean,
                          treatment=TreatmentModel(params.treatment_mean, params.sd_A))


def longitudinal_oracle(params: LongDgpParams) -> list[OracleNuisance]:
    """True ``mu_t`` (with ``mu_0`` the shifted iterated regression) and treatment laws."""
    return [
        OracleNuisance(mu=params.mu0, treatment=TreatmentModel(
            lambda h: params.a0_slope * np.asarray(h["L_0"], dtype=float), params.sd_A0)),
        OracleNuisance(mu=params.mu1, treatment=TreatmentModel(
            lambda h: params.a1_mean(h["L_0"]), params.sd_A1)),
    ]


# ---------------------------------------------------------------------------
# Monte Carlo harness

DESIGNS = {
    "point": "point-orthogonal",
    "point-orthogonal": "point-orthogonal",
    "longitudinal": "longitudinal-orthogonal",
    "longitudinal-orthogonal": "longitudinal-orthogonal",
    "pt-point": "pt-point",
    "pt-point-exchangeability": "pt-point-exchangeability",
    "pt-two-period": "pt-two-period",
    "point-or": "point-or",
}


class MonteCarloError(MTPError):
    """Too many Monte Carlo replicates failed."""


@dataclass(frozen=True)
class MonteCarloConfig:
    """Estimator settings for a Monte Carlo run.

    ``params`` defaults to the design's built-in parameters. ``n_boot`` is the
    bootstrap size for longitudinal designs (``None`` means 200; 0 disables).
    ``outcome_terms`` overrides the outcome (or trend) basis, e.g. to study
    misspecification.
    """

    params: Any = None
    K: int = 5
    n_boot: int | None = None
    clip: tuple[float, float] | None = DEFAULT_CLIP
    ridge: float = 0.0
    outcome_terms: Sequence[str] | None = None


def default_params(design: str) -> Any:
    return {
        "point-orthogonal": PointDgpParams,
        "point-or": PointDgpParams,
        "longitudinal-orthogonal": LongDgpParams,
        "pt-point": PtPointParams,
        "pt-point-exchangeability": PtPointParams,
        "pt-two-period": PtTwoPeriodParams,
    }[design]()


def _simulate(design: str, params: Any, n: int, seed: np.random.SeedSequence) -> Panel:
    if design in ("point-orthogonal", "point-or"):
        return gen_point_dgp(params, n, seed)
    if design == "longitudinal-orthogonal":
        return gen_longitudinal_dgp(params, n, seed)
    if design in ("pt-point", "pt-point-exchangeability"):
        return gen_pt_dgp("point", None, n, seed, params)
    return gen_pt_dgp("two-period", None, n, seed, params)


def fit_design(design: str, panel: Panel, params: Any, config: MonteCarloConfig,
               fold_seed: int, boot_seed: int) -> EstimateReport:
    """Fit the estimator that belongs to ``design`` with its default bases."""
    design = DESIGNS.get(design, design)
    if design == "point-orthogonal":
        nuis = NuisanceConfig(outcome=list(config.outcome_terms or POINT_OUTCOME_TERMS),
                              treatment=list(POINT_TREATMENT_TERMS), clip=config.clip)
        return estimate_point(panel, PolicySpec.shift(params.delta), ["1", "L"], nuis,
                              K=config.K, seed=fold_seed, ridge=config.ridge)
    if design == "point-or":
        return estimate_point_outcome_regression(panel, PolicySpec.shift(params.delta), ["1", "L"],
                                                 list(config.outcome_terms or POINT_OUTCOME_TERMS))
    if design == "longitudinal-orthogonal":
        outcome = config.outcome_terms or LONG_OUTCOME_TERMS
        nuis = NuisanceConfig(outcome=[list(t) for t in outcome],
                              treatment=[list(t) for t in LONG_TREATMENT_TERMS], clip=config.clip)
        return estimate_longitudinal(panel, PolicySpec.shift(params.delta0, params.delta1),
                                     BlipSpec(LONG_BLIP_TERMS), nuis, K=config.K, seed=fold_seed,
                                     ridge=config.ridge, n_boot=config.n_boot, boot_seed=boot_seed)
    if design == "pt-point":
        return estimate_pt_point(panel, PolicySpec.shift(params.delta), ["1", "L"],
                                 list(config.outcome_terms or PT_POINT_TREND_TERMS))
    if design == "pt-point-exchangeability":
        nuis = NuisanceConfig(outcome=list(config.outcome_terms or PT_POINT_TREND_TERMS),
                              treatment=list(PT_POINT_TREATMENT_TERMS), clip=config.clip)
        return estimate_point(as_exchangeability_panel(panel), PolicySpec.shift(params.delta),
                              ["1", "L"], nuis, K=config.K, seed=fold_seed, ridge=config.ridge)
    if design == "pt-two-period":
        return estimate_pt_two_period(panel, PolicySpec.shift(*params.delta),
                                      BlipSpec(PT_TWO_BLIP_TERMS),
                                      config.outcome_terms or PT_TWO_TREND_TERMS)
    raise ConfigError(f"unknown design {design!r}; expected one of {sorted(DESIGNS)}")


@dataclass(frozen=True)
class MonteCarloSummary:
    """Replicate estimates and their operating characteristics.

    ``estimates`` and ``ses`` have one row per successful replicate.
    Bootstrap bounds are present only when the estimator produced them.
    """

    design: str
    n: int
    R: int
    seed: int
    names: tuple[str, ...]
    truth: FloatArray
    estimates: FloatArray
    ses: FloatArray
    boot_lower: FloatArray | None = None
    boot_upper: FloatArray | None = None
    failures: int = 0
    failure_messages: tuple[str, ...] = ()
    replicates: tuple[int, ...] = ()
    generator: str = GENERATOR
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def errors(self) -> FloatArray:
        return self.estimates - self.truth

    @property
    def bias(self) -> FloatArray:
        return self.errors.mean(axis=0)

    @property
    def rmse(self) -> FloatArray:
        return np.sqrt(np.mean(self.errors**2, axis=0))

    @property
    def emp_sd(self) -> FloatArray:
        return self.estimates.std(axis=0, ddof=1)

    @property
    def mean_se(self) -> FloatArray:
        return self.ses.mean(axis=0)

    @property
    def coverage(self) -> FloatArray:
        half = 1.96 * self.ses
        return np.mean(np.abs(self.errors) <= half, axis=0)

    @property
    def boot_coverage(self) -> FloatArray | None:
        if self.boot_lower is None:
            return None
        return np.mean((self.boot_lower <= self.truth) & (self.truth <= self.boot_upper), axis=0)

    def records(self) -> list[dict[str, Any]]:
        """One key-value record per component."""
        boot = self.boot_coverage
        out = []
        for j, name in enumerate(self.names):
            rec = {
                "design": self.design, "n": self.n, "R": self.R, "component": name,
                "truth": float(self.truth[j]), "bias": float(self.bias[j]),
                "rmse": float(self.rmse[j]), "emp_sd": float(self.emp_sd[j]),
                "mean_se": float(self.mean_se[j]), "cov95": float(self.coverage[j]),
            }
            if boot is not None:
                rec["boot_cov95"] = float(boot[j])
            out.append(rec)
        return out

    def table(self) -> str:
        """Aligned text table with columns Bias, RMSE, EmpSD, Mean SE, Cov95 (and Boot cov)."""
        boot = self.boot_coverage
        width = max(9, max(len(nm) for nm in self.names))
        cols = ["Bias", "RMSE", "EmpSD", "Mean SE", "Cov95"] + (["Boot cov"] if boot is not None else [])
        lines = [
            f"design={self.design}  n={self.n}  R={self.R}  failures={self.failures}  seed={self.seed}",
            f"{'component':<{width}}" + "".join(f"{c:>10}" for c in cols),
        ]
        for j, name in enumerate(self.names):
            vals = [self.bias[j], self.rmse[j], self.emp_sd[j], self.mean_se[j], self.coverage[j]]
            if boot is not None:
                vals.append(boot[j])
            lines.append(f"{name:<{width}}" + "".join(f"{v:>10.3f}" for v in vals))
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "design": self.design, "n": self.n, "R": self.R, "seed": self.seed,
            "failures": self.failures, "failure_messages": list(self.failure_messages),
            "generator": self.generator, "config": self.config,
            "names": list(self.names), "truth": self.truth.tolist(),
            "records": self.records(),
        }


def run_monte_carlo(
    design: str,
    n: int,
    R: int,
    seed: int = 0,
    config: MonteCarloConfig | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> MonteCarloSummary:
    """Simulate ``R`` data sets from ``design`` and summarise the estimator.

    Replicates that raise a numerical or configuration error are counted as
    failures; more than 5% failures raises :class:`MonteCarloError`.
    """
    key = DESIGNS.get(design)
    if key is None:
        raise ConfigError(f"unknown design {design!r}; expected one of {sorted(DESIGNS)}")
    if R < 2:
        raise ConfigError("need at least 2 replicates")
    config = config or MonteCarloConfig()
    params = config.params if config.params is not None else default_params(key)
    truth = params.truth()
    estimates, ses, lows, ups, messages, done = [], [], [], [], [], []
    names: tuple[str, ...] = ()
    for r in range(R):
        panel = _simulate(key, params, n, replicate_seed(seed, r, 0))
        fold_seed = int(replicate_seed(seed, r, 1).generate_state(1)[0])
        boot_seed = int(replicate_seed(seed, r, 2).generate_state(1)[0])
        try:
            rep = fit_design(key, panel, params, config, fold_seed, boot_seed)
        except (MTPError, np.linalg.LinAlgError) as exc:
            messages.append(f"replicate {r}: {exc}")
            continue
        names = rep.names
        done.append(r)
        estimates.append(rep.psi)
        ses.append(rep.se)
        boot = rep.diagnostics.get("bootstrap")
        if boot is not None:
            lows.append(boot["lower"])
            ups.append(boot["upper"])
        if progress is not None:
            progress(r + 1, R)
    failures = len(messages)
    if failures > 0.05 * R:
        raise MonteCarloError(f"{failures} of {R} replicates failed; first: {messages[0]}")
    est = np.vstack(estimates)
    if est.shape[1] != truth.size:
        raise ConfigError(f"estimator returns {est.shape[1]} parameters, design truth has {truth.size}")
    with_boot = len(lows) == len(estimates)
    cfg = {k: v for k, v in asdict(config).items() if k != "params"}
    cfg["params"] = asdict(params)
    return MonteCarloSummary(
        design=key, n=n, R=R, seed=seed, names=names, truth=truth,
        estimates=est, ses=np.vstack(ses),
        boot_lower=np.asarray(lows, dtype=float) if with_boot and lows else None,
        boot_upper=np.asarray(ups, dtype=float) if with_boot and ups else None,
        failures=failures, failure_messages=tuple(messages), replicates=tuple(done),
        config=_plain(cfg),
    )


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
