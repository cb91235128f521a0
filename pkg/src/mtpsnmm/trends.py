"""Parametric blip estimators under MTP parallel-trends assumptions.

Both estimators work on outcome differences, so anything additive and constant
within a unit (an unmeasured level confounder, say) drops out. Nuisances are
least-squares fits on declared bases without cross-fitting, and every block of
the stacked estimating equations is solved exactly.

In the two-period estimator the trend ``mu_02`` is obtained by regressing the
composed target ``mu_12(H_1, g_1(H_1, A_1))`` on ``(L_0, A_0)`` and evaluating
the fit at ``g_0(L_0, A_0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .core import (
    Basis,
    BlipSpec,
    ConfigError,
    EstimateReport,
    FloatArray,
    Panel,
    PolicySpec,
    SingularSystemError,
    apply_policy,
    displacement,
)
from .point import sandwich_variance

MOMENT_TOL = 1e-8


@dataclass(frozen=True)
class TrendFit:
    """A least-squares model for a conditional mean outcome trend."""

    name: str
    basis: Basis
    coef: FloatArray

    def to_dict(self) -> dict[str, Any]:
        return {"terms": list(self.basis.terms), "coef": self.coef.tolist()}


def _basis(b: Basis | Sequence[str]) -> Basis:
    return b if isinstance(b, Basis) else Basis(b)


def _ols(x: FloatArray, y: FloatArray, what: str) -> FloatArray:
    n, d = x.shape
    if n <= d:
        raise SingularSystemError(f"{what}: {n} rows cannot determine {d} coefficients")
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < d:
        raise SingularSystemError(f"{what}: design has rank {rank} < {d}")
    return coef


def _solve(m: FloatArray, rhs: FloatArray, what: str) -> FloatArray:
    try:
        if np.linalg.cond(m) > 1e12:
            raise np.linalg.LinAlgError("condition number above 1e12")
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{what} is singular: {exc}") from exc


def _weighted_gram(s: FloatArray, w: FloatArray, x: FloatArray | None = None) -> FloatArray:
    """``sum_i s_i w_i x_i'`` (``x`` defaults to ``s``)."""
    return s.T @ ((s if x is None else x) * w[:, None])


def _report(estimator: str, names: list[str], moments: FloatArray, jac: FloatArray,
            theta: FloatArray, n_beta: int, n: int, diagnostics: dict[str, Any]) -> EstimateReport:
    influence, cov = sandwich_variance(moments, jac)
    max_moment = float(np.max(np.abs(moments.mean(axis=0))))
    if not max_moment <= MOMENT_TOL * max(1.0, float(np.max(np.abs(moments)))):
        raise SingularSystemError(f"stacked moments not solved: max |mean| = {max_moment:.3g}")
    diagnostics["max_abs_moment"] = max_moment
    return EstimateReport(
        estimator=estimator,
        names=tuple(names),
        psi=theta[n_beta:],
        cov=cov[n_beta:, n_beta:],
        jacobian=jac,
        influence=influence[:, n_beta:],
        n=n,
        diagnostics=diagnostics,
    )


def estimate_pt_point(
    panel: Panel,
    policy: PolicySpec,
    blip: BlipSpec | Basis | Sequence[str],
    trend_basis: Basis | Sequence[str],
) -> EstimateReport:
    """Blip parameters from a before/after panel under parallel trends.

    Parameters
    ----------
    panel : Panel
        ``pt-point`` layout with outcomes ``(Y_0, Y_1)``.
    policy : PolicySpec
        Any policy; the blip is ``-(g(h, a) - a) s(h)' psi``.
    blip : BlipSpec or Basis
        Blip basis ``s(L)``.
    trend_basis : Basis
        Basis of the trend model ``mu_d(L, A) = E[Y_1 - Y_0 | L, A]``.

    Returns
    -------
    EstimateReport
        Estimates with the stacked ``(beta, psi)`` sandwich covariance; the
        fitted trend is in ``diagnostics["trend"]``.
    """
    if panel.layout != "pt-point":
        raise ConfigError(f"estimate_pt_point needs a pt-point layout, got {panel.layout!r}")
    blip = blip if isinstance(blip, BlipSpec) else BlipSpec([blip])
    if blip.n_times != 1:
        raise ConfigError("point-exposure blip model must have a single basis")
    basis = _basis(trend_basis)
    h = panel.history(0)
    a = panel.treatments[:, 0]
    dy = panel.outcomes[:, 1] - panel.outcomes[:, 0]
    shift = np.asarray(displacement(policy, h, a, 0), dtype=float)
    if not np.any(shift):
        raise ConfigError("policy leaves every treatment unchanged: blip not identified")
    n = panel.n
    s = blip.bases[0].design(h)
    x = basis.design(h, a)
    x_g = basis.design(h, apply_policy(policy, h, a, 0))
    beta = _ols(x, dy, "trend model")
    m = _weighted_gram(s, shift)
    psi = _solve(m, -(s.T @ (dy - x_g @ beta)), "blip block")

    r, d = x.shape[1], s.shape[1]
    moments = np.hstack([
        x * (dy - x @ beta)[:, None],
        s * (dy + shift * (s @ psi) - x_g @ beta)[:, None],
    ])
    jac = np.zeros((r + d, r + d))
    jac[:r, :r] = -(x.T @ x)
    jac[r:, :r] = -(s.T @ x_g)
    jac[r:, r:] = m
    trend = TrendFit("mu_d", basis, beta)
    return _report("pt-point", blip.names(), moments, jac / n, np.concatenate([beta, psi]),
                   r, n, {"trend": trend.to_dict()})


def estimate_pt_two_period(
    panel: Panel,
    policy: PolicySpec,
    blip: BlipSpec | Sequence[Basis | Sequence[str]],
    trend_bases: Sequence[Basis | Sequence[str]],
) -> EstimateReport:
    """Blips ``(gamma_01, gamma_12, gamma_02)`` from a three-wave panel under parallel trends.

    Parameters
    ----------
    panel : Panel
        ``pt-longitudinal`` layout with two treatment times and outcomes
        ``(Y_0, Y_1, Y_2)``.
    policy : PolicySpec
        Policy at times 0 and 1. A time whose policy never moves the treatment
        contributes no blip and its blocks are dropped; if both times are
        identities the call is rejected.
    blip : BlipSpec
        Three bases, in order ``s_01(H_0)``, ``s_12(H_1)``, ``s_02(H_0)``.
    trend_bases : sequence of Basis
        Bases for ``mu_01(L_0, A_0)``, ``mu_12(H_1, A_1)`` and
        ``mu_02(L_0, A_0)``.

    Returns
    -------
    EstimateReport
        Stacked estimates of the active blocks, ordered ``psi01, psi12,
        psi02``, with the joint sandwich covariance over all trend and blip
        parameters.
    """
    if panel.layout != "pt-longitudinal" or panel.n_times != 2:
        raise ConfigError("estimate_pt_two_period needs a pt-longitudinal panel with two times")
    blip = blip if isinstance(blip, BlipSpec) else BlipSpec(blip)
    if blip.n_times != 3:
        raise ConfigError("need blip bases for the 01, 12 and 02 blocks")
    if len(trend_bases) != 3:
        raise ConfigError("need trend bases for mu_01, mu_12 and mu_02")
    b01, b12, b02 = (_basis(b) for b in trend_bases)
    n = panel.n
    y = panel.outcomes
    dy1 = y[:, 1] - y[:, 0]
    dy2 = y[:, 2] - y[:, 1]
    h0, h1 = panel.history(0), panel.history(1)
    a0, a1 = panel.treatments[:, 0], panel.treatments[:, 1]
    d0 = np.asarray(displacement(policy, h0, a0, 0), dtype=float)
    d1 = np.asarray(displacement(policy, h1, a1, 1), dtype=float)
    use0, use1 = bool(np.any(d0)), bool(np.any(d1))
    if not (use0 or use1):
        raise ConfigError("policy leaves every treatment unchanged at both times")

    s01, s12, s02 = (blip.bases[j].design(h) for j, h in ((0, h0), (1, h1), (2, h0)))
    x01 = b01.design(h0, a0)
    x01_g = b01.design(h0, apply_policy(policy, h0, a0, 0))
    x12 = b12.design(h1, a1)
    x12_g = b12.design(h1, apply_policy(policy, h1, a1, 1))
    x02 = b02.design(h0, a0)
    x02_g = b02.design(h0, apply_policy(policy, h0, a0, 0))

    beta01 = _ols(x01, dy1, "mu_01")
    beta12 = _ols(x12, dy2, "mu_12")
    target = x12_g @ beta12
    beta02 = _ols(x02, target, "mu_02")

    psi01 = psi12 = psi02 = None
    m01 = m12 = m02 = None
    if use0:
        m01 = _weighted_gram(s01, d0)
        psi01 = _solve(m01, -(s01.T @ (dy1 - x01_g @ beta01)), "01 blip block")
    if use1:
        m12 = _weighted_gram(s12, d1)
        psi12 = _solve(m12, -(s12.T @ (dy2 - x12_g @ beta12)), "12 blip block")
    # 02 residual before its own blip: Y_2 - Y_1 - gamma_12 + gamma_01 - mu_02(g)
    r02 = dy2 - x02_g @ beta02
    if use1:
        r02 = r02 + d1 * (s12 @ psi12)
    if use0:
        r02 = r02 - d0 * (s01 @ psi01)
        m02 = _weighted_gram(s02, d0)
        psi02 = _solve(m02, -(s02.T @ r02), "02 blip block")

    # parameter layout: beta01, beta12, beta02, then the active psi blocks
    sizes = [x01.shape[1], x12.shape[1], x02.shape[1]]
    blocks = ["b01", "b12", "b02"]
    if use0:
        sizes.append(s01.shape[1])
        blocks.append("p01")
    if use1:
        sizes.append(s12.shape[1])
        blocks.append("p12")
    if use0:
        sizes.append(s02.shape[1])
        blocks.append("p02")
    off = dict(zip(blocks, np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)))
    size = dict(zip(blocks, sizes))
    p = int(sum(sizes))

    def sl(name: str) -> slice:
        return slice(off[name], off[name] + size[name])

    jac = np.zeros((p, p))
    moment_cols = [
        x01 * (dy1 - x01 @ beta01)[:, None],
        x12 * (dy2 - x12 @ beta12)[:, None],
        x02 * (target - x02 @ beta02)[:, None],
    ]
    jac[sl("b01"), sl("b01")] = -(x01.T @ x01)
    jac[sl("b12"), sl("b12")] = -(x12.T @ x12)
    jac[sl("b02"), sl("b12")] = x02.T @ x12_g
    jac[sl("b02"), sl("b02")] = -(x02.T @ x02)
    if use0:
        moment_cols.append(s01 * (dy1 + d0 * (s01 @ psi01) - x01_g @ beta01)[:, None])
        jac[sl("p01"), sl("b01")] = -(s01.T @ x01_g)
        jac[sl("p01"), sl("p01")] = m01
    if use1:
        moment_cols.append(s12 * (dy2 + d1 * (s12 @ psi12) - x12_g @ beta12)[:, None])
        jac[sl("p12"), sl("b12")] = -(s12.T @ x12_g)
        jac[sl("p12"), sl("p12")] = m12
    if use0:
        moment_cols.append(s02 * (r02 + d0 * (s02 @ psi02))[:, None])
        jac[sl("p02"), sl("b02")] = -(s02.T @ x02_g)
        jac[sl("p02"), sl("p01")] = -_weighted_gram(s02, d0, s01)
        if use1:
            jac[sl("p02"), sl("p12")] = _weighted_gram(s02, d1, s12)
        jac[sl("p02"), sl("p02")] = m02

    names: list[str] = []
    psis: list[FloatArray] = []
    for label, j, est in (("01", 0, psi01), ("12", 1, psi12), ("02", 2, psi02)):
        if est is not None:
            names += [f"psi{label}[{term}]" for term in blip.bases[j].terms]
            psis.append(est)
    theta = np.concatenate([beta01, beta12, beta02, *psis])
    fits = (TrendFit("mu_01", b01, beta01), TrendFit("mu_12", b12, beta12),
            TrendFit("mu_02", b02, beta02))
    diagnostics = {
        "trends": {f.name: f.to_dict() for f in fits},
        "dropped_blocks": [lab for lab, keep in (("01", use0), ("12", use1), ("02", use0)) if not keep],
    }
    return _report("pt-two-period", names, np.hstack(moment_cols), jac / n, theta,
                   sum(sizes[:3]), n, diagnostics)

