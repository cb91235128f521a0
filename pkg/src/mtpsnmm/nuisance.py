"""Nuisance regressions, the Normal working model for treatment, density ratios
and the cross-fitting fold machinery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .core import Basis, ConfigError, FloatArray, History, PositivityError, SingularSystemError

DEFAULT_CLIP = (1e-3, 1e3)
RIDGE_REL = 1e-8


# ---------------------------------------------------------------------------
# Folds


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of units to ``K`` cross-fitting folds."""

    n: int
    K: int
    seed: int
    assignment: NDArray[np.int64]

    def test_index(self, k: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.assignment == k)

    def train_index(self, k: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.assignment != k)

    @property
    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.K).tolist()


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Seeded permutation of units dealt round-robin into ``K`` folds."""
    if K < 2 or K > n:
        raise ConfigError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % K
    assignment.flags.writeable = False
    return FoldPlan(n=n, K=K, seed=seed, assignment=assignment)


# ---------------------------------------------------------------------------
# Regression


@dataclass(frozen=True)
class LinearFit:
    coef: FloatArray
    ridge: float = 0.0

    def predict(self, x: FloatArray) -> FloatArray:
        return np.asarray(x, dtype=float) @ self.coef


def fit_mean(x: Any, y: Any) -> LinearFit:
    """Least squares of ``y`` on the columns of ``x``.

    Full-rank designs are solved exactly. Rank-deficient designs fall back to a
    ridge of ``1e-8 * trace(X'X) / d``; a design with no signal at all raises
    :class:`SingularSystemError`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ConfigError(f"design {x.shape} and target {y.shape} do not conform")
    n, d = x.shape
    if n < d:
        raise SingularSystemError(f"{n} rows cannot determine {d} coefficients")
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank == d:
        return LinearFit(coef)
    gram = x.T @ x
    lam = RIDGE_REL * np.trace(gram) / d
    if not np.isfinite(lam) or lam <= 0:
        raise SingularSystemError("design matrix is identically zero")
    try:
        coef = np.linalg.solve(gram + lam * np.eye(d), x.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"ridge-stabilised fit failed: {exc}") from exc
    return LinearFit(coef, ridge=float(lam))


class LeastSquares:
    """Least squares on a declared basis; the default learner."""

    kind = "least-squares"

    def __init__(self, basis: Basis | Sequence[str]):
        self.basis = basis if isinstance(basis, Basis) else Basis(basis)

    def features(self, h: History, a: Any = None) -> FloatArray:
        return self.basis.design(h, a)

    def fit(self, x: FloatArray, y: FloatArray) -> LinearFit:
        return fit_mean(x, y)

    def __repr__(self) -> str:
        return f"LeastSquares({list(self.basis.terms)})"


class BoostedTrees:
    """Gradient-boosted trees on raw history columns (plus ``A`` if requested)."""

    kind = "boosted-trees"

    def __init__(self, columns: Sequence[str], use_treatment: bool = True, **params: Any):
        self.columns = tuple(columns)
        self.use_treatment = use_treatment
        self.params = {"random_state": 0, **params}

    def features(self, h: History, a: Any = None) -> FloatArray:
        cols = [np.asarray(h[c], dtype=float) for c in self.columns]
        if self.use_treatment:
            if a is None:
                raise ConfigError("boosted outcome learner needs the treatment")
            cols.append(np.asarray(a, dtype=float))
        return np.column_stack(cols)

    def fit(self, x: FloatArray, y: FloatArray):
        from sklearn.ensemble import HistGradientBoostingRegressor

        return HistGradientBoostingRegressor(**self.params).fit(x, y)

    def __repr__(self) -> str:
        return f"BoostedTrees({list(self.columns)})"


# ---------------------------------------------------------------------------
# Treatment model and density ratios


@dataclass(frozen=True)
class TreatmentModel:
    """Normal working model ``A | H ~ N(m(H), sigma^2)``."""

    mean: Callable[[History], FloatArray]
    sigma: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise SingularSystemError(f"treatment residual scale must be positive, got {self.sigma}")

    def ratio(self, h: History, a: Any, delta: float, clip=None) -> FloatArray:
        return density_ratio(self, a, delta, h, clip=clip)


def fit_treatment_model(learner, h: History, a: FloatArray) -> TreatmentModel:
    """Mean fit plus residual SD (divisor n - 1) on the supplied rows."""
    x = learner.features(h)
    fit = learner.fit(x, a)
    resid = a - fit.predict(x)
    sigma = float(np.std(resid, ddof=1))

    def mean(hh: History) -> FloatArray:
        return fit.predict(learner.features(hh))

    return TreatmentModel(mean=mean, sigma=sigma)


def normal_ratio(u: Any, delta: float, sigma: float) -> Any:
    """``phi(a - delta; m, sigma) / phi(a; m, sigma)`` with ``u = a - m``."""
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(u)) and np.isfinite(delta) and np.isfinite(sigma)):
        raise ConfigError("density ratio inputs must be finite")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    if delta == 0:
        return np.ones_like(u)
    return np.exp((2.0 * u * delta - delta * delta) / (2.0 * sigma * sigma))


def clip_ratio(r: Any, clip: tuple[float, float] | None = DEFAULT_CLIP) -> tuple[FloatArray, int]:
    """Clip density ratios to ``clip``; returns the clipped values and how many moved."""
    r = np.asarray(r, dtype=float)
    if clip is None:
        return r, 0
    lo, hi = clip
    n_clipped = int(np.count_nonzero((r < lo) | (r > hi)))
    if n_clipped == 0:
        return r, 0
    return np.clip(r, lo, hi), n_clipped


def density_ratio(model: TreatmentModel, a: Any, delta: float, h: History,
                  clip: tuple[float, float] | None = None) -> Any:
    u = np.asarray(a, dtype=float) - model.mean(h)
    r, _ = clip_ratio(normal_ratio(u, delta, model.sigma), clip)
    return float(r.ravel()[0]) if np.ndim(a) == 0 else r


# ---------------------------------------------------------------------------
# Adjoint pullback


def adjoint_pullback(q: Any, ratio: Any) -> FloatArray:
    """Shift-policy pullback ``q~ = q * r`` for index functions of the history.

    ``q`` has one row per unit, ``ratio`` is ``f(A - delta | H) / f(A | H)``.
    """
    q = np.asarray(q, dtype=float)
    r = np.asarray(ratio, dtype=float)
    return q * (r[:, None] if q.ndim == 2 else r)


def adjoint_pullback_general(q: Callable, density: Callable, g_inverse: Callable,
                             jacobian: Callable, l: Any, a: Any) -> FloatArray:
    """Pullback for a bijective, differentiable policy.

    ``q~(l, a) = q(l, g^-1(a)) * f(g^-1(a) | l) / f(a | l) * |d g^-1 / da|``.
    For a shift ``g(a) = a + delta`` the preimage is ``a - delta`` and the
    Jacobian is one.
    """
    a = np.asarray(a, dtype=float)
    pre = g_inverse(l, a)
    base = density(pre, l) / density(a, l) * np.abs(jacobian(l, a))
    qv = np.asarray(q(l, pre), dtype=float)
    return qv * (base[..., None] if qv.ndim > np.ndim(base) else base)


def adjoint_pullback_discrete(q: Any, pmf: Any, support: Sequence[Any],
                              g: Callable[[Any], Any]) -> FloatArray:
    """Pullback for a discrete treatment and a possibly many-to-one policy.

    Parameters
    ----------
    q : array, shape (n, k) or (n, k, d)
        Index function evaluated at ``(l_i, support[j])``.
    pmf : array, shape (n, k)
        ``pi(support[j] | l_i)``.
    support : sequence of length k
        Treatment levels.
    g : callable or int array of shape (n, k)
        Policy map applied to a treatment level, or for covariate-dependent
        policies the support index ``g(support[j], l_i)`` for every ``(i, j)``.

    Returns
    -------
    array shaped like ``q`` holding
    ``q~(l, a) = sum_{a': g(a') = a} q(l, a') pi(a' | l) / pi(a | l)``.
    """
    q = np.asarray(q, dtype=float)
    pmf = np.asarray(pmf, dtype=float)
    support = list(support)
    k = len(support)
    if pmf.ndim != 2 or pmf.shape[1] != k or q.shape[:2] != pmf.shape:
        raise ConfigError("q and pmf must be evaluated on every support level for every unit")
    n = pmf.shape[0]
    if callable(g):
        index = {level: j for j, level in enumerate(support)}
        try:
            row = [index[g(level)] for level in support]
        except KeyError as exc:
            raise ConfigError(f"policy maps level {exc.args[0]!r} outside the support") from None
        dest = np.tile(row, (n, 1))
    else:
        dest = np.asarray(g, dtype=int)
        if dest.shape != (n, k) or dest.min() < 0 or dest.max() >= k:
            raise ConfigError("destination indices must have shape (n, k) and index the support")
    out = np.zeros_like(q)
    for i in range(n):
        for j_src in range(k):
            j_dst = dest[i, j_src]
            level, target = support[j_src], support[j_dst]
            mass = pmf[i, j_src]
            if mass == 0:
                continue
            if pmf[i, j_dst] <= 0:
                raise PositivityError(
                    f"unit {i}: level {target!r} has zero probability but is reached from {level!r}"
                )
            out[i, j_dst] = out[i, j_dst] + q[i, j_src] * mass / pmf[i, j_dst]
    return out


def fit_outcome(learner, h: History, a: FloatArray, y: FloatArray):
    x = learner.features(h, a)
    return learner.fit(x, y)


def subset(h: Mapping[str, Any], index: Any) -> dict[str, Any]:
    return {k: np.asarray(v)[index] for k, v in h.items()}
