"""Domain types for modified treatment policies and structural nested mean models.

Histories are flat name -> column mappings. In point layouts the names are the
covariate names themselves; in longitudinal layouts covariate ``x`` measured at
time ``j`` is ``x_j`` and the past treatment at time ``j`` is ``A_j``. The
current treatment is always referred to as ``A`` inside basis terms.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
History = Mapping[str, Any]

LAYOUTS = ("point", "longitudinal", "pt-point", "pt-longitudinal")
TREATMENT = "A"


class MTPError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MTPError, ValueError):
    """Invalid estimator, policy or basis configuration."""


class DataError(MTPError, ValueError):
    """Malformed or incomplete data."""


class PolicyEvalError(MTPError):
    """A custom policy could not be evaluated."""


class SingularSystemError(MTPError, np.linalg.LinAlgError):
    """A normal-equation or regression system could not be solved."""


class PositivityError(MTPError, ValueError):
    """The modified treatment value has zero probability under the observed law."""


# ---------------------------------------------------------------------------
# Panel


@dataclass(frozen=True)
class Panel:
    """Unit-by-time observational records.

    Attributes
    ----------
    layout : str
        One of ``point``, ``longitudinal``, ``pt-point``, ``pt-longitudinal``.
    ids : ndarray
        Unit identifiers, unique.
    covariate_names : tuple of str
        Names of the covariates measured at every time.
    covariates : ndarray, shape (n, T, p)
    treatments : ndarray, shape (n, T)
    outcomes : ndarray
        Exchangeability layouts: terminal outcome, shape (n,).
        Parallel-trends layouts: outcomes at times 0..T, shape (n, T + 1).
    """

    layout: str
    ids: NDArray[Any]
    covariate_names: tuple[str, ...]
    covariates: FloatArray
    treatments: FloatArray
    outcomes: FloatArray

    def __post_init__(self) -> None:
        if self.layout not in LAYOUTS:
            raise DataError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        cov = np.asarray(self.covariates, dtype=float)
        trt = np.asarray(self.treatments, dtype=float)
        out = np.asarray(self.outcomes, dtype=float)
        ids = np.asarray(self.ids)
        if cov.ndim != 3:
            raise DataError("covariates must have shape (n, T, p)")
        n, T, p = cov.shape
        if trt.shape != (n, T):
            raise DataError(f"treatments must have shape {(n, T)}, got {trt.shape}")
        if self.layout.startswith("pt-"):
            if out.shape != (n, T + 1):
                raise DataError(
                    f"parallel-trends layouts need outcomes at times 0..T, shape {(n, T + 1)}"
                )
        elif out.shape != (n,):
            raise DataError(f"exchangeability layouts need a terminal outcome, shape {(n,)}")
        if self.layout in ("point", "pt-point") and T != 1:
            raise DataError("point layouts have exactly one treatment time")
        if len(self.covariate_names) != p:
            raise DataError("covariate_names does not match covariate dimension")
        if TREATMENT in self.covariate_names:
            raise DataError(f"covariate name {TREATMENT!r} is reserved for the treatment")
        if ids.shape != (n,) or len(np.unique(ids)) != n:
            raise DataError("unit identifiers must be unique, one per unit")
        for name, arr in (("covariates", cov), ("treatments", trt), ("outcomes", out)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contain missing or non-finite values")
        for name, arr in (("covariates", cov), ("treatments", trt), ("outcomes", out), ("ids", ids)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.treatments.shape[0]

    @property
    def n_times(self) -> int:
        return self.treatments.shape[1]

    def history(self, t: int = 0) -> dict[str, FloatArray]:
        """Pre-treatment history H_t as a name -> column mapping."""
        if not 0 <= t < self.n_times:
            raise IndexError(f"time {t} out of range for T={self.n_times}")
        if self.layout in ("point", "pt-point"):
            return {name: self.covariates[:, 0, j] for j, name in enumerate(self.covariate_names)}
        h: dict[str, FloatArray] = {}
        for s in range(t + 1):
            for j, name in enumerate(self.covariate_names):
                h[f"{name}_{s}"] = self.covariates[:, s, j]
        for s in range(t):
            h[f"{TREATMENT}_{s}"] = self.treatments[:, s]
        return h

    def take(self, index: Sequence[int] | NDArray[np.integer]) -> Panel:
        """Sub- or re-sample units; duplicated units get fresh identifiers."""
        index = np.asarray(index, dtype=int)
        ids = self.ids[index]
        if len(np.unique(ids)) != len(ids):
            ids = np.arange(len(index))
        return Panel(
            self.layout,
            ids,
            self.covariate_names,
            self.covariates[index],
            self.treatments[index],
            self.outcomes[index],
        )

    def with_outcomes(self, outcomes: FloatArray) -> Panel:
        return Panel(self.layout, self.ids, self.covariate_names, self.covariates,
                     self.treatments, outcomes)


# ---------------------------------------------------------------------------
# Basis terms

_FACTOR = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)(?:\^(\d+))?$")


@dataclass(frozen=True)
class Basis:
    """Products of history columns (and the treatment ``A``), one per term.

    Terms are strings such as ``"1"``, ``"L"``, ``"L^2"`` or ``"A*L_1"``.
    """

    terms: tuple[str, ...]
    _parsed: tuple[tuple[tuple[str, int], ...], ...] = field(
        init=False, repr=False, compare=False
    )

    def __init__(self, terms: Sequence[str]):
        if isinstance(terms, str):
            terms = [terms]
        terms = tuple(str(t).replace(" ", "") for t in terms)
        if not terms:
            raise ConfigError("a basis needs at least one term")
        if len(set(terms)) != len(terms):
            raise ConfigError(f"duplicate basis terms in {terms}")
        parsed = []
        for term in terms:
            if term == "1":
                parsed.append(())
                continue
            factors = []
            for factor in term.split("*"):
                m = _FACTOR.match(factor)
                if m is None:
                    raise ConfigError(f"cannot parse basis term {term!r}")
                factors.append((m.group(1), int(m.group(2) or 1)))
            parsed.append(tuple(factors))
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_parsed", tuple(parsed))

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def variables(self) -> set[str]:
        return {name for factors in self._parsed for name, _ in factors}

    @property
    def uses_treatment(self) -> bool:
        return TREATMENT in self.variables

    def check(self, names: Sequence[str], allow_treatment: bool = False) -> None:
        known = set(names)
        if allow_treatment:
            known.add(TREATMENT)
        missing = sorted(self.variables - known)
        if missing:
            raise ConfigError(f"basis refers to unknown variables {missing}; available: {sorted(known)}")

    def design(self, h: History, a: Any = None, n: int | None = None) -> FloatArray:
        """Evaluate the basis on a history (and treatment), one row per unit."""
        if n is None:
            n = _length(h, a)
        out = np.empty((n, len(self.terms)))
        for j, factors in enumerate(self._parsed):
            col = np.ones(n)
            for name, power in factors:
                if name == TREATMENT:
                    if a is None:
                        raise ConfigError(f"term {self.terms[j]!r} needs the treatment")
                    v = a
                else:
                    try:
                        v = h[name]
                    except KeyError:
                        raise ConfigError(f"history has no variable {name!r}") from None
                v = np.asarray(v, dtype=float)
                col = col * (v if power == 1 else v**power)
            out[:, j] = col
        return out


def _length(h: History, a: Any) -> int:
    for v in h.values():
        return int(np.size(v))
    if a is not None:
        return int(np.size(a))
    return 1


# ---------------------------------------------------------------------------
# Policies

POLICY_KINDS = ("shift", "threshold", "custom")


@dataclass(frozen=True)
class PolicySpec:
    """A modified treatment policy ``g_t(h_t, a_t)``.

    ``shift`` returns ``a + delta[t]``; ``threshold`` raises the natural value to
    ``delta[t]`` when it falls below it; ``custom`` calls ``func(h, a, t)``.
    """

    kind: str
    delta: tuple[float, ...]
    func: Callable[[History, FloatArray, int], Any] | None = None

    def __init__(self, kind: str, delta: float | Sequence[float] = 0.0, func=None):
        if kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
        if np.ndim(delta) == 0:
            delta = (float(delta),)
        delta = tuple(float(d) for d in delta)
        if not all(math.isfinite(d) for d in delta):
            raise ConfigError("policy parameters must be finite")
        if kind == "custom" and func is None:
            raise ConfigError("custom policies need a callable")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "func", func)

    @classmethod
    def shift(cls, *delta: float) -> PolicySpec:
        return cls("shift", delta)

    @classmethod
    def threshold(cls, *delta: float) -> PolicySpec:
        return cls("threshold", delta)

    def delta_at(self, t: int) -> float:
        if len(self.delta) == 1:
            return self.delta[0]
        try:
            return self.delta[t]
        except IndexError:
            raise ConfigError(f"policy has no parameter for time {t}") from None

    def require_shift(self, n_times: int) -> tuple[float, ...]:
        """Shift sizes per time, rejecting non-shift policies and zero shifts."""
        if self.kind != "shift":
            raise ConfigError(
                f"this estimator supports shift policies only, got {self.kind!r}"
            )
        if len(self.delta) not in (1, n_times):
            raise ConfigError(f"expected 1 or {n_times} shift sizes, got {len(self.delta)}")
        deltas = tuple(self.delta_at(t) for t in range(n_times))
        for t, d in enumerate(deltas):
            if d == 0.0:
                raise ConfigError(
                    f"shift at time {t} is zero: the blip parameters are not identified"
                )
        return deltas


def apply_policy(policy: PolicySpec, h: History, a: Any, t: int = 0) -> Any:
    """Modified treatment ``g_t(h, a)``; vectorised over units."""
    a_arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a_arr)):
        raise ConfigError("treatment values must be finite")
    if policy.kind == "shift":
        out = a_arr + policy.delta_at(t)
    elif policy.kind == "threshold":
        d = policy.delta_at(t)
        out = np.where(a_arr < d, d, a_arr)
    else:
        try:
            out = np.asarray(policy.func(h, a_arr, t), dtype=float)
        except Exception as exc:  # noqa: BLE001 - user code
            raise PolicyEvalError(f"custom policy failed at time {t}: {exc}") from exc
        if out.shape != a_arr.shape or not np.all(np.isfinite(out)):
            raise PolicyEvalError(f"custom policy returned invalid values at time {t}")
    return float(out) if np.ndim(a) == 0 else out


def displacement(policy: PolicySpec, h: History, a: Any, t: int = 0) -> Any:
    """How far the policy moves the treatment, ``g_t(h, a) - a``."""
    if policy.kind == "shift":
        d = policy.delta_at(t)
        return d if np.ndim(a) == 0 else np.full(np.shape(a), d)
    return apply_policy(policy, h, a, t) - np.asarray(a, dtype=float)


# ---------------------------------------------------------------------------
# Blip models


@dataclass(frozen=True)
class BlipSpec:
    """Linear blip model ``gamma_t(h, a; psi) = -(g_t(h, a) - a) * s_t(h)' psi_t``.

    For a shift policy the displacement is the constant ``delta_t`` so the blip
    reduces to ``-delta_t * s_t(h)' psi_t``.
    """

    bases: tuple[Basis, ...]

    def __init__(self, bases: Basis | Sequence[Basis | Sequence[str]]):
        if isinstance(bases, Basis):
            bases = (bases,)
        bases = tuple(b if isinstance(b, Basis) else Basis(b) for b in bases)
        for t, b in enumerate(bases):
            if b.uses_treatment:
                raise ConfigError(f"blip basis at time {t} must depend on history only")
        object.__setattr__(self, "bases", bases)

    @property
    def n_times(self) -> int:
        return len(self.bases)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.bases)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.dims)]))

    def split(self, psi: Any) -> list[FloatArray]:
        psi = np.asarray(psi, dtype=float).ravel()
        if psi.size != sum(self.dims):
            raise ConfigError(f"psi has {psi.size} entries, blip model needs {sum(self.dims)}")
        off = self.offsets
        return [psi[off[t]:off[t + 1]] for t in range(self.n_times)]

    def names(self) -> list[str]:
        if self.n_times == 1:
            return [f"psi[{term}]" for term in self.bases[0].terms]
        return [f"psi{t}[{term}]" for t, b in enumerate(self.bases) for term in b.terms]


def blip_value(basis: Basis, h: History, delta: Any, psi: Any) -> Any:
    """``-delta * s(h)' psi``; vectorised over units when ``h`` holds arrays."""
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.size != len(basis):
        raise ConfigError(f"psi has {psi.size} entries, basis has {len(basis)} terms")
    s = basis.design(h)
    value = -np.asarray(delta, dtype=float) * (s @ psi)
    scalar = all(np.ndim(v) == 0 for v in h.values())
    return float(value[0]) if scalar else value


def blip(blipspec: BlipSpec, policy: PolicySpec, t: int, h: History, a: Any, psi_t: Any) -> Any:
    """Blip at time ``t`` under an arbitrary policy (zero where ``g`` is the identity)."""
    return blip_value(blipspec.bases[t], h, displacement(policy, h, a, t), psi_t)


def blip_down(
    panel: Panel,
    blipspec: BlipSpec,
    policy: PolicySpec,
    psi: Any,
    start: int = 0,
    horizon: int | None = None,
) -> FloatArray:
    """Pseudo-outcomes ``Y_k - sum_{j=start}^{k-1} gamma_j(H_j, A_j; psi)``.

    With the true parameter their conditional mean given ``(H_start, A_start)``
    equals the counterfactual mean under the observed regime through
    ``start - 1`` and the policy thereafter.
    """
    T = panel.n_times
    k = T if horizon is None else horizon
    if not 1 <= k <= T:
        raise ConfigError(f"horizon {k} out of range 1..{T}")
    if not 0 <= start <= k:
        raise ConfigError(f"start time {start} out of range 0..{k}")
    if panel.layout.startswith("pt-"):
        y = panel.outcomes[:, k]
    elif k == T:
        y = panel.outcomes
    else:
        raise ConfigError("exchangeability layouts only carry the terminal outcome")
    if blipspec.n_times < k:
        raise ConfigError(f"blip model covers {blipspec.n_times} times, horizon is {k}")
    parts = blipspec.split(psi)
    total = np.zeros(panel.n)
    for j in range(start, k):
        if not np.any(parts[j]):
            continue
        total = total + blip(blipspec, policy, j, panel.history(j), panel.treatments[:, j], parts[j])
    if start == k or not np.any(total):
        return np.array(y, copy=True)
    return y - total


# ---------------------------------------------------------------------------
# Estimate reports


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate, covariance and diagnostics for a blip parameter."""

    estimator: str
    names: tuple[str, ...]
    psi: FloatArray
    cov: FloatArray
    jacobian: FloatArray
    influence: FloatArray
    n: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        psi = np.asarray(self.psi, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float).reshape(psi.size, psi.size)
        cov = (cov + cov.T) / 2
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "jacobian", np.asarray(self.jacobian, dtype=float))
        object.__setattr__(self, "influence", np.asarray(self.influence, dtype=float))
        object.__setattr__(self, "names", tuple(self.names))
        for name in ("psi", "cov", "jacobian", "influence"):
            getattr(self, name).flags.writeable = False

    @property
    def se(self) -> FloatArray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def ci95(self) -> FloatArray:
        """Wald intervals ``psi +/- 1.96 se``, shape (d, 2)."""
        half = 1.96 * self.se
        return np.column_stack([self.psi - half, self.psi + half])

    def to_dict(self, include_influence: bool = False) -> dict[str, Any]:
        out = {
            "estimator": self.estimator,
            "names": list(self.names),
            "psi": self.psi.tolist(),
            "cov": self.cov.tolist(),
            "se": self.se.tolist(),
            "ci95": self.ci95.tolist(),
            "jacobian": self.jacobian.tolist(),
            "n": self.n,
            "diagnostics": _jsonable(self.diagnostics),
        }
        if include_influence:
            out["influence"] = self.influence.tolist()
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EstimateReport:
        d = len(data["psi"])
        influence = data.get("influence")
        return cls(
            estimator=data["estimator"],
            names=tuple(data["names"]),
            psi=np.asarray(data["psi"], dtype=float),
            cov=np.asarray(data["cov"], dtype=float),
            jacobian=np.asarray(data["jacobian"], dtype=float),
            influence=np.empty((0, d)) if influence is None else np.asarray(influence, dtype=float),
            n=int(data["n"]),
            diagnostics=dict(data.get("diagnostics", {})),
        )

    def summary(self) -> str:
        width = max(len(n) for n in self.names)
        lines = [f"{self.estimator}  (n={self.n})",
                 f"{'':<{width}}  {'estimate':>10} {'se':>10} {'ci95_lo':>10} {'ci95_hi':>10}"]
        for name, est, se, (lo, hi) in zip(self.names, self.psi, self.se, self.ci95):
            lines.append(f"{name:<{width}}  {est:>10.4f} {se:>10.4f} {lo:>10.4f} {hi:>10.4f}")
        return "\n".join(lines)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
