"""Command-line front end: CSV ingestion, analysis configs, reports and simulations.

Configuration is a JSON document. Command-line flags override the matching
fields of the document, which override built-in defaults. A relative ``data``
path in a config file is resolved against the file's directory.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .core import (
    LAYOUTS,
    TREATMENT,
    Basis,
    BlipSpec,
    ConfigError,
    DataError,
    EstimateReport,
    MTPError,
    Panel,
    PolicyEvalError,
    PolicySpec,
    SingularSystemError,
)
from .longitudinal import BootstrapError, estimate_longitudinal
from .nuisance import DEFAULT_CLIP
from .point import NuisanceConfig, estimate_point, estimate_point_outcome_regression
from .simulation import (
    DESIGNS,
    MonteCarloConfig,
    MonteCarloError,
    MonteCarloSummary,
    default_params,
    run_monte_carlo,
    write_truth,
)
from .trends import estimate_pt_point, estimate_pt_two_period

ESTIMATORS = ("orthogonal", "outcome-regression", "pt")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class ColumnMap:
    """Names of the CSV columns that hold each panel field.

    ``baseline_outcome`` is the pre-period outcome of ``pt-point`` files.
    ``modifiers`` are the covariates the blip depends on.
    """

    id: str = "id"
    time: str = "t"
    treatment: str = "A"
    outcome: str = "Y"
    baseline_outcome: str | None = None
    covariates: tuple[str, ...] = ()
    modifiers: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ColumnMap:
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown column-map keys {sorted(unknown)}")
        data = dict(data)
        for key in ("covariates", "modifiers"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: column {column!r} is not finite: {text!r}")
    return value


def ingest_csv(path: str | Path, mapping: ColumnMap, layout: str) -> Panel:
    """Read a CSV file into a validated :class:`Panel`.

    Point layouts have one row per unit. Longitudinal layouts are long format
    with one row per unit and time ``t = 0..T-1``; only the last row of each
    unit needs an outcome. ``pt-longitudinal`` files have rows ``t = 0..T``
    with the outcome on every row; treatment and covariates on row ``T`` may
    be blank. Numbers use a decimal point; scientific notation is accepted.
    """
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if TREATMENT in mapping.covariates:
        raise ConfigError(f"covariate name {TREATMENT!r} is reserved for the treatment")
    missing_mod = [m for m in mapping.modifiers if m not in mapping.covariates]
    if missing_mod:
        raise ConfigError(f"modifiers {missing_mod} must also be listed as covariates")
    if layout == "pt-point" and not mapping.baseline_outcome:
        raise ConfigError("pt-point layout needs a baseline_outcome column")
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        longitudinal = layout in ("longitudinal", "pt-longitudinal")
        needed = [mapping.id, *mapping.covariates, mapping.treatment, mapping.outcome]
        if longitudinal:
            needed.append(mapping.time)
        if layout == "pt-point":
            needed.append(mapping.baseline_outcome)
        for col in needed:
            if col not in header:
                raise DataError(f"{path.name}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path.name}: no data rows")

    def cell(rec: dict[str, str], col: str, row: int) -> float:
        text = (rec.get(col) or "").strip()
        if text == "":
            raise DataError(f"row {row}: column {col!r} is missing")
        return _parse_float(text, row, col)

    covs = mapping.covariates
    if not longitudinal:
        ids, x, a, y = [], [], [], []
        for i, rec in enumerate(rows, start=2):
            ids.append(rec[mapping.id].strip())
            x.append([cell(rec, c, i) for c in covs])
            a.append(cell(rec, mapping.treatment, i))
            if layout == "pt-point":
                y.append([cell(rec, mapping.baseline_outcome, i), cell(rec, mapping.outcome, i)])
            else:
                y.append(cell(rec, mapping.outcome, i))
        if len(set(ids)) != len(ids):
            dup = next(u for u in ids if ids.count(u) > 1)
            raise DataError(f"duplicate unit id {dup!r}")
        cov = np.asarray(x, dtype=float).reshape(len(ids), 1, len(covs))
        return Panel(layout, np.asarray(ids), tuple(covs), cov, np.asarray(a)[:, None], np.asarray(y))

    by_unit: dict[str, dict[int, tuple[int, dict[str, str]]]] = {}
    for i, rec in enumerate(rows, start=2):
        uid = (rec.get(mapping.id) or "").strip()
        if uid == "":
            raise DataError(f"row {i}: column {mapping.id!r} is missing")
        t_val = cell(rec, mapping.time, i)
        if t_val != int(t_val) or t_val < 0:
            raise DataError(f"row {i}: time must be a non-negative integer, got {t_val}")
        t = int(t_val)
        slots = by_unit.setdefault(uid, {})
        if t in slots:
            raise DataError(f"row {i}: duplicate (id, time) = ({uid!r}, {t})")
        slots[t] = (i, rec)
    last = max(max(s) for s in by_unit.values())
    T = last if layout == "pt-longitudinal" else last + 1
    if T < 1:
        raise DataError("longitudinal files need at least one treatment time")
    ids = list(by_unit)
    n, p = len(ids), len(covs)
    cov = np.empty((n, T, p))
    trt = np.empty((n, T))
    out = np.empty((n, T + 1)) if layout == "pt-longitudinal" else np.empty(n)
    for u, uid in enumerate(ids):
        slots = by_unit[uid]
        for t in range(last + 1):
            if t not in slots:
                raise DataError(f"unit {uid!r} is missing time t={t}")
            i, rec = slots[t]
            if t < T:
                cov[u, t] = [cell(rec, c, i) for c in covs]
                trt[u, t] = cell(rec, mapping.treatment, i)
            if layout == "pt-longitudinal":
                out[u, t] = cell(rec, mapping.outcome, i)
            elif t == T - 1:
                out[u] = cell(rec, mapping.outcome, i)
    return Panel(layout, np.asarray(ids), tuple(covs), cov, trt, out)


# ---------------------------------------------------------------------------
# Analysis configuration


@dataclass(frozen=True)
class AnalysisConfig:
    """Everything needed to reproduce one analysis.

    Basis fields hold term lists (``["1", "L", "A*L"]``); for multi-time
    layouts they hold one term list per time (or, for ``pt`` on a two-period
    panel, per block ``01, 12, 02``). Unset bases get defaults built from the
    column map.
    """

    data: str
    layout: str
    columns: ColumnMap
    policy_kind: str = "shift"
    delta: tuple[float, ...] = ()
    estimator: str = "orthogonal"
    folds: int = 5
    seed: int = 0
    bootstrap: int | None = None
    clip: tuple[float, float] | None = DEFAULT_CLIP
    ridge: float = 0.0
    blip_terms: Any = None
    outcome_terms: Any = None
    treatment_terms: Any = None
    trend_terms: Any = None
    effect_grid: tuple[float, ...] | None = None
    invariance_check: bool = True

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path | None = None) -> AnalysisConfig:
        data = dict(data)
        allowed = {f.name for f in fields(cls)} | {"policy"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        for key in ("data", "layout"):
            if key not in data:
                raise ConfigError(f"configuration needs {key!r}")
        policy = data.pop("policy", {}) or {}
        if "kind" in policy:
            data["policy_kind"] = policy["kind"]
        if "delta" in policy:
            data["delta"] = policy["delta"]
        data["columns"] = ColumnMap.from_dict(data.get("columns", {}))
        delta = data.get("delta", ())
        data["delta"] = (float(delta),) if np.ndim(delta) == 0 else tuple(float(d) for d in delta)
        if data.get("clip") is not None:
            data["clip"] = tuple(float(c) for c in data["clip"])
        if data.get("effect_grid") is not None:
            data["effect_grid"] = tuple(float(v) for v in data["effect_grid"])
        path = Path(data["data"])
        if base_dir is not None and not path.is_absolute():
            data["data"] = str(Path(base_dir) / path)
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["policy"] = {"kind": out.pop("policy_kind"), "delta": list(out.pop("delta"))}
        out["columns"] = {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in asdict(self.columns).items()}
        return _listify(out)

    def policy(self) -> PolicySpec:
        if not self.delta:
            raise ConfigError("policy needs a delta")
        return PolicySpec(self.policy_kind, self.delta)

    def validate(self) -> None:
        """Checks that need no data; runs before anything is read or fitted."""
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        pt = self.layout.startswith("pt-")
        if (self.estimator == "pt") != pt:
            raise ConfigError(f"estimator {self.estimator!r} does not fit layout {self.layout!r}")
        if self.estimator == "outcome-regression" and self.layout != "point":
            raise ConfigError("the outcome-regression estimator needs a point layout")
        policy = self.policy()
        if self.estimator == "pt":
            if all(d == 0 for d in policy.delta) and policy.kind == "shift":
                raise ConfigError("every shift is zero: no blip is identified")
        else:
            policy.require_shift(len(policy.delta))
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.bootstrap is not None and 0 < self.bootstrap < 100:
            raise ConfigError("bootstrap needs at least 100 replicates (or 0 to disable)")


def _listify(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _history_names(cols: ColumnMap, layout: str, t: int) -> list[str]:
    if layout in ("point", "pt-point"):
        return list(cols.covariates)
    names = [f"{c}_{s}" for s in range(t + 1) for c in cols.covariates]
    return names + [f"{TREATMENT}_{s}" for s in range(t)]


def _modifiers(cols: ColumnMap, layout: str, t: int) -> list[str]:
    if layout in ("point", "pt-point"):
        return list(cols.modifiers)
    return [f"{m}_{t}" for m in cols.modifiers]


def _per_time(value: Any, T: int, default) -> list[list[str]]:
    if value is None:
        return [default(t) for t in range(T)]
    if all(isinstance(v, str) for v in value):
        return [list(value) for _ in range(T)]
    if len(value) != T:
        raise ConfigError(f"expected {T} term lists, got {len(value)}")
    return [list(v) for v in value]


def _default_outcome(cols: ColumnMap, layout: str, t: int) -> list[str]:
    return ["1", *_history_names(cols, layout, t), TREATMENT,
            *(f"{TREATMENT}*{m}" for m in _modifiers(cols, layout, t))]


def _default_treatment(cols: ColumnMap, layout: str, t: int) -> list[str]:
    return ["1", *_history_names(cols, layout, t)]


def _default_blip(cols: ColumnMap, layout: str, t: int) -> list[str]:
    return ["1", *_modifiers(cols, layout, t)]


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class EffectRow:
    block: str
    value: float
    effect: float
    se: float
    lower: float
    upper: float


@dataclass(frozen=True)
class ReportDocument:
    """Structured result of ``fit``: estimates, effect table, diagnostics and provenance."""

    estimate: EstimateReport
    policy: dict[str, Any]
    effects: tuple[EffectRow, ...]
    config: dict[str, Any]
    version: str
    seed: int
    checks: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "seed": self.seed,
            "policy": self.policy,
            "estimate": self.estimate.to_dict(),
            "effects": [asdict(r) for r in self.effects],
            "checks": self.checks,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ReportDocument:
        return cls(
            estimate=EstimateReport.from_dict(data["estimate"]),
            policy=dict(data["policy"]),
            effects=tuple(EffectRow(**r) for r in data["effects"]),
            config=dict(data["config"]),
            version=data["version"],
            seed=int(data["seed"]),
            checks=dict(data.get("checks", {})),
        )

    def summary(self) -> str:
        lines = [f"mtpsnmm {self.version}  policy={self.policy['kind']} delta={self.policy['delta']}"
                 f"  seed={self.seed}", self.estimate.summary()]
        if self.effects:
            lines += ["", "effect of the policy at modifier values (delta-method 95% CI)",
                      f"{'block':<8}{'value':>10}{'effect':>10}{'se':>10}{'lower':>10}{'upper':>10}"]
            for r in self.effects:
                lines.append(f"{r.block:<8}{r.value:>10.4g}{r.effect:>10.4f}{r.se:>10.4f}"
                             f"{r.lower:>10.4f}{r.upper:>10.4f}")
        for key, value in self.checks.items():
            lines.append(f"check {key}: {value}")
        return "\n".join(lines)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        (out / "summary.txt").write_text(self.summary() + "\n")


def effect_table(report: EstimateReport, blocks: Sequence[tuple[str, Basis, float, Sequence[float]]],
                 offsets: Sequence[int]) -> list[EffectRow]:
    """``Delta(v) = delta (psi_1 + psi_2 v)`` with variance ``delta^2 s(v)' V s(v)``.

    Only blocks whose basis is ``(1, modifier)`` get rows.
    """
    rows = []
    for (label, basis, delta, grid), off in zip(blocks, offsets):
        if len(basis) != 2 or basis.terms[0] != "1":
            continue
        psi = report.psi[off:off + 2]
        cov = report.cov[off:off + 2, off:off + 2]
        for v in grid:
            s = np.array([1.0, float(v)])
            effect = delta * (psi[0] + psi[1] * float(v))
            se = abs(delta) * math.sqrt(max(float(s @ cov @ s), 0.0))
            rows.append(EffectRow(label, float(v), float(effect), se,
                                  float(effect - 1.96 * se), float(effect + 1.96 * se)))
    return rows


def _grid(values: np.ndarray, explicit: Sequence[float] | None) -> list[float]:
    if explicit is not None:
        return [float(v) for v in explicit]
    return [float(np.min(values)), float(np.median(values)), float(np.max(values))]


def _unit_offsets(n: int) -> np.ndarray:
    """Integer per-unit level shifts for the additive-invariance spot check."""
    return (np.arange(n) % 7 - 3).astype(float) * 1000.0


def run_analysis(config: AnalysisConfig, panel: Panel | None = None) -> ReportDocument:
    """Read the data, fit the configured estimator and assemble the report."""
    config.validate()
    cols = config.columns
    if panel is None:
        panel = ingest_csv(config.data, cols, config.layout)
    policy = config.policy()
    layout = config.layout
    T = panel.n_times
    if len(policy.delta) not in (1, T):
        raise ConfigError(f"policy has {len(policy.delta)} deltas for {T} times")

    blocks: list[tuple[str, Basis, float, Sequence[float]]] = []

    def modifier_values(t: int) -> np.ndarray | None:
        if len(cols.modifiers) != 1:
            return None
        return panel.covariates[:, t, list(cols.covariates).index(cols.modifiers[0])]

    checks: dict[str, Any] = {}
    if config.estimator == "pt":
        if T == 1:
            blip = BlipSpec([config.blip_terms or _default_blip(cols, layout, 0)])
            trend = config.trend_terms or _default_outcome(cols, layout, 0)
            fit = lambda p: estimate_pt_point(p, policy, blip, trend)  # noqa: E731
            labels = [("psi", 0, 0)]
        elif T == 2:
            default_blip = [_default_blip(cols, layout, t) for t in (0, 1, 0)]
            blip = BlipSpec(config.blip_terms or default_blip)
            trend = config.trend_terms or [_default_outcome(cols, layout, 0),
                                           _default_outcome(cols, layout, 1),
                                           _default_outcome(cols, layout, 0)]
            fit = lambda p: estimate_pt_two_period(p, policy, blip, trend)  # noqa: E731
            labels = [("psi01", 0, 0), ("psi12", 1, 1), ("psi02", 2, 0)]
        else:
            raise ConfigError("parallel-trends analyses support one or two treatment times")
        report = fit(panel)
        if config.invariance_check:
            shifted = panel.with_outcomes(panel.outcomes + _unit_offsets(panel.n)[:, None])
            again = fit(shifted)
            diff = float(np.max(np.abs(again.psi - report.psi)))
            checks["additive_invariance"] = {
                "max_abs_diff": diff,
                "bitwise": bool(np.array_equal(again.psi, report.psi)),
                "within_1e-9": diff <= 1e-9,
            }
        dropped = set(report.diagnostics.get("dropped_blocks", []))
        offsets, off = [], 0
        for label, j, t in labels:
            if label[3:] in dropped:
                continue
            basis = blip.bases[j]
            vals = modifier_values(t)
            if vals is not None and policy.kind == "shift":
                blocks.append((label, basis, policy.delta_at(t), _grid(vals, config.effect_grid)))
                offsets.append(off)
            off += len(basis)
    else:
        if layout == "point":
            blip = BlipSpec([config.blip_terms or _default_blip(cols, layout, 0)])
        else:
            blip = BlipSpec(_per_time(config.blip_terms, T, lambda t: _default_blip(cols, layout, t)))
        if config.estimator == "outcome-regression":
            terms = config.outcome_terms or _default_outcome(cols, layout, 0)
            report = estimate_point_outcome_regression(panel, policy, blip, terms)
        else:
            nuis = NuisanceConfig(
                outcome=_per_time(config.outcome_terms, T, lambda t: _default_outcome(cols, layout, t)),
                treatment=_per_time(config.treatment_terms, T,
                                    lambda t: _default_treatment(cols, layout, t)),
                clip=config.clip,
            )
            if layout == "point":
                report = estimate_point(panel, policy, blip, nuis, K=config.folds,
                                        seed=config.seed, ridge=config.ridge)
            else:
                report = estimate_longitudinal(panel, policy, blip, nuis, K=config.folds,
                                               seed=config.seed, ridge=config.ridge,
                                               n_boot=config.bootstrap)
        offsets = []
        for t in range(T):
            vals = modifier_values(t)
            if vals is not None:
                label = "psi" if T == 1 else f"psi{t}"
                blocks.append((label, blip.bases[t], policy.delta_at(t), _grid(vals, config.effect_grid)))
                offsets.append(blip.offsets[t])

    effects = effect_table(report, blocks, offsets)
    return ReportDocument(
        estimate=report,
        policy={"kind": policy.kind, "delta": list(policy.delta)},
        effects=tuple(effects),
        config=config.to_dict(),
        version=__version__,
        seed=config.seed,
        checks=checks,
    )


# ---------------------------------------------------------------------------
# Simulation command


def run_simulation_command(design: str, n: int, reps: int, seed: int, out: str | Path,
                           boot: int | None = None, folds: int | None = None) -> MonteCarloSummary:
    """Run a Monte Carlo study and write its summary, replicate estimates and truth."""
    if design not in DESIGNS:
        raise ConfigError(f"unknown design {design!r}; expected one of {sorted(DESIGNS)}")
    cfg = MonteCarloConfig()
    if boot is not None:
        cfg = replace(cfg, n_boot=boot)
    if folds is not None:
        cfg = replace(cfg, K=folds)
    summary = run_monte_carlo(design, n, reps, seed, cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(summary.table() + "\n")
    doc = {**summary.to_dict(), "version": __version__}
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    with (out / "replicates.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", *(f"est_{nm}" for nm in summary.names),
                         *(f"se_{nm}" for nm in summary.names)])
        for r, est, se in zip(summary.replicates, summary.estimates, summary.ses):
            writer.writerow([r, *(repr(float(v)) for v in est), *(repr(float(v)) for v in se)])
    write_truth(out / "truth.json", default_params(DESIGNS[design]))
    return summary


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit with code 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtpsnmm", description="Blip estimation for modified treatment policies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, text in (("fit", "fit the configured estimator and write a report"),
                       ("validate", "check a config and its data without fitting")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON analysis configuration")
        p.add_argument("--data", help="CSV file (overrides the config)")
        p.add_argument("--seed", type=int, help="fold seed (overrides the config)")
        p.add_argument("--folds", type=int, help="cross-fitting folds (overrides the config)")
        p.add_argument("--boot", type=int, help="bootstrap replicates (overrides the config)")
        if name == "fit":
            p.add_argument("--out", default=".", help="output directory (default: current)")

    p = sub.add_parser("simulate", help="run a Monte Carlo study of a built-in design")
    p.add_argument("--design", required=True, help=f"one of {', '.join(sorted(DESIGNS))}")
    p.add_argument("--n", type=int, required=True, help="units per replicate")
    p.add_argument("--reps", type=int, required=True, help="number of replicates")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--boot", type=int, help="bootstrap replicates (longitudinal designs)")
    p.add_argument("--folds", type=int, help="cross-fitting folds")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    return parser


def _load_config(args: argparse.Namespace) -> AnalysisConfig:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.data is not None:
        raw["data"] = str(Path(args.data).resolve())
    for flag, key in (("seed", "seed"), ("folds", "folds"), ("boot", "bootstrap")):
        value = getattr(args, flag)
        if value is not None:
            raw[key] = value
    return AnalysisConfig.from_dict(raw, base_dir=path.parent)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            summary = run_simulation_command(args.design, args.n, args.reps, args.seed, args.out,
                                             boot=args.boot, folds=args.folds)
            print(summary.table())
            return EXIT_OK
        config = _load_config(args)
        if args.command == "validate":
            panel = ingest_csv(config.data, config.columns, config.layout)
            print(f"ok: {panel.n} units, {panel.n_times} treatment time(s), layout {panel.layout}")
            return EXIT_OK
        doc = run_analysis(config)
        doc.write(args.out)
        print(doc.summary())
        return EXIT_OK
    except (ConfigError, PolicyEvalError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularSystemError, BootstrapError, MonteCarloError, MTPError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
