"""Synthetic stream data and the power-curve experiment runner."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from .core import Method, StreamMatrix, build_data_grid
from .errors import DomainError, PermHCError, SignalOutOfRange
from .oracle import (
    Family,
    NullModel,
    OracleCalibration,
    approx_pq,
    beta_from_size,
    calibrate_oracle,
    oracle_hc_test,
    signal_theta,
)
from .permute import (
    PermutationPlan,
    _check_calibratable,
    _hc_from_sample,
    _max_from_sample,
    derive_seed,
    sample_permuted_means,
)

__all__ = [
    "SweepKind",
    "Sweep",
    "ExperimentSpec",
    "PowerPoint",
    "PowerCurve",
    "gen_normal",
    "gen_exponential",
    "wilson_interval",
    "run_experiment",
    "run_experiments",
    "paper_figure",
    "PAPER_FIGURES",
    "DEFAULT_TAUS",
    "write_power_csv",
    "write_plot_data",
    "manifest",
]

DEFAULT_TAUS = tuple(round(0.25 * k, 2) for k in range(11))
_CALIB_KEY = 1_000_003


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_normal(n: int, t: int, s: int, mu: float, seed) -> StreamMatrix:
    """First ``s`` streams N(mu, 1), the rest N(0, 1)."""
    if not 0 <= s <= n:
        raise DomainError("need 0 <= s <= n")
    if mu < 0:
        raise DomainError("mu must be >= 0")
    x = _rng(seed).standard_normal((n, t))
    x[:s] += mu
    return StreamMatrix(x)


def gen_exponential(n: int, t: int, s: int, lambda0: float, theta: float, seed) -> StreamMatrix:
    """First ``s`` streams Exp(rate lambda0 - theta), the rest Exp(rate lambda0)."""
    if not 0 <= s <= n:
        raise DomainError("need 0 <= s <= n")
    if theta < 0:
        raise DomainError("theta must be >= 0")
    if theta >= lambda0:
        raise SignalOutOfRange(f"theta={theta} >= lambda0={lambda0}")
    rng = _rng(seed)
    x = rng.exponential(1.0 / lambda0, (n, t))
    if s:
        x[:s] = rng.exponential(1.0 / (lambda0 - theta), (s, t))
    return StreamMatrix(x)


def _generate(model: NullModel, n: int, t: int, s: int, theta: float, rng) -> StreamMatrix:
    if model.family is Family.NORMAL:
        return gen_normal(n, t, s, theta, rng)
    return gen_exponential(n, t, s, model.lambda0, theta, rng)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


class SweepKind(str, enum.Enum):
    TAU = "Tau"
    STREAM_LENGTH = "StreamLength"
    GRID_SPACING = "GridSpacing"

    @classmethod
    def _missing_(cls, value):
        # accept "tau", "stream_length", "grid-spacing" and similar spellings
        key = str(value).replace("_", "").replace("-", "").lower()
        for k in cls:
            if k.value.lower() == key:
                return k
        return None


@dataclass(frozen=True)
class Sweep:
    kind: SweepKind
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SweepKind(self.kind))
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise DomainError("sweep needs at least one value")


@dataclass(frozen=True)
class ExperimentSpec:
    """One power-curve experiment.

    Axes that are not swept take the fixed values ``t``, ``tau`` and
    ``grid_divisor`` (``None`` meaning ``log n``). ``beta`` defaults to the
    value implied by ``s`` and ``n``.
    """

    model: NullModel
    n: int
    t: int
    s: int
    sweep: Sweep
    methods: tuple[Method, ...] = (Method.PERM_HC,)
    reps: int = 200
    B: int = 1000
    alpha: float = 0.05
    seed: int = 0
    tau: float = 1.0
    grid_divisor: float | None = None
    beta: float | None = None
    calib_samples: int = 10_000
    label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if not 0 <= self.s <= self.n:
            raise DomainError("need 0 <= s <= n")
        if self.n < 2:
            raise DomainError("need n >= 2")

    @property
    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return beta_from_size(self.n, self.s)

    def point(self, value: float) -> tuple[int, float, float]:
        """``(t, tau, d)`` at one sweep value."""
        t, tau = self.t, self.tau
        d = math.log(self.n) if self.grid_divisor is None else self.grid_divisor
        kind = self.sweep.kind
        if kind is SweepKind.TAU:
            tau = float(value)
        elif kind is SweepKind.STREAM_LENGTH:
            t = int(value)
        else:
            d = float(value)
        return t, tau, d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = {"family": self.model.family.value, "lambda0": self.model.lambda0}
        d["sweep"] = {"kind": self.sweep.kind.value, "values": list(self.sweep.values)}
        d["methods"] = [m.value for m in self.methods]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        model = d.pop("model", {"family": "normal"})
        if isinstance(model, str):
            model = {"family": model}
        sweep = d.pop("sweep")
        methods = d.pop("methods", ["PermHC"])
        return cls(
            model=NullModel(Family(model["family"]), float(model.get("lambda0", 1.5))),
            sweep=Sweep(SweepKind(sweep["kind"]), tuple(sweep["values"])),
            methods=tuple(Method.parse(m) for m in methods),
            **d,
        )


@dataclass(frozen=True)
class PowerPoint:
    sweep_value: float
    power: float
    ci_lo: float
    ci_hi: float
    reps: int
    rejections: int
    error: str | None = None


@dataclass
class PowerCurve:
    method: Method
    series: str
    sweep: SweepKind
    points: list[PowerPoint] = field(default_factory=list)

    def at(self, value: float) -> PowerPoint:
        for p in self.points:
            if math.isclose(p.sweep_value, value):
                return p
        raise KeyError(value)


_PERM_METHODS = (Method.PERM_HC, Method.APPROX_HC, Method.PERM_MAX)


def _rep_pvalues(spec: ExperimentSpec, x: StreamMatrix, d: float, sample, calib) -> dict:
    """p-value (or exception) per method for one replicate dataset."""
    out: dict = {}
    perm = [m for m in spec.methods if m in _PERM_METHODS]
    if perm:
        try:
            if isinstance(sample, Exception):
                raise sample
            grid = build_data_grid(x, d)
        except PermHCError as exc:
            for m in perm:
                out[m] = exc
        else:
            for m in perm:
                if m is Method.PERM_HC:
                    out[m] = _hc_from_sample(x, sample, grid)[1]
                elif m is Method.APPROX_HC:
                    out[m] = _hc_from_sample(x, sample, grid, p=approx_pq(grid.qs, x.n))[1]
                else:
                    out[m] = _max_from_sample(x, sample)[1]
    if Method.ORACLE_HC in spec.methods:
        try:
            out[Method.ORACLE_HC] = oracle_hc_test(x, spec.model, d=d, calibration=calib(d)).p_value
        except PermHCError as exc:
            out[Method.ORACLE_HC] = exc
    return out


def _shared_key(spec: ExperimentSpec):
    # specs with equal keys see the same datasets and permutation samples
    if spec.sweep.kind is SweepKind.GRID_SPACING:
        return spec
    return replace(spec, grid_divisor=None, label="", methods=())


def run_experiment(spec: ExperimentSpec, progress=None, *, threads: int | None = None) -> list[PowerCurve]:
    """Empirical power with Wilson intervals, one curve per method.

    Dataset ``rep`` at sweep point ``k`` is generated from the seed path
    ``(seed, k, rep, 0)`` and its permutations from ``(seed, k, rep, 1)``; all
    permutation-based methods share that permutation sample. Oracle
    calibrations are simulated once per ``(t, d)`` with a seed that does not
    depend on the sweep point.
    """
    return run_experiments([spec], progress, threads=threads)[0]


def run_experiments(specs: Sequence[ExperimentSpec], progress=None, *, threads: int | None = None):
    """``run_experiment`` for several specs, one list of curves per spec.

    Specs that differ only in grid divisor and label (the series of a grid
    comparison) reuse each replicate's dataset and permutation sample, which
    gives exactly the curves of separate runs at a fraction of the cost.
    """
    results: list = [None] * len(specs)
    groups: dict = {}
    for i, spec in enumerate(specs):
        groups.setdefault(_shared_key(spec), []).append(i)
    for idx in groups.values():
        curves = _run_group([specs[i] for i in idx], progress, threads)
        for i, c in zip(idx, curves):
            results[i] = c
    return results


def _run_group(specs: list[ExperimentSpec], progress, threads) -> list[list[PowerCurve]]:
    base = specs[0]
    curves = [{m: PowerCurve(m, s.label, s.sweep.kind) for m in s.methods} for s in specs]
    calibrations: dict[tuple[int, float], OracleCalibration] = {}
    beta = base.resolved_beta
    need_perm = any(m in _PERM_METHODS for s in specs for m in s.methods)

    def fail_point(j, value, msg):
        for m in specs[j].methods:
            curves[j][m].points.append(PowerPoint(float(value), math.nan, math.nan, math.nan, 0, 0, msg))

    for k, value in enumerate(base.sweep.values):
        t, tau, _ = base.point(value)
        ds = [s.point(value)[2] for s in specs]

        def calib(d, t=t):
            key = (t, d)
            if key not in calibrations:
                seed = derive_seed(base.seed, _CALIB_KEY, t)
                calibrations[key] = calibrate_oracle(base.model, base.n, t, base.calib_samples, seed, d=d)
            return calibrations[key]

        try:
            theta = signal_theta(tau, beta, base.n, t, base.model).theta
        except PermHCError as exc:
            for j in range(len(specs)):
                fail_point(j, value, repr(exc))
            continue

        rejections = [{m: 0 for m in s.methods} for s in specs]
        errors: list[dict[Method, str]] = [{} for _ in specs]
        for rep in range(base.reps):
            rng = np.random.default_rng(derive_seed(base.seed, k, rep, 0))
            x = _generate(base.model, base.n, t, base.s, theta, rng)
            sample = None
            if need_perm:
                try:
                    _check_calibratable(x)
                    plan = PermutationPlan(base.B, derive_seed(base.seed, k, rep, 1))
                    sample = sample_permuted_means(x, plan, threads)
                except PermHCError as exc:
                    sample = exc
            for j, spec in enumerate(specs):
                for m, p in _rep_pvalues(spec, x, ds[j], sample, calib).items():
                    if isinstance(p, Exception):
                        errors[j].setdefault(m, repr(p))
                    elif p <= spec.alpha:
                        rejections[j][m] += 1
            if progress is not None:
                progress(k, rep)

        for j, spec in enumerate(specs):
            for m in spec.methods:
                if m in errors[j]:
                    curves[j][m].points.append(
                        PowerPoint(float(value), math.nan, math.nan, math.nan, 0, 0, errors[j][m]))
                    continue
                r = rejections[j][m]
                lo, hi = wilson_interval(r, spec.reps)
                curves[j][m].points.append(PowerPoint(float(value), r / spec.reps, lo, hi, spec.reps, r))
    return [list(c.values()) for c in curves]


def _fig(model_name: str, **kw) -> ExperimentSpec:
    model = NullModel.normal() if model_name == "normal" else NullModel.exponential(1.5)
    return ExperimentSpec(model=model, **kw)


def _figure_specs(name: str) -> list[ExperimentSpec]:
    taus = Sweep(SweepKind.TAU, DEFAULT_TAUS)
    logn = math.log(1000)
    both = (Method.PERM_HC, Method.ORACLE_HC)
    if name in ("1a", "1b"):
        model = "normal" if name == "1a" else "exponential"
        return [
            _fig(model, n=1000, t=48, s=12, sweep=taus, methods=(Method.PERM_HC,), grid_divisor=c * logn, label=lab)
            for c, lab in ((0.5, "d=log(n)/2"), (1.0, "d=log(n)"), (4.0, "d=4log(n)"))
        ]
    if name == "2a":
        return [_fig("normal", n=1000, t=48, s=12, tau=1.5, methods=both,
                     sweep=Sweep(SweepKind.STREAM_LENGTH, (1, 2, 4, 8, 16, 32, 48)))]
    if name == "2b":
        return [_fig("exponential", n=1000, t=48, s=12, tau=1.25, methods=both,
                     sweep=Sweep(SweepKind.STREAM_LENGTH, (4, 8, 16, 32, 48)))]
    if name in ("3a", "3b", "3c", "3d"):
        model = "normal" if name in ("3a", "3c") else "exponential"
        s = 12 if name in ("3a", "3b") else 3
        return [_fig(model, n=1000, t=48, s=s, sweep=taus, methods=both)]
    if name in ("5a", "5b"):
        # |S| = 12 of n = 100 gives beta < 1/2; the alternative is scaled at beta ~ 0.64
        return [_fig("exponential", n=100, t=4 if name == "5a" else 6, s=12, sweep=taus,
                     beta=beta_from_size(1000, 12),
                     methods=(Method.PERM_HC, Method.APPROX_HC, Method.PERM_MAX))]
    raise DomainError(f"unknown figure {name!r}")


PAPER_FIGURES = ("1a", "1b", "2a", "2b", "3a", "3b", "3c", "3d", "5a", "5b")
PAPER_REPS = 1000


def paper_figure(name: str, desk: bool = False, seed: int = 0) -> list[ExperimentSpec]:
    """Built-in experiment specs. ``desk`` divides the replicate count by 5."""
    reps = PAPER_REPS // 5 if desk else PAPER_REPS
    return [replace(s, reps=reps, seed=seed) for s in _figure_specs(name)]


CSV_COLUMNS = ("sweep_value", "method", "power", "ci_lo", "ci_hi", "reps", "series")


def _fmt(v: float) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(v)


def write_power_csv(curves: Iterable[PowerCurve], fh: io.TextIOBase) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in curves:
        for p in c.points:
            w.writerow([_fmt(p.sweep_value), c.method.value, _fmt(p.power), _fmt(p.ci_lo),
                        _fmt(p.ci_hi), p.reps, c.series])


def write_plot_data(runs: Sequence[tuple[ExperimentSpec, list[PowerCurve]]], fh: io.TextIOBase) -> None:
    """Long-format table with every experiment setting on each row."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["series", "family", "n", "t", "s", "tau", "grid_divisor", "sweep", "sweep_value",
                "method", "power", "ci_lo", "ci_hi", "reps", "rejections", "error"])
    for spec, curves in runs:
        for c in curves:
            for p in c.points:
                t, tau, d = spec.point(p.sweep_value)
                w.writerow([c.series, spec.model.family.value, spec.n, t, spec.s, _fmt(tau), _fmt(d),
                            spec.sweep.kind.value, _fmt(p.sweep_value), c.method.value, _fmt(p.power),
                            _fmt(p.ci_lo), _fmt(p.ci_hi), p.reps, p.rejections, p.error or ""])


def manifest(specs: Sequence[ExperimentSpec], config: dict | None = None) -> str:
    from . import __version__

    body = {"version": __version__, "config": config or {}, "experiments": [s.to_dict() for s in specs]}
    return json.dumps(body, indent=2, sort_keys=True, default=str)
