"""Monte-Carlo scenario engines.

Unconditional engine: per-hour deviation marginals plus a sparse Gaussian
dependence model over the Gaussianized deviations. Scenarios are Gaussian
draws pushed back through the marginals and added to the forecast.

Conditional engine: for a child zone without forecasts. Actual loads of the
parent and the child are Gaussianized hour by hour and modelled jointly
(48 coordinates). Each scenario draws a parent load path from the
parent's unconditional deviation engine, Gaussianizes it through the
parent's actual-load marginals, samples the child's Gaussian vector from
the conditional law, and maps it back through the child's marginals.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from . import __version__
from .distributions import DEFAULT_TAIL_FRACTION, FitError, SemiParametricMarginal, fit_marginals, gaussianize_panel
from .errors import AlignmentError, ConfigurationError, EngineCorruptionError, InsufficientDataError, ParseError
from .glasso import DEFAULT_LAMBDA, GaussianDependenceModel, conditional_params, empirical_covariance, glasso_fit, select_lambda
from .ingest import HOURS, DayHourMatrix

log = logging.getLogger(__name__)

BLOCK = 256  # scenarios per RNG stream block; fixed so results ignore worker count
DEFAULT_K = 1000


@dataclass(frozen=True)
class EngineConfig:
    tail_fraction: float = DEFAULT_TAIL_FRACTION
    lam: float = DEFAULT_LAMBDA
    lambda_grid: tuple | None = None
    cv_folds: int = 5
    penalize_diagonal: bool = False
    min_days: int = 30
    workers: int = 1

    @classmethod
    def from_mapping(cls, mapping) -> "EngineConfig":
        mapping = dict(mapping or {})
        if mapping.get("lambda_grid") is not None:
            mapping["lambda_grid"] = tuple(float(v) for v in mapping["lambda_grid"])
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown engine settings: {sorted(unknown)}")
        return cls(**mapping)


@dataclass(frozen=True)
class FittedEngine:
    kind: str  # "unconditional" | "conditional"
    hours: tuple[int, ...]
    dev_marginals: tuple
    dev_model: GaussianDependenceModel
    cutoff: dt.date | None = None
    zone_id: str = ""
    vintage: str = ""
    n_days: int = 0
    config: dict = field(default_factory=dict)
    # conditional engines only
    parent_marginals: tuple = ()
    child_marginals: tuple = ()
    joint_model: GaussianDependenceModel | None = None
    parent_zone: str = ""
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def n_hours(self) -> int:
        return len(self.hours)

    def to_dict(self) -> dict:
        return {
            "format": "cppeak-engine",
            "version": __version__,
            "kind": self.kind,
            "hours": list(self.hours),
            "cutoff": self.cutoff.isoformat() if self.cutoff else None,
            "zone_id": self.zone_id,
            "parent_zone": self.parent_zone,
            "vintage": self.vintage,
            "n_days": self.n_days,
            "config": self.config,
            "dev_marginals": [m.to_dict() for m in self.dev_marginals],
            "dev_model": self.dev_model.to_dict(),
            "parent_marginals": [m.to_dict() for m in self.parent_marginals],
            "child_marginals": [m.to_dict() for m in self.child_marginals],
            "joint_model": self.joint_model.to_dict() if self.joint_model else None,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedEngine":
        if d.get("format") != "cppeak-engine":
            raise ParseError("not an engine file")
        marg = SemiParametricMarginal.from_dict
        return cls(
            kind=d["kind"],
            hours=tuple(d["hours"]),
            dev_marginals=tuple(marg(m) for m in d["dev_marginals"]),
            dev_model=GaussianDependenceModel.from_dict(d["dev_model"]),
            cutoff=dt.date.fromisoformat(d["cutoff"]) if d.get("cutoff") else None,
            zone_id=d.get("zone_id", ""),
            vintage=d.get("vintage", ""),
            n_days=int(d.get("n_days", 0)),
            config=d.get("config", {}),
            parent_marginals=tuple(marg(m) for m in d.get("parent_marginals", [])),
            child_marginals=tuple(marg(m) for m in d.get("child_marginals", [])),
            joint_model=GaussianDependenceModel.from_dict(d["joint_model"]) if d.get("joint_model") else None,
            parent_zone=d.get("parent_zone", ""),
            diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "FittedEngine":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ParseError(f"{path}: malformed engine file ({exc})") from exc


@dataclass(frozen=True)
class ScenarioBatch:
    zone_id: str
    day: dt.date | None
    vintage: str
    paths: np.ndarray  # K x N_h, MW
    hours: tuple[int, ...]
    rng_seed: int
    n_violations: int = 0
    conditioning_paths: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        paths = np.array(self.paths, dtype=float)
        paths.setflags(write=False)
        object.__setattr__(self, "paths", paths)

    @property
    def K(self) -> int:
        return self.paths.shape[0]

    def daily_max(self) -> np.ndarray:
        return self.paths.max(axis=1)

    def fan_chart(self, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        q = np.quantile(self.paths, quantiles, axis=0)
        out = {"hour": list(self.hours), "mean": self.paths.mean(axis=0).tolist()}
        for level, row in zip(quantiles, q):
            out[f"q{int(round(level * 100)):02d}"] = row.tolist()
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("scenario_id", "hour", "MW"))
            for k, row in enumerate(self.paths):
                for h, v in zip(self.hours, row):
                    w.writerow((k, h, repr(float(v))))

    def to_binary(self, path: str | Path) -> None:
        """Header ``CPSB``, uint32 K, uint32 N_h, int32 hours, float64 row-major paths."""
        with open(path, "wb") as fh:
            fh.write(b"CPSB")
            fh.write(struct.pack("<II", self.K, len(self.hours)))
            fh.write(np.asarray(self.hours, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(self.paths, dtype="<f8").tobytes())


def read_batch_binary(path: str | Path, zone_id="", day=None, vintage="", rng_seed=0) -> ScenarioBatch:
    raw = Path(path).read_bytes()
    if raw[:4] != b"CPSB":
        raise ParseError(f"{path}: bad magic")
    k, nh = struct.unpack("<II", raw[4:12])
    hours = np.frombuffer(raw[12 : 12 + 4 * nh], dtype="<i4")
    values = np.frombuffer(raw[12 + 4 * nh :], dtype="<f8")
    if values.size != k * nh:
        raise ParseError(f"{path}: expected {k * nh} values, found {values.size}")
    return ScenarioBatch(zone_id, day, vintage, values.reshape(k, nh), tuple(int(h) for h in hours), rng_seed)


def cholesky_with_jitter(cov, tries: int = 3) -> np.ndarray:
    """Lower Cholesky factor; retries with 1e-10, 1e-9, 1e-8 times the mean diagonal added."""
    cov = np.asarray(cov, dtype=float)
    scale = max(float(np.mean(np.diag(cov))), 1e-300)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    for i in range(tries):
        jitter = 1e-10 * 10**i * scale
        try:
            return linalg.cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
    raise EngineCorruptionError("covariance is not positive definite even after jitter")


def standard_normal_draws(K: int, dim: int, seed: int, stream: int = 0, workers: int = 1) -> np.ndarray:
    """K x dim standard normals in fixed-size blocks, each with its own derived stream."""
    starts = list(range(0, K, BLOCK))

    def block(b):
        n = min(BLOCK, K - starts[b])
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, b)))
        return rng.standard_normal((n, dim))

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, range(len(starts))))
    else:
        parts = [block(b) for b in range(len(starts))]
    return np.vstack(parts) if parts else np.empty((0, dim))


def _as_matrix(m):
    if isinstance(m, DayHourMatrix):
        return m.values, m.hours, m.cutoff, m.dates
    arr = np.asarray(m, dtype=float)
    return arr, tuple(range(arr.shape[1])), None, ()


def _fit_dependence(panel_values, config: EngineConfig, layout=None):
    s = empirical_covariance(panel_values)
    lam = config.lam
    if config.lambda_grid:
        lam = select_lambda(panel_values, config.lambda_grid, config.cv_folds, config.penalize_diagonal)
        log.info("selected lambda %g", lam)
    return glasso_fit(s, lam, config.penalize_diagonal, layout=layout)


def fit_unconditional(dev_matrix, config: EngineConfig | None = None, zone_id: str = "", vintage: str = "") -> FittedEngine:
    """Deviation marginals and a dependence model over their Gaussianized panel."""
    config = config or EngineConfig()
    values, hours, cutoff, _ = _as_matrix(dev_matrix)
    if values.shape[0] < config.min_days:
        raise InsufficientDataError(f"need at least {config.min_days} training days, got {values.shape[0]}")
    marginals = fit_marginals(values, config.tail_fraction, hours=hours, workers=config.workers)
    panel = gaussianize_panel(values, marginals)
    model = _fit_dependence(panel.values, config)
    return FittedEngine(
        kind="unconditional",
        hours=tuple(hours),
        dev_marginals=tuple(marginals),
        dev_model=model,
        cutoff=cutoff,
        zone_id=zone_id,
        vintage=vintage,
        n_days=values.shape[0],
        config=dataclasses.asdict(config),
        diagnostics={"lambda": model.lam, "duality_gap": model.duality_gap, "glasso_sweeps": model.n_iter},
    )


def _deviation_paths(engine: FittedEngine, K, seed, stream, workers):
    chol = cholesky_with_jitter(engine.dev_model.covariance)
    z = standard_normal_draws(K, engine.n_hours, seed, stream, workers) @ chol.T
    return np.column_stack([m.degaussianize(z[:, j]) for j, m in enumerate(engine.dev_marginals)])


def _horizon_forecast(engine: FittedEngine, forecast) -> np.ndarray:
    fc = np.asarray(forecast, dtype=float).ravel()
    if fc.size == engine.n_hours:
        pass
    elif fc.size == HOURS:
        fc = fc[list(engine.hours)]
    else:
        raise AlignmentError(f"forecast has {fc.size} hours, engine horizon has {engine.n_hours}")
    if not np.all(np.isfinite(fc)):
        raise AlignmentError("forecast has missing hours in the horizon")
    return fc


def _count_violations(paths, label):
    bad = int(np.count_nonzero(~np.isfinite(paths) | (paths <= 0)))
    if bad:
        log.warning("%s: %d non-positive or non-finite scenario values", label, bad)
    return bad


def simulate_unconditional(
    engine: FittedEngine, forecast, K: int = DEFAULT_K, seed: int = 0, day=None, workers: int = 1
) -> ScenarioBatch:
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    fc = _horizon_forecast(engine, forecast)
    paths = fc + _deviation_paths(engine, K, seed, 0, workers)
    return ScenarioBatch(
        zone_id=engine.zone_id,
        day=day,
        vintage=engine.vintage,
        paths=paths,
        hours=engine.hours,
        rng_seed=seed,
        n_violations=_count_violations(paths, engine.zone_id),
    )


def _label_fit_error(exc, zone):
    return FitError(f"zone {zone}: {exc}", exc.diagnostics | {"zone": zone})


def fit_conditional(
    parent_actual,
    child_actual,
    parent_dev,
    config: EngineConfig | None = None,
    parent_zone: str = "z1",
    child_zone: str = "z2",
    vintage: str = "",
) -> FittedEngine:
    """Joint parent/child actual-load model plus the parent's deviation engine."""
    config = config or EngineConfig()
    pv, p_hours, p_cut, p_dates = _as_matrix(parent_actual)
    cv, c_hours, c_cut, c_dates = _as_matrix(child_actual)
    if pv.shape != cv.shape or (p_dates and c_dates and tuple(p_dates) != tuple(c_dates)):
        raise AlignmentError("parent and child actual matrices must cover the same days")
    if tuple(p_hours) != tuple(range(HOURS)) or tuple(c_hours) != tuple(range(HOURS)):
        raise AlignmentError("actual-load matrices must carry all 24 hours")
    if pv.shape[0] < config.min_days:
        raise InsufficientDataError(f"need at least {config.min_days} training days, got {pv.shape[0]}")

    try:
        parent_m = fit_marginals(pv, config.tail_fraction, workers=config.workers)
    except FitError as exc:
        raise _label_fit_error(exc, parent_zone) from exc
    try:
        child_m = fit_marginals(cv, config.tail_fraction, workers=config.workers)
    except FitError as exc:
        raise _label_fit_error(exc, child_zone) from exc

    joint = np.hstack([gaussianize_panel(pv, parent_m).values, gaussianize_panel(cv, child_m).values])
    layout = {"z1": (0, HOURS), "z2": (HOURS, 2 * HOURS)}
    joint_model = _fit_dependence(joint, config, layout=layout)
    try:
        sub = fit_unconditional(parent_dev, config, zone_id=parent_zone, vintage=vintage)
    except FitError as exc:
        raise _label_fit_error(exc, f"{parent_zone} deviations") from exc

    cutoffs = [c for c in (p_cut, c_cut, sub.cutoff) if c is not None]
    return dataclasses.replace(
        sub,
        kind="conditional",
        zone_id=child_zone,
        parent_zone=parent_zone,
        cutoff=min(cutoffs) if cutoffs else None,
        parent_marginals=tuple(parent_m),
        child_marginals=tuple(child_m),
        joint_model=joint_model,
        n_days=min(sub.n_days, pv.shape[0]),
        diagnostics=sub.diagnostics | {"joint_lambda": joint_model.lam, "joint_duality_gap": joint_model.duality_gap},
    )


def simulate_conditional(
    engine: FittedEngine, parent_forecast, K: int = DEFAULT_K, seed: int = 0, day=None, workers: int = 1
) -> ScenarioBatch:
    """Child-zone scenarios conditioned on freshly simulated parent paths."""
    if engine.kind != "conditional" or engine.joint_model is None:
        raise ConfigurationError("engine is not conditional")
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    fc = _horizon_forecast(engine, parent_forecast)
    hours = list(engine.hours)

    parent_paths = fc + _deviation_paths(engine, K, seed, 0, workers)
    g1 = np.column_stack([engine.parent_marginals[h].gaussianize(parent_paths[:, j]) for j, h in enumerate(hours)])
    mean, cov = conditional_params(engine.joint_model, g1, given_index=hours, target_index=hours)
    chol = cholesky_with_jitter(cov)
    g2 = mean + standard_normal_draws(K, len(hours), seed, 1, workers) @ chol.T
    paths = np.column_stack([engine.child_marginals[h].degaussianize(g2[:, j]) for j, h in enumerate(hours)])
    return ScenarioBatch(
        zone_id=engine.zone_id,
        day=day,
        vintage=engine.vintage,
        paths=paths,
        hours=engine.hours,
        rng_seed=seed,
        n_violations=_count_violations(paths, engine.zone_id),
        conditioning_paths=parent_paths,
    )


def simulate(engine: FittedEngine, forecast, K: int = DEFAULT_K, seed: int = 0, day=None, workers: int = 1) -> ScenarioBatch:
    if engine.kind == "conditional":
        return simulate_conditional(engine, forecast, K, seed, day, workers)
    return simulate_unconditional(engine, forecast, K, seed, day, workers)
