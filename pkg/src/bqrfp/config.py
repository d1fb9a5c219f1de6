"""Run configuration (TOML) and CSV ingestion."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ald import validate_tau
from .fp_basis import PredictorSpec

log = logging.getLogger(__name__)

METHODS = ("qr", "bqr", "bqrvs")
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "."})


class ConfigError(ValueError):
    pass


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    name: str
    kind: str = "continuous"
    powers: tuple[float, ...] = (1.0,)
    levels: tuple[int, ...] | None = None
    encoding: str = "integer"
    shift: bool = False
    labels: dict[str, str] = field(default_factory=dict)
    scheme: str | None = None  # category scheme used by `describe`

    def to_spec(self) -> PredictorSpec:
        if self.kind == "continuous":
            return PredictorSpec.continuous(self.name, self.powers, shift=self.shift)
        if self.kind == "categorical":
            return PredictorSpec.categorical(self.name, self.levels, self.encoding)
        raise ConfigError(f"predictor {self.name}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class StageSettings:
    em_max_iters: int = 1000
    em_replications: int = 2
    em_tol: float = 1e-6
    bqr_iters: int = 10000
    bqr_burn_in: int = 1000
    bqrvs_iters: int = 5000
    bqrvs_burn_in: int = 2500
    select_steps: int = 1250
    select_burn_in: int = 500
    cutoff: float = 0.9
    n_boot: int = 1000
    variant: str = "exact"
    refresh_latent: bool = True


@dataclass(frozen=True)
class Filters:
    minimum: dict[str, float] = field(default_factory=dict)
    maximum: dict[str, float] = field(default_factory=dict)
    exclude: dict[str, tuple[float, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    response: str
    predictors: tuple[PredictorConfig, ...]
    response_readings: tuple[str, ...] = ()
    taus: tuple[float, ...] = (0.5, 0.75, 0.95)
    method: str = "bqrvs"
    seed: int = 2024
    g: float = 1000.0
    intercept: bool = False
    stages: StageSettings = StageSettings()
    filters: Filters = Filters()
    response_scheme: str | None = None
    extra_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.taus:
            raise ConfigError("at least one tau is required")
        for t in self.taus:
            try:
                validate_tau(t)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if not self.g > 0:
            raise ConfigError("g must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        names = [p.name for p in self.predictors]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate predictor names")
        if not self.predictors:
            raise ConfigError("no predictors configured")
        for p in self.predictors:
            p.to_spec()

    @property
    def specs(self) -> list[PredictorSpec]:
        return [p.to_spec() for p in self.predictors]

    def required_columns(self) -> list[str]:
        resp = list(self.response_readings) or [self.response]
        cols = resp + [p.name for p in self.predictors] + list(self.extra_columns)
        for f in (self.filters.minimum, self.filters.maximum, self.filters.exclude):
            cols += list(f)
        return list(dict.fromkeys(c for c in cols if c != self.response or not self.response_readings))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["taus"] = [float(t) for t in self.taus]
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _tuple_map(d):
    return {str(k): tuple(float(x) for x in (v if isinstance(v, list) else [v])) for k, v in d.items()}


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    try:
        preds = []
        for p in raw.pop("predictors", []):
            p = dict(p)
            if "powers" in p:
                p["powers"] = tuple(float(x) for x in p["powers"])
            if "levels" in p:
                p["levels"] = tuple(int(x) for x in p["levels"])
            if "labels" in p:
                p["labels"] = {str(k): str(v) for k, v in p["labels"].items()}
            preds.append(PredictorConfig(**p))
        stages = StageSettings(**raw.pop("stages", {}))
        f = raw.pop("filters", {})
        filters = Filters(
            minimum={k: float(v) for k, v in f.get("min", {}).items()},
            maximum={k: float(v) for k, v in f.get("max", {}).items()},
            exclude=_tuple_map(f.get("exclude", {})),
        )
        for key in ("taus", "response_readings", "extra_columns"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return RunConfig(predictors=tuple(preds), stages=stages, filters=filters, **raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(raw)


@dataclass
class Dataset:
    columns: dict[str, np.ndarray]
    response: str
    n: int
    drop_report: dict[str, int]
    source: str = ""

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.response]


def _parse(token: str):
    if token.strip().lower() in MISSING_TOKENS:
        return None
    return float(token)


def ingest(path, config: RunConfig) -> Dataset:
    """Read a header-first UTF-8 CSV and apply the configured filters.

    Rows missing any declared field are dropped; ``drop_report`` counts, per
    reason, how many rows were removed. With ``response_readings`` set the
    response is the mean of those reading columns.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = config.required_columns()
        absent = [c for c in needed if c not in header]
        if absent:
            raise IngestError(f"{path}: missing columns {absent}")
        parsed = {c: [] for c in needed}
        for i, row in enumerate(reader):
            for c in needed:
                try:
                    parsed[c].append(_parse(row[c] or ""))
                except ValueError:
                    raise IngestError(f"{path}: column {c!r} row {i} (line {i + 2}): "
                                      f"expected a number, got {row[c]!r}") from None
    n_raw = len(parsed[needed[0]]) if needed else 0
    if n_raw == 0:
        raise IngestError(f"{path}: no data rows")

    report: dict[str, int] = {}
    keep = np.ones(n_raw, dtype=bool)
    arrays = {}
    for c in needed:
        vals = parsed[c]
        miss = np.array([v is None for v in vals])
        arrays[c] = np.array([math.nan if v is None else v for v in vals], dtype=float)
        dropped = int(np.sum(miss & keep))
        if dropped:
            report[f"missing:{c}"] = dropped
        keep &= ~miss

    def apply(mask, reason):
        nonlocal keep
        dropped = int(np.sum(keep & ~mask))
        if dropped:
            report[reason] = report.get(reason, 0) + dropped
        keep &= mask

    for c, lo in config.filters.minimum.items():
        apply(~(arrays[c] < lo), f"min:{c}")
    for c, hi in config.filters.maximum.items():
        apply(~(arrays[c] > hi), f"max:{c}")
    for c, vals in config.filters.exclude.items():
        apply(~np.isin(arrays[c], vals), f"exclude:{c}")

    columns = {c: a[keep] for c, a in arrays.items()}
    if config.response_readings:
        columns[config.response] = np.mean([columns[c] for c in config.response_readings], axis=0)
    n = int(keep.sum())
    if n == 0:
        raise IngestError(f"{path}: every row was dropped ({report})")
    log.info("ingested %d of %d rows from %s; dropped %s", n, n_raw, path, report or "none")
    return Dataset(columns, config.response, n, report, str(path))
