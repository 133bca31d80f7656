"""Run configuration: one JSON file drives schema, KPI, scoring, and knobs.

Example:

    {
      "kpi": {"column": "RequestLatency", "kind": "continuous",
              "slo": {"threshold": 22.0, "direction": "above"}},
      "columns": {"RequestId": {"role": "excluded"},
                  "Region": {"kind": "categorical"}},
      "scoring": "metric",
      "sample_rows": 1000000,
      "seed": 7,
      "hyperparams": {"num_trees": 50, "feature_sample_ratio": 0.6,
                      "min_rows_in_leaf_pct": 1.0}
    }

Command-line flags override config values; the config file is the single
source of schema truth.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .ingest import ColumnDecl, SchemaConfig
from .model import (
    ColumnKind,
    ColumnRole,
    KpiKind,
    KpiSpec,
    Predicate,
    PredicateOp,
    SloDirection,
)
from .synth import AttributeSpec, FaultSpec, GeneratorConfig, KpiProfile

_RUN_KEYS = {
    "kpi",
    "columns",
    "scoring",
    "sample_rows",
    "seed",
    "max_cardinality",
    "min_score",
    "hyperparams",
    "input_format",
    "table_name",
}
_HYPER_KEYS = {"num_trees", "feature_sample_ratio", "min_rows_in_leaf_pct"}


@dataclass(frozen=True)
class RunConfig:
    kpi: KpiSpec
    columns: dict[str, ColumnDecl] = field(default_factory=dict)
    scoring: str = "metric"
    sample_rows: int = 1_000_000
    seed: int = 0
    max_cardinality: int = 10_000
    min_score: float = 0.0
    num_trees: int = 50
    feature_sample_ratio: float = 0.6
    min_rows_in_leaf_pct: float = 1.0
    input_format: str = "csv"
    table_name: str = "logs"

    def schema_config(self) -> SchemaConfig:
        return SchemaConfig(kpi=self.kpi, columns=self.columns)

    def with_overrides(self, **overrides) -> "RunConfig":
        supplied = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **supplied) if supplied else self


def parse_kpi(obj: dict) -> KpiSpec:
    try:
        column = obj["column"]
        kind = KpiKind(obj["kind"])
        slo = obj["slo"]
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad kpi section: {e}") from None
    if kind is KpiKind.CONTINUOUS:
        if "threshold" not in slo:
            raise ConfigError("continuous KPI slo needs a threshold")
        direction = SloDirection(slo.get("direction", "above"))
        return KpiSpec(column=column, kind=kind, threshold=float(slo["threshold"]), direction=direction)
    if "positive_label" not in slo:
        raise ConfigError("binary KPI slo needs a positive_label")
    return KpiSpec(column=column, kind=kind, positive_label=str(slo["positive_label"]))


def parse_run_config(obj: dict) -> RunConfig:
    unknown = set(obj) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "kpi" not in obj:
        raise ConfigError("config must name the KPI column")
    kpi = parse_kpi(obj["kpi"])
    columns: dict[str, ColumnDecl] = {}
    for name, decl in obj.get("columns", {}).items():
        unknown = set(decl) - {"kind", "role"}
        if unknown:
            raise ConfigError(f"column {name!r}: unknown keys {sorted(unknown)}")
        try:
            kind = ColumnKind(decl["kind"]) if "kind" in decl else None
            role = ColumnRole(decl.get("role", "feature"))
        except ValueError as e:
            raise ConfigError(f"column {name!r}: {e}") from None
        columns[name] = ColumnDecl(kind=kind, role=role)
    hp = obj.get("hyperparams", {})
    unknown = set(hp) - _HYPER_KEYS
    if unknown:
        raise ConfigError(f"unknown hyperparams keys: {sorted(unknown)}")
    cfg = RunConfig(
        kpi=kpi,
        columns=columns,
        scoring=str(obj.get("scoring", "metric")),
        sample_rows=int(obj.get("sample_rows", 1_000_000)),
        seed=int(obj.get("seed", 0)),
        max_cardinality=int(obj.get("max_cardinality", 10_000)),
        min_score=float(obj.get("min_score", 0.0)),
        num_trees=int(hp.get("num_trees", 50)),
        feature_sample_ratio=float(hp.get("feature_sample_ratio", 0.6)),
        min_rows_in_leaf_pct=float(hp.get("min_rows_in_leaf_pct", 1.0)),
        input_format=str(obj.get("input_format", "csv")),
        table_name=str(obj.get("table_name", "logs")),
    )
    if cfg.sample_rows < 2:
        raise ConfigError("sample_rows must be >= 2")
    if not (0 < cfg.feature_sample_ratio <= 1):
        raise ConfigError("feature_sample_ratio must be in (0, 1]")
    if cfg.num_trees < 1:
        raise ConfigError("num_trees must be >= 1")
    if not (0 < cfg.min_rows_in_leaf_pct <= 100):
        raise ConfigError("min_rows_in_leaf_pct must be in (0, 100]")
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
    return parse_run_config(obj)


# -- predicate / generator-config serialization ----------------------------


def predicate_to_json(p: Predicate) -> dict:
    return {
        "attribute": p.attribute,
        "op": p.op.value,
        "value": p.value,
        "polarity": p.polarity,
    }


def predicate_from_json(d: dict) -> Predicate:
    try:
        op = PredicateOp(d["op"])
        value = d["value"]
        if op is PredicateOp.GREATER_THAN:
            value = float(value)
        return Predicate(d["attribute"], op, value, bool(d.get("polarity", True)))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad predicate record: {e}") from None


def parse_generator_config(obj: dict) -> GeneratorConfig:
    try:
        attributes = tuple(
            AttributeSpec(
                name=a["name"],
                kind=ColumnKind(a["kind"]),
                cardinality=int(a.get("cardinality", 0)),
                weighting=a.get("weighting", "uniform"),
                distribution=a.get("distribution", "lognormal"),
                loc=float(a.get("loc", 0.0)),
                scale=float(a.get("scale", 1.0)),
                zipf_s=float(a.get("zipf_s", 1.5)),
            )
            for a in obj["attributes"]
        )
        kpi_obj = obj["kpi"]
        kpi = KpiProfile(
            column=kpi_obj["column"],
            kind=KpiKind(kpi_obj["kind"]),
            mu=float(kpi_obj.get("mu", 0.0)),
            sigma=float(kpi_obj.get("sigma", 1.0)),
            failure_rate=float(kpi_obj.get("failure_rate", 0.001)),
            positive_label=kpi_obj.get("positive_label", "fail"),
            negative_label=kpi_obj.get("negative_label", "success"),
        )
        faults = tuple(
            FaultSpec(
                trigger=tuple(predicate_from_json(p) for p in fault["trigger"]),
                shift=_opt_float(fault.get("shift")),
                multiplier=_opt_float(fault.get("multiplier")),
                failure_probability=_opt_float(fault.get("failure_probability")),
                first_day=_opt_date(fault.get("first_day")),
                last_day=_opt_date(fault.get("last_day")),
            )
            for fault in obj.get("faults", [])
        )
        return GeneratorConfig(
            attributes=attributes,
            row_count=int(obj["row_count"]),
            kpi=kpi,
            faults=faults,
            seed=int(obj.get("seed", 0)),
        )
    except KeyError as e:
        raise ConfigError(f"generator config missing key {e}") from None
    except ValueError as e:
        raise ConfigError(f"bad generator config: {e}") from None


def load_generator_config(path) -> GeneratorConfig:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
    return parse_generator_config(obj)


def _opt_float(v) -> float | None:
    return None if v is None else float(v)


def _opt_date(v) -> datetime.date | None:
    return None if v is None else datetime.date.fromisoformat(v)
