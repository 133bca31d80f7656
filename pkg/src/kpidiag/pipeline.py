"""End-to-end diagnosis pipeline and the per-stage pieces the CLI composes.

Order of stages: ingest -> impute -> pruning advisory -> stratify -> sample
-> train -> extract -> dedup/filter -> impact -> score floor -> triage ->
record -> report. Running the stages through their file-based sub-commands
produces byte-identical reports to one monolithic run.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import forest, ingest, prep, report, rules
from .config import RunConfig, predicate_from_json, predicate_to_json
from .errors import StageError
from .ingest import LogTable
from .model import KpiKind, Rule, TriageCategory, TriagedRule
from .triage import HistoryStore, detect_resolved, record_run
from .triage import triage as triage_today


@dataclass
class DiagnoseResult:
    exit_code: int
    report_json: str
    report_markdown: str
    triaged: list[TriagedRule]
    resolved: list[str]
    pruning: list[prep.PruneRecommendation]
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


class _StageTimer:
    def __init__(self):
        self.timings: dict[str, float] = {}
        self._stage = None
        self._start = 0.0

    def stage(self, name: str):
        self._stage = name
        self._start = time.perf_counter()
        return self

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self._stage] = self.timings.get(self._stage, 0.0) + (
            time.perf_counter() - self._start
        )
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self._stage, exc) from exc
        return False


def _seeds(seed: int) -> tuple[int, int]:
    """Independent substreams for sampling and training from one seed."""
    children = np.random.SeedSequence(seed).spawn(2)
    return (
        int(children[0].generate_state(1)[0]),
        int(children[1].generate_state(1)[0]),
    )


def prepare_table(config: RunConfig, input_path, timer: _StageTimer | None = None):
    """ingest -> impute -> pruning advisory. Returns (imputed, pruning, warnings)."""
    timer = timer or _StageTimer()
    with timer.stage("ingest"):
        table = ingest.load(input_path, config.input_format, config.schema_config())
    with timer.stage("impute"):
        imputed = prep.impute(table)
    with timer.stage("prune"):
        pruning = prep.recommend_pruning(imputed, config.max_cardinality)
    # config-excluded columns never reach the advisory (they are not
    # features), so anything flagged here is still in play
    warnings = [
        f"column {rec.attribute!r} flagged ({rec.reason}, cardinality "
        f"{rec.cardinality}) but not excluded by the config"
        for rec in pruning
    ]
    return imputed, pruning, warnings


def build_model(
    config: RunConfig, imputed: LogTable, timer: _StageTimer | None = None
) -> forest.ForestModel:
    """stratify -> sample -> train on the prepared table."""
    timer = timer or _StageTimer()
    sample_seed, train_seed = _seeds(config.seed)
    with timer.stage("stratify"):
        stratified = prep.stratify(imputed, config.kpi)
    with timer.stage("sample"):
        sampled = prep.sample(stratified, config.kpi, config.sample_rows, sample_seed)
    with timer.stage("train"):
        if config.kpi.kind is KpiKind.BINARY:
            y = prep.stratify(sampled, config.kpi).labels
        else:
            y = sampled.values(config.kpi.column)
        min_rows = max(1, round(config.min_rows_in_leaf_pct / 100.0 * sampled.row_count))
        hp = forest.Hyperparams(
            min_rows_in_leaf=min_rows,
            feature_sample_ratio=config.feature_sample_ratio,
            num_trees=config.num_trees,
            rng_seed=train_seed,
        )
        return forest.train(sampled, y, hp)


def mine_rules(
    config: RunConfig,
    model: forest.ForestModel,
    imputed: LogTable,
    run_date: datetime.date,
    timer: _StageTimer | None = None,
) -> list[Rule]:
    """extract -> dedup -> drop inverted equalities -> impact -> score floor."""
    timer = timer or _StageTimer()
    with timer.stage("extract"):
        scoring = rules.resolve_scoring(config.scoring)
        candidates = rules.extract_rules(model, scoring)
        kept = rules.filter_negative(rules.deduplicate(candidates))
    with timer.stage("impact"):
        annotated = rules.annotate_impacts(kept, imputed, config.kpi)
        annotated = [dataclasses.replace(r, as_of=run_date) for r in annotated]
    return [r for r in annotated if r.correlation_score >= config.min_score]


def triage_rules(
    config: RunConfig,
    mined: list[Rule],
    history_path,
    run_date: datetime.date,
    timer: _StageTimer | None = None,
):
    """triage -> detect resolved -> record. Returns (triaged, resolved keys)."""
    timer = timer or _StageTimer()
    with timer.stage("triage"):
        store = HistoryStore(history_path)
        triaged = triage_today(mined, store, run_date)
        resolved = detect_resolved(mined, store, run_date)
        record_run(mined, store, run_date)
    return triaged, resolved


def exit_code_for(triaged: list[TriagedRule]) -> int:
    alerting = {TriageCategory.NEW, TriageCategory.REGRESSED}
    return 2 if any(t.category in alerting for t in triaged) else 0


def run_diagnose(
    config: RunConfig,
    input_path,
    history_path,
    out_dir,
    run_date: datetime.date,
) -> DiagnoseResult:
    """Execute the full pipeline and write report/advisory artifacts.

    Exit code 0: nothing new or regressed; 2: at least one new/regressed
    rule. Stage failures raise StageError(stage, cause).
    """
    os.makedirs(out_dir, exist_ok=True)
    timer = _StageTimer()
    imputed, pruning, warnings = prepare_table(config, input_path, timer)
    model = build_model(config, imputed, timer)
    with timer.stage("dump-model"):
        with open(os.path.join(out_dir, "model.txt"), "w", encoding="utf-8") as f:
            f.write(forest.dump_text(model))
    mined = mine_rules(config, model, imputed, run_date, timer)
    triaged, resolved = triage_rules(config, mined, history_path, run_date, timer)
    with timer.stage("report"):
        report_json = report.render_json(
            triaged, resolved, run_date, config.kpi, config.table_name
        )
        report_md = report.render_markdown(
            triaged, resolved, run_date, config.kpi, config.table_name
        )
        _write(os.path.join(out_dir, "report.json"), report_json)
        _write(os.path.join(out_dir, "report.md"), report_md)
        _write(os.path.join(out_dir, "pruning.json"), pruning_report_json(pruning, warnings))
    return DiagnoseResult(
        exit_code=exit_code_for(triaged),
        report_json=report_json,
        report_markdown=report_md,
        triaged=triaged,
        resolved=resolved,
        pruning=pruning,
        warnings=warnings,
        timings=timer.timings,
    )


def _write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def pruning_report_json(pruning, warnings) -> str:
    doc = {
        "recommendations": [
            {"attribute": p.attribute, "cardinality": p.cardinality, "reason": p.reason}
            for p in pruning
        ],
        "warnings": warnings,
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# -- rule (de)serialization for the stage-composition files ----------------


def rule_to_json(rule: Rule) -> dict:
    return {
        "correlated_predicate": predicate_to_json(rule.correlated_predicate),
        "scope_predicates": [predicate_to_json(p) for p in rule.scope_predicates],
        "correlation_score": rule.correlation_score,
        "request_count": rule.request_count,
        "performance_impact": rule.performance_impact,
        "as_of": rule.as_of.isoformat() if rule.as_of else None,
        "full_row_count": rule.full_row_count,
        "stale": rule.stale,
    }


def rule_from_json(d: dict) -> Rule:
    return Rule(
        correlated_predicate=predicate_from_json(d["correlated_predicate"]),
        scope_predicates=tuple(predicate_from_json(p) for p in d["scope_predicates"]),
        correlation_score=float(d["correlation_score"]),
        request_count=int(d["request_count"]),
        performance_impact=d.get("performance_impact"),
        as_of=datetime.date.fromisoformat(d["as_of"]) if d.get("as_of") else None,
        full_row_count=d.get("full_row_count"),
        stale=bool(d.get("stale", False)),
    )


def write_rules(rules_list: list[Rule], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([rule_to_json(r) for r in rules_list], f, indent=2, ensure_ascii=False)
        f.write("\n")


def read_rules(path) -> list[Rule]:
    with open(path, encoding="utf-8") as f:
        return [rule_from_json(d) for d in json.load(f)]
