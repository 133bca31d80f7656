"""kpidiag: diagnose and triage KPI regressions from structured service logs.

The pipeline trains random-forest models with the KPI as the target,
mines the trees for predicates correlated with degradation, and classifies
each surviving rule against a rolling score history.
"""

from .errors import ConfigError, DumpParseError, SchemaError, StageError
from .ingest import ColumnDecl, LogTable, SchemaConfig, load, measure_cardinality
from .model import (
    MISSING_CATEGORY,
    ColumnKind,
    ColumnRole,
    ColumnSpec,
    KpiKind,
    KpiSpec,
    Predicate,
    PredicateOp,
    Rule,
    SloDirection,
    TriageCategory,
    TriagedRule,
    canonical_key,
)
from .forest import (
    ForestModel,
    Hyperparams,
    SplitCandidate,
    TargetKind,
    TreeNode,
    best_split,
    dump_text,
    entropy,
    information_gain,
    mse_reduction,
    parse_text,
    train,
)
from .prep import StratifiedTable, impute, recommend_pruning, sample, stratify
from .rules import (
    ScoringFunction,
    compute_impact,
    correlation_score,
    deduplicate,
    extract_rules,
    filter_negative,
    resolve_scoring,
    score_node,
)
from .triage import HistoryRecord, HistoryStore, detect_resolved, record_run, triage
from .report import execute_query, generate_query, precision, render
from .synth import AttributeSpec, FaultSpec, GeneratorConfig, KpiProfile, generate

__version__ = "0.1.0"
