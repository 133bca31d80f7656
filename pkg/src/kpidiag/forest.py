"""Random-forest training over log tables (CART-style binary trees).

Classification trees (binary labels) maximize information gain; regression
trees (continuous targets) maximize MSE reduction. Categorical attributes
split on one-vs-rest equality tests, continuous attributes on strict
greater-than thresholds taken at midpoints between consecutive distinct
values (equi-frequency quantile cuts once a node holds more than
QUANTILE_SPLIT_LIMIT distinct values). Per-tree randomness comes from
feature subsampling only; the trained model is never used for prediction,
only mined for rules.

Models serialize to a line-oriented text dump that parses back losslessly:

    TREE <i> <Classification|Regression>
    <indent><attr>=<value>|<attr>><threshold>|LEAF \t <row_count> \t <metric>

with two spaces of indent per depth level and children in left (predicate
true) then right order.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DumpParseError, SchemaError
from .ingest import LogTable
from .model import ColumnKind, Predicate, PredicateOp

QUANTILE_SPLIT_LIMIT = 10_000
QUANTILE_BINS = 256


class TargetKind(Enum):
    CLASSIFICATION = "Classification"
    REGRESSION = "Regression"


@dataclass(frozen=True)
class Hyperparams:
    """Knobs exposed by training.

    min_rows_in_leaf is an absolute row count here; the pipeline derives it
    from a percentage of the sample size. feature_sample_ratio=1.0 makes
    every tree identical since feature subsampling is the only randomness.
    """

    min_rows_in_leaf: int = 1
    feature_sample_ratio: float = 0.6
    num_trees: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_rows_in_leaf < 1:
            raise ValueError("min_rows_in_leaf must be >= 1")
        if not (0.0 < self.feature_sample_ratio <= 1.0):
            raise ValueError("feature_sample_ratio must be in (0, 1]")
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")


@dataclass
class TreeNode:
    """Tree node; treat as immutable once training returns.

    metric is the anomaly probability (positive fraction) for classification
    nodes and the mean target value for regression nodes. Split nodes carry
    a polarity-true predicate; left = predicate true.
    """

    row_count: int
    metric: float
    split: Predicate | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass(frozen=True)
class SplitCandidate:
    predicate: Predicate
    gain: float


@dataclass
class ForestModel:
    """A trained forest. hyperparams is None for models parsed from text."""

    trees: list[TreeNode]
    target_kind: TargetKind
    hyperparams: Hyperparams | None = None
    feature_list: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.hyperparams is not None and len(self.trees) != self.hyperparams.num_trees:
            raise ValueError("tree count does not match hyperparams.num_trees")


# -- split criteria (reference forms) -------------------------------------


def entropy(pos: int, neg: int) -> float:
    """Binary entropy in bits of a (pos, neg) count pair."""
    total = pos + neg
    if total <= 0:
        raise ValueError("entropy of an empty set is undefined")
    h = 0.0
    for c in (pos, neg):
        if 0 < c < total:
            p = c / total
            h -= p * math.log2(p)
    return h


def information_gain(labels: Sequence[bool], left_mask: Sequence[bool]) -> float:
    """Parent entropy minus row-count-weighted child entropies.

    left_mask marks the rows on the predicate-true side; an empty branch
    contributes nothing.
    """
    labels = np.asarray(labels, dtype=bool)
    left_mask = np.asarray(left_mask, dtype=bool)
    n = labels.size
    parent = entropy(int(labels.sum()), int(n - labels.sum()))
    total = 0.0
    for mask in (left_mask, ~left_mask):
        k = int(mask.sum())
        if k == 0:
            continue
        pos = int(labels[mask].sum())
        total += (k / n) * entropy(pos, k - pos)
    return parent - total


def mse_reduction(targets: Sequence[float], left_mask: Sequence[bool]) -> float:
    """Parent MSE minus row-count-weighted child MSEs (each against its own mean)."""
    targets = np.asarray(targets, dtype=np.float64)
    left_mask = np.asarray(left_mask, dtype=bool)
    n = targets.size
    if n < 2:
        raise ValueError("mse_reduction needs at least 2 rows")
    parent = float(np.mean((targets - targets.mean()) ** 2))
    total = 0.0
    for mask in (left_mask, ~left_mask):
        part = targets[mask]
        if part.size == 0:
            continue
        total += (part.size / n) * float(np.mean((part - part.mean()) ** 2))
    return parent - total


# -- training internals ----------------------------------------------------


def _xlog2(a: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape, dtype=np.float64)
    nz = a > 0
    out[nz] = a[nz] * np.log2(a[nz])
    return out


def _weighted_child_entropy(pos: np.ndarray, tot: np.ndarray) -> np.ndarray:
    """tot * H(pos, tot) elementwise, 0 where tot == 0."""
    pos = np.asarray(pos, dtype=np.float64)
    tot = np.asarray(tot, dtype=np.float64)
    safe = np.maximum(tot, 1.0)
    h = tot * np.log2(safe) - _xlog2(pos) - _xlog2(tot - pos)
    return np.where(tot > 0, h, 0.0)


class _TrainingData:
    """Pre-encoded feature columns shared by every tree of one training run."""

    def __init__(self, table: LogTable, features: Sequence[str], y: np.ndarray):
        self.n = table.row_count
        if y.dtype == bool:
            self.kind = TargetKind.CLASSIFICATION
            self.y = y.astype(np.float64)
        else:
            self.kind = TargetKind.REGRESSION
            self.y = np.asarray(y, dtype=np.float64)
            if np.isnan(self.y).any():
                raise SchemaError("regression target contains missing values")
        self.cat_codes: dict[str, np.ndarray] = {}
        self.cat_values: dict[str, tuple[str, ...]] = {}
        self.cont_raw: dict[str, np.ndarray] = {}
        self.cont_ranks: dict[str, np.ndarray] = {}
        self.cont_distinct: dict[str, np.ndarray] = {}
        for name in features:
            spec = table.spec(name)
            if spec.kind is ColumnKind.CATEGORICAL:
                codes = table.codes(name)
                if (codes < 0).any():
                    raise SchemaError(f"feature {name!r} has missing values; impute first")
                self.cat_codes[name] = codes
                self.cat_values[name] = table.categories(name)
            else:
                vals = table.values(name)
                if np.isnan(vals).any():
                    raise SchemaError(f"feature {name!r} has missing values; impute first")
                distinct, ranks = np.unique(vals, return_inverse=True)
                self.cont_raw[name] = vals
                self.cont_ranks[name] = ranks.astype(np.int64)
                self.cont_distinct[name] = distinct

    def node_metric(self, idx: np.ndarray) -> float:
        return float(self.y[idx].mean())

    def split_mask(self, p: Predicate, idx: np.ndarray) -> np.ndarray:
        if p.op is PredicateOp.EQUALS:
            cats = self.cat_values[p.attribute]
            code = _category_code(cats, p.value)
            return self.cat_codes[p.attribute][idx] == code
        return self.cont_raw[p.attribute][idx] > p.value

    def best_split(
        self, idx: np.ndarray, features: Sequence[str], min_rows: int
    ) -> SplitCandidate | None:
        """Max-gain candidate over all features, or None.

        Candidates whose children would dip below min_rows are rejected;
        ties break toward the lexicographically smallest attribute and then
        the smallest category/threshold. None when the best gain is <= 0.
        """
        best_gain = 0.0
        best_pred: Predicate | None = None
        n = idx.size
        if n == 0:
            raise ValueError("best_split on an empty node")
        y_sum = float(self.y[idx].sum())
        for name in sorted(features):
            if name in self.cat_codes:
                found = self._best_categorical(idx, name, min_rows, y_sum)
            else:
                found = self._best_continuous(idx, name, min_rows, y_sum)
            if found is not None and found[0] > best_gain:
                best_gain, best_pred = found
        if best_pred is None:
            return None
        return SplitCandidate(best_pred, best_gain)

    def _gains(self, n, nl, wl, y_sum) -> np.ndarray:
        """Gain for each candidate given left-side counts/weight sums."""
        nr = n - nl
        if self.kind is TargetKind.CLASSIFICATION:
            parent = _weighted_child_entropy(
                np.array([y_sum]), np.array([float(n)])
            )[0]
            children = _weighted_child_entropy(wl, nl) + _weighted_child_entropy(
                y_sum - wl, nr
            )
            return (parent - children) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(nl > 0, wl * wl / np.maximum(nl, 1), 0.0)
            right_w = y_sum - wl
            right = np.where(nr > 0, right_w * right_w / np.maximum(nr, 1), 0.0)
        # gain = (sum_l^2/n_l + sum_r^2/n_r)/n - (sum/n)^2, algebraic form of
        # parent MSE minus weighted child MSEs (the y^2 terms cancel)
        return (left + right) / n - (y_sum / n) ** 2

    def _best_categorical(self, idx, name, min_rows, y_sum):
        codes = self.cat_codes[name][idx]
        cats = self.cat_values[name]
        k = len(cats)
        if k == 0:
            return None
        n = idx.size
        cnt = np.bincount(codes, minlength=k)
        wsum = np.bincount(codes, weights=self.y[idx], minlength=k)
        valid = (cnt >= min_rows) & (n - cnt >= min_rows)
        if not valid.any():
            return None
        gains = self._gains(n, cnt.astype(np.float64), wsum, y_sum)
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        if not np.isfinite(gains[i]):
            return None
        return float(gains[i]), Predicate.equals(name, cats[i])

    def _best_continuous(self, idx, name, min_rows, y_sum):
        n = idx.size
        k_global = self.cont_distinct[name].size
        if n * 4 < k_global:
            # Small node under a high-cardinality column: re-rank locally
            # rather than paying bincount over the global distinct set.
            vals = self.cont_raw[name][idx]
            distinct, inv = np.unique(vals, return_inverse=True)
            cnt = np.bincount(inv).astype(np.int64)
            wsum = np.bincount(inv, weights=self.y[idx])
        else:
            ranks = self.cont_ranks[name][idx]
            cnt_full = np.bincount(ranks, minlength=k_global)
            wsum_full = np.bincount(ranks, weights=self.y[idx], minlength=k_global)
            present = np.flatnonzero(cnt_full)
            distinct = self.cont_distinct[name][present]
            cnt = cnt_full[present]
            wsum = wsum_full[present]
        k = distinct.size
        if k < 2:
            return None
        cum_n = np.cumsum(cnt)
        cum_w = np.cumsum(wsum)
        if k > QUANTILE_SPLIT_LIMIT:
            targets = n * (np.arange(1, QUANTILE_BINS + 1) / (QUANTILE_BINS + 1))
            cuts = np.searchsorted(cum_n, targets, side="left")
            cuts = np.unique(np.clip(cuts, 0, k - 2))
        else:
            cuts = np.arange(k - 1)
        lo = distinct[cuts]
        hi = distinct[cuts + 1]
        thresholds = lo + (hi - lo) / 2.0
        # Adjacent representable floats can round the midpoint up to hi,
        # which would misplace hi on the wrong side; fall back to lo.
        bad = thresholds >= hi
        if bad.any():
            thresholds = np.where(bad, lo, thresholds)
        n_right = cum_n[cuts]
        n_left = n - n_right
        w_left = y_sum - cum_w[cuts]
        valid = (n_left >= min_rows) & (n_right >= min_rows)
        if not valid.any():
            return None
        gains = self._gains(n, n_left.astype(np.float64), w_left, y_sum)
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        if not np.isfinite(gains[i]):
            return None
        return float(gains[i]), Predicate.greater_than(name, float(thresholds[i]))


def _category_code(cats: tuple[str, ...], value) -> int:
    pos = bisect.bisect_left(cats, value)
    if pos < len(cats) and cats[pos] == value:
        return pos
    return -2  # matches nothing, including missing markers


def best_split(
    table: LogTable,
    labels_or_target: np.ndarray,
    features: Sequence[str] | None = None,
    min_rows_in_leaf: int = 1,
    idx: np.ndarray | None = None,
) -> SplitCandidate | None:
    """One-shot best split over a table; thin wrapper over the training core."""
    y = np.asarray(labels_or_target)
    if features is None:
        features = [s.name for s in table.feature_columns()]
    td = _TrainingData(table, features, y)
    if idx is None:
        idx = np.arange(table.row_count)
    return td.best_split(idx, features, min_rows_in_leaf)


def _grow_tree(td: _TrainingData, features: Sequence[str], min_rows: int) -> TreeNode:
    idx = np.arange(td.n)
    root = TreeNode(row_count=td.n, metric=td.node_metric(idx))
    stack = [(root, idx)]
    while stack:
        node, node_idx = stack.pop()
        if node_idx.size < 2 * min_rows:
            continue
        cand = td.best_split(node_idx, features, min_rows)
        if cand is None:
            continue
        mask = td.split_mask(cand.predicate, node_idx)
        left_idx = node_idx[mask]
        right_idx = node_idx[~mask]
        node.split = cand.predicate
        node.left = TreeNode(row_count=left_idx.size, metric=td.node_metric(left_idx))
        node.right = TreeNode(row_count=right_idx.size, metric=td.node_metric(right_idx))
        stack.append((node.left, left_idx))
        stack.append((node.right, right_idx))
    return root


def train(
    table: LogTable, labels_or_target: np.ndarray, hyperparams: Hyperparams
) -> ForestModel:
    """Train a forest on an (already imputed and sampled) table.

    A bool array trains classification trees, a float array regression
    trees. Each tree draws an independent feature subset of
    ceil(ratio * feature count) columns, then grows greedily until no split
    clears min_rows_in_leaf with positive gain. Deterministic under
    hyperparams.rng_seed.
    """
    y = np.asarray(labels_or_target)
    if table.row_count < 2:
        raise SchemaError("training needs at least 2 rows")
    if y.shape != (table.row_count,):
        raise SchemaError("labels/target length does not match the table")
    if y.dtype == bool and (y.all() or not y.any()):
        raise SchemaError("nothing to diagnose: all rows fall in one class")
    features = [s.name for s in table.feature_columns()]
    td = _TrainingData(table, features, y)
    rng = np.random.default_rng(hyperparams.rng_seed)
    subset_size = max(1, math.ceil(hyperparams.feature_sample_ratio * len(features))) if features else 0
    trees = []
    for _ in range(hyperparams.num_trees):
        if subset_size:
            picked = rng.choice(len(features), size=subset_size, replace=False)
            subset = sorted(features[i] for i in picked)
        else:
            subset = []
        trees.append(_grow_tree(td, subset, hyperparams.min_rows_in_leaf))
    return ForestModel(trees, td.kind, hyperparams, tuple(features))


# -- text dump / parse -----------------------------------------------------


def _predicate_dump(p: Predicate) -> str:
    if not p.polarity:
        raise ValueError("tree split predicates are always polarity-true")
    attr = p.attribute
    if any(c in attr for c in "=>\t\n"):
        raise ValueError(f"attribute name {attr!r} cannot appear in a model dump")
    if p.op is PredicateOp.EQUALS:
        value = str(p.value)
        if "\t" in value or "\n" in value:
            raise ValueError(f"category {value!r} cannot appear in a model dump")
        return f"{attr}={value}"
    return f"{attr}>{float(p.value)!r}"


def dump_text(model: ForestModel) -> str:
    """Readable, lossless text form of the whole forest."""
    lines: list[str] = []
    for i, tree in enumerate(model.trees):
        lines.append(f"TREE {i} {model.target_kind.value}")
        stack = [(tree, 0)]
        while stack:
            node, depth = stack.pop()
            head = "LEAF" if node.is_leaf else _predicate_dump(node.split)
            lines.append(f"{'  ' * depth}{head}\t{node.row_count}\t{float(node.metric)!r}")
            if not node.is_leaf:
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> ForestModel:
    """Parse a dump back into a model, re-validating structure.

    Raises DumpParseError (with the offending line number) on malformed
    lines, bad indentation, incomplete trees, or child row counts that do
    not sum to their parent.
    """
    trees: list[TreeNode] = []
    kind: TargetKind | None = None
    root: TreeNode | None = None
    # stack entries: [node, depth, line_no]; a node pops once both children attach
    stack: list[list] = []

    def close_tree(line_no: int):
        nonlocal root
        if root is None:
            return
        if stack:
            raise DumpParseError("split node is missing children", stack[-1][2])
        trees.append(root)
        root = None

    lines = text.splitlines()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("TREE "):
            close_tree(line_no)
            parts = line.split(" ")
            if len(parts) != 3:
                raise DumpParseError("malformed TREE header", line_no)
            if parts[1] != str(len(trees)):
                raise DumpParseError(
                    f"expected tree index {len(trees)}, got {parts[1]!r}", line_no
                )
            try:
                this_kind = TargetKind(parts[2])
            except ValueError:
                raise DumpParseError(f"unknown tree kind {parts[2]!r}", line_no) from None
            if kind is None:
                kind = this_kind
            elif kind is not this_kind:
                raise DumpParseError("mixed tree kinds in one dump", line_no)
            continue
        if kind is None:
            raise DumpParseError("node line before any TREE header", line_no)
        stripped = line.lstrip(" ")
        indent = len(line) - len(stripped)
        if indent % 2:
            raise DumpParseError("odd indentation", line_no)
        depth = indent // 2
        fields = stripped.split("\t")
        if len(fields) != 3:
            raise DumpParseError("expected 3 tab-separated fields", line_no)
        head, count_s, metric_s = fields
        try:
            row_count = int(count_s)
            metric = float(metric_s)
        except ValueError:
            raise DumpParseError("bad row count or metric", line_no) from None
        if row_count < 0:
            raise DumpParseError("negative row count", line_no)
        if kind is TargetKind.CLASSIFICATION and not (0.0 <= metric <= 1.0):
            raise DumpParseError("classification metric outside [0, 1]", line_no)
        node = TreeNode(row_count=row_count, metric=metric)
        if head != "LEAF":
            node.split = _parse_predicate(head, line_no)
        if root is None:
            if depth != 0:
                raise DumpParseError("tree root must not be indented", line_no)
            root = node
        else:
            if not stack:
                raise DumpParseError("unexpected extra node after a complete tree", line_no)
            parent, parent_depth, parent_line = stack[-1]
            if depth != parent_depth + 1:
                raise DumpParseError(
                    f"expected indent depth {parent_depth + 1}, got {depth}", line_no
                )
            if parent.left is None:
                parent.left = node
            else:
                parent.right = node
                if parent.left.row_count + parent.right.row_count != parent.row_count:
                    raise DumpParseError(
                        "child row counts do not sum to the parent's", line_no
                    )
                stack.pop()
        if node.split is not None:
            stack.append([node, depth, line_no])
    close_tree(len(lines))
    if not trees:
        raise DumpParseError("empty dump: no trees found", None)
    return ForestModel(trees, kind, None, _collect_features(trees))


def _parse_predicate(head: str, line_no: int) -> Predicate:
    cut = None
    for i, c in enumerate(head):
        if c in "=>":
            cut = i
            break
    if cut is None or cut == 0:
        raise DumpParseError(f"cannot parse predicate {head!r}", line_no)
    attr, rest = head[:cut], head[cut + 1 :]
    if head[cut] == "=":
        return Predicate.equals(attr, rest)
    try:
        threshold = float(rest)
    except ValueError:
        raise DumpParseError(f"bad threshold {rest!r}", line_no) from None
    return Predicate.greater_than(attr, threshold)


def _collect_features(trees: list[TreeNode]) -> tuple[str, ...]:
    names = set()
    stack = list(trees)
    while stack:
        node = stack.pop()
        if node.split is not None:
            names.add(node.split.attribute)
            stack.append(node.left)
            stack.append(node.right)
    return tuple(sorted(names))


def forest_structure_equal(a: ForestModel, b: ForestModel) -> bool:
    """Structural equality: kinds, predicates, counts, and metrics."""
    if a.target_kind is not b.target_kind or len(a.trees) != len(b.trees):
        return False

    def node_eq(x: TreeNode, y: TreeNode) -> bool:
        if x.row_count != y.row_count or x.metric != y.metric or x.split != y.split:
            return False
        if x.is_leaf:
            return y.is_leaf
        return node_eq(x.left, y.left) and node_eq(x.right, y.right)

    return all(node_eq(x, y) for x, y in zip(a.trees, b.trees))


def iter_split_nodes(tree: TreeNode):
    """Yield every split node of a tree, preorder."""
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.split is not None:
            yield node
            stack.append(node.right)
            stack.append(node.left)
