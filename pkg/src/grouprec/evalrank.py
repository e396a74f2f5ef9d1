"""Top-K ranking metrics, profiling classification metrics, and the
group-level evaluation protocol used to compare recommenders.

Relevance for a group is defined on its held-out ratings: an item is relevant
when the observed group rating reaches the threshold.  Each method ranks the
group's own test items; precision@K divides by K itself (a protocol flag
switches to min(K, candidates)); recall@K skips groups with no relevant item.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import ConfigError


class ProtocolError(RuntimeError):
    """The evaluation protocol cannot produce a defined result."""


@dataclass(frozen=True)
class RelevanceSpec:
    threshold: float = 3.5
    k: int = 10
    # divide P@K by K even when fewer candidates exist (the literal formula);
    # False divides by min(K, len(ranked))
    literal_denominator: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")


def precision_at_k(ranked, relevant, k, literal_denominator=True):
    """|relevant ∩ top-K| / K (or / min(K, len(ranked)) when not literal)."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    top = list(ranked)[:k]
    hits = sum(1 for item in top if item in relevant)
    denom = k if literal_denominator else max(1, min(k, len(list(ranked))))
    return hits / denom


def recall_at_k(ranked, relevant, k):
    """|relevant ∩ top-K| / |relevant|; None when there is nothing relevant."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if len(relevant) == 0:
        return None
    top = list(ranked)[:k]
    hits = sum(1 for item in top if item in relevant)
    return hits / len(relevant)


def profiling_metrics(y_true, y_pred, n_classes):
    """Support-weighted precision, recall and F1 over the class confusion.

    A class never predicted contributes precision 0; classes with no support
    carry zero weight."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ConfigError("profiling_metrics: labels must be equal-length and non-empty")
    if (y_true < 0).any() or (y_true >= n_classes).any() or (y_pred < 0).any() or (
        y_pred >= n_classes
    ).any():
        raise IndexError(f"labels must lie in [0, {n_classes})")
    conf = np.zeros((n_classes, n_classes))
    np.add.at(conf, (y_true, y_pred), 1.0)
    tp = np.diag(conf)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    prec = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    rec = np.divide(tp, support, out=np.zeros(n_classes), where=support > 0)
    pr = prec + rec
    f1 = np.divide(2 * prec * rec, pr, out=np.zeros(n_classes), where=pr > 0)
    w = support / support.sum()
    return float(prec @ w), float(rec @ w), float(f1 @ w)


@dataclass
class MethodMetrics:
    p_at_k: float
    r_at_k: float
    n_groups: int


def rank_candidates(items, scores):
    """Items sorted by score descending, ties broken by ascending item index."""
    items = np.asarray(items)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((items, -scores))
    return items[order]


def evaluate_method(score_fn, test_groups, spec):
    """Macro-averaged P@K / R@K of one scorer over the groups' test items.

    score_fn(group, item_array) -> score array.  Candidates are the group's
    own test items; relevant are those at or above the threshold.  Groups
    without a relevant item are excluded from both averages."""
    by_group = test_groups.by_group()
    if not by_group:
        raise ProtocolError("no test groups to evaluate")
    p_sum = r_sum = 0.0
    counted = 0
    for g in sorted(by_group):
        entries = by_group[g]
        items = np.array([e.item for e in entries])
        relevant = {e.item for e in entries if e.rating >= spec.threshold}
        if not relevant:
            continue
        ranked = rank_candidates(items, score_fn(g, items))
        p_sum += precision_at_k(ranked, relevant, spec.k, spec.literal_denominator)
        r_sum += recall_at_k(ranked, relevant, spec.k)
        counted += 1
    if counted == 0:
        raise ProtocolError("no group has a relevant test item at this threshold")
    return MethodMetrics(p_sum / counted, r_sum / counted, counted)


@dataclass
class EvalReport:
    """Per-method ranking metrics plus profiling metrics and run metadata."""

    methods: dict[str, MethodMetrics]
    profiling: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "methods": {
                name: {"p_at_k": m.p_at_k, "r_at_k": m.r_at_k, "n_groups": m.n_groups}
                for name, m in self.methods.items()
            },
            "profiling": dict(self.profiling),
            "metadata": dict(self.metadata),
        }

    def to_markdown(self):
        k = self.metadata.get("k_top", 10)
        lines = [
            "| Approach | P@{0} | R@{0} |".format(k),
            "| --- | --- | --- |",
        ]
        for name, m in self.methods.items():
            mark = "**" if name.startswith("DMTL") else ""
            lines.append(
                f"| {mark}{name}{mark} | {mark}{m.p_at_k:.6f}{mark} | {mark}{m.r_at_k:.6f}{mark} |"
            )
        lines += [
            "",
            "| Profiling | Precision | Recall | F1 Score |",
            "| --- | --- | --- | --- |",
            "| DMTL | {precision:.4f} | {recall:.4f} | {f1:.4f} |".format(**self.profiling),
        ]
        return "\n".join(lines) + "\n"
