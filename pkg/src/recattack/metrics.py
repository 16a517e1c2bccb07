"""Top-k ranking metrics and the cold-start hit-ratio reward."""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetric

DEFAULT_KS = (5, 10, 20)


def ndcg_at_k(ranked, relevant, k):
    """Binary-relevance NDCG@k; IDCG truncated at min(|relevant|, k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise UndefinedMetric("empty relevant set")
    relevant = set(relevant)
    dcg = 0.0
    for pos, item in enumerate(ranked[:k], start=1):
        if int(item) in relevant:
            dcg += 1.0 / np.log2(pos + 1)
    ideal = min(len(relevant), k)
    idcg = sum(1.0 / np.log2(p + 1) for p in range(1, ideal + 1))
    return dcg / idcg


def recall_at_k(ranked, relevant, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise UndefinedMetric("empty relevant set")
    relevant = set(relevant)
    hits = sum(1 for item in ranked[:k] if int(item) in relevant)
    return hits / len(relevant)


def precision_at_k(ranked, relevant, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    hits = sum(1 for item in ranked[:k] if int(item) in relevant)
    return hits / k


def hit_ratio(ranked, item_set, k):
    """Fraction of the top-k list falling inside ``item_set``."""
    hits = sum(1 for item in ranked[:k] if int(item) in item_set)
    return hits / k


def cold_hit_reward(spy_lists, cold_pool, k):
    """Mean over spies of the cold-item hit ratio of their top-k list."""
    if not spy_lists:
        raise ValueError("no spy lists")
    members = cold_pool.member_mask_cache
    total = 0.0
    for ranked in spy_lists:
        if len(ranked) < k:
            raise ValueError(f"spy list shorter than k={k}")
        total += hit_ratio(ranked, members, k)
    return total / len(spy_lists)


@dataclass
class MetricsReport:
    """Mean NDCG/Recall/Precision at each cutoff over evaluated users."""

    label: str
    user_count: int
    values: dict = field(default_factory=dict)

    def get(self, metric, k):
        return self.values[f"{metric}@{k}"]

    def to_json(self):
        return json.dumps({"label": self.label, "users": self.user_count,
                           "values": self.values}, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "k", "value"])
        for key in sorted(self.values):
            metric, k = key.split("@")
            writer.writerow([metric, k, f"{self.values[key]:.10f}"])
        return buf.getvalue()

    @staticmethod
    def from_json(text):
        obj = json.loads(text)
        return MetricsReport(obj["label"], obj["users"], obj["values"])


def report_from_rankings(label, rankings, relevant_by_user, ks=DEFAULT_KS):
    """Aggregate per-user ranked lists against per-user relevant sets.

    Users with an empty relevant set are skipped, not counted as zero.
    """
    sums = {f"{m}@{k}": 0.0 for m in ("ndcg", "recall", "precision")
            for k in ks}
    count = 0
    for user, ranked in rankings.items():
        relevant = relevant_by_user.get(user)
        if not relevant:
            continue
        count += 1
        for k in ks:
            sums[f"ndcg@{k}"] += ndcg_at_k(ranked, relevant, k)
            sums[f"recall@{k}"] += recall_at_k(ranked, relevant, k)
            sums[f"precision@{k}"] += precision_at_k(ranked, relevant, k)
    if count == 0:
        raise UndefinedMetric("no user with a non-empty relevant set")
    values = {key: val / count for key, val in sums.items()}
    return MetricsReport(label=label, user_count=count, values=values)
