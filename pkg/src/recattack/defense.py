"""Defense probes: adversarial training of the target and density-based
fake-user detection."""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.neighbors import LocalOutlierFactor

from .community import louvain
from .recmodels import adversarial_train  # noqa: F401  (public surface)


@dataclass
class DetectionReport:
    flagged: list
    detection_rate: float
    params: dict = field(default_factory=dict)
    scores: np.ndarray = None

    def to_json(self):
        return json.dumps({"flagged": self.flagged,
                           "detection_rate": self.detection_rate,
                           "params": self.params}, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["field", "value"])
        writer.writerow(["detection_rate", f"{self.detection_rate:.6f}"])
        writer.writerow(["flagged_count", len(self.flagged)])
        for key in sorted(self.params):
            writer.writerow([key, self.params[key]])
        return buf.getvalue()


def user_features(dataset, partition_assignment):
    """Per-user behavioral features for density-based outlier scoring:
    social degree, interaction count, mean popularity of the interacted
    items, community spread of the neighborhood, and mean neighbor
    degree."""
    n = dataset.n_users
    degrees = dataset.social_degrees.astype(float)
    counts = np.array([len(v) for v in dataset.user_items], dtype=float)
    pop = dataset.item_counts
    feats = np.zeros((n, 5))
    for u in range(n):
        items = dataset.user_items[u]
        nbrs = dataset.social_neighbors[u]
        mean_pop = float(pop[items].mean()) if len(items) else 0.0
        if len(nbrs):
            known = nbrs[nbrs < len(partition_assignment)]
            spread = len(np.unique(partition_assignment[known])) \
                if len(known) else 0
            nbr_deg = float(degrees[nbrs].mean())
        else:
            spread = 0
            nbr_deg = 0.0
        feats[u] = (degrees[u], counts[u], mean_pop, spread, nbr_deg)
    return feats


def detect_anomalies(dataset, fake_ids, n_neighbors=20, threshold=1.5,
                     partition_assignment=None):
    """Local-outlier-factor scores over user feature vectors; users whose
    score exceeds the threshold are flagged.

    The community assignment is computed over the real-user subgraph when
    not supplied.
    """
    if n_neighbors >= dataset.n_users:
        raise ValueError("n_neighbors must be below the user count")
    fake_ids = set(int(u) for u in fake_ids)
    if partition_assignment is None:
        real = np.array(sorted(set(range(dataset.n_users)) - fake_ids))
        edges = dataset.social_edges
        keep = np.isin(edges[:, 0], real) & np.isin(edges[:, 1], real)
        partition_assignment = louvain(edges[keep],
                                       dataset.n_users).assignment

    feats = user_features(dataset, partition_assignment)
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    sd[sd == 0] = 1.0
    z = (feats - mu) / sd

    lof = LocalOutlierFactor(n_neighbors=n_neighbors)
    lof.fit(z)
    scores = -lof.negative_outlier_factor_
    flagged = [int(u) for u in np.flatnonzero(scores > threshold)]
    hits = len(fake_ids & set(flagged))
    rate = hits / len(fake_ids) if fake_ids else 0.0
    return DetectionReport(
        flagged=flagged, detection_rate=rate,
        params={"n_neighbors": n_neighbors, "threshold": threshold},
        scores=scores)
