"""Interaction/social-graph ingestion, splits, item pools and spy users.

Input format: tab- or whitespace-delimited text, one edge per line.
Interactions are ``user item [weight]`` (weight ignored), social relations
``user user``. Lines starting with ``#`` are comments. Ids are re-indexed
to dense ranges; the original ids are kept for reporting.

Social rows are stored as loaded (directed rows, de-duplicated, self-loops
dropped); adjacency construction symmetrizes them, so edge counts reported
here match the raw relation counts of the usual dataset dumps.
"""

import io
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParseError
from .seeding import rng_for


class Dataset:
    """Implicit-feedback interactions plus a user-user social graph."""

    def __init__(self, n_users, n_items, interactions, social_edges,
                 user_ids=None, item_ids=None):
        interactions = np.asarray(interactions, dtype=np.int64).reshape(-1, 2)
        social_edges = np.asarray(social_edges, dtype=np.int64).reshape(-1, 2)
        if interactions.shape[0]:
            if interactions[:, 0].min() < 0 or interactions[:, 0].max() >= n_users:
                raise ValueError("interaction user id out of range")
            if interactions[:, 1].min() < 0 or interactions[:, 1].max() >= n_items:
                raise ValueError("interaction item id out of range")
        if social_edges.shape[0]:
            if social_edges.min() < 0 or social_edges.max() >= n_users:
                raise ValueError("social user id out of range")
            if np.any(social_edges[:, 0] == social_edges[:, 1]):
                raise ValueError("self-loop social edge")
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.interactions = np.unique(interactions, axis=0)
        self.social_edges = np.unique(social_edges, axis=0)
        self.user_ids = user_ids
        self.item_ids = item_ids

    @cached_property
    def item_counts(self):
        """Per-item interaction count (the popularity proxy)."""
        return np.bincount(self.interactions[:, 1], minlength=self.n_items)

    @cached_property
    def user_items(self):
        """List of sorted item arrays, one per user."""
        return group_by_user(self.interactions, self.n_users)

    @cached_property
    def social_neighbors(self):
        """Symmetrized adjacency: list of sorted neighbor arrays per user."""
        e = self.social_edges
        both = np.concatenate([e, e[:, ::-1]], axis=0)
        both = np.unique(both, axis=0)
        return group_by_user(both, self.n_users)

    @cached_property
    def social_degrees(self):
        return np.array([len(a) for a in self.social_neighbors], dtype=np.int64)

    def summary(self):
        nu, ni = self.n_users, self.n_items
        return {
            "users": nu,
            "items": ni,
            "interactions": int(self.interactions.shape[0]),
            "interaction_density": self.interactions.shape[0] / (nu * ni),
            "social_edges": int(self.social_edges.shape[0]),
            "social_density": self.social_edges.shape[0] / (nu * nu),
        }


def group_by_user(pairs, n_users):
    """Split an (E, 2) pair array into per-user sorted arrays of column 1."""
    out = [np.empty(0, dtype=np.int64) for _ in range(n_users)]
    if pairs.shape[0] == 0:
        return out
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    users, starts = np.unique(pairs[:, 0], return_index=True)
    bounds = np.append(starts, pairs.shape[0])
    for idx, u in enumerate(users):
        out[u] = pairs[bounds[idx]:bounds[idx + 1], 1].copy()
    return out


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray

    @cached_property
    def train_user_items(self):
        n = int(max(self.train[:, 0].max() if self.train.size else -1,
                    self.test[:, 0].max() if self.test.size else -1)) + 1
        return group_by_user(self.train, n)

    @cached_property
    def test_user_items(self):
        n = len(self.train_user_items)
        return group_by_user(self.test, n)

    def train_item_counts(self, n_items):
        return np.bincount(self.train[:, 1], minlength=n_items)


@dataclass(frozen=True)
class ItemPool:
    items: np.ndarray
    selection_rule: str

    def __post_init__(self):
        object.__setattr__(self, "items",
                           np.asarray(self.items, dtype=np.int64))
        if len(np.unique(self.items)) != len(self.items):
            raise ValueError("item pool has duplicates")

    def __len__(self):
        return len(self.items)

    @cached_property
    def member_mask_cache(self):
        return set(int(i) for i in self.items)


@dataclass(frozen=True)
class SpySet:
    users: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "users",
                           np.asarray(self.users, dtype=np.int64))

    @property
    def size(self):
        return len(self.users)


def _iter_lines(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            yield from enumerate(fh, start=1)
    elif isinstance(source, io.IOBase):
        yield from enumerate(source, start=1)
    else:
        yield from enumerate(source, start=1)


def _parse_edge_file(source, min_fields, max_fields, what):
    rows = []
    for line_no, raw in _iter_lines(source):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if not (min_fields <= len(fields) <= max_fields):
            raise ParseError(line_no, raw.rstrip("\n"),
                             f"expected {min_fields}-{max_fields} {what} fields")
        try:
            a, b = int(fields[0]), int(fields[1])
        except ValueError:
            raise ParseError(line_no, raw.rstrip("\n"),
                             f"non-integer {what} id") from None
        rows.append((a, b))
    return rows


def load_dataset(interaction_source, social_source=None):
    """Build a dense-id Dataset from interaction and social edge streams."""
    inter_rows = _parse_edge_file(interaction_source, 2, 3, "interaction")
    if not inter_rows:
        raise ValueError("interaction source is empty")
    social_rows = []
    if social_source is not None:
        social_rows = _parse_edge_file(social_source, 2, 2, "social")

    user_tokens = sorted({u for u, _ in inter_rows}
                         | {a for a, _ in social_rows}
                         | {b for _, b in social_rows})
    item_tokens = sorted({i for _, i in inter_rows})
    umap = {u: k for k, u in enumerate(user_tokens)}
    imap = {i: k for k, i in enumerate(item_tokens)}

    interactions = np.array([(umap[u], imap[i]) for u, i in inter_rows],
                            dtype=np.int64)
    social = np.array([(umap[a], umap[b]) for a, b in social_rows if a != b],
                      dtype=np.int64).reshape(-1, 2)
    return Dataset(len(user_tokens), len(item_tokens), interactions, social,
                   user_ids=np.array(user_tokens, dtype=np.int64),
                   item_ids=np.array(item_tokens, dtype=np.int64))


def split_interactions(dataset, test_fraction, seed):
    """Per-user holdout: floor(test_fraction * deg) interactions go to test."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    rng = rng_for(seed, "split")
    train_parts, test_parts = [], []
    for u in range(dataset.n_users):
        items = dataset.user_items[u]
        deg = len(items)
        if deg == 0:
            continue
        n_test = int(np.floor(test_fraction * deg))
        perm = rng.permutation(deg)
        test_items = items[perm[:n_test]]
        train_items = items[perm[n_test:]]
        if len(train_items):
            train_parts.append(
                np.column_stack([np.full(len(train_items), u), train_items]))
        if len(test_items):
            test_parts.append(
                np.column_stack([np.full(len(test_items), u), test_items]))
    train = (np.concatenate(train_parts) if train_parts
             else np.empty((0, 2), dtype=np.int64))
    test = (np.concatenate(test_parts) if test_parts
            else np.empty((0, 2), dtype=np.int64))
    return Split(train=np.unique(train, axis=0), test=np.unique(test, axis=0))


def _counts_for_pool(dataset, split):
    if split is not None:
        return split.train_item_counts(dataset.n_items)
    return dataset.item_counts


def cold_start_pool(dataset, quantile, split=None):
    """Bottom-popularity pool: floor(quantile * m) least-interacted items."""
    if not (0.0 < quantile <= 1.0):
        raise ValueError(f"quantile must be in (0,1], got {quantile}")
    counts = _counts_for_pool(dataset, split)
    size = int(np.floor(quantile * dataset.n_items))
    order = np.lexsort((np.arange(dataset.n_items), counts))
    return ItemPool(order[:size], f"cold quantile {quantile:g}")


def popular_pool(dataset, top_k, split=None):
    """Top-popularity pool: top_k most-interacted items, ties by id."""
    if not (1 <= top_k <= dataset.n_items):
        raise ValueError(f"top_k must be in [1, {dataset.n_items}], got {top_k}")
    counts = _counts_for_pool(dataset, split)
    order = np.lexsort((np.arange(dataset.n_items), -counts))
    return ItemPool(order[:top_k], f"popular top {top_k}")


def popularity_decile_pool(dataset, decile, split=None):
    """Items in one popularity decile; 0 is coldest, 9 is hottest."""
    if not (0 <= decile <= 9):
        raise ValueError(f"decile must be in [0, 9], got {decile}")
    counts = _counts_for_pool(dataset, split)
    order = np.lexsort((np.arange(dataset.n_items), counts))
    lo = (decile * dataset.n_items) // 10
    hi = ((decile + 1) * dataset.n_items) // 10
    return ItemPool(order[lo:hi], f"popularity decile {decile}")


def select_spies(dataset, count, seed):
    """Uniform sample of real users without replacement."""
    if not (1 <= count <= dataset.n_users):
        raise ValueError(f"spy count must be in [1, {dataset.n_users}]")
    rng = rng_for(seed, "spies")
    users = rng.choice(dataset.n_users, size=count, replace=False)
    return SpySet(users=users)


def synthetic_dataset(n_users=900, n_items=4000, n_communities=6,
                      avg_interactions=40, avg_social_degree=10,
                      popularity_exponent=1.1, cross_rate=0.08, seed=0):
    """Generate a LastFM-like world: community-clustered social graph,
    community-aligned item preferences, power-law item popularity.

    Used by the experiment CLI and the acceptance suite, which have no
    bundled real datasets.
    """
    rng = rng_for(seed, "synth")
    comm = np.repeat(np.arange(n_communities), -(-n_users // n_communities))
    comm = comm[:n_users]
    rng.shuffle(comm)
    members = [np.flatnonzero(comm == c) for c in range(n_communities)]

    # item home communities and a global zipf popularity profile
    item_comm = rng.integers(0, n_communities, size=n_items)
    rank = rng.permutation(n_items)
    weight = 1.0 / (rank + 1.0) ** popularity_exponent

    inter = set()
    for u in range(n_users):
        own = item_comm == comm[u]
        w = np.where(own, weight, cross_rate * weight)
        w = w / w.sum()
        deg = max(3, int(rng.poisson(avg_interactions)))
        deg = min(deg, n_items - 1)
        picks = rng.choice(n_items, size=deg, replace=False, p=w)
        inter.update((u, int(i)) for i in picks)

    # every item gets at least one interaction, from a home-community user
    # when possible (real catalogues have no fully orphaned items)
    touched = {i for _, i in inter}
    for i in range(n_items):
        if i not in touched:
            pool = members[item_comm[i]]
            u = int(pool[rng.integers(0, len(pool))])
            inter.add((u, i))

    social = set()
    half_edges = max(1, int(round(avg_social_degree / 2)))
    for u in range(n_users):
        for _ in range(half_edges):
            if rng.random() < cross_rate:
                v = int(rng.integers(0, n_users))
            else:
                pool = members[comm[u]]
                v = int(pool[rng.integers(0, len(pool))])
            if v != u:
                social.add((u, v))
                social.add((v, u))

    ds = Dataset(n_users, n_items,
                 np.array(sorted(inter), dtype=np.int64),
                 np.array(sorted(social), dtype=np.int64))
    ds.true_communities = comm
    return ds


def write_dataset(dataset, interactions_path, social_path, fake_ids=None,
                  sidecar_path=None):
    """Re-export in the text input format, optionally flagging fake users."""
    with open(interactions_path, "w", encoding="utf-8") as fh:
        for u, i in dataset.interactions:
            fh.write(f"{u}\t{i}\n")
    with open(social_path, "w", encoding="utf-8") as fh:
        for a, b in dataset.social_edges:
            fh.write(f"{a}\t{b}\n")
    if sidecar_path is not None:
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump({"fake_user_ids":
                       sorted(int(u) for u in (fake_ids or []))}, fh)
