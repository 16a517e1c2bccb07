"""Social-graph partitioning: random-walk embeddings, Louvain for the
community count, K-means for the final assignment.

Louvain decides only how many communities there are; the user-to-community
assignment comes from K-means over skip-gram embeddings of the walks. The
Louvain partition itself is kept for diagnostics.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import group_by_user
from .nn import EmbeddingTable
from .seeding import rng_for


@dataclass
class WalkCorpus:
    walks: list
    walk_length: int
    walks_per_node: int


@dataclass
class CommunityPartition:
    assignment: np.ndarray          # user id -> community id
    rosters: list = field(default=None)
    modularity: float = None

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.rosters is None:
            self.rosters = [np.flatnonzero(self.assignment == c)
                            for c in range(self.assignment.max() + 1)]

    @property
    def n_communities(self):
        return len(self.rosters)

    def to_json_dict(self):
        return {
            "n_communities": self.n_communities,
            "modularity": self.modularity,
            "roster_sizes": [int(len(r)) for r in self.rosters],
            "assignment": {str(u): int(c)
                           for u, c in enumerate(self.assignment)},
        }


def random_walks(social_edges, n_users, walks_per_node=10, length=40,
                 seed=0):
    """Uniform-neighbor walks started at every node; per-node seed streams.

    Isolated nodes yield singleton walks.
    """
    if length < 1:
        raise ValueError("walk length must be >= 1")
    neighbors = _sym_neighbors(social_edges, n_users)
    walks = []
    for u in range(n_users):
        rng = rng_for(seed, f"walk:{u}")
        nbrs_u = neighbors[u]
        for _ in range(walks_per_node):
            walk = [u]
            cur = u
            while len(walk) < length:
                nbrs = neighbors[cur]
                if nbrs.size == 0:
                    break
                cur = int(nbrs[rng.integers(nbrs.size)])
                walk.append(cur)
            if nbrs_u.size == 0:
                walk = [u]
            walks.append(np.asarray(walk, dtype=np.int64))
    return WalkCorpus(walks=walks, walk_length=length,
                      walks_per_node=walks_per_node)


def _sym_neighbors(social_edges, n_users):
    edges = np.asarray(social_edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return [np.empty(0, dtype=np.int64) for _ in range(n_users)]
    both = np.unique(np.concatenate([edges, edges[:, ::-1]]), axis=0)
    return group_by_user(both, n_users)


def skipgram_train(corpus, n_nodes, dim=32, window=5, negatives=5, epochs=3,
                   lr=0.025, seed=0, chunk=200_000, batch_size=512):
    """Skip-gram embeddings with negative sampling over the walk corpus.

    The full-softmax co-occurrence objective is approximated with
    ``negatives`` uniform-in-unigram^(3/4) draws per positive pair.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    rng = rng_for(seed, "sgns")
    table = EmbeddingTable(n_nodes, dim, rng_for(seed, "sgns-init"))
    emb_out = np.zeros((n_nodes, dim))

    centers, contexts = [], []
    freq = np.zeros(n_nodes)
    for walk in corpus.walks:
        np.add.at(freq, walk, 1.0)
        for t in range(len(walk)):
            lo = max(0, t - window)
            hi = min(len(walk), t + window + 1)
            for t2 in range(lo, hi):
                if t2 != t:
                    centers.append(walk[t])
                    contexts.append(walk[t2])
    if not centers:
        raise ValueError("no training pairs (corpus of singleton walks?)")
    centers = np.asarray(centers, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=np.int64)

    noise = freq ** 0.75
    cum = np.cumsum(noise / noise.sum())

    for _ in range(epochs):
        for start in range(0, len(centers), chunk):
            cb = centers[start:start + chunk]
            ob = contexts[start:start + chunk]
            negs = np.searchsorted(
                cum, rng.random((len(cb), negatives))).astype(np.int64)
            negs = np.minimum(negs, n_nodes - 1)
            kernels.sgns_epoch(table.values, emb_out, cb, ob, negs, lr,
                               batch_size)
    return table


def modularity(assignment, social_edges, n_users):
    """Newman modularity Q of a partition against the undirected graph."""
    assignment = np.asarray(assignment, dtype=np.int64)
    edges = np.asarray(social_edges, dtype=np.int64).reshape(-1, 2)
    both = np.unique(np.concatenate([edges, edges[:, ::-1]]), axis=0)
    degrees = np.bincount(both[:, 0], minlength=n_users).astype(float)
    two_m = degrees.sum()
    if two_m == 0:
        raise ValueError("graph has no edges")
    internal = assignment[both[:, 0]] == assignment[both[:, 1]]
    q_in = internal.sum() / two_m
    n_comm = assignment.max() + 1
    tot = np.zeros(n_comm)
    np.add.at(tot, assignment, degrees)
    return float(q_in - np.sum((tot / two_m) ** 2))


def _local_move(n, nbr_ids, nbr_wts, self_loops, degrees, two_m):
    """One Louvain level: greedy modularity moves in ascending-id order."""
    comm = np.arange(n)
    tot = degrees.copy()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in range(n):
            ci = comm[i]
            ki = degrees[i]
            tot[ci] -= ki
            comm[i] = -1
            # weight from i to each neighboring community
            links = {}
            for j, w in zip(nbr_ids[i], nbr_wts[i]):
                cj = comm[j]
                if cj >= 0:
                    links[cj] = links.get(cj, 0.0) + w
            best_c, best_gain = ci, links.get(ci, 0.0) - tot[ci] * ki / two_m
            for c in sorted(links):
                gain = links[c] - tot[c] * ki / two_m
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            comm[i] = best_c
            tot[best_c] += ki
            if best_c != ci:
                improved = True
                moved_any = True
    return comm, moved_any


def louvain(social_edges, n_users):
    """Greedy modularity optimization from a singleton start, deterministic
    via ascending-id node ordering. Isolated users keep singleton
    communities."""
    edges = np.asarray(social_edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        raise ValueError("empty graph")
    both = np.unique(np.concatenate([edges, edges[:, ::-1]]), axis=0)

    # current level: node -> original users mapping
    node_of_user = np.arange(n_users)
    n = n_users
    pair_w = {}
    for a, b in both:
        pair_w[(int(a), int(b))] = pair_w.get((int(a), int(b)), 0.0) + 1.0
    self_loops = np.zeros(n)

    while True:
        nbr_ids = [[] for _ in range(n)]
        nbr_wts = [[] for _ in range(n)]
        for (a, b), w in sorted(pair_w.items()):
            if a != b:
                nbr_ids[a].append(b)
                nbr_wts[a].append(w)
        degrees = self_loops.copy()
        for i in range(n):
            degrees[i] += float(np.sum(nbr_wts[i]))
        two_m = degrees.sum()
        comm, moved = _local_move(n, nbr_ids, nbr_wts, self_loops, degrees,
                                  two_m)
        # compact community labels in ascending order of community id
        labels = np.unique(comm)
        remap = {int(c): k for k, c in enumerate(labels)}
        comm = np.array([remap[int(c)] for c in comm])
        node_of_user = comm[node_of_user]
        if not moved or len(labels) == n:
            break
        # aggregate: communities become weighted nodes
        new_n = len(labels)
        new_pairs = {}
        new_loops = np.zeros(new_n)
        for (a, b), w in pair_w.items():
            ca, cb = int(comm[a]), int(comm[b])
            if ca == cb:
                new_loops[ca] += w
            else:
                new_pairs[(ca, cb)] = new_pairs.get((ca, cb), 0.0) + w
        for i in range(n):
            new_loops[int(comm[i])] += self_loops[i]
        pair_w = new_pairs
        self_loops = new_loops
        n = new_n

    q = modularity(node_of_user, edges, n_users)
    return CommunityPartition(assignment=node_of_user, modularity=q)


def kmeans(embeddings, n_c, max_iters=100, seed=0):
    """Farthest-point-seeded Lloyd iterations; the objective never
    increases and empty clusters are re-seeded from the farthest point."""
    x = embeddings.values if hasattr(embeddings, "values") else embeddings
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not (1 <= n_c <= n):
        raise ValueError(f"n_c must be in [1, {n}], got {n_c}")
    rng = rng_for(seed, "kmeans")
    centers = np.empty((n_c, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    dist = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, n_c):
        centers[c] = x[int(np.argmax(dist))]
        dist = np.minimum(dist, np.sum((x - centers[c]) ** 2, axis=1))

    history = []
    assign = None
    for _ in range(max_iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        cost = d2[np.arange(n), new_assign]
        for c in range(n_c):
            if not np.any(new_assign == c):
                far = int(np.argmax(cost))
                centers[c] = x[far]
                d2[:, c] = np.sum((x - centers[c]) ** 2, axis=1)
                new_assign = np.argmin(d2, axis=1)
                cost = d2[np.arange(n), new_assign]
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(n_c):
            members = x[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        history.append(float(d2[np.arange(n), assign].sum()))

    part = CommunityPartition(assignment=assign)
    part.objective_history = history
    return part


def partition(social_edges, n_users, dim=32, window=5, walks_per_node=10,
              walk_length=40, negatives=5, epochs=3, lr=0.025, seed=0):
    """Full pipeline: Louvain fixes the community count, K-means over
    skip-gram walk embeddings assigns the users."""
    louvain_part = louvain(social_edges, n_users)
    corpus = random_walks(social_edges, n_users, walks_per_node,
                          walk_length, seed)
    emb = skipgram_train(corpus, n_users, dim=dim, window=window,
                         negatives=negatives, epochs=epochs, lr=lr, seed=seed)
    part = kmeans(emb, louvain_part.n_communities, seed=seed)
    part.modularity = modularity(part.assignment, social_edges, n_users)
    part.louvain_partition = louvain_part
    part.embeddings = emb
    return part
