"""Target recommender environments: the attack's black boxes.

Four variants share one BPR training loop:

- ``mf-bpr``   matrix factorization, scores are embedding dot products
- ``sbpr``     MF plus social-feedback triples (positive > friend-consumed
               > unobserved)
- ``sociallgn`` depth-L symmetric-normalized propagation over the user-item
               bipartite graph fused per layer (arithmetic mean) with
               propagation over the social graph
- ``sage``     inductive depth-L mean aggregation over social + interaction
               neighborhoods; supports evasion-time fake-user injection
               with frozen parameters

Propagation is linear, so gradients flow through it by applying the
transposed operator.
"""

import numpy as np

from . import kernels
from .data import Dataset
from .errors import BudgetError, TrainingDivergence, UnsupportedMode
from .seeding import rng_for

VARIANTS = ("mf-bpr", "sbpr", "sociallgn", "sage")


class FakeUser:
    """Injected profile: an ordered distinct item list plus a list of
    user pairs the fake user befriends."""

    def __init__(self, item_profile, social_profile):
        items = [int(i) for i in item_profile]
        pairs = [(int(a), int(b)) for a, b in social_profile]
        if len(set(items)) != len(items):
            raise ValueError("duplicate items in profile")
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate social pairs")
        if any(a == b for a, b in pairs):
            raise ValueError("social pair members must differ")
        self.item_profile = tuple(items)
        self.social_profile = tuple(pairs)

    def partner_ids(self):
        return [u for pair in self.social_profile for u in pair]


class Budget:
    def __init__(self, max_fake_users, profile_len):
        if max_fake_users < 1 or profile_len < 1:
            raise ValueError("budget fields must be positive")
        self.max_fake_users = int(max_fake_users)
        self.profile_len = int(profile_len)


def _csr_from_coo(n_rows, rows, cols, weights):
    order = np.lexsort((cols, rows))
    rows, cols, weights = rows[order], cols[order], weights[order]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols.astype(np.int64), weights.astype(np.float64)


class LinearPropagation:
    """A sparse linear layer operator over the n_users + n_items node set.

    ``final`` averages layers 0..depth; ``backprop`` pulls a gradient on the
    final embeddings back to the base embeddings via the transposed
    operator.
    """

    def __init__(self, n_nodes, rows, cols, weights, depth):
        self.n_nodes = n_nodes
        self.depth = depth
        self.op = _csr_from_coo(n_nodes, rows, cols, weights)
        self.op_t = _csr_from_coo(n_nodes, cols, rows, weights)

    def _apply(self, op, x):
        indptr, indices, weights = op
        return kernels.csr_matvec(indptr, indices, weights, x)

    def layers(self, base):
        out = [np.asarray(base, dtype=np.float64)]
        for _ in range(self.depth):
            out.append(self._apply(self.op, out[-1]))
        return out

    def final(self, base):
        layers = self.layers(base)
        return sum(layers) / len(layers)

    def backprop(self, final_grad):
        scale = 1.0 / (self.depth + 1)
        acc = final_grad * scale
        cur = final_grad
        for _ in range(self.depth):
            cur = self._apply(self.op_t, cur)
            acc = acc + cur * scale
        return acc


def _sym_social(social_edges):
    if social_edges.shape[0] == 0:
        return np.empty((0, 2), dtype=np.int64)
    both = np.concatenate([social_edges, social_edges[:, ::-1]], axis=0)
    return np.unique(both, axis=0)


def build_sage_operator(n_users, n_items, inter_pairs, social_edges, depth):
    """Mean aggregation over {self} + social neighbors + interacted items."""
    n = n_users + n_items
    soc = _sym_social(social_edges)
    rows = np.concatenate([
        inter_pairs[:, 0], inter_pairs[:, 1] + n_users,
        soc[:, 0], np.arange(n)])
    cols = np.concatenate([
        inter_pairs[:, 1] + n_users, inter_pairs[:, 0],
        soc[:, 1], np.arange(n)])
    deg = np.bincount(rows, minlength=n) - 1  # self-loops excluded
    weights = 1.0 / (1.0 + deg[rows])
    return LinearPropagation(n, rows, cols, weights, depth)


def build_sociallgn_operator(n_users, n_items, inter_pairs, social_edges,
                             depth):
    """Per-layer mean of symmetric-normalized interaction and social
    propagation on the user side; interaction propagation on the item side.
    Nodes with no edges of either kind keep their own embedding."""
    n = n_users + n_items
    soc = _sym_social(social_edges)
    d_iu = np.bincount(inter_pairs[:, 0], minlength=n_users).astype(float)
    d_ii = np.bincount(inter_pairs[:, 1], minlength=n_items).astype(float)
    d_s = np.bincount(soc[:, 0], minlength=n_users).astype(float)

    # user-side weights: halve each branch only when both branches exist
    u_half = np.where((d_iu > 0) & (d_s > 0), 0.5, 1.0)

    rows, cols, weights = [], [], []
    if inter_pairs.shape[0]:
        u, i = inter_pairs[:, 0], inter_pairs[:, 1]
        w = 1.0 / np.sqrt(d_iu[u] * d_ii[i])
        rows.append(u)
        cols.append(i + n_users)
        weights.append(u_half[u] * w)
        rows.append(i + n_users)
        cols.append(u)
        weights.append(w)
    if soc.shape[0]:
        a, b = soc[:, 0], soc[:, 1]
        w = 1.0 / np.sqrt(d_s[a] * d_s[b])
        rows.append(a)
        cols.append(b)
        weights.append(u_half[a] * w)

    isolated_users = np.flatnonzero((d_iu == 0) & (d_s == 0))
    isolated_items = np.flatnonzero(d_ii == 0) + n_users
    isolated = np.concatenate([isolated_users, isolated_items])
    rows.append(isolated)
    cols.append(isolated)
    weights.append(np.ones(len(isolated)))

    return LinearPropagation(
        n, np.concatenate(rows), np.concatenate(cols),
        np.concatenate(weights).astype(np.float64), depth)


_OPERATOR_BUILDERS = {"sage": build_sage_operator,
                      "sociallgn": build_sociallgn_operator}


class RecModel:
    """A trainable target recommender."""

    def __init__(self, variant, n_users, n_items, dim=64, depth=3,
                 reg=1e-4, seed=0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.n_users = n_users
        self.n_items = n_items
        self.dim = dim
        self.depth = depth
        self.reg = reg
        self.seed = seed
        self.user_emb = rng_for(seed, "user-emb").normal(
            0.0, 0.1, size=(n_users, dim))
        self.item_emb = rng_for(seed, "item-emb").normal(
            0.0, 0.1, size=(n_items, dim))
        self.trained = False
        self.train_pairs = np.empty((0, 2), dtype=np.int64)
        self.social_edges = np.empty((0, 2), dtype=np.int64)
        self.loss_history = []
        self._final = None

    @property
    def propagated(self):
        return self.variant in _OPERATOR_BUILDERS

    def _operator(self, n_users=None, train_pairs=None, social_edges=None):
        build = _OPERATOR_BUILDERS[self.variant]
        return build(self.n_users if n_users is None else n_users,
                     self.n_items,
                     self.train_pairs if train_pairs is None else train_pairs,
                     self.social_edges if social_edges is None else social_edges,
                     self.depth)

    def invalidate(self):
        self._final = None

    def final_embeddings(self):
        """(user, item) representation matrices used for scoring."""
        if not self.propagated:
            return self.user_emb, self.item_emb
        if self._final is None:
            stacked = np.concatenate([self.user_emb, self.item_emb], axis=0)
            final = self._operator().final(stacked)
            self._final = (final[:self.n_users], final[self.n_users:])
        return self._final

    def scores_for(self, users):
        fu, fi = self.final_embeddings()
        return fu[np.asarray(users, dtype=np.int64)] @ fi.T

    def checkpoint(self):
        return {"user_emb": self.user_emb, "item_emb": self.item_emb}

    def restore(self, named):
        self.user_emb = named["user_emb"].copy()
        self.item_emb = named["item_emb"].copy()
        self.trained = True
        self.invalidate()


def bpr_loss(model, triple):
    """Pairwise BPR loss of one (user, positive, negative) triple, with the
    L2 penalty restricted to the touched base embeddings."""
    u, i, j = triple
    if not (0 <= u < model.n_users and 0 <= i < model.n_items
            and 0 <= j < model.n_items):
        raise ValueError("triple ids out of range")
    fu, fi = model.final_embeddings()
    x = float(fu[u] @ (fi[i] - fi[j]))
    loss = float(np.logaddexp(0.0, -x))
    reg = model.reg * float(np.sum(model.user_emb[u] ** 2)
                            + np.sum(model.item_emb[i] ** 2)
                            + np.sum(model.item_emb[j] ** 2))
    return loss + reg


def _sample_negatives(rng, users, train_keys, m):
    neg = rng.integers(0, m, size=len(users))
    keys = users * m + neg
    bad = np.flatnonzero(np.isin(keys, train_keys, assume_unique=False))
    while bad.size:
        neg[bad] = rng.integers(0, m, size=bad.size)
        keys = users[bad] * m + neg[bad]
        still = np.isin(keys, train_keys)
        bad = bad[still]
    return neg


def _social_item_candidates(n_users, train_user_items, social_neighbors):
    """Per user: items consumed by friends but not by the user."""
    out = []
    for u in range(n_users):
        own = set(train_user_items[u].tolist())
        friend_items = set()
        for v in social_neighbors[u]:
            friend_items.update(train_user_items[v].tolist())
        out.append(np.array(sorted(friend_items - own), dtype=np.int64))
    return out


def _propagated_epoch(model, op, users, pos, neg, lr, reg, batch_size,
                      adv_eps):
    """Mini-batch BPR through a linear propagation operator."""
    n, m, d = model.n_users, model.n_items, model.dim
    total = 0.0
    for start in range(0, len(users), batch_size):
        ub = users[start:start + batch_size]
        ib = pos[start:start + batch_size] + n
        jb = neg[start:start + batch_size] + n
        base = np.concatenate([model.user_emb, model.item_emb], axis=0)
        if adv_eps > 0.0:
            final = op.final(base)
            x = np.einsum("ij,ij->i", final[ub], final[ib] - final[jb])
            s = 1.0 / (1.0 + np.exp(x))
            gf = np.zeros_like(final)
            kernels.scatter_add_rows(gf, ub, -s[:, None] * (final[ib] - final[jb]))
            kernels.scatter_add_rows(gf, ib, -s[:, None] * final[ub])
            kernels.scatter_add_rows(gf, jb, s[:, None] * final[ub])
            gbase = op.backprop(gf)
            norms = np.linalg.norm(gbase, axis=1, keepdims=True)
            np.divide(gbase, norms, out=gbase, where=norms > 0)
            base = base + adv_eps * gbase
        final = op.final(base)
        x = np.einsum("ij,ij->i", final[ub], final[ib] - final[jb])
        s = 1.0 / (1.0 + np.exp(x))                  # sigmoid(-x)
        total += float(np.sum(np.logaddexp(0.0, -x)))
        gf = np.zeros_like(final)
        kernels.scatter_add_rows(gf, ub, -s[:, None] * (final[ib] - final[jb]))
        kernels.scatter_add_rows(gf, ib, -s[:, None] * final[ub])
        kernels.scatter_add_rows(gf, jb, s[:, None] * final[ub])
        gbase = op.backprop(gf)
        # L2 penalty acts on the touched base rows of the clean parameters
        touched = np.concatenate([ub, ib, jb])
        clean = np.concatenate([model.user_emb, model.item_emb], axis=0)
        kernels.scatter_add_rows(gbase, touched, 2.0 * reg * clean[touched])
        total += reg * float(np.sum(clean[touched] ** 2))
        model.user_emb -= lr * gbase[:n]
        model.item_emb -= lr * gbase[n:]
    return total / max(len(users), 1)


def train(model, split, social_edges, epochs, lr=0.05, reg=None, seed=0,
          batch_size=1024, adv_eps=0.0, epoch_callback=None):
    """BPR-train the model on the split's train interactions.

    ``adv_eps`` > 0 switches on adversarial perturbation of the touched
    embeddings (gradient direction, per-row norm adv_eps) before the loss;
    0 runs plain training bit-identically.
    """
    reg = model.reg if reg is None else reg
    social_edges = np.asarray(social_edges, dtype=np.int64).reshape(-1, 2)
    model.train_pairs = split.train.copy()
    model.social_edges = social_edges.copy()
    model.loss_history = []
    if adv_eps > 0.0 and model.variant == "sbpr":
        raise UnsupportedMode("adversarial training: mf-bpr/sage/sociallgn")

    n, m = model.n_users, model.n_items
    pairs = split.train
    train_keys = np.sort(pairs[:, 0] * m + pairs[:, 1])
    rng = rng_for(seed, "bpr-train")

    soc_candidates = None
    if model.variant == "sbpr":
        soc_candidates = _social_item_candidates(
            n, split.train_user_items, Dataset(
                n, m, pairs, social_edges).social_neighbors)

    op = model._operator() if model.propagated else None

    for epoch in range(epochs):
        order = rng.permutation(pairs.shape[0])
        users = pairs[order, 0].copy()
        pos = pairs[order, 1].copy()
        neg = _sample_negatives(rng, users, train_keys, m)

        if model.variant == "mf-bpr":
            loss = kernels.bpr_mf_epoch(model.user_emb, model.item_emb,
                                        users, pos, neg, lr, reg,
                                        batch_size, adv_eps)
        elif model.variant == "sbpr":
            soc = np.zeros_like(pos)
            has = np.zeros(len(users), dtype=np.bool_)
            draws = rng.random(len(users))
            for r, u in enumerate(users):
                cand = soc_candidates[u]
                if cand.size:
                    soc[r] = cand[int(draws[r] * cand.size)]
                    has[r] = True
            loss = kernels.sbpr_epoch(model.user_emb, model.item_emb,
                                      users, pos, soc, neg, has, lr, reg,
                                      batch_size)
        else:
            loss = _propagated_epoch(model, op, users, pos, neg, lr, reg,
                                     batch_size, adv_eps)

        if not np.isfinite(loss):
            raise TrainingDivergence(f"epoch {epoch}: loss {loss}")
        model.loss_history.append(loss)
        if epoch_callback is not None:
            model.trained = True
            model.invalidate()
            epoch_callback(epoch, model)

    model.trained = True
    model.invalidate()
    return model


def adversarial_train(model, split, social_edges, eps, epochs, lr=0.05,
                      reg=None, seed=0, batch_size=1024):
    """APR-style robust training; eps=0 reduces exactly to train()."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return train(model, split, social_edges, epochs, lr=lr, reg=reg,
                 seed=seed, batch_size=batch_size, adv_eps=eps)


def topk(model, user, k, exclude=()):
    """k best items for the user, excluded ids removed, ties by item id."""
    exclude = np.asarray(list(exclude), dtype=np.int64)
    if k < 1 or k > model.n_items - exclude.size:
        raise ValueError(f"k={k} infeasible with {exclude.size} exclusions")
    scores = model.scores_for([user])[0]
    if exclude.size:
        scores = scores.copy()
        scores[exclude] = -np.inf
    order = np.lexsort((np.arange(model.n_items), -scores))
    return order[:k]


def topk_lists(model, users, k, exclude_by_user):
    """Top-k lists for many users; exclusions looked up per user."""
    users = np.asarray(users, dtype=np.int64)
    scores = model.scores_for(users)
    out = {}
    ids = np.arange(model.n_items)
    for row, u in enumerate(users):
        s = scores[row]
        excl = exclude_by_user[int(u)] if int(u) < len(exclude_by_user) else ()
        if len(excl):
            s = s.copy()
            s[np.asarray(excl, dtype=np.int64)] = -np.inf
        order = np.lexsort((ids, -s))
        out[int(u)] = order[:k]
    return out


class EvasionView:
    """A frozen trained model with fake users appended to its graphs.

    Base parameters are untouched: each fake user's base representation is
    the mean of its item profile's item embeddings, and every node's final
    representation is recomputed by propagation over the augmented graphs.
    """

    def __init__(self, model, fakes):
        if model.variant != "sage":
            raise UnsupportedMode(
                "evasion injection needs the inductive sage variant")
        if not model.trained:
            raise ValueError("model is not trained")
        self.model = model
        self.n_items = model.n_items
        self.n_real_users = model.n_users
        n = model.n_users

        fake_rows = []
        extra_inter = []
        extra_social = []
        for idx, fake in enumerate(fakes):
            fid = n + idx
            items = np.asarray(fake.item_profile, dtype=np.int64)
            if items.size and items.max() >= model.n_items:
                raise ValueError("fake profile item id out of range")
            fake_rows.append(model.item_emb[items].mean(axis=0)
                             if items.size else np.zeros(model.dim))
            extra_inter.extend((fid, int(i)) for i in items)
            for a, b in fake.social_profile:
                extra_social.append((fid, a))
                extra_social.append((fid, b))

        self.n_users = n + len(fakes)
        base_users = np.concatenate(
            [model.user_emb, np.asarray(fake_rows).reshape(-1, model.dim)],
            axis=0)
        inter = np.concatenate(
            [model.train_pairs,
             np.asarray(extra_inter, dtype=np.int64).reshape(-1, 2)], axis=0)
        social = np.concatenate(
            [model.social_edges,
             np.asarray(extra_social, dtype=np.int64).reshape(-1, 2)], axis=0)
        op = model._operator(n_users=self.n_users, train_pairs=inter,
                             social_edges=social)
        final = op.final(np.concatenate([base_users, model.item_emb], axis=0))
        self._fu = final[:self.n_users]
        self._fi = final[self.n_users:]

    def final_embeddings(self):
        return self._fu, self._fi

    def scores_for(self, users):
        return self._fu[np.asarray(users, dtype=np.int64)] @ self._fi.T


def inject_evasion(model, fakes):
    return EvasionView(model, fakes)


def inject_poison(dataset, fakes, budget):
    """New dataset with fake users appended and their profiles wired in."""
    if len(fakes) > budget.max_fake_users:
        raise BudgetError(
            f"{len(fakes)} fakes exceed budget {budget.max_fake_users}")
    n = dataset.n_users
    inter_rows = [dataset.interactions]
    social_rows = [dataset.social_edges]
    for idx, fake in enumerate(fakes):
        if len(fake.item_profile) > budget.profile_len:
            raise BudgetError("item profile exceeds length budget")
        fid = n + idx
        items = np.asarray(fake.item_profile, dtype=np.int64)
        if items.size and items.max() >= dataset.n_items:
            raise ValueError("fake profile item id out of range")
        if items.size:
            inter_rows.append(np.column_stack(
                [np.full(items.size, fid), items]))
        partners = np.asarray(fake.partner_ids(), dtype=np.int64)
        if partners.size:
            social_rows.append(np.column_stack(
                [np.full(partners.size, fid), partners]))
    return Dataset(n + len(fakes), dataset.n_items,
                   np.concatenate(inter_rows),
                   np.concatenate(social_rows))
