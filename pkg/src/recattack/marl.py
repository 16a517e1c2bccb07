"""DEC-POMDP attack environment and the multi-agent actor-critic machinery.

One fake user is built over T steps. Per step two social agents pick
(community, user) with the second agent's community masked to differ from
the first (the cross-community constraint), and an item agent picks from
the cold-start pool. All agents share the global reward: the cold-item hit
ratio of the spy users' top-k lists, queried once per reward cadence.

Policies are trained with clipped-surrogate updates against one
centralized critic; value targets are PopArt-normalized.
"""

import numpy as np

from .errors import ConstraintInfeasible
from .nn import Adam, DenseStack, EmbeddingTable, masked_log_softmax
from .seeding import rng_for


def clip_profile(items, max_len=None):
    """Remove duplicate items keeping first occurrence, order preserved."""
    if max_len is not None and len(items) > max_len:
        raise ValueError("profile longer than its length budget")
    seen = set()
    out = []
    for i in items:
        if i not in seen:
            seen.add(i)
            out.append(i)
    return out


class AttackState:
    """Profile-so-far of the fake user under construction."""

    def __init__(self, max_steps, fake_index=0):
        self.items = []          # item profile, kept duplicate-free
        self.pairs = []          # social profile, list of user pairs
        self.t = 0
        self.max_steps = max_steps
        self.fake_index = fake_index

    def finished(self):
        return self.t >= self.max_steps


class AttackEnv:
    """Applies joint actions to the state and enforces their invariants."""

    def __init__(self, partition, pool, max_steps, enforce_cross=True,
                 enforce_pool=True):
        self.partition = partition
        self.pool = pool
        self.max_steps = max_steps
        self.enforce_cross = enforce_cross
        self.enforce_pool = enforce_pool

    def reset(self, fake_index=0):
        return AttackState(self.max_steps, fake_index)

    def step(self, state, action):
        """Joint action: {'pair': ((c1,u1),(c2,u2)), 'item': v}."""
        if state.finished():
            raise ValueError("episode step after t = T")
        (c1, u1), (c2, u2) = action["pair"]
        item = action["item"]
        assign = self.partition.assignment
        if self.enforce_cross and c1 == c2:
            raise ValueError("social picks must use different communities")
        if assign[u1] != c1 or assign[u2] != c2:
            raise ValueError("picked user outside its community roster")
        if u1 == u2:
            raise ValueError("social pair members must differ")
        if self.enforce_pool and int(item) not in self.pool.member_mask_cache:
            raise ValueError("item outside the candidate pool")
        if (u1, u2) not in state.pairs:
            state.pairs.append((int(u1), int(u2)))
        state.items = clip_profile(state.items + [int(item)])
        state.t += 1
        return state


def observe_ids(table, ids, t, max_steps):
    """Mean-pooled id embeddings of the profile-so-far plus t/T."""
    pooled = table.mean_pool(np.asarray(ids, dtype=np.int64))
    return np.concatenate([pooled, [t / max_steps]])


def sample_categorical(rng, probs):
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")
               .clip(0, len(probs) - 1))


def gae(rewards, values, bootstrap, gamma, lam):
    """Generalized advantage estimation; returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError("rewards/values length mismatch")
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_v = bootstrap if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


class PopArt:
    """Running normalization of value targets that rescales the critic's
    output layer so denormalized predictions are preserved."""

    def __init__(self, rate=0.1, eps=1e-4):
        self.rate = rate
        self.eps = eps
        self.mean = 0.0
        self.sq = 0.0

    @property
    def sigma(self):
        return float(np.sqrt(max(self.sq - self.mean ** 2, self.eps)))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.sigma

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.sigma + self.mean

    def update(self, returns, out_weight=None, out_bias=None):
        """Fold a batch of returns into the stats; rescale the given output
        layer in place; return the normalized targets."""
        returns = np.asarray(returns, dtype=np.float64)
        old_mean, old_sigma = self.mean, self.sigma
        self.mean = (1 - self.rate) * self.mean + self.rate * returns.mean()
        self.sq = (1 - self.rate) * self.sq + self.rate * float(
            np.mean(returns ** 2))
        if out_weight is not None:
            out_weight *= old_sigma / self.sigma
            out_bias *= old_sigma
            out_bias += old_mean - self.mean
            out_bias /= self.sigma
        return self.normalize(returns)


class _Actor:
    """Shared plumbing: evaluate stored steps, push gradients to Adam."""

    def make_optimizer(self, lr):
        return Adam(self.parameters(), lr=lr)

    @staticmethod
    def _head_terms(logits, masks, chosen):
        """Per-row log-prob of the chosen entry, entropy, and the softmax
        cache needed for the backward pass."""
        n = logits.shape[0]
        logps = np.empty(n)
        ents = np.empty(n)
        probs = np.zeros_like(logits)
        logp_rows = np.zeros_like(logits)
        for b in range(n):
            lp = masked_log_softmax(logits[b], masks[b])
            p = np.where(masks[b], np.exp(lp), 0.0)
            safe_lp = np.where(masks[b], lp, 0.0)
            probs[b] = p
            logp_rows[b] = safe_lp
            logps[b] = lp[chosen[b]]
            ents[b] = -float(np.sum(p * safe_lp))
        return logps, ents, probs, logp_rows

    @staticmethod
    def _head_logit_grad(probs, logp_rows, chosen, ents, coef_logp,
                         coef_ent):
        """d(loss)/d(logits) given per-row coefficients on logp and H."""
        n, width = probs.shape
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), chosen] = 1.0
        g_logp = coef_logp[:, None] * (onehot - probs)
        g_ent = coef_ent[:, None] * (-probs * (logp_rows + ents[:, None]))
        return g_logp + g_ent


class SocialActor(_Actor):
    """Hierarchical policy: community head then user head over the roster.

    The user-id observation table can warm-start from the public walk
    embeddings of the social graph.
    """

    def __init__(self, partition, n_users, obs_dim=32, n_layers=4, width=32,
                 seed=0, name="social", warm_table=None):
        self.partition = partition
        self.n_users = n_users
        self.obs_dim = obs_dim
        self.n_comm = partition.n_communities
        rng = rng_for(seed, f"actor:{name}")
        self.table = EmbeddingTable(n_users, obs_dim, rng)
        if warm_table is not None:
            self.table.values = warm_table[:, :obs_dim].copy()
        self.comm_head = DenseStack.mlp(obs_dim + 1, self.n_comm, n_layers,
                                        width, rng)
        self.user_head = DenseStack.mlp(obs_dim + 1 + self.n_comm, n_users,
                                        n_layers, width, rng)
        self._roster_masks = np.zeros((self.n_comm, n_users), dtype=bool)
        for c, roster in enumerate(partition.rosters):
            self._roster_masks[c, roster] = True

    def parameters(self):
        return ([self.table.values] + self.comm_head.parameters()
                + self.user_head.parameters())

    def observe(self, state):
        ids = [u for pair in state.pairs for u in pair]
        return observe_ids(self.table, ids, state.t, state.max_steps)

    def _comm_mask(self, forbidden):
        mask = np.ones(self.n_comm, dtype=bool)
        if forbidden is not None and forbidden >= 0:
            if self.n_comm < 2:
                raise ConstraintInfeasible(
                    "cannot exclude the only community")
            mask[forbidden] = False
        # empty rosters can never yield a user pick
        for c in range(self.n_comm):
            if not self._roster_masks[c].any():
                mask[c] = False
        if not mask.any():
            raise ConstraintInfeasible("no selectable community")
        return mask

    def act(self, state, forbidden, rng):
        """Sample (community, user); returns an action record with the
        joint log-probability log pi_c + log pi_u."""
        obs_ids = tuple(u for pair in state.pairs for u in pair)
        obs = observe_ids(self.table, obs_ids, state.t, state.max_steps)
        c_logits, _ = self.comm_head.forward(obs)
        c_mask = self._comm_mask(forbidden)
        c_lp = masked_log_softmax(c_logits, c_mask)
        c = sample_categorical(rng, np.where(c_mask, np.exp(c_lp), 0.0))
        onehot = np.zeros(self.n_comm)
        onehot[c] = 1.0
        u_logits, _ = self.user_head.forward(np.concatenate([obs, onehot]))
        u_mask = self._roster_masks[c]
        u_lp = masked_log_softmax(u_logits, u_mask)
        u = sample_categorical(rng, np.where(u_mask, np.exp(u_lp), 0.0))
        return {"obs_ids": obs_ids, "t": state.t, "T": state.max_steps,
                "community": c, "user": u,
                "forbidden": -1 if forbidden is None else int(forbidden),
                "logp": float(c_lp[c] + u_lp[u]), "obs_vec": obs}

    def _encode_batch(self, records):
        rows = [observe_ids(self.table, r["obs_ids"], r["t"], r["T"])
                for r in records]
        return np.asarray(rows)

    def evaluate(self, records):
        """Joint log-probs and entropies of the stored actions under the
        current parameters."""
        obs = self._encode_batch(records)
        comms = np.array([r["community"] for r in records])
        users = np.array([r["user"] for r in records])
        c_masks = np.array([self._comm_mask(r["forbidden"])
                            for r in records])
        c_logits, c_cache = self.comm_head.forward(obs)
        c_lp, c_ent, c_probs, c_lprows = self._head_terms(
            c_logits, c_masks, comms)

        onehot = np.zeros((len(records), self.n_comm))
        onehot[np.arange(len(records)), comms] = 1.0
        u_in = np.concatenate([obs, onehot], axis=1)
        u_logits, u_cache = self.user_head.forward(u_in)
        u_masks = self._roster_masks[comms]
        u_lp, u_ent, u_probs, u_lprows = self._head_terms(
            u_logits, u_masks, users)

        cache = (records, obs, c_cache, u_cache,
                 (c_probs, c_lprows, comms, c_ent),
                 (u_probs, u_lprows, users, u_ent))
        return c_lp + u_lp, c_ent + u_ent, cache

    def backward(self, cache, coef_logp, coef_ent):
        records, obs, c_cache, u_cache, c_pack, u_pack = cache
        dzc = self._head_logit_grad(c_pack[0], c_pack[1], c_pack[2],
                                    c_pack[3], coef_logp, coef_ent)
        c_grads, dobs_c = self.comm_head.backward(c_cache, dzc)
        dzu = self._head_logit_grad(u_pack[0], u_pack[1], u_pack[2],
                                    u_pack[3], coef_logp, coef_ent)
        u_grads, du_in = self.user_head.backward(u_cache, dzu)
        dobs = dobs_c + du_in[:, :self.obs_dim + 1]

        table_grad = np.zeros_like(self.table.values)
        for b, rec in enumerate(records):
            ids = np.asarray(rec["obs_ids"], dtype=np.int64)
            if ids.size:
                np.add.at(table_grad, ids, dobs[b, :self.obs_dim] / ids.size)
        grads = [table_grad]
        for dw, db in c_grads:
            grads.extend([dw, db])
        for dw, db in u_grads:
            grads.extend([dw, db])
        return grads


class DoubleSocialActor(SocialActor):
    """Two-agent variant: one social actor emits both (community, user)
    picks sequentially, the second pick masking the first community."""

    def act_pair(self, state, rng):
        first = self.act(state, None, rng)
        second = self.act(state, first["community"], rng)
        return {"sub": (first, second),
                "logp": first["logp"] + second["logp"]}

    def evaluate(self, records):
        flat = [r for rec in records for r in rec["sub"]]
        lp, ent, cache = super().evaluate(flat)
        return lp[0::2] + lp[1::2], ent[0::2] + ent[1::2], cache

    def backward(self, cache, coef_logp, coef_ent):
        return super().backward(cache, np.repeat(coef_logp, 2),
                                np.repeat(coef_ent, 2))


class ItemActor(_Actor):
    """Single-head policy over the candidate item pool."""

    def __init__(self, pool, n_items, obs_dim=32, n_layers=4, width=32,
                 seed=0, name="item"):
        if len(pool) == 0:
            raise ValueError("empty candidate pool")
        rng = rng_for(seed, f"actor:{name}")
        self.n_items = n_items
        self.obs_dim = obs_dim
        self.table = EmbeddingTable(n_items, obs_dim, rng)
        self.head = DenseStack.mlp(obs_dim + 1, n_items, n_layers, width,
                                   rng)
        self.pool_mask = np.zeros(n_items, dtype=bool)
        self.pool_mask[pool.items] = True

    def parameters(self):
        return [self.table.values] + self.head.parameters()

    def observe(self, state):
        return observe_ids(self.table, state.items, state.t,
                           state.max_steps)

    def act(self, state, rng):
        obs_ids = tuple(state.items)
        obs = observe_ids(self.table, obs_ids, state.t, state.max_steps)
        logits, _ = self.head.forward(obs)
        lp = masked_log_softmax(logits, self.pool_mask)
        v = sample_categorical(rng, np.where(self.pool_mask, np.exp(lp), 0.0))
        return {"obs_ids": obs_ids, "t": state.t, "T": state.max_steps,
                "item": v, "logp": float(lp[v]), "obs_vec": obs}

    def evaluate(self, records):
        obs = np.asarray([observe_ids(self.table, r["obs_ids"], r["t"],
                                      r["T"]) for r in records])
        items = np.array([r["item"] for r in records])
        logits, h_cache = self.head.forward(obs)
        masks = np.broadcast_to(self.pool_mask, logits.shape)
        lp, ent, probs, lprows = self._head_terms(logits, masks, items)
        return lp, ent, (records, h_cache, probs, lprows, items, ent)

    def backward(self, cache, coef_logp, coef_ent):
        records, h_cache, probs, lprows, items, ent = cache
        dz = self._head_logit_grad(probs, lprows, items, ent, coef_logp,
                                   coef_ent)
        h_grads, dobs = self.head.backward(h_cache, dz)
        table_grad = np.zeros_like(self.table.values)
        for b, rec in enumerate(records):
            ids = np.asarray(rec["obs_ids"], dtype=np.int64)
            if ids.size:
                np.add.at(table_grad, ids, dobs[b, :self.obs_dim] / ids.size)
        grads = [table_grad]
        for dw, db in h_grads:
            grads.extend([dw, db])
        return grads


class PoisonRecActor(_Actor):
    """Flat single-agent policy: one user-pair pick plus one item pick per
    step over the full user/item spaces, with the same query reward."""

    def __init__(self, partition, n_users, n_items, obs_dim=32, n_layers=4,
                 width=32, seed=0, cross_mask=True):
        rng = rng_for(seed, "actor:poisonrec")
        self.partition = partition
        self.n_users = n_users
        self.n_items = n_items
        self.obs_dim = obs_dim
        self.cross_mask = cross_mask
        self.user_table = EmbeddingTable(n_users, obs_dim, rng)
        self.item_table = EmbeddingTable(n_items, obs_dim, rng)
        in_dim = 2 * obs_dim + 1
        self.u1_head = DenseStack.mlp(in_dim, n_users, n_layers, width, rng)
        self.u2_head = DenseStack.mlp(in_dim, n_users, n_layers, width, rng)
        self.item_head = DenseStack.mlp(in_dim, n_items, n_layers, width,
                                        rng)

    def parameters(self):
        return ([self.user_table.values, self.item_table.values]
                + self.u1_head.parameters() + self.u2_head.parameters()
                + self.item_head.parameters())

    def _obs(self, user_ids, item_ids, t, max_steps):
        return np.concatenate([
            self.user_table.mean_pool(np.asarray(user_ids, dtype=np.int64)),
            self.item_table.mean_pool(np.asarray(item_ids, dtype=np.int64)),
            [t / max_steps]])

    def _u2_mask(self, u1):
        mask = np.ones(self.n_users, dtype=bool)
        if self.cross_mask:
            assign = self.partition.assignment
            mask &= assign != assign[u1]
            if not mask.any():
                raise ConstraintInfeasible("single-community graph")
        mask[u1] = False
        return mask

    def act(self, state, rng):
        user_ids = tuple(u for pair in state.pairs for u in pair)
        item_ids = tuple(state.items)
        obs = self._obs(user_ids, item_ids, state.t, state.max_steps)
        all_users = np.ones(self.n_users, dtype=bool)
        lp1 = masked_log_softmax(self.u1_head.forward(obs)[0], all_users)
        u1 = sample_categorical(rng, np.exp(lp1))
        m2 = self._u2_mask(u1)
        lp2 = masked_log_softmax(self.u2_head.forward(obs)[0], m2)
        u2 = sample_categorical(rng, np.where(m2, np.exp(lp2), 0.0))
        all_items = np.ones(self.n_items, dtype=bool)
        lpv = masked_log_softmax(self.item_head.forward(obs)[0], all_items)
        v = sample_categorical(rng, np.exp(lpv))
        return {"user_ids": user_ids, "item_ids": item_ids, "t": state.t,
                "T": state.max_steps, "u1": u1, "u2": u2, "item": v,
                "logp": float(lp1[u1] + lp2[u2] + lpv[v]), "obs_vec": obs}

    def evaluate(self, records):
        obs = np.asarray([self._obs(r["user_ids"], r["item_ids"], r["t"],
                                    r["T"]) for r in records])
        n = len(records)
        u1 = np.array([r["u1"] for r in records])
        u2 = np.array([r["u2"] for r in records])
        items = np.array([r["item"] for r in records])
        m1 = np.ones((n, self.n_users), dtype=bool)
        m2 = np.array([self._u2_mask(r["u1"]) for r in records])
        mv = np.ones((n, self.n_items), dtype=bool)

        z1, c1 = self.u1_head.forward(obs)
        z2, c2 = self.u2_head.forward(obs)
        zv, cv = self.item_head.forward(obs)
        lp1, e1, p1, r1 = self._head_terms(z1, m1, u1)
        lp2, e2, p2, r2 = self._head_terms(z2, m2, u2)
        lpv, ev, pv, rv = self._head_terms(zv, mv, items)
        cache = (records, c1, c2, cv, (p1, r1, u1, e1), (p2, r2, u2, e2),
                 (pv, rv, items, ev))
        return lp1 + lp2 + lpv, e1 + e2 + ev, cache

    def backward(self, cache, coef_logp, coef_ent):
        records, c1, c2, cv, pk1, pk2, pkv = cache
        g1, d1 = self.u1_head.backward(
            c1, self._head_logit_grad(*pk1, coef_logp, coef_ent))
        g2, d2 = self.u2_head.backward(
            c2, self._head_logit_grad(*pk2, coef_logp, coef_ent))
        gv, dv = self.item_head.backward(
            cv, self._head_logit_grad(*pkv, coef_logp, coef_ent))
        dobs = d1 + d2 + dv
        ug = np.zeros_like(self.user_table.values)
        ig = np.zeros_like(self.item_table.values)
        for b, rec in enumerate(records):
            uids = np.asarray(rec["user_ids"], dtype=np.int64)
            iids = np.asarray(rec["item_ids"], dtype=np.int64)
            if uids.size:
                np.add.at(ug, uids, dobs[b, :self.obs_dim] / uids.size)
            if iids.size:
                np.add.at(ig, iids,
                          dobs[b, self.obs_dim:2 * self.obs_dim] / iids.size)
        grads = [ug, ig]
        for pack in (g1, g2, gv):
            for dw, db in pack:
                grads.extend([dw, db])
        return grads


class Critic:
    """Centralized value network over the concatenated agent observations,
    predicting PopArt-normalized returns."""

    def __init__(self, in_dim, n_layers=4, width=32, seed=0,
                 popart_rate=0.1):
        rng = rng_for(seed, "critic")
        self.stack = DenseStack.mlp(in_dim, 1, n_layers, width, rng)
        self.popart = PopArt(rate=popart_rate)

    def parameters(self):
        return self.stack.parameters()

    def make_optimizer(self, lr):
        return Adam(self.parameters(), lr=lr)

    def value(self, joint_obs):
        """Denormalized value estimate for one concatenated observation."""
        out, _ = self.stack.forward(joint_obs)
        return float(self.popart.denormalize(out[0]))

    def normalized_batch(self, joint_obs_matrix):
        out, cache = self.stack.forward(joint_obs_matrix)
        return out[:, 0], cache

    def update_popart(self, returns):
        w = self.stack.weights[-1]
        b = self.stack.biases[-1]
        return self.popart.update(returns, out_weight=w, out_bias=b)


class RolloutBuffer:
    """Per-episode trajectories plus their processed advantage estimates."""

    def __init__(self, gamma=0.99, lam=0.95):
        self.gamma = gamma
        self.lam = lam
        self.episodes = []

    def add_episode(self, steps, bootstrap=0.0):
        rewards = np.array([s["reward"] for s in steps])
        values = np.array([s["value"] for s in steps])
        adv, rets = gae(rewards, values, bootstrap, self.gamma, self.lam)
        episode = {"steps": steps, "advantages": adv, "returns": rets}
        self.episodes.append(episode)
        return episode

    @property
    def latest(self):
        return self.episodes[-1]


def ppo_update(actors, critic, episode, optimizers, critic_optimizer,
               clip=0.2, entropy_coef=0.01, value_coef=0.5, epochs=10):
    """Clipped-surrogate update of every actor plus the centralized critic,
    K passes over one episode. Returns loss diagnostics.

    Advantages and value targets are PopArt-normalized first; the critic's
    output layer is rescaled so its denormalized predictions survive the
    statistics update.
    """
    steps = episode["steps"]
    joint_obs = np.asarray([s["joint_obs"] for s in steps])
    targets = critic.update_popart(episode["returns"])
    adv = episode["advantages"] / critic.popart.sigma
    n = len(steps)

    diag = {"actor_loss": {}, "entropy": {}, "ratio_max": {},
            "critic_loss": []}
    for _ in range(epochs):
        for name, actor in actors.items():
            records = [s["records"][name] for s in steps]
            logp_old = np.array([r["logp"] for r in records])
            logp, ent, cache = actor.evaluate(records)
            ratio = np.exp(logp - logp_old)
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
            surrogate = np.minimum(unclipped, clipped)
            # gradient of -surrogate wrt logp: active only on the
            # unclipped branch
            active = unclipped <= clipped
            coef_logp = np.where(active, -ratio * adv, 0.0) / n
            coef_ent = np.full(n, -entropy_coef / n)
            grads = actor.backward(cache, coef_logp, coef_ent)
            optimizers[name].step(grads)
            diag["actor_loss"][name] = float(-surrogate.mean())
            diag["entropy"][name] = float(ent.mean())
            diag["ratio_max"][name] = float(np.abs(ratio - 1.0).max())

        v_norm, cache = critic.normalized_batch(joint_obs)
        err = v_norm - targets
        diag["critic_loss"].append(value_coef * float(np.mean(err ** 2)))
        dv = (2.0 * value_coef / n) * err
        grads_pairs, _ = critic.stack.backward(cache, dv[:, None])
        grads = []
        for dw, db in grads_pairs:
            grads.extend([dw, db])
        critic_optimizer.step(grads)
    return diag


def action_space_sizes(partition, pool):
    """Diagnostics for the reduced action spaces."""
    max_roster = max((len(r) for r in partition.rosters), default=0)
    return {"item_agent": len(pool),
            "social_agent": partition.n_communities * max_roster}
