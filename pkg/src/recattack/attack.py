"""Attack orchestration: the multi-agent attack and its variants, heuristic
baselines, evaluation reports and the preliminary studies.

Attacks run in evasion mode by default: the target is a frozen inductive
model and fake users are injected at query time. All strategies emit
cross-community social pairs so every fake user passes the same constraint
audit (for the heuristics the pair is drawn uniformly conditioned on the
two communities differing).
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import community as community_mod
from . import marl
from .data import (ItemPool, cold_start_pool, popular_pool,
                   popularity_decile_pool, select_spies)
from .errors import ConstraintInfeasible
from .metrics import cold_hit_reward, report_from_rankings
from .recmodels import Budget, FakeUser, inject_evasion, topk_lists, train
from .seeding import rng_for

STRATEGIES = ("multi", "double", "multi-social", "random", "cold", "pop",
              "degree", "poisonrec-untargeted")
RL_STRATEGIES = ("multi", "double", "multi-social", "poisonrec-untargeted")


@dataclass
class AttackConfig:
    strategy: str = "multi"
    n_fakes: int = 38
    profile_len: int = 30
    cold_quantile: float = 0.10
    pop_top_k: int = 10
    degree_threshold: int = 20
    spy_count: int = 50
    reward_k: int = 10
    cadence: int = 2
    fakes_per_episode: int = 2
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    ppo_epochs: int = 10
    lr: float = 5e-4
    actor_layers: int = 4
    actor_width: int = 32
    obs_dim: int = 32
    popart_rate: float = 0.1
    warm_start: bool = True
    seed: int = 0
    # ablation switches (all on = full method)
    community_mask: bool = True
    louvain_only: bool = False
    multiagent: bool = True
    use_cold_pool: bool = True

    def budget(self):
        return Budget(self.n_fakes, self.profile_len)


@dataclass
class AttackResult:
    strategy: str
    seed: int
    fakes: list
    reward_curve: list
    clean_report: object
    attacked_report: object
    diagnostics: list = field(default_factory=list)
    action_space: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def fake_payload(self):
        return [{"items": [int(i) for i in f.item_profile],
                 "pairs": [[int(a), int(b)] for a, b in f.social_profile]}
                for f in self.fakes]


class EvasionTarget:
    """Black-box handle onto a frozen trained inductive recommender."""

    def __init__(self, model, split):
        self.model = model
        self.split = split
        self._exclude = split.train_user_items
        self._relevant = {u: set(items.tolist())
                          for u, items in enumerate(split.test_user_items)
                          if len(items)}

    def spy_lists(self, fakes, spies, k):
        view = inject_evasion(self.model, fakes) if fakes else self.model
        return topk_lists(view, spies.users, k, self._exclude)

    def report(self, fakes, label, ks=(5, 10, 20)):
        view = inject_evasion(self.model, fakes) if fakes else self.model
        users = sorted(self._relevant)
        rankings = topk_lists(view, users, max(ks), self._exclude)
        return report_from_rankings(label, rankings, self._relevant, ks=ks)


@dataclass
class AttackContext:
    dataset: object
    split: object
    target: object
    partition: object
    cold_pool: object
    pop_pool: object
    spies: object
    clean_report: object

    def query_reward(self, fakes, k):
        lists = self.target.spy_lists(fakes, self.spies, k)
        return cold_hit_reward(list(lists.values()), self.cold_pool, k)


def prepare_context(dataset, split, model, config):
    """Partition the social graph, build pools and spies, snapshot the
    clean report."""
    if config.louvain_only:
        part = community_mod.louvain(dataset.social_edges, dataset.n_users)
        part.embeddings = None
    else:
        part = community_mod.partition(dataset.social_edges,
                                       dataset.n_users,
                                       dim=config.obs_dim,
                                       seed=config.seed)
    target = EvasionTarget(model, split)
    return AttackContext(
        dataset=dataset, split=split, target=target, partition=part,
        cold_pool=cold_start_pool(dataset, config.cold_quantile),
        pop_pool=popular_pool(dataset, config.pop_top_k),
        spies=select_spies(dataset, min(config.spy_count, dataset.n_users),
                           config.seed),
        clean_report=target.report([], label="clean"))


def sample_cross_pairs(rng, partition, count, candidates=None,
                       require_cross=True):
    """Uniform user pairs conditioned on distinct communities."""
    assign = partition.assignment
    cand = (np.asarray(candidates, dtype=np.int64) if candidates is not None
            else np.arange(len(assign)))
    if cand.size == 0:
        raise ValueError("empty candidate user set")
    if require_cross and len(np.unique(assign[cand])) < 2:
        raise ConstraintInfeasible(
            "candidates span fewer than two communities")
    pairs = []
    seen = set()
    attempts = 0
    while len(pairs) < count:
        attempts += 1
        if attempts > 1000 * count:
            raise ConstraintInfeasible("could not sample enough pairs")
        u1 = int(cand[rng.integers(cand.size)])
        u2 = int(cand[rng.integers(cand.size)])
        if u1 == u2 or (u1, u2) in seen:
            continue
        if require_cross and assign[u1] == assign[u2]:
            continue
        seen.add((u1, u2))
        pairs.append((u1, u2))
    return pairs


def _distinct_items(rng, source_items, count):
    size = min(count, len(source_items))
    return [int(i) for i in rng.choice(source_items, size=size,
                                       replace=False)]


class _MultiDriver:
    """Three agents: two hierarchical social actors plus the item actor."""

    name_pair = ("social-1", "social-2")

    def __init__(self, ctx, config):
        warm = None
        if config.warm_start and getattr(ctx.partition, "embeddings", None) \
                is not None:
            warm = ctx.partition.embeddings.values
        self.config = config
        args = dict(obs_dim=config.obs_dim, n_layers=config.actor_layers,
                    width=config.actor_width, seed=config.seed)
        self.s1 = marl.SocialActor(ctx.partition, ctx.dataset.n_users,
                                   name="social-1", warm_table=warm, **args)
        self.s2 = marl.SocialActor(ctx.partition, ctx.dataset.n_users,
                                   name="social-2", warm_table=warm, **args)
        pool = ctx.cold_pool if config.use_cold_pool else ItemPool(
            np.arange(ctx.dataset.n_items), "all items")
        self.item = marl.ItemActor(pool, ctx.dataset.n_items, name="item",
                                   **args)
        self.agents = {"social-1": self.s1, "social-2": self.s2,
                       "item": self.item}
        self.critic = marl.Critic(3 * (config.obs_dim + 1),
                                  n_layers=config.actor_layers,
                                  width=config.actor_width,
                                  seed=config.seed,
                                  popart_rate=config.popart_rate)
        self.env = marl.AttackEnv(ctx.partition, pool, config.profile_len,
                                  enforce_cross=config.community_mask)

    def act(self, state, rng):
        r1 = self.s1.act(state, None, rng)
        forbidden = r1["community"] if self.config.community_mask else None
        r2 = self.s2.act(state, forbidden, rng)
        rv = self.item.act(state, rng)
        action = {"pair": ((r1["community"], r1["user"]),
                           (r2["community"], r2["user"])),
                  "item": rv["item"]}
        joint = np.concatenate([r1["obs_vec"], r2["obs_vec"],
                                rv["obs_vec"]])
        return {"social-1": r1, "social-2": r2, "item": rv}, action, joint


class _DoubleDriver:
    """Two agents: one social actor emitting both picks, plus the item
    actor."""

    def __init__(self, ctx, config):
        warm = None
        if config.warm_start and getattr(ctx.partition, "embeddings", None) \
                is not None:
            warm = ctx.partition.embeddings.values
        self.config = config
        args = dict(obs_dim=config.obs_dim, n_layers=config.actor_layers,
                    width=config.actor_width, seed=config.seed)
        self.social = marl.DoubleSocialActor(
            ctx.partition, ctx.dataset.n_users, name="social-double",
            warm_table=warm, **args)
        pool = ctx.cold_pool if config.use_cold_pool else ItemPool(
            np.arange(ctx.dataset.n_items), "all items")
        self.item = marl.ItemActor(pool, ctx.dataset.n_items, name="item",
                                   **args)
        self.agents = {"social": self.social, "item": self.item}
        self.critic = marl.Critic(3 * (config.obs_dim + 1),
                                  n_layers=config.actor_layers,
                                  width=config.actor_width,
                                  seed=config.seed,
                                  popart_rate=config.popart_rate)
        self.env = marl.AttackEnv(ctx.partition, pool, config.profile_len,
                                  enforce_cross=config.community_mask)

    def act(self, state, rng):
        rec = self.social.act_pair(state, rng)
        r1, r2 = rec["sub"]
        rv = self.item.act(state, rng)
        action = {"pair": ((r1["community"], r1["user"]),
                           (r2["community"], r2["user"])),
                  "item": rv["item"]}
        joint = np.concatenate([r1["obs_vec"], r2["obs_vec"],
                                rv["obs_vec"]])
        return {"social": rec, "item": rv}, action, joint


class _MultiSocialDriver:
    """Social agents only; item profiles are uniform over the whole item
    space (no item policy)."""

    def __init__(self, ctx, config):
        warm = None
        if config.warm_start and getattr(ctx.partition, "embeddings", None) \
                is not None:
            warm = ctx.partition.embeddings.values
        self.config = config
        self.n_items = ctx.dataset.n_items
        args = dict(obs_dim=config.obs_dim, n_layers=config.actor_layers,
                    width=config.actor_width, seed=config.seed)
        self.s1 = marl.SocialActor(ctx.partition, ctx.dataset.n_users,
                                   name="social-1", warm_table=warm, **args)
        self.s2 = marl.SocialActor(ctx.partition, ctx.dataset.n_users,
                                   name="social-2", warm_table=warm, **args)
        self.agents = {"social-1": self.s1, "social-2": self.s2}
        self.critic = marl.Critic(2 * (config.obs_dim + 1),
                                  n_layers=config.actor_layers,
                                  width=config.actor_width,
                                  seed=config.seed,
                                  popart_rate=config.popart_rate)
        self.env = marl.AttackEnv(ctx.partition,
                                  ItemPool(np.arange(self.n_items), "all"),
                                  config.profile_len,
                                  enforce_cross=config.community_mask,
                                  enforce_pool=False)

    def act(self, state, rng):
        r1 = self.s1.act(state, None, rng)
        forbidden = r1["community"] if self.config.community_mask else None
        r2 = self.s2.act(state, forbidden, rng)
        item = int(rng.integers(self.n_items))
        action = {"pair": ((r1["community"], r1["user"]),
                           (r2["community"], r2["user"])),
                  "item": item}
        joint = np.concatenate([r1["obs_vec"], r2["obs_vec"]])
        return {"social-1": r1, "social-2": r2}, action, joint


class _PoisonRecDriver:
    """One flat agent picking (user, user, item) over the full spaces."""

    def __init__(self, ctx, config):
        self.config = config
        self.partition = ctx.partition
        self.actor = marl.PoisonRecActor(
            ctx.partition, ctx.dataset.n_users, ctx.dataset.n_items,
            obs_dim=config.obs_dim, n_layers=config.actor_layers,
            width=config.actor_width, seed=config.seed,
            cross_mask=config.community_mask)
        self.agents = {"agent": self.actor}
        self.critic = marl.Critic(2 * config.obs_dim + 1,
                                  n_layers=config.actor_layers,
                                  width=config.actor_width,
                                  seed=config.seed,
                                  popart_rate=config.popart_rate)
        self.env = marl.AttackEnv(ctx.partition,
                                  ItemPool(np.arange(ctx.dataset.n_items),
                                           "all"),
                                  config.profile_len,
                                  enforce_cross=config.community_mask,
                                  enforce_pool=False)

    def act(self, state, rng):
        rec = self.actor.act(state, rng)
        assign = self.partition.assignment
        action = {"pair": ((int(assign[rec["u1"]]), rec["u1"]),
                           (int(assign[rec["u2"]]), rec["u2"])),
                  "item": rec["item"]}
        return {"agent": rec}, action, rec["obs_vec"]


_DRIVERS = {"multi": _MultiDriver, "double": _DoubleDriver,
            "multi-social": _MultiSocialDriver,
            "poisonrec-untargeted": _PoisonRecDriver}


def _run_rl(config, ctx):
    driver = _DRIVERS[config.strategy](ctx, config)
    rng = rng_for(config.seed, f"rollout:{config.strategy}")
    optimizers = {name: actor.make_optimizer(config.lr)
                  for name, actor in driver.agents.items()}
    critic_opt = driver.critic.make_optimizer(config.lr)
    buffer = marl.RolloutBuffer(config.gamma, config.lam)

    fakes = []
    curve = []
    diags = []
    n_episodes = math.ceil(config.n_fakes / config.fakes_per_episode)
    for _ in range(n_episodes):
        steps = []
        for _ in range(min(config.fakes_per_episode,
                           config.n_fakes - len(fakes))):
            state = driver.env.reset(len(fakes))
            for _ in range(config.profile_len):
                records, action, joint = driver.act(state, rng)
                driver.env.step(state, action)
                steps.append({"records": records, "joint_obs": joint,
                              "reward": 0.0,
                              "value": driver.critic.value(joint)})
            fakes.append(FakeUser(state.items, state.pairs))
            if len(fakes) % config.cadence == 0:
                reward = ctx.query_reward(fakes, config.reward_k)
                steps[-1]["reward"] = reward
                curve.append({"injected": len(fakes), "reward": reward})
        episode = buffer.add_episode(steps)
        diags.append(marl.ppo_update(
            driver.agents, driver.critic, episode, optimizers, critic_opt,
            clip=config.clip, entropy_coef=config.entropy_coef,
            value_coef=config.value_coef, epochs=config.ppo_epochs))
    space = marl.action_space_sizes(ctx.partition, driver.env.pool)
    return fakes, curve, diags, space


def _heuristic_fakes(config, ctx):
    rng = rng_for(config.seed, f"heuristic:{config.strategy}")
    ds = ctx.dataset
    if config.strategy == "cold":
        source = ctx.cold_pool.items
    elif config.strategy == "pop":
        source = ctx.pop_pool.items
    else:
        source = np.arange(ds.n_items)

    candidates = None
    if config.strategy == "degree":
        candidates = np.flatnonzero(
            ds.social_degrees > config.degree_threshold)
        if candidates.size == 0:
            raise ValueError(
                f"degree threshold {config.degree_threshold} excludes all "
                "users")

    fakes = []
    for _ in range(config.n_fakes):
        items = _distinct_items(rng, source, config.profile_len)
        pairs = sample_cross_pairs(rng, ctx.partition, config.profile_len,
                                   candidates=candidates,
                                   require_cross=config.community_mask)
        fakes.append(FakeUser(items, pairs))
    return fakes


def _no_multiagent_fakes(config, ctx):
    """Ablation: cold items and cross-community users picked uniformly,
    no learned policy."""
    rng = rng_for(config.seed, "heuristic:no-multiagent")
    source = (ctx.cold_pool.items if config.use_cold_pool
              else np.arange(ctx.dataset.n_items))
    fakes = []
    for _ in range(config.n_fakes):
        items = _distinct_items(rng, source, config.profile_len)
        pairs = sample_cross_pairs(rng, ctx.partition, config.profile_len,
                                   require_cross=config.community_mask)
        fakes.append(FakeUser(items, pairs))
    return fakes


def run_attack(config, ctx):
    """Run one attack strategy end to end and evaluate it."""
    if config.strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {config.strategy!r}")
    start = time.perf_counter()
    diags = []
    space = marl.action_space_sizes(ctx.partition, ctx.cold_pool)
    if config.strategy in RL_STRATEGIES and config.multiagent:
        fakes, curve, diags, space = _run_rl(config, ctx)
    elif config.strategy in RL_STRATEGIES:
        fakes = _no_multiagent_fakes(config, ctx)
        curve = [{"injected": len(fakes),
                  "reward": ctx.query_reward(fakes, config.reward_k)}]
    else:
        fakes = _heuristic_fakes(config, ctx)
        curve = ([{"injected": len(fakes),
                   "reward": ctx.query_reward(fakes, config.reward_k)}]
                 if fakes else [])
    attacked = ctx.target.report(fakes, label=config.strategy)
    return AttackResult(
        strategy=config.strategy, seed=config.seed, fakes=fakes,
        reward_curve=curve, clean_report=ctx.clean_report,
        attacked_report=attacked, diagnostics=diags, action_space=space,
        wall_clock=time.perf_counter() - start)


def audit_fakes(fakes, partition, budget, require_cross=True):
    """Constraint audit: budget bounds, distinct items, cross-community
    pairs. Raises on the first violation."""
    if len(fakes) > budget.max_fake_users:
        raise ValueError("fake count exceeds budget")
    assign = partition.assignment
    for idx, fake in enumerate(fakes):
        if len(fake.item_profile) > budget.profile_len:
            raise ValueError(f"fake {idx}: profile exceeds length budget")
        if len(set(fake.item_profile)) != len(fake.item_profile):
            raise ValueError(f"fake {idx}: duplicate items")
        for a, b in fake.social_profile:
            if a == b:
                raise ValueError(f"fake {idx}: degenerate pair")
            if require_cross and assign[a] == assign[b]:
                raise ValueError(f"fake {idx}: intra-community pair")
    return True


def evaluate_attack(clean_report, attacked_report, baseline_report=None):
    """Relative drops vs clean plus improvement vs the best baseline."""
    out = {}
    for key in sorted(clean_report.values):
        clean = clean_report.values[key]
        attacked = attacked_report.values[key]
        entry = {"clean": clean, "attacked": attacked}
        if clean > 0:
            entry["drop_pct"] = 100.0 * (clean - attacked) / clean
        else:
            entry["undefined"] = True
        if baseline_report is not None:
            base = baseline_report.values[key]
            entry["baseline"] = base
            if base > 0:
                entry["improvement_pct"] = 100.0 * (base - attacked) / base
            else:
                entry["undefined_improvement"] = True
        out[key] = entry
    return out


def run_preliminary(study, dataset, split, model, partition, seed,
                    n_fakes=10, profile_len=30, spy_count=50,
                    trend_epochs=200, trend_every=10, trend_lr=0.05):
    """The three exploratory studies behind the attack design."""
    target = EvasionTarget(model, split)
    rng = rng_for(seed, f"preliminary:{study}")
    clean = target.report([], label="clean")

    if study == "filler-popularity":
        shared_pairs = [sample_cross_pairs(rng, partition, profile_len)
                        for _ in range(n_fakes)]
        groups = {}
        for decile in range(10):
            pool = popularity_decile_pool(dataset, decile, split=split)
            drng = rng_for(seed, f"filler:{decile}")
            fakes = [FakeUser(_distinct_items(drng, pool.items, profile_len),
                              shared_pairs[f]) for f in range(n_fakes)]
            rep = target.report(fakes, label=f"decile-{decile}")
            groups[decile] = {
                "ndcg@10": rep.get("ndcg", 10),
                "recall@10": rep.get("recall", 10),
                "ndcg_drop_pct": 100.0 * (clean.get("ndcg", 10)
                                          - rep.get("ndcg", 10))
                / clean.get("ndcg", 10),
            }
        return {"study": study, "clean_ndcg@10": clean.get("ndcg", 10),
                "deciles": groups}

    if study == "connection-type":
        items = [_distinct_items(rng, np.arange(dataset.n_items),
                                 profile_len) for _ in range(n_fakes)]
        n = dataset.n_users
        conditions = {}
        crng = rng_for(seed, "connections")
        for kind in ("random", "intra", "cross"):
            fakes = []
            for f in range(n_fakes):
                pairs = []
                seen = set()
                while len(pairs) < profile_len:
                    if kind == "intra":
                        c = int(crng.integers(partition.n_communities))
                        roster = partition.rosters[c]
                        if len(roster) < 2:
                            continue
                        u1, u2 = (int(roster[crng.integers(len(roster))])
                                  for _ in range(2))
                    else:
                        u1 = int(crng.integers(n))
                        u2 = int(crng.integers(n))
                        if kind == "cross" and partition.assignment[u1] \
                                == partition.assignment[u2]:
                            continue
                    if u1 == u2 or (u1, u2) in seen:
                        continue
                    seen.add((u1, u2))
                    pairs.append((u1, u2))
                fakes.append(FakeUser(items[f], pairs))
            rep = target.report(fakes, label=f"connections-{kind}")
            conditions[kind] = {"ndcg@5": rep.get("ndcg", 5),
                                "ndcg@10": rep.get("ndcg", 10)}
        return {"study": study, "clean_ndcg@10": clean.get("ndcg", 10),
                "conditions": conditions}

    if study == "cold-hit-trend":
        from .recmodels import RecModel
        spies = select_spies(dataset, min(spy_count, dataset.n_users), seed)
        cold = cold_start_pool(dataset, 0.10)
        # retrain a fresh copy of the same variant, sampling the hit ratio
        fresh = RecModel(model.variant, dataset.n_users, dataset.n_items,
                         dim=model.dim, depth=model.depth, reg=model.reg,
                         seed=seed)
        curve = []

        def sample(epoch, m):
            if epoch % trend_every == 0 or epoch == trend_epochs:
                lists = topk_lists(m, spies.users, 20,
                                   split.train_user_items)
                hr10 = cold_hit_reward(
                    [v[:10] for v in lists.values()], cold, 10)
                hr20 = cold_hit_reward(list(lists.values()), cold, 20)
                curve.append({"epoch": epoch, "hr@10": hr10, "hr@20": hr20})

        # epoch 0 snapshot: untrained random embeddings
        fresh.trained = True
        sample(0, fresh)
        fresh.trained = False
        train(fresh, split, dataset.social_edges, epochs=trend_epochs,
              lr=trend_lr, seed=seed,
              epoch_callback=lambda e, m: sample(e + 1, m))
        return {"study": study, "curve": curve}

    raise ValueError(f"unknown study {study!r}")
