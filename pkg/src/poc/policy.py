"""MLP actor-critic, clipped-surrogate PPO, offline training, online execution.

The network is a shared ReLU trunk with a one-logit policy head (Bernoulli
over the re-solve action) and a scalar value head. Everything is plain
numpy with hand-derived gradients; gradient correctness is pinned against
finite differences in the test suite.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .cpd import DetectorConfig, SelectionScheme
from .errors import LayoutMismatch, NonFiniteLoss
from .features import LAYOUT_VERSION, feature_length
from .runtime import EpisodeContext, EpisodeLog, run_episode

SAMPLE = "Sample"
GREEDY = "Greedy"

NORM_CLIP = 5.0  # z-score clamp applied with the fitted normalizer

# Imitation seeding: before PPO the policy can be pushed toward a burst rule
# that re-solves while the selected history segment is still short. The rule
# reads a single state feature (the candidate observation count); every other
# feature is nuisance during seeding and gets noise-augmented away so the
# seeded decision survives instances with unseen coefficient scales.
BURST_FEATURE = 1
# Ladder of candidate rules ordered by re-solve count; each firing set is a
# subset of the previous one, so the seeded re-solve count responds
# monotonically to the re-solving cost no matter which rules get selected.
BURST_RULES = ((8.0, ()), (6.0, ()), (5.0, ()), (5.0, (1, 2, 3)))
PRETRAIN_MARGIN = 3.0      # states just above the burst boundary stay unlabeled
PRETRAIN_NOISE = 4.0       # z-space noise ceiling on nuisance features
PRETRAIN_POS_WEIGHT = 4.0  # a missed re-solve hurts more than a spare one
PRETRAIN_DECAY = 3e-2      # weight decay while imitating shrinks nuisance weights


@dataclass
class PpoConfig:
    gamma: float = 0.9
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    entropy_coef_final: float | None = None  # linear anneal target over training
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    update_every: int = 100     # rollout epochs between PPO updates
    max_epochs: int = 1500
    grad_steps: int = 10        # optimizer steps per PPO update
    resolve_cost: float = 10.0
    action_mode: str = GREEDY   # test-time default; rollouts always sample
    hidden: tuple = (512, 256, 128)
    normalize_advantages: bool = True
    mask_sample_size: bool = False
    normalize_features: bool = True   # per-feature z-score from training data
    reward_scale: float | None = None  # None: fit to the loss scale at train time
    pretrain_steps: int = 0           # imitation steps seeding the policy before PPO
    pretrain_burst_len: float | None = None  # fixed burst depth; None tunes on validation
    min_val_improvement: float = 0.0  # relative margin an update must clear to become the checkpoint

    def validate(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        for name in ("value_coef", "entropy_coef", "learning_rate", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.action_mode not in (SAMPLE, GREEDY):
            raise ValueError(f"unknown action_mode {self.action_mode!r}")
        if self.pretrain_steps < 0:
            raise ValueError("pretrain_steps must be >= 0")
        if self.pretrain_steps and self.mask_sample_size:
            raise ValueError("imitation seeding reads the sample-size features;"
                             " disable masking or set pretrain_steps to 0")
        if self.pretrain_burst_len is not None and self.pretrain_burst_len <= 0:
            raise ValueError("pretrain_burst_len must be positive")
        if not 0 <= self.min_val_improvement < 1:
            raise ValueError("min_val_improvement must lie in [0, 1)")
        return self


class MlpParams:
    """Trunk + policy/value head parameters; policy head starts at exactly 0
    so the initial re-solve probability is 0.5."""

    def __init__(self, in_dim: int, hidden=(512, 256, 128), seed=0,
                 layout_version: int = LAYOUT_VERSION):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.hidden = tuple(hidden)
        self.layout_version = layout_version
        self.values = {}
        prev = in_dim
        for i, w in enumerate(self.hidden):
            self.values[f"W{i}"] = rng.normal(0, np.sqrt(2.0 / prev), size=(prev, w))
            self.values[f"b{i}"] = np.zeros(w)
            prev = w
        self.values["Wp"] = np.zeros((prev, 1))
        self.values["bp"] = np.zeros(1)
        self.values["Wv"] = rng.normal(0, np.sqrt(1.0 / prev), size=(prev, 1))
        self.values["bv"] = np.zeros(1)
        # optional per-feature z-score stats fitted at training time
        self.norm_mu = None
        self.norm_sd = None

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)

    def save(self, path, config: PpoConfig | None = None):
        meta = {
            "in_dim": self.in_dim,
            "hidden": list(self.hidden),
            "layout_version": self.layout_version,
            "config": asdict(config) if config else None,
        }
        extra = {}
        if self.norm_mu is not None:
            extra = {"__norm_mu__": self.norm_mu, "__norm_sd__": self.norm_sd}
        np.savez(path, __meta__=json.dumps(meta), **self.values, **extra)

    @classmethod
    def load(cls, path) -> tuple["MlpParams", dict | None]:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["__meta__"]))
        params = cls.__new__(cls)
        params.in_dim = meta["in_dim"]
        params.hidden = tuple(meta["hidden"])
        params.layout_version = meta["layout_version"]
        skip = {"__meta__", "__norm_mu__", "__norm_sd__"}
        params.values = {k: data[k] for k in data.files if k not in skip}
        params.norm_mu = data["__norm_mu__"] if "__norm_mu__" in data.files else None
        params.norm_sd = data["__norm_sd__"] if "__norm_sd__" in data.files else None
        return params, meta.get("config")


def forward(params: MlpParams, states: np.ndarray, need_cache: bool = False):
    """Batch forward pass: returns (logits, values[, cache])."""
    X = np.atleast_2d(np.asarray(states, dtype=float))
    if X.shape[1] != params.in_dim:
        raise LayoutMismatch(
            f"state dim {X.shape[1]} != network input {params.in_dim}"
        )
    if getattr(params, "norm_mu", None) is not None:
        X = np.clip((X - params.norm_mu) / params.norm_sd,
                    -NORM_CLIP, NORM_CLIP)
    acts = [X]
    h = X
    for i in range(len(params.hidden)):
        z = h @ params.values[f"W{i}"] + params.values[f"b{i}"]
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = (h @ params.values["Wp"] + params.values["bp"])[:, 0]
    values = (h @ params.values["Wv"] + params.values["bv"])[:, 0]
    if need_cache:
        return logits, values, acts
    return logits, values


def _backward(params: MlpParams, acts, dlogit, dvalue):
    """Backprop dloss/dlogit and dloss/dvalue into parameter gradients."""
    grads = {}
    h = acts[-1]
    grads["Wp"] = h.T @ dlogit[:, None]
    grads["bp"] = np.array([dlogit.sum()])
    grads["Wv"] = h.T @ dvalue[:, None]
    grads["bv"] = np.array([dvalue.sum()])
    dh = dlogit[:, None] @ params.values["Wp"].T + dvalue[:, None] @ params.values["Wv"].T
    for i in range(len(params.hidden) - 1, -1, -1):
        dz = dh * (acts[i + 1] > 0)
        grads[f"W{i}"] = acts[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ params.values[f"W{i}"].T
    return grads


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def action_log_prob(logits, actions):
    """log pi(xi | s) for a Bernoulli head with the given logits."""
    return np.where(actions > 0.5, _log_sigmoid(logits), _log_sigmoid(-logits))


def bernoulli_entropy(logits):
    p = _sigmoid(logits)
    return p * np.logaddexp(0.0, -logits) + (1 - p) * np.logaddexp(0.0, logits)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def reward(c_t, x_t, x_t_star, xi_t, C) -> float:
    """Negative loss minus the re-solving charge; <= 0 by optimality of x*."""
    c_t = np.asarray(c_t, dtype=float)
    gap = float(c_t @ np.asarray(x_t_star, dtype=float) - c_t @ np.asarray(x_t, dtype=float))
    return min(gap, 0.0) - C * float(xi_t)


def td_advantage(r_t, gamma, v_next, v_now) -> float:
    """One-step TD residual; terminal steps pass v_next = 0."""
    return r_t + gamma * v_next - v_now


@dataclass
class TransitionBatch:
    """Flat arrays over collected rollout transitions."""

    states: np.ndarray
    actions: np.ndarray
    values: np.ndarray       # V at collection time
    advantages: np.ndarray
    log_probs: np.ndarray    # behavior log pi(xi|s)
    rewards: np.ndarray

    def __len__(self):
        return self.states.shape[0]


def ppo_loss_and_grads(batch: TransitionBatch, params: MlpParams,
                       config: PpoConfig):
    """Clipped-surrogate PPO loss with value and entropy terms, plus the full
    parameter gradient via backprop."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not (np.all(np.isfinite(batch.advantages))
            and np.all(np.isfinite(batch.values))
            and np.all(np.isfinite(batch.log_probs))):
        raise NonFiniteLoss("batch contains non-finite entries")
    eps = config.clip
    A = batch.advantages
    if config.normalize_advantages and len(batch) > 1:
        A = (A - A.mean()) / (A.std() + 1e-8)
    logits, values, acts = forward(params, batch.states, need_cache=True)
    logp = action_log_prob(logits, batch.actions)
    ratio = np.exp(logp - batch.log_probs)
    unclipped = ratio * A
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * A
    surrogate = -np.minimum(unclipped, clipped)
    target = batch.advantages + batch.values  # value target uses raw advantages
    vloss = config.value_coef * (values - target) ** 2
    ent = bernoulli_entropy(logits)
    loss = float(np.mean(surrogate + vloss - config.entropy_coef * ent))
    if not np.isfinite(loss):
        raise NonFiniteLoss("PPO loss is non-finite")

    N = len(batch)
    p = _sigmoid(logits)
    dlogp = batch.actions - p
    inside = (ratio > 1 - eps) & (ratio < 1 + eps)
    active = (unclipped <= clipped) | inside
    dlogit = np.where(active, -A * ratio * dlogp, 0.0)
    dlogit = dlogit + config.entropy_coef * logits * p * (1 - p)  # d(-c2 H)/dz
    dlogit /= N
    dvalue = 2 * config.value_coef * (values - target) / N
    grads = _backward(params, acts, dlogit, dvalue)
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteLoss("PPO gradients are non-finite")
    return loss, grads


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(self, params: MlpParams, lr=1e-4, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}

    def step(self, params: MlpParams, grads):
        self.t += 1
        bc1 = 1 - self.b1 ** self.t
        bc2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            params.values[k] -= self.lr * (update + self.weight_decay * params.values[k])
        return params


def optimizer_step(params: MlpParams, grads, config: PpoConfig,
                   optimizer: AdamW | None = None) -> MlpParams:
    """Single AdamW step; a fresh optimizer state is created when none is given."""
    opt = optimizer or AdamW(params, lr=config.learning_rate,
                             weight_decay=config.weight_decay)
    return opt.step(params, grads)


def _decide_from_logit(logit, mode, rng):
    p = float(_sigmoid(np.asarray(logit)))
    if mode == GREEDY:
        return p > 0.5
    return rng.random() < p


def run_online(dynamic, params: MlpParams, detector: DetectorConfig,
               config: PpoConfig, scheme: SelectionScheme | None = None,
               seed=0, ctx: EpisodeContext | None = None) -> EpisodeLog:
    """Execute the trained policy over one episode."""
    config.validate()
    ctx = ctx or EpisodeContext(dynamic, detector, scheme)
    rng = np.random.default_rng(seed)

    def decide(t, incumbent):
        s = ctx.state(t, incumbent, mask_sample_size=config.mask_sample_size)
        logit, _ = forward(params, s[None, :])
        return _decide_from_logit(logit[0], config.action_mode, rng)

    return run_episode(ctx, decide, config.resolve_cost)


def _reference_stats(contexts, config: PpoConfig):
    """Feature means/stds and a loss scale, measured on two fixed policies
    (never re-solve, re-solve every step) over the training instances."""
    states, losses = [], []
    for ctx in contexts:
        for always in (False, True):
            incumbent = ctx.default_solution()
            for t in range(1, ctx.horizon + 1):
                states.append(ctx.state(t, incumbent,
                                        mask_sample_size=config.mask_sample_size))
                if always and t >= 2:
                    incumbent = ctx.resolve_at(t)
                losses.append(ctx.step_loss(t, incumbent.outcome.x))
    S = np.asarray(states)
    mu = S.mean(axis=0)
    sd = S.std(axis=0)
    sd[sd < 1e-8] = 1.0
    scale = max(float(np.std(losses)), 1.0)
    return mu, sd, scale


def _rollout(ctx: EpisodeContext, params: MlpParams, config: PpoConfig, rng,
             reward_scale: float = 1.0):
    """One sampled episode; returns per-step transition tuples."""
    C = config.resolve_cost
    gamma = config.gamma
    rows = []
    incumbent = ctx.default_solution()
    prev = None  # (state, action, value, logp, reward)
    for t in range(1, ctx.horizon + 1):
        s = ctx.state(t, incumbent, mask_sample_size=config.mask_sample_size)
        logit, value = forward(params, s[None, :])
        logit, value = float(logit[0]), float(value[0])
        xi = 1.0 if _decide_from_logit(logit, SAMPLE, rng) else 0.0
        if xi:
            incumbent = ctx.resolve_at(t)
        loss = ctx.step_loss(t, incumbent.outcome.x)
        r = (-loss - C * xi) / reward_scale
        logp = float(action_log_prob(np.array([logit]), np.array([xi]))[0])
        if prev is not None:
            ps, pa, pv, plp, pr = prev
            rows.append((ps, pa, pv, td_advantage(pr, gamma, value, pv), plp, pr))
        prev = (s, xi, value, logp, r)
    ps, pa, pv, plp, pr = prev
    rows.append((ps, pa, pv, td_advantage(pr, gamma, 0.0, pv), plp, pr))
    return rows


def _batch_from_rows(rows) -> TransitionBatch:
    cols = list(zip(*rows))
    return TransitionBatch(
        states=np.asarray(cols[0]),
        actions=np.asarray(cols[1]),
        values=np.asarray(cols[2]),
        advantages=np.asarray(cols[3]),
        log_probs=np.asarray(cols[4]),
        rewards=np.asarray(cols[5]),
    )


@dataclass
class TrainingLog:
    epochs: int = 0
    updates: list = field(default_factory=list)  # (epoch, loss, val_cl)
    best_val_cl: float = float("inf")
    best_epoch: int = 0
    aborted: bool = False


def _burst_fires(s1, rule) -> bool:
    """Whether a burst rule re-solves at candidate observation count s1."""
    depth, skips = rule
    return s1 <= depth and int(round(s1)) not in skips


def _teacher_rollout(ctx, config: PpoConfig, rule, reward_scale):
    """Run the burst rule over one episode; returns the visited states, the
    rule's actions and the discounted returns of the executed trajectory."""
    C, gamma = config.resolve_cost, config.gamma
    states, labels, rewards = [], [], []
    incumbent = ctx.default_solution()
    for t in range(1, ctx.horizon + 1):
        s = ctx.state(t, incumbent, mask_sample_size=config.mask_sample_size)
        fire = _burst_fires(s[BURST_FEATURE], rule)
        if fire:
            incumbent = ctx.resolve_at(t)
        loss = ctx.step_loss(t, incumbent.outcome.x)
        states.append(s)
        labels.append(1.0 if fire else 0.0)
        rewards.append((-loss - C * fire) / reward_scale)
    returns, g = [], 0.0
    for r in reversed(rewards):
        g = r + gamma * g
        returns.append(g)
    returns.reverse()
    return states, labels, returns


def _select_burst_rule(contexts, config: PpoConfig):
    """Pick the burst rule with the lowest cumulative loss at the configured
    re-solving cost; ties break toward fewer re-solves."""
    best, best_cl, best_n = BURST_RULES[0], float("inf"), float("inf")
    for rule in BURST_RULES:
        cl = n = 0.0
        for ctx in contexts:
            def decide(t, incumbent, _ctx=ctx, _rule=rule):
                s = _ctx.state(t, incumbent,
                               mask_sample_size=config.mask_sample_size)
                return _burst_fires(s[BURST_FEATURE], _rule)
            ep = run_episode(ctx, decide, config.resolve_cost)
            cl += ep.cumulative_loss
            n += ep.n_resolves
        if cl < best_cl - 1e-9 or (abs(cl - best_cl) <= 1e-9 and n < best_n):
            best, best_cl, best_n = rule, cl, n
    return best


def _pretrain(params: MlpParams, train_contexts, val_contexts,
              config: PpoConfig, rng, reward_scale):
    """Seed the policy at a validated burst rule before PPO.

    The first phase imitates the rule with class-balanced batches, heavy
    noise on every feature the rule does not read, and weight decay; the
    noise and decay together force the seeded decision to depend on the
    burst feature alone, so it transfers to instances whose coefficient
    scales were never seen in training. Samples just above the burst
    boundary are dropped so the fitted threshold may settle anywhere on the
    flat stretch above the detection delay instead of a knife edge. The
    second phase fits the value head on the teacher returns while the trunk
    stays untouched by gradients.
    """
    rule = ((float(config.pretrain_burst_len), ())
            if config.pretrain_burst_len is not None
            else _select_burst_rule(val_contexts or train_contexts, config))
    S, A, G = [], [], []
    for ctx in train_contexts:
        s, a, g = _teacher_rollout(ctx, config, rule, reward_scale)
        S.extend(s)
        A.extend(a)
        G.extend(g)
    S, A, G = np.asarray(S), np.asarray(A), np.asarray(G)
    depth = rule[0]
    labeled = ((S[:, BURST_FEATURE] <= depth)
               | (S[:, BURST_FEATURE] >= depth + PRETRAIN_MARGIN))
    pos = np.where(labeled & (A > 0.5))[0]
    neg = np.where(labeled & (A < 0.5))[0]
    if len(pos) == 0 or len(neg) == 0:
        return rule
    sd = (params.norm_sd if params.norm_sd is not None
          else np.ones(S.shape[1]))
    cols = np.array([j for j in range(S.shape[1]) if j != BURST_FEATURE])
    half = 128
    opt = AdamW(params, lr=1e-3, weight_decay=PRETRAIN_DECAY)
    for _ in range(config.pretrain_steps):
        idx = np.concatenate([rng.choice(pos, half), rng.choice(neg, half)])
        X = S[idx].copy()
        sigma = rng.uniform(0.0, PRETRAIN_NOISE, size=(2 * half, 1))
        X[:, cols] += sigma * sd[cols] * rng.standard_normal((2 * half,
                                                              len(cols)))
        logits, _, acts = forward(params, X, need_cache=True)
        p = _sigmoid(logits)
        w = np.where(A[idx] > 0.5, PRETRAIN_POS_WEIGHT, 1.0)
        dlogit = w * (p - A[idx]) / len(idx)
        grads = _backward(params, acts, dlogit, np.zeros(len(idx)))
        opt.step(params, grads)
    opt_v = AdamW(params, lr=1e-3)
    for _ in range(max(1, config.pretrain_steps // 4)):
        idx = rng.integers(len(S), size=2 * half)
        _, values, acts = forward(params, S[idx], need_cache=True)
        dvalue = 2.0 * (values - G[idx]) / len(idx)
        grads = _backward(params, acts, np.zeros(len(idx)), dvalue)
        opt_v.step(params, {k: grads[k] for k in ("Wv", "bv")})
    return rule


def train_offline(train_contexts, val_contexts, config: PpoConfig,
                  seed=0) -> tuple[MlpParams, TrainingLog]:
    """Offline loop: optional imitation seeding, sampled rollouts over
    training instances, a PPO update every `update_every` epochs, and
    checkpoint selection by validation cumulative loss under greedy
    execution. The seeded (pre-PPO) policy competes in the selection, so a
    PPO phase that never beats it on validation leaves it in place."""
    config.validate()
    if not train_contexts:
        raise ValueError("need at least one training instance")
    rng = np.random.default_rng(seed)
    in_dim = feature_length(train_contexts[0].instance.num_vars,
                            train_contexts[0].instance.num_cons)
    params = MlpParams(in_dim, hidden=config.hidden, seed=seed)
    scale = config.reward_scale if config.reward_scale is not None else 1.0
    if config.normalize_features or config.reward_scale is None:
        mu, sd, auto_scale = _reference_stats(train_contexts, config)
        if config.normalize_features:
            params.norm_mu, params.norm_sd = mu, sd
        if config.reward_scale is None:
            scale = auto_scale
    if config.pretrain_steps:
        _pretrain(params, train_contexts, val_contexts, config, rng, scale)
    opt = AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    log = TrainingLog()
    best = params.copy()

    def validation_cl(p):
        total = 0.0
        for ctx in val_contexts:
            def decide(t, incumbent, _p=p, _ctx=ctx):
                s = _ctx.state(t, incumbent,
                               mask_sample_size=config.mask_sample_size)
                logit, _ = forward(_p, s[None, :])
                return float(logit[0]) > 0.0
            total += run_episode(ctx, decide, config.resolve_cost).cumulative_loss
        return total / max(1, len(val_contexts))

    if val_contexts:
        log.best_val_cl = validation_cl(params)
        log.best_epoch = 0

    buffer = []
    for epoch in range(1, config.max_epochs + 1):
        ctx = train_contexts[int(rng.integers(len(train_contexts)))]
        buffer.extend(_rollout(ctx, params, config, rng, reward_scale=scale))
        log.epochs = epoch
        if epoch % config.update_every == 0:
            batch = _batch_from_rows(buffer)
            buffer = []
            update_cfg = config
            if config.entropy_coef_final is not None:
                frac = epoch / config.max_epochs
                coef = (config.entropy_coef
                        + frac * (config.entropy_coef_final
                                  - config.entropy_coef))
                update_cfg = replace(config, entropy_coef=coef)
            try:
                loss = None
                for _ in range(config.grad_steps):
                    loss, grads = ppo_loss_and_grads(batch, params, update_cfg)
                    opt.step(params, grads)
            except NonFiniteLoss:
                log.aborted = True
                return best, log
            if val_contexts:
                val_cl = validation_cl(params)
            else:
                val_cl = float("nan")
            log.updates.append((epoch, loss, val_cl))
            if (val_contexts and val_cl
                    < log.best_val_cl * (1.0 - config.min_val_improvement)):
                log.best_val_cl = val_cl
                log.best_epoch = epoch
                best = params.copy()
    if not val_contexts:
        best = params
    return best, log
