"""On-policy PPO with separate actor (Gaussian, trainable log-std) and critic networks.

Per epoch: roll out ``sample_step`` transitions with the current actor,
compute discounted returns and advantages, take clipped-surrogate actor
steps until the approximate KL exceeds ``target_kl``, fit the critic, then
copy the new actor into the old one and discard the buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envsim import PowerEnv, decode_action
from .errors import BufferNotFull, ConfigInvalid, EmptySequence, LengthMismatch
from .feature import OBS_DIM
from .nn import Adam, Mlp, clamp_log_std, gaussian_log_prob, gaussian_log_prob_grads, sample_action

ACT_DIM = 2
ADV_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    sample_step: int = 3000
    epochs: int = 200
    gamma: float = 0.99
    lam: float = 0.97
    clip_eps: float = 0.2
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    train_policy_iters: int = 80
    train_value_iters: int = 80
    target_kl: float = 0.01
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0
    use_gae: bool = False
    log_std_init: float = -0.5
    # network arithmetic; returns, advantages and log-probs are always float64
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.gamma <= 1:
            raise ConfigInvalid(f"gamma out of (0,1]: {self.gamma}")
        if not 0 < self.lam <= 1:
            raise ConfigInvalid(f"lam out of (0,1]: {self.lam}")
        if not 0 < self.clip_eps < 1:
            raise ConfigInvalid(f"clip_eps out of (0,1): {self.clip_eps}")
        for name in ("sample_step", "epochs", "train_policy_iters", "train_value_iters"):
            if int(getattr(self, name)) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        for name in ("policy_lr", "value_lr"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"{name} must be > 0")
        if not self.target_kl >= 0:
            raise ConfigInvalid("target_kl must be >= 0")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigInvalid("hidden sizes must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigInvalid("dtype must be float64 or float32")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    mean_reward: float
    critic_loss: float
    actor_loss: float
    mean_log_prob: float
    approx_kl: float
    policy_iters: int

    FIELDS = ("epoch", "mean_reward", "critic_loss", "actor_loss", "mean_log_prob", "approx_kl", "policy_iters")


# ------------------------------------------------------------------ math

def discounted_returns(rewards: Sequence[float], gamma: float, bootstrap_value: float = 0.0, dones=None) -> np.ndarray:
    """Reward-to-go ``R[t] = r[t] + gamma * R[t+1]``, seeded with ``bootstrap_value``.

    ``dones[t]`` cuts the recursion after step t (the next state is terminal).
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise EmptySequence("no rewards")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must be in [0, 1]")
    d = np.zeros(r.size, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    if d.size != r.size:
        raise LengthMismatch(f"{r.size} rewards, {d.size} done flags")
    out = np.empty_like(r)
    nxt = float(bootstrap_value)
    for t in range(r.size - 1, -1, -1):
        nxt = r[t] + (0.0 if d[t] else gamma * nxt)
        out[t] = nxt
    return out


def gae_advantages(rewards, values, gamma: float, lam: float, bootstrap_value: float = 0.0, dones=None) -> np.ndarray:
    """``A[t] = sum_k (gamma * lam)^k * delta[t+k]`` with TD residuals ``delta``."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.size == 0:
        raise EmptySequence("no rewards")
    if v.size != r.size:
        raise LengthMismatch(f"{r.size} rewards, {v.size} values")
    d = np.zeros(r.size, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    next_v = np.append(v[1:], bootstrap_value)
    next_v[d] = 0.0
    delta = r + gamma * next_v - v
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = delta[t] + (0.0 if d[t] else gamma * lam * acc)
        out[t] = acc
    return out


def normalize(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return (a - a.mean()) / (a.std() + ADV_EPS)


def advantages(returns, values) -> np.ndarray:
    """Normalized ``R - V`` (zero mean, unit std)."""
    R = np.asarray(returns, dtype=np.float64)
    V = np.asarray(values, dtype=np.float64)
    if R.shape != V.shape:
        raise LengthMismatch(f"{R.shape} returns vs {V.shape} values")
    if R.size == 0:
        raise EmptySequence("no returns")
    return normalize(R - V)


def critic_loss(raw_advantages) -> float:
    a = np.asarray(raw_advantages, dtype=np.float64)
    if a.size == 0:
        raise EmptySequence("no advantages")
    return float(np.mean(a * a))


def importance_ratio(log_prob_new, log_prob_old):
    r = np.exp(np.asarray(log_prob_new, dtype=np.float64) - np.asarray(log_prob_old, dtype=np.float64))
    return float(r) if np.ndim(r) == 0 else r


def clipped_surrogate(ratio, adv, clip_eps: float) -> np.ndarray:
    """Per-element ``min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def surrogate_grad(ratio, adv, clip_eps: float) -> np.ndarray:
    """d surrogate / d ratio per element: A on the unclipped branch, 0 where clipping binds."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    active = ratio * adv <= clipped * adv
    return np.where(active, adv, 0.0)


def clipped_actor_loss(ratio, adv, clip_eps: float) -> float:
    """Negated mean clipped surrogate (minimize to maximize the surrogate)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if ratio.shape != adv.shape:
        raise LengthMismatch(f"{ratio.shape} ratios vs {adv.shape} advantages")
    if not 0 < clip_eps < 1:
        raise ValueError("clip_eps must be in (0, 1)")
    return -float(np.mean(clipped_surrogate(ratio, adv, clip_eps)))


def approx_kl(log_prob_old, log_prob_new) -> float:
    old = np.asarray(log_prob_old, dtype=np.float64)
    new = np.asarray(log_prob_new, dtype=np.float64)
    if old.shape != new.shape:
        raise LengthMismatch(f"{old.shape} vs {new.shape}")
    return float(np.mean(old - new))


# ---------------------------------------------------------------- agents

class Actor:
    """Mean network plus a state-independent log-std vector."""

    def __init__(self, net: Mlp, log_std: np.ndarray):
        self.net = net
        self.log_std = np.array(log_std, dtype=np.float64)

    @classmethod
    def init(cls, hidden: Sequence[int], rng: np.random.Generator, log_std_init: float = -0.5, dtype="float64") -> Actor:
        net = Mlp.init([OBS_DIM, *hidden, ACT_DIM], rng, out_gain=0.01, dtype=dtype)
        return cls(net, np.full(ACT_DIM, log_std_init))

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params + [self.log_std]

    def copy(self) -> Actor:
        return Actor(self.net.copy(), self.log_std.copy())

    def load_from(self, other: Actor) -> None:
        self.net.load_from(other.net)
        self.log_std[...] = other.log_std

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(self.net.forward(obs, cache=False), dtype=np.float64)

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return gaussian_log_prob(self.mean(obs), self.log_std, actions)

    def greedy(self, tau: float = 0.5):
        """Deterministic policy: threshold the mean action."""

        def policy(obs: np.ndarray):
            return decode_action(self.mean(obs), tau)

        return policy


def new_critic(hidden: Sequence[int], rng: np.random.Generator, dtype="float64") -> Mlp:
    return Mlp.init([OBS_DIM, *hidden, 1], rng, out_gain=1.0, dtype=dtype)


# ---------------------------------------------------------------- buffer

@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    raw_action: np.ndarray
    log_prob_old: float
    reward: float
    value: float
    done: bool


class RolloutBuffer:
    """Fixed-capacity on-policy storage; cleared after every update."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.raw = np.zeros((capacity, act_dim))
        self.log_prob = np.zeros(capacity)
        self.reward = np.zeros(capacity)
        self.value = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.last_value = 0.0
        self.size = 0
        self.clears = 0

    def __len__(self) -> int:
        return self.size

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def add(self, obs, raw, log_prob: float, reward: float, value: float, done: bool) -> None:
        if self.full:
            raise OverflowError("buffer full")
        i = self.size
        self.obs[i] = obs
        self.raw[i] = raw
        self.log_prob[i] = log_prob
        self.reward[i] = reward
        self.value[i] = value
        self.done[i] = done
        self.size += 1

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.obs[i].copy(), self.raw[i].copy(), float(self.log_prob[i]), float(self.reward[i]),
                       float(self.value[i]), bool(self.done[i]))
            for i in range(self.size)
        ]

    def clear(self) -> None:
        self.size = 0
        self.last_value = 0.0
        self.clears += 1


# --------------------------------------------------------------- rollout

def collect_rollout(env: PowerEnv, actor: Actor, critic: Mlp, steps: int, rng: np.random.Generator,
                    buffer: RolloutBuffer | None = None) -> RolloutBuffer:
    """Fill a buffer with ``steps`` transitions from the current actor.

    Episodes that end inside the rollout are reset and stitched; the final
    unfinished segment is bootstrapped with the critic's value of its last
    next-state.
    """
    buf = buffer if buffer is not None else RolloutBuffer(steps)
    if buf.capacity != steps or buf.size:
        raise ValueError("buffer must be empty with capacity == steps")
    tau = env.config.tau
    log_std = actor.log_std.copy()
    std = np.exp(log_std)
    noise = rng.standard_normal((steps, ACT_DIM))
    if env.done:
        env.reset()
    weights, biases = actor.net.weights, actor.net.biases
    last = len(weights) - 1
    for i in range(steps):
        x = env.observation_vector(buf.obs[i])
        h = x
        for j in range(last + 1):
            h = h @ weights[j] + biases[j]
            if j < last:
                h = np.tanh(h)
        a0 = float(h[0]) + std[0] * noise[i, 0]
        a1 = float(h[1]) + std[1] * noise[i, 1]
        buf.raw[i] = a0, a1
        cpu = 1 if a0 > tau else (-1 if a0 < -tau else 0)
        gpu = 1 if a1 > tau else (-1 if a1 < -tau else 0)
        r, done = env.advance(cpu, gpu)
        buf.reward[i] = r
        buf.done[i] = done
        if done:
            env.reset()
    buf.size = steps
    # log-probs from one batched pass so they match what update() recomputes bit for bit
    buf.log_prob[:] = gaussian_log_prob(actor.mean(buf.obs), log_std, buf.raw)
    buf.value[:] = np.asarray(critic.forward(buf.obs, cache=False), dtype=np.float64)[:, 0]
    x = env.observation_vector()
    buf.last_value = 0.0 if buf.done[-1] else float(np.asarray(critic.forward(x, cache=False))[0])
    return buf


# ---------------------------------------------------------------- update

@dataclass
class Optimizers:
    actor: Adam
    critic: Adam


def update(buffer: RolloutBuffer, actor: Actor, actor_old: Actor, critic: Mlp, config: TrainConfig,
           opts: Optimizers, epoch: int = 0) -> EpochMetrics:
    if not buffer.full:
        raise BufferNotFull(f"{buffer.size}/{buffer.capacity} transitions")
    n = buffer.size
    obs, raw = buffer.obs, buffer.raw
    rew, val, done = buffer.reward, buffer.value, buffer.done

    if config.use_gae:
        adv_raw = gae_advantages(rew, val, config.gamma, config.lam, buffer.last_value, done)
        returns = adv_raw + val
    else:
        returns = discounted_returns(rew, config.gamma, buffer.last_value, done)
        adv_raw = returns - val
    c_loss = critic_loss(adv_raw)
    adv = normalize(adv_raw)

    # probabilities of the stored actions under the behaviour (old) actor
    lp_old = actor_old.log_prob(obs, raw)

    eps = config.clip_eps
    iters = 0
    kl = 0.0
    a_loss = 0.0
    for k in range(config.train_policy_iters + 1):
        mu = np.asarray(actor.net.forward(obs), dtype=np.float64)
        lp = gaussian_log_prob(mu, actor.log_std, raw)
        ratio = importance_ratio(lp, lp_old)
        a_loss = clipped_actor_loss(ratio, adv, eps)
        kl = approx_kl(lp_old, lp)
        # A zero budget is spent by any step: the true KL of a changed policy is
        # positive even when this sample estimate comes out <= 0.
        if k == config.train_policy_iters or (k > 0 and (kl > config.target_kl or config.target_kl == 0.0)):
            break
        # dL/dlogp = -(1/n) * dsurr/dratio * ratio
        dlp = -surrogate_grad(ratio, adv, eps) * ratio / n
        g_mu, g_ls = gaussian_log_prob_grads(mu, actor.log_std, raw)
        grads = actor.net.backward(dlp[:, None] * g_mu)
        grads.append((dlp[:, None] * g_ls).sum(axis=0))
        opts.actor.update(actor.params, grads)
        clamp_log_std(actor.log_std)
        actor.net.touch()
        iters += 1

    target = returns
    for _ in range(config.train_value_iters):
        v = np.asarray(critic.forward(obs), dtype=np.float64)[:, 0]
        grad = (2.0 / n) * (v - target)
        opts.critic.update(critic.params, critic.backward(grad[:, None]))
        critic.touch()

    actor_old.load_from(actor)
    metrics = EpochMetrics(
        epoch=epoch,
        mean_reward=float(rew.mean()),
        critic_loss=c_loss,
        actor_loss=a_loss,
        mean_log_prob=float(lp_old.mean()),
        approx_kl=kl,
        policy_iters=iters,
    )
    buffer.clear()
    return metrics


# ----------------------------------------------------------------- train

@dataclass
class TrainResult:
    history: list[EpochMetrics]
    actor: Actor
    actor_old: Actor
    critic: Mlp
    opts: Optimizers
    config: TrainConfig
    buffer_clears: int = 0


def init_agent(config: TrainConfig):
    ss = np.random.SeedSequence(config.seed)
    actor_ss, critic_ss, sample_ss = ss.spawn(3)
    actor = Actor.init(config.hidden, np.random.default_rng(actor_ss), config.log_std_init, config.dtype)
    critic = new_critic(config.hidden, np.random.default_rng(critic_ss), config.dtype)
    opts = Optimizers(Adam(actor.params, config.policy_lr), Adam(critic.params, config.value_lr))
    return actor, actor.copy(), critic, opts, np.random.default_rng(sample_ss)


def train(config: TrainConfig, env_factory: Callable[[], PowerEnv],
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """Run ``config.epochs`` rounds of rollout + update; deterministic given ``config.seed``."""
    env = env_factory()
    actor, actor_old, critic, opts, rng = init_agent(config)
    buf = RolloutBuffer(config.sample_step)
    history = []
    for epoch in range(config.epochs):
        env.reset(config.seed)
        collect_rollout(env, actor, critic, config.sample_step, rng, buf)
        m = update(buf, actor, actor_old, critic, config, opts, epoch)
        if not all(math.isfinite(getattr(m, f)) for f in EpochMetrics.FIELDS):
            raise FloatingPointError(f"non-finite metrics at epoch {epoch}: {m}")
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return TrainResult(history, actor, actor_old, critic, opts, config, buf.clears)
