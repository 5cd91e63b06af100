"""PPO actor-critic for per-tile bitrate and compression selection.

The joint action of a slot is factorized into one categorical head per
(user, visible tile). A head with ``2L`` choices encodes ``c -> (l, eta)``
as ``l = c mod L + 1`` and ``eta = c // L``; a head with ``L`` choices can
only produce ``eta = 0``.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from .media import FovState, SelectionError, TileSelection

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "holostream-ppo"
CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    pass


@dataclass
class PPOConfig:
    hidden: int = 128
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 100
    batch_size: int = 200  # transitions collected before each update
    gamma: float = 0.90
    lam: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    reward_scale: float = 0.1
    normalize_advantages: bool = True
    critic_polyak: Optional[float] = None  # soft target-critic rate, off by default
    # treat the last slot of an episode as a time-limit cut and bootstrap from V
    bootstrap_episode_end: bool = True
    # decay both learning rates linearly towards zero over a training run
    anneal_lr: bool = True

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if not 0 <= self.gamma <= 1 or not 0 <= self.lam <= 1:
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.batch_size < 1 or self.minibatch < 1 or self.epochs < 1:
            raise ValueError("batch_size, minibatch and epochs must be >= 1")
        if self.critic_polyak is not None and not 0 < self.critic_polyak <= 1:
            raise ValueError("critic_polyak must lie in (0, 1]")


def _mlp(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(n_in, hidden), nn.Tanh(),
        nn.Linear(hidden, hidden), nn.Tanh(),
        nn.Linear(hidden, n_out),
    )


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int, n_heads: int, n_choices: int, hidden: int = 128):
        super().__init__()
        self.obs_dim, self.n_heads, self.n_choices, self.hidden = obs_dim, n_heads, n_choices, hidden
        self.actor = _mlp(obs_dim, hidden, n_heads * n_choices)
        self.critic = _mlp(obs_dim, hidden, 1)
        for mod in (*self.actor, *self.critic):
            if isinstance(mod, nn.Linear):
                nn.init.orthogonal_(mod.weight, gain=np.sqrt(2))
                nn.init.zeros_(mod.bias)
        nn.init.orthogonal_(self.actor[-1].weight, gain=0.01)
        nn.init.orthogonal_(self.critic[-1].weight, gain=1.0)

    def arch(self) -> dict:
        return dict(obs_dim=self.obs_dim, n_heads=self.n_heads,
                    n_choices=self.n_choices, hidden=self.hidden)

    def logits(self, obs: torch.Tensor) -> torch.Tensor:
        out = self.actor(obs)
        return out.reshape(*out.shape[:-1], self.n_heads, self.n_choices)

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)


def policy_forward(obs, model: ActorCritic) -> np.ndarray:
    """Per-head action probabilities, shape (n_heads, n_choices)."""
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(obs), dtype=_dtype(model))
        logits = model.logits(x)
        if not torch.all(torch.isfinite(logits)):
            raise NumericalError("policy produced non-finite logits")
        return torch.softmax(logits, dim=-1).cpu().numpy()


def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def sample_action(probs: np.ndarray, rng: np.random.Generator):
    """Draw one choice per head by inverse CDF. Returns (choices, log-prob)."""
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    choices = np.minimum((cdf <= u[:, None]).sum(axis=-1), probs.shape[1] - 1)
    logp = float(np.sum(np.log(probs[np.arange(len(choices)), choices])))
    return choices, logp


def greedy_action(probs: np.ndarray) -> np.ndarray:
    return np.argmax(probs, axis=-1)


def decode_action(choices, fov: FovState, L: int, n_choices: Optional[int] = None) -> TileSelection:
    """Map head choices (user-major, FoV order) to a tile selection."""
    n_choices = 2 * L if n_choices is None else n_choices
    choices = np.asarray(choices, dtype=int).reshape(-1)
    sizes = [len(v) for v in fov.visible]
    if choices.size != sum(sizes):
        raise SelectionError(f"{choices.size} head choices for {sum(sizes)} visible tiles")
    if choices.size and (choices.min() < 0 or choices.max() >= n_choices):
        raise SelectionError(f"head choice outside 0..{n_choices - 1}")
    parts = np.split(choices, np.cumsum(sizes)[:-1])
    return TileSelection.for_fov(fov, [c % L + 1 for c in parts], [c // L for c in parts])


def encode_action(sel: TileSelection, L: int) -> np.ndarray:
    level = np.concatenate([np.asarray(l, dtype=int) for l in sel.level])
    eta = np.concatenate([np.asarray(e, dtype=int) for e in sel.eta])
    return eta * L + level - 1


def compute_returns_advantages(rewards, values, dones, gamma: float, lam: float,
                               last_value: float = 0.0, bootstrap=None):
    """Discounted returns G(t) and GAE advantages D(t) over a transition sequence.

    Episodes end where ``dones`` is true. By default nothing is credited
    after an episode end; ``bootstrap`` gives, per transition, the value
    credited after it when it ends an episode (V of the next state for an
    episode cut by a time limit). ``last_value`` bootstraps a trailing
    unfinished episode.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    boot = np.zeros(len(rewards)) if bootstrap is None else np.asarray(bootstrap, dtype=float)
    n = len(rewards)
    returns = np.zeros(n)
    adv = np.zeros(n)
    next_return, next_value, next_adv = last_value, last_value, 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_return, next_value, next_adv = boot[t], boot[t], 0.0
        next_return = rewards[t] + gamma * next_return
        delta = rewards[t] + gamma * next_value - values[t]
        next_adv = delta + gamma * lam * next_adv
        returns[t], adv[t] = next_return, next_adv
        next_value = values[t]
    return returns, adv


def ppo_clip_loss(ratio, adv, eps: float):
    """Clipped surrogate, written case by case.

    (1-eps)*D where ratio <= 1-eps and D < 0, (1+eps)*D where ratio >= 1+eps
    and D > 0, ratio*D elsewhere. Works elementwise on numpy arrays and
    torch tensors.
    """
    where = torch.where if isinstance(ratio, torch.Tensor) else np.where
    out = ratio * adv
    out = where((ratio <= 1 - eps) & (adv < 0), (1 - eps) * adv, out)
    out = where((ratio >= 1 + eps) & (adv > 0), (1 + eps) * adv, out)
    return out


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    logprob: float
    value: float
    done: bool


@dataclass
class RolloutBuffer:
    capacity: int
    items: list = field(default_factory=list)

    def add(self, tr: Transition) -> None:
        self.items.append(tr)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def clear(self) -> None:
        self.items.clear()

    def arrays(self):
        it = self.items
        return (np.stack([t.obs for t in it]), np.stack([t.action for t in it]),
                np.array([t.reward for t in it]), np.array([t.logprob for t in it]),
                np.array([t.value for t in it]), np.array([t.done for t in it]))


class PPOAgent:
    def __init__(self, obs_dim: int, n_heads: int, n_choices: int,
                 config: Optional[PPOConfig] = None, seed: int = 0):
        self.config = config or PPOConfig()
        torch.manual_seed(seed)
        self.model = ActorCritic(obs_dim, n_heads, n_choices, self.config.hidden)
        self.target_critic = copy.deepcopy(self.model.critic) if self.config.critic_polyak else None
        self.rng = np.random.default_rng(seed)
        self.torch_gen = torch.Generator().manual_seed(seed)
        self._make_optimizers()
        self.updates = 0

    def set_lr_fraction(self, fraction: float) -> None:
        """Scale both optimizers' learning rates to ``fraction`` of the configured values."""
        c = self.config
        for opt, lr in ((self.opt_actor, c.lr_actor), (self.opt_critic, c.lr_critic)):
            for group in opt.param_groups:
                group["lr"] = lr * fraction

    def _make_optimizers(self):
        c = self.config
        self.opt_actor = torch.optim.Adam(self.model.actor.parameters(), lr=c.lr_actor)
        self.opt_critic = torch.optim.Adam(self.model.critic.parameters(), lr=c.lr_critic)

    @property
    def n_choices(self) -> int:
        return self.model.n_choices

    def value(self, obs) -> float:
        critic = self.target_critic or self.model.critic
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(obs), dtype=_dtype(self.model))
            return float(critic(x).squeeze(-1))

    def act(self, obs, greedy: bool = False):
        """Return (choices, logprob, value) for one observation."""
        probs = policy_forward(obs, self.model)
        if greedy:
            choices = greedy_action(probs)
            logp = float(np.sum(np.log(probs[np.arange(len(choices)), choices])))
        else:
            choices, logp = sample_action(probs, self.rng)
        return choices, logp, self.value(obs)

    def log_prob(self, obs: torch.Tensor, actions: torch.Tensor):
        logp_all = torch.log_softmax(self.model.logits(obs), dim=-1)
        logp = logp_all.gather(-1, actions.unsqueeze(-1)).squeeze(-1).sum(-1)
        entropy = -(logp_all.exp() * logp_all).sum(-1).sum(-1)
        return logp, entropy

    def actor_loss(self, obs, actions, old_logp, adv) -> torch.Tensor:
        logp, entropy = self.log_prob(obs, actions)
        ratio = torch.exp(logp - old_logp)
        surrogate = ppo_clip_loss(ratio, adv, self.config.clip)
        return -surrogate.mean() - self.config.entropy_coef * entropy.mean()

    def critic_loss(self, obs, returns) -> torch.Tensor:
        return ((self.model.value(obs) - returns) ** 2).mean()

    def update(self, buf: RolloutBuffer) -> dict:
        """Run the clipped-surrogate epochs on ``buf`` and empty it."""
        c = self.config
        obs, actions, rewards, old_logp, values, dones = buf.arrays()
        boot = None
        if c.bootstrap_episode_end:
            boot = np.array([self.value(t.next_obs) if t.done else 0.0 for t in buf.items])
        returns, adv = compute_returns_advantages(rewards * c.reward_scale, values, dones,
                                                  c.gamma, c.lam, bootstrap=boot)
        if c.normalize_advantages and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        dt = _dtype(self.model)
        obs_t = torch.as_tensor(obs, dtype=dt)
        act_t = torch.as_tensor(actions, dtype=torch.long)
        old_t = torch.as_tensor(old_logp, dtype=dt)
        adv_t = torch.as_tensor(adv, dtype=dt)
        ret_t = torch.as_tensor(returns, dtype=dt)
        n = len(obs)
        stats = dict(actor_loss=0.0, critic_loss=0.0)
        for _ in range(c.epochs):
            perm = torch.randperm(n, generator=self.torch_gen)
            for start in range(0, n, c.minibatch):
                mb = perm[start:start + c.minibatch]
                a_loss = self.actor_loss(obs_t[mb], act_t[mb], old_t[mb], adv_t[mb])
                self._step(self.opt_actor, self.model.actor, a_loss, "actor")
                v_loss = self.critic_loss(obs_t[mb], ret_t[mb])
                self._step(self.opt_critic, self.model.critic, v_loss, "critic")
                stats["actor_loss"], stats["critic_loss"] = a_loss.item(), v_loss.item()
        if self.target_critic is not None:
            with torch.no_grad():
                for tp, p in zip(self.target_critic.parameters(), self.model.critic.parameters()):
                    tp.mul_(1 - c.critic_polyak).add_(c.critic_polyak * p)
        buf.clear()
        self.updates += 1
        return stats

    def _step(self, opt, net: nn.Module, loss: torch.Tensor, name: str) -> None:
        opt.zero_grad()
        loss.backward()
        grads = [p.grad for p in net.parameters() if p.grad is not None]
        if not all(torch.all(torch.isfinite(g)) for g in grads):
            raise NumericalError(f"non-finite {name} gradient at update {self.updates} "
                                 f"(loss={loss.item()})")
        if self.config.max_grad_norm:
            nn.utils.clip_grad_norm_(net.parameters(), self.config.max_grad_norm)
        opt.step()

    def save(self, path) -> None:
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "arch": self.model.arch(),
            "config": asdict(self.config),
            "actor": self.model.actor.state_dict(),
            "critic": self.model.critic.state_dict(),
        }, path)

    @classmethod
    def load(cls, path) -> "PPOAgent":
        ckpt = torch.load(path, weights_only=True)
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {ckpt.get('version')}")
        arch = ckpt["arch"]
        agent = cls(arch["obs_dim"], arch["n_heads"], arch["n_choices"], PPOConfig(**ckpt["config"]))
        agent.model.actor.load_state_dict(ckpt["actor"])
        agent.model.critic.load_state_dict(ckpt["critic"])
        if agent.target_critic is not None:
            agent.target_critic.load_state_dict(ckpt["critic"])
        return agent


def train(env, episodes: int, config: Optional[PPOConfig] = None, seed: int = 0,
          agent: Optional[PPOAgent] = None, first_episode: int = 0):
    """Train on ``env`` for ``episodes`` episodes.

    ``env`` needs ``obs_dim``, ``n_heads``, ``n_choices``, ``reset(episode)``
    and ``step_action(choices) -> (obs, reward, done, info)``. Returns the
    agent and a per-episode log of dicts with keys ``episode``, ``qoe``
    (sum of rewards) and ``feasible_fraction``.
    """
    config = config or PPOConfig()
    if agent is None:
        agent = PPOAgent(env.obs_dim, env.n_heads, env.n_choices, config, seed)
    buf = RolloutBuffer(agent.config.batch_size)
    log = []
    for ep in range(first_episode, first_episode + episodes):
        obs = env.reset(ep)
        total, feasible, steps, done = 0.0, 0, 0, False
        while not done:
            choices, logp, value = agent.act(obs)
            next_obs, reward, done, info = env.step_action(choices)
            buf.add(Transition(obs, choices, reward, next_obs, logp, value, done))
            total += reward
            feasible += int(info.get("feasible", True))
            steps += 1
            obs = next_obs
        if buf.full:
            if agent.config.anneal_lr:
                agent.set_lr_fraction(1.0 - (ep - first_episode) / episodes)
            agent.update(buf)
        log.append(dict(episode=ep, qoe=total, feasible_fraction=feasible / steps))
        logger.debug("episode %d qoe %.3f", ep, total)
    return agent, log
