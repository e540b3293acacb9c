"""Synchronous PPO over a per-pixel tanh-squashed Gaussian policy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .scenegen import rng
from .tensorgrad import Adam, Parameter, Tensor, backward, ops

GAMMA = 0.99
LAMBDA = 0.95
CLIP = 0.2
ENTROPY_COEF = 1e-3
VALUE_COEF = 0.5
LOG_STD_INIT = -1.0
LOG_RATIO_LIMIT = 20.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class PolicyError(ValueError):
    pass


def log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    a = np.abs(u)
    return 2.0 * (np.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def tanh_gaussian_logprob(u: np.ndarray, mu: np.ndarray, log_std: float, per_pixel: bool = False) -> np.ndarray:
    """Log-density of ``tanh(u)`` with ``u ~ N(mu, exp(log_std))``, summed per batch item.

    ``per_pixel`` keeps the factors separate, shape ``(B, pixels)``.
    """
    u = np.asarray(u, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    z = (u - mu) * np.exp(-log_std)
    per = (-0.5 * z * z - log_std - _HALF_LOG_2PI - log1m_tanh2(u)).reshape(u.shape[0], -1)
    return per if per_pixel else per.sum(axis=1)


@dataclass
class ActionSample:
    action: np.ndarray  # tanh(u), (B, 1, H, W)
    u: np.ndarray  # pre-squash draw
    logprob: np.ndarray  # (B,)
    mu: np.ndarray
    pixel_logprob: np.ndarray  # (B, H*W)


class Policy:
    """Importance network as the policy mean plus one global learnable log-std."""

    def __init__(self, net: nets.Network, log_std: float = LOG_STD_INIT):
        self.net = net
        self.log_std = Parameter(np.array([log_std]), "policy.log_std", dtype=np.float64)

    @property
    def params(self) -> list[Parameter]:
        return self.net.params + [self.log_std]

    def mean(self, latent, aux) -> Tensor:
        return nets.importance_logits(self.net, _t(latent), _t(aux))


class ParamPolicy:
    """State-free policy whose mean is a parameter array; used for toy problems."""

    def __init__(self, shape: tuple[int, ...], log_std: float = LOG_STD_INIT):
        self.mu = Parameter(np.zeros(shape), "policy.mu", dtype=np.float64)
        self.log_std = Parameter(np.array([log_std]), "policy.log_std", dtype=np.float64)

    @property
    def params(self) -> list[Parameter]:
        return [self.mu, self.log_std]

    def mean(self, latent, aux) -> Tensor:
        n = np.asarray(latent).shape[0]
        if n == 1:
            return ops.reshape(self.mu, (1,) + self.mu.shape)
        return ops.repeat_batch(ops.reshape(self.mu, (1,) + self.mu.shape), n)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def sample_action(policy, latent, aux, seed: int, deterministic: bool = False) -> ActionSample:
    mu = policy.mean(latent, aux).data.astype(np.float64)
    log_std = float(policy.log_std.data[0])
    if deterministic:
        u = mu.copy()
    else:
        u = mu + np.exp(log_std) * rng.normal_field(seed, rng.DOMAIN_POLICY, mu.shape)
    per = tanh_gaussian_logprob(u, mu, log_std, per_pixel=True)
    return ActionSample(np.tanh(u), u, per.sum(axis=1), mu, per)


# ---- advantage estimation


def gae(rewards, values, gamma: float = GAMMA, lam: float = LAMBDA, last_value: float = 0.0):
    """Advantages and returns along axis 0; the episode ends after the last step."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise PolicyError(f"rewards {r.shape} and values {v.shape} differ in length")
    adv = np.zeros_like(r)
    running = np.zeros_like(r[0]) if r.ndim > 1 else 0.0
    nxt = np.full_like(r[0], last_value) if r.ndim > 1 else last_value
    for t in range(r.shape[0] - 1, -1, -1):
        delta = r[t] + gamma * nxt - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
        nxt = v[t]
    return adv, adv + v


class ReturnNorm:
    """Running mean/std of returns; the critic regresses normalized targets.

    Returns here reach ~100 while a freshly initialised critic outputs ~0,
    which Adam-sized steps cannot bridge in a few thousand updates.
    """

    def __init__(self):
        self.count = 0.0
        self.mean = 0.0
        self.m2 = 0.0

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return max(float(np.sqrt(self.m2 / self.count)), 1e-3)

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size == 0:
            return
        n, mean, m2 = float(x.size), float(x.mean()), float(((x - x.mean()) ** 2).sum())
        tot = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / tot
        self.m2 += m2 + delta * delta * self.count * n / tot
        self.count = tot

    def normalize(self, v):
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, v):
        return np.asarray(v, dtype=np.float64) * self.std + self.mean

    def state(self) -> np.ndarray:
        return np.array([self.count, self.mean, self.m2])

    def load_state(self, arr) -> None:
        self.count, self.mean, self.m2 = (float(v) for v in np.asarray(arr, dtype=np.float64))


def normalize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean() if adv.size else adv
    return (adv - adv.mean()) / (adv.std() + eps)


# ---- PPO


@dataclass
class Transition:
    latent: np.ndarray  # (32, H, W) warped latent fed to the policy
    aux: np.ndarray  # (7, H, W)
    u: np.ndarray  # (1, H, W) pre-squash action
    logprob: float
    reward: float
    value: float
    done: bool
    advantage: float = 0.0
    ret: float = 0.0
    pixel_logprob: np.ndarray | None = None  # per-factor terms of ``logprob``

    @property
    def action(self) -> np.ndarray:
        return np.tanh(self.u)


def surrogate_grad(ratio: np.ndarray, adv: np.ndarray, clip: float = CLIP) -> np.ndarray:
    """d/d(ratio) of ``min(ratio * A, clip(ratio, 1-e, 1+e) * A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    clipped = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
    return np.where(clipped, 0.0, adv)


def surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float = CLIP) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)


@dataclass
class PPOStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    first_ratio_max_dev: float = 0.0
    log_std: float = 0.0
    updates: int = 0
    extra: dict = field(default_factory=dict)


def ppo_update(
    policy,
    transitions: list[Transition],
    policy_opt: Adam,
    lr: float,
    epochs: int = 4,
    minibatch: int = 4,
    seed: int = 0,
    critic: nets.Network | None = None,
    critic_opt: Adam | None = None,
    clip: float = CLIP,
    entropy_coef: float = ENTROPY_COEF,
    normalize_adv: bool = True,
    value_norm: ReturnNorm | None = None,
    per_pixel: bool = False,
) -> PPOStats:
    """Clipped-surrogate update of ``policy`` (and the critic, if given).

    ``transitions`` must carry advantages and returns already. With
    ``per_pixel`` every pixel factor gets its own ratio and clip, sharing the
    image advantage; the surrogate is averaged over pixels.
    """
    if not transitions:
        raise PolicyError("ppo_update needs a nonempty batch")
    adv_all = np.array([t.advantage for t in transitions])
    if normalize_adv:
        adv_all = normalize(adv_all)
    ret_all = np.array([t.ret for t in transitions])
    if value_norm is not None:
        ret_all = value_norm.normalize(ret_all)
    if per_pixel:
        if any(t.pixel_logprob is None for t in transitions):
            raise PolicyError("per-pixel ratios need pixel_logprob on every transition")
        old_lp = np.stack([t.pixel_logprob.ravel() for t in transitions])
    else:
        old_lp = np.array([t.logprob for t in transitions])
    n = len(transitions)
    gen = np.random.default_rng(rng.derive_seed(seed, rng.DOMAIN_POLICY))
    stats = PPOStats()
    clipped_count = 0
    seen = 0
    for epoch in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start : start + minibatch]
            lat = np.stack([transitions[k].latent for k in idx])
            aux = np.stack([transitions[k].aux for k in idx])
            u = np.stack([transitions[k].u for k in idx]).astype(np.float64)
            mu_t = policy.mean(lat, aux)
            mu = mu_t.data.astype(np.float64)
            log_std = float(policy.log_std.data[0])
            sigma = np.exp(log_std)
            z = (u - mu) / sigma
            new_lp = tanh_gaussian_logprob(u, mu, log_std, per_pixel=per_pixel)
            log_ratio = np.clip(new_lp - old_lp[idx], -LOG_RATIO_LIMIT, LOG_RATIO_LIMIT)
            ratio = np.exp(log_ratio)
            adv = adv_all[idx]
            if per_pixel:
                adv = np.broadcast_to(adv[:, None], ratio.shape)
            obj = surrogate(ratio, adv, clip)
            if not np.all(np.isfinite(obj)):
                raise FloatingPointError(
                    f"PPO objective is not finite (log_std={log_std:.4g}, max |log ratio|={np.abs(log_ratio).max():.4g})"
                )
            if epoch == 0 and start == 0:
                stats.first_ratio_max_dev = float(np.abs(ratio - 1.0).max())
            dr = surrogate_grad(ratio, adv, clip)
            clipped_count += int(np.sum(dr != adv))
            seen += adv.size
            m = len(idx)
            # loss = -mean(obj) - entropy_coef * mean per-pixel entropy
            coef = -(dr * ratio) / adv.size  # d loss / d logprob per factor
            g_mu = coef.reshape(z.shape if per_pixel else (-1, 1, 1, 1)) * z / sigma
            zz = (z * z - 1.0).reshape(m, -1)
            g_log_std = float(np.sum(coef * (zz if per_pixel else zz.sum(axis=1)))) - entropy_coef
            grads = backward(mu_t, policy.params, seed_grad=g_mu.astype(mu_t.dtype))
            grads["policy.log_std"] = np.array([g_log_std])
            policy_opt.step(grads, lr)
            stats.policy_loss += float(-obj.mean())
            stats.entropy += 0.5 + _HALF_LOG_2PI + log_std
            stats.updates += 1
            if critic is not None:
                v = nets.critic_value(critic, Tensor(lat), Tensor(aux))
                target = Tensor(ret_all[idx].astype(v.dtype))
                vl = ops.mean(ops.square(ops.sub(v, target)))
                cg = backward(ops.mul(vl, VALUE_COEF), critic.params)
                critic_opt.step(cg, lr)
                stats.value_loss += vl.item()
    k = max(stats.updates, 1)
    stats.policy_loss /= k
    stats.value_loss /= k
    stats.entropy /= k
    stats.clip_fraction = clipped_count / max(seen, 1)
    stats.log_std = float(policy.log_std.data[0])
    return stats


def critic_values(critic: nets.Network, latent: np.ndarray, aux: np.ndarray, value_norm: ReturnNorm | None = None) -> np.ndarray:
    v = nets.critic_value(critic, Tensor(latent), Tensor(aux)).data.astype(np.float64)
    return value_norm.denormalize(v) if value_norm is not None else v
