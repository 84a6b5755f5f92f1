"""GAE advantages, masked clipped surrogate, exact KL penalty, critic regression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .policy import LinearCritic, LinearSoftmaxPolicy
from .validation import check_non_negative_real, check_positive_int, check_positive_real, check_unit_interval


@dataclass(frozen=True)
class PPOConfig:
    epsilon: float = 0.2
    gamma: float = 1.0
    lam: float = 1.0
    kl_coef: float = 1e-3
    actor_step_size: float = 1.0
    critic_step_size: float = 0.5
    rollouts_per_step: int = 32
    update_epochs: int = 2
    normalize_advantages: bool = False
    # LLM-scale settings kept for reference; the desk-scale optimizer is full-batch
    micro_batch_size: int = 64

    def __post_init__(self):
        check_unit_interval(self.epsilon, "epsilon", open_left=True, open_right=True)
        check_unit_interval(self.gamma, "gamma")
        check_unit_interval(self.lam, "lam")
        check_non_negative_real(self.kl_coef, "kl_coef")
        check_positive_real(self.actor_step_size, "actor_step_size")
        check_positive_real(self.critic_step_size, "critic_step_size")
        check_positive_int(self.rollouts_per_step, "rollouts_per_step")
        check_positive_int(self.update_epochs, "update_epochs")


@dataclass
class TrajectoryRecord:
    """Macro-token positions of one rollout.

    Environment-injected positions carry ``mask == 0``, ``action == -1`` and
    ``features is None``; they never touch the actor loss.
    """

    features: list  # per position: (|V|, d) array or None
    actions: np.ndarray
    mask: np.ndarray
    old_log_probs: np.ndarray
    critic_features: np.ndarray  # (T, m)
    reward: float
    values: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=int)
        self.mask = np.asarray(self.mask, dtype=int)
        self.old_log_probs = np.asarray(self.old_log_probs, dtype=float)
        self.critic_features = np.asarray(self.critic_features, dtype=float)
        n = len(self.features)
        lengths = {n, len(self.actions), len(self.mask), len(self.old_log_probs),
                   len(self.critic_features)}
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            lengths.add(len(self.values))
        if len(lengths) != 1:
            raise ValueError(f"inconsistent per-position lengths {sorted(lengths)}")
        for i in np.flatnonzero(self.mask):
            if self.features[i] is None or not 0 <= self.actions[i] < len(self.features[i]):
                raise ValueError(f"unmasked position {i} lacks features or a valid action")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class RolloutBatch:
    trajectories: list[TrajectoryRecord]

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_unmasked(self) -> int:
        return int(sum(t.mask.sum() for t in self.trajectories))

    def unmasked(self):
        """Yield (trajectory index, position, record) for every policy position."""
        for k, traj in enumerate(self.trajectories):
            for i in np.flatnonzero(traj.mask):
                yield k, int(i), traj


# --------------------------------------------------------------- advantages


def compute_gae(values: Sequence[float], terminal_reward: float,
                gamma: float = 1.0, lam: float = 1.0) -> np.ndarray:
    """Advantages for one trajectory whose only reward arrives at the end.

    ``delta_i = gamma * V[i+1] - V[i]`` with ``V[T] = terminal_reward`` and
    ``A_i = sum_j (gamma * lam)^(j-i) delta_j``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("compute_gae needs at least one value")
    if gamma == 1.0 and lam == 1.0:
        return terminal_reward - v
    nxt = np.append(v[1:], terminal_reward)
    deltas = gamma * nxt - v
    adv = np.empty_like(v)
    running = 0.0
    for i in range(len(v) - 1, -1, -1):
        running = deltas[i] + gamma * lam * running
        adv[i] = running
    return adv


def batch_advantages(batch: RolloutBatch, gamma: float = 1.0, lam: float = 1.0,
                     normalize: bool = False) -> list[np.ndarray]:
    """Per-trajectory advantage arrays; masked positions are NaN and never read."""
    out = []
    for traj in batch.trajectories:
        if traj.values is None:
            raise ValueError("trajectory values are missing; run the critic first")
        adv = np.full(len(traj), np.nan)
        idx = np.flatnonzero(traj.mask)
        if idx.size:
            adv[idx] = compute_gae(traj.values[idx], traj.reward, gamma, lam)
        out.append(adv)
    if normalize:
        flat = np.concatenate([a[t.mask == 1] for a, t in zip(out, batch.trajectories)])
        if flat.size > 1:
            mu, sd = flat.mean(), flat.std()
            out = [(a - mu) / (sd + 1e-8) for a in out]
    return out


# ---------------------------------------------------------------- objectives


def clipped_surrogate(batch: RolloutBatch, policy: LinearSoftmaxPolicy,
                      advantages: Sequence[np.ndarray], epsilon: float = 0.2):
    """Negative clipped surrogate averaged over unmasked positions, and its gradient.

    Returns ``(loss, grad, stats)``; ``stats`` holds the mean ratio and the
    fraction of positions where clipping removed the gradient.
    """
    if len(advantages) != len(batch):
        raise ValueError("one advantage array per trajectory is required")
    for a, traj in zip(advantages, batch.trajectories):
        if len(a) != len(traj):
            raise ValueError("advantage length does not match trajectory length")
    n = batch.n_unmasked
    grad = np.zeros_like(policy.weights)
    if n == 0:
        return 0.0, grad, {"mean_ratio": 1.0, "clip_fraction": 0.0}
    objective = 0.0
    ratio_sum = 0.0
    clipped = 0
    for k, i, traj in batch.unmasked():
        phi = traj.features[i]
        a = traj.actions[i]
        logp = policy.log_probs_from_features(phi)
        ratio = math.exp(logp[a] - traj.old_log_probs[i])
        adv = float(advantages[k][i])
        unclipped = ratio * adv
        clipped_val = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon) * adv
        ratio_sum += ratio
        if unclipped <= clipped_val:
            objective += unclipped
            score = phi[a] - np.exp(logp) @ phi
            grad += adv * ratio * score
        else:
            objective += clipped_val
            clipped += 1
    return -objective / n, -grad / n, {"mean_ratio": ratio_sum / n, "clip_fraction": clipped / n}


def kl_penalty(policy: LinearSoftmaxPolicy, reference: LinearSoftmaxPolicy,
               batch: RolloutBatch, beta: float):
    """``beta`` times the exact mean categorical KL(policy || reference) and its gradient."""
    n = batch.n_unmasked
    grad = np.zeros_like(policy.weights)
    if n == 0:
        return 0.0, grad, 0.0
    total = 0.0
    for _, i, traj in batch.unmasked():
        phi = traj.features[i]
        lp = policy.log_probs_from_features(phi)
        lr = reference.log_probs_from_features(phi)
        p = np.exp(lp)
        diff = lp - lr
        total += float(p @ diff)
        centered = phi - p @ phi
        grad += (p * diff) @ centered
    kl = total / n
    return beta * kl, beta * grad / n, kl


def critic_loss(values: Sequence[float], terminal_reward: float):
    """Half mean squared error against the terminal reward; gradient w.r.t. the values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("critic_loss needs at least one value")
    err = v - terminal_reward
    return 0.5 * float(np.mean(err ** 2)), err / v.size


def critic_objective(critic: LinearCritic, batch: RolloutBatch):
    """Pooled critic loss over every unmasked position of the batch, gradient w.r.t. weights."""
    n = batch.n_unmasked
    grad = np.zeros_like(critic.weights)
    if n == 0:
        return 0.0, grad
    loss = 0.0
    for _, i, traj in batch.unmasked():
        psi = traj.critic_features[i]
        err = critic.value(psi) - traj.reward
        loss += 0.5 * err * err
        grad += err * critic.grad_value(psi)
    return loss / n, grad / n


def actor_objective(policy: LinearSoftmaxPolicy, reference: LinearSoftmaxPolicy,
                    batch: RolloutBatch, advantages, epsilon: float, beta: float):
    """Total actor loss (clipped surrogate + KL penalty) and its gradient."""
    s_loss, s_grad, stats = clipped_surrogate(batch, policy, advantages, epsilon)
    k_loss, k_grad, kl = kl_penalty(policy, reference, batch, beta)
    stats = dict(stats, kl=kl, surrogate_loss=s_loss)
    return s_loss + k_loss, s_grad + k_grad, stats


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, which: str, diagnostics: dict):
        super().__init__(f"non-finite {which} gradient; update aborted ({diagnostics})")
        self.diagnostics = diagnostics


def fill_values(batch: RolloutBatch, critic: LinearCritic) -> None:
    for traj in batch.trajectories:
        traj.values = traj.critic_features @ critic.weights


def update_step(policy: LinearSoftmaxPolicy, critic: LinearCritic, batch: RolloutBatch,
                config: PPOConfig, reference: LinearSoftmaxPolicy | None = None):
    """One PPO update on a batch collected under ``policy``'s current weights.

    Returns new policy and critic objects (inputs are left untouched) and a
    diagnostics dict. Raises :class:`NonFiniteGradientError` without
    changing anything when a gradient is not finite.
    """
    if reference is None:
        reference = LinearSoftmaxPolicy()
    if any(t.values is None for t in batch.trajectories):
        fill_values(batch, critic)
    advantages = batch_advantages(batch, config.gamma, config.lam, config.normalize_advantages)

    new_policy = LinearSoftmaxPolicy(policy.weights.copy())
    new_critic = critic.copy()
    stats: dict = {}
    actor_loss = c_loss = float("nan")
    for epoch in range(config.update_epochs):
        actor_loss, a_grad, stats = actor_objective(
            new_policy, reference, batch, advantages, config.epsilon, config.kl_coef)
        c_loss, c_grad = critic_objective(new_critic, batch)
        for which, g in (("actor", a_grad), ("critic", c_grad)):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(which, {"epoch": epoch, **stats})
        new_policy.weights = new_policy.weights - config.actor_step_size * a_grad
        new_critic.weights = new_critic.weights - config.critic_step_size * c_grad

    rewards = [t.info.get("reward", {}) for t in batch.trajectories]
    diagnostics = {
        "mean_total_reward": _mean([t.reward for t in batch.trajectories]),
        "mean_answer_f1": _mean([r.get("answer_f1", 0.0) for r in rewards]),
        "mean_intent": _mean([r.get("intent", 0.0) for r in rewards]),
        "mean_ratio": stats.get("mean_ratio", 1.0),
        "clip_fraction": stats.get("clip_fraction", 0.0),
        "kl": stats.get("kl", 0.0),
        "actor_loss": actor_loss,
        "critic_loss": c_loss,
    }
    return new_policy, new_critic, diagnostics


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0
