"""Rollouts, the PPO training loop and the estimator front end."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .corpus import BM25Retriever, RetrievalResult
from .dialogue import Conversation
from .environment import EnvConfig, SearchEnvironment
from .policy import (CRITIC_FEATURES, FEATURE_VERSION, POLICY_FEATURES, LinearCritic,
                     LinearSoftmaxPolicy, critic_features)
from .ppo import PPOConfig, RolloutBatch, TrajectoryRecord, fill_values, update_step
from .protocol import Trajectory
from .rewards import RewardBreakdown, RewardConfig, total_reward
from .validation import check_non_negative_int, check_positive_int

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "convsearch-rl-checkpoint"
CHECKPOINT_VERSION = 1
COLLAPSE_WINDOW = 50
COLLAPSE_RATIO = 0.5


@dataclass
class EpisodeResult:
    conversation_id: str
    turn_index: int
    trajectory: Trajectory
    results: list[RetrievalResult]
    reward: RewardBreakdown
    record: TrajectoryRecord
    invalid_actions: int = 0


def run_episode(env: SearchEnvironment, policy, conversation: Conversation, turn_index: int,
                reward_config: RewardConfig = RewardConfig(), *,
                rng: np.random.Generator | None = None, greedy: bool = False) -> EpisodeResult:
    """Play one turn to termination and score it.

    ``policy`` needs ``act(obs, rng, greedy) -> (emission, decisions)``.
    Every policy decision becomes an unmasked position of the record and
    every environment injection a masked one.
    """
    if rng is None and not greedy:
        raise ValueError("sampling rollouts need an rng")
    obs = env.reset(conversation, turn_index)
    features, actions, mask, logps, psis = [], [], [], [], []
    while not env.terminal:
        emission, decisions = policy.act(obs, rng, greedy)
        for d in decisions:
            features.append(d.features)
            actions.append(d.action_index)
            mask.append(1)
            logps.append(d.log_prob)
            psis.append(d.critic_features)
        step = env.step(emission)
        obs = step.observation
        if step.injected is not None:
            features.append(None)
            actions.append(-1)
            mask.append(0)
            logps.append(0.0)
            psis.append(critic_features(obs))
    turn = conversation.turns[turn_index]
    reward = total_reward(env.trajectory, turn, env.results, reward_config)
    record = TrajectoryRecord(
        features=features,
        actions=actions,
        mask=mask,
        old_log_probs=logps,
        critic_features=np.array(psis).reshape(len(psis), len(CRITIC_FEATURES)),
        reward=reward.total,
        info={"reward": reward.to_dict()},
    )
    return EpisodeResult(conversation.id, turn_index, env.trajectory, list(env.results),
                         reward, record, obs.invalid_actions)


# ------------------------------------------------------------- checkpoints


def checkpoint_dict(policy: LinearSoftmaxPolicy, critic: LinearCritic, step: int) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "feature_version": FEATURE_VERSION,
        "policy_features": list(POLICY_FEATURES),
        "critic_features": list(CRITIC_FEATURES),
        "step": step,
        "policy_weights": policy.get_state(),
        "critic_weights": critic.get_state(),
    }


def dumps_checkpoint(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def load_checkpoint(path) -> tuple[LinearSoftmaxPolicy, LinearCritic, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return checkpoint_from_dict(payload) + (payload,)


def checkpoint_from_dict(payload: dict) -> tuple[LinearSoftmaxPolicy, LinearCritic]:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a checkpoint file")
    if payload.get("feature_version") != FEATURE_VERSION:
        raise ValueError(
            f"checkpoint feature registry {payload.get('feature_version')!r} does not match "
            f"this build ({FEATURE_VERSION!r})"
        )
    return (LinearSoftmaxPolicy(payload["policy_weights"]),
            LinearCritic(payload["critic_weights"]))


def select_checkpoint(step_rewards: Sequence[float], checkpoint_steps: Sequence[int],
                      window: int = COLLAPSE_WINDOW, ratio: float = COLLAPSE_RATIO) -> int | None:
    """Last checkpoint, unless the final window's mean reward fell below
    ``ratio`` times the best window's mean; then the best window's checkpoint.

    ``step_rewards[i]`` is the mean training reward of step ``i + 1``.
    """
    if not checkpoint_steps:
        return None
    last = checkpoint_steps[-1]
    windows = [(end, float(np.mean(step_rewards[end - window:end])))
               for end in checkpoint_steps if end >= window and end <= len(step_rewards)]
    if not windows:
        return last
    best_end, best_mean = max(windows, key=lambda w: (w[1], -w[0]))
    final_mean = windows[-1][1]
    if best_mean > 0 and final_mean < ratio * best_mean:
        logger.warning("training reward collapsed (%.4f < %.2f x %.4f); selecting step %d",
                       final_mean, ratio, best_mean, best_end)
        return best_end
    return last


# -------------------------------------------------------------- estimator


class ConversationalSearchPPO(BaseEstimator):
    """PPO-trained search-and-answer policy over a lexical retriever.

    ``fit(conversations, corpus)`` trains on every turn of ``conversations``;
    ``predict`` answers each turn greedily; ``score`` is mean answer F1.
    """

    def __init__(self, alpha=0.2, intent_mode="query_f1", hit_n=3,
                 epsilon=0.2, gamma=1.0, lam=1.0, kl_coef=1e-3,
                 actor_step_size=1.0, critic_step_size=0.5, rollouts_per_step=32,
                 update_epochs=2, normalize_advantages=False,
                 total_steps=500, checkpoint_interval=50, eval_at_checkpoints=False,
                 top_k=3, max_searches=2, max_invalid_actions=3, max_prompt_tokens=3500,
                 retriever=None, seed=0, output_dir=None):
        self.alpha = alpha
        self.intent_mode = intent_mode
        self.hit_n = hit_n
        self.epsilon = epsilon
        self.gamma = gamma
        self.lam = lam
        self.kl_coef = kl_coef
        self.actor_step_size = actor_step_size
        self.critic_step_size = critic_step_size
        self.rollouts_per_step = rollouts_per_step
        self.update_epochs = update_epochs
        self.normalize_advantages = normalize_advantages
        self.total_steps = total_steps
        self.checkpoint_interval = checkpoint_interval
        self.eval_at_checkpoints = eval_at_checkpoints
        self.top_k = top_k
        self.max_searches = max_searches
        self.max_invalid_actions = max_invalid_actions
        self.max_prompt_tokens = max_prompt_tokens
        self.retriever = retriever
        self.seed = seed
        self.output_dir = output_dir

    # configs are rebuilt from params so set_params stays authoritative
    def reward_config(self) -> RewardConfig:
        return RewardConfig(alpha=self.alpha, intent_mode=self.intent_mode, n=self.hit_n)

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(
            epsilon=self.epsilon, gamma=self.gamma, lam=self.lam, kl_coef=self.kl_coef,
            actor_step_size=self.actor_step_size, critic_step_size=self.critic_step_size,
            rollouts_per_step=self.rollouts_per_step, update_epochs=self.update_epochs,
            normalize_advantages=self.normalize_advantages,
        )

    def env_config(self) -> EnvConfig:
        return EnvConfig(top_k=self.top_k, max_searches=self.max_searches,
                         max_invalid_actions=self.max_invalid_actions,
                         max_prompt_tokens=self.max_prompt_tokens)

    def _resolve_retriever(self, corpus):
        if corpus is not None:
            base = self.retriever if self.retriever is not None else BM25Retriever()
            return clone(base).fit(corpus)
        if self.retriever is None:
            raise ValueError("fit needs a corpus or a fitted retriever")
        return self.retriever

    def fit(self, conversations: Sequence[Conversation], corpus=None,
            callback: Callable[[int, dict], None] | None = None):
        check_non_negative_int(self.total_steps, "total_steps")
        check_positive_int(self.checkpoint_interval, "checkpoint_interval")
        if not conversations:
            raise ValueError("fit needs at least one conversation")
        reward_cfg, ppo_cfg, env_cfg = self.reward_config(), self.ppo_config(), self.env_config()
        self.retriever_ = self._resolve_retriever(corpus)
        env = SearchEnvironment(self.retriever_, env_cfg)
        turns = [(conv, t) for conv in conversations for t in range(len(conv.turns))]
        rng = np.random.default_rng(self.seed)

        policy = LinearSoftmaxPolicy()
        critic = LinearCritic()
        reference = policy.snapshot()
        out = Path(self.output_dir) if self.output_dir is not None else None
        if out is not None:
            (out / "checkpoints").mkdir(parents=True, exist_ok=True)
            diag_fh = open(out / "diagnostics.jsonl", "w", encoding="utf-8")
        else:
            diag_fh = None

        self.diagnostics_: list[dict] = []
        self.checkpoints_: dict[int, dict] = {}
        self.checkpoint_evals_: dict[int, dict] = {}
        try:
            for step in range(1, self.total_steps + 1):
                picks = rng.integers(len(turns), size=ppo_cfg.rollouts_per_step)
                episodes = [run_episode(env, policy, turns[j][0], turns[j][1], reward_cfg, rng=rng)
                            for j in picks]
                batch = RolloutBatch([e.record for e in episodes])
                fill_values(batch, critic)
                policy, critic, diag = update_step(policy, critic, batch, ppo_cfg, reference)
                diag = {
                    "step": step,
                    **diag,
                    "hit_fraction": float(np.mean([e.reward.hit > 0 for e in episodes])),
                    "intent_nonzero_fraction": float(np.mean(
                        [max(e.reward.per_query, default=0.0) > 0 for e in episodes])),
                    "mean_searches": float(np.mean([e.trajectory.search_count for e in episodes])),
                }
                self.diagnostics_.append(diag)
                if diag_fh is not None:
                    diag_fh.write(json.dumps(diag, sort_keys=True) + "\n")
                if step % self.checkpoint_interval == 0:
                    ckpt = checkpoint_dict(policy, critic, step)
                    self.checkpoints_[step] = ckpt
                    if out is not None:
                        (out / "checkpoints" / f"step_{step:05d}.json").write_text(
                            dumps_checkpoint(ckpt), encoding="utf-8")
                    if self.eval_at_checkpoints:
                        from .evaluation import evaluate
                        report = evaluate(policy, conversations, self.retriever_, env_cfg, reward_cfg)
                        self.checkpoint_evals_[step] = report.aggregates
                if callback is not None:
                    callback(step, diag)
        finally:
            if diag_fh is not None:
                diag_fh.close()

        steps = sorted(self.checkpoints_)
        self.selected_step_ = select_checkpoint(
            [d["mean_total_reward"] for d in self.diagnostics_], steps)
        if self.selected_step_ is not None and self.selected_step_ != self.total_steps:
            policy, critic = checkpoint_from_dict(self.checkpoints_[self.selected_step_])
        self.policy_ = policy
        self.critic_ = critic
        if out is not None:
            model = checkpoint_dict(policy, critic, self.selected_step_ or self.total_steps)
            (out / "model.json").write_text(dumps_checkpoint(model), encoding="utf-8")
        return self

    def _episode_iter(self, conversations):
        check_is_fitted(self, "policy_")
        env = SearchEnvironment(self.retriever_, self.env_config())
        for conv in conversations:
            for t in range(len(conv.turns)):
                yield conv, t, run_episode(env, self.policy_, conv, t, self.reward_config(),
                                           greedy=True)

    def predict(self, conversations: Sequence[Conversation]) -> list[list[str]]:
        answers: dict[str, list[str]] = {}
        for conv, _, ep in self._episode_iter(conversations):
            answers.setdefault(conv.id, []).append(ep.trajectory.answer or "")
        return [answers[c.id] for c in conversations]

    def score(self, conversations: Sequence[Conversation], y=None) -> float:
        f1s = [ep.reward.answer_f1 for _, _, ep in self._episode_iter(conversations)]
        return float(np.mean(f1s))

    def evaluate(self, conversations: Sequence[Conversation], qrels=None):
        from .evaluation import evaluate
        check_is_fitted(self, "policy_")
        return evaluate(self.policy_, conversations, self.retriever_, self.env_config(),
                        self.reward_config(), qrels=qrels)
