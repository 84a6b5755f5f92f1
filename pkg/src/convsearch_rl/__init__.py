"""Desk-scale PPO training of a search-and-answer policy for conversational QA."""

from .corpus import BM25Retriever, Passage, RetrievalResult, build_index, hit_at, mrr, ndcg_at, recall_at
from .dialogue import Conversation, SyntheticSpec, Turn, generate_synthetic, load_dataset, save_dataset
from .environment import EnvConfig, SearchEnvironment
from .evaluation import EvalReport, evaluate
from .policy import LinearCritic, LinearSoftmaxPolicy, ScriptedPolicy, scripted_policy
from .ppo import PPOConfig, compute_gae, update_step
from .protocol import Answer, Information, Notice, SearchCall, Think, Trajectory, loss_mask, parse, render
from .rewards import RewardConfig, answer_reward, f1, intent_reward, total_reward
from .training import ConversationalSearchPPO, run_episode

__version__ = "0.1.0"

__all__ = [
    "Answer", "BM25Retriever", "Conversation", "ConversationalSearchPPO", "EnvConfig",
    "EvalReport", "Information", "LinearCritic", "LinearSoftmaxPolicy", "Notice", "PPOConfig",
    "Passage", "RetrievalResult", "RewardConfig", "ScriptedPolicy", "SearchCall",
    "SearchEnvironment", "SyntheticSpec", "Think", "Trajectory", "Turn", "answer_reward",
    "build_index", "compute_gae", "evaluate", "f1", "generate_synthetic", "hit_at",
    "intent_reward", "load_dataset", "loss_mask", "mrr", "ndcg_at", "parse", "recall_at",
    "render", "run_episode", "save_dataset", "scripted_policy", "total_reward", "update_step",
]
