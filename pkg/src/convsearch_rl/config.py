"""Run configuration from an INI file.

Sections and keys (defaults in parentheses)::

    [data]          train (required), eval, corpus (required), qrels
    [reward]        alpha (0.2), intent_mode (query_f1), hit_n (3)
    [ppo]           epsilon (0.2), gamma (1.0), lam (1.0), kl_coef (0.001),
                    actor_step_size (1.0), critic_step_size (0.5),
                    rollouts_per_step (32), update_epochs (2),
                    normalize_advantages (false)
    [environment]   top_k (3), max_searches (2), max_invalid_actions (3),
                    max_prompt_tokens (3500)
    [run]           total_steps (500), checkpoint_interval (50), seed (0),
                    output_dir (runs/default)
    [llm_scale]     train_batch_size (512), ppo_micro_batch_size (64),
                    actor_learning_rate (1e-6), max_prompt_length (3500),
                    backbone (Qwen2.5-3B-Instruct), retriever (intfloat/e5-base-v2)

The ``[llm_scale]`` keys record the large-model settings for reference and
are validated but not used by the linear policy. Relative paths resolve
against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .environment import EnvConfig
from .ppo import PPOConfig
from .rewards import RewardConfig


class ConfigError(ValueError):
    """A config field is missing or invalid; the message names ``section.key``."""


@dataclass(frozen=True)
class LLMScaleConfig:
    train_batch_size: int = 512
    ppo_micro_batch_size: int = 64
    actor_learning_rate: float = 1e-6
    max_prompt_length: int = 3500
    backbone: str = "Qwen2.5-3B-Instruct"
    retriever: str = "intfloat/e5-base-v2"


@dataclass(frozen=True)
class RunConfig:
    train: Path
    corpus: Path
    eval: Path | None = None
    qrels: Path | None = None
    reward: RewardConfig = RewardConfig()
    ppo: PPOConfig = PPOConfig()
    env: EnvConfig = EnvConfig()
    total_steps: int = 500
    checkpoint_interval: int = 50
    seed: int = 0
    output_dir: Path = Path("runs/default")
    llm_scale: LLMScaleConfig = field(default_factory=LLMScaleConfig)

    def estimator_params(self) -> dict:
        r, p, e = self.reward, self.ppo, self.env
        return dict(
            alpha=r.alpha, intent_mode=r.intent_mode, hit_n=r.n,
            epsilon=p.epsilon, gamma=p.gamma, lam=p.lam, kl_coef=p.kl_coef,
            actor_step_size=p.actor_step_size, critic_step_size=p.critic_step_size,
            rollouts_per_step=p.rollouts_per_step, update_epochs=p.update_epochs,
            normalize_advantages=p.normalize_advantages,
            total_steps=self.total_steps, checkpoint_interval=self.checkpoint_interval,
            top_k=e.top_k, max_searches=e.max_searches,
            max_invalid_actions=e.max_invalid_actions, max_prompt_tokens=e.max_prompt_tokens,
            seed=self.seed, output_dir=str(self.output_dir),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        return {k: str(v) if isinstance(v, Path) else v for k, v in out.items()}


_SECTIONS = {
    "reward": (RewardConfig, {"hit_n": "n"}),
    "ppo": (PPOConfig, {}),
    "environment": (EnvConfig, {}),
    "llm_scale": (LLMScaleConfig, {}),
}
_RUN_KEYS = {"total_steps": int, "checkpoint_interval": int, "seed": int, "output_dir": str}
_DATA_KEYS = ("train", "eval", "corpus", "qrels")


def _convert(parser, section: str, key: str, kind):
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        if kind is int:
            return parser.getint(section, key)
        if kind is float:
            return parser.getfloat(section, key)
        return parser.get(section, key)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def _build(cls, parser, section: str, aliases: dict):
    if not parser.has_section(section):
        return cls()
    by_name = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key in parser.options(section):
        name = aliases.get(key, key)
        if name not in by_name:
            raise ConfigError(f"{section}.{key}: unknown key")
        kind = {"int": int, "float": float, "bool": bool, "str": str}[
            by_name[name].type if isinstance(by_name[name].type, str) else by_name[name].type.__name__]
        kwargs[name] = _convert(parser, section, key, kind)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = set(_SECTIONS) | {"data", "run"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"[{section}]: unknown section")
    base = Path(base_dir)

    paths: dict = {}
    if parser.has_section("data"):
        for key in parser.options("data"):
            if key not in _DATA_KEYS:
                raise ConfigError(f"data.{key}: unknown key")
            value = parser.get("data", key).strip()
            paths[key] = base / value if value else None
    for key in ("train", "corpus"):
        if paths.get(key) is None:
            raise ConfigError(f"data.{key}: required")

    run: dict = {}
    if parser.has_section("run"):
        for key in parser.options("run"):
            if key not in _RUN_KEYS:
                raise ConfigError(f"run.{key}: unknown key")
            run[key] = _convert(parser, "run", key, _RUN_KEYS[key])
    for key in ("total_steps", "checkpoint_interval"):
        if key in run and run[key] < (1 if key == "checkpoint_interval" else 0):
            raise ConfigError(f"run.{key}: must be {'positive' if key == 'checkpoint_interval' else 'non-negative'}")
    steps, interval = run.get("total_steps", 500), run.get("checkpoint_interval", 50)
    if steps % interval:
        raise ConfigError(f"run.checkpoint_interval: {interval} does not divide total_steps {steps}")
    if "output_dir" in run:
        run["output_dir"] = base / run["output_dir"]

    built = {name: _build(cls, parser, name, aliases) for name, (cls, aliases) in _SECTIONS.items()}
    return RunConfig(
        train=paths["train"], corpus=paths["corpus"], eval=paths.get("eval"),
        qrels=paths.get("qrels"), reward=built["reward"], ppo=built["ppo"],
        env=built["environment"], llm_scale=built["llm_scale"], **run,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)


def check_paths(config: RunConfig) -> None:
    for key in _DATA_KEYS:
        value = getattr(config, key)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"data.{key}: file not found: {value}")


DEFAULT_CONFIG = """\
[data]
train = data/train.jsonl
corpus = data/corpus.jsonl
qrels = data/qrels.tsv

[reward]
alpha = 0.2
intent_mode = query_f1
hit_n = 3

[ppo]
epsilon = 0.2
gamma = 1.0
lam = 1.0
kl_coef = 0.001
actor_step_size = 1.0
critic_step_size = 0.5
rollouts_per_step = 32
update_epochs = 2
normalize_advantages = false

[environment]
top_k = 3
max_searches = 2
max_invalid_actions = 3
max_prompt_tokens = 3500

[run]
total_steps = 500
checkpoint_interval = 50
seed = 0
output_dir = runs/default

[llm_scale]
train_batch_size = 512
ppo_micro_batch_size = 64
actor_learning_rate = 1e-6
max_prompt_length = 3500
"""
