"""Command line: gen-data, index, train, eval, report, judge, rewrite."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .clients import ChatClient, judge_records, rewrite_client
from .config import DEFAULT_CONFIG, ConfigError, check_paths, load_config
from .corpus import BM25Retriever, build_index, load_corpus, load_qrels, save_corpus, save_index, save_qrels
from .dialogue import SyntheticSpec, dataset_stats, generate_synthetic, load_dataset, save_dataset
from .evaluation import EvalReport, evaluate, format_report, report
from .training import ConversationalSearchPPO, load_checkpoint

logger = logging.getLogger("convsearch_rl")


class CLIError(RuntimeError):
    pass


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        n_conversations=args.conversations, turns_per_conversation=args.turns,
        entity_pool_size=args.entities, anaphora_rate=args.anaphora_rate,
        distractors_per_conversation=args.distractors, seed=args.seed,
    )
    conversations, corpus, qrels = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(conversations, out / "train.jsonl")
    save_corpus(corpus, out / "corpus.jsonl")
    save_qrels(qrels, out / "qrels.tsv")
    config = out / "config.ini"
    if not config.exists():
        config.write_text(DEFAULT_CONFIG.replace("data/", "").replace(
            "output_dir = runs/default", "output_dir = run"), encoding="utf-8")
    stats = dataset_stats(conversations)
    print(f"wrote {stats['conversations']} conversations, {stats['turns']} turns, "
          f"{len(corpus)} passages to {out}")
    return 0


def cmd_index(args) -> int:
    index = build_index(load_corpus(args.corpus))
    save_index(index, args.out)
    print(f"indexed {index.doc_count} passages into {args.out}")
    return 0


def _config(args):
    config = load_config(args.config)
    overrides = {}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = Path(args.output_dir)
    if getattr(args, "steps", None) is not None:
        overrides["total_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        try:
            overrides["reward"] = replace(config.reward, alpha=args.alpha)
        except ValueError as exc:
            raise ConfigError(f"reward.alpha: {exc}") from None
    config = replace(config, **overrides)
    if config.total_steps % config.checkpoint_interval:
        raise ConfigError(f"run.checkpoint_interval: {config.checkpoint_interval} does not divide "
                          f"total_steps {config.total_steps}")
    check_paths(config)
    return config


def cmd_train(args) -> int:
    config = _config(args)
    conversations = load_dataset(config.train)
    corpus = load_corpus(config.corpus)
    model = ConversationalSearchPPO(**config.estimator_params())

    def progress(step, diag):
        if step % config.checkpoint_interval == 0:
            logger.info("step %d reward %.4f answer_f1 %.4f intent %.4f", step,
                        diag["mean_total_reward"], diag["mean_answer_f1"], diag["mean_intent"])

    model.fit(conversations, corpus, callback=progress)
    out = Path(config.output_dir)
    (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n",
                                     encoding="utf-8")
    print(f"trained {config.total_steps} steps; {len(model.checkpoints_)} checkpoints in "
          f"{out / 'checkpoints'}; selected step {model.selected_step_}")
    return 0


def cmd_eval(args) -> int:
    config = _config(args)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise CLIError(f"checkpoint not found: {checkpoint}")
    try:
        policy, _, payload = load_checkpoint(checkpoint)
    except (ValueError, KeyError) as exc:
        raise CLIError(f"cannot load checkpoint {checkpoint}: {exc}") from None
    data = Path(args.data) if args.data else (config.eval or config.train)
    conversations = load_dataset(data)
    retriever = BM25Retriever().fit(load_corpus(config.corpus))
    qrels = load_qrels(config.qrels) if config.qrels else None
    meta = {"checkpoint": str(checkpoint), "step": payload["step"], "alpha": config.reward.alpha,
            "dataset": str(data)}
    rep = evaluate(policy, conversations, retriever, config.env, config.reward, qrels=qrels, meta=meta)
    Path(args.out).write_text(rep.to_json(), encoding="utf-8")
    agg = rep.aggregates
    print(f"answer_f1 {agg['answer_f1']:.4f} intent_f1 {agg['intent_f1'] or 0.0:.4f} "
          f"turns {agg['turns']} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    reports = {}
    for path in args.reports:
        name = Path(path).stem
        if name in reports:
            name = str(path)
        reports[name] = EvalReport.from_json(Path(path).read_text(encoding="utf-8"))
    tables = report(reports)
    if args.out:
        Path(args.out).write_text(json.dumps(tables, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    sys.stdout.write(format_report(tables))
    return 0


def _client(args) -> ChatClient:
    return ChatClient(args.endpoint, model=args.model, token_env=args.token_env,
                      timeout=args.timeout, max_retries=args.retries)


def cmd_judge(args) -> int:
    rep = EvalReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    client = _client(args)
    summary = judge_records(client, rep.per_turn)
    payload = summary.to_dict()
    payload["exchanges"] = [vars(x) for x in client.log]
    Path(args.out).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    acc = summary.accuracy
    print(f"judged {summary.judged} ({summary.invalid} invalid); accuracy "
          f"{'n/a' if acc is None else f'{acc:.4f}'}")
    return 0


def cmd_rewrite(args) -> int:
    conversations = load_dataset(args.data)
    client = _client(args)
    filled = []
    for conv in conversations:
        turns = []
        for t, turn in enumerate(conv.turns):
            if turn.rewrite is None or args.overwrite:
                turn = replace(turn, rewrite=rewrite_client(client, conv.history(t), turn.question).strip()
                               or None)
            turns.append(turn)
        filled.append(replace(conv, turns=tuple(turns)))
    save_dataset(filled, args.out)
    print(f"wrote {len(filled)} conversations to {args.out}")
    return 0


def _add_client_args(p):
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", default="default")
    p.add_argument("--token-env", default="CONVSEARCH_API_KEY")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--retries", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convsearch-rl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset, corpus and qrels")
    p.add_argument("--out", required=True)
    defaults = SyntheticSpec()
    p.add_argument("--conversations", type=int, default=defaults.n_conversations)
    p.add_argument("--turns", type=int, default=defaults.turns_per_conversation)
    p.add_argument("--entities", type=int, default=defaults.entity_pool_size)
    p.add_argument("--anaphora-rate", type=float, default=defaults.anaphora_rate)
    p.add_argument("--distractors", type=int, default=defaults.distractors_per_conversation)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("index", help="build a BM25 index file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="run PPO training from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset to evaluate (default: config eval, else train)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="comparison tables from evaluation reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("judge", help="LLM-judge accuracy of an evaluation report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    _add_client_args(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("rewrite", help="fill missing rewrites with an external model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    _add_client_args(p)
    p.set_defaults(func=cmd_rewrite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CLIError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
