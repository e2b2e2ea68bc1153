"""Command-line entry points: pretrain, finetune, eval, experiment, report.

Configuration lives in a JSON tree ({"train": {...}, "model": {...}}) with
``--set section.key=value`` overrides. Exit status is nonzero iff any
requested unit of work failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import data as data_mod
from .corruption import CorruptionStyle
from .experiment import (ExperimentReport, SyntheticStudySpec, emit_report,
                         run_experiment, synthetic_alignment_study)
from .model import ModelConfig, load_checkpoint
from .prompts import ObjectiveKind
from .training import (TrainConfig, derive_seed, desk_config, evaluate_model,
                       paper_mirror_config, run_finetune, run_pretrain)
from .vocab import Vocab

STYLES = {"bart": CorruptionStyle.BART_DENOISE, "t5": CorruptionStyle.T5_SPAN_INFILL}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config_tree(path: str | None, overrides: list[str]) -> dict:
    tree: dict = {}
    if path:
        tree = json.loads(Path(path).read_text(encoding="utf-8"))
    for item in overrides or []:
        if "=" not in item:
            raise SystemExit(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        node = tree
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = _parse_value(raw)
    return tree


def build_train_config(tree: dict, preset: str, seed: int | None,
                       objective: ObjectiveKind | None = None,
                       checkpoint: str | None = None) -> TrainConfig:
    factory = {"desk": desk_config, "paper": paper_mirror_config}[preset]
    model_cfg = ModelConfig(**tree.get("model", {}))
    train_kwargs = dict(tree.get("train", {}))
    if "objective" in train_kwargs:
        train_kwargs["objective"] = ObjectiveKind(train_kwargs["objective"])
    config = factory(model=model_cfg, **train_kwargs)
    if objective is not None:
        config = replace(config, objective=objective)
    if seed is not None:
        config = replace(config, seed=seed)
    if checkpoint is not None:
        config = replace(config, pretrained_checkpoint=checkpoint)
    return config


def _load_dataset(path: str) -> list[data_mod.QAExample]:
    return data_mod.load_mrqa(path)


def _synthetic_spec(tree: dict) -> SyntheticStudySpec:
    kwargs = dict(tree.get("synthetic", {}))
    if "model" in tree:
        kwargs["model"] = ModelConfig(**tree["model"])
    return SyntheticStudySpec(**kwargs)


def cmd_pretrain(args) -> int:
    tree = load_config_tree(args.config, args.set)
    config = build_train_config(tree, args.preset, args.seed)
    if args.synthetic:
        spec = _synthetic_spec(tree)
        corpus, _ = data_mod.gen_synthetic(
            n_examples=spec.n_examples, n_entities=spec.n_entities,
            n_relations=spec.n_relations, context_facts=spec.context_facts,
            seed=derive_seed(config.seed, "data"), n_corpus_texts=spec.n_corpus_texts)
        extra = data_mod.SYNTHETIC_QUESTION_WORDS
    else:
        corpus = Path(args.corpus).read_text(encoding="utf-8").splitlines()
        extra = ()
    ckpt = run_pretrain(corpus, STYLES[args.style], config, args.out,
                        extra_vocab_texts=extra)
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_finetune(args) -> int:
    tree = load_config_tree(args.config, args.set)
    objective = ObjectiveKind(args.objective)
    config = build_train_config(tree, args.preset, args.seed, objective,
                                args.checkpoint)
    data = _load_dataset(args.data)
    split = data_mod.sample_fewshot(data, args.size,
                                    derive_seed(config.seed, "sample"),
                                    source_name=Path(args.data).stem)
    result = run_finetune(split, config, out_dir=args.out)
    scores, _ = evaluate_model(result.model, result.vocab,
                               split.test[: args.test_cap], objective,
                               result.max_input_len)
    print(f"best dev F1 {result.best_dev_f1:.2f} at step {result.best_step}; "
          f"test F1 {scores.f1:.2f}, EM {scores.exact_match:.2f}")
    print(f"checkpoint written to {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    model, tokens = load_checkpoint(args.checkpoint)
    if tokens is None:
        raise SystemExit("checkpoint carries no vocabulary")
    vocab = Vocab(tokens)
    data = _load_dataset(args.data)[: args.test_cap]
    scores, _ = evaluate_model(model, vocab, data, ObjectiveKind(args.objective))
    record = {"n_examples": scores.n_examples, "f1": scores.f1,
              "em": scores.exact_match}
    print(json.dumps(record))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval_metrics.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


def cmd_experiment(args) -> int:
    tree = load_config_tree(args.config, args.set)
    sizes = [int(s) for s in args.sizes.split(",")]
    objectives = [ObjectiveKind(o) for o in args.objectives.split(",")]
    if args.synthetic:
        report, written = synthetic_alignment_study(
            args.out, master_seed=args.seed, sizes=sizes, n_seeds=args.seeds,
            objectives=objectives, spec=_synthetic_spec(tree),
            checkpoint=Path(args.checkpoint) if args.checkpoint else None,
            n_jobs=args.jobs)
    else:
        datasets = {}
        for item in args.data:
            name, _, path = item.partition("=")
            datasets[name] = _load_dataset(path or name)
        config = build_train_config(tree, args.preset, None,
                                    checkpoint=args.checkpoint)
        report = run_experiment(datasets, sizes, objectives, config,
                                n_seeds=args.seeds, master_seed=args.seed,
                                test_cap=args.test_cap, n_jobs=args.jobs)
        written = emit_report(report, args.out)
    print(f"report written to {written['json']}")
    failures = [f for cell in report.cells for f in cell.failures]
    for failure in failures:
        print(f"FAILED {failure}", file=sys.stderr)
    return 1 if failures else 0


def cmd_report(args) -> int:
    report = ExperimentReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    written = emit_report(report, args.out, formats=tuple(args.formats.split(",")))
    for kind, path in written.items():
        print(f"{kind}: {path}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config tree")
    p.add_argument("--set", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--seed", type=int, default=0)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qalign",
        description="Few-shot QA lab: pretrain, fine-tune, evaluate, experiment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train on corruption samples")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", help="text file, one document per line")
    src.add_argument("--synthetic", action="store_true")
    p.add_argument("--style", choices=sorted(STYLES), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="few-shot fine-tune one objective")
    _add_common(p)
    p.add_argument("--data", required=True, help="MRQA-style jsonl file")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--objective", required=True,
                   choices=[o.value for o in ObjectiveKind])
    p.add_argument("--checkpoint")
    p.add_argument("--test-cap", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--objective", required=True,
                   choices=[o.value for o in ObjectiveKind])
    p.add_argument("--test-cap", type=int, default=2000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the sizes x objectives x seeds grid")
    _add_common(p)
    p.add_argument("--data", action="append", default=[],
                   metavar="NAME=PATH", help="named MRQA-style dataset")
    p.add_argument("--synthetic", action="store_true",
                   help="generate the synthetic task and pretrain if needed")
    p.add_argument("--sizes", default="16")
    p.add_argument("--objectives",
                   default="question_then_answer,span_selection")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--checkpoint")
    p.add_argument("--test-cap", type=int, default=2000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="re-emit artifacts from a report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--formats", default="json,table,series")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
