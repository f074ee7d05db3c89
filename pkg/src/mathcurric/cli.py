"""Command-line entry point: ``mathcurric <preprocess|pretrain|finetune|eval|generate>``.

Settings resolve in order defaults < ``--config`` JSON file < ``JZ_<KEY>``
environment variables < command-line flags. Config files use flat keys, the
same names as the flags with dashes turned into underscores (``batch_size``,
``M1``, ``L_U``, ...).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import torch

from mathcurric import finetune as ft
from mathcurric.checkpoint import load_checkpoint, load_into, save_checkpoint
from mathcurric.corpus import generate_synthetic_corpus, load_corpus, write_corpus
from mathcurric.corruption import mask_example, shuffle_formulas, shuffle_sentences
from mathcurric.curriculum import CurriculumConfig, prepare_corpus, run_curriculum
from mathcurric.model import ModelConfig, build_model
from mathcurric.numerics import NonFiniteError, OptimizerConfig, init_adamw_state
from mathcurric.tokenizer import Vocab, build_vocab

COMMANDS = ("preprocess", "pretrain", "finetune", "eval", "generate")
ENV_PREFIX = "JZ_"


def _flag_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default, help)
SETTINGS = {
    # data and paths
    "corpus": (str, None, "corpus JSON-Lines file"),
    "vocab": (str, None, "vocabulary file, one token per line"),
    "synthetic": (int, None, "generate this many synthetic problems instead of reading --corpus"),
    "max_vocab": (int, 8000, "vocabulary size cap"),
    "emit_corruptions": (_flag_bool, False, "write corruptions.jsonl during preprocess"),
    "stats_out": (str, None, "TrainStats JSON-Lines path (default <out-dir>/stats.jsonl)"),
    "dump_filled": (str, None, "write course-3 fills as JSON-Lines"),
    "checkpoint": (str, None, "checkpoint stem to load"),
    "resume": (str, None, "pre-training checkpoint to resume from"),
    "save_every": (int, 0, "also checkpoint every N steps (0: only at the end)"),
    "stop_after": (int, None, "halt pre-training after this global step (resume later with --resume)"),
    "threads": (int, 1, "torch intra-op threads"),
    # model
    "k": (int, 128, "hidden size"),
    "heads": (int, 4, "attention heads"),
    "ffn_dim": (int, 512, "feed-forward width"),
    "L": (int, 4, "encoder layers"),
    "L_U": (int, 2, "U-decoder layers"),
    "L_G": (int, 2, "G-decoder layers"),
    "max_len": (int, 256, "maximum sequence length"),
    "dropout": (float, 0.0, "dropout rate (0 keeps gradient checks and replays exact)"),
    "float32": (_flag_bool, False, "compute in 32-bit floats instead of 64-bit"),
    # curriculum
    "M1": (int, 1000, "course 1 steps"),
    "M2": (int, 1000, "course 2 steps"),
    "M3": (int, 1000, "course 3 steps"),
    "batch_size": (int, 16, "examples per batch"),
    "gamma": (float, 0.5, "share of MLM (course 1) and USC (course 3) examples"),
    "order": (str, "forward", "course order: forward or reversed"),
    "multitask": (_flag_bool, False, "train all tasks jointly instead of in courses"),
    "bernoulli_masking": (_flag_bool, False, "independent per-token masking"),
    "ssr_with_statement": (_flag_bool, True, "condition recovery on the problem statement"),
    "reset_lr_per_course": (_flag_bool, False, "restart the LR schedule for every course"),
    "self_check": (_flag_bool, False, "add each decoder's loss on its own fills"),
    "g_fill": (str, "forced", "G-decoder fill mode: forced or free"),
    "drop_course": (str, None, "comma-separated course numbers to remove (sets their steps to 0)"),
    # optimizer
    "learning_rate": (float, 3e-5, "pre-training peak learning rate"),
    "warmup_steps": (int, 100, "pre-training warmup steps"),
    "weight_decay": (float, 0.01, "decoupled weight decay"),
    "beta1": (float, 0.9, "Adam beta1"),
    "beta2": (float, 0.999, "Adam beta2"),
    "epsilon": (float, 1e-8, "Adam epsilon"),
    # downstream tasks
    "task": (str, None, "task name (KPC, QRC, QAM, SQR, QAR, MCQ, BFQ, CAG, BAG)"),
    "train": (str, None, "task training JSON-Lines"),
    "test": (str, None, "task evaluation JSON-Lines"),
    "input": (str, None, "question text for generate"),
    "steps": (int, 200, "fine-tuning steps"),
    "finetune_lr": (float, None, "fine-tuning peak LR (default: 3e-5 understanding, 5e-5 generation)"),
    "lr_scale": (float, 1.0, "multiplier on the fine-tuning LR"),
    "warmup_ratio": (float, 0.05, "fine-tuning warmup fraction"),
    "num_labels": (int, None, "classification label count (default: inferred from data)"),
    "multi_label": (_flag_bool, False, "sigmoid multi-label head for classification"),
    "choice_head": (_flag_bool, False, "4-way classification head for MCQ"),
    "max_out": (int, ft.MAX_OUTPUT_TOKENS, "generation length cap"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    seed: int = 42
    out_dir: str = "out"
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        values = self.__dict__.get("values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    def model_config(self, vocab_size: int) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)} - {"vocab_size"}
        return ModelConfig(vocab_size=vocab_size, **{n: self.values[n] for n in names if n in self.values})

    def curriculum_config(self) -> CurriculumConfig:
        steps = {"M1": self.M1, "M2": self.M2, "M3": self.M3}
        if self.drop_course:
            for c in self.drop_course.split(","):
                key = f"M{c.strip()}"
                if key not in steps:
                    raise ValueError(f"unknown course {c!r} in drop_course")
                steps[key] = 0
        total = sum(steps.values())
        opt = OptimizerConfig(
            learning_rate=self.learning_rate,
            warmup_steps=min(self.warmup_steps, total),
            total_steps=total,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
        )
        return CurriculumConfig(
            **steps, batch_size=self.batch_size, gamma=self.gamma, optimizer=opt, seed=self.seed,
            order=self.order, multitask=self.multitask, bernoulli_masking=self.bernoulli_masking,
            ssr_with_statement=self.ssr_with_statement, reset_lr_per_course=self.reset_lr_per_course,
            self_check=self.self_check, g_fill=self.g_fill,
        )

    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mathcurric", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of flat settings")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS)
        for key, (kind, _, text) in SETTINGS.items():
            flag = "--" + key.replace("_", "-")
            if kind is _flag_bool:
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=text)
            else:
                p.add_argument(flag, dest=key, type=kind, default=argparse.SUPPRESS, help=text)
    return parser


def resolve_config(argv, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    merged = {"seed": 42, "out_dir": "out"}
    merged.update({k: default for k, (_, default, _) in SETTINGS.items()})
    kinds = {k: kind for k, (kind, _, _) in SETTINGS.items()} | {"seed": int, "out_dir": str}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(kinds)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update({k: None if v is None else kinds[k](v) for k, v in file_values.items()})
    for key, kind in kinds.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            merged[key] = kind(environ[env_key])
    merged.update(args)
    seed, out_dir = merged.pop("seed"), merged.pop("out_dir")
    return RunConfig(command, seed, out_dir, merged)


# -- helpers ---------------------------------------------------------------------

def _corpus(cfg: RunConfig):
    if cfg.synthetic is not None:
        return generate_synthetic_corpus(cfg.synthetic, cfg.seed)
    if not cfg.corpus:
        raise UsageError("--corpus or --synthetic is required")
    return load_corpus(_existing(cfg.corpus))


def _existing(path) -> str:
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _vocab(cfg: RunConfig, corpus=None) -> Vocab:
    if cfg.vocab:
        return Vocab.load(_existing(cfg.vocab))
    if corpus is None:
        raise UsageError("--vocab is required")
    return build_vocab(corpus, cfg.max_vocab)


def _require(cfg: RunConfig, *keys) -> None:
    for key in keys:
        if getattr(cfg, key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required for {cfg.command}")


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, sort_keys=True))


def _tensors(module, prefix: str) -> dict:
    return {prefix + n: p for n, p in module.named_parameters()}


def _dtype(float32: bool) -> torch.dtype:
    return torch.float32 if float32 else torch.float64


def _load_base(stem):
    config, tensors, meta = load_checkpoint(stem)
    model = build_model(ModelConfig(**config["model"]), dtype=_dtype(config.get("float32", False)))
    if any(n.startswith("task.") for n in tensors):
        return model, config, tensors, meta
    load_into(model, tensors, prefix="model.")
    return model, config, tensors, meta


def _load_task_model(stem):
    model, config, tensors, meta = _load_base(stem)
    if "task" not in config:
        raise UsageError(f"{stem} is not a fine-tuned task checkpoint")
    t = config["task"]
    tm = ft.TaskModel(model, ft.get_task(t["name"]), t["num_labels"], t["multi_label"], t["choice_head"])
    load_into(tm, tensors, prefix="task.")
    return tm, config


# -- commands ----------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> dict:
    corpus = _corpus(cfg)
    vocab = _vocab(cfg, corpus)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, out / "corpus.jsonl")
    vocab.save(out / "vocab.txt")
    prepared = prepare_corpus(corpus, vocab)
    with open(out / "tokens.jsonl", "w", encoding="utf-8") as fh:
        for p in prepared:
            fh.write(json.dumps({"id": p.mt.id, "ids": list(p.full.ids)}) + "\n")
    result = {"records": len(corpus), "vocab_size": len(vocab), "out_dir": str(out)}
    if cfg.emit_corruptions:
        with open(out / "corruptions.jsonl", "w", encoding="utf-8") as fh:
            for i, p in enumerate(prepared):
                examples = [
                    mask_example(p.full, vocab, (cfg.seed, i, 0), "MLM", cfg.bernoulli_masking),
                    mask_example(p.full, vocab, (cfg.seed, i, 1), "DAE", cfg.bernoulli_masking),
                    shuffle_sentences(p.mt, vocab, (cfg.seed, i, 2)),
                    shuffle_formulas(p.mt, vocab, (cfg.seed, i, 3)),
                ]
                for ex in examples:
                    fh.write(json.dumps({"id": p.mt.id, **ex.to_record(vocab)}, ensure_ascii=False) + "\n")
        result["corruptions"] = 4 * len(prepared)
    return result


def _save_pretrain(stem, model, opt_state, cfg: RunConfig, curriculum, step: int) -> None:
    tensors = _tensors(model, "model.")
    for slot in ("m", "v"):
        tensors.update({f"adam.{slot}.{n}": t for n, t in opt_state[slot].items()})
    config = {"model": model.config.to_dict(), "curriculum": curriculum.to_dict(),
              "float32": model.token_embeddings.dtype == torch.float32}
    save_checkpoint(stem, tensors, config, {"step": step, "seed": cfg.seed})


def cmd_pretrain(cfg: RunConfig) -> dict:
    corpus = _corpus(cfg)
    curriculum = cfg.curriculum_config()
    start_step = 0
    if cfg.resume:
        model, config, tensors, meta = _load_base(cfg.resume)
        opt_state = init_adamw_state(dict(model.named_parameters()))
        for slot in ("m", "v"):
            for n in opt_state[slot]:
                opt_state[slot][n].copy_(tensors[f"adam.{slot}.{n}"])
        start_step = int(meta["step"])
        vocab = _vocab(cfg, corpus)
        if len(vocab) != model.config.vocab_size:
            raise ValueError("vocabulary size differs from the resumed checkpoint")
    else:
        vocab = _vocab(cfg, corpus)
        model = build_model(cfg.model_config(len(vocab)), seed=cfg.seed, dtype=_dtype(cfg.float32))
        opt_state = None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    stats_path = Path(cfg.stats_out) if cfg.stats_out else out / "stats.jsonl"
    stem = out / "model"
    filled_fh = open(cfg.dump_filled, "a" if start_step else "w", encoding="utf-8") if cfg.dump_filled else None

    done = {"step": start_step}

    with open(stats_path, "a" if start_step else "w", encoding="utf-8") as stats_fh:
        def on_record(rec, state):
            done["step"] = rec["step"]
            stats_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if cfg.save_every and rec["step"] % cfg.save_every == 0:
                stats_fh.flush()
                _save_pretrain(stem, model, state, cfg, curriculum, rec["step"])

        def on_filled(fills):
            for f in fills:
                filled_fh.write(json.dumps({"step": done["step"] + 1, **f.to_record()}) + "\n")

        try:
            model, stats, opt_state = run_curriculum(
                model, corpus, vocab, curriculum, opt_state=opt_state, start_step=start_step,
                on_record=on_record, on_filled=on_filled if filled_fh else None, stop_step=cfg.stop_after,
            )
        finally:
            if filled_fh:
                filled_fh.close()
    _save_pretrain(stem, model, opt_state, cfg, curriculum, done["step"])
    return {"steps": len(stats.records), "checkpoint": str(stem), "stats": str(stats_path),
            "final_losses": stats.records[-1]["losses"] if stats.records else {}}


def _num_labels(cfg: RunConfig, task, rows):
    if task.head != ft.CLASSIFY and not cfg.choice_head:
        return None
    if cfg.num_labels:
        return cfg.num_labels
    if task.num_labels or cfg.choice_head:
        return None
    labels = [x for r in rows for x in (r["label"] if isinstance(r["label"], list) else [r["label"]])]
    return max(labels) + 1


def cmd_finetune(cfg: RunConfig) -> dict:
    _require(cfg, "task", "train", "checkpoint", "vocab")
    task = ft.get_task(cfg.task)
    rows = ft.load_task_data(_existing(cfg.train), task)
    vocab = _vocab(cfg)
    model, *_ = _load_base(cfg.checkpoint)
    n_labels = _num_labels(cfg, task, rows)
    tm = ft.TaskModel(model, task, n_labels, cfg.multi_label, cfg.choice_head)
    losses = ft.finetune(tm, vocab, rows, steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.finetune_lr,
                         lr_scale=cfg.lr_scale, warmup_ratio=cfg.warmup_ratio, weight_decay=cfg.weight_decay,
                         seed=cfg.seed, max_len=model.config.max_len)
    stem = Path(cfg.out_dir) / f"task-{task.name.lower()}"
    config = {
        "model": model.config.to_dict(),
        "float32": model.token_embeddings.dtype == torch.float32,
        "task": {"name": task.name, "num_labels": tm.num_labels, "multi_label": cfg.multi_label,
                 "choice_head": cfg.choice_head},
    }
    save_checkpoint(stem, _tensors(tm, "task."), config, {"steps": cfg.steps, "seed": cfg.seed})
    return {"task": task.name, "checkpoint": str(stem), "first_loss": losses[0], "final_loss": losses[-1]}


def cmd_eval(cfg: RunConfig) -> dict:
    _require(cfg, "test", "checkpoint", "vocab")
    tm, _ = _load_task_model(cfg.checkpoint)
    if cfg.task and ft.get_task(cfg.task).name != tm.task.name:
        raise UsageError(f"checkpoint holds a {tm.task.name} model, not {cfg.task}")
    rows = ft.load_task_data(_existing(cfg.test), tm.task.name)
    report = ft.evaluate(tm, _vocab(cfg), rows, max_len=tm.base.config.max_len, keep_outputs=True)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return {"task": report.task, "metrics": report.metrics, "count": report.count}


def cmd_generate(cfg: RunConfig) -> dict:
    _require(cfg, "checkpoint", "vocab")
    tm, _ = _load_task_model(cfg.checkpoint)
    if tm.task.head != ft.GENERATE:
        raise UsageError(f"{tm.task.name} is not a generation task")
    vocab = _vocab(cfg)
    if cfg.input:
        questions = [cfg.input]
    elif cfg.test:
        questions = [r["question"] for r in ft.load_task_data(_existing(cfg.test), tm.task.name)]
    else:
        raise UsageError("--input or --test is required for generate")
    inputs = [ft.build_task_input(tm.task, vocab, tm.base.config.max_len, question=q) for q in questions]
    gens = ft.generate_answer(tm, vocab, inputs, max_out=cfg.max_out)
    return {"outputs": [{"question": q, "text": g.text, "answer": g.answer} for q, g in zip(questions, gens)]}


HANDLERS = {
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "generate": cmd_generate,
}


def _fail(kind: str, message: str, command, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "command": command}) + "\n")
    return code


def main(argv=None) -> int:
    command = None
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
        command = cfg.command
        torch.set_num_threads(cfg.threads)
        _emit(HANDLERS[command](cfg))
        return 0
    except UsageError as exc:
        return _fail("usage", str(exc), command, 2)
    except NonFiniteError as exc:
        return _fail("non_finite", str(exc), command, 3)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), command, 1)


if __name__ == "__main__":
    raise SystemExit(main())
