"""Downstream task adapters: input construction, heads, fine-tuning and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from mathcurric import metrics
from mathcurric.model import Model, g_loss, pad_batch
from mathcurric.numerics import (
    OptimizerConfig,
    adamw_step,
    compute_gradients,
    cross_entropy_loss,
    init_adamw_state,
    log_softmax,
    lr_schedule,
    softmax,
)
from mathcurric.tokenizer import TokenSequence, decode, encode, join_segments

CLASSIFY, RANK_CROSS, RANK_DUAL, GENERATE = "classify", "rank-cross", "rank-dual", "generate"
UNDERSTANDING_LR = 3e-5
GENERATION_LR = 5e-5
MAX_OUTPUT_TOKENS = 128
RANK_K = 3
CHOICES = "ABCD"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    head: str
    metrics: tuple[str, ...]
    fields: tuple[str, ...]
    num_labels: int | None = None

    @property
    def base_lr(self) -> float:
        return GENERATION_LR if self.head == GENERATE else UNDERSTANDING_LR


TASKS = {
    "KPC": TaskSpec("KPC", CLASSIFY, ("accuracy", "f1_macro"), ("text", "label")),
    "QRC": TaskSpec("QRC", CLASSIFY, ("accuracy", "f1_macro"), ("text_a", "text_b", "label"), 6),
    "QAM": TaskSpec("QAM", CLASSIFY, ("accuracy", "f1_macro"), ("question", "answer", "label"), 2),
    "SQR": TaskSpec("SQR", RANK_CROSS, ("hr@3", "ndcg@3"), ("query", "candidates", "relevant")),
    "QAR": TaskSpec("QAR", RANK_DUAL, ("hr@3", "ndcg@3"), ("query", "candidates", "relevant")),
    "MCQ": TaskSpec("MCQ", GENERATE, ("accuracy",), ("question", "analysis", "answer")),
    "BFQ": TaskSpec("BFQ", GENERATE, ("accuracy",), ("question", "answer")),
    "CAG": TaskSpec("CAG", GENERATE, ("bleu4", "rouge2", "rougeL", "accuracy"), ("question", "analysis", "answer")),
    "BAG": TaskSpec("BAG", GENERATE, ("bleu4", "rouge2", "rougeL", "accuracy"), ("question", "analysis", "answer")),
}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(TASKS)}") from None


@dataclass
class EvalReport:
    task: str
    metrics: dict
    count: int
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "metrics": self.metrics, "count": self.count,
                           "outputs": self.outputs}, ensure_ascii=False, sort_keys=True)


def load_task_data(path, task) -> list[dict]:
    task = get_task(task) if isinstance(task, str) else task
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            missing = [f for f in task.fields if f not in row]
            if missing:
                raise ValueError(f"{path}:{lineno}: {task.name} record lacks {missing}")
            rows.append(row)
    return rows


# -- inputs ------------------------------------------------------------------------

def _words(text) -> list[str]:
    words = text.split() if isinstance(text, str) else list(text)
    if not words:
        raise ValueError("task inputs must be non-empty")
    return words


def _truncate(segments: list[list[str]], budget: int) -> list[list[str]]:
    """Cut segments from the right, each keeping a share proportional to its length."""
    total = sum(len(s) for s in segments)
    if total <= budget:
        return segments
    keep = [len(s) * budget // total for s in segments]
    spare = budget - sum(keep)
    for i, s in enumerate(segments):
        add = min(spare, len(s) - keep[i])
        keep[i] += add
        spare -= add
    return [s[:k] for s, k in zip(segments, keep)]


def _join(vocab, segments, max_len) -> TokenSequence:
    segments = _truncate(segments, max_len - 1 - len(segments))
    return join_segments(*(encode(s, vocab) for s in segments))


def build_task_input(task, vocab, max_len: int = 256, **fields):
    """Model input(s) for one example.

    QRC/SQR: ``[CLS] q1 [SEP] q2 [SEP]``; QAM: ``[CLS] q [SEP] a [SEP]``;
    QAR: the pair ``([CLS] q [SEP], [CLS] a [SEP])``; all others ``[CLS] q [SEP]``.
    """
    task = get_task(task) if isinstance(task, str) else task
    name = task.name
    if name == "QRC":
        return _join(vocab, [_words(fields["text_a"]), _words(fields["text_b"])], max_len)
    if name == "SQR":
        return _join(vocab, [_words(fields["query"]), _words(fields["candidate"])], max_len)
    if name == "QAM":
        return _join(vocab, [_words(fields["question"]), _words(fields["answer"])], max_len)
    if name == "QAR":
        return (_join(vocab, [_words(fields["query"])], max_len),
                _join(vocab, [_words(fields["candidate"])], max_len))
    text = fields.get("text", fields.get("question"))
    return _join(vocab, [_words(text)], max_len)


def build_target(task, vocab, row) -> TokenSequence:
    """``[CLS] output [SEP]`` for generation tasks, capped at the output length limit."""
    task = get_task(task) if isinstance(task, str) else task
    text = row["answer"] if task.name == "BFQ" else row["analysis"]
    return _join(vocab, [_words(text)], MAX_OUTPUT_TOKENS + 1)


# -- model --------------------------------------------------------------------------

class TaskModel(nn.Module):
    """Pre-trained encoder/decoders plus an optional task head."""

    def __init__(self, base: Model, task: TaskSpec, num_labels: int | None = None,
                 multi_label: bool = False, choice_head: bool = False):
        super().__init__()
        if choice_head:
            if task.name != "MCQ":
                raise ValueError("choice_head only applies to MCQ")
            task = replace(task, head=CLASSIFY, num_labels=len(CHOICES))
        if multi_label and task.head != CLASSIFY:
            raise ValueError("multi_label needs a classification task")
        self.base = base
        self.task = task
        self.multi_label = multi_label
        k = base.config.k
        dtype = base.token_embeddings.dtype
        if task.head == CLASSIFY:
            n = num_labels or task.num_labels
            if not n:
                raise ValueError(f"{task.name} needs num_labels")
            self.num_labels = n
            self.head = nn.Linear(k, n).to(dtype)
        elif task.head == RANK_CROSS:
            self.num_labels = None
            self.head = nn.Linear(k, 1).to(dtype)
        else:
            self.num_labels = None
            self.head = None
        if self.head is not None:
            with torch.no_grad():
                self.head.weight.normal_(0.0, 0.02, generator=torch.Generator().manual_seed(0))
                self.head.bias.zero_()

    def pooled(self, inputs) -> torch.Tensor:
        return self.base.pooled_cls(self.base.encode(pad_batch(inputs)))

    def class_logits(self, inputs) -> torch.Tensor:
        return self.head(self.pooled(inputs))

    def pair_scores(self, pairs) -> torch.Tensor:
        return self.head(self.pooled(pairs)).squeeze(-1)

    def dual_scores(self, query, candidates) -> torch.Tensor:
        q = self.pooled([query])
        c = self.pooled(candidates)
        return c @ q[0]


def classify(tm: TaskModel, inputs) -> torch.Tensor:
    """Label distribution per input (independent label probabilities in multi-label mode)."""
    inputs = inputs if isinstance(inputs, list) else [inputs]
    logits = tm.class_logits(inputs)
    return torch.sigmoid(logits) if tm.multi_label else softmax(logits, axis=-1)


def _label(tm: TaskModel, row):
    if tm.task.name == "MCQ":
        return CHOICES.index(str(row["answer"]).strip())
    return row["label"]


def classification_loss(tm: TaskModel, inputs, labels) -> torch.Tensor:
    logits = tm.class_logits(inputs)
    if tm.multi_label:
        target = torch.zeros_like(logits)
        for b, labs in enumerate(labels):
            target[b, [labs] if isinstance(labs, int) else list(labs)] = 1.0
        return nn.functional.binary_cross_entropy_with_logits(logits, target)
    return cross_entropy_loss(logits, torch.tensor([int(x) for x in labels]))


def candidate_scores(tm: TaskModel, vocab, query, candidates, max_len: int = 256) -> torch.Tensor:
    if not candidates:
        raise ValueError("no candidates to rank")
    if tm.task.head == RANK_CROSS:
        pairs = [build_task_input(tm.task, vocab, max_len, query=query, candidate=c) for c in candidates]
        return tm.pair_scores(pairs)
    q, _ = build_task_input(tm.task, vocab, max_len, query=query, candidate=query)
    cands = [build_task_input(tm.task, vocab, max_len, query=query, candidate=c)[1] for c in candidates]
    return tm.dual_scores(q, cands)


def ranking_loss(tm: TaskModel, vocab, query, candidates, relevant, max_len: int = 256) -> torch.Tensor:
    """-log of the softmax mass on relevant candidates."""
    logp = log_softmax(candidate_scores(tm, vocab, query, candidates, max_len))
    rel = torch.tensor(sorted(set(relevant)), dtype=torch.long)
    return -torch.logsumexp(logp[rel], dim=0)


@torch.no_grad()
def rank_candidates(tm: TaskModel, vocab, query, candidates, max_len: int = 256) -> list[tuple[int, float]]:
    """``(candidate index, score)`` sorted by score descending; ties keep input order."""
    scores = candidate_scores(tm, vocab, query, candidates, max_len).tolist()
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return [(i, scores[i]) for i in order]


def generation_loss(tm: TaskModel, inputs, targets) -> torch.Tensor:
    return g_loss(tm.base, inputs, targets)


@dataclass
class GeneratedAnswer:
    text: str
    answer: str


def extract_answer(task, text: str) -> str:
    task = get_task(task) if isinstance(task, str) else task
    if task.name in ("MCQ", "CAG"):
        return metrics.extract_choice(text)
    return text


@torch.no_grad()
def generate_answer(tm: TaskModel, vocab, inputs, task=None, max_out: int = MAX_OUTPUT_TOKENS) -> list[GeneratedAnswer]:
    task = tm.task if task is None else (get_task(task) if isinstance(task, str) else task)
    inputs = inputs if isinstance(inputs, list) else [inputs]
    enc = tm.base.encode(pad_batch(inputs))
    outs = tm.base.generate_greedy(enc, max_out=min(max_out, MAX_OUTPUT_TOKENS))
    answers = []
    for ids in outs:
        text = " ".join(decode(ids, vocab))
        answers.append(GeneratedAnswer(text, extract_answer(task, text)))
    return answers


# -- training / evaluation ----------------------------------------------------------

def example_loss(tm: TaskModel, vocab, rows, max_len: int = 256) -> torch.Tensor:
    task = tm.task
    if task.head == CLASSIFY:
        inputs = [build_task_input(task, vocab, max_len, **r) for r in rows]
        return classification_loss(tm, inputs, [_label(tm, r) for r in rows])
    if task.head in (RANK_CROSS, RANK_DUAL):
        total = None
        for r in rows:
            loss = ranking_loss(tm, vocab, r["query"], r["candidates"], r["relevant"], max_len)
            total = loss if total is None else total + loss
        return total / len(rows)
    inputs = [build_task_input(task, vocab, max_len, **r) for r in rows]
    return generation_loss(tm, inputs, [build_target(task, vocab, r) for r in rows])


def finetune(tm: TaskModel, vocab, rows, steps: int = 100, batch_size: int = 8, lr: float | None = None,
             lr_scale: float = 1.0, warmup_ratio: float = 0.05, weight_decay: float = 0.01,
             seed: int = 42, max_len: int = 256, on_step=None) -> list[float]:
    """AdamW fine-tuning; returns the per-step losses."""
    if not rows:
        raise ValueError("no training examples")
    lr = (tm.task.base_lr if lr is None else lr) * lr_scale
    opt = OptimizerConfig(lr, int(warmup_ratio * steps), steps, weight_decay)
    params = dict(tm.named_parameters())
    state = init_adamw_state(params)
    rng = np.random.default_rng(seed)
    tm.train()
    losses = []
    order = []
    for step in range(1, steps + 1):
        if len(order) < batch_size:
            order.extend(int(i) for i in rng.permutation(len(rows)))
        batch = [rows[i] for i in order[:batch_size]]
        del order[:batch_size]
        loss = example_loss(tm, vocab, batch, max_len)
        adamw_step(params, compute_gradients(loss, params), state, opt, step, lr=lr_schedule(step, opt))
        losses.append(float(loss.detach()))
        if on_step is not None:
            on_step(step, losses[-1])
    return losses


@torch.no_grad()
def evaluate(tm: TaskModel, vocab, rows, max_len: int = 256, keep_outputs: bool = False) -> EvalReport:
    task = tm.task
    tm.eval()
    outputs = []
    values = {}
    if task.head == CLASSIFY:
        inputs = [build_task_input(task, vocab, max_len, **r) for r in rows]
        probs = classify(tm, inputs)
        if tm.multi_label:
            # scored on the single most probable label against the first gold label
            golds = [r["label"] if isinstance(r["label"], int) else r["label"][0] for r in rows]
        else:
            golds = [int(_label(tm, r)) for r in rows]
        preds = probs.argmax(-1).tolist()
        values["accuracy"] = metrics.accuracy(preds, golds)
        values["f1_macro"] = metrics.f1_macro(preds, golds, tm.num_labels)
        outputs = preds
    elif task.head in (RANK_CROSS, RANK_DUAL):
        hr, nd = [], []
        for r in rows:
            ranked = [i for i, _ in rank_candidates(tm, vocab, r["query"], r["candidates"], max_len)]
            rel = set(r["relevant"])
            hr.append(metrics.hit_ratio_at_k(ranked, rel, RANK_K))
            nd.append(metrics.ndcg_at_k([1.0 if i in rel else 0.0 for i in ranked], RANK_K))
            outputs.append(ranked)
        values["hr@3"] = sum(hr) / len(hr)
        values["ndcg@3"] = sum(nd) / len(nd)
    else:
        inputs = [build_task_input(task, vocab, max_len, **r) for r in rows]
        gens = generate_answer(tm, vocab, inputs, task)
        if task.name in ("MCQ", "CAG"):
            correct = [g.answer == str(r["answer"]).strip() for g, r in zip(gens, rows)]
        else:
            correct = [bool(g.text) and metrics.numeric_match(g.text, str(r["answer"])) for g, r in zip(gens, rows)]
        if task.name in ("CAG", "BAG"):
            refs = [r["analysis"] for r in rows]
            values["bleu4"] = sum(metrics.bleu4(g.text, ref) for g, ref in zip(gens, refs)) / len(rows)
            values["rouge2"] = sum(metrics.rouge_n(g.text, ref, 2) for g, ref in zip(gens, refs)) / len(rows)
            values["rougeL"] = sum(metrics.rouge_l(g.text, ref) for g, ref in zip(gens, refs)) / len(rows)
        values["accuracy"] = sum(correct) / len(rows)
        outputs = [{"text": g.text, "answer": g.answer} for g in gens]
    names = ("accuracy",) if task.name == "MCQ" else task.metrics
    report = EvalReport(task.name, {m: values[m] for m in names}, len(rows))
    if keep_outputs:
        report.outputs = outputs
    return report
