"""Three-course pre-training: masked token prediction, logic recovering, solution checking."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import torch

from mathcurric.checking import g_fill_masked, gsc_loss, self_check_pass, u_fill_masked, usc_loss
from mathcurric.corruption import as_rng, mask_example, shuffle_formulas, shuffle_sentences
from mathcurric.model import Model, g_loss, pad_batch, u_loss
from mathcurric.numerics import (
    NonFiniteError,
    OptimizerConfig,
    adamw_step,
    compute_gradients,
    init_adamw_state,
    lr_schedule,
)
from mathcurric.tokenizer import PAD_ID, encode, join_segments

MLM, DAE, SSR, SFR, USC, GSC = "MLM", "DAE", "SSR", "SFR", "USC", "GSC"
SELF_U, SELF_G = "SELF_U", "SELF_G"
MULTITASK = 0
COURSE_TASKS = {
    1: (MLM, DAE),
    2: (MLM, DAE, SSR, SFR),
    3: (MLM, DAE, USC, GSC),
    MULTITASK: (MLM, DAE, SSR, SFR, USC, GSC),
}
_TASK_CODE = {MLM: 0, DAE: 1, SSR: 2, SFR: 3, USC: 4, GSC: 5}


@dataclass
class CurriculumConfig:
    M1: int = 1000
    M2: int = 1000
    M3: int = 1000
    batch_size: int = 16
    gamma: float = 0.5
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 42
    order: str = "forward"  # or "reversed"
    multitask: bool = False
    bernoulli_masking: bool = False
    ssr_with_statement: bool = True
    reset_lr_per_course: bool = False
    self_check: bool = False
    g_fill: str = "forced"  # or "free"

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if min(self.M1, self.M2, self.M3) < 0:
            raise ValueError("course step counts must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.order not in ("forward", "reversed"):
            raise ValueError(f"unknown course order {self.order!r}")
        if self.g_fill not in ("forced", "free"):
            raise ValueError(f"unknown fill mode {self.g_fill!r}")

    @property
    def total_steps(self) -> int:
        return self.M1 + self.M2 + self.M3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainStats:
    records: list = field(default_factory=list)

    def add(self, record: dict) -> None:
        self.records.append(record)

    def running_means(self) -> dict:
        sums, counts = {}, {}
        for r in self.records:
            for task, v in r["losses"].items():
                sums[task] = sums.get(task, 0.0) + v
                counts[task] = counts.get(task, 0) + 1
        return {t: sums[t] / counts[t] for t in sums}

    def trace(self) -> list:
        return [(r["course"], tuple(r["losses"])) for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass(frozen=True)
class PreparedText:
    """A record encoded once: ``full`` is ``[CLS] statement [SEP] solution [SEP]``."""

    mt: object
    full: object
    solution: object


def prepare_corpus(corpus, vocab) -> list[PreparedText]:
    out = []
    for mt in corpus:
        stmt, sol = encode(mt.statement, vocab), encode(mt.solution, vocab)
        out.append(PreparedText(mt, join_segments(stmt, sol), join_segments(sol)))
    return out


# -- task losses ----------------------------------------------------------------

def _listify(examples):
    return list(examples) if isinstance(examples, (list, tuple)) else [examples]


def _zero(model: Model) -> torch.Tensor:
    return torch.zeros((), dtype=model.token_embeddings.dtype)


def mlm_loss(model: Model, examples) -> torch.Tensor:
    """U-decoder cross entropy at masked positions only."""
    exs = [ex for ex in _listify(examples) if ex.masked_positions]
    if not exs:
        return _zero(model)
    return u_loss(model, [ex.input_ids for ex in exs], [ex.target_ids for ex in exs],
                  [ex.masked_positions for ex in exs])


def dae_loss(model: Model, examples) -> torch.Tensor:
    """G-decoder reconstructs the whole original sequence from the masked one."""
    exs = _listify(examples)
    return g_loss(model, [ex.input_ids for ex in exs], [ex.target_ids for ex in exs])


def recovery_source(ex, with_statement: bool = True):
    if with_statement and ex.context is not None:
        return join_segments(ex.context, ex.input_ids)
    return join_segments(ex.input_ids)


def _recovery_loss(model, examples, kind, with_statement):
    exs = _listify(examples)
    if any(ex.kind != kind for ex in exs):
        raise ValueError(f"expected {kind} examples")
    return g_loss(model, [recovery_source(ex, with_statement) for ex in exs],
                  [join_segments(ex.target_ids) for ex in exs])


def ssr_loss(model: Model, examples, with_statement: bool = True) -> torch.Tensor:
    return _recovery_loss(model, examples, "SSR", with_statement)


def sfr_loss(model: Model, examples, with_statement: bool = True) -> torch.Tensor:
    return _recovery_loss(model, examples, "SFR", with_statement)


# -- batching -------------------------------------------------------------------

def split_counts(batch_size: int, gamma: float) -> tuple[int, int]:
    """Examples routed to the U-objective and to the G-objective."""
    n_u = int(math.floor(gamma * batch_size + 0.5))
    return n_u, batch_size - n_u


def course_plan(config: CurriculumConfig) -> list[tuple[int, int]]:
    if config.multitask:
        return [(MULTITASK, config.total_steps)]
    plan = [(1, config.M1), (2, config.M2), (3, config.M3)]
    return plan[::-1] if config.order == "reversed" else plan


def make_course_batches(prepared, course: int, step: int, config: CurriculumConfig, vocab) -> list:
    """Sample one batch and route its examples to the course's tasks.

    MLM/DAE (and USC/GSC) split the batch gamma : 1-gamma; SSR/SFR split it in halves.
    """
    if not prepared:
        raise ValueError("cannot build batches from an empty corpus")
    if course not in COURSE_TASKS:
        raise ValueError(f"unknown course {course!r}")
    seed = config.seed
    rng = as_rng((seed, course, step))
    B = config.batch_size
    n = len(prepared)
    idx = rng.permutation(n)[:B] if B <= n else rng.integers(0, n, size=B)
    chosen = [prepared[int(i)] for i in idx]
    n_u, _ = split_counts(B, config.gamma)
    half = B // 2

    def ex_seed(task, j):
        return (seed, course, step, _TASK_CODE[task], j)

    def masked(task, texts, attr, kind):
        return [mask_example(getattr(p, attr), vocab, ex_seed(task, j), kind=kind,
                             bernoulli=config.bernoulli_masking) for j, p in enumerate(texts)]

    tasks = COURSE_TASKS[course]
    batches = []
    if MLM in tasks:
        batches.append((MLM, masked(MLM, chosen[:n_u], "full", "MLM")))
        batches.append((DAE, masked(DAE, chosen[n_u:], "full", "DAE")))
    if SSR in tasks:
        batches.append((SSR, [shuffle_sentences(p.mt, vocab, ex_seed(SSR, j)) for j, p in enumerate(chosen[:half])]))
        batches.append((SFR, [shuffle_formulas(p.mt, vocab, ex_seed(SFR, j)) for j, p in enumerate(chosen[half:])]))
    if USC in tasks:
        # USC corrects G-decoder fills, GSC corrects U-decoder fills
        batches.append((USC, masked(USC, chosen[:n_u], "solution", "MLM")))
        batches.append((GSC, masked(GSC, chosen[n_u:], "solution", "MLM")))
    return batches


# -- training -------------------------------------------------------------------

def task_losses(model: Model, batches, config: CurriculumConfig, on_filled=None) -> dict:
    """Loss tensor per non-empty task, in batch order."""
    losses = {}
    for task, exs in batches:
        if not exs:
            continue
        if task == MLM:
            losses[task] = mlm_loss(model, exs)
        elif task == DAE:
            losses[task] = dae_loss(model, exs)
        elif task == SSR:
            losses[task] = ssr_loss(model, exs, config.ssr_with_statement)
        elif task == SFR:
            losses[task] = sfr_loss(model, exs, config.ssr_with_statement)
        elif task in (USC, GSC):
            other = g_fill_masked(model, exs, config.g_fill) if task == USC else u_fill_masked(model, exs)
            if on_filled is not None:
                on_filled(other)
            losses[task] = usc_loss(model, other) if task == USC else gsc_loss(model, other)
            if config.self_check:
                own = u_fill_masked(model, exs) if task == USC else g_fill_masked(model, exs, config.g_fill)
                losses[SELF_U if task == USC else SELF_G] = self_check_pass(model, own, enabled=True)
        else:
            raise ValueError(f"unknown task {task!r}")
    return losses


def train_step(model: Model, batches, opt_state: dict, step: int, config: CurriculumConfig,
               lr: float | None = None, course: int | None = None, on_filled=None) -> dict:
    """Sum the task losses, take one AdamW step, and return the log record."""
    losses = task_losses(model, batches, config, on_filled)
    if not losses:
        raise ValueError("train_step received no examples")
    total = None
    for v in losses.values():
        total = v if total is None else total + v
    if not bool(torch.isfinite(total)):
        bad = {k: v.item() for k, v in losses.items()}
        raise NonFiniteError(f"non-finite loss at step {step}: {bad}")
    params = dict(model.named_parameters())
    grads = compute_gradients(total, params)
    used_lr = adamw_step(params, grads, opt_state, config.optimizer, step, lr=lr)
    return {
        "course": course,
        "step": step,
        "lr": used_lr,
        "losses": {k: v.item() for k, v in losses.items()},
        "total": total.item(),
    }


def _schedule_config(opt: OptimizerConfig, total: int) -> OptimizerConfig:
    return replace(opt, total_steps=total, warmup_steps=min(opt.warmup_steps, total))


def run_curriculum(model: Model, corpus, vocab, config: CurriculumConfig, opt_state: dict | None = None,
                   start_step: int = 0, on_record=None, on_filled=None, stop_step: int | None = None):
    """Run the course plan; returns ``(model, stats, opt_state)``.

    Optimizer state and the learning-rate schedule run continuously across courses
    (unless ``reset_lr_per_course``). ``start_step`` resumes after that many
    completed global steps and ``stop_step`` halts after that global step; batches
    depend only on (seed, course, step), so a run split at any step reproduces an
    uninterrupted one.
    """
    prepared = corpus if corpus and isinstance(corpus[0], PreparedText) else prepare_corpus(corpus, vocab)
    model.train()
    params = dict(model.named_parameters())
    if opt_state is None:
        opt_state = init_adamw_state(params)
    stats = TrainStats()
    global_cfg = _schedule_config(config.optimizer, config.total_steps)
    g = 0
    for course, steps in course_plan(config):
        course_cfg = _schedule_config(config.optimizer, steps)
        for t in range(1, steps + 1):
            g += 1
            if g <= start_step:
                continue
            if stop_step is not None and g > stop_step:
                return model, stats, opt_state
            lr = lr_schedule(t, course_cfg) if config.reset_lr_per_course else lr_schedule(g, global_cfg)
            batches = make_course_batches(prepared, course, g, config, vocab)
            rec = train_step(model, batches, opt_state, g, config, lr=lr, course=course, on_filled=on_filled)
            rec["course_step"] = t
            stats.add(rec)
            if on_record is not None:
                on_record(rec, opt_state)
    return model, stats, opt_state


# -- evaluation helpers -----------------------------------------------------------

def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


@torch.no_grad()
def masked_token_accuracy(model: Model, prepared, vocab, seed: int = 0, draws: int = 1, chunk: int = 64) -> float:
    """Fraction of masked positions where the U-decoder argmax equals the original token."""
    exs = [mask_example(p.full, vocab, (seed, d, i)) for d in range(draws) for i, p in enumerate(prepared)]
    hit = total = 0
    for part in _chunks(exs, chunk):
        pred = model.u_decode_logits(model.encode(pad_batch([e.input_ids for e in part]))).argmax(-1)
        for b, e in enumerate(part):
            for p in e.masked_positions:
                hit += int(pred[b, p]) == e.target_ids.ids[p]
                total += 1
    return hit / total


@torch.no_grad()
def dae_token_accuracy(model: Model, prepared, vocab, seed: int = 0, draws: int = 1, chunk: int = 64) -> float:
    """Teacher-forced G-decoder argmax accuracy over every target position."""
    exs = [mask_example(p.full, vocab, (seed, d, i), kind="DAE") for d in range(draws) for i, p in enumerate(prepared)]
    hit = total = 0
    for part in _chunks(exs, chunk):
        tgt = pad_batch([e.target_ids for e in part])
        logits = model.g_decode_logits(model.encode(pad_batch([e.input_ids for e in part])), tgt[:, :-1])
        labels = tgt[:, 1:]
        active = labels != PAD_ID
        hit += int(((logits.argmax(-1) == labels) & active).sum())
        total += int(active.sum())
    return hit / total


def recovery_examples(prepared, vocab, kind: str, seed: int = 0) -> list:
    fn = shuffle_sentences if kind == SSR else shuffle_formulas
    return [fn(p.mt, vocab, (seed, i)) for i, p in enumerate(prepared)]


@torch.no_grad()
def recovery_exact_match(model: Model, examples, with_statement: bool = True, chunk: int = 64) -> float:
    """Fraction of shuffled solutions that greedy decoding restores token for token."""
    hits = 0
    for part in _chunks(list(examples), chunk):
        enc = model.encode(pad_batch([recovery_source(ex, with_statement) for ex in part]))
        outs = model.generate_greedy(enc, max_out=max(len(ex.target_ids) for ex in part) + 1)
        hits += sum(list(ex.target_ids.ids) == out for ex, out in zip(part, outs))
    return hits / len(examples)


@torch.no_grad()
def recovery_loss(model: Model, examples, with_statement: bool = True) -> float:
    examples = list(examples)
    kind = examples[0].kind
    return float(_recovery_loss(model, examples, kind, with_statement))
