"""Shared transformer encoder with a bidirectional U-decoder and an autoregressive G-decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from mathcurric.numerics import DEFAULT_DTYPE, cross_entropy_loss, gelu, layer_norm, softmax
from mathcurric.tokenizer import CLS_ID, PAD_ID, SEP_ID, TokenSequence

INIT_STD = 0.02


@dataclass
class ModelConfig:
    vocab_size: int
    k: int = 128
    heads: int = 4
    ffn_dim: int = 512
    L: int = 4
    L_U: int = 2
    L_G: int = 2
    max_len: int = 256
    dropout: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the 5 reserved tokens")
        if self.k < 1 or self.heads < 1 or self.k % self.heads:
            raise ValueError(f"embedding size {self.k} must be divisible by heads={self.heads}")
        if min(self.L, self.L_U, self.L_G) < 1:
            raise ValueError("every stack needs at least one layer")
        if self.max_len < 2 or self.ffn_dim < 1:
            raise ValueError("max_len must be >= 2 and ffn_dim >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    hidden: torch.Tensor  # [B, n, k]
    ids: torch.Tensor  # [B, n]

    @property
    def pad_mask(self) -> torch.Tensor:
        return self.ids == PAD_ID


def as_batch(ids) -> torch.Tensor:
    """Coerce a TokenSequence, id list, or 1-D/2-D tensor into a ``[B, n]`` long tensor."""
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    if isinstance(ids, torch.Tensor):
        t = ids.long()
    elif len(ids) and isinstance(ids[0], (list, tuple, TokenSequence)):
        return pad_batch(ids)
    else:
        t = torch.tensor(list(ids), dtype=torch.long)
    return t.unsqueeze(0) if t.dim() == 1 else t


def pad_batch(seqs) -> torch.Tensor:
    rows = [list(s.ids) if isinstance(s, TokenSequence) else list(s) for s in seqs]
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


class LayerNorm(nn.Module):
    def __init__(self, k: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(k))
        self.bias = nn.Parameter(torch.zeros(k))

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias)


class Attention(nn.Module):
    def __init__(self, k: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(k, k)
        self.k = nn.Linear(k, k)
        self.v = nn.Linear(k, k)
        self.o = nn.Linear(k, k)

    def forward(self, x, memory, blocked):
        """``blocked`` is a boolean mask broadcastable to ``[B, heads, n_q, n_k]``."""
        B, nq, k = x.shape
        nk = memory.shape[1]
        dh = k // self.heads
        q = self.q(x).view(B, nq, self.heads, dh).transpose(1, 2)
        kk = self.k(memory).view(B, nk, self.heads, dh).transpose(1, 2)
        v = self.v(memory).view(B, nk, self.heads, dh).transpose(1, 2)
        scores = q @ kk.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(blocked, float("-inf"))
        ctx = softmax(scores, axis=-1) @ v
        return self.o(ctx.transpose(1, 2).reshape(B, nq, k))


class FeedForward(nn.Module):
    def __init__(self, k: int, ffn_dim: int):
        super().__init__()
        self.up = nn.Linear(k, ffn_dim)
        self.down = nn.Linear(ffn_dim, k)

    def forward(self, x):
        return self.down(gelu(self.up(x)))


class EncoderLayer(nn.Module):
    """Post-norm bidirectional layer, shared by the encoder and the U-decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = Attention(cfg.k, cfg.heads)
        self.norm1 = LayerNorm(cfg.k)
        self.ffn = FeedForward(cfg.k, cfg.ffn_dim)
        self.norm2 = LayerNorm(cfg.k)
        self.dropout = cfg.dropout

    def forward(self, x, blocked):
        x = self.norm1(x + F.dropout(self.attn(x, x, blocked), self.dropout, self.training))
        return self.norm2(x + F.dropout(self.ffn(x), self.dropout, self.training))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = Attention(cfg.k, cfg.heads)
        self.norm1 = LayerNorm(cfg.k)
        self.cross_attn = Attention(cfg.k, cfg.heads)
        self.norm2 = LayerNorm(cfg.k)
        self.ffn = FeedForward(cfg.k, cfg.ffn_dim)
        self.norm3 = LayerNorm(cfg.k)
        self.dropout = cfg.dropout

    def forward(self, y, memory, self_blocked, cross_blocked):
        d = self.dropout
        y = self.norm1(y + F.dropout(self.self_attn(y, y, self_blocked), d, self.training))
        y = self.norm2(y + F.dropout(self.cross_attn(y, memory, cross_blocked), d, self.training))
        return self.norm3(y + F.dropout(self.ffn(y), d, self.training))


class Model(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.token_embeddings = nn.Parameter(torch.empty(cfg.vocab_size, cfg.k))
        self.position_embeddings = nn.Parameter(torch.empty(cfg.max_len, cfg.k))
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.L))
        self.u_decoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.L_U))
        self.mlm_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        self.g_decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.L_G))
        self.lm_bias = nn.Parameter(torch.zeros(cfg.vocab_size))

    # -- pieces ---------------------------------------------------------------

    def _check_len(self, n: int) -> None:
        if n > self.config.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len={self.config.max_len}")

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        self._check_len(ids.shape[1])
        return self.token_embeddings[ids] + self.position_embeddings[: ids.shape[1]]

    def vocab_logits(self, h: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        # both heads are tied to the token embedding matrix
        return h @ self.token_embeddings.T + bias

    # -- public ops -------------------------------------------------------------

    def encode(self, ids) -> EncoderOutput:
        ids = as_batch(ids)
        x = F.dropout(self.embed(ids), self.config.dropout, self.training)
        blocked = (ids == PAD_ID)[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, blocked)
        return EncoderOutput(x, ids)

    def u_hidden(self, enc: EncoderOutput) -> torch.Tensor:
        x = enc.hidden
        blocked = enc.pad_mask[:, None, None, :]
        for layer in self.u_decoder:
            x = layer(x, blocked)
        return x

    def u_decode_logits(self, enc: EncoderOutput) -> torch.Tensor:
        return self.vocab_logits(self.u_hidden(enc), self.mlm_bias)

    def pooled_cls(self, enc: EncoderOutput) -> torch.Tensor:
        if bool((enc.ids[:, 0] != CLS_ID).any()):
            raise ValueError("pooled_cls requires every input to start with [CLS]")
        return self.u_hidden(enc)[:, 0]

    def g_decode_logits(self, enc: EncoderOutput, prefix_ids) -> torch.Tensor:
        """Teacher-forced logits; position i sees prefix positions <= i and the whole encoder output."""
        prefix = as_batch(prefix_ids)
        if prefix.shape[0] != enc.hidden.shape[0]:
            raise ValueError("prefix batch size must match the encoder batch size")
        m = prefix.shape[1]
        y = F.dropout(self.embed(prefix), self.config.dropout, self.training)
        causal = torch.ones(m, m, dtype=torch.bool).triu(1)
        self_blocked = causal[None, None] | (prefix == PAD_ID)[:, None, None, :]
        # a query never loses its own key, even at padded positions
        self_blocked = self_blocked & ~torch.eye(m, dtype=torch.bool)[None, None]
        cross_blocked = enc.pad_mask[:, None, None, :]
        for layer in self.g_decoder:
            y = layer(y, enc.hidden, self_blocked, cross_blocked)
        return self.vocab_logits(y, self.lm_bias)

    @torch.no_grad()
    def generate_greedy(self, enc: EncoderOutput, max_out: int, bos: int = CLS_ID, eos: int = SEP_ID) -> list[list[int]]:
        """Argmax decoding until ``eos`` or ``max_out`` tokens; ties go to the smallest id."""
        B = enc.hidden.shape[0]
        max_out = min(max_out, self.config.max_len - 1)
        prefix = torch.full((B, 1), bos, dtype=torch.long)
        outputs = [[] for _ in range(B)]
        done = [False] * B
        for _ in range(max_out):
            nxt = self.g_decode_logits(enc, prefix)[:, -1].argmax(dim=-1)
            for b in range(B):
                if done[b]:
                    continue
                tok = int(nxt[b])
                if tok == eos:
                    done[b] = True
                else:
                    outputs[b].append(tok)
            if all(done):
                break
            prefix = torch.cat([prefix, nxt[:, None]], dim=1)
        return outputs


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _init_weights(model: nn.Module, gen: torch.Generator) -> None:
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "gain":
                p.fill_(1.0)
            elif leaf == "bias" or name.endswith("_bias"):
                p.zero_()
            else:
                nn.init.trunc_normal_(p, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD, generator=gen)


def build_model(config: ModelConfig, seed: int = 42, dtype=DEFAULT_DTYPE) -> Model:
    model = Model(config).to(dtype)
    gen = torch.Generator().manual_seed(seed)
    _init_weights(model, gen)
    return model


def u_loss(model: Model, sources, targets, positions) -> torch.Tensor:
    """U-decoder cross entropy at the given positions of each example."""
    src = pad_batch(sources)
    tgt = pad_batch(targets)
    if src.shape != tgt.shape:
        raise ValueError("U-decoder sources and targets must align position-wise")
    active = torch.zeros(src.shape, dtype=torch.bool)
    for b, pos in enumerate(positions):
        active[b, list(pos)] = True
    logits = model.u_decode_logits(model.encode(src))
    return cross_entropy_loss(logits, tgt, active)


def g_loss(model: Model, sources, targets) -> torch.Tensor:
    """Teacher-forced G-decoder cross entropy; each target is ``[CLS] ... [SEP]``.

    The decoder reads ``target[:-1]`` and predicts ``target[1:]``; padding is ignored.
    """
    src = pad_batch(sources)
    tgt = pad_batch(targets)
    labels = tgt[:, 1:]
    logits = model.g_decode_logits(model.encode(src), tgt[:, :-1])
    return cross_entropy_loss(logits, labels, labels != PAD_ID)


# Single-sequence conveniences mirroring the method API.

def encode(model: Model, ids) -> EncoderOutput:
    return model.encode(ids)


def u_decode_logits(model: Model, enc: EncoderOutput) -> torch.Tensor:
    return model.u_decode_logits(enc)


def pooled_cls(model: Model, enc: EncoderOutput) -> torch.Tensor:
    return model.pooled_cls(enc)


def g_decode_logits(model: Model, enc: EncoderOutput, prefix_ids) -> torch.Tensor:
    return model.g_decode_logits(enc, prefix_ids)


def generate_greedy(model: Model, enc: EncoderOutput, max_out: int, bos: int = CLS_ID, eos: int = SEP_ID):
    return model.generate_greedy(enc, max_out, bos, eos)
