"""Dual-decoder solution checking.

Each decoder fills the masked slots of a solution; the other decoder is then
trained to regenerate the original solution from that fill. Fills are plain
data (computed without gradient), so only the correction pass is differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from mathcurric.model import Model, g_loss, pad_batch, u_loss
from mathcurric.tokenizer import CLS_ID, MASK_ID, SEP_ID, STRUCTURAL_IDS


@dataclass(frozen=True)
class FilledSolution:
    source_decoder: str  # "U" or "G"
    ids: tuple[int, ...]
    original: tuple[int, ...]

    def to_record(self) -> dict:
        return {"source_decoder": self.source_decoder, "ids": list(self.ids), "original": list(self.original)}


@torch.no_grad()
def u_fill_masked(model: Model, masked) -> list[FilledSolution]:
    """Replace masked slots with the U-decoder's argmax; other positions are copied as-is."""
    masked = list(masked)
    if not masked:
        return []
    src = pad_batch([ex.input_ids for ex in masked])
    pred = model.u_decode_logits(model.encode(src)).argmax(dim=-1)
    out = []
    for b, ex in enumerate(masked):
        ids = list(ex.input_ids.ids)
        for p in ex.masked_positions:
            ids[p] = int(pred[b, p])
        out.append(FilledSolution("U", tuple(ids), ex.target_ids.ids))
    return out


@torch.no_grad()
def g_fill_masked(model: Model, masked, mode: str = "forced") -> list[FilledSolution]:
    """Fill masked slots left to right with the G-decoder.

    ``forced`` mode walks the original length: unmasked positions are copied from the
    input, each masked position takes the argmax given the fill so far. ``free``
    mode decodes greedily without constraint and aligns the output to the original
    length by truncating or padding with [MASK].
    """
    masked = list(masked)
    if not masked:
        return []
    enc = model.encode(pad_batch([ex.input_ids for ex in masked]))
    if mode == "free":
        out = []
        gens = model.generate_greedy(enc, max_out=max(len(ex.target_ids) for ex in masked))
        for ex, gen in zip(masked, gens):
            body = len(ex.target_ids) - 2
            gen = (gen + [MASK_ID] * body)[:body]
            out.append(FilledSolution("G", (CLS_ID, *gen, SEP_ID), ex.target_ids.ids))
        return out
    if mode != "forced":
        raise ValueError(f"unknown fill mode {mode!r}")

    filled = pad_batch([ex.input_ids for ex in masked])
    todo = {}
    for b, ex in enumerate(masked):
        for p in ex.masked_positions:
            todo.setdefault(p, []).append(b)
    for p in sorted(todo):
        # position 0 is [CLS] and never masked
        logits = model.g_decode_logits(enc, filled[:, :p])[:, p - 1]
        for b in todo[p]:
            filled[b, p] = int(logits[b].argmax())
    return [
        FilledSolution("G", tuple(int(t) for t in filled[b, : len(ex.input_ids)]), ex.target_ids.ids)
        for b, ex in enumerate(masked)
    ]


def _content_positions(original) -> list[int]:
    return [i for i, t in enumerate(original) if t not in STRUCTURAL_IDS]


def usc_loss(model: Model, filled) -> torch.Tensor:
    """U-decoder regenerates every solution token from a G-decoder fill."""
    filled = list(filled)
    if any(f.source_decoder != "G" for f in filled):
        raise ValueError("usc_loss corrects G-decoder fills")
    return u_loss(model, [f.ids for f in filled], [f.original for f in filled],
                  [_content_positions(f.original) for f in filled])


def gsc_loss(model: Model, filled) -> torch.Tensor:
    """G-decoder regenerates the original solution from a U-decoder fill."""
    filled = list(filled)
    if any(f.source_decoder != "U" for f in filled):
        raise ValueError("gsc_loss corrects U-decoder fills")
    return g_loss(model, [f.ids for f in filled], [f.original for f in filled])


def self_check_pass(model: Model, filled, enabled: bool = False) -> torch.Tensor:
    """Each decoder corrects its own fill with the same loss form (off by default)."""
    filled = list(filled)
    if not enabled or not filled:
        return torch.zeros((), dtype=model.token_embeddings.dtype)
    if all(f.source_decoder == "U" for f in filled):
        return u_loss(model, [f.ids for f in filled], [f.original for f in filled],
                      [_content_positions(f.original) for f in filled])
    if all(f.source_decoder == "G" for f in filled):
        return g_loss(model, [f.ids for f in filled], [f.original for f in filled])
    raise ValueError("self_check_pass expects fills from a single decoder")
