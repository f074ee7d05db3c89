import math

import pytest
import torch

from mathcurric.checking import (
    FilledSolution,
    g_fill_masked,
    gsc_loss,
    self_check_pass,
    u_fill_masked,
    usc_loss,
)
from mathcurric.corruption import CorruptedExample, mask_example
from mathcurric.model import g_loss, u_loss
from mathcurric.numerics import compute_gradients
from mathcurric.tokenizer import STRUCTURAL_IDS, encode, join_segments


@pytest.fixture
def masked(corpus, vocab):
    return [mask_example(join_segments(encode(mt.solution, vocab)), vocab, (1, i)) for i, mt in enumerate(corpus[:4])]


def _unmasked(ts):
    return CorruptedExample("MLM", ts, ts)


def test_u_fill_shapes_and_copies(tiny_model, masked):
    for ex, filled in zip(masked, u_fill_masked(tiny_model, masked)):
        assert filled.source_decoder == "U"
        assert len(filled.ids) == len(ex.input_ids) == len(filled.original)
        keep = set(range(len(ex.input_ids))) - set(ex.masked_positions)
        assert all(filled.ids[i] == ex.input_ids.ids[i] for i in keep)


def test_g_fill_shapes_and_copies(tiny_model, masked):
    for ex, filled in zip(masked, g_fill_masked(tiny_model, masked)):
        assert filled.source_decoder == "G"
        assert len(filled.ids) == len(ex.target_ids)
        keep = set(range(len(ex.input_ids))) - set(ex.masked_positions)
        assert all(filled.ids[i] == ex.input_ids.ids[i] for i in keep)


def test_g_fill_matches_stepwise_argmax(tiny_model, masked):
    ex = masked[0]
    (filled,) = g_fill_masked(tiny_model, [ex])
    prefix = list(ex.input_ids.ids)
    for p in ex.masked_positions:
        logits = tiny_model.g_decode_logits(tiny_model.encode(ex.input_ids), [prefix[:p]])
        prefix[p] = int(logits[0, -1].argmax())
    assert list(filled.ids) == prefix


def test_free_fill_aligned_to_original_length(tiny_model, masked):
    for ex, filled in zip(masked, g_fill_masked(tiny_model, masked, mode="free")):
        assert len(filled.ids) == len(ex.target_ids)
    with pytest.raises(ValueError):
        g_fill_masked(tiny_model, masked, mode="beam")


def test_zero_masked_positions_copy_input(tiny_model, vocab, corpus):
    ex = _unmasked(join_segments(encode(corpus[0].solution, vocab)))
    assert u_fill_masked(tiny_model, [ex])[0].ids == ex.input_ids.ids
    assert g_fill_masked(tiny_model, [ex])[0].ids == ex.input_ids.ids


def test_fills_carry_no_gradient(tiny_model, masked):
    fills = u_fill_masked(tiny_model, masked) + g_fill_masked(tiny_model, masked)
    assert all(isinstance(t, int) for f in fills for t in f.ids)


def test_usc_requires_g_fills(tiny_model, masked):
    with pytest.raises(ValueError):
        usc_loss(tiny_model, u_fill_masked(tiny_model, masked))
    with pytest.raises(ValueError):
        gsc_loss(tiny_model, g_fill_masked(tiny_model, masked))


def test_clean_fill_equals_clean_text_losses(tiny_model, vocab, corpus):
    ts = join_segments(encode(corpus[1].solution, vocab))
    clean = [FilledSolution("G", ts.ids, ts.ids)]
    positions = [i for i, t in enumerate(ts.ids) if t not in STRUCTURAL_IDS]
    assert usc_loss(tiny_model, clean).item() == u_loss(tiny_model, [ts], [ts], [positions]).item()
    clean_u = [FilledSolution("U", ts.ids, ts.ids)]
    assert gsc_loss(tiny_model, clean_u).item() == g_loss(tiny_model, [ts], [ts]).item()


def test_usc_hand_computed(tiny_model):
    ids = (1, 7, 8, 9, 2)
    original = (1, 7, 10, 9, 2)
    filled = FilledSolution("G", ids, original)
    logits = tiny_model.u_decode_logits(tiny_model.encode(torch.tensor(ids)))[0]
    expected = 0.0
    for p in (1, 2, 3):
        row = logits[p].tolist()
        z = math.log(sum(math.exp(v) for v in row))
        expected += z - row[original[p]]
    assert math.isclose(usc_loss(tiny_model, [filled]).item(), expected / 3, rel_tol=1e-12)


def test_usc_targets_full_sequence(tiny_model):
    ids = (1, 7, 8, 9, 2)
    base = usc_loss(tiny_model, [FilledSolution("G", ids, (1, 7, 8, 9, 2))]).item()
    # changing an original token the fill already got right still changes the loss
    moved = usc_loss(tiny_model, [FilledSolution("G", ids, (1, 11, 8, 9, 2))]).item()
    assert base != moved


def test_gsc_hand_computed(tiny_model):
    ids = (1, 7, 8, 2)
    original = (1, 7, 9, 2)
    filled = FilledSolution("U", ids, original)
    enc = tiny_model.encode(torch.tensor(ids))
    logits = tiny_model.g_decode_logits(enc, torch.tensor(original[:-1]))[0]
    expected = 0.0
    for i, target in enumerate(original[1:]):
        row = logits[i].tolist()
        expected += math.log(sum(math.exp(v) for v in row)) - row[target]
    assert math.isclose(gsc_loss(tiny_model, [filled]).item(), expected / 3, rel_tol=1e-12)


def test_self_check(tiny_model, masked):
    u = u_fill_masked(tiny_model, masked)
    g = g_fill_masked(tiny_model, masked)
    assert self_check_pass(tiny_model, u).item() == 0.0
    own_u = self_check_pass(tiny_model, u, enabled=True).item()
    clean = [FilledSolution("G", f.ids, f.original) for f in u]
    assert own_u == usc_loss(tiny_model, clean).item()
    own_g = self_check_pass(tiny_model, g, enabled=True).item()
    assert own_g == gsc_loss(tiny_model, [FilledSolution("U", f.ids, f.original) for f in g]).item()
    with pytest.raises(ValueError):
        self_check_pass(tiny_model, u + g, enabled=True)


def test_correction_gradient_comes_only_from_correction_pass(tiny_model, masked):
    params = dict(tiny_model.named_parameters())
    fills = g_fill_masked(tiny_model, masked)
    grads = compute_gradients(usc_loss(tiny_model, fills), params)
    # USC runs encoder and U-decoder only; the G-decoder filled but is not differentiated
    assert all(grads[n].abs().sum() == 0 for n in params if n.startswith("g_decoder") or n == "lm_bias")
    assert any(grads[n].abs().sum() > 0 for n in params if n.startswith("u_decoder"))
    fills = u_fill_masked(tiny_model, masked)
    grads = compute_gradients(gsc_loss(tiny_model, fills), params)
    assert all(grads[n].abs().sum() == 0 for n in params if n.startswith("u_decoder") or n == "mlm_bias")
