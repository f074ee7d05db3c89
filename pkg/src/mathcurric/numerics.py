"""Array primitives, gradient utilities, AdamW and the learning-rate schedule.

Reverse-mode differentiation and the fused kernels come from torch; everything
defaults to float64 so finite-difference checks and replays stay tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_DTYPE = torch.float64


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN or infinite."""


@dataclass
class OptimizerConfig:
    learning_rate: float = 3e-5
    warmup_steps: int = 5000
    total_steps: int = 300000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.weight_decay < 0:
            raise ValueError("betas must lie in [0, 1) and weight decay must be >= 0")


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Max-shifted softmax (the fused kernel subtracts the row max)."""
    return torch.softmax(x, dim=axis)


def log_softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    return torch.log_softmax(x, dim=axis)


def layer_norm(x: torch.Tensor, gain, bias, epsilon: float = 1e-5) -> torch.Tensor:
    """Normalize the last axis with biased variance, then scale and shift."""
    return F.layer_norm(x, x.shape[-1:], gain, bias, epsilon)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    return F.gelu(x, approximate="tanh")


def cross_entropy_loss(logits: torch.Tensor, targets, position_mask=None) -> torch.Tensor:
    """Mean of -log softmax(logits)[target] over active positions.

    ``logits`` is ``[..., vocab]``; ``targets`` and ``position_mask`` match the
    leading shape.
    """
    targets = torch.as_tensor(targets, dtype=torch.long)
    if position_mask is None:
        position_mask = torch.ones(targets.shape, dtype=torch.bool)
    else:
        position_mask = torch.as_tensor(position_mask, dtype=torch.bool)
    if logits.shape[:-1] != targets.shape or targets.shape != position_mask.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)}, targets {tuple(targets.shape)}")
    if not bool(position_mask.any()):
        raise ValueError("cross entropy over an empty set of positions")
    logp = log_softmax(logits[position_mask])
    picked = logp.gather(-1, targets[position_mask].unsqueeze(-1)).squeeze(-1)
    return -picked.mean()


def compute_gradients(loss: torch.Tensor, params: dict) -> dict:
    """Gradients of ``loss`` for every named parameter; zeros for those not involved."""
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: torch.zeros_like(params[n]) if g is None else g for n, g in zip(names, grads)}


def finite_difference_check(loss_fn, params: dict, probes: int = 50, step: float = 1e-5,
                            seed: int = 0, analytic: dict | None = None, floor: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn()`` must recompute the loss from the current values in ``params``.
    Probes are drawn uniformly from entries of tensors that take part in the loss;
    the error is ``|analytic - numeric| / max(|numeric|, floor)``.
    """
    if analytic is None:
        analytic = compute_gradients(loss_fn(), params)
    live = [n for n in params if bool((analytic[n] != 0).any())]
    if not live:
        return 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(probes):
            name = live[rng.integers(len(live))]
            p = params[name]
            flat = p.view(-1)
            idx = int(rng.integers(flat.numel()))
            orig = flat[idx].item()
            flat[idx] = orig + step
            up = loss_fn().item()
            flat[idx] = orig - step
            down = loss_fn().item()
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name].reshape(-1)[idx].item()
            worst = max(worst, abs(a - numeric) / max(abs(numeric), floor))
    return worst


def lr_schedule(step: int, config: OptimizerConfig) -> float:
    """Linear warmup 0 -> lr over ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    lr, warm, total = config.learning_rate, config.warmup_steps, config.total_steps
    if step > total or step < 0:
        return 0.0
    if step < warm:
        return lr * step / warm
    if total == warm:
        return lr
    return lr * (total - step) / (total - warm)


def init_adamw_state(params: dict) -> dict:
    return {
        "m": {n: torch.zeros_like(p) for n, p in params.items()},
        "v": {n: torch.zeros_like(p) for n, p in params.items()},
    }


@torch.no_grad()
def adamw_step(params: dict, grads: dict, state: dict, config: OptimizerConfig, step: int,
               lr: float | None = None) -> float:
    """One in-place AdamW update (1-based ``step``); returns the learning rate used.

    Decoupled weight decay ``lr * wd * param`` is applied after the adaptive update.
    """
    if step < 1:
        raise ValueError("optimizer steps are 1-based")
    for n, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteError(f"non-finite gradient for parameter {n!r} at step {step}")
    if lr is None:
        lr = lr_schedule(step, config)
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for n, p in params.items():
        g = grads[n]
        m = state["m"][n]
        v = state["v"][n]
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + config.epsilon))
        if config.weight_decay:
            p.sub_(lr * config.weight_decay * p)
    return lr
