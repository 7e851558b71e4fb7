"""Shared test utilities: finite-difference gradient checking and a
full-objective forward used by both the gradient tests and the acceptance
suite."""

import numpy as np
import torch

from text2traj.losses import active_weights
from text2traj.training import forward_losses


def total_objective(model, coords, overlay, text_embs, pooled, config):
    components = forward_losses(model, coords, overlay, text_embs, pooled, config)
    weights = active_weights(config)
    return sum(weights[name] * value for name, value in components.items())


def finite_difference_check(model, loss_fn, h=1e-5, rel_tol=1e-4):
    """Compare autograd gradients of loss_fn() against central differences.

    Returns (num_checked, worst_rel_err, failures) where failures lists
    (param_name, flat_index, analytic, numeric).
    """
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    failures = []
    worst = 0.0
    checked = 0
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.view(-1)
            gflat = grads[name].view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                step = h * max(1.0, abs(orig))
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                analytic = float(gflat[i])
                denom = max(abs(analytic), abs(numeric), 1e-6)
                rel = abs(analytic - numeric) / denom
                worst = max(worst, rel)
                checked += 1
                if rel >= rel_tol:
                    failures.append((name, i, analytic, numeric))
    return checked, worst, failures
