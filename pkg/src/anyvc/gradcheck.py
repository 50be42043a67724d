"""Central finite-difference verification of autograd gradients.

The finite-difference side is computed coordinate by coordinate under
``no_grad`` and never touches autograd, so it stays an independent oracle
for the analytic gradients.  Checks are meant to run in double precision on
small shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable

import torch
from torch import Tensor


def finite_difference_gradient(fn: Callable[[], Tensor], tensor: Tensor,
                               h: float = 1e-5) -> Tensor:
    """d fn / d tensor by central differences, one coordinate at a time."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    grad_flat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + h
            f_plus = float(fn())
            flat[i] = original - h
            f_minus = float(fn())
            flat[i] = original
            grad_flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_gradient_errors(fn: Callable[[], Tensor],
                             tensors: dict[str, Tensor],
                             h: float = 1e-5) -> dict[str, float]:
    """Max-norm relative error between autograd and finite differences.

    ``tensors`` maps names to leaf tensors with requires_grad; ``fn`` must
    rebuild the scalar loss from scratch on every call.
    """
    names = list(tensors)
    leaves = [tensors[n] for n in names]
    analytic = torch.autograd.grad(fn(), leaves, allow_unused=False)
    # Some directions are mathematically null (e.g. shifts absorbed by a
    # downstream normalization); measure those against the overall gradient
    # magnitude instead of against finite-difference noise.
    global_scale = max(max(float(g.abs().max()) for g in analytic), 1e-8)
    errors = {}
    for name, leaf, grad in zip(names, leaves, analytic):
        numeric = finite_difference_gradient(fn, leaf, h)
        scale = max(float(grad.abs().max()), float(numeric.abs().max()),
                    1e-3 * global_scale)
        errors[name] = float((grad - numeric).abs().max()) / scale
    return errors


def module_gradient_errors(module: torch.nn.Module,
                           loss_fn: Callable[[], Tensor],
                           inputs: Iterable[Tensor] = (),
                           h: float = 1e-5) -> dict[str, float]:
    """Check every named parameter of a module (plus optional input leaves)."""
    tensors = {name: p for name, p in module.named_parameters()}
    for i, t in enumerate(inputs):
        tensors[f"input_{i}"] = t
    return relative_gradient_errors(loss_fn, tensors, h)
