"""Central finite-difference gradient oracle for the network tests.

Compares autograd gradients against (f(x+h) - f(x-h)) / 2h in float64.
The relative error denominator floors at 1e-3 of the tensor's gradient
scale: coordinates that tiny are dominated by finite-difference roundoff,
while a genuinely wrong gradient (zeroed, scaled, or swapped) still shows
up at full magnitude.
"""

import numpy as np
import torch


def finite_difference_max_rel_error(
    f,
    params,
    h=1e-5,
    max_coords_per_tensor=150,
    seed=0,
):
    """Max relative error between autograd and central differences.

    ``f`` must recompute the scalar loss from scratch on every call and be
    deterministic (fix any internal rng per call). ``params`` are the
    float64 tensors to perturb; every coordinate is checked unless the
    tensor exceeds ``max_coords_per_tensor``, in which case a seeded
    random subset is.
    """
    for p in params:
        assert p.dtype == torch.float64, "gradient checks run in 64-bit"
    loss = f()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for param, grad in zip(params, grads):
        flat = param.data.view(-1)
        gflat = grad.reshape(-1)
        n = flat.numel()
        if n <= max_coords_per_tensor:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        scale = max(float(gflat.abs().max()), 1e-6)
        for i in coords:
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + h
                loss_plus = float(f())
                flat[i] = original - h
                loss_minus = float(f())
                flat[i] = original
            fd = (loss_plus - loss_minus) / (2.0 * h)
            analytic = float(gflat[i])
            denom = max(abs(analytic), abs(fd), 1e-3 * scale)
            worst = max(worst, abs(analytic - fd) / denom)
    return worst
