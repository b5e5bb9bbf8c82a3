"""Finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, arrays, index, h=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn(*arrays))
        flat[i] = old - h
        fm = float(fn(*arrays))
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise ``|a - n| / max(|a|, |n|)``.

    Entries where both gradients are tiny compared with the largest entry
    (below ``1e-3`` of it, or below ``floor``) are compared against that
    scale instead, so exact zeros do not produce 0/0.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(floor, 1e-3 * scale))
    return float((np.abs(a - n) / den).max(initial=0.0))


def check_gradients(op, arrays, seed=0, h=1e-5, wrt=None):
    """Compare reverse-mode and central-difference gradients of ``op``.

    ``op`` maps tensors to a tensor; the scalar under test is its inner
    product with a fixed random projection. Returns the worst relative
    error per input index.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    probe = op(*[Tensor(a) for a in arrays]).data
    proj = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar(*arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * proj).sum())

    leaves = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    out = op(*leaves)
    (out * Tensor(proj)).sum().backward()
    errors = {}
    for i in wrt:
        numeric = numerical_grad(scalar, arrays, i, h=h)
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
        errors[i] = relative_error(analytic, numeric)
    return errors


def check_module_gradients(module, loss_fn, names=None, h=1e-5, max_entries=None, seed=0):
    """Finite-difference check of ``loss_fn()`` w.r.t. a module's parameters.

    ``loss_fn`` builds a scalar tensor from the module's current
    parameters. ``max_entries`` limits how many randomly chosen entries
    of each parameter are perturbed. Returns ``{name: worst relative error}``.
    """
    params = dict(module.named_parameters())
    names = list(params) if names is None else list(names)
    module.zero_grad()
    loss_fn().backward()
    analytic = {n: np.array(params[n].grad if params[n].grad is not None else np.zeros(params[n].shape))
                for n in names}
    pick = np.random.default_rng(seed)
    errors = {}
    for name in names:
        p = params[name]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(pick.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = loss_fn().item()
            flat[i] = old - h
            fm = loss_fn().item()
            flat[i] = old
            numeric[j] = (fp - fm) / (2 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    module.zero_grad()
    return errors


def check_directional_gradients(module, loss_fn, names=None, steps=(1e-4, 1e-5), n_directions=2, seed=0):
    """Check each parameter tensor along random unit directions.

    For a direction ``v`` the analytic ``<grad, v>`` is compared with the
    central difference of ``loss_fn`` along ``v``. Every entry of the tensor
    contributes, so tensors whose individual entries have tiny gradients
    are still tested at a well-conditioned scale. Each direction is tried
    with every step in ``steps`` and the best agreement is kept: large
    steps suffer near activation kinks, small ones from roundoff in long
    sequences, and a wrong gradient disagrees at all of them. Returns
    ``{name: worst relative error}``.
    """
    params = dict(module.named_parameters())
    names = list(params) if names is None else list(names)
    module.zero_grad()
    loss_fn().backward()
    analytic = {n: np.array(params[n].grad if params[n].grad is not None else np.zeros(params[n].shape))
                for n in names}
    rng = np.random.default_rng(seed)
    errors = {}
    for name in names:
        p = params[name]
        base = p.data.copy()
        worst = 0.0
        for _ in range(n_directions):
            v = rng.standard_normal(base.shape)
            v /= np.linalg.norm(v)
            along = np.sum(analytic[name] * v)
            best = np.inf
            for h in steps:
                p.data[...] = base + h * v
                fp = loss_fn().item()
                p.data[...] = base - h * v
                fm = loss_fn().item()
                best = min(best, relative_error(along, (fp - fm) / (2 * h)))
            p.data[...] = base
            worst = max(worst, best)
        errors[name] = worst
    module.zero_grad()
    return errors
