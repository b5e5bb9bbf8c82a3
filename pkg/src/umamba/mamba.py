"""Selective state-space (Mamba-style) sequence block."""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from . import tensor as T
from .nn import Conv1d, Module, Pointwise, parameter
from .ssm import hippo_init


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


class Mamba(Module):
    """Gated selective-SSM block mapping ``(..., F, T)`` to ``(..., F, T)``.

    The input is projected to ``expand * F`` channels on two branches. The
    main branch goes through a short causal depthwise convolution, SiLU and
    the selective scan; the other branch gates the scan output through SiLU.
    A final projection returns to ``F`` channels. Step sizes, ``B`` and
    ``C`` are computed from the main branch at every frame, which is what
    makes the scan input-dependent.

    Parameters
    ----------
    channels : int
        Model width ``F``.
    d_state : int
        State size ``N`` per inner channel.
    expand : int
        Inner width multiplier.
    d_conv : int
        Width of the causal depthwise convolution.
    dt_rank : int, optional
        Rank of the step-size projection; ``ceil(F / 16)`` by default.
    """

    def __init__(self, channels, d_state=16, expand=2, d_conv=4, dt_rank=None,
                 dt_min=1e-3, dt_max=1e-1, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        inner = expand * channels
        dt_rank = dt_rank or math.ceil(channels / 16)
        self.channels = channels
        self.inner = inner
        self.d_state = d_state
        self.dt_rank = dt_rank
        self.in_x = Pointwise(channels, inner, bias=False, rng=rng, dtype=dtype)
        self.in_z = Pointwise(channels, inner, bias=False, rng=rng, dtype=dtype)
        self.conv = Conv1d(inner, inner, d_conv, padding=(d_conv - 1, 0), groups=inner, rng=rng, dtype=dtype)
        self.x_dt = Pointwise(inner, dt_rank, bias=False, rng=rng, dtype=dtype)
        self.x_B = Pointwise(inner, d_state, bias=False, rng=rng, dtype=dtype)
        self.x_C = Pointwise(inner, d_state, bias=False, rng=rng, dtype=dtype)
        self.dt_proj = Pointwise(dt_rank, inner, bias=True, rng=rng, dtype=dtype)
        dt = rng.uniform(dt_min, dt_max, size=inner)
        self.dt_proj.bias = parameter(inverse_softplus(dt), dtype)
        self.A_log = parameter(np.tile(np.log(-hippo_init(d_state)), (inner, 1)), dtype)
        self.D = parameter(np.ones(inner), dtype)
        self.out = Pointwise(inner, channels, bias=False, rng=rng, dtype=dtype)

    def forward(self, x):
        if x.shape[-2] != self.channels:
            raise ValueError(f"Mamba block expects {self.channels} channels, got {x.shape[-2]}")
        u = T.silu(self.conv(self.in_x(x)))
        z = self.in_z(x)
        delta = T.softplus(self.dt_proj(self.x_dt(u)))
        A = -T.exp(self.A_log)
        y = F.selective_scan(u, delta, A, self.x_B(u), self.x_C(u), self.D)
        return self.out(y * T.silu(z))


def mamba_block_forward(x, block):
    """Apply ``block`` to ``x`` (no residual; callers add it)."""
    return block(T.as_tensor(x))
