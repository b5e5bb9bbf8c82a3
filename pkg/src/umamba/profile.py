"""Analytic parameter and multiply-accumulate counts for :class:`UMambaNet`.

MAC conventions (identical to the runtime tally in
:func:`umamba.functional.mac_tally`):

* convolution: ``C_out * C_in/groups * k * T_out``
* transposed convolution: ``C_in * C_out/groups * k * T_in``
* 1x1 projection: ``C_out * C_in * T``
* selective scan: ``3 * channels * N * T`` for state updates and readout,
  plus ``channels * T`` for the skip term
* linear upsampling: two per output value

Elementwise products (activations, gating, masking, normalization) are
not counted.
"""

from __future__ import annotations

from .model import ModelConfig, level_lengths


def _block_params(c: ModelConfig):
    F, L = c.F, c.L
    inner = c.expand * F
    n = F * c.bottleneck_channels + c.bottleneck_channels + 2 * F + 1
    n += L * (F * c.down_kernel + F + 2 * F)
    if c.upsampling == "transposed-conv":
        n += L * (F * c.up_kernel + F)
    n += 1
    mamba = (
        2 * inner * F                      # input projections
        + inner * c.d_conv + inner         # causal depthwise conv
        + inner * (c.dt_rank + 2 * c.N)    # step, B and C projections
        + c.dt_rank * inner + inner        # step expansion
        + inner * c.N + inner              # A_log, D
        + F * inner                        # output projection
    )
    return n + mamba


def count_params(config: ModelConfig = None):
    """Exact number of learnable scalars."""
    c = config or ModelConfig()
    F = c.F
    outer = F * c.window + c.S * F * F + c.S * F + F * c.window
    return outer + c.R * _block_params(c)


def _block_macs(c: ModelConfig, frames):
    F = c.F
    inner = c.expand * F
    lengths = level_lengths(frames, c.L)
    macs = F * c.bottleneck_channels * frames
    for level in range(1, c.L + 1):
        macs += F * c.down_kernel * lengths[level]
        if c.upsampling == "transposed-conv":
            macs += F * c.up_kernel * lengths[level]
        elif c.upsampling == "linear":
            macs += 2 * F * lengths[level - 1]
    macs += frames * (
        2 * inner * F
        + inner * c.d_conv
        + inner * (c.dt_rank + 2 * c.N)
        + c.dt_rank * inner
        + 3 * inner * c.N + inner
        + F * inner
    )
    return macs


def count_macs(config: ModelConfig = None, input_samples=24000):
    """Multiply-accumulates of one forward pass over ``input_samples``."""
    c = config or ModelConfig()
    frames = c.frames(input_samples)
    if frames < 1:
        raise ValueError("input shorter than one encoder window")
    F = c.F
    macs = F * c.window * frames                  # encoder
    macs += c.R * _block_macs(c, frames)
    macs += c.S * F * F * frames                  # mask projection
    macs += c.S * F * c.window * frames           # decoder, once per source
    return macs


# rows of the ablation grid: (F, R, L, upsampling, reported params in M, reported GMACs)
ABLATION_GRID = [
    (64, 16, 4, "transposed-conv", 1.3, 0.7),
    (128, 12, 4, "transposed-conv", 3.3, 1.9),
    (128, 16, 4, "transposed-conv", 4.4, 2.5),
    (128, 20, 4, "transposed-conv", 5.5, 3.1),
    (128, 16, 8, "transposed-conv", 4.6, 2.5),
    (128, 16, 4, "nearest", 4.4, 2.5),
    (128, 16, 4, "linear", 4.4, 2.5),
    (192, 16, 4, "transposed-conv", 9.7, 5.3),
]


def profile_table(configs=None, input_samples=24000):
    """Rows of ``(config, params, GMACs)`` for the given configs (ablation grid by default)."""
    if configs is None:
        configs = [ModelConfig(F=f, R=r, L=l, upsampling=u) for f, r, l, u, _, _ in ABLATION_GRID]
    return [(c, count_params(c), count_macs(c, input_samples) / 1e9) for c in configs]
