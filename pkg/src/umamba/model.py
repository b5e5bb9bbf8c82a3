"""U-Mamba separation network: encoder, stacked U-Mamba blocks, masks, decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import functional as F
from . import tensor as T
from .mamba import Mamba
from .nn import Conv1d, LayerNorm, Module, Pointwise, PReLU, TransposedConv1d, parameter
from .tensor import Tensor, no_grad

UPSAMPLING_MODES = ("transposed-conv", "nearest", "linear")
SAMPLE_RATE = 8000


@dataclass
class ModelConfig:
    """Network hyperparameters. Defaults reproduce the reference model size.

    ``R`` is the number of stacked U-Mamba blocks. ``expand``, ``d_conv``,
    ``dt_rank``, ``down_kernel`` and ``up_kernel`` fix the block internals.
    """

    F: int = 128
    window: int = 41
    hop: int = 20
    L: int = 4
    R: int = 16
    S: int = 2
    N: int = 16
    upsampling: str = "transposed-conv"
    bottleneck_channels: int = 0
    expand: int = 4
    d_conv: int = 4
    dt_rank: int = 0
    down_kernel: int = 5
    up_kernel: int = 4

    def __post_init__(self):
        if self.bottleneck_channels == 0:
            self.bottleneck_channels = self.F
        if self.dt_rank == 0:
            self.dt_rank = math.ceil(self.F / 16)
        self.validate()

    def validate(self):
        for name in ("F", "window", "hop", "L", "R", "S", "N", "expand", "d_conv", "dt_rank", "down_kernel", "up_kernel"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hop > self.window:
            raise ValueError(f"hop ({self.hop}) must not exceed window ({self.window})")
        if self.upsampling not in UPSAMPLING_MODES:
            raise ValueError(f"unknown upsampling mode {self.upsampling!r}; expected one of {UPSAMPLING_MODES}")
        if self.bottleneck_channels != self.F:
            raise ValueError("bottleneck_channels must equal F: the block residual adds the bottleneck path to its input width")
        if self.up_kernel < 2:
            raise ValueError("transposed-conv upsampling needs up_kernel >= stride 2")

    def frames(self, samples):
        return (samples - self.window) // self.hop + 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            kwargs[k] = v if k == "upsampling" else int(v)
        return cls(**kwargs)


def level_lengths(T_frames, L):
    """Frame counts ``D^(0..L)``: each downsampling halves with ceil."""
    lengths = [T_frames]
    for _ in range(L):
        lengths.append(-(-lengths[-1] // 2))
    return lengths


def upsample(x, mode, target_length, weight=None, bias=None):
    """Double the frame rate of ``x`` (..., F, n) and fit it to ``target_length``.

    ``transposed-conv`` uses a learnable depthwise stride-2 transposed
    convolution (``weight`` of shape ``(F, 1, k)``) and crops ``(k-2)/2``
    frames from the front; ``nearest`` repeats every frame; ``linear``
    interpolates with both endpoints aligned.
    """
    x = T.as_tensor(x)
    n = x.shape[-1]
    if target_length not in (2 * n - 1, 2 * n, 2 * n + 1):
        raise ValueError(f"cannot upsample {n} frames to {target_length}")
    if mode == "transposed-conv":
        if weight is None:
            raise ValueError("transposed-conv upsampling needs a kernel")
        y = F.transposed_conv1d(x, weight, bias, stride=2, groups=x.shape[-2])
        front = (weight.shape[-1] - 2) // 2
        return T.pad_last(y, -front, target_length - (y.shape[-1] - front))
    if mode == "nearest":
        idx = np.minimum(np.arange(target_length) // 2, n - 1)
        return T.take(x, idx, axis=-1)
    if mode == "linear":
        i0, i1, w = F.linear_interp_weights(n, target_length)
        w = Tensor(w.astype(x.dtype))
        lead = int(np.prod(x.shape[:-1], dtype=int))
        F.record_macs("linear_upsample", 2 * lead * target_length)
        return T.take(x, i0, axis=-1) * (1.0 - w) + T.take(x, i1, axis=-1) * w
    raise ValueError(f"unknown upsampling mode {mode!r}")


class UMambaBlock(Module):
    """One U-Net stage followed by a Mamba block, each with a residual.

    bottleneck conv -> LayerNorm -> PReLU gives ``D0``; ``L`` stride-2
    depthwise convolutions with LayerNorm give ``D1..DL``; the upsampling
    path adds each upsampled map to its partner ``D(l-1)``; a PReLU gives
    ``M``, and the block returns ``mamba(M) + M``.
    """

    def __init__(self, cfg: ModelConfig, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        Fc = cfg.F
        self.cfg = cfg
        self.bottleneck = Pointwise(Fc, cfg.bottleneck_channels, rng=rng, dtype=dtype)
        self.bottleneck_norm = LayerNorm(Fc, dtype=dtype)
        self.bottleneck_act = PReLU(dtype=dtype)
        pad = cfg.down_kernel // 2
        self.down = [Conv1d(Fc, Fc, cfg.down_kernel, stride=2, padding=pad, groups=Fc, rng=rng, dtype=dtype)
                     for _ in range(cfg.L)]
        self.down_norm = [LayerNorm(Fc, dtype=dtype) for _ in range(cfg.L)]
        if cfg.upsampling == "transposed-conv":
            self.up = [TransposedConv1d(Fc, Fc, cfg.up_kernel, stride=2, groups=Fc, rng=rng, dtype=dtype)
                       for _ in range(cfg.L)]
        else:
            self.up = []
        self.out_act = PReLU(dtype=dtype)
        self.mamba = Mamba(Fc, d_state=cfg.N, expand=cfg.expand, d_conv=cfg.d_conv, dt_rank=cfg.dt_rank,
                           rng=rng, dtype=dtype)

    def unet(self, x, trace=None):
        """The U-Net branch only; ``trace`` (a dict) collects level maps."""
        cfg = self.cfg
        if x.shape[-2] != cfg.F:
            raise ValueError(f"block expects {cfg.F} channels, got {x.shape[-2]}")
        if x.shape[-1] < 2 ** cfg.L:
            raise ValueError(f"{x.shape[-1]} frames are too few for {cfg.L} halvings (need >= {2 ** cfg.L})")
        d = [self.bottleneck_act(self.bottleneck_norm(self.bottleneck(x)))]
        for conv, norm in zip(self.down, self.down_norm):
            d.append(norm(conv(d[-1])))
        u = d[-1]
        ups = [u]
        for level in range(cfg.L, 0, -1):
            target = d[level - 1].shape[-1]
            if cfg.upsampling == "transposed-conv":
                layer = self.up[level - 1]
                up = upsample(u, cfg.upsampling, target, layer.weight, layer.bias)
            else:
                up = upsample(u, cfg.upsampling, target)
            u = up + d[level - 1]
            ups.append(u)
        if trace is not None:
            trace["D"] = [t.shape for t in d]
            trace["U"] = [t.shape for t in ups]
        return self.out_act(u)

    def forward(self, x):
        m = self.unet(x)
        return self.mamba(m) + m


def umamba_block(M_b, block: UMambaBlock):
    return block(T.as_tensor(M_b))


class UMambaNet(Module):
    """Mask-based separator for ``S`` sources at 8 kHz.

    ``forward`` maps a batch of mixtures ``(..., samples)`` to estimates
    ``(..., S, samples)``.
    """

    def __init__(self, cfg: ModelConfig = None, seed=0, dtype=np.float64):
        cfg = cfg if cfg is not None else ModelConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Conv1d(1, cfg.F, cfg.window, stride=cfg.hop, bias=False, rng=rng, dtype=dtype)
        self.blocks = [UMambaBlock(cfg, rng=rng, dtype=dtype) for _ in range(cfg.R)]
        self.mask_conv = Pointwise(cfg.F, cfg.S * cfg.F, rng=rng, dtype=dtype)
        self.decoder = TransposedConv1d(cfg.F, 1, cfg.window, stride=cfg.hop, bias=False, rng=rng, dtype=dtype)

    @property
    def dtype(self):
        return self.encoder.weight.dtype

    def encode(self, wave, activation=True):
        wave = T.as_tensor(wave, dtype=self.dtype)
        if wave.shape[-1] < self.cfg.window:
            raise ValueError(f"input has {wave.shape[-1]} samples; at least {self.cfg.window} are required")
        x = self.encoder(T.reshape(wave, wave.shape[:-1] + (1, wave.shape[-1])))
        return T.relu(x) if activation else x

    def estimate_masks(self, M):
        masks = T.relu(self.mask_conv(M))
        return T.reshape(masks, M.shape[:-2] + (self.cfg.S, self.cfg.F, M.shape[-1]))

    def decode(self, masked, length):
        y = self.decoder(masked)
        y = T.reshape(y, y.shape[:-2] + (y.shape[-1],))
        return T.fit_length(y, length)

    def forward(self, wave):
        wave = T.as_tensor(wave, dtype=self.dtype)
        X = self.encode(wave)
        M = X
        for block in self.blocks:
            M = block(M)
        masks = self.estimate_masks(M)
        Xs = T.reshape(X, X.shape[:-2] + (1,) + X.shape[-2:])
        return self.decode(masks * Xs, wave.shape[-1])

    def separate(self, mixture):
        """Separate one mixture (1-D array) into an ``(S, samples)`` array."""
        mixture = np.asarray(mixture, dtype=self.dtype)
        if mixture.ndim != 1:
            raise ValueError("separate expects a single 1-D mixture")
        with no_grad():
            return self.forward(mixture).data.copy()


def separate(mixture, model: UMambaNet):
    return model.separate(mixture)
