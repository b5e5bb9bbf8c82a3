"""Training loop: random crops, PIT SI-SNR objective, Adam, checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .metrics import pit_loss, pit_loss_tensor
from .model import UMambaNet
from .tensor import no_grad
from .wavio import SAMPLE_RATE

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 1.5e-4
    max_epochs: int = 120
    crop_seconds: float = 3.0
    grad_clip: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0
    max_steps: int = -1

    def __post_init__(self):
        self.validate()

    def validate(self, window=1):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if self.crop_seconds * SAMPLE_RATE < window:
            raise ValueError(f"crop of {self.crop_seconds} s is shorter than the encoder window")

    @property
    def crop_samples(self):
        return int(round(self.crop_seconds * SAMPLE_RATE))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(types)
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        cast = {"int": int, "float": float}
        return cls(**{k: cast[types[k]](v) for k, v in d.items()})


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, lr=1.5e-4, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
        self.params = list(params)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.params))]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr:
                p.data = p.data - (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def moments(self):
        return dict(zip(self.names, self.m)), dict(zip(self.names, self.v))

    def scalars(self):
        return {"t": self.t, "lr": self.lr}

    def load(self, m, v, scalars):
        for i, name in enumerate(self.names):
            if m[name].shape != self.m[i].shape:
                raise ValueError(f"optimizer moment {name} has shape {m[name].shape}")
            self.m[i] = m[name].astype(self.m[i].dtype)
            self.v[i] = v[name].astype(self.v[i].dtype)
        self.t = int(scalars["t"])
        self.lr = float(scalars["lr"])


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global norm is at most ``max_norm``.

    Returns the norm before clipping. A negative ``max_norm`` disables clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm is not None and max_norm >= 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12) if max_norm > 0 else 0.0
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def random_crop(mixture, refs, rng, length):
    """One shared random offset for the mixture and all references.

    Inputs shorter than ``length`` are zero-padded on the right.
    Returns ``(mixture, refs, offset)``.
    """
    mixture = np.asarray(mixture)
    refs = np.asarray(refs)
    n = mixture.shape[-1]
    if refs.shape[-1] != n:
        raise ValueError("mixture and references differ in length")
    if n < length:
        pad = length - n
        return np.pad(mixture, (0, pad)), np.pad(refs, ((0, 0), (0, pad))), 0
    offset = int(rng.integers(0, n - length + 1))
    return mixture[offset:offset + length], refs[:, offset:offset + length], offset


class NonFiniteLoss(RuntimeError):
    pass


def train_step(model: UMambaNet, batch, optimizer: Adam, grad_clip=5.0):
    """One optimization step on ``batch = (ids, mixtures, refs)``.

    Returns ``(loss, grad_norm)`` where the norm is taken before clipping.
    """
    ids, mixtures, refs = batch
    model.zero_grad()
    est = model(mixtures)
    loss, _ = pit_loss_tensor(est, refs)
    if not np.isfinite(loss.item()):
        bad = ids[0]
        for i, sample_id in enumerate(ids):
            if not np.all(np.isfinite(est.data[i])) or not np.all(np.isfinite(refs[i])):
                bad = sample_id
                break
        raise NonFiniteLoss(f"non-finite loss on sample {bad}")
    loss.backward()
    norm = clip_grad_norm(optimizer.params, grad_clip)
    optimizer.step()
    return loss.item(), norm


def validate(model: UMambaNet, samples):
    """Mean PIT SI-SNR (dB) over full-length ``(id, mixture, refs)`` samples."""
    scores = []
    with no_grad():
        for _, mix, refs in samples:
            est = model(mix).data
            loss, _ = pit_loss_tensor(est[None], np.asarray(refs)[None])
            scores.append(-loss.item())
    return float(np.mean(scores))


@dataclass
class FitResult:
    model: UMambaNet
    losses: list
    val_scores: list
    step: int
    best_val: float


class TrainLog:
    """Tab-separated log: step, epoch, loss, grad norm, lr; validation rows flagged ``val``."""

    def __init__(self, path=None, append=False):
        self.path = Path(path) if path else None
        if self.path and not append:
            self.path.write_text("kind\tstep\tepoch\tloss\tgrad_norm\tlr\n")

    def write(self, *cols):
        if self.path:
            with open(self.path, "a") as fh:
                fh.write("\t".join(str(c) for c in cols) + "\n")


def fit(model: UMambaNet, samples, cfg: TrainConfig, val_samples=None, out_dir=None, resume=None, callback=None):
    """Train ``model`` on ``samples``, a list of ``(id, mixture, refs)``.

    With ``out_dir`` set, ``last.ckpt`` is written every ``checkpoint_every``
    steps and at the end, and ``best.ckpt`` whenever validation improves.
    ``resume`` is a path to a checkpoint written by this function; training
    continues exactly where it stopped. ``callback(step, loss)`` runs after
    every step; returning ``True`` ends training.
    """
    if not samples:
        raise ValueError("training set is empty")
    cfg.validate(model.cfg.window)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    names, params = zip(*model.named_parameters())
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, names=names)
    rng = np.random.default_rng(cfg.seed)
    epoch, batch_index, order = 0, 0, None
    best_val, bad_epochs = -math.inf, 0
    if resume is not None:
        ckpt = checkpoint.load(resume)
        model.load_state_dict(ckpt.params)
        st = ckpt.state
        opt.load(ckpt.moments1, ckpt.moments2, st["optimizer"])
        rng.bit_generator.state = st["rng"]
        epoch, batch_index = st["epoch"], st["batch_index"]
        order = np.array(st["order"], dtype=np.int64) if st["order"] is not None else None
        best_val = st["best_val"] if st["best_val"] is not None else -math.inf
        bad_epochs = st["bad_epochs"]
    train_log = TrainLog(out / "train_log.tsv" if out else None, append=resume is not None)
    losses, val_scores = [], []

    def state():
        return {
            "epoch": epoch, "batch_index": batch_index,
            "order": None if order is None else [int(i) for i in order],
            "rng": rng.bit_generator.state, "optimizer": opt.scalars(),
            "best_val": None if best_val == -math.inf else best_val, "bad_epochs": bad_epochs,
            "train": cfg.to_dict(),
        }

    def save(name):
        if out:
            checkpoint.save_model(out / name, model, opt, state())

    stop = False
    while epoch < cfg.max_epochs and not stop:
        if order is None:
            order = rng.permutation(len(samples))
            batch_index = 0
        n_batches = -(-len(samples) // cfg.batch_size)
        while batch_index < n_batches:
            if 0 <= cfg.max_steps <= opt.t:
                stop = True
                break
            chunk = [samples[i] for i in order[batch_index * cfg.batch_size:(batch_index + 1) * cfg.batch_size]]
            crops = [random_crop(mix, refs, rng, cfg.crop_samples) for _, mix, refs in chunk]
            batch = ([c[0] for c in chunk], np.stack([c[0] for c in crops]), np.stack([c[1] for c in crops]))
            loss, norm = train_step(model, batch, opt, cfg.grad_clip)
            batch_index += 1
            losses.append(loss)
            train_log.write("train", opt.t, epoch, f"{loss:.6f}", f"{norm:.6f}", f"{opt.lr:.6g}")
            if cfg.checkpoint_every > 0 and opt.t % cfg.checkpoint_every == 0:
                save("last.ckpt")
            if callback is not None and callback(opt.t, loss):
                stop = True
                break
        if stop:
            break
        if val_samples:
            score = validate(model, val_samples)
            val_scores.append(score)
            train_log.write("val", opt.t, epoch, f"{-score:.6f}", "", f"{opt.lr:.6g}")
            if score > best_val:
                best_val, bad_epochs = score, 0
                save("best.ckpt")
            else:
                bad_epochs += 1
                if cfg.plateau_patience > 0 and bad_epochs >= cfg.plateau_patience:
                    opt.lr *= cfg.plateau_factor
                    bad_epochs = 0
                    log.info("validation plateau: learning rate now %g", opt.lr)
        epoch += 1
        order = None
    save("last.ckpt")
    return FitResult(model, losses, val_scores, opt.t, best_val)


def train_si_snr(model: UMambaNet, samples):
    """Mean PIT SI-SNR over full-length samples, scored with the numpy metric."""
    with no_grad():
        return float(np.mean([-pit_loss(model(mix).data, refs)[0] for _, mix, refs in samples]))
