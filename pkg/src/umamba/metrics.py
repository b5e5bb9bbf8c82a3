"""Separation objective and SNR-family evaluation metrics.

All metrics are reported in dB and clamped to ``[-30, 30]``.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import tensor as T
from .tensor import Tensor

CLAMP_DB = 30.0
MAX_PIT_SOURCES = 6


def _clamp_db(num, den):
    if den <= 0.0:
        return CLAMP_DB if num > 0.0 else -CLAMP_DB
    if num <= 0.0:
        return -CLAMP_DB
    return float(np.clip(10.0 * np.log10(num / den), -CLAMP_DB, CLAMP_DB))


def _check_pair(est, ref):
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    return est, ref


def si_snr(est, ref):
    """Scale-invariant SNR of ``est`` against ``ref`` (zero-mean convention).

    Raises
    ------
    ValueError
        If ``ref`` has no energy after mean removal.
    """
    est, ref = _check_pair(est, ref)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0.0:
        raise ValueError("reference has zero energy after mean removal")
    target = (np.dot(est, ref) / ref_energy) * ref
    noise = est - target
    return _clamp_db(np.dot(target, target), np.dot(noise, noise))


def sdr(est, ref):
    """Plain signal-to-distortion ratio ``||ref||^2 / ||est - ref||^2`` (no projection)."""
    est, ref = _check_pair(est, ref)
    if not np.any(ref):
        raise ValueError("reference is silent")
    err = est - ref
    return _clamp_db(np.dot(ref, ref), np.dot(err, err))


def si_snri(est, ref, mixture):
    return si_snr(est, ref) - si_snr(mixture, ref)


def sdri(est, ref, mixture):
    return sdr(est, ref) - sdr(mixture, ref)


def _reference_matrix(refs):
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[0] < 2:
        raise ValueError("SIR needs at least two reference signals")
    if np.linalg.matrix_rank(refs) < refs.shape[0]:
        raise ValueError("reference signals are linearly dependent")
    return refs


def sir(est, refs, index):
    """Signal-to-interference ratio of ``est`` for reference ``index``.

    The target is the projection of ``est`` on ``refs[index]``; the
    interference is the rest of its projection on the span of all refs.
    """
    refs = _reference_matrix(refs)
    est = np.asarray(est, dtype=np.float64)
    coef, *_ = np.linalg.lstsq(refs.T, est, rcond=None)
    in_span = refs.T @ coef
    r = refs[index]
    target = (np.dot(est, r) / np.dot(r, r)) * r
    interference = in_span - target
    return _clamp_db(np.dot(target, target), np.dot(interference, interference))


def siri(ests, refs, mixture):
    """Mean SIR improvement over the mixture; ``ests[i]`` is matched to ``refs[i]``."""
    refs = _reference_matrix(refs)
    ests = np.asarray(ests, dtype=np.float64)
    if ests.shape != refs.shape:
        raise ValueError("estimates and references must have the same shape")
    gains = [sir(ests[i], refs, i) - sir(mixture, refs, i) for i in range(len(refs))]
    return float(sum(gains) / len(gains))


def pit_loss(ests, refs):
    """Permutation-invariant negative SI-SNR.

    Every assignment ``perm`` (``ests[perm[i]]`` scored against ``refs[i]``)
    is tried in lexicographic order; the first one reaching the best mean
    wins ties.

    Returns
    -------
    loss : float
        Negated best mean SI-SNR.
    perm : tuple of int
        The best assignment.
    """
    ests = np.asarray(ests, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    S = len(refs)
    if len(ests) != S:
        raise ValueError(f"{len(ests)} estimates for {S} references")
    if S > MAX_PIT_SOURCES:
        raise ValueError(f"exhaustive PIT supports at most {MAX_PIT_SOURCES} sources, got {S}")
    scores = np.array([[si_snr(ests[j], refs[i]) for j in range(S)] for i in range(S)])
    perm, best = _best_permutation(scores)
    return -best, perm


def _best_permutation(scores):
    # scores[i, j]: reference i scored against estimate j
    S = scores.shape[0]
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(S)):
        value = sum(scores[i, perm[i]] for i in range(S)) / S
        if value > best:
            best, best_perm = value, perm
    if best_perm is None:  # every score is NaN
        best_perm = tuple(range(S))
        best = sum(scores[i, i] for i in range(S)) / S
    return best_perm, best


# -- differentiable versions used for training ------------------------------
def si_snr_tensor(est, ref, eps=1e-12):
    """SI-SNR over the last axis of tensors, broadcasting leading axes."""
    est, ref = T.as_tensor(est), T.as_tensor(ref)
    est = est - est.mean(axis=-1, keepdims=True)
    ref = ref - ref.mean(axis=-1, keepdims=True)
    scale = (est * ref).sum(axis=-1, keepdims=True) / ((ref * ref).sum(axis=-1, keepdims=True) + eps)
    target = scale * ref
    noise = est - target
    ratio = ((target * target).sum(axis=-1) + eps) / ((noise * noise).sum(axis=-1) + eps)
    return T.clip(10.0 * T.log10(ratio), -CLAMP_DB, CLAMP_DB)


def pit_loss_tensor(ests, refs):
    """Batch PIT loss for tensors of shape ``(batch, S, samples)``.

    Gradients flow only through the winning assignment of every item.
    Returns the mean loss and the list of chosen permutations.
    """
    ests, refs = T.as_tensor(ests), T.as_tensor(refs)
    B, S = refs.shape[0], refs.shape[1]
    if S > MAX_PIT_SOURCES:
        raise ValueError(f"exhaustive PIT supports at most {MAX_PIT_SOURCES} sources, got {S}")
    e = T.reshape(ests, (B, 1, S, ests.shape[-1]))
    r = T.reshape(refs, (B, S, 1, refs.shape[-1]))
    pair = si_snr_tensor(e, r)  # (B, S_ref, S_est)
    perms = []
    flat_idx = []
    for b in range(B):
        perm, _ = _best_permutation(pair.data[b])
        perms.append(perm)
        flat_idx.extend(b * S * S + i * S + perm[i] for i in range(S))
    picked = T.take(T.reshape(pair, (B * S * S,)), np.array(flat_idx), axis=0)
    return -picked.mean(), perms


def mean_si_snr_tensor(ests, refs):
    loss, _ = pit_loss_tensor(ests, refs)
    return -loss.item()


# -- evaluation reports -------------------------------------------------------------
def evaluate_utterance(ests, refs, mixture):
    """All metrics for one utterance, with estimates aligned by PIT.

    Returns a dict with mean ``si_snr``, ``si_snri``, ``sdri``, ``siri``
    over sources and the chosen ``perm``.
    """
    ests = np.asarray(ests, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    mixture = np.asarray(mixture, dtype=np.float64)
    loss, perm = pit_loss(ests, refs)
    aligned = ests[list(perm)]
    S = len(refs)
    return {
        "si_snr": -loss,
        "si_snri": sum(si_snri(aligned[i], refs[i], mixture) for i in range(S)) / S,
        "sdri": sum(sdri(aligned[i], refs[i], mixture) for i in range(S)) / S,
        "siri": siri(aligned, refs, mixture) if S >= 2 else float("nan"),
        "perm": perm,
    }


REPORT_COLUMNS = ("id", "si_snr", "si_snri", "sdri", "siri", "perm")


def write_report(path, rows):
    """Tab-separated per-utterance report followed by a ``#mean`` summary line.

    Returns the summary means as a dict.
    """
    lines = ["\t".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append("\t".join([str(r["id"])] + [f"{r[k]:.4f}" for k in REPORT_COLUMNS[1:5]]
                               + [",".join(map(str, r["perm"]))]))
    means = {k: float(np.mean([r[k] for r in rows])) if rows else float("nan") for k in REPORT_COLUMNS[1:5]}
    lines.append("\t".join(["#mean"] + [f"{means[k]:.4f}" for k in REPORT_COLUMNS[1:5]] + ["-"]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return means


# -- spectrograms -----------------------------------------------------------------------
SPECTROGRAM_FLOOR_DB = -80.0


def stft_magnitude(wave, fft_size=256, hop=64):
    """Hann-windowed STFT magnitude, shape ``(fft_size // 2 + 1, frames)``."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError("spectrogram expects a 1-D signal")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if not 1 <= hop <= fft_size:
        raise ValueError(f"hop must lie in [1, fft_size], got {hop}")
    if len(wave) < fft_size:
        raise ValueError(f"signal has {len(wave)} samples, shorter than fft_size {fft_size}")
    frames = np.lib.stride_tricks.sliding_window_view(wave, fft_size)[::hop]
    return np.abs(np.fft.rfft(frames * np.hanning(fft_size + 1)[:-1], axis=-1)).T


def spectrogram(wave, fft_size=256, hop=64, floor_db=SPECTROGRAM_FLOOR_DB):
    """Magnitude spectrogram in dB, floored at ``floor_db``."""
    mag = stft_magnitude(wave, fft_size, hop)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, floor_db)


def write_grid(path, grid, floor_db=SPECTROGRAM_FLOOR_DB):
    """Plain-text matrix: ``rows cols`` line, ``floor_db`` line, then one row per line."""
    grid = np.asarray(grid)
    with open(path, "w") as fh:
        fh.write(f"{grid.shape[0]} {grid.shape[1]}\n{floor_db:g}\n")
        np.savetxt(fh, grid, fmt="%.3f")


def read_grid(path):
    with open(path) as fh:
        rows, cols = (int(v) for v in fh.readline().split())
        floor_db = float(fh.readline())
        grid = np.loadtxt(fh, ndmin=2)
    if grid.size == 0:
        grid = grid.reshape(rows, cols)
    if grid.shape != (rows, cols):
        raise ValueError(f"{path}: grid is {grid.shape}, header says {(rows, cols)}")
    return grid, floor_db
