"""Reverberant two-speaker mixture simulation.

Rooms are shoeboxes sampled from fixed ranges; impulse responses come from
the image-source method with one uniform wall absorption; sources are
convolved with their impulse responses and summed with scaled noise.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve

from .wavio import SAMPLE_RATE, read_wav, write_wav

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81
MANIFEST_VERSION = "v1"


@dataclass
class RoomConfig:
    """Sampling ranges; every pair is ``(low, high)`` of a uniform draw."""

    length: tuple = (5.0, 10.0)
    width: tuple = (5.0, 10.0)
    height: tuple = (3.0, 4.0)
    t60: tuple = (0.2, 0.6)
    receiver_offset: tuple = (-0.2, 0.2)
    receiver_height: tuple = (0.9, 1.8)
    source_height: tuple = (0.9, 1.8)
    source_distance: tuple = (0.66, 2.0)
    azimuth: tuple = (0.0, 2 * np.pi)
    snr_db: tuple = (0.0, 5.0)
    wall_margin: float = 0.1
    n_sources: int = 2
    max_order: int = 30
    calibrate: bool = True

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (tuple, list)):
                lo, hi = (float(v) for v in value)
                if lo > hi:
                    raise ValueError(f"{f.name}: lower bound {lo} exceeds upper bound {hi}")
                setattr(self, f.name, (lo, hi))
        if self.t60[0] <= 0:
            raise ValueError("T60 must be positive")
        if self.n_sources < 1:
            raise ValueError("need at least one source")


@dataclass
class RoomInstance:
    dims: np.ndarray
    t60: float
    receiver: np.ndarray
    sources: np.ndarray
    absorption: float
    sabine_absorption: float = 0.0
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    azimuths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self):
        return {
            "dims": [float(v) for v in self.dims],
            "t60": float(self.t60),
            "receiver": [float(v) for v in self.receiver],
            "sources": [[float(v) for v in s] for s in self.sources],
            "absorption": float(self.absorption),
            "sabine_absorption": float(self.sabine_absorption),
        }


@dataclass
class MixtureSample:
    mixture: np.ndarray
    reverberant_sources: np.ndarray
    noise: np.ndarray
    metadata: dict


def sabine_absorption(dims, t60):
    """Uniform absorption coefficient from Sabine's formula ``T60 = 0.161 V / (S a)``.

    Raises
    ------
    ValueError
        If the implied coefficient is not below 1 (room too small for the
        requested reverberation time) or ``t60`` is not positive.
    """
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    L, W, H = (float(v) for v in dims)
    volume = L * W * H
    surface = 2.0 * (L * W + L * H + W * H)
    alpha = 0.161 * volume / (surface * t60)
    if alpha >= 1.0:
        raise ValueError(f"room {L:.2f}x{W:.2f}x{H:.2f} m cannot reach T60={t60:.3f} s (absorption {alpha:.3f} >= 1)")
    return alpha


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_room(seed=None, config: RoomConfig = None, calibrate=None):
    """Draw a room, receiver and source placement.

    Sources sit at the drawn distance and azimuth from the receiver and are
    clamped ``wall_margin`` inside the walls. With calibration enabled the
    Sabine absorption is refined so the simulated decay matches ``t60``
    (see :func:`calibrate_absorption`).
    """
    cfg = config or RoomConfig()
    rng = _rng(seed)
    u = rng.uniform
    dims = np.array([u(*cfg.length), u(*cfg.width), u(*cfg.height)])
    t60 = u(*cfg.t60)
    receiver = np.array([
        dims[0] / 2 + u(*cfg.receiver_offset),
        dims[1] / 2 + u(*cfg.receiver_offset),
        u(*cfg.receiver_height),
    ])
    sources, dists, azs = [], [], []
    lo = cfg.wall_margin
    for _ in range(cfg.n_sources):
        height = u(*cfg.source_height)
        dist = u(*cfg.source_distance)
        az = u(*cfg.azimuth)
        pos = np.array([receiver[0] + dist * np.cos(az), receiver[1] + dist * np.sin(az), height])
        sources.append(np.clip(pos, lo, dims - lo))
        dists.append(dist)
        azs.append(az)
    receiver = np.clip(receiver, lo, dims - lo)
    alpha = sabine_absorption(dims, t60)
    room = RoomInstance(dims, t60, receiver, np.array(sources), alpha, alpha, np.array(dists), np.array(azs))
    if cfg.calibrate if calibrate is None else calibrate:
        room = calibrate_absorption(room, max_order=cfg.max_order)
    return room


# -- image sources ----------------------------------------------------------------
def image_sources(dims, source, receiver, max_order):
    """Image positions' distances to the receiver and their reflection counts."""
    per_axis = []
    r = np.arange(-max_order - 1, max_order + 2)
    for ax in range(3):
        n = np.repeat(r, 2)
        p = np.tile([0, 1], len(r))
        pos = (1 - 2 * p) * source[ax] + 2 * n * dims[ax]
        k = np.abs(n - p) + np.abs(n)
        keep = k <= max_order
        per_axis.append((pos[keep] - receiver[ax], k[keep]))
    (x, kx), (y, ky), (z, kz) = per_axis
    order = kx[:, None, None] + ky[None, :, None] + kz[None, None, :]
    sel = order <= max_order
    ix, iy, iz = np.nonzero(sel)
    dist = np.sqrt(x[ix] ** 2 + y[iy] ** 2 + z[iz] ** 2)
    return dist, order[sel]


def _fractional_delay_taps(delays):
    """Hann-windowed sinc taps: ``(first index, taps[n_images, SINC_TAPS])``."""
    half = SINC_TAPS // 2
    base = np.floor(delays).astype(np.int64)
    offsets = np.arange(-half, half + 1)
    t = offsets[None, :] - (delays - base)[:, None]
    window = 0.5 * (1.0 + np.cos(np.pi * t / (half + 1)))
    return base - half, np.sinc(t) * window


class _ImageResponse:
    """Image-source response split by reflection count.

    ``parts[k]`` is the waveform of all images with ``k`` reflections at
    unit wall reflectance, so the response for absorption ``a`` is
    ``sum_k (1 - a)^(k/2) parts[k]``. Geometry and sinc taps are computed
    once, which makes sweeping the absorption cheap.
    """

    def __init__(self, room, source_index, fs, max_order, c):
        if max_order < 0:
            raise ValueError("max_order must be nonnegative")
        src = np.asarray(room.sources[source_index], dtype=float)
        dist, k = image_sources(np.asarray(room.dims, float), src, np.asarray(room.receiver, float), max_order)
        delays = dist / c * fs
        start, taps = _fractional_delay_taps(delays)
        length = int(np.ceil(delays.max())) + SINC_TAPS
        idx = start[:, None] + np.arange(SINC_TAPS)[None, :]
        weights = taps / (4 * np.pi * dist)[:, None]
        valid = idx >= 0
        rows = np.broadcast_to(k[:, None], idx.shape)[valid]
        self.parts = np.zeros((max_order + 1, length))
        np.add.at(self.parts, (rows, idx[valid]), weights[valid])
        self.direct = int(np.floor(delays.min()))

    def response(self, absorption):
        beta = np.sqrt(max(1.0 - absorption, 0.0))
        gains = beta ** np.arange(len(self.parts))
        gains[0] = 1.0
        h = gains @ self.parts
        h[: self.direct] = 0.0
        peak = np.abs(h).max()
        above = np.nonzero(np.abs(h) >= peak * 1e-3)[0]
        return h[: above[-1] + 1]


def image_source_rir(room: RoomInstance, source_index=0, fs=SAMPLE_RATE, max_order=30, c=SPEED_OF_SOUND):
    """Room impulse response from the image-source method.

    Every image up to ``max_order`` reflections adds a fractionally delayed
    impulse of amplitude ``(1 - a)^(k/2) / (4 pi d)``. Samples before the
    direct-path delay are zero and the response ends at the last sample
    within 60 dB of the direct-path peak.
    """
    return _ImageResponse(room, source_index, fs, max_order, c).response(room.absorption)


# -- decay analysis -----------------------------------------------------------------
def schroeder_edc(h):
    """Backward-integrated energy decay curve in dB, normalized to 0 dB at t=0."""
    e = np.asarray(h, dtype=float) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def estimate_t60(h, fs=SAMPLE_RATE, lo_db=-5.0, hi_db=-25.0):
    """T60 from a least-squares line through the EDC between ``lo_db`` and ``hi_db``."""
    edc = schroeder_edc(h)
    below_lo = np.nonzero(edc <= lo_db)[0]
    below_hi = np.nonzero(edc <= hi_db)[0]
    if not len(below_hi):
        raise ValueError(f"decay never reaches {hi_db} dB")
    i0, i1 = below_lo[0], below_hi[0]
    if i1 - i0 < 2:
        raise ValueError("too few samples in the fit range")
    t = np.arange(i0, i1 + 1) / fs
    y = edc[i0:i1 + 1]
    tc = t - t.mean()
    slope = np.dot(tc, y - y.mean()) / np.dot(tc, tc)
    if slope >= 0:
        raise ValueError("energy decay curve is not decreasing")
    return -60.0 / slope


def calibrate_absorption(room: RoomInstance, max_order=30, fs=SAMPLE_RATE, c=SPEED_OF_SOUND):
    """Refine the absorption so simulated impulse responses have the room's T60.

    With uniform walls and only positive reflections the image-source
    decay is not exponential, and the Sabine coefficient misses the target
    by up to ~40 %. This finds the absorption whose responses (averaged
    in log T60 over all sources) match ``room.t60``, taking the root
    closest to the Sabine value. Returns a new :class:`RoomInstance`;
    if no root is found the room is returned unchanged with a warning.
    """
    models = [_ImageResponse(room, i, fs, max_order, c) for i in range(len(room.sources))]

    def mismatch(alpha):
        try:
            return np.mean([np.log(estimate_t60(m.response(alpha), fs) / room.t60) for m in models])
        except ValueError:
            return np.nan

    start = room.sabine_absorption or room.absorption
    grid = np.unique(np.clip(start * np.geomspace(0.25, 4.0, 25), 1e-3, 0.995))
    values = np.array([mismatch(a) for a in grid])
    # T60 falls as absorption rises: look for + -> - crossings
    crossings = [i for i in range(len(grid) - 1)
                 if np.isfinite(values[i]) and np.isfinite(values[i + 1]) and values[i] >= 0 > values[i + 1]]
    if not crossings:
        log.warning("T60 calibration found no root for %.3f s; keeping absorption %.3f", room.t60, room.absorption)
        return room
    i = min(crossings, key=lambda j: abs(np.log(grid[j] / start)))
    alpha = brentq(mismatch, grid[i], grid[i + 1], xtol=1e-6)
    return dataclasses.replace(room, absorption=float(alpha))


# -- signals ------------------------------------------------------------------
def harmonic_source(rng, n_samples, fs=SAMPLE_RATE):
    """A dry test source: harmonic tones with random pitch, onsets and glides."""
    rng = _rng(rng)
    t = np.arange(n_samples) / fs
    out = np.zeros(n_samples)
    n_notes = rng.integers(2, 5)
    for _ in range(n_notes):
        f0 = rng.uniform(90.0, 320.0)
        glide = rng.uniform(-0.15, 0.15)
        onset = rng.uniform(0.0, 0.6) * n_samples
        dur = rng.uniform(0.3, 0.8) * n_samples
        env = np.clip((np.arange(n_samples) - onset) / (0.02 * fs), 0, 1)
        env *= np.clip((onset + dur - np.arange(n_samples)) / (0.05 * fs), 0, 1)
        phase = 2 * np.pi * np.cumsum(f0 * (1.0 + glide * t / max(t[-1], 1e-9))) / fs
        for h in range(1, 12):
            if f0 * h * (1 + abs(glide)) >= fs / 2:
                break
            out += env * rng.uniform(0.3, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    if not np.any(out):
        out[rng.integers(0, n_samples)] = 1.0
    return out / np.abs(out).max()


def harmonic_provider(rng, n_sources, n_samples, fs=SAMPLE_RATE):
    return np.stack([harmonic_source(rng, n_samples, fs) for _ in range(n_sources)])


class WavDirectoryProvider:
    """Draws distinct utterances from a directory of 8 kHz mono WAV files."""

    def __init__(self, directory):
        self.files = sorted(Path(directory).glob("*.wav"))
        if len(self.files) < 2:
            raise ValueError(f"{directory} needs at least two WAV files")

    def __call__(self, rng, n_sources, n_samples, fs=SAMPLE_RATE):
        picks = _rng(rng).choice(len(self.files), size=n_sources, replace=False)
        out = np.zeros((n_sources, n_samples))
        for i, p in enumerate(picks):
            sr, x = read_wav(self.files[p])
            if sr != fs:
                raise ValueError(f"{self.files[p]}: sample rate {sr}, expected {fs}")
            x = x[:n_samples]
            out[i, : len(x)] = x
        return out


def white_noise(rng, n_samples):
    return _rng(rng).standard_normal(n_samples)


def pink_noise(rng, n_samples):
    spec = np.fft.rfft(_rng(rng).standard_normal(n_samples))
    f = np.arange(len(spec), dtype=float)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n_samples)
    return x / x.std()


def noise_source(kind="white", directory=None):
    """Return a noise generator ``(rng, n_samples) -> array``."""
    if kind == "white":
        return white_noise
    if kind == "pink":
        return pink_noise
    if kind == "wav":
        files = sorted(Path(directory).glob("*.wav"))
        if not files:
            raise ValueError(f"no WAV files in {directory}")

        def from_files(rng, n_samples):
            _, x = read_wav(files[_rng(rng).integers(len(files))])
            reps = -(-n_samples // len(x))
            return np.tile(x, reps)[:n_samples]

        return from_files
    raise ValueError(f"unknown noise kind {kind!r}")


# -- mixing -------------------------------------------------------------------
def make_mixture(sources, noise, room: RoomInstance, rng=None, snr_db=None, snr_range=(0.0, 5.0),
                 max_order=30, peak=0.9, fs=SAMPLE_RATE):
    """Reverberate every source, add scaled noise and peak-normalize.

    ``noise=None`` (or an all-zero array) gives a noise-free mixture. The
    same gain is applied to all components, so the stored references and
    noise always sum to the stored mixture.
    """
    rng = _rng(rng)
    sources = [np.asarray(s, dtype=float) for s in sources]
    n = min(len(s) for s in sources)
    sources = np.stack([s[:n] for s in sources])
    for i, s in enumerate(sources):
        if not np.any(s):
            raise ValueError(f"source {i} is silent")
    reverberant = np.stack([
        fftconvolve(s, image_source_rir(room, i, fs=fs, max_order=max_order))[:n]
        for i, s in enumerate(sources)
    ])
    speech = reverberant.sum(axis=0)
    if snr_db is None:
        snr_db = float(rng.uniform(*snr_range))
    if noise is None or not np.any(noise):
        noise_part = np.zeros(n)
        noise_gain = 0.0
    else:
        noise = np.resize(np.asarray(noise, dtype=float), n)
        noise_gain = np.sqrt(np.dot(speech, speech) / (np.dot(noise, noise) * 10 ** (snr_db / 10)))
        noise_part = noise_gain * noise
    mixture = speech + noise_part
    gain = peak / np.abs(mixture).max()
    reverberant = reverberant * gain
    noise_part = noise_part * gain
    mixture = reverberant.sum(axis=0) + noise_part
    meta = {
        "room": room.to_dict(),
        "snr_db": float(snr_db) if noise_gain else None,
        "noise_gain": float(noise_gain * gain),
        "peak_gain": float(gain),
    }
    return MixtureSample(mixture, reverberant, noise_part, meta)


def measured_snr(sample: MixtureSample):
    speech = sample.reverberant_sources.sum(axis=0)
    return 10 * np.log10(np.dot(speech, speech) / np.dot(sample.noise, sample.noise))


# -- datasets -------------------------------------------------------------------------
def sample_seed(master_seed, index):
    """Independent per-sample seed, so generation order never changes output."""
    return np.random.SeedSequence([int(master_seed), int(index)])


def generate_dataset(n, seed, out_dir, provider=None, noise="white", noise_dir=None,
                     room_config: RoomConfig = None, duration=4.0, fs=SAMPLE_RATE):
    """Write ``n`` simulated mixtures as WAV files plus a tab-separated manifest.

    Layout under ``out_dir``: ``mix/``, ``s1/`` .. ``sS/``, ``noise/`` and
    ``manifest.tsv``. Output is a pure function of the arguments.
    """
    cfg = room_config or RoomConfig()
    provider = provider or harmonic_provider
    noise_fn = noise_source(noise, noise_dir) if noise != "none" else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_samples = int(round(duration * fs))
    rows = []
    for i in range(n):
        ss = sample_seed(seed, i)
        rng = np.random.default_rng(ss)
        room = sample_room(rng, cfg)
        dry = provider(rng, cfg.n_sources, n_samples)
        if len(dry) < 2 and cfg.n_sources >= 2:
            raise ValueError("source provider must yield at least two utterances")
        nz = noise_fn(rng, n_samples) if noise_fn else None
        sample = make_mixture(dry, nz, room, rng, snr_range=cfg.snr_db, max_order=cfg.max_order, fs=fs)
        uid = f"{i:06d}"
        mix_path = Path("mix") / f"{uid}.wav"
        src_paths = [Path(f"s{j + 1}") / f"{uid}.wav" for j in range(cfg.n_sources)]
        noise_path = Path("noise") / f"{uid}.wav"
        write_wav(out / mix_path, sample.mixture, fs)
        for p, s in zip(src_paths, sample.reverberant_sources):
            write_wav(out / p, s, fs)
        write_wav(out / noise_path, sample.noise, fs)
        dims = "x".join(f"{v:.4f}" for v in room.dims)
        snr = "inf" if sample.metadata["snr_db"] is None else f"{sample.metadata['snr_db']:.4f}"
        rows.append([uid, str(mix_path), ",".join(map(str, src_paths)), str(noise_path), dims,
                     f"{room.t60:.4f}", snr, f"{seed}:{i}"])
    manifest = out / "manifest.tsv"
    write_manifest(manifest, rows)
    return manifest


MANIFEST_COLUMNS = ["id", "mixture", "sources", "noise", "room_dims", "t60", "snr_db", "seed"]


def write_manifest(path, rows):
    lines = [f"#umamba-manifest {MANIFEST_VERSION}\t" + "\t".join(MANIFEST_COLUMNS)]
    lines += ["\t".join(r) for r in rows]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as err:
        raise OSError(f"cannot write manifest {path}: {err}") from err


def read_manifest(path):
    """Parse a manifest into dicts with absolute paths."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("#umamba-manifest"):
        raise ValueError(f"{path}: missing manifest header")
    version = lines[0].split()[1]
    if version != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {version}")
    base = path.parent
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        cols = line.split("\t")
        row = dict(zip(MANIFEST_COLUMNS, cols))
        row["mixture"] = base / row["mixture"]
        row["sources"] = [base / p for p in row["sources"].split(",")]
        row["noise"] = base / row["noise"]
        entries.append(row)
    return entries


def load_entry(entry):
    """Load ``(mixture, references)`` arrays for one manifest entry."""
    _, mix = read_wav(entry["mixture"])
    refs = np.stack([read_wav(p)[1] for p in entry["sources"]])
    return mix, refs
