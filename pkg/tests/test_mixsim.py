import wave

import numpy as np
import pytest

from umamba import mixsim
from umamba.mixsim import RoomConfig, RoomInstance


def schroeder_t60(h, fs=8000):
    # independent oracle: energy decay curve with a -5..-25 dB polyfit
    e = np.cumsum(h[::-1] ** 2)[::-1]
    edc = 10 * np.log10(e / e[0])
    i0 = np.argmax(edc <= -5)
    i1 = np.argmax(edc <= -25)
    slope = np.polyfit(np.arange(i0, i1 + 1) / fs, edc[i0:i1 + 1], 1)[0]
    return -60 / slope


def simple_room(absorption=0.5):
    return RoomInstance(np.array([6.0, 7.0, 3.5]), 0.4, np.array([3.0, 3.5, 1.5]),
                        np.array([[4.2, 3.9, 1.4], [2.0, 2.5, 1.2]]), absorption, absorption)


def test_sabine_example():
    # V = 400 m^3, surface 2 * (100 + 40 + 40) = 360 m^2
    assert mixsim.sabine_absorption((10, 10, 4), 0.2) == pytest.approx(0.161 * 400 / (360 * 0.2), abs=1e-12)
    assert mixsim.sabine_absorption((10, 10, 4), 0.2) == pytest.approx(0.8944, abs=1e-4)


def test_sabine_shape():
    dims = (7.0, 6.0, 3.2)
    a = [mixsim.sabine_absorption(dims, t) for t in np.linspace(0.2, 0.6, 9)]
    assert mixsim.sabine_absorption(dims, 0.5) == pytest.approx(mixsim.sabine_absorption(dims, 0.25) / 2)
    assert all(x > y for x, y in zip(a, a[1:]))


def test_sabine_rejects_impossible_room():
    with pytest.raises(ValueError, match="cannot reach"):
        mixsim.sabine_absorption((2, 2, 2), 0.05)
    with pytest.raises(ValueError):
        mixsim.sabine_absorption((5, 5, 3), 0.0)


def test_room_config_validation():
    with pytest.raises(ValueError):
        RoomConfig(t60=(0.6, 0.2))


def test_sampled_rooms_stay_in_ranges():
    cfg = RoomConfig()
    rng = np.random.default_rng(0)
    t60s = []
    for _ in range(2000):
        room = mixsim.sample_room(rng, cfg, calibrate=False)
        assert 5 <= room.dims[0] <= 10 and 5 <= room.dims[1] <= 10 and 3 <= room.dims[2] <= 4
        assert 0.2 <= room.t60 <= 0.6
        assert 0 < room.absorption < 1
        for pos in np.vstack([room.sources, room.receiver]):
            assert np.all(pos >= 0.1 - 1e-12) and np.all(pos <= room.dims - 0.1 + 1e-12)
        t60s.append(room.t60)
    assert np.mean(t60s) == pytest.approx(0.4, abs=0.01)


def test_sample_room_is_deterministic():
    a = mixsim.sample_room(42, calibrate=False)
    b = mixsim.sample_room(42, calibrate=False)
    assert a.to_dict() == b.to_dict()


def test_free_field_impulse():
    room = simple_room()
    h = mixsim.image_source_rir(room, 0, max_order=0)
    d = np.linalg.norm(room.sources[0] - room.receiver)
    delay = d / 343.0 * 8000
    assert abs(int(np.argmax(np.abs(h))) - round(delay)) <= 1
    # a fractional delay spreads the impulse over its sinc main lobe (worst case sinc(1/2) ~ 0.64)
    amp = 1 / (4 * np.pi * d)
    assert 0.63 * amp <= np.abs(h).max() <= amp * (1 + 1e-9)
    assert np.count_nonzero(np.abs(h) > 0.05 * np.abs(h).max()) <= 12


def test_total_absorption_leaves_direct_path():
    room = simple_room(absorption=1.0)
    np.testing.assert_allclose(mixsim.image_source_rir(room, 0, max_order=10),
                               mixsim.image_source_rir(room, 0, max_order=0), atol=1e-15)


def test_rir_is_causal():
    room = simple_room()
    h = mixsim.image_source_rir(room, 1)
    d = np.linalg.norm(room.sources[1] - room.receiver)
    assert not np.any(h[:int(np.floor(d / 343.0 * 8000))])


def test_rir_truncated_sixty_db_below_direct():
    h = mixsim.image_source_rir(simple_room(0.3), 0)
    assert abs(h[-1]) >= 1e-3 * np.abs(h).max()


def test_image_count():
    # reflection orders up to K in a shoebox: sum over k of (4k^2 + 2) minus one for k = 0
    dist, k = mixsim.image_sources(np.array([5.0, 6.0, 3.0]), np.array([1.0, 2.0, 1.0]), np.array([2.0, 2.0, 2.0]), 3)
    counts = np.bincount(k)
    assert list(counts) == [1, 6, 18, 38]


def test_calibrated_rooms_hit_target_t60():
    for seed in range(4):
        room = mixsim.sample_room(seed)
        for i in range(len(room.sources)):
            assert schroeder_t60(mixsim.image_source_rir(room, i)) == pytest.approx(room.t60, rel=0.2)


def test_edc_estimator_on_exponential_decay():
    fs, t60 = 8000, 0.35
    t = np.arange(int(fs * 0.6)) / fs
    h = np.random.default_rng(0).standard_normal(t.size) * 10 ** (-3 * t / t60)
    assert mixsim.estimate_t60(h) == pytest.approx(t60, rel=0.05)


def test_mixture_bookkeeping(rng):
    room = simple_room()
    dry = mixsim.harmonic_provider(rng, 2, 4000)
    noise = mixsim.white_noise(rng, 4000)
    s = mixsim.make_mixture(dry, noise, room, rng, snr_db=5.0)
    recon = s.reverberant_sources.sum(0) + s.noise
    assert np.abs(recon - s.mixture).max() <= 1e-6 * np.abs(s.mixture).max()
    assert mixsim.measured_snr(s) == pytest.approx(5.0, abs=0.01)
    assert np.abs(s.mixture).max() == pytest.approx(0.9)


def test_noise_free_mixture(rng):
    s = mixsim.make_mixture(mixsim.harmonic_provider(rng, 2, 3000), None, simple_room(), rng)
    np.testing.assert_array_equal(s.mixture, s.reverberant_sources.sum(0))


def test_mixture_crops_to_shortest_and_rejects_silence(rng):
    dry = [np.ones(3000), rng.standard_normal(2500)]
    assert mixsim.make_mixture(dry, None, simple_room(), rng).mixture.shape == (2500,)
    with pytest.raises(ValueError, match="silent"):
        mixsim.make_mixture([np.zeros(100), np.ones(100)], None, simple_room(), rng)


def test_snr_drawn_from_range(rng):
    snrs = [mixsim.make_mixture(mixsim.harmonic_provider(rng, 2, 2000), mixsim.pink_noise(rng, 2000),
                                simple_room(), rng, snr_range=(0, 5)).metadata["snr_db"] for _ in range(5)]
    assert all(0 <= s <= 5 for s in snrs)


def test_pink_noise_spectrum_slopes_down(rng):
    x = mixsim.pink_noise(rng, 2 ** 15)
    p = np.abs(np.fft.rfft(x)) ** 2
    assert p[100:1000].mean() > 5 * p[5000:10000].mean()


def _read_format(path):
    with wave.open(str(path)) as wf:
        return wf.getframerate(), wf.getnchannels(), wf.getsampwidth()


def test_generate_dataset(tmp_path):
    cfg = RoomConfig(max_order=8, calibrate=False)
    m1 = mixsim.generate_dataset(3, 11, tmp_path / "a", room_config=cfg, duration=0.5)
    m2 = mixsim.generate_dataset(3, 11, tmp_path / "b", room_config=cfg, duration=0.5)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    lines = m1.read_text().splitlines()
    assert lines[0].startswith("#umamba-manifest v1") and len(lines) == 4
    for p in (tmp_path / "a").rglob("*.wav"):
        assert _read_format(p) == (8000, 1, 2)
    entries = mixsim.read_manifest(m2)
    mix, refs = mixsim.load_entry(entries[1])
    assert mix.shape == (4000,) and refs.shape == (2, 4000)


def test_dataset_sample_does_not_depend_on_count(tmp_path):
    cfg = RoomConfig(max_order=5, calibrate=False)
    mixsim.generate_dataset(1, 3, tmp_path / "one", room_config=cfg, duration=0.25)
    mixsim.generate_dataset(2, 3, tmp_path / "two", room_config=cfg, duration=0.25)
    assert (tmp_path / "one/mix/000000.wav").read_bytes() == (tmp_path / "two/mix/000000.wav").read_bytes()


def test_wav_provider(tmp_path, rng):
    from umamba.wavio import write_wav
    for i in range(3):
        write_wav(tmp_path / f"u{i}.wav", 0.1 * rng.standard_normal(1000 + 100 * i))
    provider = mixsim.WavDirectoryProvider(tmp_path)
    src = provider(rng, 2, 1200)
    assert src.shape == (2, 1200)
    with pytest.raises(ValueError):
        mixsim.WavDirectoryProvider(tmp_path / "empty")


def test_manifest_version_check(tmp_path):
    (tmp_path / "m.tsv").write_text("#umamba-manifest v9\tid\n")
    with pytest.raises(ValueError, match="version"):
        mixsim.read_manifest(tmp_path / "m.tsv")
