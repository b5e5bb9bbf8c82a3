"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Every check runs at its stated tolerance and runtime budget. The summary
lines appear at the end of the pytest run.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from umamba import functional as Fn
from umamba import mixsim, ssm
from umamba import tensor as T
from umamba.gradcheck import check_directional_gradients, check_gradients, check_module_gradients
from umamba.metrics import pit_loss, pit_loss_tensor, si_snr
from umamba.mamba import Mamba
from umamba.model import ModelConfig, UMambaNet
from umamba.profile import count_macs, count_params
from umamba.train import TrainConfig, fit, train_si_snr

ROOT = Path(__file__).resolve().parents[1]


def report(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
    assert ok, detail


def within(value, target, rel):
    return abs(value - target) <= rel * target


# 1 -------------------------------------------------------------------------
def test_c01_recurrence_convolution_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, f, t = rng.integers(1, 9), rng.integers(1, 5), rng.integers(1, 65)
        M = rng.standard_normal((n, n))
        A = -(M @ M.T) / n - 0.05 * np.eye(n) + 0.3 * (M - M.T) / n
        params = ssm.SsmParams(A, rng.standard_normal((n, f)), rng.standard_normal((f, n)),
                               rng.standard_normal(f), float(rng.uniform(0.01, 1.0)))
        d = params.discretize()
        x = rng.standard_normal((f, t))
        y_rec = ssm.ssm_recurrence(d, x)
        y_conv = ssm.ssm_convolve(ssm.ssm_kernel(d, t), d.D, x)
        worst = max(worst, np.abs(y_rec - y_conv).max())
    elapsed = time.perf_counter() - start
    report(1, "SSM recurrence vs convolution", worst < 1e-6 and elapsed < 10,
           f"max error {worst:.2e} (< 1e-6), {elapsed:.2f} s (< 10 s)")


# 2 -------------------------------------------------------------------------
def test_c02_parallel_scan_matches_sequential():
    rng = np.random.default_rng(202)
    N, F, L = 16, 8, 128
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        A = -np.exp(rng.uniform(-1, 3, (F, N)))
        B, C = rng.standard_normal((2, N, L))
        delta = np.log1p(np.exp(rng.standard_normal((F, L)) - 3))
        x = rng.standard_normal((F, L))
        block = [None, 1, 7, 16, 128][i % 5]
        par = ssm.selective_scan(A, B, C, delta, x, method="parallel", block_size=block)
        seq = ssm.selective_scan(A, B, C, delta, x, method="sequential")
        worst = max(worst, np.abs(par - seq).max())
    elapsed = time.perf_counter() - start
    report(2, "parallel scan vs sequential recurrence", worst < 1e-6 and elapsed < 10,
           f"max error {worst:.2e} (< 1e-6), {elapsed:.2f} s (< 10 s)")


# 3 -------------------------------------------------------------------------
def _op_cases(rng):
    r = rng.standard_normal
    return {
        "add": (lambda a, b: a + b, [r((3, 4)), r((4,))]),
        "mul": (lambda a, b: a * b, [r((3, 4)), r((3, 1))]),
        "div": (lambda a, b: a / (b * b + 1.0), [r((3, 4)), r((3, 4))]),
        "matmul": (T.matmul, [r((3, 4)), r((4, 2))]),
        "exp/log": (lambda a: T.log(T.exp(a) + 1.0), [r((3, 4))]),
        "sqrt/power": (lambda a: T.sqrt(T.power(a, 2.0) + 1.0), [r((3, 4))]),
        "sigmoid": (T.sigmoid, [r((3, 4))]),
        "silu": (T.silu, [r((3, 4))]),
        "softplus": (T.softplus, [r((3, 4))]),
        "relu": (lambda a: T.relu(a + 0.01), [r((3, 4))]),
        "prelu": (lambda a, s: T.prelu(a + 0.01, s), [r((3, 4)), np.array(0.3)]),
        "sum/mean": (lambda a: a.sum(axis=0) * a.mean(axis=1).sum(), [r((3, 4))]),
        "clip": (lambda a: T.clip(a, -0.5, 0.5), [r((3, 4))]),
        "shape ops": (lambda a: T.concat([T.swapaxes(a, 0, 1)[1:], T.pad_last(T.reshape(a, (4, 3)), 1, -1)], 0),
                      [r((3, 4))]),
        "conv1d": (lambda x, w, b: Fn.conv1d(x, w, b, stride=2, padding=2), [r((2, 3, 12)), r((4, 3, 5)), r(4)]),
        "depthwise conv1d": (lambda x, w: Fn.conv1d(x, w, stride=2, padding=2, groups=3), [r((3, 12)), r((3, 1, 5))]),
        "transposed_conv1d": (lambda x, w, b: Fn.transposed_conv1d(x, w, b, stride=3), [r((2, 5)), r((2, 3, 5)), r(3)]),
        "pointwise": (Fn.pointwise, [r((3, 6)), r((4, 3)), r(4)]),
        "layer_norm_channels": (Fn.layer_norm_channels, [r((4, 7)), r(4), r(4)]),
        "selective_scan": (lambda x, d, A, B, C, D: Fn.selective_scan(x, T.softplus(d), -T.exp(A), B, C, D),
                           [r((3, 10)), r((3, 10)), r((3, 4)), r((4, 10)), r((4, 10)), r(3)]),
        "si_snr loss": (lambda e, s: pit_loss_tensor(e, s)[0], [r((2, 2, 40)), r((2, 2, 40))]),
    }


def test_c03_gradient_integrity():
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    op_errors = {name: max(check_gradients(op, args).values()) for name, (op, args) in _op_cases(rng).items()}
    block = Mamba(8, d_state=4, rng=rng)
    xb = T.Tensor(rng.standard_normal((8, 16)))
    probe = T.Tensor(rng.standard_normal((8, 16)))
    op_errors["mamba block"] = max(check_module_gradients(block, lambda: (block(xb) * probe).sum()).values())

    # about 200 frames; references near the initial estimate keep the loss off its clamp
    model = UMambaNet(ModelConfig(F=8, R=2, L=2, N=4), seed=3, dtype=np.float64)
    mix = rng.standard_normal((1, 41 + 20 * 199))
    est = model(mix).data
    refs = est + 0.5 * est.std() * rng.standard_normal(est.shape)
    loss_fn = lambda: pit_loss_tensor(model(mix), refs)[0]  # noqa: E731
    assert abs(loss_fn().item()) < 25, "loss sits on the clamp, gradients would vanish"
    e2e = check_directional_gradients(model, loss_fn)
    elapsed = time.perf_counter() - start
    worst_op = max(op_errors, key=op_errors.get)
    worst_e2e = max(e2e, key=e2e.get)
    ok = op_errors[worst_op] < 1e-4 and e2e[worst_e2e] < 1e-3 and elapsed < 300
    report(3, "gradient integrity", ok,
           f"{len(op_errors)} ops worst {op_errors[worst_op]:.1e} ({worst_op}, < 1e-4); "
           f"end-to-end {len(e2e)} tensors worst {e2e[worst_e2e]:.1e} (< 1e-3); {elapsed:.0f} s (< 300 s)")


# 4 -------------------------------------------------------------------------
def test_c04_pit_optimality():
    rng = np.random.default_rng(404)
    start = time.perf_counter()
    mismatches = 0
    for S in (2, 3, 4):
        for _ in range(200):
            refs = rng.standard_normal((S, 64))
            ests = refs[rng.permutation(S)] * rng.uniform(0.2, 2) + rng.uniform(0.3, 3) * rng.standard_normal((S, 64))
            scores = [[si_snr(ests[j], refs[i]) for j in range(S)] for i in range(S)]
            best, best_perm = -np.inf, None
            for perm in itertools.permutations(range(S)):
                value = sum(scores[i][perm[i]] for i in range(S)) / S
                if value > best:
                    best, best_perm = value, perm
            mismatches += pit_loss(ests, refs) != (-best, best_perm)
    elapsed = time.perf_counter() - start
    report(4, "PIT optimality vs brute force", mismatches == 0 and elapsed < 30,
           f"{mismatches} mismatches in 600 instances, {elapsed:.2f} s (< 30 s)")


# 5 -------------------------------------------------------------------------
PARAM_TARGETS = [  # (label, config overrides, millions, tolerance)
    ("default", {}, 4.4, 0.10),
    ("F=64", {"F": 64}, 1.3, 0.15),
    ("R=12", {"R": 12}, 3.3, 0.15),
    ("R=20", {"R": 20}, 5.5, 0.15),
    ("L=8", {"L": 8}, 4.6, 0.15),
    ("F=192", {"F": 192}, 9.7, 0.15),
]


def test_c05_parameter_counts():
    start = time.perf_counter()
    parts, ok = [], True
    for label, over, target, tol in PARAM_TARGETS:
        n = count_params(ModelConfig(**over)) / 1e6
        good = within(n, target, tol)
        ok &= good
        parts.append(f"{label} {n:.2f}M/{target}M{'' if good else ' (out)'}")
    elapsed = time.perf_counter() - start
    report(5, "parameter counts", ok and elapsed < 1, ", ".join(parts) + f"; {elapsed * 1e3:.0f} ms")


# 6 -------------------------------------------------------------------------
def test_c06_compute_profile():
    start = time.perf_counter()
    default = count_macs(ModelConfig(), 24000) / 1e9
    small = count_macs(ModelConfig(F=64), 24000) / 1e9
    elapsed = time.perf_counter() - start
    ok = within(default, 2.5, 0.20) and within(small, 0.7, 0.25) and elapsed < 1
    report(6, "compute profile (GMACs, 3 s input)", ok,
           f"default {default:.2f} vs 2.5 (+-20%), F=64 {small:.2f} vs 0.7 (+-25%); {elapsed * 1e3:.0f} ms")


# 7 -------------------------------------------------------------------------
def edc_t60(h, fs=8000):
    energy = np.cumsum(h[::-1] ** 2)[::-1]
    edc = 10 * np.log10(energy / energy[0])
    i0, i1 = np.argmax(edc <= -5), np.argmax(edc <= -25)
    slope = np.polyfit(np.arange(i0, i1 + 1) / fs, edc[i0:i1 + 1], 1)[0]
    return -60.0 / slope


def test_c07_room_simulation_fidelity():
    start = time.perf_counter()
    cfg = mixsim.RoomConfig()
    ratios = []
    for seed in range(20):
        room = mixsim.sample_room(np.random.default_rng([707, seed]), cfg)
        for i in range(len(room.sources)):
            ratios.append(edc_t60(mixsim.image_source_rir(room, i, max_order=30)) / room.t60)
    rng = np.random.default_rng(708)
    violations = 0
    for _ in range(10000):
        r = mixsim.sample_room(rng, cfg, calibrate=False)
        inside = (5 <= r.dims[0] <= 10 and 5 <= r.dims[1] <= 10 and 3 <= r.dims[2] <= 4 and 0.2 <= r.t60 <= 0.6
                  and np.all(r.sources >= 0.1 - 1e-12) and np.all(r.sources <= r.dims - 0.1 + 1e-12)
                  and 0 < r.absorption < 1)
        violations += not inside
    elapsed = time.perf_counter() - start
    ratios = np.array(ratios)
    ok = np.all(np.abs(ratios - 1) <= 0.2) and violations == 0 and elapsed < 120
    report(7, "room simulation fidelity", ok,
           f"EDC T60 / target in [{ratios.min():.3f}, {ratios.max():.3f}] over 20 rooms x 2 sources (+-20%); "
           f"{violations} range violations in 1e4 draws; {elapsed:.0f} s (< 120 s)")


# 8 -------------------------------------------------------------------------
def desk_mixtures(n=4, seconds=0.5, seed=808):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        src = 0.5 * mixsim.harmonic_provider(rng, 2, int(seconds * 8000))
        out.append((f"desk{i}", src.sum(0), src))
    return out


def test_c08_desk_scale_trainability():
    samples = desk_mixtures()
    model = UMambaNet(ModelConfig(F=32, R=2, L=2, N=8), seed=0)
    cfg = TrainConfig(learning_rate=1e-3, crop_seconds=0.5, max_epochs=10 ** 6, max_steps=2000,
                      plateau_patience=0, seed=0)
    history = []

    def check(step, loss):
        if step % 50 == 0:
            history.append((step, train_si_snr(model, samples)))
            return history[-1][1] >= 10.0
        return False

    start = time.perf_counter()
    result = fit(model, samples, cfg, callback=check)
    final = train_si_snr(model, samples)
    elapsed = time.perf_counter() - start
    ok = final >= 10.0 and result.step <= 2000 and elapsed < 1800
    report(8, "desk-scale trainability", ok,
           f"train SI-SNR {final:.2f} dB (>= 10) after {result.step} steps (<= 2000), {elapsed:.0f} s (< 1800 s)")


# 9 -------------------------------------------------------------------------
def test_c09_determinism_and_resume(tmp_path):
    samples = desk_mixtures(5, 0.3, seed=909)
    val = desk_mixtures(2, 0.3, seed=910)
    mcfg = ModelConfig(F=8, R=2, L=2, N=4)

    def cfg(steps):
        return TrainConfig(batch_size=2, learning_rate=1e-3, crop_seconds=0.2, max_epochs=100,
                           max_steps=steps, plateau_patience=1, seed=9)

    a = fit(UMambaNet(mcfg, seed=1), samples, cfg(9), val, tmp_path / "a")
    b = fit(UMambaNet(mcfg, seed=1), samples, cfg(9), val, tmp_path / "b")
    fit(UMambaNet(mcfg, seed=1), samples, cfg(4), val, tmp_path / "c")
    c = fit(UMambaNet(mcfg, seed=1), samples, cfg(9), val, tmp_path / "c2", resume=tmp_path / "c" / "last.ckpt")
    same_runs = a.losses == b.losses and (tmp_path / "a/last.ckpt").read_bytes() == (tmp_path / "b/last.ckpt").read_bytes()
    same_resume = c.losses == a.losses[4:] and \
        (tmp_path / "a/last.ckpt").read_bytes() == (tmp_path / "c2/last.ckpt").read_bytes()
    report(9, "determinism and resume", same_runs and same_resume,
           f"repeat run bit-identical: {same_runs}; resume from step 4 identical to uninterrupted run: {same_resume}")


# 10 ------------------------------------------------------------------------
def test_c10_non_reproducibility_statement():
    readme = (ROOT / "README.md").read_text()
    needed = ["8.50", "8.62", "17.67", "not reproduced", "Libri2Mix", "120 epochs", "not acceptance targets"]
    missing = [s for s in needed if s not in readme]
    report(10, "headline-results scope statement", not missing,
           "README states the full-corpus benchmark numbers are out of scope" if not missing
           else f"README lacks {missing}")
