"""
Training a tiny separator on a laptop
=====================================

Four short two-talker mixtures of harmonic tones are enough to watch the
model learn. The full-size network and a real corpus need far more compute.
"""

import numpy as np

from umamba import mixsim
from umamba.metrics import si_snr
from umamba.model import ModelConfig, UMambaNet
from umamba.profile import count_params
from umamba.train import TrainConfig, fit, train_si_snr

rng = np.random.default_rng(0)
samples = []
for i in range(4):
    sources = 0.5 * mixsim.harmonic_provider(rng, 2, 4000)
    samples.append((f"utt{i}", sources.sum(0), sources))

cfg = ModelConfig(F=32, R=2, L=2, N=8)
model = UMambaNet(cfg, seed=0)
print("parameters:", count_params(cfg))
print("before training: %.2f dB" % train_si_snr(model, samples))


def progress(step, loss):
    if step % 100 == 0:
        print("step %4d  loss %.2f  train SI-SNR %.2f dB" % (step, loss, train_si_snr(model, samples)))
    return False


fit(model, samples, TrainConfig(learning_rate=1e-3, crop_seconds=0.5, max_steps=600,
                                max_epochs=10 ** 6, plateau_patience=0), callback=progress)

# separate the first mixture and match outputs to references by best score
_, mix, refs = samples[0]
est = model.separate(mix)
scores = [[si_snr(e, r) for r in refs] for e in est]
print("per-output SI-SNR against each reference:")
print(np.round(scores, 2))
