"""
Simulating a reverberant noisy mixture
======================================

Draw a shoebox room, render its impulse responses with the image source
method, check the reverberation time against the target and mix two sources
with noise.
"""

import numpy as np

from umamba import mixsim
from umamba.wavio import SAMPLE_RATE, write_wav

room = mixsim.sample_room(7)
print("room", np.round(room.dims, 2), "target T60 %.3f s" % room.t60)
print("absorption: Sabine %.3f, calibrated %.3f" % (room.sabine_absorption, room.absorption))

for i in range(len(room.sources)):
    h = mixsim.image_source_rir(room, i)
    print("source %d: %.2f m away, %d taps, measured T60 %.3f s"
          % (i, room.distances[i], h.size, mixsim.estimate_t60(h)))

rng = np.random.default_rng(7)
n = 3 * SAMPLE_RATE
dry = mixsim.harmonic_provider(rng, 2, n)
sample = mixsim.make_mixture(dry, mixsim.pink_noise(rng, n), room, rng)
print("mixture SNR %.2f dB" % mixsim.measured_snr(sample))

write_wav("demo_mix.wav", sample.mixture)
print("wrote demo_mix.wav")
