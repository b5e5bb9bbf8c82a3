"""
Three ways to run a state space layer
=====================================

A discretized linear state space model can be run step by step, as one long
convolution, or as a parallel prefix scan. All three give the same output.
"""

import numpy as np

from umamba import ssm

rng = np.random.default_rng(0)

# a stable continuous system with 8 states driving 2 channels
M = rng.standard_normal((8, 8))
A = -(M @ M.T) / 8 - 0.1 * np.eye(8)
params = ssm.SsmParams(A, rng.standard_normal((8, 2)), rng.standard_normal((2, 8)), np.zeros(2), 0.1)
disc = params.discretize()

x = rng.standard_normal((2, 200))
y_step = ssm.ssm_recurrence(disc, x)
y_conv = ssm.ssm_convolve(ssm.ssm_kernel(disc, x.shape[-1]), disc.D, x)
print("recurrence vs convolution:", np.abs(y_step - y_conv).max())

# input-dependent step sizes break time invariance, so the convolution view is
# gone, but the scan still matches the sequential loop
F, N, L = 4, 16, 256
A_sel = -np.exp(rng.uniform(-1, 2, (F, N)))
B, C = rng.standard_normal((2, N, L))
delta = np.log1p(np.exp(rng.standard_normal((F, L)) - 3))
u = rng.standard_normal((F, L))
seq = ssm.selective_scan(A_sel, B, C, delta, u, method="sequential")
par = ssm.selective_scan(A_sel, B, C, delta, u, method="parallel")
print("selective scan, parallel vs sequential:", np.abs(seq - par).max())
