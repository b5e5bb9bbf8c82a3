"""
How big is the network?
=======================

Parameter and multiply-accumulate counts come from the configuration alone,
so no weights are allocated. The MAC tally of a real forward pass agrees.
"""

import numpy as np

from umamba import functional as F
from umamba.model import ModelConfig, UMambaNet
from umamba.profile import ABLATION_GRID, count_macs, count_params

# each grid row carries the reference parameter count and GMACs alongside the config
print("F    R   L  upsampling        params (ref)       GMACs (ref)")
for f, r, l, up, ref_params, ref_gmacs in ABLATION_GRID:
    cfg = ModelConfig(F=f, R=r, L=l, upsampling=up)
    print("%-4d %-3d %-2d %-16s %6.2f M (%.1f)  %6.2f (%.1f)"
          % (f, r, l, up, count_params(cfg) / 1e6, ref_params, count_macs(cfg, 24000) / 1e9, ref_gmacs))

small = ModelConfig(F=16, R=2, L=2, N=4)
n = 4000
with F.mac_tally() as tally:
    UMambaNet(small).separate(np.random.default_rng(0).standard_normal(n))
print("tallied %d MACs, counted %d" % (sum(tally.values()), count_macs(small, n)))
