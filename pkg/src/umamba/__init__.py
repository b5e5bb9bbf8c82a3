"""Time-domain two-speaker separation with U-Net and selective state-space blocks.

Submodules are imported on demand so that ``umamba.cli`` can configure
threading before numpy loads:

``tensor``, ``functional``, ``nn``
    reverse-mode autodiff over numpy and the layers built on it
``ssm``
    discretization, recurrence, convolution kernels and parallel scans
``mamba``, ``model``, ``profile``
    the separation network and its analytic size/compute counts
``metrics``
    SI-SNR, SDR, SIR, permutation-invariant loss, spectrograms
``mixsim``
    image-source room simulation and dataset generation
``train``, ``checkpoint``
    optimization loop and binary checkpoints
"""

__version__ = "0.1.0"
