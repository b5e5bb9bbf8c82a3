"""Linear state-space models: discretization, recurrent and convolutional
evaluation, and the input-dependent (selective) scan.

Two storage modes share one interface. In *dense* mode ``A`` is an
``N x N`` matrix; in *diagonal* mode ``A`` holds the ``N`` diagonal entries
and products with it are elementwise.

The selective scan here is the plain numpy forward pass. The differentiable
version used inside the network lives in :mod:`umamba.functional`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SsmParams:
    """Continuous-time parameters of ``h' = A h + B x``, ``y = C h + D x``.

    ``A`` is ``(N, N)`` (dense) or ``(N,)`` (diagonal); ``B`` is ``(N, F)``;
    ``C`` is ``(F, N)``; ``D`` is ``(F,)`` (per-channel skip) or ``(F, F)``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    delta: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        if np.any(np.asarray(self.delta) <= 0):
            raise ValueError("step size delta must be positive")
        n = self.A.shape[0]
        if self.A.ndim == 2 and self.A.shape != (n, n):
            raise ValueError(f"dense A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("B must be (N, F) and C must be (F, N)")

    @property
    def diagonal(self):
        return self.A.ndim == 1

    @property
    def N(self):
        return self.A.shape[0]

    def discretize(self):
        A_bar, B_bar = discretize_bilinear(self.A, self.B, self.delta)
        return DiscreteSsm(A_bar, B_bar, self.C, self.D)


@dataclass
class DiscreteSsm:
    """Discrete system ``h_t = A_bar h_{t-1} + B_bar x_t``, ``y_t = C h_t + D x_t``."""

    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def diagonal(self):
        return self.A_bar.ndim == 1

    @property
    def C_bar(self):
        return self.C

    @property
    def D_bar(self):
        return self.D


@dataclass
class SsmKernel:
    """Materialized convolution kernel, ``K[:, :, t] = C A_bar^t B_bar``."""

    K: np.ndarray

    @property
    def length(self):
        return self.K.shape[-1]


def discretize_bilinear(A, B, delta):
    """Bilinear (Tustin) discretization.

    ``A_bar = (I - delta/2 A)^-1 (I + delta/2 A)`` and
    ``B_bar = (I - delta/2 A)^-1 delta B``. A 1-D ``A`` is treated as a
    diagonal and everything is computed elementwise.

    Raises
    ------
    ValueError
        If ``I - delta/2 A`` is singular.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if np.any(np.asarray(delta) <= 0):
        raise ValueError("step size delta must be positive")
    half = 0.5 * delta
    if A.ndim == 1:
        den = 1.0 - half * A
        if np.any(den == 0):
            raise ValueError(f"I - delta/2*A is singular (delta={delta}, entries {A[den == 0]})")
        return (1.0 + half * A) / den, (delta * B) / den.reshape((-1,) + (1,) * (B.ndim - 1))
    eye = np.eye(A.shape[0])
    left = eye - half * A
    cond = np.linalg.cond(left)
    if not np.isfinite(cond) or cond > 1e14:
        raise ValueError(f"I - delta/2*A is singular or ill-conditioned (cond={cond:.3g})")
    A_bar = np.linalg.solve(left, eye + half * A)
    B_bar = np.linalg.solve(left, delta * B)
    return A_bar, B_bar


def discretize_zoh(A, B, delta):
    """Zero-order-hold discretization for a diagonal ``A``.

    Comparison path only; the network uses :func:`discretize_bilinear`.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 1:
        raise ValueError("zero-order hold is only provided for diagonal A")
    dA = delta * A
    A_bar = np.exp(dA)
    scale = np.where(np.abs(dA) > 1e-12, np.expm1(dA) / np.where(dA == 0, 1.0, A), delta)
    return A_bar, scale.reshape(-1, 1) * np.asarray(B, dtype=float)


def _apply_A(A_bar, h):
    return A_bar * h if A_bar.ndim == 1 else A_bar @ h


def _apply_D(D, x):
    return D * x if D.ndim == 1 else D @ x


def ssm_recurrence(d: DiscreteSsm, x, h0=None):
    """Run the discrete recurrence step by step over the columns of ``x`` (F x T)."""
    x = np.asarray(x, dtype=float)
    n = d.A_bar.shape[0]
    h = np.zeros(n) if h0 is None else np.array(h0, dtype=float)
    y = np.empty((d.C.shape[0], x.shape[1]))
    for t in range(x.shape[1]):
        h = _apply_A(d.A_bar, h) + d.B_bar @ x[:, t]
        y[:, t] = d.C @ h + _apply_D(d.D, x[:, t])
    return y


def ssm_kernel(d: DiscreteSsm, T):
    """Materialize ``(C B, C A B, ..., C A^(T-1) B)`` by iterated multiplication."""
    if T < 1:
        raise ValueError("kernel length must be at least 1")
    F, n = d.C.shape[0], d.A_bar.shape[0]
    K = np.empty((F, d.B_bar.shape[1], T))
    AkB = np.array(d.B_bar, dtype=float)
    for t in range(T):
        K[:, :, t] = d.C @ AkB
        if d.A_bar.ndim == 1:
            AkB = d.A_bar[:, None] * AkB
        else:
            AkB = d.A_bar @ AkB
    assert AkB.shape[0] == n
    return SsmKernel(K)


def ssm_convolve(kernel: SsmKernel, D, x):
    """Causal convolution ``y = K * x`` plus the ``D`` skip path, via FFT."""
    x = np.asarray(x, dtype=float)
    T = x.shape[-1]
    if kernel.length != T:
        raise ValueError(f"kernel length {kernel.length} does not match input length {T}")
    nfft = 1 << (2 * T - 1).bit_length()
    Kf = np.fft.rfft(kernel.K, n=nfft, axis=-1)
    Xf = np.fft.rfft(x, n=nfft, axis=-1)
    Yf = np.einsum("ijf,jf->if", Kf, Xf)
    y = np.fft.irfft(Yf, n=nfft, axis=-1)[:, :T]
    D = np.asarray(D, dtype=float)
    return y + (D[:, None] * x if D.ndim == 1 else D @ x)


# -- scans ---------------------------------------------------------------------
def sequential_scan(a, b, h0=None):
    """Reference loop for ``h_t = a_t h_{t-1} + b_t`` along the last axis."""
    a = np.asarray(a)
    b = np.asarray(b)
    h = np.zeros(b.shape[:-1], dtype=b.dtype) if h0 is None else np.array(h0, dtype=b.dtype)
    out = np.empty_like(b)
    for t in range(b.shape[-1]):
        h = a[..., t] * h + b[..., t]
        out[..., t] = h
    return out


def _doubling_scan(a, b):
    # inclusive Hillis-Steele scan with combine (a1,b1).(a2,b2) = (a2*a1, a2*b1 + b2)
    a = a.copy()
    b = b.copy()
    n = a.shape[-1]
    off = 1
    while off < n:
        b[..., off:] = a[..., off:] * b[..., :-off] + b[..., off:]
        a[..., off:] = a[..., off:] * a[..., :-off]
        off *= 2
    return a, b


def associative_scan(a, b, h0=None, block_size=None):
    """Solve ``h_t = a_t h_{t-1} + b_t`` along the last axis with a parallel scan.

    The sequence is split into blocks of ``block_size`` steps (one block if
    ``None``); each block is scanned with log-depth doubling, block totals are
    scanned the same way, and the carries are folded back in. The result
    does not depend on ``block_size`` beyond rounding.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    a, b = np.broadcast_arrays(a, b)
    T = b.shape[-1]
    if T == 0:
        return b.copy()
    blk = T if block_size is None else int(block_size)
    if blk < 1:
        raise ValueError("block_size must be positive")
    nblk = -(-T // blk)
    padn = nblk * blk - T
    if padn:
        a = np.concatenate([a, np.ones(a.shape[:-1] + (padn,), dtype=a.dtype)], axis=-1)
        b = np.concatenate([b, np.zeros(b.shape[:-1] + (padn,), dtype=b.dtype)], axis=-1)
    lead = b.shape[:-1]
    A_loc, B_loc = _doubling_scan(a.reshape(lead + (nblk, blk)), b.reshape(lead + (nblk, blk)))
    if h0 is not None:
        h0 = np.broadcast_to(np.asarray(h0, dtype=b.dtype), lead)
    if nblk > 1 or h0 is not None:
        A_tot, B_tot = A_loc[..., -1], B_loc[..., -1]
        if h0 is not None:
            B_tot = B_tot.copy()
            B_tot[..., 0] = A_tot[..., 0] * h0 + B_tot[..., 0]
        _, ends = _doubling_scan(A_tot, B_tot)
        carry = np.zeros(lead + (nblk,), dtype=b.dtype)
        carry[..., 1:] = ends[..., :-1]
        if h0 is not None:
            carry[..., 0] = h0
        B_loc = A_loc * carry[..., None] + B_loc
    return B_loc.reshape(lead + (nblk * blk,))[..., :T]


def reverse_scan(a_next, g, block_size=None):
    """Solve ``G_t = g_t + a_next_t G_{t+1}`` backwards along the last axis."""
    return associative_scan(a_next[..., ::-1], g[..., ::-1], block_size=block_size)[..., ::-1]


def selective_discretize(A, B, delta):
    """Per-step bilinear discretization for the selective scan.

    Shapes: ``A`` is ``(N,)`` or ``(F, N)``; ``B`` is ``(..., N, T)``;
    ``delta`` is ``(..., F, T)``. Returns ``A_bar`` and ``B_bar`` of shape
    ``(..., F, N, T)``.
    """
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[None, :]
    q = 0.5 * delta[..., :, None, :] * A[:, :, None]
    den = 1.0 - q
    A_bar = (1.0 + q) / den
    B_bar = delta[..., :, None, :] * B[..., None, :, :] / den
    return A_bar, B_bar


def selective_scan(A, B, C, delta, x, D=None, h0=None, method="parallel", block_size=None):
    """Input-dependent SSM: discretize every step, then scan.

    Parameters
    ----------
    A : ndarray, shape (N,) or (F, N)
        Diagonal state matrix (shared across channels or per channel).
    B, C : ndarray, shape (..., N, T)
        Input and output projections at each step.
    delta : ndarray, shape (..., F, T)
        Positive step sizes.
    x : ndarray, shape (..., F, T)
        Input sequence.
    D : ndarray, shape (F,), optional
        Per-channel skip term.
    method : {"parallel", "sequential"}
        Associative scan or the reference loop.

    Returns
    -------
    y : ndarray, shape (..., F, T)
    """
    x = np.asarray(x)
    delta = np.asarray(delta)
    if np.any(delta <= 0):
        raise ValueError("selective scan needs strictly positive step sizes")
    A_bar, B_bar = selective_discretize(A, np.asarray(B), delta)
    bx = B_bar * x[..., :, None, :]
    if method == "parallel":
        h = associative_scan(A_bar, bx, h0=h0, block_size=block_size)
    elif method == "sequential":
        h = sequential_scan(A_bar, bx, h0=h0)
    else:
        raise ValueError(f"unknown scan method {method!r}")
    y = np.einsum("...fnt,...nt->...ft", h, np.asarray(C))
    if D is not None:
        y = y + np.asarray(D)[:, None] * x
    return y


def hippo_init(N):
    """Real diagonal initialization ``A_n = -(n + 1)``, ``n = 0..N-1``."""
    if N < 1:
        raise ValueError("state size must be at least 1")
    return -np.arange(1, N + 1, dtype=float)
