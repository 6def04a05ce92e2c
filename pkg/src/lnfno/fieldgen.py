"""Random input-function samplers for the benchmark families.

Every sampler is a pure function of its arguments and an ``Rng``; call
sites hand each sample its own stream.
"""

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import fft_2d, fft_freqs

# Boundary GRF mixture: (alpha, tau) of the low and high bands and the
# weight of the high band.
GRF_LOW = (2.5, 3.0)
GRF_HIGH = (1.5, 12.0)
GRF_HIGH_WEIGHT = 0.25


def _outside_box(rng, lo, hi, inner_lo, inner_hi, dim):
    """One point uniform in [lo, hi]^dim minus [inner_lo, inner_hi]^dim."""
    while True:
        p = rng.uniform(lo, hi, dim)
        if np.any(p < inner_lo) or np.any(p > inner_hi):
            return p


def log_sources(points, centers, weights):
    """sum_j w_j * 0.5*log(|x - c_j|^2) at ``points`` [P, 2]."""
    d = points[:, None, :] - centers[None, :, :]
    return 0.5 * np.log(np.sum(d * d, axis=-1)) @ weights


def laplace_mad_sample(grid, J=10, eps=1e-3, rng=None, return_sources=False):
    """Harmonic field from J log sources outside the unit square.

    Returns ``(g, u)``: the boundary trace in grid order and the flattened
    field, both divided by max|[g; u]|.
    """
    if grid.dim != 2:
        raise DimensionError("laplace_mad_sample needs a 2-D grid")
    centers = np.stack([_outside_box(rng, -0.5, 1.5, -eps, 1 + eps, 2) for _ in range(J)])
    weights = rng.uniform(-1.0, 1.0, J)
    u = log_sources(grid.coords().reshape(-1, 2), centers, weights)
    g = u[grid.boundary]
    scale = np.max(np.abs(u))
    g, u = g / scale, u / scale
    if return_sources:
        return g, u, (centers, weights / scale)
    return g, u


def fourier_ic_1d(K=8, alpha=2.0, N=512, rng=None):
    """Low-mode random Fourier series on [0, 2pi), zero mean and unit std."""
    if N < 2 or N & (N - 1):
        raise DimensionError(f"N must be a power of two, got {N}")
    if 2 * K >= N:
        raise ContractError(f"K={K} modes do not fit on {N} points")
    a = rng.normal(K)
    b = rng.normal(K)
    x = 2.0 * np.pi * np.arange(N) / N
    m = np.arange(1, K + 1)
    u = (np.cos(np.outer(x, m)) @ (a / m ** alpha)) + (np.sin(np.outer(x, m)) @ (b / m ** alpha))
    u = u - u.mean()
    return u / u.std()


def _periodic_series(n, amp, rng):
    """sum_m amp[m] (xi_m cos(2 pi m t) + eta_m sin(2 pi m t)) at t = j/n."""
    m = np.arange(amp.size)
    t = np.arange(n) / n
    xi = rng.normal(amp.size)
    eta = rng.normal(amp.size)
    eta[0] = 0.0
    phase = 2.0 * np.pi * np.outer(t, m)
    return np.cos(phase) @ (amp * xi) + np.sin(phase) @ (amp * eta)


def grf_band_amplitudes(n_b, alpha, tau):
    m = np.arange(n_b // 2)
    return (m * m + tau * tau) ** (-alpha / 2.0)


def boundary_grf_mix(N_b, rng, return_components=False):
    """Periodic GRF around a boundary loop: low band + 0.25 * high band, max-abs 1."""
    if N_b < 8:
        raise ContractError(f"boundary needs at least 8 points, got {N_b}")
    g_low = _periodic_series(N_b, grf_band_amplitudes(N_b, *GRF_LOW), rng)
    g_high = _periodic_series(N_b, grf_band_amplitudes(N_b, *GRF_HIGH), rng)
    g = g_low + GRF_HIGH_WEIGHT * g_high
    s = np.max(np.abs(g))
    if return_components:
        return g / s, g_low / s, GRF_HIGH_WEIGHT * g_high / s
    return g / s


class SineNet:
    """W3 sin(W2 sin(W1 x + b1) + b2) + b3 with an exact Laplacian.

    Weights are N(0,1)/sqrt(fan_in), biases U(-pi, pi).
    """

    def __init__(self, arch=(2, 50, 50, 1), rng=None):
        arch = tuple(int(a) for a in arch)
        if len(arch) != 4 or arch[-1] != 1:
            raise ContractError(f"sine network must be [d, h1, h2, 1], got {list(arch)}")
        self.arch = arch
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(arch[:-1], arch[1:]):
            self.weights.append(rng.normal((fan_out, fan_in)) / np.sqrt(fan_in))
            self.biases.append(rng.uniform(-np.pi, np.pi, fan_out))

    def __call__(self, points):
        (W1, W2, W3), (b1, b2, b3) = self.weights, self.biases
        s1 = np.sin(points @ W1.T + b1)
        return (np.sin(s1 @ W2.T + b2) @ W3.T + b3)[:, 0]

    def laplacian(self, points):
        (W1, W2, W3), (b1, b2, _) = self.weights, self.biases
        h1 = points @ W1.T + b1
        s1, c1 = np.sin(h1), np.cos(h1)
        h2 = s1 @ W2.T + b2
        s2, c2 = np.sin(h2), np.cos(h2)
        lap = np.zeros(points.shape[0])
        for a in range(points.shape[1]):
            dh2 = (c1 * W1[:, a]) @ W2.T
            d2h2 = (-s1 * W1[:, a] ** 2) @ W2.T
            lap += ((-s2 * dh2 * dh2 + c2 * d2h2) @ W3.T)[:, 0]
        return lap

    def bound(self):
        """|output| <= ||W3||_1 + |b3| since |sin| <= 1."""
        return float(np.abs(self.weights[2]).sum() + abs(self.biases[2][0]))


def sine_net_field(arch, grid, rng, return_net=False):
    """Raw sine-network field on the grid nodes, shape ``grid.shape``."""
    if grid.dim != 2:
        raise DimensionError("sine_net_field needs a 2-D grid")
    net = SineNet(arch, rng)
    raw = net(grid.coords().reshape(-1, 2)).reshape(grid.shape)
    return (raw, net) if return_net else raw


def softplus(x):
    return np.logaddexp(0.0, x)


def darcy_coefficient(raw):
    return 0.1 + softplus(raw)


def grf_periodic_2d(N=64, alpha=2.5, tau=7.0, rng=None, return_imag=False):
    """Periodic GRF on the unit torus with zero mean.

    Modes are the transform of real white noise (so Hermitian by
    construction) times ``N * tau^(alpha-1) * (|k|^2 + tau^2)^(-alpha/2)``
    with ``k = 2 pi m``.
    """
    if N < 2 or N & (N - 1):
        raise DimensionError(f"N must be a power of two, got {N}")
    noise = rng.normal((N, N))
    xi = fft_2d(noise.astype(np.complex128))
    k = 2.0 * np.pi * fft_freqs(N) * N
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    amp = N * tau ** (alpha - 1.0) * (k2 + tau * tau) ** (-alpha / 2.0)
    amp[0, 0] = 0.0
    w = fft_2d(xi * amp, inverse=True)
    if return_imag:
        return w.real, float(np.max(np.abs(w.imag)))
    return w.real


def yukawa_boundary_3d(grid3, n_src=8, rng=None):
    """Screened-Coulomb boundary data on the cube faces, max-abs 1."""
    if grid3.dim != 3:
        raise DimensionError("yukawa_boundary_3d needs a 3-D grid")
    centers = np.stack([_outside_box(rng, -0.7, 1.7, -0.2, 1.2, 3) for _ in range(n_src)])
    weights = rng.uniform(-1.0, 1.0, n_src)
    kappa = rng.uniform(0.5, 3.0, n_src)
    pts = grid3.boundary_coords()
    r = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    g = (np.exp(-kappa * r) / r) @ weights
    return g / np.max(np.abs(g))


def fourier_boundary_series(N_b, rng, n_modes=8):
    """Zero-mean truncated Fourier series around a loop with 1/m^2 decay."""
    if N_b < 8:
        raise ContractError(f"boundary needs at least 8 points, got {N_b}")
    amp = np.zeros(n_modes + 1)
    amp[1:] = 1.0 / np.arange(1, n_modes + 1) ** 2
    return _periodic_series(N_b, amp, rng)


def positive_trace(s, floor=0.1):
    """1 + gamma*s with gamma <= 1 the largest factor keeping min >= floor."""
    if not 0 < floor < 1:
        raise ContractError("floor must lie in (0, 1)")
    lo = float(np.min(s))
    gamma = 1.0 if lo >= -(1.0 - floor) else (1.0 - floor) / -lo
    return 1.0 + gamma * s


def fourier_boundary_positive(N_b, floor=0.1, rng=None):
    return positive_trace(fourier_boundary_series(N_b, rng), floor)
