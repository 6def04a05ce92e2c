"""Viscous Burgers on [0, 2*pi) with Fourier ETDRK4 (Cox-Matthews / Kassam-Trefethen)."""

import numpy as np

from ..errors import BlowUpError, ContractError
from ..numerics import fft_1d, fft_freqs


def etdrk4_coefficients(lin, dt, n_contour=32):
    """E, E/2, Q, f1, f2, f3 for a diagonal linear symbol ``lin``.

    The phi-functions are averaged over ``n_contour`` points on a unit
    circle around each ``dt*lin`` to avoid cancellation near zero.
    """
    r = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
    LR = dt * lin[:, None] + r[None, :]
    E = np.exp(dt * lin)
    E2 = np.exp(0.5 * dt * lin)
    Q = dt * np.mean((np.exp(LR / 2) - 1) / LR, axis=1).real
    eLR = np.exp(LR)
    LR2 = LR * LR
    LR3 = LR2 * LR
    f1 = dt * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR2)) / LR3, axis=1).real
    f2 = dt * np.mean((2 + LR + eLR * (LR - 2)) / LR3, axis=1).real
    f3 = dt * np.mean((-4 - 3 * LR - LR2 + eLR * (4 - LR)) / LR3, axis=1).real
    return E, E2, Q, f1, f2, f3


def dealias_mask(n):
    """2/3 rule: keep integer modes |m| <= n/3."""
    m = np.abs(fft_freqs(n) * n)
    return (m <= n / 3).astype(np.float64)


def etdrk4_burgers(u0, nu, dt, T, n_records=100, nonlinear=True, return_times=False):
    """Integrate u_t + (u^2/2)_x = nu u_xx from ``u0`` on the fine grid.

    Returns an array ``(n_records, N)`` of snapshots at ``t = T*j/n_records``,
    j = 1..n_records (t=0 excluded).
    """
    u0 = np.asarray(u0, dtype=np.float64)
    if nu <= 0 or dt <= 0 or T <= 0:
        raise ContractError("nu, dt and T must be positive")
    n = u0.size
    m = fft_freqs(n) * n
    lin = -nu * m ** 2
    E, E2, Q, f1, f2, f3 = etdrk4_coefficients(lin, dt)
    mask = dealias_mask(n)
    g = -0.5j * m * mask

    if nonlinear:
        def N(v):
            w = fft_1d(v * mask, inverse=True).real
            return g * fft_1d(w * w)
    else:
        def N(v):
            return np.zeros_like(v)

    n_steps = int(round(T / dt))
    if n_steps % n_records:
        raise ContractError(f"{n_steps} steps not divisible into {n_records} records")
    every = n_steps // n_records
    v = fft_1d(u0.astype(np.complex128))
    out = np.empty((n_records, n))
    times = np.empty(n_records)
    rec = 0
    for step in range(1, n_steps + 1):
        Nv = N(v)
        a = E2 * v + Q * Nv
        Na = N(a)
        b = E2 * v + Q * Na
        Nb = N(b)
        c = E2 * a + Q * (2 * Nb - Nv)
        Nc = N(c)
        v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
        if step % every == 0:
            u = fft_1d(v, inverse=True).real
            if not np.all(np.isfinite(u)):
                raise BlowUpError(f"Burgers blow-up at t={step * dt:.6g}", t=step * dt)
            out[rec] = u
            times[rec] = step * dt
            rec += 1
    return (out, times) if return_times else out
