"""2-D vorticity Navier-Stokes on the unit torus, pseudo-spectral.

Advection is explicit (Euler) and dealiased with the 2/3 rule; viscosity
is Crank-Nicolson:

    w^{n+1} = [(1 - nu dt |k|^2/2) w^n - dt N^n + dt f] / (1 + nu dt |k|^2/2)
"""

import numpy as np

from ..errors import BlowUpError, ContractError
from ..numerics import fft_2d, fft_freqs


def default_forcing(n):
    x = np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    return 0.1 * (np.sin(2 * np.pi * (X + Y)) + np.cos(2 * np.pi * (X + Y)))


def enstrophy(w):
    return 0.5 * float(np.sum(np.asarray(w) ** 2))


def ns_rollout(omega0, nu=1e-3, dt=1e-4, T=50.0, record_every=1.0, forcing="default"):
    """Snapshots of vorticity at ``record_every, 2*record_every, ..., T``.

    ``forcing`` is "default" (0.1(sin 2pi(x+y) + cos 2pi(x+y))), None, or an
    explicit field. Returns an array ``(n_snapshots, N, N)``.
    """
    w0 = np.asarray(omega0, dtype=np.float64)
    n = w0.shape[0]
    if w0.shape != (n, n):
        raise ContractError("vorticity must be a square field")
    if nu < 0 or dt <= 0:
        raise ContractError("need nu >= 0 and dt > 0")
    if isinstance(forcing, str):
        f = default_forcing(n)
    elif forcing is None:
        f = np.zeros((n, n))
    else:
        f = np.asarray(forcing, dtype=np.float64)
    kx1 = 2 * np.pi * fft_freqs(n) * n
    KX, KY = np.meshgrid(kx1, kx1, indexing="ij")
    k2 = KX ** 2 + KY ** 2
    inv_k2 = np.zeros_like(k2)
    inv_k2[k2 > 0] = 1.0 / k2[k2 > 0]
    m = np.abs(fft_freqs(n) * n)
    keep = (m <= n / 3)
    mask = (keep[:, None] & keep[None, :]).astype(np.float64)
    fh = fft_2d(f.astype(np.complex128))
    lhs = 1.0 + 0.5 * nu * dt * k2
    rhs = 1.0 - 0.5 * nu * dt * k2

    steps_per_record = int(round(record_every / dt))
    n_records = int(round(T / record_every))
    if steps_per_record < 1 or n_records < 1:
        raise ContractError("record interval must cover at least one step and T >= record_every")
    wh = fft_2d(w0.astype(np.complex128))
    out = np.empty((n_records, n, n))
    pair = np.empty((2, n, n), dtype=np.complex128)
    for rec in range(n_records):
        for _ in range(steps_per_record):
            wd = wh * mask
            psi = -wd * inv_k2
            # two real fields per complex inverse transform: a + i b
            pair[0] = 1j * KY * psi + KX * psi          # u = psi_y, v = -psi_x
            pair[1] = 1j * KX * wd - KY * wd            # w_x, w_y
            phys = fft_2d(pair, inverse=True)
            adv = phys[0].real * phys[1].real + phys[0].imag * phys[1].imag
            nh = fft_2d(adv.astype(np.complex128)) * mask
            wh = (rhs * wh - dt * nh + dt * fh) / lhs
        w = fft_2d(wh, inverse=True).real
        if not np.all(np.isfinite(w)):
            t = (rec + 1) * record_every
            raise BlowUpError(f"Navier-Stokes blow-up by t={t:.6g}", t=t)
        out[rec] = w
    return out
