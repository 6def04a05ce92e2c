"""Shared numerical kernels: radix-2 FFT, CSR matrices, PCG and resampling.

Grid conventions: non-periodic problems put nodes at ``i/(N-1)`` on [0, 1];
periodic ones at ``i/N`` on [0, 1) (or ``2*pi*i/N`` for Burgers).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, SolverError


# ---------------------------------------------------------------- FFT

def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def _bitrev(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m, inverse):
    sign = 1.0 if inverse else -1.0
    w = np.exp(sign * 1j * np.pi * np.arange(m) / m)
    w.setflags(write=False)
    return w


def _fft_last(x, inverse):
    n = x.shape[-1]
    if not _is_pow2(n):
        raise DimensionError(f"FFT length {n} is not a power of two")
    lead = x.shape[:-1]
    y = np.asarray(x, dtype=np.complex128)[..., _bitrev(n)]
    out = np.empty_like(y)
    m = 1
    # butterflies ping-pong between two buffers
    while m < n:
        yv = y.reshape(lead + (n // (2 * m), 2, m))
        ov = out.reshape(lead + (n // (2 * m), 2, m))
        odd = yv[..., 1, :] * _twiddles(m, inverse)
        np.add(yv[..., 0, :], odd, out=ov[..., 0, :])
        np.subtract(yv[..., 0, :], odd, out=ov[..., 1, :])
        y, out = out, y
        m *= 2
    if inverse:
        y /= n
    return y


def fft_1d(x, inverse=False, axis=-1):
    """Radix-2 DFT along ``axis``; the inverse carries the 1/N factor."""
    x = np.asarray(x)
    if axis in (-1, x.ndim - 1):
        return _fft_last(x, inverse)
    return np.moveaxis(_fft_last(np.moveaxis(x, axis, -1), inverse), -1, axis)


def fft_2d(x, inverse=False):
    """Transform the last two axes (rows, then columns)."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise DimensionError("fft_2d needs at least two axes")
    y = _fft_last(x, inverse)
    return np.swapaxes(_fft_last(np.swapaxes(y, -1, -2), inverse), -1, -2)


def fft_freqs(n, d=1.0):
    """Integer-ordered frequencies matching ``fft_1d`` output, scaled by 1/(n*d)."""
    m = np.arange(n)
    m = np.where(m < (n + 1) // 2, m, m - n)
    return m / (n * d)


# ---------------------------------------------------------------- sparse

@dataclass
class CsrMatrix:
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self._rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.n_cols:
            raise DimensionError(f"matvec: vector length {x.shape[0]} != {self.n_cols}")
        return np.bincount(self._rows, weights=self.values * x[self.col_idx], minlength=self.n_rows)

    __matmul__ = matvec

    def diagonal(self):
        d = np.zeros(min(self.n_rows, self.n_cols))
        on = self._rows == self.col_idx
        d[self._rows[on]] = self.values[on]
        return d

    def transpose(self):
        return build_csr(self.col_idx, self._rows, self.values, self.n_cols, self.n_rows)

    def todense(self):
        a = np.zeros((self.n_rows, self.n_cols))
        a[self._rows, self.col_idx] = self.values
        return a

    def add_diagonal(self, d):
        """Return ``A + diag(d)`` (d broadcast to the diagonal length)."""
        n = min(self.n_rows, self.n_cols)
        d = np.broadcast_to(np.asarray(d, dtype=np.float64), (n,))
        r = np.concatenate([self._rows, np.arange(n)])
        c = np.concatenate([self.col_idx, np.arange(n)])
        v = np.concatenate([self.values, d])
        return build_csr(r, c, v, self.n_rows, self.n_cols)


def build_csr(rows, cols, values, n_rows, n_cols):
    """Assemble from triplets; duplicates are summed and rows sorted by column."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    if not (rows.size == cols.size == values.size):
        raise DimensionError("triplet arrays differ in length")
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise DimensionError("triplet index out of range")
    key = rows * n_cols + cols
    uniq, inv = np.unique(key, return_inverse=True)
    vals = np.bincount(inv, weights=values, minlength=uniq.size)
    r = uniq // n_cols
    c = uniq % n_cols
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n_rows), out=row_ptr[1:])
    return CsrMatrix(int(n_rows), int(n_cols), row_ptr, c, vals)


def csr_from_triplets(triplets, n_rows, n_cols):
    """``build_csr`` over a list of (row, col, value) tuples."""
    if len(triplets) == 0:
        return build_csr([], [], [], n_rows, n_cols)
    r, c, v = zip(*triplets)
    return build_csr(r, c, v, n_rows, n_cols)


def cg_solve(A, b, tol=1e-10, max_iter=None, jacobi_precond=True, x0=None, return_info=False):
    """Preconditioned conjugate gradients for SPD ``A``.

    Stops when ||b - A x|| / ||b|| <= tol. Raises SolverError carrying the
    achieved relative residual otherwise.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if max_iter is None:
        max_iter = max(10 * n, 100)
    matvec = A.matvec if hasattr(A, "matvec") else (lambda v: A @ v)
    if jacobi_precond:
        d = A.diagonal() if hasattr(A, "diagonal") else np.diag(A)
        if np.any(d == 0):
            raise SolverError("zero diagonal entry with Jacobi preconditioning")
        minv = 1.0 / d
    else:
        minv = None
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    history = []
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, {"iterations": 0, "residual": 0.0, "history": history}) if return_info else x
    r = b - matvec(x) if x0 is not None else b.copy()
    z = r * minv if minv is not None else r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    history.append(rz)
    while res > tol and it < max_iter:
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite (p^T A p <= 0)", residual=res)
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = r * minv if minv is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        history.append(rz)
        it += 1
        res = np.linalg.norm(r) / bnorm
    if res > tol:
        raise SolverError(f"CG did not converge in {max_iter} iterations (residual {res:.3e})", residual=res)
    if return_info:
        return x, {"iterations": it, "residual": res, "history": history}
    return x


# ---------------------------------------------------------------- resampling

def _bilinear_weights(n_fine, n_coarse):
    t = np.arange(n_coarse) * (n_fine - 1) / (n_coarse - 1)
    i0 = np.minimum(np.floor(t).astype(np.int64), n_fine - 2)
    w = t - i0
    return i0, w


def bilinear_downsample(field, n_coarse):
    """Bilinear interpolation of a node field on [0,1]^2 onto n_coarse^2 nodes."""
    f = np.asarray(field, dtype=np.float64)
    n_fine = f.shape[0]
    if f.ndim != 2 or f.shape[1] != n_fine:
        raise DimensionError(f"expected square grid, got {f.shape}")
    if not 2 <= n_coarse <= n_fine:
        raise DimensionError(f"need 2 <= N_c <= N_f, got {n_coarse}, {n_fine}")
    i0, wx = _bilinear_weights(n_fine, n_coarse)
    # interpolate along axis 0, then axis 1
    g = f[i0] * (1 - wx)[:, None] + f[i0 + 1] * wx[:, None]
    return g[:, i0] * (1 - wx)[None, :] + g[:, i0 + 1] * wx[None, :]


def spectral_lowpass_downsample(u_fine, n_coarse, axis=-1):
    """Zero modes |m| >= n_coarse/2, invert, keep every (N_f/N_c)-th sample."""
    u = np.asarray(u_fine, dtype=np.float64)
    n_fine = u.shape[axis]
    if not (_is_pow2(n_fine) and _is_pow2(n_coarse)) or n_coarse > n_fine:
        raise DimensionError(f"bad sizes for spectral downsampling: {n_fine} -> {n_coarse}")
    u = np.moveaxis(u, axis, -1)
    uh = fft_1d(u)
    m = np.abs(fft_freqs(n_fine) * n_fine)
    uh[..., m >= n_coarse / 2] = 0.0
    filt = fft_1d(uh, inverse=True).real
    out = filt[..., :: n_fine // n_coarse]
    return np.moveaxis(out, -1, axis)
