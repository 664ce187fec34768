"""
Dense real linear algebra used by the adapters.

Matrices are plain 2-D ``float64`` numpy arrays. This module adds the few
pieces numpy does not give us with the guarantees we need:

* ``gaussian_matrix``: normal samples whose bits depend only on
  ``(rows, cols, std, seed)``, independent of the numpy version.
* ``compact_svd``: a one-sided (Hestenes) Jacobi SVD with a fixed sign
  convention, so results are reproducible and golden-file testable.
* ``truncation_error``: the optimal rank-r approximation error.

Random stream
-------------
``gaussian_matrix`` draws raw 64-bit words from the Philox-4x64-10
counter-based generator keyed with ``seed`` (counter starting at zero),
turns consecutive word pairs into uniforms with 53-bit mantissas
``u1 = ((w0 >> 11) + 1) / 2**53`` in (0, 1] and ``u2 = (w1 >> 11) / 2**53``
in [0, 1), and applies Box-Muller::

    z0 = sqrt(-2 ln u1) cos(2 pi u2)
    z1 = sqrt(-2 ln u1) sin(2 pi u2)

The resulting stream ``z0, z1, z0, z1, ...`` fills the matrix row-major and
is multiplied by ``std``. Philox raw output is frozen by numpy's bit
generator API, so the stream is stable across platforms.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericalError, ParameterError, ShapeError

__all__ = [
    "SVDResult",
    "as_matrix",
    "compact_svd",
    "derive_seed",
    "frobenius_norm",
    "gaussian_matrix",
    "matmul",
    "transpose",
    "truncation_error",
]

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 30

_SEED_LIMIT = 1 << 64


class SVDResult(NamedTuple):
    """Top-r singular triplets: ``w ~= U @ diag(sigma) @ Vt``."""

    U: np.ndarray
    sigma: np.ndarray
    Vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.Vt


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate user input as a finite, non-empty 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed via numpy's SeedSequence hash."""
    words = [_check_seed(p) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def gaussian_matrix(rows: int, cols: int, std: float, seed: int) -> np.ndarray:
    """i.i.d. N(0, std**2) samples; see the module docstring for the stream."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"shape must be positive, got ({rows}, {cols})")
    if not std > 0 or not np.isfinite(std):
        raise ParameterError(f"std must be positive and finite, got {std}")
    seed = _check_seed(seed)

    n = rows * cols
    pairs = (n + 1) // 2
    words = np.random.Philox(key=seed).random_raw(2 * pairs).reshape(pairs, 2)
    scale = 2.0**-53
    u1 = ((words[:, 0] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * scale
    u2 = (words[:, 1] >> np.uint64(11)).astype(np.float64) * scale
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return (std * z[:n]).reshape(rows, cols)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method tournament: each round is a set of disjoint column pairs,
    # and n-1 rounds (n even) cover every pair exactly once.
    slots = list(range(n)) + ([-1] if n % 2 else [])
    m = len(slots)
    rounds = []
    for _ in range(m - 1):
        left, right = [], []
        for k in range(m // 2):
            a, b = slots[k], slots[m - 1 - k]
            if a >= 0 and b >= 0:
                left.append(min(a, b))
                right.append(max(a, b))
        if left:
            rounds.append((np.array(left), np.array(right)))
        slots = [slots[0], slots[-1]] + slots[1:-1]
    return rounds


def _jacobi(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the rows of ``rows`` (n x m, n <= m) by plane rotations.

    Returns the rotated rows G and the accumulated rotation Q (n x n, rows
    orthonormal) with ``G = Q @ rows``. Each round of the sweep rotates a
    batch of disjoint pairs at once.
    """
    G = rows.copy()
    n = G.shape[0]
    Q = np.eye(n)
    rounds = _round_robin(n)
    worst = 0.0
    for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
        rotated = False
        worst = 0.0
        for left, right in rounds:
            a, b = G[left], G[right]
            alpha = np.einsum("ij,ij->i", a, a)
            beta = np.einsum("ij,ij->i", b, b)
            gamma = np.einsum("ij,ij->i", a, b)
            denom = np.sqrt(alpha) * np.sqrt(beta)
            off = np.zeros_like(gamma)
            nz = denom > 0
            off[nz] = np.abs(gamma[nz]) / denom[nz]
            worst = max(worst, float(off.max()))
            active = off > JACOBI_TOL
            if not active.any():
                continue
            rotated = True
            li, ri = left[active], right[active]
            zeta = (beta[active] - alpha[active]) / (2.0 * gamma[active])
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            a, b = G[li], G[ri]
            G[li] = c * a - s * b
            G[ri] = s * a + c * b
            a, b = Q[li], Q[ri]
            Q[li] = c * a - s * b
            Q[ri] = s * a + c * b
        if not rotated:
            return G, Q
    raise NumericalError(
        f"Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps "
        f"(largest relative off-diagonal {worst:.3e})",
        sweeps=JACOBI_MAX_SWEEPS,
    )


def _complete_columns(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    # Replace the columns not flagged `good` with unit vectors orthogonal to
    # everything already accepted, trying e_0, e_1, ... in order.
    U = U.copy()
    basis = [U[:, k] for k in range(U.shape[1]) if good[k]]
    candidate = 0
    for k in np.flatnonzero(~good):
        while True:
            v = np.zeros(U.shape[0])
            v[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                for q in basis:
                    v -= (q @ v) * q
            norm = np.linalg.norm(v)
            if norm > 0.5:
                break
        U[:, k] = v / norm
        basis.append(U[:, k])
    return U


def compact_svd(w: np.ndarray, r: int) -> SVDResult:
    """Top-``r`` singular triplets of ``w`` by one-sided Jacobi.

    Rotations run over the smaller dimension and stop once every pair is
    orthogonal to ``JACOBI_TOL`` relative to its norms. Singular values come
    back non-increasing; in each left vector the largest-magnitude entry
    (lowest index on ties) is made non-negative, with the matching right
    vector flipped alongside it.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {w.shape}")
    m, n = w.shape
    if not 1 <= r <= min(m, n):
        raise ParameterError(f"rank r={r} outside [1, {min(m, n)}] for shape {w.shape}")

    tall = m >= n
    work = w.T if tall else w
    G, Q = _jacobi(np.ascontiguousarray(work))
    norms = np.sqrt(np.einsum("ij,ij->i", G, G))
    order = np.argsort(-norms, kind="stable")[:r]
    sigma = norms[order]

    # Rows of G are sigma_k times a singular vector of the long side.
    thresh = max(m, n) * np.finfo(np.float64).eps * (sigma[0] if sigma.size else 0.0)
    good = sigma > thresh
    long_vecs = np.zeros((G.shape[1], r))
    long_vecs[:, good] = (G[order][good] / sigma[good, None]).T
    short_vecs = Q[order]

    if tall:
        U = _complete_columns(long_vecs, good)
        Vt = short_vecs
    else:
        U = np.ascontiguousarray(short_vecs.T)
        Vt = _complete_columns(long_vecs, good).T

    pivots = np.argmax(np.abs(U), axis=0)
    flip = U[pivots, np.arange(r)] < 0
    U[:, flip] *= -1.0
    Vt = np.ascontiguousarray(Vt)
    Vt[flip] *= -1.0
    return SVDResult(U, sigma, Vt)


def truncation_error(sigma_full, r: int) -> float:
    """Frobenius error of the best rank-``r`` approximation."""
    sigma = np.asarray(sigma_full, dtype=np.float64)
    if sigma.ndim != 1:
        raise ParameterError("singular values must be a 1-D vector")
    if np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
        raise ParameterError("singular values must be non-negative and non-increasing")
    if not 0 <= r <= sigma.size:
        raise ParameterError(f"rank r={r} outside [0, {sigma.size}]")
    tail = sigma[r:]
    return float(np.sqrt(np.sum(tail * tail)))
