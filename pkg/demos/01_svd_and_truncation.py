"""Compact SVD and the Eckart-Young truncation bound.

Builds a random matrix, factors it with the Jacobi SVD, and shows that
keeping the top r triplets leaves exactly the discarded spectral energy.
"""
import numpy as np

from trilora.linalg import compact_svd, frobenius_norm, gaussian_matrix, truncation_error

w = gaussian_matrix(12, 8, std=1.0, seed=3)
full = compact_svd(w, 8)
print("singular values:", np.round(full.sigma, 4))

for r in (1, 2, 4, 8):
    approx = compact_svd(w, r).reconstruct()
    err = frobenius_norm(w - approx)
    print(f"r={r}: ||W - W_r|| = {err:.6f}   bound = {truncation_error(full.sigma, r):.6f}")

# orthonormal factors: the Gram residual sits at rounding level
print("U^T U residual:", frobenius_norm(full.U.T @ full.U - np.eye(8)))
