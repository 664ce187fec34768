"""TriLoRA initialization leaves the base layer untouched.

U is Gaussian, Sigma is taken from the top singular values of the frozen
weight and Vt starts at zero, so the update U Sigma Vt is exactly zero.
"""
import numpy as np

from trilora import AdapterConfig, adapted_forward, delta_weight, init_lora, init_trilora, param_count
from trilora.linalg import compact_svd, gaussian_matrix

w0 = gaussian_matrix(32, 24, std=1.0, seed=0)
x = gaussian_matrix(24, 5, std=1.0, seed=1)

tri = init_trilora(w0, AdapterConfig.square(4, seed=0))
full = init_trilora(w0, AdapterConfig(r1=4, r2=6, diagonal_mode=False, seed=0))
lora = init_lora(w0, 4, seed=0)

print("Sigma at init:", np.round(tri.Sigma, 4))
print("top spectrum :", np.round(compact_svd(w0, 4).sigma, 4))
for ad in (tri, full, lora):
    same = adapted_forward(w0, ad, x).tobytes() == (w0 @ x).tobytes()
    print(f"{ad.kind:8s} params={param_count(ad):4d}  |dW|={np.abs(delta_weight(ad)).max():.1f}  forward unchanged={same}")
