"""Re-parameterize adapters and truncate their rank through a compact SVD.

Every conversion bakes the source ``scale`` into the factors and emits
``scale = 1``.
"""

from __future__ import annotations

import numpy as np

from .adapters import LoRAAdapter, TriLoRAAdapter, delta_weight
from .errors import ParameterError
from .linalg import compact_svd

__all__ = ["lora_to_trilora", "trilora_to_lora", "truncate"]


def _from_delta(delta: np.ndarray, r: int, diagonal: bool, seed) -> TriLoRAAdapter:
    U, sigma, Vt = compact_svd(delta, r)
    middle = sigma if diagonal else np.diag(sigma)
    return TriLoRAAdapter(U, middle, Vt, diagonal, 1.0, seed)


def lora_to_trilora(adapter: LoRAAdapter, r2: int, diagonal: bool = True) -> TriLoRAAdapter:
    """Split ``scale * A @ B`` into its top-``r2`` singular triplets (r1 = r2).

    Exact when ``r2`` reaches the rank of the update, Eckart-Young optimal
    otherwise.
    """
    d, k = adapter.shape
    if not 1 <= r2 <= min(d, k):
        raise ParameterError(f"r2={r2} outside [1, {min(d, k)}]")
    return _from_delta(delta_weight(adapter), r2, diagonal, adapter.seed)


def trilora_to_lora(adapter: TriLoRAAdapter) -> LoRAAdapter:
    """Regroup as ``A = scale * U @ Sigma``, ``B = Vt``; rank becomes r1."""
    if adapter.diagonal_mode:
        A = adapter.U * adapter.Sigma
    else:
        A = adapter.U @ adapter.Sigma
    return LoRAAdapter(adapter.scale * A, adapter.Vt.copy(), 1.0, adapter.seed)


def truncate(adapter: TriLoRAAdapter, r_new: int) -> TriLoRAAdapter:
    """Best rank-``r_new`` TriLoRA approximation of the adapter's update.

    The result keeps the source's Sigma mode with ``r1 = r2 = r_new``.
    """
    if not 1 <= r_new <= adapter.effective_rank:
        raise ParameterError(f"r_new={r_new} outside [1, {adapter.effective_rank}]")
    return _from_delta(delta_weight(adapter), r_new, adapter.diagonal_mode, adapter.seed)
