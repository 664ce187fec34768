"""
LoRA and TriLoRA adapters over a frozen base weight.

A LoRA adapter stores ``A`` (d x r) and ``B`` (r x k) and adds
``scale * A @ B`` to the base weight. A TriLoRA adapter stores three factors
``U`` (p x r2), ``Sigma`` (r2 x r1) and ``Vt`` (r1 x q) and adds
``scale * U @ Sigma @ Vt``. In diagonal mode ``r1 == r2 == r`` and
``Sigma`` is kept as a length-r vector of singular-value-like weights.

Adapters are frozen dataclasses; training produces new instances through
:meth:`with_params`.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ParameterError, ShapeError
from .linalg import as_matrix, compact_svd, gaussian_matrix

__all__ = [
    "AdapterConfig",
    "LoRAAdapter",
    "TriLoRAAdapter",
    "Adapter",
    "RANK_WARN_THRESHOLD",
    "adapted_forward",
    "delta_weight",
    "init_lora",
    "init_trilora",
    "lora_forward",
    "merge",
    "param_count",
    "trilora_forward",
]

# Ranks above this still work but are flagged; 64 leading directions are
# usually enough to fine-tune a layer.
RANK_WARN_THRESHOLD = 64


def _warn_rank(r: int) -> None:
    if r > RANK_WARN_THRESHOLD:
        warnings.warn(
            f"rank {r} exceeds {RANK_WARN_THRESHOLD}; larger ranks rarely help",
            stacklevel=3,
        )


@dataclass(frozen=True, eq=False)
class LoRAAdapter:
    A: np.ndarray
    B: np.ndarray
    scale: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[1] != B.shape[0]:
            raise ShapeError(f"A {A.shape} and B {B.shape} disagree on the rank")
        if not math.isfinite(self.scale):
            raise ParameterError(f"scale must be finite, got {self.scale}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "scale", float(self.scale))

    kind = "lora"

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape[0], self.B.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"A": self.A, "B": self.B}

    def with_params(self, params: dict[str, np.ndarray]) -> "LoRAAdapter":
        return dataclasses.replace(self, **params)


@dataclass(frozen=True, eq=False)
class TriLoRAAdapter:
    U: np.ndarray
    Sigma: np.ndarray
    Vt: np.ndarray
    diagonal_mode: bool = True
    scale: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        U = as_matrix(self.U, "U")
        Vt = as_matrix(self.Vt, "Vt")
        sigma = np.asarray(self.Sigma, dtype=np.float64)
        if not np.all(np.isfinite(sigma)):
            raise ParameterError("Sigma contains non-finite values")
        if self.diagonal_mode:
            if sigma.ndim != 1:
                raise ShapeError(f"diagonal Sigma must be a vector, got shape {sigma.shape}")
            if not U.shape[1] == sigma.shape[0] == Vt.shape[0]:
                raise ShapeError(
                    f"U {U.shape}, Sigma {sigma.shape}, Vt {Vt.shape} do not compose"
                )
        else:
            if sigma.ndim != 2:
                raise ShapeError(f"full Sigma must be a matrix, got shape {sigma.shape}")
            if U.shape[1] != sigma.shape[0] or sigma.shape[1] != Vt.shape[0]:
                raise ShapeError(
                    f"U {U.shape}, Sigma {sigma.shape}, Vt {Vt.shape} do not compose"
                )
        if not math.isfinite(self.scale):
            raise ParameterError(f"scale must be finite, got {self.scale}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Sigma", sigma)
        object.__setattr__(self, "Vt", Vt)
        object.__setattr__(self, "diagonal_mode", bool(self.diagonal_mode))
        object.__setattr__(self, "scale", float(self.scale))

    kind = "trilora"

    @property
    def r1(self) -> int:
        return self.Vt.shape[0]

    @property
    def r2(self) -> int:
        return self.U.shape[1]

    @property
    def effective_rank(self) -> int:
        return min(self.r1, self.r2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.Vt.shape[1]

    def sigma_matrix(self) -> np.ndarray:
        """Sigma as an r2 x r1 matrix regardless of mode."""
        return np.diag(self.Sigma) if self.diagonal_mode else self.Sigma

    def params(self) -> dict[str, np.ndarray]:
        return {"U": self.U, "Sigma": self.Sigma, "Vt": self.Vt}

    def with_params(self, params: dict[str, np.ndarray]) -> "TriLoRAAdapter":
        return dataclasses.replace(self, **params)

    def to_full(self) -> "TriLoRAAdapter":
        """Embed a diagonal adapter into full-Sigma mode (no-op if already full)."""
        if not self.diagonal_mode:
            return self
        return dataclasses.replace(self, Sigma=np.diag(self.Sigma), diagonal_mode=False)


Adapter = Union[LoRAAdapter, TriLoRAAdapter]


@dataclass(frozen=True)
class AdapterConfig:
    """Hyperparameters for :func:`init_trilora`.

    ``gaussian_std`` defaults to ``1 / sqrt(r2)``.
    """

    r1: int = 4
    r2: int = 4
    diagonal_mode: bool = True
    scale: float = 1.0
    gaussian_std: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.r1 < 1 or self.r2 < 1:
            raise ParameterError(f"ranks must be >= 1, got r1={self.r1}, r2={self.r2}")
        if self.diagonal_mode and self.r1 != self.r2:
            raise ParameterError(f"diagonal mode needs r1 == r2, got {self.r1} != {self.r2}")
        if not self.scale > 0:
            raise ParameterError(f"scale must be > 0, got {self.scale}")
        if self.gaussian_std is not None and not self.gaussian_std > 0:
            raise ParameterError(f"gaussian_std must be > 0, got {self.gaussian_std}")

    @classmethod
    def square(cls, r: int = 4, **kwargs) -> "AdapterConfig":
        return cls(r1=r, r2=r, **kwargs)

    @property
    def std(self) -> float:
        if self.gaussian_std is not None:
            return self.gaussian_std
        return 1.0 / math.sqrt(self.r2)


def _check_input(w0: np.ndarray, shape: tuple[int, int], x: np.ndarray) -> None:
    if w0.shape != shape:
        raise ShapeError(f"base weight {w0.shape} does not match adapter {shape}")
    if x.ndim != 2 or x.shape[0] != w0.shape[1]:
        raise ShapeError(f"input {x.shape} does not match base weight {w0.shape}")


def lora_forward(w0: np.ndarray, adapter: LoRAAdapter, x: np.ndarray) -> np.ndarray:
    """``w0 @ x + scale * A @ (B @ x)`` without forming the update."""
    _check_input(w0, adapter.shape, x)
    return w0 @ x + adapter.scale * (adapter.A @ (adapter.B @ x))


def trilora_forward(w0: np.ndarray, adapter: TriLoRAAdapter, x: np.ndarray) -> np.ndarray:
    """``w0 @ x + scale * U @ (Sigma @ (Vt @ x))`` without forming the update."""
    _check_input(w0, adapter.shape, x)
    h = adapter.Vt @ x
    if adapter.diagonal_mode:
        h = adapter.Sigma[:, None] * h
    else:
        h = adapter.Sigma @ h
    return w0 @ x + adapter.scale * (adapter.U @ h)


def adapted_forward(w0: np.ndarray, adapter: Adapter, x: np.ndarray) -> np.ndarray:
    if isinstance(adapter, LoRAAdapter):
        return lora_forward(w0, adapter, x)
    return trilora_forward(w0, adapter, x)


def delta_weight(adapter: Adapter) -> np.ndarray:
    if isinstance(adapter, LoRAAdapter):
        return adapter.scale * (adapter.A @ adapter.B)
    if adapter.diagonal_mode:
        product = (adapter.U * adapter.Sigma) @ adapter.Vt
    else:
        product = adapter.U @ (adapter.Sigma @ adapter.Vt)
    return adapter.scale * product


def merge(w0: np.ndarray, adapter: Adapter) -> np.ndarray:
    """Fold the adapter into the base weight: ``w0 + delta_weight(adapter)``."""
    if w0.shape != adapter.shape:
        raise ShapeError(f"base weight {w0.shape} does not match adapter {adapter.shape}")
    return w0 + delta_weight(adapter)


def param_count(adapter: Adapter) -> int:
    if isinstance(adapter, LoRAAdapter):
        d, k = adapter.shape
        return adapter.rank * (d + k)
    p, q = adapter.shape
    if adapter.diagonal_mode:
        r = adapter.r1
        return p * r + r + r * q
    return p * adapter.r2 + adapter.r2 * adapter.r1 + adapter.r1 * q


def _check_rank(r: int, shape: tuple[int, int], name: str) -> None:
    if not 1 <= r <= min(shape):
        raise ParameterError(f"{name}={r} outside [1, {min(shape)}] for weight {shape}")


def init_trilora(w0: np.ndarray, config: AdapterConfig) -> TriLoRAAdapter:
    """Gaussian ``U``, ``Sigma`` from the top singular values of ``w0``, zero ``Vt``.

    With ``Vt = 0`` the adapter starts as an exact no-op.
    """
    w0 = as_matrix(w0, "w0")
    p, q = w0.shape
    _check_rank(config.r1, w0.shape, "r1")
    _check_rank(config.r2, w0.shape, "r2")
    _warn_rank(max(config.r1, config.r2))

    U = gaussian_matrix(p, config.r2, config.std, config.seed)
    top = compact_svd(w0, min(config.r1, config.r2)).sigma
    if config.diagonal_mode:
        sigma = top.copy()
    else:
        sigma = np.zeros((config.r2, config.r1))
        np.fill_diagonal(sigma, top)
    Vt = np.zeros((config.r1, q))
    return TriLoRAAdapter(U, sigma, Vt, config.diagonal_mode, config.scale, config.seed)


def init_lora(
    w0: np.ndarray,
    r: int = 4,
    std: Optional[float] = None,
    seed: int = 0,
    scale: float = 1.0,
) -> LoRAAdapter:
    """Gaussian ``A`` (std defaults to ``1 / sqrt(r)``) and zero ``B``."""
    w0 = as_matrix(w0, "w0")
    _check_rank(r, w0.shape, "rank")
    _warn_rank(r)
    if std is None:
        std = 1.0 / math.sqrt(r)
    A = gaussian_matrix(w0.shape[0], r, std, seed)
    B = np.zeros((r, w0.shape[1]))
    return LoRAAdapter(A, B, scale, seed)
