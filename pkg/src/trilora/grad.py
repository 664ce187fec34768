"""
Closed-form backward passes and a central-difference gradient checker.

Backward functions take ``g = dL/dW'``, the gradient of the loss with respect
to the adapted weight ``W' = W0 + delta``, so they work for any loss. The
squared error ``0.5 * ||W' x - y||_F**2`` is provided as the reference
objective. The base weight never receives a gradient.
"""

from __future__ import annotations

import numpy as np

from .adapters import Adapter, LoRAAdapter, TriLoRAAdapter, adapted_forward
from .errors import ParameterError, ShapeError
from .linalg import derive_seed, gaussian_matrix

__all__ = [
    "AdapterGradients",
    "backward",
    "finite_diff_check",
    "loss_and_upstream",
    "lora_backward",
    "random_instance",
    "trilora_backward",
]

# Maps parameter name ("A", "B" or "U", "Sigma", "Vt") to its gradient.
AdapterGradients = dict


def _check_upstream(adapter: Adapter, g: np.ndarray) -> None:
    if g.shape != adapter.shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match adapter {adapter.shape}")


def lora_backward(adapter: LoRAAdapter, g: np.ndarray) -> AdapterGradients:
    _check_upstream(adapter, g)
    s = adapter.scale
    return {"A": s * (g @ adapter.B.T), "B": s * (adapter.A.T @ g)}


def trilora_backward(adapter: TriLoRAAdapter, g: np.ndarray) -> AdapterGradients:
    """Gradients for ``U``, ``Sigma``, ``Vt``.

    In diagonal mode only the diagonal of the full ``Sigma`` gradient is
    returned, which is the gradient of the vector parameterization.
    """
    _check_upstream(adapter, g)
    s = adapter.scale
    U, Vt = adapter.U, adapter.Vt
    if adapter.diagonal_mode:
        sigma_vt = adapter.Sigma[:, None] * Vt
        d_sigma = np.einsum("ir,ij,rj->r", U, g, Vt)
    else:
        sigma_vt = adapter.Sigma @ Vt
        d_sigma = U.T @ g @ Vt.T
    ut_g = U.T @ g
    d_vt = adapter.sigma_matrix().T @ ut_g
    return {"U": s * (g @ sigma_vt.T), "Sigma": s * d_sigma, "Vt": s * d_vt}


def backward(adapter: Adapter, g: np.ndarray) -> AdapterGradients:
    if isinstance(adapter, LoRAAdapter):
        return lora_backward(adapter, g)
    return trilora_backward(adapter, g)


def loss_and_upstream(
    w0: np.ndarray, adapter: Adapter, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Squared-error loss of the adapted layer and ``dL/dW' = (y_hat - y) x^T``."""
    y_hat = adapted_forward(w0, adapter, x)
    if y.shape != y_hat.shape:
        raise ShapeError(f"target {y.shape} does not match output {y_hat.shape}")
    resid = y_hat - y
    return 0.5 * float(np.sum(resid * resid)), resid @ x.T


def _loss(w0, adapter, x, y) -> float:
    resid = adapted_forward(w0, adapter, x) - y
    return 0.5 * float(np.sum(resid * resid))


def finite_diff_check(
    w0: np.ndarray, adapter: Adapter, x: np.ndarray, y: np.ndarray, eps: float = 1e-6
) -> float:
    """Worst ``|analytic - numeric| / max(1, |analytic|, |numeric|)`` over all
    trainable scalars, with central differences of step ``eps``."""
    if not 1e-8 <= eps <= 1e-3:
        raise ParameterError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    _, g = loss_and_upstream(w0, adapter, x, y)
    analytic = backward(adapter, g)
    params = adapter.params()
    worst = 0.0
    for name, value in params.items():
        for idx in np.ndindex(value.shape):
            plus = value.copy()
            plus[idx] += eps
            minus = value.copy()
            minus[idx] -= eps
            f_plus = _loss(w0, adapter.with_params({name: plus}), x, y)
            f_minus = _loss(w0, adapter.with_params({name: minus}), x, y)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


# Cycles through LoRA, diagonal TriLoRA, square full TriLoRA and
# rectangular full TriLoRA (r1 != r2).
_INSTANCE_KINDS = ("lora", "trilora-diag", "trilora-full", "trilora-rect")


def random_instance(seed: int):
    """A small random ``(w0, adapter, x, y)`` problem for gradient checks.

    All factors are nonzero so every gradient is exercised.
    """
    kind = _INSTANCE_KINDS[seed % len(_INSTANCE_KINDS)]
    sizes = np.random.Generator(np.random.Philox(key=derive_seed(seed, 0)))
    p, q = (int(v) for v in sizes.integers(3, 9, size=2))
    b = int(sizes.integers(1, 5))
    r1 = int(sizes.integers(1, min(p, q) + 1))
    r2 = r1
    if kind == "trilora-rect":
        r1, r2 = 2, 3
    scale = float(sizes.uniform(0.5, 1.5))

    def draw(rows, cols, stream):
        return gaussian_matrix(rows, cols, 0.5, derive_seed(seed, stream))

    w0 = draw(p, q, 1)
    x = draw(q, b, 2)
    y = draw(p, b, 3)
    if kind == "lora":
        adapter = LoRAAdapter(draw(p, r1, 4), draw(r1, q, 5), scale, seed)
    elif kind == "trilora-diag":
        adapter = TriLoRAAdapter(
            draw(p, r1, 4), draw(1, r1, 6)[0], draw(r1, q, 5), True, scale, seed
        )
    else:
        adapter = TriLoRAAdapter(
            draw(p, r2, 4), draw(r2, r1, 6), draw(r1, q, 5), False, scale, seed
        )
    return w0, adapter, x, y
