"""Real-stacked residuals and finite-difference Jacobians of the forward map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import DEFAULT_TOL, DeviceConfig, LayeredModel, forward_batch, forward_perturbed

FD_STEP = 1e-6


def stack_complex(z) -> np.ndarray:
    """``[Re(z); Im(z)]`` along the first axis."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=0)


def unstack_complex(x) -> np.ndarray:
    x = np.asarray(x)
    half = x.shape[0] // 2
    return x[:half] + 1j * x[half:]


def stacked_residual(model: LayeredModel, dev: DeviceConfig, b_delta, tol: float = DEFAULT_TOL):
    """``[Re(M(sigma) - b); Im(M(sigma) - b)]``, length ``2m``."""
    b_delta = np.asarray(b_delta)
    if b_delta.shape != (dev.m,):
        raise ValueError(f"expected {dev.m} readings, got shape {b_delta.shape}")
    pred = forward_batch(model.sigma, model.mu, model.d, dev, tol)[0]
    return stack_complex(pred - b_delta)


def fd_steps(sigma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Perturbed values and divisors of the difference quotients.

    Central differences with step ``max(1e-6, 1e-6 |sigma_i|)``; a forward
    difference wherever ``sigma_i - h`` would be negative.
    """
    sigma = np.asarray(sigma, dtype=float)
    h = np.maximum(FD_STEP, FD_STEP * np.abs(sigma))
    central = sigma - h >= 0
    lo = np.where(central, sigma - h, sigma)
    hi = sigma + h
    return hi, lo, hi - lo


def fd_jacobian_fn(fun, sigma) -> np.ndarray:
    """Difference-quotient Jacobian of an arbitrary real map ``fun`` at ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    hi, lo, den = fd_steps(sigma)
    cols = []
    for i in range(sigma.size):
        sp, sm = sigma.copy(), sigma.copy()
        sp[i], sm[i] = hi[i], lo[i]
        cols.append((np.asarray(fun(sp)) - np.asarray(fun(sm))) / den[i])
    return np.column_stack(cols)


def residual_and_jacobian(model: LayeredModel, dev: DeviceConfig, b_delta=None, tol: float = DEFAULT_TOL):
    """Stacked residual (or prediction when ``b_delta`` is None) and its Jacobian.

    All ``2n + 1`` forward evaluations share one quadrature, so the
    difference quotients carry no quadrature noise.
    """
    sigma = model.sigma
    n = sigma.size
    hi, lo, den = fd_steps(sigma)
    vals = forward_perturbed(sigma, np.vstack([hi, lo]), model.mu, model.d, dev, tol)
    centre, plus, minus = vals[0], vals[1 : n + 1], vals[n + 1 :]
    jac = stack_complex(((plus - minus) / den[:, None]).T)
    pred = centre if b_delta is None else centre - np.asarray(b_delta)
    return stack_complex(pred), jac


def fd_jacobian(model: LayeredModel, dev: DeviceConfig, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``2m x n`` Jacobian of the stacked forward map by finite differences."""
    return residual_and_jacobian(model, dev, None, tol)[1]


@dataclass
class AugmentedSystem:
    """Residual ``[r; sqrt(beta)(sigma - xi)]`` and Jacobian ``[J; sqrt(beta) I]``."""

    residual: np.ndarray
    jacobian: np.ndarray
    beta: float


def augment(r, J, sigma, xi, beta: float) -> AugmentedSystem:
    if beta <= 0:
        raise ValueError("beta must be positive")
    r, J = np.asarray(r, dtype=float), np.asarray(J, dtype=float)
    sigma, xi = np.asarray(sigma, dtype=float), np.asarray(xi, dtype=float)
    if J.shape != (r.size, sigma.size) or xi.shape != sigma.shape:
        raise ValueError("inconsistent dimensions")
    sb = np.sqrt(beta)
    return AugmentedSystem(
        np.concatenate([r, sb * (sigma - xi)]),
        np.vstack([J, sb * np.eye(sigma.size)]),
        beta,
    )
