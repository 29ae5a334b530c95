"""Nonlinear FDEM forward model for a horizontally layered earth.

The instrument reading for one coil configuration is the ratio of the
secondary to the primary magnetic field,

    M_nu = -rho**(3 - nu) * H_nu[ lam**(1 - nu) * exp(-2 h lam) * R(lam) ](rho),

where ``R`` is the reflection factor obtained from the surface admittance
recursion and ``H_nu`` is the Hankel transform of order ``nu`` (0 for
vertical, 1 for horizontal coil orientation).

The hot path (admittance recursion over a batch of models) is compiled with
numba; everything else is plain numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.special import j0, j1, jn_zeros

from .errors import DivisionDegenerate, NoConvergence, NonFinite

MU0 = 4e-7 * np.pi

#: Re(d_i u_i) above which tanh(d_i u_i) is replaced by 1.
TANH_GUARD = 30.0

#: Gauss-Legendre points per panel for the production rule.
DEFAULT_ORDER = 8
#: Geometric sub-panels of the first panel; None means adaptive bisection.
DEFAULT_GRADING = 10
DEFAULT_TOL = 1e-8
MAX_PANELS = 400

PRESETS = {
    "gem2": {"rho": (1.66,), "freq": (775.0, 1175.0, 3925.0, 9825.0, 21725.0, 47025.0)},
    "cmd-explorer": {"rho": (1.48, 2.82, 4.49), "freq": (10e3,)},
}


@dataclass(frozen=True)
class LayeredModel:
    """One sounding: ``n`` layer conductivities, permeabilities and ``n - 1`` thicknesses.

    The deepest layer extends to infinity.  ``mu`` defaults to free space.
    """

    sigma: np.ndarray
    d: np.ndarray
    mu: np.ndarray = None

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        d = np.atleast_1d(np.asarray(self.d, dtype=float)) if np.size(self.d) else np.zeros(0)
        mu = np.full(sigma.shape, MU0) if self.mu is None else np.asarray(self.mu, dtype=float)
        mu = np.broadcast_to(mu, sigma.shape).astype(float)
        if sigma.ndim != 1 or sigma.size < 1:
            raise ValueError("sigma must be a non-empty vector")
        if d.shape != (sigma.size - 1,):
            raise ValueError(f"expected {sigma.size - 1} thicknesses, got {d.shape}")
        if np.any(sigma < 0) or np.any(mu <= 0) or np.any(d <= 0):
            raise ValueError("need sigma >= 0, mu > 0 and d > 0")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self) -> int:
        return self.sigma.size


@dataclass(frozen=True)
class Geometry:
    """Discretisation shared by every sounding of an image.

    ``n`` layers of equal thickness ``depth / n``; the last one is the
    half-space.  Explicit ``thicknesses`` (length ``n - 1``) override the
    uniform grid.
    """

    n: int = 20
    depth: float = 5.0
    mu_rel: float = 1.0
    thicknesses: tuple | None = None

    def __post_init__(self):
        if self.n < 1 or self.depth <= 0 or self.mu_rel <= 0:
            raise ValueError("need n >= 1, depth > 0 and mu_rel > 0")
        if self.thicknesses is not None:
            t = tuple(float(v) for v in self.thicknesses)
            if len(t) != self.n - 1 or min(t, default=1.0) <= 0:
                raise ValueError(f"expected {self.n - 1} positive thicknesses")
            object.__setattr__(self, "thicknesses", t)

    @property
    def d(self) -> np.ndarray:
        if self.thicknesses is not None:
            return np.array(self.thicknesses)
        return np.full(self.n - 1, self.depth / self.n)

    @property
    def mu(self) -> np.ndarray:
        return np.full(self.n, self.mu_rel * MU0)

    def model(self, sigma) -> LayeredModel:
        return LayeredModel(sigma, self.d, self.mu)


@dataclass(frozen=True)
class DeviceConfig:
    """Coil separations ``rho``, heights ``h`` and angular frequencies ``omega``.

    Readings are ordered as ``(nu, rho, h, omega)`` with ``omega`` varying
    fastest and the vertical orientation (``nu = 0``) first, see :meth:`index`.
    """

    rho: np.ndarray
    h: np.ndarray
    omega: np.ndarray
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for attr in ("rho", "h", "omega"):
            v = np.atleast_1d(np.asarray(getattr(self, attr), dtype=float))
            if v.ndim != 1 or v.size == 0 or np.any(v <= 0):
                raise ValueError(f"{attr} must be a non-empty vector of positive values")
            object.__setattr__(self, attr, v)

    @classmethod
    def from_frequencies(cls, rho, h, freq_hz, name="custom") -> "DeviceConfig":
        return cls(rho, h, 2 * np.pi * np.asarray(freq_hz, dtype=float), name=name)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (2, self.rho.size, self.h.size, self.omega.size)

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    def index(self, nu: int, t: int, l: int, s: int) -> int:
        """Position of reading ``(nu, t, l, s)`` (all zero-based) in a data vector."""
        return int(np.ravel_multi_index((nu, t, l, s), self.shape))

    def readings(self) -> list[tuple[int, float, float, float]]:
        """``(nu, rho, h, omega)`` for every reading, in data-vector order."""
        return [
            (nu, r, hh, w)
            for nu in (0, 1)
            for r in self.rho
            for hh in self.h
            for w in self.omega
        ]


def device_preset(name: str, h: float | Sequence[float] = 1.0) -> DeviceConfig:
    """Named instrument configuration (``"gem2"`` or ``"cmd-explorer"``) at height(s) ``h``."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown device preset {name!r}; choose from {sorted(PRESETS)}") from None
    return DeviceConfig.from_frequencies(p["rho"], h, p["freq"], name=name)


# ---------------------------------------------------------------------------
# layered-earth kernel


def propagation_constant(lam, sigma_i, mu_i, omega):
    """``sqrt(lam**2 + 1j*sigma_i*mu_i*omega)`` on the branch with non-negative real part."""
    lam = np.asarray(lam, dtype=float)
    kappa = sigma_i * mu_i * omega
    if np.all(kappa == 0):
        return lam + 0j
    # principal root; radicand has Im >= 0 so Re(root) >= 0
    return np.sqrt(lam**2 + 1j * kappa)


@njit(cache=True, nogil=True)
def _layer_terms(l2, lk, kappa, mu_rel, d_i, guard, last):
    u = np.sqrt(l2 + 1j * kappa) if kappa != 0.0 else lk + 0j
    ni = u / mu_rel
    if last:
        return ni, 0j, False
    du = d_i * u
    if du.real > guard:
        return ni, 1.0 + 0j, True
    e = np.exp(-2.0 * du)
    return ni, (1.0 - e) / (1.0 + e), False


@njit(cache=True, nogil=True)
def _step(y, ni, t, saturated):
    if y == ni or saturated:
        return ni
    return ni * (y + ni * t) / (ni + y * t)


@njit(cache=True, nogil=True)
def _perturbed_kernel(lam, omega, sigma, alt, mu_rel, d, guard):
    # out[0] is the base model; out[1 + a*n + i] has layer i replaced by alt[a, i]
    n = sigma.shape[0]
    na = alt.shape[0]
    nw = omega.shape[0]
    nk = lam.shape[0]
    out = np.empty((1 + na * n, nw, nk), dtype=np.complex128)
    nn = np.empty(n, dtype=np.complex128)
    tt = np.empty(n, dtype=np.complex128)
    sat = np.empty(n, dtype=np.bool_)
    below = np.empty(n, dtype=np.complex128)
    for w in range(nw):
        om = omega[w]
        for k in range(nk):
            lk = lam[k]
            l2 = lk * lk
            for i in range(n):
                nn[i], tt[i], sat[i] = _layer_terms(
                    l2, lk, sigma[i] * mu_rel[i] * MU0 * om, mu_rel[i],
                    d[i] if i < n - 1 else 0.0, guard, i == n - 1)
            y = nn[n - 1]
            for i in range(n - 2, -1, -1):
                below[i] = y
                y = _step(y, nn[i], tt[i], sat[i])
            out[0, w, k] = y
            for a in range(na):
                for i in range(n):
                    ni, ti, si = _layer_terms(
                        l2, lk, alt[a, i] * mu_rel[i] * MU0 * om, mu_rel[i],
                        d[i] if i < n - 1 else 0.0, guard, i == n - 1)
                    y = ni if i == n - 1 else _step(below[i], ni, ti, si)
                    for j in range(i - 1, -1, -1):
                        y = _step(y, nn[j], tt[j], sat[j])
                    out[1 + a * n + i, w, k] = y
    return out


@njit(cache=True, nogil=True)
def _admittance_kernel(lam, omega, sigma, mu_rel, d, guard):
    # works with Y * (i mu0 omega): N_i -> u_i / mu_rel_i and N_0 -> lam
    nb, n = sigma.shape
    nw = omega.shape[0]
    nk = lam.shape[0]
    out = np.empty((nb, nw, nk), dtype=np.complex128)
    for b in range(nb):
        for w in range(nw):
            om = omega[w]
            for k in range(nk):
                lk = lam[k]
                l2 = lk * lk
                y, _, _ = _layer_terms(
                    l2, lk, sigma[b, n - 1] * mu_rel[n - 1] * MU0 * om, mu_rel[n - 1], 0.0, guard, True)
                for i in range(n - 2, -1, -1):
                    ni, ti, si = _layer_terms(
                        l2, lk, sigma[b, i] * mu_rel[i] * MU0 * om, mu_rel[i], d[i], guard, False)
                    y = _step(y, ni, ti, si)
                out[b, w, k] = y
    return out


def _scaled_admittance(lam, omega, sigma, mu, d, guard=TANH_GUARD):
    """``Y_1 * (i mu0 omega)`` with shape ``(batch, len(omega), len(lam))``."""
    sigma = np.ascontiguousarray(np.atleast_2d(sigma), dtype=float)
    out = _admittance_kernel(
        np.ascontiguousarray(lam, dtype=float).ravel(),
        np.ascontiguousarray(np.atleast_1d(omega), dtype=float),
        sigma,
        np.ascontiguousarray(np.asarray(mu, dtype=float) / MU0),
        np.ascontiguousarray(d, dtype=float),
        float(guard),
    )
    if not np.all(np.isfinite(out)):
        raise NonFinite("surface admittance overflowed")
    return out


def surface_admittance(lam, model: LayeredModel, omega: float, guard: float = TANH_GUARD):
    """``Y_1(lam)`` at the top of the first layer; vectorised over ``lam``."""
    lam = np.asarray(lam, dtype=float)
    y = _scaled_admittance(lam.ravel(), omega, model.sigma, model.mu, model.d, guard)
    return y[0, 0].reshape(lam.shape) / (1j * MU0 * omega)


def _reflection(lam, y_scaled):
    den = lam + y_scaled
    if np.any(den == 0):
        raise DivisionDegenerate("N_0 + Y_1 vanishes")
    return (lam - y_scaled) / den


def reflection_factor(lam, model: LayeredModel, omega: float):
    """``R(lam) = (N_0 - Y_1) / (N_0 + Y_1)`` with ``N_0 = lam / (i mu0 omega)``."""
    lam = np.asarray(lam, dtype=float)
    y = _scaled_admittance(lam.ravel(), omega, model.sigma, model.mu, model.d)
    return _reflection(lam, y[0, 0].reshape(lam.shape))


# ---------------------------------------------------------------------------
# Hankel transform


@lru_cache(maxsize=None)
def _zeros(nu: int, count: int) -> np.ndarray:
    z = jn_zeros(nu, count)
    z.setflags(write=False)
    return z


@lru_cache(maxsize=None)
def _leggauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _bessel(nu: int, x):
    return j0(x) if nu == 0 else j1(x)


_ROUNDOFF = 64 * np.finfo(float).eps


def _panel_sums(f, nu, rho, a, b, order):
    """Gauss-Legendre estimates on every panel ``[a_k, b_k]``.

    Returns the signed sums and the sums of absolute values (the latter set
    the roundoff floor), both of shape ``(..., P)``.
    """
    x, w = _leggauss(order)
    width = (b - a)[:, None]
    nodes = a[:, None] + width * x
    kern = (w * width) * nodes * _bessel(nu, rho * nodes)
    vals = np.asarray(f(nodes.ravel()))
    vals = vals.reshape(vals.shape[:-1] + nodes.shape)
    return (
        np.einsum("...pg,pg->...p", vals, kern),
        np.einsum("...pg,pg->...p", np.abs(vals), np.abs(kern)),
    )


def _first_panel(f, nu, rho, b, tol, order, max_level=50):
    # bisection towards the branch points of u_i(lam) close to lam = 0
    whole, mag = _panel_sums(f, nu, rho, np.array([0.0]), np.array([b]), order)
    pending = [(0.0, b, whole[..., 0])]
    floor = _ROUNDOFF * mag[..., 0]
    accepted = np.zeros_like(whole[..., 0])
    level = 0
    while pending:
        level += 1
        if level > max_level:
            raise NoConvergence("first Hankel panel did not settle")
        a_ = np.array([p[0] for p in pending])
        b_ = np.array([p[1] for p in pending])
        mid = 0.5 * (a_ + b_)
        halves, _ = _panel_sums(
            f, nu, rho, np.concatenate([a_, mid]), np.concatenate([mid, b_]), order
        )
        k = len(pending)
        left, right = halves[..., :k], halves[..., k:]
        fine = left + right
        coarse = np.stack([p[2] for p in pending], axis=-1)
        ref = np.abs(accepted + fine.sum(axis=-1))[..., None]
        bound = 0.1 * tol * ref + floor[..., None]
        ok = np.all(np.abs(fine - coarse) <= bound, axis=tuple(range(fine.ndim - 1)))
        accepted = accepted + fine[..., ok].sum(axis=-1)
        pending = [
            seg
            for i in np.flatnonzero(~ok)
            for seg in ((a_[i], mid[i], left[..., i]), (mid[i], b_[i], right[..., i]))
        ]
    return accepted, floor


def hankel_transform(
    f: Callable[[np.ndarray], np.ndarray],
    nu: int,
    rho: float,
    tol: float = DEFAULT_TOL,
    *,
    order: int = DEFAULT_ORDER,
    grading: int | None = DEFAULT_GRADING,
    decay: float | None = None,
    max_panels: int = MAX_PANELS,
):
    """Integrate ``f(lam) J_nu(rho lam) lam`` over ``[0, inf)``.

    The half line is split at the zeros of ``J_nu(rho lam)``.  The first
    panel, which holds the branch points of the layer propagation constants,
    is either split geometrically towards ``lam = 0`` or refined by bisection
    until halving changes the estimate by less than ``tol``.  The remaining
    panels use a fixed Gauss-Legendre rule and are summed until two
    consecutive panel contributions fall below ``tol`` times the partial sum.

    Parameters
    ----------
    f : callable
        Vectorised integrand.  Called with a 1-D array of abscissae and must
        return an array whose last axis matches it; leading axes are treated
        as a batch of integrands sharing the same quadrature.
    nu : {0, 1}
        Bessel order.
    rho : float
        Transform variable (coil separation).
    tol : float
        Relative tolerance.
    order : int
        Gauss-Legendre points per panel.
    grading : int or None
        Number of geometric levels for the first panel, or ``None`` for
        adaptive bisection (slower, used for reference values).
    decay : float, optional
        Exponential decay rate of ``f`` (``2 h`` for the forward model); only
        used to size the first batch of panels.

    Returns
    -------
    complex or ndarray
        Integral(s), shaped like ``f``'s output without the last axis.

    Raises
    ------
    NoConvergence
        If ``max_panels`` panels do not meet the tolerance.
    """
    if nu not in (0, 1):
        raise ValueError("nu must be 0 or 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    edges = np.concatenate([[0.0], _zeros(nu, max_panels) / rho])
    if grading:
        cuts = edges[1] * 2.0 ** -np.arange(grading, -1, -1.0)
        vals, mag = _panel_sums(f, nu, rho, np.concatenate([[0.0], cuts[:-1]]), cuts, order)
        total, floor = vals.sum(axis=-1), _ROUNDOFF * mag.sum(axis=-1)
    else:
        total, floor = _first_panel(f, nu, rho, edges[1], tol, order)

    if decay:
        reach = (np.log(1.0 / tol) + 5.0) / decay
        chunk = int(np.clip(np.searchsorted(edges, reach), 4, max_panels - 1))
    else:
        chunk = 8
    start = 1
    while start < max_panels:
        stop = min(start + chunk, max_panels)
        contrib, mag = _panel_sums(f, nu, rho, edges[start:stop], edges[start + 1 : stop + 1], order)
        floor = floor + _ROUNDOFF * mag.sum(axis=-1)
        partial = total[..., None] + np.cumsum(contrib, axis=-1)
        small = np.abs(contrib) <= tol * np.abs(partial) + floor[..., None]
        total = partial[..., -1]
        if small.shape[-1] >= 2 and np.all(small[..., -2:]):
            return total[()]
        start = stop
        chunk = 4
    raise NoConvergence(f"Hankel transform not converged within {max_panels} panels")


# ---------------------------------------------------------------------------
# readings


def _readings(admittance, rho, nu, h, omega, tol, order, grading=DEFAULT_GRADING):
    """Field ratios for every model produced by ``admittance``.

    ``admittance(lam, omega)`` returns scaled surface admittances of shape
    ``(batch, len(omega), len(lam))``; the result has shape
    ``(batch, len(h), len(omega))``.
    """
    h = np.atleast_1d(h)
    omega = np.atleast_1d(omega)

    def integrand(lam):
        r = _reflection(lam, admittance(lam, omega))
        env = np.exp(-2.0 * h[:, None] * lam) * lam ** (1 - nu)
        return r[:, None, :, :] * env[None, :, None, :]

    s = hankel_transform(integrand, nu, rho, tol, order=order, grading=grading, decay=2.0 * h.min())
    return -(rho ** (3 - nu)) * s


def _device_readings(admittance, batch, dev, tol, order, grading=DEFAULT_GRADING):
    out = np.empty((batch,) + dev.shape, dtype=complex)
    for t, rho in enumerate(dev.rho):
        for nu in (0, 1):
            out[:, nu, t] = _readings(admittance, rho, nu, dev.h, dev.omega, tol, order, grading)
    return out.reshape(batch, dev.m)


def forward_reading(
    model: LayeredModel, h: float, omega: float, rho: float, nu: int,
    tol: float = DEFAULT_TOL, order: int = DEFAULT_ORDER, grading: int | None = DEFAULT_GRADING,
) -> complex:
    """Complex field ratio ``H_S / H_P`` for a single coil configuration."""
    v = _readings(
        lambda lam, om: _scaled_admittance(lam, om, model.sigma, model.mu, model.d),
        rho, nu, h, omega, tol, order, grading,
    )
    return complex(v[0, 0, 0])


def forward_batch(
    sigmas, mu, d, dev: DeviceConfig, tol: float = DEFAULT_TOL, order: int = DEFAULT_ORDER,
    grading: int | None = DEFAULT_GRADING,
) -> np.ndarray:
    """Readings for a batch of conductivity vectors sharing ``mu`` and ``d``.

    All models in the batch are integrated on the same nodes, which keeps
    finite differences between them free of quadrature jitter.

    Returns
    -------
    ndarray, shape (batch, m), complex
    """
    sigmas = np.atleast_2d(np.asarray(sigmas, dtype=float))
    return _device_readings(
        lambda lam, om: _scaled_admittance(lam, om, sigmas, mu, d),
        sigmas.shape[0], dev, tol, order, grading,
    )


def forward_perturbed(
    sigma, alt, mu, d, dev: DeviceConfig, tol: float = DEFAULT_TOL, order: int = DEFAULT_ORDER
) -> np.ndarray:
    """Readings of ``sigma`` and of every single-layer replacement ``sigma[i] -> alt[a, i]``.

    Equivalent to :func:`forward_batch` on the stacked models
    ``[sigma, sigma with layer 0 = alt[0, 0], ..., sigma with layer n-1 = alt[-1, n-1]]``
    but reuses the unchanged layers, which makes finite-difference
    Jacobians several times cheaper.

    Returns
    -------
    ndarray, shape (1 + len(alt) * n, m), complex
    """
    sigma = np.ascontiguousarray(sigma, dtype=float)
    alt = np.ascontiguousarray(np.atleast_2d(alt), dtype=float)
    mu_rel = np.ascontiguousarray(np.broadcast_to(np.asarray(mu, dtype=float) / MU0, sigma.shape))
    d = np.ascontiguousarray(d, dtype=float)

    def admittance(lam, omega):
        out = _perturbed_kernel(
            np.ascontiguousarray(lam, dtype=float), np.ascontiguousarray(omega, dtype=float),
            sigma, alt, mu_rel, d, TANH_GUARD,
        )
        if not np.all(np.isfinite(out)):
            raise NonFinite("surface admittance overflowed")
        return out

    return _device_readings(admittance, 1 + alt.shape[0] * sigma.size, dev, tol, order)


def forward_column(model: LayeredModel, dev: DeviceConfig, tol: float = DEFAULT_TOL) -> np.ndarray:
    """All ``m`` readings of one sounding in device order."""
    return forward_batch(model.sigma, model.mu, model.d, dev, tol)[0]


def forward_image(Sigma, dev: DeviceConfig, mu, d, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Apply the forward map column by column; returns the ``m x N`` data matrix."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2:
        raise ValueError("Sigma must be an n x N array")
    if np.any(Sigma < 0):
        raise ValueError("conductivities must be non-negative")
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (Sigma.shape[0],))
    B = np.empty((dev.m, Sigma.shape[1]), dtype=complex)
    for j in range(Sigma.shape[1]):
        B[:, j] = forward_batch(Sigma[:, j], mu, d, dev, tol)[0]
    return B
