"""Alternating l2-lq inversion of an FDEM data matrix and the decoupled baseline.

The coupled problem

    min_{Sigma >= 0, Xi}  1/2 sum_j ||M(sigma_j) - b_j||^2
                          + gamma/q ||D vec(Xi)||_q^q + beta/2 ||Sigma - Xi||_F^2

is split into a Sigma step, which decouples into one damped Gauss-Newton
problem per sounding, and a Xi step solved by majorization-minimization
with the cosine transform diagonalising the reflexive Laplacian ``D``.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CommonNullspace, FdemError, LineSearchFailed, NonFinite, SolverAbort
from .forward import DEFAULT_TOL, DeviceConfig, Geometry, forward_batch
from .gsvd import gsvd, tgsvd_step
from .jacobian import augment, residual_and_jacobian, stack_complex
from .regops import Lap2D, build_deriv, dct2_forward, dct2_inverse, dct_spectrum, unvec, vec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverParams:
    """Tuning knobs of the alternating scheme.

    ``p`` is the derivative order of the GSVD regularization matrix and
    ``tol`` the relative accuracy of the forward quadrature.  With
    ``warm_start`` each Gauss-Newton run starts from the previous column
    estimate instead of ``sigma0``.  ``project`` clips trial points at zero
    and freezes layers pinned there; without it trial steps leaving the
    non-negative orthant are shortened.  ``ell_decoupled`` is the truncation
    index of the uncoupled baseline, whose Jacobian alone is far more
    ill-conditioned than the coupled system.
    """

    q: float = 0.1
    gamma: float = 1e-4
    beta: float = 3e-6
    epsilon: float = 0.3
    ell: int = 15
    ell_decoupled: int = 3
    p: int = 2
    sigma0: float = 0.1
    outer_maxit: int = 50
    gn_maxit: int = 10
    mm_maxit: int = 30
    rel_tol: float = 1e-4
    alpha_min: float = 1e-10
    tol: float = DEFAULT_TOL
    warm_start: bool = True
    project: bool = True

    def __post_init__(self):
        if not 0 < self.q <= 2:
            raise ValueError("q must lie in (0, 2]")
        for name in ("beta", "epsilon", "sigma0", "rel_tol", "alpha_min", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        for name in ("ell", "ell_decoupled", "outer_maxit", "gn_maxit", "mm_maxit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.p not in (0, 1, 2):
            raise ValueError("p must be 0, 1 or 2")

    @property
    def eta(self) -> float:
        return self.gamma * self.epsilon ** (self.q - 2) / self.beta

    def with_(self, **kw) -> "SolverParams":
        return replace(self, **kw)


@dataclass
class StepRecord:
    """One accepted Gauss-Newton step, enough to re-check the sufficient decrease."""

    alpha: float
    res2_old: float
    res2_new: float
    jq2: float
    min_sigma: float

    def satisfied(self) -> bool:
        return self.res2_old - self.res2_new >= 0.5 * self.alpha * self.jq2 and self.min_sigma >= 0


@dataclass
class ColumnResult:
    sigma: np.ndarray
    steps: list = field(default_factory=list)
    iterations: int = 0
    stop: str = "maxit"
    misfit2: float = np.nan
    error: str | None = None


@dataclass
class OuterRecord:
    data_fit: float
    regularization: float
    coupling: float
    rel_change: float
    gn_iterations: list
    alphas: list
    mm_objective: list
    failures: dict


@dataclass
class IterationTrace:
    outer: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    seconds: float = 0.0

    def certificates_ok(self) -> tuple[int, int]:
        """Number of recorded steps and how many of them violate the decrease test."""
        bad = sum(not s.satisfied() for s in self.steps)
        return len(self.steps), bad

    def to_dict(self) -> dict:
        return {
            "seconds": self.seconds,
            "outer": [vars(o) for o in self.outer],
            "steps": [vars(s) for s in self.steps],
        }


@dataclass
class InversionResult:
    Sigma: np.ndarray
    Xi: np.ndarray | None
    trace: IterationTrace


# ---------------------------------------------------------------------------
# Sigma step


def armijo_positive(
    sigma, qdir, residual_fn, jq_norm2: float, alpha_min: float = 1e-10, res2=None, jacobian=None
):
    """Halving line search with sufficient decrease and non-negativity.

    Parameters
    ----------
    residual_fn : callable
        Maps a conductivity vector to its (augmented) residual vector.
    jq_norm2 : float
        ``||J q||^2`` for the linearised decrease bound.
    res2 : float, optional
        ``||r(sigma)||^2`` if already known.
    jacobian : ndarray, optional
        When given, trial points are clipped at zero and the decrease bound
        is evaluated for the step actually taken, ``(trial - sigma) / alpha``,
        instead of ``qdir``.  Without it a trial leaving the orthant is
        simply rejected.

    Returns
    -------
    alpha, new_sigma, new_res2

    Raises
    ------
    LineSearchFailed
        If no ``alpha >= alpha_min`` of the form ``2**-k`` is acceptable.
    """
    sigma = np.asarray(sigma, dtype=float)
    qdir = np.asarray(qdir, dtype=float)
    if not np.all(np.isfinite(qdir)):
        raise LineSearchFailed("search direction is not finite")
    if res2 is None:
        res2 = float(np.sum(np.square(residual_fn(sigma))))
    alpha = 1.0
    while alpha >= alpha_min:
        trial = sigma + alpha * qdir
        bound = jq_norm2
        if jacobian is not None:
            trial = np.maximum(trial, 0.0)
            bound = effective_jq2(jacobian, sigma, trial, alpha)
        if np.all(trial >= 0):
            new2 = float(np.sum(np.square(residual_fn(trial))))
            if res2 - new2 >= 0.5 * alpha * bound:
                return alpha, trial, new2
        alpha *= 0.5
    raise LineSearchFailed(f"no acceptable step down to alpha={alpha_min:g}")


def effective_jq2(J, sigma, new, alpha: float) -> float:
    """``||J (new - sigma) / alpha||^2``, the bound for a clipped step."""
    return float(np.sum(np.square(J @ ((new - sigma) / alpha))))


def _free_step(J, L, r, sigma, ell: int, clip: bool):
    """TGSVD step that leaves layers pinned at zero alone.

    With ``clip`` set, layers with ``sigma == 0`` whose step points into the
    infeasible side are removed from the pair and the step is recomputed,
    until no such layer remains.
    """
    n = sigma.size
    free = np.ones(n, dtype=bool)
    q = np.zeros(n)
    while free.any():
        f = gsvd(J[:, free], L[:, free])
        q[:] = 0.0
        q[free] = tgsvd_step(f, r, min(ell, f.max_truncation))
        if not clip:
            break
        pinned = free & (sigma <= 0) & (q < 0)
        if not pinned.any():
            break
        free &= ~pinned
    return q


def _column_residual(b_j, xi_j, beta, dev, geometry, tol):
    sb = np.sqrt(beta)

    def fun(s):
        pred = forward_batch(s, geometry.mu, geometry.d, dev, tol)[0]
        r = stack_complex(pred - b_j)
        return np.concatenate([r, sb * (s - xi_j)]) if beta > 0 else r

    return fun


def gn_column_solve(
    b_j, xi_j, params: SolverParams, dev: DeviceConfig, geometry: Geometry,
    sigma_init=None, beta: float | None = None, maxit: int | None = None, ell: int | None = None,
) -> ColumnResult:
    """Damped Gauss-Newton with truncated-GSVD steps for one sounding.

    ``beta=0`` drops the coupling block and solves the plain single-sounding
    problem on the ``(J, L)`` pair.  When the truncation index exceeds what
    that pair admits it is lowered to the largest admissible value.
    """
    b_j = np.asarray(b_j)
    n = geometry.n
    beta = params.beta if beta is None else beta
    maxit = params.gn_maxit if maxit is None else maxit
    ell = params.ell if ell is None else ell
    if b_j.shape != (dev.m,):
        raise ValueError(f"expected {dev.m} readings, got shape {b_j.shape}")
    xi_j = np.zeros(n) if xi_j is None else np.asarray(xi_j, dtype=float)
    if xi_j.shape != (n,):
        raise ValueError(f"expected {n} layers in xi, got {xi_j.shape}")

    sigma = np.full(n, params.sigma0) if sigma_init is None else np.array(sigma_init, dtype=float)
    L = build_deriv(params.p, n)
    resfun = _column_residual(b_j, xi_j, beta, dev, geometry, params.tol)
    out = ColumnResult(sigma)
    res2 = None
    for it in range(maxit):
        r, J = residual_and_jacobian(geometry.model(sigma), dev, b_j, params.tol)
        if beta > 0:
            sys = augment(r, J, sigma, xi_j, beta)
            r, J = sys.residual, sys.jacobian
        res2 = float(r @ r)
        if not np.isfinite(res2):
            raise NonFinite("residual is not finite")
        try:
            q = _free_step(J, L, r, sigma, ell, params.project)
        except CommonNullspace:
            out.stop = "degenerate"
            break
        if not q.any():
            out.stop = "stationary"
            break
        try:
            alpha, new, new2 = armijo_positive(
                sigma, q, resfun, float(np.sum(np.square(J @ q))), params.alpha_min, res2,
                J if params.project else None,
            )
        except LineSearchFailed:
            out.stop = "line-search"
            break
        jq2 = effective_jq2(J, sigma, new, alpha) if params.project else float(np.sum(np.square(J @ q)))
        out.steps.append(StepRecord(alpha, res2, new2, jq2, float(new.min())))
        change = np.linalg.norm(new - sigma)
        sigma, res2 = new, new2
        out.iterations = it + 1
        if change <= params.rel_tol * np.linalg.norm(sigma):
            out.stop = "rel_tol"
            break
    out.sigma = sigma
    out.misfit2 = res2 if beta == 0 or res2 is None else float(np.sum(np.square(resfun(sigma)[: 2 * dev.m])))
    return out


# ---------------------------------------------------------------------------
# Xi step


def smoothed_lq(x, q: float, eps: float) -> float:
    """``sum_j (x_j**2 + eps**2)**(q/2)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    return float(np.sum((x * x + eps * eps) ** (q / 2)))


def mm_u_update(utilde, q: float, eps: float) -> np.ndarray:
    """Elementwise ``u = ut * (1 - ((ut**2 + eps**2) / eps**2)**(q/2 - 1))``."""
    ut = np.asarray(utilde, dtype=float)
    return ut * (1 - ((ut * ut + eps * eps) / (eps * eps)) ** (q / 2 - 1))


def xi_objective(xi, sigma, params: SolverParams, n: int, N: int) -> float:
    """Smoothed Xi-step objective ``1/2||xi - sigma||^2 + gamma/(q beta) ||D xi||_{q,eps}^q``."""
    D = Lap2D(n, N)
    Dx = D.apply_grid(unvec(xi, n, N))
    w = params.gamma / (params.q * params.beta)
    return 0.5 * float(np.sum(np.square(np.asarray(xi) - sigma))) + w * smoothed_lq(Dx, params.q, params.epsilon)


def mm_majorant(xi, anchor, sigma, params: SolverParams, n: int, N: int) -> float:
    """Quadratic tangent majorant of :func:`xi_objective` at ``anchor``, evaluated at ``xi``.

    The additive constant is fixed by matching the objective at the anchor.
    """
    D = Lap2D(n, N)
    eta = params.eta
    u = mm_u_update(D.apply_grid(unvec(anchor, n, N)), params.q, params.epsilon)

    def quad(x):
        Dx = D.apply_grid(unvec(x, n, N))
        return 0.5 * float(np.sum(np.square(np.asarray(x) - sigma))) + 0.5 * eta * (
            float(np.sum(Dx * Dx)) - 2 * float(np.sum(u * Dx))
        )

    c = xi_objective(anchor, sigma, params, n, N) - quad(anchor)
    return quad(xi) + c


def mm_xi_solve(sigma_vec, params: SolverParams, spectrum, maxit: int | None = None):
    """Majorization-minimization for the Xi step.

    Parameters
    ----------
    sigma_vec : ndarray, shape (n*N,)
        Column-major ``vec(Sigma)``.
    spectrum : ndarray, shape (n, N)
        Eigenvalues of the reflexive Laplacian from :func:`dct_spectrum`.

    Returns
    -------
    xi : ndarray, shape (n*N,)
    history : list of float
        Smoothed objective at ``xi^(0) = sigma_vec`` and after every update.
    """
    lam = np.asarray(spectrum, dtype=float)
    n, N = lam.shape
    sigma = np.asarray(sigma_vec, dtype=float)
    if sigma.shape != (n * N,):
        raise ValueError(f"expected a vector of length {n * N}")
    maxit = params.mm_maxit if maxit is None else maxit
    D = Lap2D(n, N)
    eta = params.eta
    S = unvec(sigma, n, N)
    denom = 1 + eta * lam * lam
    w = params.gamma / (params.q * params.beta)

    def objective(X, DX):
        return 0.5 * float(np.sum(np.square(X - S))) + w * smoothed_lq(DX, params.q, params.epsilon)

    X = S.copy()
    DX = D.apply_grid(X)
    history = [objective(X, DX)]
    for _ in range(maxit):
        u = mm_u_update(DX, params.q, params.epsilon)
        rhs = S + eta * D.apply_grid(u)
        Xn = dct2_inverse(dct2_forward(rhs) / denom)
        DX = D.apply_grid(Xn)
        history.append(objective(Xn, DX))
        change = np.linalg.norm(Xn - X)
        X = Xn
        if change <= params.rel_tol * np.linalg.norm(X):
            break
    return vec(X), history


# ---------------------------------------------------------------------------
# drivers


def _threads(threads):
    if threads is None:
        threads = os.environ.get("FDEM_THREADS")
    if threads is None or threads == "":
        return os.cpu_count() or 1
    return max(1, int(threads))


def _map_columns(fn, N, threads):
    threads = _threads(threads)
    if threads == 1 or N == 1:
        return [fn(j) for j in range(N)]
    with ThreadPoolExecutor(max_workers=min(threads, N)) as pool:
        return list(pool.map(fn, range(N)))


def _safe(fn):
    def run(j):
        try:
            return fn(j)
        except (FdemError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return exc
    return run


def _check_data(B, dev):
    B = np.asarray(B)
    if B.ndim != 2 or B.shape[0] != dev.m:
        raise ValueError(f"data must be {dev.m} x N, got {B.shape}")
    return B


def alternating_invert(
    B_delta, params: SolverParams, dev: DeviceConfig, geometry: Geometry,
    Xi0=None, threads: int | None = None, callback=None,
) -> InversionResult:
    """Alternate per-column Gauss-Newton and the MM image step.

    A column whose solve raises keeps its previous estimate and is logged in
    the trace; :class:`SolverAbort` is raised only when every column fails
    in the same outer iteration.  ``callback(k, Sigma, Xi)``, if given, runs
    after every outer iteration on copies of the current iterates.
    """
    t0 = time.perf_counter()
    B = _check_data(B_delta, dev)
    n, N = geometry.n, B.shape[1]
    Xi = np.full((n, N), params.sigma0) if Xi0 is None else np.array(Xi0, dtype=float)
    Sigma = np.full((n, N), params.sigma0)
    lam = dct_spectrum(n, N)
    trace = IterationTrace()

    for k in range(params.outer_maxit):
        prev = Sigma.copy()

        def solve(j):
            init = Sigma[:, j] if params.warm_start and k > 0 else None
            return gn_column_solve(B[:, j], Xi[:, j], params, dev, geometry, sigma_init=init)

        results = _map_columns(_safe(solve), N, threads)
        failures, iters, alphas, fit = {}, [], [], 0.0
        for j, res in enumerate(results):
            if isinstance(res, Exception):
                failures[j] = f"{type(res).__name__}: {res}"
                iters.append(0)
                continue
            Sigma[:, j] = res.sigma
            iters.append(res.iterations)
            alphas.extend(s.alpha for s in res.steps)
            trace.steps.extend(res.steps)
            fit += 0.5 * res.misfit2
        if len(failures) == N:
            raise SolverAbort(f"all {N} columns failed in outer iteration {k}: {failures[0]}")

        xi, hist = mm_xi_solve(vec(Sigma), params, lam)
        Xi = unvec(xi, n, N).copy()
        rel = float(np.linalg.norm(Sigma - prev) / max(np.linalg.norm(Sigma), np.finfo(float).tiny))
        DXi = Lap2D(n, N).apply_grid(Xi)
        trace.outer.append(OuterRecord(
            data_fit=fit,
            regularization=float(np.sum(np.abs(DXi) ** params.q)),
            coupling=float(np.sum(np.square(Sigma - Xi))),
            rel_change=rel,
            gn_iterations=iters,
            alphas=alphas,
            mm_objective=hist,
            failures=failures,
        ))
        log.info("outer %d: fit %.3e rel change %.2e", k, fit, rel)
        if callback is not None:
            callback(k, Sigma.copy(), Xi.copy())
        if rel < params.rel_tol:
            break

    trace.seconds = time.perf_counter() - t0
    return InversionResult(Sigma, Xi, trace)


def decoupled_invert(
    B_delta, params: SolverParams, dev: DeviceConfig, geometry: Geometry,
    threads: int | None = None, maxit: int | None = None,
) -> InversionResult:
    """Invert every sounding on its own (no coupling) and stack the results.

    Each column runs up to ``maxit`` (default ``params.outer_maxit``)
    Gauss-Newton iterations with truncation index ``params.ell_decoupled``.
    """
    t0 = time.perf_counter()
    B = _check_data(B_delta, dev)
    n, N = geometry.n, B.shape[1]
    maxit = params.outer_maxit if maxit is None else maxit

    def solve(j):
        return gn_column_solve(
            B[:, j], None, params, dev, geometry, beta=0.0, maxit=maxit, ell=params.ell_decoupled)

    results = _map_columns(_safe(solve), N, threads)
    Sigma = np.full((n, N), params.sigma0)
    trace = IterationTrace()
    failures, iters, alphas, fit = {}, [], [], 0.0
    for j, res in enumerate(results):
        if isinstance(res, Exception):
            failures[j] = f"{type(res).__name__}: {res}"
            iters.append(0)
            continue
        Sigma[:, j] = res.sigma
        iters.append(res.iterations)
        alphas.extend(s.alpha for s in res.steps)
        trace.steps.extend(res.steps)
        fit += 0.5 * res.misfit2
    if len(failures) == N:
        raise SolverAbort(f"all {N} columns failed: {failures[0]}")
    trace.outer.append(OuterRecord(fit, np.nan, np.nan, np.nan, iters, alphas, [], failures))
    trace.seconds = time.perf_counter() - t0
    return InversionResult(Sigma, None, trace)


def splicing(Sigma) -> float:
    """Mean jump ``||sigma_{j+1} - sigma_j||`` between neighbouring soundings."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape[1] < 2:
        return 0.0
    return float(np.mean(np.linalg.norm(np.diff(Sigma, axis=1), axis=0)))


def beta_sweep(B_delta, betas, params: SolverParams, dev, geometry, reference=None, threads=None):
    """Run the alternating scheme for several coupling weights.

    Returns a list of ``(beta, result, rre)``; ``rre`` is None without a
    reference image.
    """
    out = []
    for b in betas:
        res = alternating_invert(B_delta, params.with_(beta=float(b)), dev, geometry, threads=threads)
        err = None
        if reference is not None:
            err = float(np.linalg.norm(res.Sigma - reference) / np.linalg.norm(reference))
        out.append((float(b), res, err))
    return out
