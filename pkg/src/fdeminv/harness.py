"""Synthetic experiments: phantoms, noise, error metrics and dense test oracles."""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SizeCap, ZeroReference
from .forward import PRESETS, DeviceConfig, Geometry, device_preset, forward_image
from .regops import Lap2D, vec
from .solvers import SolverParams, alternating_invert, decoupled_invert, mm_u_update, splicing

METHODS = ("alternating", "decoupled")
DENSE_CAP = 400


@dataclass(frozen=True)
class Phantom:
    Sigma: np.ndarray
    interface: np.ndarray  # first row of the lower region, per column


def phantom_interface(n: int, N: int, sigma_low: float = 0.0, sigma_high: float = 1.0) -> Phantom:
    """Two-region image with an interface deepening linearly from left to right.

    The first ``sigma_high`` row goes from ``round(0.2 n)`` in the first
    column to ``round(0.8 n)`` in the last one.
    """
    if n < 2 or N < 2:
        raise ValueError("need n, N >= 2")
    if sigma_low < 0 or sigma_high < 0:
        raise ValueError("conductivities must be non-negative")
    depth = 0.2 * n + 0.6 * n * np.arange(N) / (N - 1)
    rows = np.floor(depth + 0.5).astype(int)
    Sigma = np.where(np.arange(n)[:, None] >= rows[None, :], float(sigma_high), float(sigma_low))
    return Phantom(Sigma, rows)


@dataclass(frozen=True)
class NoiseSpec:
    """Relative noise level ``delta`` and PRNG seed.

    By default the complex noise has ``E|e_ij|^2 = delta^2 ||B||_F^2 / m``
    so that ``||E||_F`` is about ``delta sqrt(N) ||B||_F``.  ``squared_norm``
    scales by ``||B||_F^2`` instead, with each of the real and imaginary parts
    having standard deviation ``delta ||B||_F^2 / sqrt(m)``.
    """

    delta: float = 1e-2
    seed: int = 0
    squared_norm: bool = False

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


def add_noise(B, spec: NoiseSpec) -> np.ndarray:
    B = np.asarray(B, dtype=complex)
    m = B.shape[0]
    rng = np.random.default_rng(spec.seed)
    w = rng.standard_normal(B.shape) + 1j * rng.standard_normal(B.shape)
    nrm = np.linalg.norm(B)
    if spec.squared_norm:
        scale = spec.delta * nrm**2 / np.sqrt(m)
    else:
        scale = spec.delta * nrm / np.sqrt(2 * m)
    return B + scale * w


def rre(Sigma, Sigma_exact) -> float:
    """Relative restoration error ``||Sigma - Sigma_exact||_F / ||Sigma_exact||_F``."""
    Sigma, Sigma_exact = np.asarray(Sigma, dtype=float), np.asarray(Sigma_exact, dtype=float)
    if Sigma.shape != Sigma_exact.shape:
        raise ValueError("shape mismatch")
    ref = np.linalg.norm(Sigma_exact)
    if ref == 0:
        raise ZeroReference("reference image is zero")
    return float(np.linalg.norm(Sigma - Sigma_exact) / ref)


# ---------------------------------------------------------------------------
# dense oracles


def dense_xi_matrix(n: int, N: int, eta: float) -> np.ndarray:
    """``I + eta D^T D`` for the reflexive Laplacian, as a dense array."""
    if n * N > DENSE_CAP:
        raise SizeCap(f"n*N = {n * N} exceeds {DENSE_CAP}")
    D = Lap2D(n, N).dense()
    D = D.toarray() if hasattr(D, "toarray") else np.asarray(D)
    return np.eye(n * N) + eta * D.T @ D


def mm_rhs(sigma_vec, xi, params: SolverParams, n: int, N: int) -> np.ndarray:
    """Right-hand side ``sigma + eta D^T u`` of one MM update anchored at ``xi``."""
    D = Lap2D(n, N)
    X = np.asarray(xi, dtype=float).reshape((n, N), order="F")
    u = mm_u_update(D.apply_grid(X), params.q, params.epsilon)
    return np.asarray(sigma_vec, dtype=float) + params.eta * vec(D.apply_grid(u))


def oracle_dense_xi(rhs, params: SolverParams, n: int, N: int, eta: float | None = None) -> np.ndarray:
    """Solve ``(I + eta D^T D) xi = rhs`` by a dense Cholesky factorisation."""
    eta = params.eta if eta is None else eta
    A = dense_xi_matrix(n, N, eta)
    return cho_solve(cho_factor(A), np.asarray(rhs, dtype=float))


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    name: str = "Test 1"
    preset: str | None = "gem2"
    h: float = 1.0
    device: dict | None = None  # explicit {"rho": [...], "h": [...], "freq_hz": [...]}
    geometry: Geometry = field(default_factory=Geometry)
    n_soundings: int = 50
    sigma_low: float = 0.0
    sigma_high: float = 1.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    params: SolverParams = field(default_factory=SolverParams)
    methods: tuple = METHODS
    threads: int | None = None

    def device_config(self) -> DeviceConfig:
        if self.device is not None:
            d = self.device
            return DeviceConfig.from_frequencies(d["rho"], d.get("h", self.h), d["freq_hz"], name="custom")
        return device_preset(self.preset, self.h)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "device": {"preset": self.preset, "h": self.h} if self.device is None else dict(self.device),
            "geometry": dataclasses.asdict(self.geometry),
            "phantom": {"n_soundings": self.n_soundings, "sigma_low": self.sigma_low, "sigma_high": self.sigma_high},
            "noise": dataclasses.asdict(self.noise),
            "solver": dataclasses.asdict(self.params),
            "methods": list(self.methods),
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        known = {"name", "device", "geometry", "phantom", "noise", "solver", "methods", "threads",
                 "data", "sigma", "reference", "out", "method", "pgm"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        dev = dict(cfg.get("device", {}))
        if "rho" in dev:
            preset, h = None, 1.0
        else:
            preset, h = dev.get("preset", "gem2"), float(dev.get("h", 1.0))
            if preset not in PRESETS:
                raise ValueError(f"unknown device preset {preset!r}")
        geo = cfg.get("geometry", {})
        if "thicknesses" in geo and geo["thicknesses"] is not None:
            geo = {**geo, "thicknesses": tuple(geo["thicknesses"])}
        ph = cfg.get("phantom", {})
        return cls(
            name=cfg.get("name", "Test 1"),
            preset=preset,
            h=h,
            device=dev if preset is None else None,
            geometry=Geometry(**geo),
            n_soundings=int(ph.get("n_soundings", 50)),
            sigma_low=float(ph.get("sigma_low", 0.0)),
            sigma_high=float(ph.get("sigma_high", 1.0)),
            noise=NoiseSpec(**cfg.get("noise", {})),
            params=SolverParams(**cfg.get("solver", {})),
            methods=tuple(cfg.get("methods", METHODS)),
            threads=cfg.get("threads"),
        )


@dataclass
class ExperimentReport:
    config: dict
    rre: dict
    splicing: dict
    seconds: dict
    traces: dict
    Sigma_exact: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    B_delta: np.ndarray = field(repr=False)
    images: dict = field(repr=False, default_factory=dict)

    def table(self) -> list[tuple[str, str, float, float]]:
        """Rows ``(example, method, RRE, splicing)``."""
        name = self.config["name"]
        return [(name, m, self.rre[m], self.splicing[m]) for m in self.rre]

    def to_json(self, with_traces: bool = True) -> str:
        out = {"config": self.config, "rre": self.rre, "splicing": self.splicing, "seconds": self.seconds}
        if with_traces:
            out["traces"] = self.traces
        return json.dumps(out, indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def synthesize(cfg: ExperimentConfig):
    """Phantom, exact data and noisy data for a configuration."""
    dev = cfg.device_config()
    geo = cfg.geometry
    ph = phantom_interface(geo.n, cfg.n_soundings, cfg.sigma_low, cfg.sigma_high)
    B = forward_image(ph.Sigma, dev, geo.mu, geo.d, cfg.params.tol)
    return ph, B, add_noise(B, cfg.noise)


def invert(method: str, B_delta, cfg: ExperimentConfig):
    dev = cfg.device_config()
    if method == "alternating":
        return alternating_invert(B_delta, cfg.params, dev, cfg.geometry, threads=cfg.threads)
    if method == "decoupled":
        return decoupled_invert(B_delta, cfg.params, dev, cfg.geometry, threads=cfg.threads)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Generate data, add noise and invert it with every requested method.

    All methods see the same noisy data matrix.
    """
    ph, B, Bd = synthesize(cfg)
    errs, splice, secs, traces, images = {}, {}, {}, {}, {}
    for method in cfg.methods:
        t0 = time.perf_counter()
        res = invert(method, Bd, cfg)
        secs[method] = time.perf_counter() - t0
        errs[method] = rre(res.Sigma, ph.Sigma)
        splice[method] = splicing(res.Sigma)
        traces[method] = res.trace.to_dict()
        images[method] = res.Sigma
    return ExperimentReport(cfg.to_dict(), errs, splice, secs, traces, ph.Sigma, B, Bd, images)
