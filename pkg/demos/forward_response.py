"""Forward response of a two-coil instrument over layered ground.

Walks through the forward model in three steps:

1. a weakly conducting half-space, where the quadrature reading is
   proportional to conductivity and the depth response curves are known
   in closed form;
2. how the readings change as a conductive layer is buried deeper;
3. the cost of one forward evaluation and of a finite-difference Jacobian.

Run with ``python demos/forward_response.py``.
"""
import time

import numpy as np

from fdeminv.forward import MU0, Geometry, LayeredModel, device_preset, forward_batch, forward_reading
from fdeminv.jacobian import fd_jacobian

# --- 1. low induction number ---------------------------------------------------
# For small sigma the apparent conductivity 4 Im(M) / (mu0 omega rho^2)
# approaches sigma times a height-dependent factor.
rho, f = 1.66, 1000.0
omega = 2 * np.pi * f
sigma = 1e-3
print("half-space, sigma = 1 mS/m, rho = 1.66 m, f = 1 kHz")
print(f"{'h [m]':>6} {'nu':>3} {'apparent/sigma':>15} {'closed form':>12}")
for h in (0.1, 0.5, 1.0):
    z = h / rho
    for nu, ref in ((0, 1 / np.sqrt(4 * z * z + 1)), (1, np.sqrt(4 * z * z + 1) - 2 * z)):
        M = forward_reading(LayeredModel([sigma], []), h, omega, rho, nu)
        apparent = 4 * M.imag / (MU0 * omega * rho**2)
        print(f"{h:6.1f} {nu:3d} {apparent / sigma:15.4f} {ref:12.4f}")

# --- 2. a buried conductor ------------------------------------------------------
dev = device_preset("gem2")
geo = Geometry()
print("\nGEM-2 quadrature readings (vertical coils) for a 1 S/m layer below depth z")
print("z [m]  " + "  ".join(f"{fr/1e3:6.2f}k" for fr in dev.omega / (2 * np.pi)))
for top in (0, 4, 8, 12, 16):
    s = np.zeros(geo.n)
    s[top:] = 1.0
    M = forward_batch(s, geo.mu, geo.d, dev)[0][: dev.m // 2]
    print(f"{top * 0.25:5.2f}  " + "  ".join(f"{v:7.4f}" for v in M.imag))

# --- 3. timing --------------------------------------------------------------------
s = np.random.default_rng(0).uniform(0, 1, geo.n)
forward_batch(s, geo.mu, geo.d, dev)  # compile
t = time.perf_counter()
for _ in range(20):
    forward_batch(s, geo.mu, geo.d, dev)
t_fwd = (time.perf_counter() - t) / 20
fd_jacobian(geo.model(s), dev)
t = time.perf_counter()
J = fd_jacobian(geo.model(s), dev)
t_jac = time.perf_counter() - t
print(f"\none forward evaluation: {1e3 * t_fwd:.1f} ms; Jacobian {J.shape}: {1e3 * t_jac:.1f} ms")
print("singular values of the stacked Jacobian:", np.array2string(np.linalg.svd(J, compute_uv=False), precision=2))
