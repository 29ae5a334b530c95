"""Plain-text data and conductivity files.

Data files hold an ``m x N`` complex matrix::

    # fdem-data n_readings=<m> n_soundings=<N> order=nu,rho,h,omega
    # preset=gem2 seed=0
    re;im,re;im,...

Conductivity files hold an ``n x N`` real grid::

    # fdem-sigma n_layers=<n> n_soundings=<N>
    s,s,...

Further ``#`` lines after the header carry ``key=value`` metadata.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

DATA_TAG = "fdem-data"
SIGMA_TAG = "fdem-sigma"
ORDER = "nu,rho,h,omega"


class FormatError(ValueError):
    """Malformed file; the message carries the offending line number."""

    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _fmt(x: float) -> str:
    return repr(float(x))


def _meta_line(meta) -> list[str]:
    if not meta:
        return []
    return ["# " + " ".join(f"{k}={v}" for k, v in meta.items())]


def write_data(path, B, meta: dict | None = None) -> None:
    B = np.asarray(B, dtype=complex)
    if B.ndim != 2:
        raise ValueError("data must be a 2-D array")
    m, N = B.shape
    lines = [f"# {DATA_TAG} n_readings={m} n_soundings={N} order={ORDER}", *_meta_line(meta)]
    for row in B:
        lines.append(",".join(f"{_fmt(z.real)};{_fmt(z.imag)}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_sigma(path, Sigma, meta: dict | None = None) -> None:
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2:
        raise ValueError("conductivity image must be a 2-D array")
    n, N = S.shape
    lines = [f"# {SIGMA_TAG} n_layers={n} n_soundings={N}", *_meta_line(meta)]
    lines += [",".join(_fmt(v) for v in row) for row in S]
    Path(path).write_text("\n".join(lines) + "\n")


_KV = re.compile(r"(\w+)=(\S+)")


def _read(path, tag, keys):
    path = Path(path)
    text = path.read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise FormatError(path, 1, f"missing '# {tag}' header")
    head = text[0][1:].split()
    if not head or head[0] != tag:
        raise FormatError(path, 1, f"expected '# {tag}' header")
    fields = dict(_KV.findall(text[0]))
    try:
        dims = [int(fields[k]) for k in keys]
    except (KeyError, ValueError):
        raise FormatError(path, 1, f"header must define {', '.join(keys)}") from None
    meta, rows = {}, []
    for lineno, line in enumerate(text[1:], start=2):
        if line.startswith("#"):
            meta.update(_KV.findall(line))
        elif line.strip():
            rows.append((lineno, line))
    if len(rows) != dims[0]:
        raise FormatError(path, len(text), f"expected {dims[0]} rows, found {len(rows)}")
    return path, fields, dims, meta, rows


def read_data(path):
    """Returns ``(B, meta)``."""
    path, fields, (m, N), meta, rows = _read(path, DATA_TAG, ("n_readings", "n_soundings"))
    if fields.get("order", ORDER) != ORDER:
        raise FormatError(path, 1, f"unsupported reading order {fields['order']!r}")
    B = np.empty((m, N), dtype=complex)
    for i, (lineno, line) in enumerate(rows):
        cells = line.split(",")
        if len(cells) != N:
            raise FormatError(path, lineno, f"expected {N} cells, found {len(cells)}")
        for j, cell in enumerate(cells):
            parts = cell.split(";")
            try:
                if len(parts) != 2:
                    raise ValueError
                B[i, j] = complex(float(parts[0]), float(parts[1]))
            except ValueError:
                raise FormatError(path, lineno, f"cell {j + 1}: expected 're;im', got {cell.strip()!r}") from None
    return B, meta


def read_sigma(path):
    """Returns ``(Sigma, meta)``."""
    path, _, (n, N), meta, rows = _read(path, SIGMA_TAG, ("n_layers", "n_soundings"))
    S = np.empty((n, N))
    for i, (lineno, line) in enumerate(rows):
        cells = line.split(",")
        if len(cells) != N:
            raise FormatError(path, lineno, f"expected {N} values, found {len(cells)}")
        try:
            S[i] = [float(c) for c in cells]
        except ValueError:
            raise FormatError(path, lineno, "non-numeric value") from None
    return S, meta


def write_pgm(path, image, vmax: float | None = None) -> None:
    """8-bit binary greyscale quick-look, black = 0 and white = ``vmax``."""
    X = np.asarray(image, dtype=float)
    top = float(X.max()) if vmax is None else float(vmax)
    scaled = np.zeros_like(X) if top <= 0 else np.clip(X / top, 0, 1)
    pix = np.round(255 * scaled).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())
