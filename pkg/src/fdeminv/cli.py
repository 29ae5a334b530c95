"""Command-line driver: ``fdem-invert {forward,synth,invert,compare}``.

The JSON config may contain the sections ``device``, ``geometry``,
``phantom``, ``noise`` and ``solver`` (see README) plus the file keys
``sigma`` (forward input), ``data`` and ``reference`` (invert inputs).
Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .errors import SolverAbort
from .forward import PRESETS, forward_image
from .harness import METHODS, ExperimentConfig, invert, rre, run_experiment, synthesize
from .solvers import splicing

EXIT_USAGE = 2
EXIT_ABORT = 3


def _load(args) -> tuple[dict, Path]:
    raw, base = {}, Path.cwd()
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        base = path.resolve().parent
    if args.preset:
        dev = {k: v for k, v in raw.get("device", {}).items() if k in ("h",)}
        raw["device"] = {**dev, "preset": args.preset}
    if args.seed is not None:
        raw.setdefault("noise", {})["seed"] = args.seed
    return raw, base


def _path(raw, key, base) -> Path:
    if key not in raw:
        raise ValueError(f"config must name a '{key}' file")
    p = Path(raw[key])
    return p if p.is_absolute() else base / p


def _meta(cfg: ExperimentConfig) -> dict:
    return {"preset": cfg.preset or "custom", "h": cfg.h, "seed": cfg.noise.seed}


def cmd_forward(raw, base, out: Path, method=None) -> int:
    cfg = ExperimentConfig.from_dict(raw)
    Sigma, _ = dataio.read_sigma(_path(raw, "sigma", base))
    geo = cfg.geometry
    if Sigma.shape[0] != geo.n:
        raise ValueError(f"image has {Sigma.shape[0]} layers but geometry.n = {geo.n}")
    B = forward_image(Sigma, cfg.device_config(), geo.mu, geo.d, cfg.params.tol)
    dataio.write_data(out / "B.csv", B, {"preset": cfg.preset or "custom", "h": cfg.h})
    return 0


def cmd_synth(raw, base, out: Path, method=None) -> int:
    cfg = ExperimentConfig.from_dict(raw)
    ph, B, Bd = synthesize(cfg)
    meta = _meta(cfg)
    dataio.write_sigma(out / "Sigma_exact.csv", ph.Sigma, meta)
    dataio.write_data(out / "B.csv", B, meta)
    dataio.write_data(out / "B_delta.csv", Bd, meta)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return 0


def cmd_invert(raw, base, out: Path, method="alternating") -> int:
    cfg = ExperimentConfig.from_dict(raw)
    Bd, _ = dataio.read_data(_path(raw, "data", base))
    try:
        res = invert(method, Bd, cfg)
    except SolverAbort as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    meta = {**_meta(cfg), "method": method}
    dataio.write_sigma(out / "Sigma.csv", res.Sigma, meta)
    trace = res.trace.to_dict()
    trace["method"] = method
    trace["splicing"] = splicing(res.Sigma)
    if "reference" in raw:
        ref, _ = dataio.read_sigma(_path(raw, "reference", base))
        trace["rre"] = rre(res.Sigma, ref)
    (out / "trace.json").write_text(json.dumps(trace, indent=2) + "\n")
    if raw.get("pgm", True):
        dataio.write_pgm(out / "Sigma.pgm", res.Sigma)
    return 0


def cmd_compare(raw, base, out: Path, method=None) -> int:
    cfg = ExperimentConfig.from_dict(raw)
    try:
        rep = run_experiment(cfg)
    except SolverAbort as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    with open(out / "rre.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Example", "Method", "RRE", "Splicing"])
        for name, m, err, spl in rep.table():
            w.writerow([name, m, repr(err), repr(spl)])
    (out / "report.json").write_text(rep.to_json() + "\n")
    for m, img in rep.images.items():
        dataio.write_sigma(out / f"Sigma_{m}.csv", img, {**_meta(cfg), "method": m})
    return 0


COMMANDS = {"forward": cmd_forward, "synth": cmd_synth, "invert": cmd_invert, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fdem-invert", description="FDEM forward modelling and inversion.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--method", choices=METHODS, default="alternating")
    ap.add_argument("--seed", type=int, help="noise seed (overrides the config)")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--preset", choices=sorted(PRESETS), help="device preset (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        raw, base = _load(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](raw, base, out, args.method)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
