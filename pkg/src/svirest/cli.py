"""Command-line front end: ``svirest <command> CONFIG [--seed S] [--out PATH]``.

Exit codes are 0 on success, 2 for invalid input and 3 for numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec
from .deblur import DivergenceError, build_deblur_demo, deblur_tv, psnr
from .estimator import (IrcEstimator, ProductConvolution, centered_axis, load_estimate,
                        save_estimate, select_mu)
from .geometry import BoxDomain, LocationSet, fill_distance, generate_locations, \
    quasi_uniformity_ratio, separation_distance, GeometryReport
from .imageio import read_pfm, write_pfm, write_pgm
from .kernel import KernelQuadratureError, RadialKernelSpec, build_table
from .solver import FactorizationError
from .studies import StudyConfig, run_convergence_study, run_discretization_study
from .synthdata import (GaussianPhantom, PrescribedSmoothnessPhantom, PsfDataset,
                        sample_psfs)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (FactorizationError, KernelQuadratureError, DivergenceError,
                    FloatingPointError, np.linalg.LinAlgError)


def _header(config: dict) -> dict:
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
    return {"artifact_version": __version__, "config_hash": digest}


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _basis(cfg: dict) -> BasisSpec:
    return BasisSpec(cfg.get("kind", "haar"), int(cfg["signal_length"]),
                     cfg.get("levels"), int(cfg.get("dim", 1)))


def _domain(cfg, dim) -> BoxDomain:
    if cfg is None:
        return BoxDomain.unit(dim)
    return BoxDomain(tuple(cfg["lower"]), tuple(cfg["upper"]))


def _phantom(cfg: dict, basis: BasisSpec, domain: BoxDomain):
    kind = cfg.get("kind")
    L = basis.signal_length
    x = centered_axis(L, float(cfg.get("x_spacing", 1.0)))
    if kind == "gaussian":
        return GaussianPhantom(cfg.get("variant", "experiment"), (x,) * basis.dim, domain)
    if kind == "prescribed":
        return PrescribedSmoothnessPhantom(cfg.get("r", 1.0), cfg.get("s", 1.0),
                                           cfg.get("seed", 0), basis, (x,) * basis.dim, domain)
    raise ValueError(f"phantom kind must be 'gaussian' or 'prescribed', got {kind!r}")


def synthesize_dataset(cfg: dict, seed: int) -> PsfDataset:
    """Dataset from a ``synth`` config; ``sigma_rel`` scales with the peak coefficient."""
    basis = _basis(cfg["basis"])
    domain = _domain(cfg.get("domain"), basis.dim)
    phantom = _phantom(cfg["phantom"], basis, domain)
    Y = generate_locations(int(cfg["n"]), domain, cfg.get("scheme", "jittered-grid"), seed)
    N = cfg.get("N") or basis.size
    sigma = float(cfg.get("sigma", 0.0))
    if "sigma_rel" in cfg:
        clean = sample_psfs(phantom, Y, basis, N, 0.0, seed)
        sigma = float(cfg["sigma_rel"]) * float(np.abs(clean.observations).max())
    return sample_psfs(phantom, Y, basis, N, sigma, seed)


def cmd_synth(cfg, seed, out):
    ds = synthesize_dataset(cfg, seed)
    ds.save(out)
    return {"n": len(ds.locations), "N": ds.n_channels, "sigma": ds.noise_sigma}


def _geometry(Y: LocationSet, probe=None) -> GeometryReport:
    if len(Y) < 2:
        raise ValueError("geometry needs at least two locations")
    h = fill_distance(Y, Y.domain, probe)
    q = separation_distance(Y)
    res = probe if probe is not None else float(Y.domain.sides.min()) / 512
    return GeometryReport(h, q, h / q, res)


def cmd_estimate(cfg, seed, out):
    if "dataset" in cfg:
        ds = PsfDataset.load(cfg["dataset"])
    elif "synth" in cfg:
        ds = synthesize_dataset(cfg["synth"], seed)
    else:
        raise ValueError("estimate config needs 'dataset' or 'synth'")
    params = {k: cfg[k] for k in ("r", "s", "alpha") if k in cfg}
    X, y = ds.locations.points, ds.observations
    if "mu_candidates" in cfg:
        mu = select_mu(X, y, cfg["mu_candidates"], cfg.get("folds", 5), seed,
                       basis=ds.basis, **params)
    else:
        mu = float(cfg.get("mu", 1e-3))
    t0 = time.perf_counter()
    est = IrcEstimator(basis=ds.basis, mu=mu, **params).fit(X, y)
    elapsed = time.perf_counter() - t0
    save_estimate(est, out)
    report = {**_header(cfg), "mu": mu, "factorization_count": est.factorization_count_,
              "solve_count": est.solve_count_, "n": len(X), "N": ds.n_channels,
              "fit_seconds": elapsed,
              "geometry": _geometry(ds.locations).to_dict() if len(X) > 1 else None}
    _write_json(Path(out).with_suffix(".report.json"), report)
    return report


def cmd_study(runner):
    def run(cfg, seed, out):
        cfg = dict(cfg)
        if seed is not None:
            cfg["seed"] = seed
        out = out or cfg.get("out")
        if not out:
            raise ValueError("no output path: pass --out or set 'out' in the config")
        result = runner(StudyConfig.from_dict(cfg))
        result.write_csv(out)
        return {"rows": len(result.rows), "slope": result.fit.to_dict()}
    return run


def cmd_deblur(cfg, seed, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth = read_pfm(cfg["image"]) if "image" in cfg else None
    demo = build_deblur_demo(size=cfg.get("size", 128), patch=cfg.get("patch", 17),
                             grid=cfg.get("grid", 8), noise=cfg.get("noise", 0.01),
                             psf_noise=cfg.get("psf_noise", 0.0), s=cfg.get("s", 2),
                             mu=cfg.get("mu", 1e-6), seed=seed, truth=truth)
    op = demo.estimated
    if "estimate" in cfg:
        est = load_estimate(cfg["estimate"])
        x = centered_axis(est.basis_.signal_length, 1.0)
        y = np.arange(demo.truth.shape[0], dtype=float)
        op = ProductConvolution.from_estimate(est, (x,) * est.basis_.dim, (y, y), "same")
    degraded = read_pfm(cfg["degraded"]) if "degraded" in cfg else demo.degraded
    result = deblur_tv(degraded, op, cfg.get("lam", 0.01), cfg.get("iterations", 150))
    for name, img in (("degraded", degraded), ("restored", result.image)):
        write_pfm(out / f"{name}.pfm", img)
        write_pgm(out / f"{name}.pgm", img, 0.0, 1.0)
    report = {**_header(cfg), "psnr_degraded": psnr(demo.truth, degraded),
              "psnr_restored": psnr(demo.truth, result.image),
              "objective_final": result.objective[-1], "iterations": result.iterations}
    _write_json(out / "report.json", report)
    return report


def cmd_geometry(cfg, seed, out):
    if "dataset" in cfg:
        Y = PsfDataset.load(cfg["dataset"]).locations
    elif "locations" in cfg:
        pts = np.asarray(cfg["locations"], dtype=float)
        pts = pts[:, None] if pts.ndim == 1 else pts
        Y = LocationSet(pts, _domain(cfg.get("domain"), pts.shape[1]))
    elif "generate" in cfg:
        g = cfg["generate"]
        dim = int(g.get("dim", 1))
        Y = generate_locations(int(g["n"]), _domain(g.get("domain"), dim),
                               g.get("scheme", "jittered-grid"), seed)
    else:
        raise ValueError("geometry config needs 'dataset', 'locations' or 'generate'")
    report = {**_header(cfg), **_geometry(Y, cfg.get("probe_resolution")).to_dict()}
    _write_json(out, report)
    return report


def cmd_kernel_table(cfg, seed, out):
    spec = RadialKernelSpec(int(cfg["dim"]), int(cfg["order"]), float(cfg["alpha"]),
                            float(cfg["weight"]))
    table = build_table(spec, cfg.get("r_max"), int(cfg.get("nodes", 2048)),
                        float(cfg.get("quad_tolerance", 1e-10)))
    Path(out).with_suffix(".bin").write_bytes(table.to_bytes())
    report = {**_header(cfg), "rho_zero": table.rho_zero, "r_max": table.r_max,
              "tail_cutoff": table.tail_cutoff, "nodes": len(table.radii)}
    _write_json(Path(out).with_suffix(".json"), report)
    return report


COMMANDS = {
    "estimate": (cmd_estimate, "fit an estimate from a PSF dataset", "estimate"),
    "convergence": (cmd_study(run_convergence_study), "error vs number of PSFs", None),
    "discretization": (cmd_study(run_discretization_study), "error vs channel count", None),
    "deblur": (cmd_deblur, "TV deblurring demo with an estimated operator", "deblur_out"),
    "geometry": (cmd_geometry, "fill/separation report for a location set", "geometry.json"),
    "kernel-table": (cmd_kernel_table, "tabulate a radial kernel", "kernel"),
    "synth": (cmd_synth, "generate a synthetic PSF dataset", "dataset"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svirest", description="Estimate space-varying impulse responses from scattered PSFs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output path or stem")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func, _, default_out = COMMANDS[args.command]
    try:
        cfg = json.loads(Path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise ValueError("config must be a JSON object")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = args.out or cfg.get("out")
        if out:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
        if args.command in ("convergence", "discretization"):
            summary = func(cfg, args.seed, args.out)
        else:
            summary = func(cfg, seed, args.out or cfg.get("out") or default_out)
    except NUMERICAL_ERRORS as exc:
        print(f"svirest {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError) as exc:
        kind = "missing config key" if isinstance(exc, KeyError) else "invalid input"
        print(f"svirest {args.command}: {kind}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(summary, sort_keys=True, default=str))
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
