"""Command line entry point: ``perfolab <subcommand> --config run.toml``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import fem, geometry as geo, mesher
from ..errors import PerfolabError
from . import experiments as ex
from .config import ExperimentConfig, load_config
from .output import write_csv, write_manifest

log = logging.getLogger("perfolab")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "out", None):
        cfg = cfg.model_copy(update={"output": args.out})
    if getattr(args, "workers", None):
        cfg = cfg.model_copy(update={"workers": args.workers})
    return cfg


def _eps_tag(eps: float) -> str:
    return repr(float(eps)).replace(".", "p")


def _finish(cfg, outdir: Path, outputs: dict, summary: dict, ok: bool) -> int:
    summary["all_certified"] = ok
    write_manifest(outdir / "manifest.json", cfg, outputs, summary)
    log.info("wrote %s (%s)", outdir, "certified" if ok else "CERTIFICATE FAILURES")
    return 0 if ok else 1


# -- subcommands --------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    domain, V = cfg.domain.build(), cfg.potential.build()
    rows, outputs = [], {}
    for eps in ([args.eps] if args.eps else cfg.eps):
        sset, cells, classes, pd, mu = geo.build_perforated(
            domain, V, cfg.schedule.build(), eps, cfg.seed, cfg.samples_per_cell)
        sep, gap = geo.separation_and_gap(sset, domain)
        name = f"perforated_eps{_eps_tag(eps)}.json"
        (out / name).write_text(geo.perforated_to_json(pd) + "\n")
        (out / f"sites_eps{_eps_tag(eps)}.json").write_text(geo.sset_to_json(sset) + "\n")
        rows.append(dict(eps=eps, alpha=pd.alpha, n_sites=len(sset), separation=sep, coverage_gap=gap,
                         n_boundary=sum(c is geo.SiteClass.BOUNDARY for c in classes),
                         n_near_zero=sum(c is geo.SiteClass.NEAR_ZERO for c in classes),
                         n_perforated=len(pd.holes), measure_mass=mu.mass,
                         total_variation=mu.total_variation))
    outputs["perforations.csv"] = write_csv(out / "perforations.csv", rows)
    return _finish(cfg, out, outputs, {"points": len(rows)}, True)


def _load_perforated(args, cfg):
    if args.perforated:
        return geo.perforated_from_json(Path(args.perforated).read_text())
    if args.eps is None:
        raise SystemExit("need --eps or --perforated")
    return geo.build_perforated(cfg.domain.build(), cfg.potential.build(), cfg.schedule.build(),
                                args.eps, cfg.seed, cfg.samples_per_cell)[3]


def cmd_mesh(args) -> int:
    cfg = _config(args)
    if args.full:
        mesh = mesher.triangulate_full(cfg.domain.build(), cfg.mesh.h_reference)
    else:
        pd = _load_perforated(args, cfg)
        mesh = mesher.triangulate_perforated(pd, cfg.mesh.size_field(pd.eps))
        if args.fill:
            mesh = mesher.fill_holes(mesh)
    text = mesher.mesh_to_text(mesh)
    if args.mesh_out:
        Path(args.mesh_out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("mesh: %d vertices, %d triangles, min angle %.2f", mesh.n_vertices,
             len(mesh.triangles), mesh.min_angle())
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    domain = cfg.domain.build()
    sigma = None if domain.is_torus else dict(domain.robin_weight)
    if args.schrodinger:
        mesh = (mesher.mesh_from_text(Path(args.mesh).read_text()) if args.mesh
                else mesher.triangulate_full(domain, cfg.mesh.h_reference))
        forms = fem.assemble_schrodinger(mesh, cfg.potential.build(), sigma)
    else:
        pd = _load_perforated(args, cfg)
        mesh = (mesher.mesh_from_text(Path(args.mesh).read_text()) if args.mesh
                else mesher.triangulate_perforated(pd, cfg.mesh.size_field(pd.eps)))
        forms = fem.assemble_robin(mesh, pd.hole_weights(), sigma)
    red, spec = ex._solve(forms, cfg.k, cfg.seed)
    ok = ex._certified(spec)
    rows = [dict(k_index=j + 1, eigenvalue=float(spec.eigenvalues[j]),
                 residual=float(spec.residuals[j]), orthonormality=spec.orthonormality,
                 inertia=spec.inertia, inertia_expected=spec.expected, certified=ok)
            for j in range(spec.k)]
    out = Path(cfg.output)
    outputs = {"spectrum.csv": write_csv(out / "spectrum.csv", rows)}
    return _finish(cfg, out, outputs, {"dofs": mesh.n_dofs}, ok)


def cmd_convergence(args) -> int:
    cfg = _config(args)
    rows, info = ex.run_convergence(cfg)
    out = Path(cfg.output)
    outputs = {"convergence.csv": write_csv(out / "convergence.csv", rows, ex.CONVERGENCE_COLUMNS)}
    ok = info["reference_certified"] and all(r["status"] == "ok" and r["certified"] for r in rows)
    return _finish(cfg, out, outputs, info, ok)


def cmd_measures(args) -> int:
    cfg = _config(args)
    rows = ex.run_measure_convergence(cfg)
    out = Path(cfg.output)
    outputs = {"measures.csv": write_csv(out / "measures.csv", rows, ex.MEASURE_COLUMNS)}
    eps, err, dev = ex.measure_summary(rows)
    ok_dev = ~np.isnan(dev)
    summary = dict(pairing_error_inversions=ex.inversions(err),
                   ratio_deviation_slope=ex.loglog_slope(eps[ok_dev], dev[ok_dev])
                   if ok_dev.sum() >= 2 else None)
    return _finish(cfg, out, outputs, summary, all(r["status"] == "ok" for r in rows))


def cmd_flexibility(args) -> int:
    cfg = _config(args)
    gaps, spectra, info = ex.run_flexibility(cfg, p0=args.p0)
    out = Path(cfg.output)
    outputs = {
        "flexibility_gaps.csv": write_csv(out / "flexibility_gaps.csv", gaps, ex.GAP_COLUMNS),
        "flexibility_spectra.csv": write_csv(out / "flexibility_spectra.csv", spectra,
                                             ex.FLEX_SPECTRUM_COLUMNS),
    }
    ok = info["reference_certified"] and all(
        r["status"] == "ok" and r["certified"] for r in spectra) and all(
        r["status"] == "ok" for r in gaps)
    return _finish(cfg, out, outputs, info, ok)


def cmd_oracles(args) -> int:
    cfg = _config(args)
    report = ex.run_oracle_suite(cfg.seed)
    out = Path(cfg.output)
    outputs = {"oracles.csv": write_csv(out / "oracles.csv", report)}
    for r in report:
        log.info("%-32s %s  value=%r tol=%r", r["name"], "PASS" if r["passed"] else "FAIL",
                 r["value"], r["tolerance"])
    return _finish(cfg, out, outputs, {"passed": sum(r["passed"] for r in report),
                                       "total": len(report)}, all(r["passed"] for r in report))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfolab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", help="TOML or JSON experiment file")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.set_defaults(func=fn)
        return s

    s = add("generate", cmd_generate, "separated sets, Voronoi classes and hole layouts")
    s.add_argument("--eps", type=float)
    s = add("mesh", cmd_mesh, "mesh one perforated domain (or the full domain)")
    s.add_argument("--eps", type=float)
    s.add_argument("--perforated", help="perforated-domain JSON from `generate`")
    s.add_argument("--full", action="store_true", help="mesh the unperforated domain")
    s.add_argument("--fill", action="store_true", help="also triangulate the hole interiors")
    s.add_argument("--mesh-out", help="write the mesh here instead of stdout")
    s = add("solve", cmd_solve, "certified lowest eigenvalues at one eps")
    s.add_argument("--eps", type=float)
    s.add_argument("--perforated")
    s.add_argument("--mesh", help="mesh file from `mesh`")
    s.add_argument("--schrodinger", action="store_true", help="solve -Delta + V on the full domain")
    for name, fn, h in (("convergence", cmd_convergence, "Robin vs Schrodinger sweep"),
                        ("measures", cmd_measures, "boundary-measure convergence sweep")):
        s = add(name, fn, h)
        s.add_argument("--workers", type=int)
    s = add("flexibility", cmd_flexibility, "dual-norm witnesses and mollified spectra")
    s.add_argument("--workers", type=int)
    s.add_argument("--p0", type=float)
    add("oracles", cmd_oracles, "closed-form and dense cross-checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except (PerfolabError, ValueError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
