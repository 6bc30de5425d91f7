"""Finite sweeps in eps: Robin vs Schrodinger spectra, measure convergence,
flexibility witnesses, and the oracle suite."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np
import scipy.sparse as sp
from shapely.geometry import Polygon as ShapelyPolygon

from .. import eigensolve as es
from .. import fem
from .. import geometry as geo
from .. import measures as ms
from .. import mesher, potentials
from ..errors import PerfolabError
from .config import ExperimentConfig

NAN = float("nan")


def _pool_map(fn, items, workers):
    """Map over sweep points; results always come back in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def inversions(seq) -> int:
    """Number of consecutive increases in a sequence meant to be non-increasing."""
    s = np.asarray(seq, dtype=float)
    return int(np.sum(np.diff(s) > 0))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _sigma(domain):
    return None if domain.is_torus else dict(domain.robin_weight)


def _solve(forms, k, seed=0):
    red = fem.apply_dirichlet(forms)
    spec = es.solve_lowest(red.A, red.M, min(k, red.A.shape[0]), seed=seed)
    return red, spec


def _certified(spec) -> bool:
    return spec.certified(es.CERT_TOL)


def _simple(spec, j) -> bool:
    return any(g == [j] for g in spec.clusters)


# --------------------------------------------------------------------------
# Schrodinger reference


def schrodinger_reference(config: ExperimentConfig, k: int | None = None):
    """Solve on the reference mesh and on its coarsening by two.

    Returns (mesh, reduced forms, spectrum, relative change between levels).
    """
    domain, V = config.domain.build(), config.potential.build()
    k = k or config.k
    h = config.mesh.h_reference
    coarse = fine = None
    for hh in (2.0 * h, h):
        mesh = mesher.triangulate_full(domain, hh)
        red, spec = _solve(fem.assemble_schrodinger(mesh, V, _sigma(domain)), k, config.seed)
        coarse, fine = fine, (mesh, red, spec)
    a, b = coarse[2].eigenvalues, fine[2].eigenvalues
    change = float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))
    return fine[0], fine[1], fine[2], change


def point_cloud(domain, n: int, seed: int) -> np.ndarray:
    """Seeded uniform points in the domain, shared by both sides of a comparison."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = domain.bounds
    if domain.is_torus:
        return rng.uniform((x0, y0), (x1, y1), size=(n, 2))
    out = np.zeros((0, 2))
    while len(out) < n:
        p = rng.uniform((x0, y0), (x1, y1), size=(2 * n, 2))
        out = np.vstack([out, p[domain.covers(p) & (domain.boundary_distance(p) > 1e-9)]])
    return out[:n]


def cloud_l2_distance(f, g, pts, area) -> float:
    """L2 distance of the normalised functions on a point cloud, up to sign."""
    a, b = f(pts), g(pts)
    ok = ~(np.isnan(a) | np.isnan(b))
    a, b = a[ok], b[ok]
    a = a / math.sqrt(np.mean(a * a))
    b = b / math.sqrt(np.mean(b * b))
    return math.sqrt(area) * min(math.sqrt(np.mean((a - b) ** 2)), math.sqrt(np.mean((a + b) ** 2)))


N_CLOUD = 4096


# --------------------------------------------------------------------------
# Robin vs Schrodinger


def _convergence_point(config: ExperimentConfig, ref, eps_control):
    eps, control = eps_control
    domain, V = config.domain.build(), config.potential.build()
    ref_mesh, ref_red, ref_spec = ref
    base = dict(eps=eps, control=control)
    try:
        sset, cells, classes, pd, mu = geo.build_perforated(
            domain, V, config.schedule.build(), eps, config.seed, config.samples_per_cell)
        sf = config.mesh.size_field(eps)
        if control:
            sf = mesher.SizeField(0.5 * sf.h_max, 2.0 * sf.hole_factor, sf.grading)
        mesh = mesher.triangulate_perforated(pd, sf)
        forms = fem.assemble_robin(mesh, pd.hole_weights(), _sigma(domain))
        red, spec = _solve(forms, config.k, config.seed)
    except PerfolabError as exc:
        return [dict(base, k_index=j + 1, status=f"failed: {type(exc).__name__}: {exc}")
                for j in range(config.k)]
    dist = [NAN] * config.k
    if config.eigenfunctions:
        full = mesher.fill_holes(mesh)
        pts = point_cloud(domain, N_CLOUD, config.seed)
        for j in range(min(config.k, spec.k)):
            if _simple(spec, j) and _simple(ref_spec, j):
                u = fem.extend_over_holes(mesh, red.inflate(spec.eigenvectors[:, j]), full)
                v = fem.FeFunction(ref_mesh, ref_red.inflate(ref_spec.eigenvectors[:, j]))
                dist[j] = cloud_l2_distance(u, v, pts, domain.area)
    rows = []
    for j in range(config.k):
        lr, ls = float(spec.eigenvalues[j]), float(ref_spec.eigenvalues[j])
        rows.append(dict(
            base, alpha=pd.alpha, k_index=j + 1, n_holes=len(pd.holes),
            lambda_robin=lr, lambda_schrodinger=ls, abs_diff=abs(lr - ls),
            eigenfunction_l2_distance=dist[j],
            dofs_robin=mesh.n_dofs, dofs_schrodinger=ref_mesh.n_dofs,
            residual_robin=float(spec.residuals[j]),
            residual_schrodinger=float(ref_spec.residuals[j]),
            orthonormality_robin=spec.orthonormality,
            inertia_robin=spec.inertia, inertia_expected_robin=spec.expected,
            certified=_certified(spec) and _certified(ref_spec), status="ok"))
    return rows


CONVERGENCE_COLUMNS = [
    "eps", "control", "alpha", "k_index", "n_holes", "lambda_robin", "lambda_schrodinger",
    "abs_diff", "eigenfunction_l2_distance", "dofs_robin", "dofs_schrodinger",
    "residual_robin", "residual_schrodinger", "orthonormality_robin", "inertia_robin",
    "inertia_expected_robin", "certified", "status",
]


def run_convergence(config: ExperimentConfig):
    """Rows of Robin vs Schrodinger eigenvalues along the eps sweep.

    Returns (rows, info) where info carries the reference-mesh refinement change.
    """
    mesh, red, spec, change = schrodinger_reference(config)
    points = [(e, 0) for e in config.eps]
    if config.control_run:
        points.append((config.eps[-1], 1))
    job = partial(_convergence_point, config, (mesh, red, spec))
    rows = [r for chunk in _pool_map(job, points, config.workers) for r in chunk]
    info = dict(reference_dofs=mesh.n_dofs, reference_refinement_change=change,
                reference_certified=_certified(spec))
    return rows, info


# --------------------------------------------------------------------------
# measures


class TrigTest:
    """``sum_ij c_ij cos(w (i x1 + j x2))``; picklable so sweeps can run in worker processes."""

    def __init__(self, coeffs, w):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.w = float(w)

    def __call__(self, p):
        out = np.zeros(len(p))
        for (i, j), c in np.ndenumerate(self.coeffs):
            if c != 0.0:
                out += c * np.cos(self.w * (i * p[:, 0] + j * p[:, 1]))
        return out


def default_tests(seed: int, period: float = 1.0, degree: int = 2):
    """1, cos 2pi x1, cos 2pi x2 and a seeded random trigonometric polynomial."""
    w = 2.0 * math.pi / period
    unit = lambda i, j: TrigTest(np.eye(1, 9, 3 * i + j).reshape(3, 3), w)
    c = np.random.default_rng(seed).standard_normal((degree + 1, degree + 1))
    return {"one": unit(0, 0), "cos_x1": unit(1, 0), "cos_x2": unit(0, 1),
            "trig_poly": TrigTest(c, w)}


def domain_integral(domain, f, refine: int = 24) -> float:
    if domain.is_torus:
        L = domain.side
        poly = np.array([[0, 0], [L, 0], [L, L], [0, L]], dtype=float)
    else:
        poly = np.asarray(domain.vertices, dtype=float)
    return ms.integrate_polygon(poly, poly.mean(axis=0), f, refine)


def _measure_point(config: ExperimentConfig, tests, seed_eps):
    seed, eps = seed_eps
    domain, V = config.domain.build(), config.potential.build()
    try:
        sset, cells, classes, pd, mu = geo.build_perforated(
            domain, V, config.schedule.build(), eps, seed, config.samples_per_cell)
    except PerfolabError as exc:
        return [dict(seed=seed, eps=eps, test=name, status=f"failed: {type(exc).__name__}: {exc}")
                for name in tests]
    wrap = domain.wrap if domain.is_torus else None
    perf = [c for c, k in zip(cells, classes) if k is geo.SiteClass.PERFORATED]
    ratios = np.array([ms.cell_ratio(c, V, mu, wrap=wrap) for c in perf])
    dev = float(np.max(np.abs(1.0 - ratios))) if len(ratios) else NAN
    mu = ms.BoundaryMeasure(mu.centers, mu.radii, mu.weights, config.n_quad, mu.period)
    rows = []
    for name, f in tests.items():
        exact = domain_integral(domain, lambda p: f(p) * V(p))
        val = ms.pair(mu, f)
        rows.append(dict(seed=seed, eps=eps, alpha=pd.alpha, test=name, pairing=val, exact=exact,
                         abs_error=abs(val - exact), n_perforated=len(perf),
                         max_ratio_deviation=dev, status="ok"))
    return rows


MEASURE_COLUMNS = ["seed", "eps", "alpha", "test", "pairing", "exact", "abs_error",
                   "n_perforated", "max_ratio_deviation", "status"]


def run_measure_convergence(config: ExperimentConfig, tests: dict | None = None):
    period = config.domain.side if config.domain.kind == "torus" else 1.0
    tests = tests or default_tests(config.seed, period)
    points = [(s, e) for s in config.replicate_seeds for e in config.eps]
    job = partial(_measure_point, config, tests)
    return [r for chunk in _pool_map(job, points, config.workers) for r in chunk]


def measure_summary(rows):
    """Per eps: mean over seeds of the max pairing error and of the max ratio deviation."""
    ok = [r for r in rows if r["status"] == "ok"]
    eps = sorted({r["eps"] for r in ok}, reverse=True)
    seeds = sorted({r["seed"] for r in ok})
    err, dev = [], []
    for e in eps:
        err.append(np.mean([max(r["abs_error"] for r in ok if r["eps"] == e and r["seed"] == s)
                            for s in seeds]))
        dev.append(np.mean([next(r["max_ratio_deviation"] for r in ok
                                 if r["eps"] == e and r["seed"] == s) for s in seeds]))
    return np.array(eps), np.array(err), np.array(dev)


# --------------------------------------------------------------------------
# flexibility


def _flex_point(config: ExperimentConfig, p0, p_values, delta_fraction, hole_factor, ref_vals, eps):
    domain, V = config.domain.build(), config.potential.build()
    sched = geo.FlexPower(p0)
    try:
        sset, cells, classes, pd, mu = geo.build_perforated(
            domain, V, sched, eps, config.seed, config.samples_per_cell)
        mesh = mesher.triangulate_perforated(pd, config.mesh.size_field(eps, hole_factor))
        full = mesher.fill_holes(mesh)
        w = ms.build_trial(pd)
        gaps = [ms.witness_terms(mu, V, w, p, full) for p in p_values]
        sigma = _sigma(domain)
        _, s_mu = _solve(fem.assemble_schrodinger(full, None, sigma, pd.hole_weights()),
                         config.k, config.seed)
        delta = delta_fraction * float(pd.radii.min())
        Vd = ms.mollify(mu, delta).as_potential()
        _, s_mo = _solve(fem.assemble_schrodinger(full, Vd, sigma), config.k, config.seed)
    except PerfolabError as exc:
        msg = f"failed: {type(exc).__name__}: {exc}"
        return ([dict(eps=eps, p=p, status=msg) for p in p_values],
                [dict(eps=eps, k_index=j + 1, status=msg) for j in range(config.k)])
    gap_rows = [dict(eps=eps, alpha=pd.alpha, p=p, n_holes=len(pd.holes), pairing=g[0],
                     integral=g[1], wp_norm=g[2], gap=g[3], status="ok")
                for p, g in zip(p_values, gaps)]
    spec_rows = []
    for j in range(config.k):
        a, b = float(s_mu.eigenvalues[j]), float(s_mo.eigenvalues[j])
        spec_rows.append(dict(
            eps=eps, alpha=pd.alpha, k_index=j + 1, delta=delta, dofs=full.n_dofs,
            lambda_measure=a, lambda_mollified=b, lambda_potential=float(ref_vals[j]),
            rel_diff_mollified=abs(a - b) / abs(a), abs_diff_potential=abs(a - float(ref_vals[j])),
            residual_measure=float(s_mu.residuals[j]), residual_mollified=float(s_mo.residuals[j]),
            certified=_certified(s_mu) and _certified(s_mo), status="ok"))
    return gap_rows, spec_rows


GAP_COLUMNS = ["eps", "alpha", "p", "n_holes", "pairing", "integral", "wp_norm", "gap", "status"]
FLEX_SPECTRUM_COLUMNS = [
    "eps", "alpha", "k_index", "delta", "dofs", "lambda_measure", "lambda_mollified",
    "lambda_potential", "rel_diff_mollified", "abs_diff_potential", "residual_measure",
    "residual_mollified", "certified", "status",
]


def run_flexibility(config: ExperimentConfig, p0: float | None = None, p_values=None,
                    delta_fraction: float = 0.25, hole_factor: float = 8.0):
    """Witness gaps and measure/mollified spectra under alpha = eps^(-d(p0-1)/(d-p0)).

    The hole mesh is refined to ``r / hole_factor`` so the delta-tube of the
    mollified potential spans several elements.
    """
    p0 = p0 if p0 is not None else config.schedule.p0
    p_values = list(p_values or config.p_values)
    _, _, ref_spec, _ = schrodinger_reference(config)
    job = partial(_flex_point, config, p0, p_values, delta_fraction, hole_factor,
                  ref_spec.eigenvalues.tolist())
    out = _pool_map(job, config.eps, config.workers)
    gaps = [r for g, _ in out for r in g]
    spectra = [r for _, s in out for r in s]
    return gaps, spectra, dict(reference_certified=_certified(ref_spec))


# --------------------------------------------------------------------------
# oracles


def _random_pencil(rng, n):
    """Sparse SPD pencil: a perturbed path-graph Laplacian against a diagonal-ish mass."""
    off = -rng.uniform(0.5, 2.0, n - 1)
    A = sp.diags([off, np.concatenate([[0.0], -off]) + np.concatenate([-off, [0.0]])
                  + rng.uniform(0.1, 1.0, n), off], [-1, 0, 1])
    m = rng.uniform(0.1, 0.2, n - 1)
    M = sp.diags([m, 1.0 + rng.uniform(0, 1, n), m], [-1, 0, 1])
    return sp.csr_matrix(A), sp.csr_matrix(M)


def _record(name, value, tol, passed, detail=""):
    return dict(name=name, value=float(value), tolerance=float(tol), passed=bool(passed), detail=detail)


def run_oracle_suite(seed: int = 0, instances: int = 50):
    report = []
    rng = np.random.default_rng(seed)

    worst, certs = 0.0, True
    for _ in range(instances):
        n = int(rng.integers(60, 200))
        A, M = _random_pencil(rng, n)
        it = es.solve_lowest(A, M, 5, seed=seed)
        de = es.dense_oracle(A, M, 5)
        worst = max(worst, float(np.max(np.abs(it.eigenvalues - de.eigenvalues)
                                        / np.abs(de.eigenvalues))))
        certs &= _certified(it)
    report.append(_record("dense_vs_iterative", worst, 1e-9, worst < 1e-9 and certs,
                          f"{instances} random pencils, lowest 5"))

    sq = geo.unit_square(dirichlet_edges=(0, 1, 2, 3))
    lam = []
    for h in (0.04, 0.02):
        m = mesher.triangulate_full(sq, h)
        lam.append(_solve(fem.assemble_robin(m, {}), 1)[1].eigenvalues[0])
    rich = (4.0 * lam[1] - lam[0]) / 3.0
    err = abs(rich - 2 * math.pi**2) / (2 * math.pi**2)
    report.append(_record("square_dirichlet_richardson", err, 1e-3, err < 1e-3))

    m = mesher.triangulate_full(geo.Torus(1.0), 0.05)
    _, s = _solve(fem.assemble_schrodinger(m, potentials.constant(1.0)), 5)
    mult = len(s.clusters[1]) if len(s.clusters) > 1 else 0
    report.append(_record("torus_lambda2_multiplicity", mult, 0, mult == 4,
                          f"lambda1={float(s.eigenvalues[0])!r}"))

    best = max_packing_torus(0.6, 20)
    sizes = {len(geo.build_separated_set(geo.Torus(1.0), 0.6, s)) for s in range(5)}
    report.append(_record("torus_packing_eps0.6", best, 0, sizes == {best},
                          f"exhaustive={best}, built={sorted(sizes)}"))

    worst = 0.0
    for dom in (geo.Torus(1.0), geo.unit_square()):
        cells = geo.voronoi(geo.build_separated_set(dom, 0.1, seed), dom)
        worst = max(worst, geo.cell_area_defect(cells, dom))
        worst = max(worst, max(abs(ShapelyPolygon(c.polygon).area - c.area) for c in cells))
    report.append(_record("voronoi_area_partition", worst, 1e-12, worst <= 1e-12))
    return report


def max_packing_torus(eps: float, n: int = 20) -> int:
    """Largest eps-separated subset of the n x n grid on the unit torus.

    Translation invariance fixes one point at the origin; the rest is a
    clique search over the compatibility graph.
    """
    g = np.arange(n) / n
    pts = np.array([(a, b) for a in g for b in g])

    def dist(p, q):
        d = np.abs(p - q)
        d = np.minimum(d, 1.0 - d)
        return np.hypot(d[..., 0], d[..., 1])

    cand = [i for i in range(len(pts)) if dist(pts[i], pts[0]) >= eps - 1e-12]
    best = 1

    def grow(chosen, rest):
        nonlocal best
        best = max(best, len(chosen))
        for idx, i in enumerate(rest):
            if len(chosen) + len(rest) - idx <= best:
                return
            nxt = [j for j in rest[idx + 1:] if dist(pts[i], pts[j]) >= eps - 1e-12]
            grow(chosen + [i], nxt)

    grow([0], cand)
    return best
