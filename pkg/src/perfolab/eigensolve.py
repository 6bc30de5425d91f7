"""Lowest eigenpairs of sparse symmetric pencils with inertia certificates.

The iterative path runs ARPACK in shift-invert mode around a shift known
to lie below the spectrum (Sylvester inertia zero), then cleans up with a
Rayleigh-Ritz step. Every returned spectrum carries residuals, an
M-orthonormality error and an inertia count at a point between the last
requested cluster and the next eigenvalue.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import ConvergenceFailure, FactorizationFailure, SizeExceeded

DENSE_LIMIT = 2000       # largest problem the dense oracle accepts
DENSE_CUTOFF = 40        # below this the solver goes dense directly
CLUSTER_RTOL = 1e-6
CERT_TOL = 1e-8


@dataclass(eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    orthonormality: float
    shift: float
    lambda_hat: float | None = None
    inertia: int | None = None
    expected: int | None = None
    method: str = "arpack"
    clusters: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def inertia_ok(self) -> bool:
        return self.inertia is not None and self.inertia == self.expected

    def certified(self, tol: float = CERT_TOL) -> bool:
        return bool(np.all(self.residuals <= tol) and self.orthonormality <= tol and self.inertia_ok)


def _norm1(A) -> float:
    return float(abs(A).sum(axis=0).max())


def _factor(S):
    """LDL-style factorisation; returns (number of negative pivots, solver)."""
    n = S.shape[0]
    if n <= 400:
        lu, d, perm = la.ldl(S.toarray() if sp.issparse(S) else S)
        ev = []
        i = 0
        while i < n:
            if i + 1 < n and d[i + 1, i] != 0.0:
                ev.extend(np.linalg.eigvalsh(d[i:i + 2, i:i + 2]))
                i += 2
            else:
                ev.append(d[i, i])
                i += 1
        ev = np.asarray(ev)
        scale = max(np.abs(ev).max(), 1e-300)
        if np.any(np.abs(ev) <= 1e-14 * scale):
            raise FactorizationFailure("singular pencil at this shift")
        dense = S.toarray() if sp.issparse(S) else S
        cho = la.lu_factor(dense)
        return int(np.sum(ev < 0)), (lambda b: la.lu_solve(cho, b))
    try:
        lu = splu(sp.csc_matrix(S), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise FactorizationFailure(str(exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise FactorizationFailure("pivoting broke symmetry; inertia unreliable")
    d = lu.U.diagonal()
    scale = max(np.abs(d).max(), 1e-300)
    if not np.all(np.isfinite(d)) or np.any(np.abs(d) <= 1e-14 * scale):
        raise FactorizationFailure("singular pencil at this shift")
    return int(np.sum(d < 0)), lu.solve


def inertia_count(A, M, lam: float, retries: int = 3) -> int:
    """Number of eigenvalues of (A, M) strictly below ``lam`` (Sylvester)."""
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    for k in range(retries + 1):
        try:
            return _factor((A - lam * M).tocsc())[0]
        except FactorizationFailure:
            if k == retries:
                raise
            lam = lam + 1e-10 * max(1.0, abs(lam))
    raise FactorizationFailure("unreachable")


def _find_shift(A, M, start=-1.0, max_iter=80):
    sigma, step = start, 1.0
    for _ in range(max_iter):
        try:
            count, solve = _factor((A - sigma * M).tocsc())
        except FactorizationFailure:
            count, solve = 1, None
        if count == 0:
            return sigma, solve
        sigma -= step
        step *= 2.0
    raise FactorizationFailure("no shift below the spectrum was found")


def _clusters(vals, rtol=CLUSTER_RTOL):
    groups = [[0]] if len(vals) else []
    for i in range(1, len(vals)):
        tol = rtol * max(abs(vals[i]), abs(vals[i - 1]), 1e-12)
        if vals[i] - vals[i - 1] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _finish(A, M, vals, vecs, k, sigma, method, certify=True):
    """Rayleigh-Ritz cleanup, residuals, clusters and the inertia certificate."""
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    if method != "dense":
        Ar = vecs.T @ (A @ vecs)
        Mr = vecs.T @ (M @ vecs)
        vals, Q = la.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
        vecs = vecs @ Q
    normA = _norm1(A)
    R = A @ vecs - (M @ vecs) * vals
    res = np.linalg.norm(R, axis=0) / (normA * np.linalg.norm(vecs, axis=0))
    G = vecs.T @ (M @ vecs)
    ortho = float(np.abs(G - np.eye(len(vals))).max()) if len(vals) else 0.0
    groups = _clusters(vals)
    spec = Spectrum(vals[:k], vecs[:, :k], res[:k], ortho, sigma, method=method)
    spec.clusters = [g for g in groups if g[0] < k]
    if certify:
        last = spec.clusters[-1][-1]
        if last + 1 < len(vals):
            lam_hat = 0.5 * (vals[last] + vals[last + 1])
        else:
            lam_hat = vals[last] + max(CLUSTER_RTOL * abs(vals[last]), 1e-10)
        spec.lambda_hat = float(lam_hat)
        spec.expected = last + 1
        spec.inertia = inertia_count(A, M, lam_hat)
    return spec


def solve_lowest(A, M, k: int, extra: int = 5, seed: int = 0, certify: bool = True) -> Spectrum:
    """Lowest ``k`` eigenpairs of the symmetric pencil (A, M), M positive definite."""
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    sigma, solve = _find_shift(A, M)
    nev = min(k + extra, n)
    if n <= DENSE_CUTOFF or nev >= n - 1:
        vals, vecs = la.eigh(A.toarray(), M.toarray())
        return _finish(A, M, vals[:nev], vecs[:, :nev], k, sigma, "dense", certify)
    op = LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    ncv = min(n, max(2 * nev + 1, 20))
    try:
        vals, vecs = eigsh(A, k=nev, M=M, sigma=sigma, which="LM", OPinv=op, v0=v0,
                           ncv=ncv, tol=0.0, maxiter=max(1000, 10 * n))
    except ArpackNoConvergence as exc:
        got = len(exc.eigenvalues)
        if got < k:
            raise ConvergenceFailure(f"only {got} of {k} eigenpairs converged", k_achieved=got) from exc
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    spec = _finish(A, M, vals, vecs, min(k, len(vals)), sigma, "arpack", certify)
    # a cluster running off the computed block leaves the inertia unverified; widen once
    if certify and not spec.inertia_ok and extra < 4 * k + 20:
        return solve_lowest(A, M, k, extra=2 * extra + 5, seed=seed, certify=certify)
    return spec


def dense_oracle(A, M, k: int | None = None) -> Spectrum:
    """Full dense generalized eigendecomposition, for cross-checks."""
    n = A.shape[0]
    if n > DENSE_LIMIT:
        raise SizeExceeded(f"dense oracle limited to n <= {DENSE_LIMIT}, got {n}")
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    vals, vecs = la.eigh(Ad, Md)
    k = n if k is None else k
    return _finish(sp.csr_matrix(Ad), sp.csr_matrix(Md), vals, vecs, k, float("nan"),
                   "dense", certify=False)
