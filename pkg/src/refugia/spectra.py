"""Principal eigenpairs of -Delta + q and the bifurcation tangents built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, RegionMismatch
from .geometry import Field, Grid, Region, as_values
from .operators import dirichlet_laplacian_refuge, neumann_laplacian, shifted_inverse

EIG_TOL = 1e-9
_CURVE_CACHE_SIZE = 4096


@dataclass(frozen=True)
class EigenResult:
    value: float
    eigenfunction: Field
    residual: float
    iterations: int


def _wnorm(w, x):
    return float(np.sqrt(w @ (x * x)))


def _operator(grid: Grid, region: Region, bc: str) -> sp.csr_matrix:
    if bc == "neumann":
        if region is Region.REFUGE:
            raise RegionMismatch("Neumann eigenproblems live on omega or omega1")
        return -neumann_laplacian(grid, region).matrix
    if bc == "dirichlet":
        if region is not Region.REFUGE:
            raise RegionMismatch("Dirichlet eigenproblems live on the refuge")
        return dirichlet_laplacian_refuge(grid).matrix
    raise ValueError(f"unknown boundary condition {bc!r}")


def principal_eigen(
    grid: Grid,
    region: Region,
    q=0.0,
    bc: str = "neumann",
    tol: float = EIG_TOL,
    maxiter: int = 200,
    x0: np.ndarray | None = None,
) -> EigenResult:
    """Smallest eigenvalue of -Delta + q and its positive eigenfunction.

    Inverse iteration with a fixed shift below min(q) runs until the
    Rayleigh quotient settles, then Rayleigh quotient iteration polishes the
    pair. The eigenfunction is normalized to unit weighted L2 norm.
    """
    region = Region(region)
    n = grid.region_size(region)
    if np.isscalar(q):
        q_vals = np.full(n, float(q))
    else:
        q_vals, _ = as_values(grid, q, region)
    if not np.all(np.isfinite(q_vals)):
        raise NoConvergence("potential is not finite")
    A = (_operator(grid, region, bc) + sp.diags(q_vals)).tocsc()
    w = grid.region_weights(region)
    eye = sp.identity(n, format="csc")

    x = np.ones(n) if x0 is None else np.abs(np.asarray(x0, dtype=float)) + 1e-300
    x /= _wnorm(w, x)
    shift = float(q_vals.min()) - 1.0
    lu = spla.splu(A - shift * eye)
    rq = float(w @ (x * (A @ x)))
    it = 0
    scale = max(1.0, float(np.abs(q_vals).max()))
    res = np.inf

    # fixed-shift phase: global convergence to the principal pair
    for it in range(1, maxiter + 1):
        y = lu.solve(x)
        x = y / _wnorm(w, y)
        rq_new = float(w @ (x * (A @ x)))
        res = _wnorm(w, A @ x - rq_new * x)
        done = abs(rq_new - rq) <= 1e-6 * scale or res <= tol
        rq = rq_new
        if done:
            break

    # Rayleigh quotient polish
    for _ in range(20):
        if res <= tol:
            break
        it += 1
        y = None
        # a shift equal to the eigenvalue to round-off gives a singular factor;
        # back off slightly below it, which still converges in a step or two
        for offset in (0.0, 1e-8 * scale):
            try:
                y = spla.splu(A - (rq - offset) * eye).solve(x)
            except RuntimeError:
                continue
            if np.all(np.isfinite(y)):
                break
            y = None
        if y is None:
            break
        y *= np.sign(w @ y) or 1.0
        x = y / _wnorm(w, y)
        rq = float(w @ (x * (A @ x)))
        res = _wnorm(w, A @ x - rq * x)

    x *= np.sign(w @ x) or 1.0
    if res > tol * scale:
        raise NoConvergence(f"eigen-residual {res:.3e} after {it} iterations")
    if x.min() <= 0:
        # Rayleigh iteration jumped to another mode: fall back to plain
        # inverse iteration with a shift near the estimate
        return _fallback(A, w, shift, tol, maxiter, region, scale)
    return EigenResult(rq, Field(region, x), res, it)


def _fallback(A, w, shift, tol, maxiter, region, scale) -> EigenResult:
    n = A.shape[0]
    lu = spla.splu(A - shift * sp.identity(n, format="csc"))
    x = np.ones(n) / np.sqrt(w.sum())
    res = np.inf
    for it in range(1, 50 * maxiter + 1):
        y = lu.solve(x)
        x = y / _wnorm(w, y)
        rq = float(w @ (x * (A @ x)))
        res = _wnorm(w, A @ x - rq * x)
        if res <= tol * scale:
            break
    else:
        raise NoConvergence(f"eigen-residual {res:.3e} after {it} iterations")
    x *= np.sign(w @ x) or 1.0
    if x.min() <= 0:
        raise NoConvergence("principal eigenfunction changes sign")
    return EigenResult(rq, Field(region, x), res, it)


def habitat_potential(grid: Grid, coeff: float) -> np.ndarray:
    """``coeff * 1_{Omega1}`` as an array on Omega."""
    return coeff * grid.indicator


def _curve_eigen(grid: Grid, coeff: float) -> EigenResult:
    cache = grid._cache.setdefault("sigma1", {})
    key = float(coeff)
    if key not in cache:
        if len(cache) >= _CURVE_CACHE_SIZE:
            cache.pop(next(iter(cache)))
        cache[key] = principal_eigen(grid, Region.OMEGA, habitat_potential(grid, key))
    return cache[key]


def sigma1_potential(grid: Grid, coeff: float) -> float:
    """sigma_1(coeff * 1_{Omega1}) on Omega with zero-flux boundary."""
    if coeff == 0:
        return 0.0
    return _curve_eigen(grid, coeff).value


def sigma1_curve(grid: Grid, b: float, mu: float) -> float:
    """sigma_1(b mu 1_{Omega1}); zero at mu = 0 and increasing in mu."""
    if mu < 0:
        raise ValueError("sigma1_curve needs mu >= 0")
    return sigma1_potential(grid, b * mu)


def sigma1_dirichlet(grid: Grid) -> float:
    """First Dirichlet eigenvalue of -Delta on the refuge, cached on the grid."""
    if "sigma1_dirichlet" not in grid._cache:
        res = principal_eigen(grid, Region.REFUGE, 0.0, bc="dirichlet")
        grid._cache["sigma1_dirichlet"] = res.value
    return grid._cache["sigma1_dirichlet"]


def phi_star(grid: Grid, b: float, mu: float) -> EigenResult:
    """Unit-norm positive principal eigenfunction of -Delta + b mu 1_{Omega1}."""
    if not mu > 0:
        raise ValueError("phi_star needs mu > 0")
    if b * mu == 0:
        n = grid.n
        x = np.full(n, 1.0 / np.sqrt(grid.weights.sum()))
        return EigenResult(0.0, Field(Region.OMEGA, x), 0.0, 0)
    return _curve_eigen(grid, b * mu)


def psi_star(grid: Grid, params, phi: Field, sigma1: float) -> Field:
    """Predator component of the tangent at the predator-only branch.

    Solves ``(-Delta + mu) psi = mu [alpha (sigma1 - b mu) + c] phi`` on the
    habitat with zero-flux walls.
    """
    mu, b, c, alpha = params.mu, params.b, params.c, params.alpha
    phi_vals, _ = as_values(grid, phi, Region.OMEGA)
    coeff = mu * (alpha * (sigma1 - b * mu) + c)
    return shifted_inverse(grid, Region.HABITAT, mu, coeff * phi_vals[grid.idx1])


def phi_lower_star(grid: Grid, b: float, lam: float) -> Field:
    """Prey component of the tangent at the prey-only branch: ``(-Delta + lam)^{-1}[-b lam 1_{Omega1}]``."""
    if not lam > 0:
        raise ValueError("phi_lower_star needs lam > 0")
    if b == 0:
        return Field(Region.OMEGA, np.zeros(grid.n))
    return shifted_inverse(grid, Region.OMEGA, lam, -b * lam * grid.indicator)
