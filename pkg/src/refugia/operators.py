"""Finite-volume operators on the vertex grid.

All Laplacians use two-point fluxes across dual faces. An edge between nodes
i and j carries the transmissibility ``T = A / |x_j - x_i|`` and the operator
reads

    (L f)_i = (1/V_i) * sum_edges T (f_j - f_i).

On the habitat only the habitat parts of the dual faces and boxes count, so
the refuge boundary is a zero-flux wall. ``W L`` is symmetric, so every
operator here is self-adjoint in the weighted inner product
``<f, g>_w = sum_i V_i f_i g_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EmptyRefuge, NonellipticCoefficient, RegionMismatch, SolveFailure
from .geometry import Field, Grid, Region, as_values

SOLVE_RTOL = 1e-10
_MAX_CACHED_SHIFTS = 32


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Square sparse matrix acting on the nodes of one region.

    ``symmetric`` means self-adjoint in the weighted inner product.
    """

    region: Region
    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, f) -> Field:
        if isinstance(f, Field):
            if f.region is not self.region:
                raise RegionMismatch(
                    f"operator on {self.region.value} applied to {f.region.value} field"
                )
            f = f.values
        return Field(self.region, self.matrix @ np.asarray(f, dtype=float))

    def __matmul__(self, f):
        if isinstance(f, Field):
            return self.apply(f)
        return self.matrix @ f

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def export(self, path) -> None:
        """Write the matrix in Matrix Market format."""
        scipy.io.mmwrite(path, self.matrix)


def _region_faces(grid: Grid, region: Region):
    """Edges inside ``region`` as (local i, local j, face area, length)."""
    region = Region(region)
    if region is Region.OMEGA:
        keep = np.ones(grid.face_i.size, dtype=bool)
        area = grid.face_area
    elif region is Region.HABITAT:
        keep = grid.face_area1 > 0
        area = grid.face_area1
    else:
        keep = grid.refuge_mask[grid.face_i] & grid.refuge_mask[grid.face_j]
        area = grid.face_area
    local = np.full(grid.n, -1)
    idx = grid.region_index(region)
    local[idx] = np.arange(idx.size)
    return local[grid.face_i[keep]], local[grid.face_j[keep]], area[keep], grid.face_len[keep]


def _flux_matrix(n: int, fi, fj, trans, vol) -> sp.csr_matrix:
    """``W^{-1}`` times the (negative semidefinite) two-point flux matrix."""
    rows = np.concatenate([fi, fj, fi, fj])
    cols = np.concatenate([fj, fi, fi, fj])
    vals = np.concatenate([trans, trans, -trans, -trans])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return (sp.diags(1.0 / vol) @ K).tocsr()


def neumann_laplacian(grid: Grid, region: Region = Region.OMEGA) -> SparseOperator:
    """Delta with zero-flux walls, on Omega or on the habitat."""
    region = Region(region)
    if region is Region.REFUGE:
        raise RegionMismatch("Neumann Laplacian is defined on omega or omega1")
    key = ("neumann", region)
    if key not in grid._cache:
        fi, fj, area, length = _region_faces(grid, region)
        mat = _flux_matrix(
            grid.region_size(region), fi, fj, area / length, grid.region_weights(region)
        )
        grid._cache[key] = SparseOperator(region, mat, True)
    return grid._cache[key]


def flux_difference(grid: Grid, region: Region, f) -> np.ndarray:
    """``L f`` evaluated edge by edge, so constants map to exactly zero."""
    f_vals, region = as_values(grid, f, region)
    fi, fj, area, length = _region_faces(grid, region)
    q = area / length * (f_vals[fj] - f_vals[fi])
    out = np.zeros(f_vals.size)
    np.add.at(out, fi, q)
    np.add.at(out, fj, -q)
    return out / grid.region_weights(region)


def dirichlet_laplacian_refuge(grid: Grid) -> SparseOperator:
    """The positive definite operator -Delta on the refuge, zero on its boundary.

    Boundary nodes lie exactly on the refuge boundary, so the operator is the
    Omega Laplacian restricted to the interior refuge nodes.
    """
    if grid.n0 == 0:
        raise EmptyRefuge("refuge has no nodes")
    key = ("dirichlet", Region.REFUGE)
    if key not in grid._cache:
        L = neumann_laplacian(grid, Region.OMEGA).matrix
        idx = grid.idx0
        mat = (-L[idx][:, idx]).tocsr()
        grid._cache[key] = SparseOperator(Region.REFUGE, mat, True)
    return grid._cache[key]


def divergence_form(grid: Grid, a, region: Region = Region.HABITAT) -> SparseOperator:
    """div(a grad .) with the harmonic edge mean of the nodal coefficient ``a``."""
    a_vals, region = as_values(grid, a, region)
    if region is Region.REFUGE:
        raise RegionMismatch("divergence_form is defined on omega or omega1")
    if not np.all(np.isfinite(a_vals)) or a_vals.min() <= 0:
        raise NonellipticCoefficient(
            f"coefficient must be positive, min(a) = {np.min(a_vals):g}"
        )
    fi, fj, area, length = _region_faces(grid, region)
    a_face = 2.0 / (1.0 / a_vals[fi] + 1.0 / a_vals[fj])
    mat = _flux_matrix(
        grid.region_size(region), fi, fj, a_face * area / length, grid.region_weights(region)
    )
    return SparseOperator(region, mat, True)


def advection_matrix(grid: Grid, u) -> sp.csr_matrix:
    """Matrix ``M(u)`` on the habitat with ``M(u) v = -div(v grad u)``.

    The edge value of v is the mean of its two nodes and the refuge boundary
    carries no flux.
    """
    u_vals, _ = as_values(grid, u, Region.OMEGA)
    u1 = u_vals[grid.idx1]
    fi, fj, area, length = _region_faces(grid, Region.HABITAT)
    g = 0.5 * area / length * (u1[fj] - u1[fi])  # half the flux of grad u, i to j
    # div(v grad u)_i = (1/V_i) sum g (v_i + v_j), with the sign flipped at j
    rows = np.concatenate([fi, fi, fj, fj])
    cols = np.concatenate([fi, fj, fi, fj])
    vals = np.concatenate([-g, -g, g, g])
    D = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n1, grid.n1)).tocsr()
    return (sp.diags(1.0 / grid.region_weights(Region.HABITAT)) @ D).tocsr()


def advective_term(grid: Grid, v, u) -> Field:
    """Conservative discretization of ``-div(v grad u)`` on the habitat."""
    v_vals, _ = as_values(grid, v, Region.HABITAT)
    return Field(Region.HABITAT, advection_matrix(grid, u) @ v_vals)


def _cached_factor(grid: Grid, key, build: Callable[[], sp.spmatrix]):
    cache = grid._cache.setdefault("factors", {})
    if key not in cache:
        if len(cache) >= _MAX_CACHED_SHIFTS:
            cache.pop(next(iter(cache)))
        try:
            cache[key] = spla.splu(build().tocsc())
        except RuntimeError as exc:
            raise SolveFailure(f"factorization failed: {exc}") from exc
    return cache[key]


def _check_residual(A, x, rhs):
    res = np.max(np.abs(A @ x - rhs)) if rhs.size else 0.0
    scale = max(1.0, np.max(np.abs(rhs)) if rhs.size else 0.0)
    if not np.all(np.isfinite(x)) or res > 1e3 * SOLVE_RTOL * scale:
        raise SolveFailure(f"linear solve residual {res:.3e}")


def shifted_inverse(grid: Grid, region: Region, m: float, rhs) -> Field:
    """Solve ``(-Delta + m) x = rhs`` with zero-flux walls, ``m > 0``."""
    rhs_vals, region = as_values(grid, rhs, region)
    if not m > 0:
        raise SolveFailure(f"shift must be positive, got {m}")
    L = neumann_laplacian(grid, region).matrix
    build = lambda: sp.identity(L.shape[0], format="csr") * m - L
    lu = _cached_factor(grid, ("shift", Region(region), float(m)), build)
    x = lu.solve(rhs_vals)
    _check_residual(build(), x, rhs_vals)
    return Field(region, x)


def mean_zero_inverse(grid: Grid, region: Region, rhs) -> Field:
    """Zero-mean solution of ``-Delta x = rhs - mean(rhs)``.

    Solved through the bordered system ``[-L, 1; w^T, 0]``, which is
    nonsingular for a connected region.
    """
    rhs_vals, region = as_values(grid, rhs, region)
    w = grid.region_weights(region)
    proj = rhs_vals - (w @ rhs_vals) / w.sum()
    L = neumann_laplacian(grid, region).matrix
    n = L.shape[0]

    def build():
        return sp.bmat([[-L, np.ones((n, 1))], [w[None, :] / w.sum(), None]])

    lu = _cached_factor(grid, ("meanzero", Region(region)), build)
    sol = lu.solve(np.append(proj, 0.0))
    x = sol[:n]
    _check_residual(-L, x, proj)
    return Field(region, x)
