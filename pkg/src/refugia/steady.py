"""Steady states of the refuge system and of its large-flux limit.

The prey equation lives on all nodes, the predator equation on the habitat
nodes. Unknowns are stacked as ``x = [u, v]``. The predator equation is used
in the form obtained by substituting the prey equation into the flux term,

    Delta v + v/(1 + alpha u) * {alpha u (lam - u - b v) + mu + c u - v} = 0,

which keeps the Jacobian sparse and free of second derivatives of u.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import qmc

from .errors import BadParameter, DegenerateDenominator, MaxIterations
from .geometry import Field, Grid, Region, as_values
from .operators import neumann_laplacian, shifted_inverse


@dataclass(frozen=True)
class ModelParams:
    lam: float
    mu: float
    b: float = 1.0
    c: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("lam", "mu", "b", "c", "alpha"):
            val = getattr(self, name)
            if not np.isfinite(val):
                raise BadParameter(f"{name} must be finite")
            object.__setattr__(self, name, float(val))
        if not self.b > 0:
            raise BadParameter("b must be positive")
        if not self.c > 0:
            raise BadParameter("c must be positive")
        if not self.alpha >= 0:
            raise BadParameter("alpha must be nonnegative")

    def with_(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def box(self) -> tuple[float, float]:
        """Upper bounds for positive solutions: (lam, max(lam/b, mu + c lam))."""
        return self.lam, max(self.lam / self.b, self.mu + self.c * self.lam)


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 40
    max_halvings: int = 30
    blowup: float = 1e8


@dataclass
class SteadyState:
    u: Field
    v: Field
    params: ModelParams
    residual_norm: float
    iterations: int = 0
    positive: tuple[bool, bool] = (False, False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_positive(self) -> bool:
        return all(self.positive)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.values, self.v.values])


# ---------------------------------------------------------------------------
# sparse block pattern shared by both systems


class _BlockPattern:
    """CSC pattern of ``[[L + D, C], [C^T, L1 + D]]`` with fixed data slots."""

    def __init__(self, grid: Grid):
        n, n1 = grid.n, grid.n1
        N = n + n1
        L = neumann_laplacian(grid, Region.OMEGA).matrix
        L1 = neumann_laplacian(grid, Region.HABITAT).matrix
        static = sp.bmat([[L, None], [None, L1]], format="csc")
        rows_d = np.arange(N)
        rows_uv, cols_uv = grid.idx1, n + np.arange(n1)
        marks = sp.coo_matrix(
            (np.ones(N + 2 * n1),
             (np.concatenate([rows_d, rows_uv, cols_uv]),
              np.concatenate([rows_d, cols_uv, rows_uv]))),
            shape=(N, N),
        ).tocsc()
        pattern = (abs(static) + marks).tocsc()
        pattern.sort_indices()
        col_of = np.repeat(np.arange(N), np.diff(pattern.indptr))
        keys = col_of.astype(np.int64) * N + pattern.indices

        def locate(r, c):
            pos = np.searchsorted(keys, np.asarray(c, np.int64) * N + r)
            assert np.all(keys[pos] == np.asarray(c, np.int64) * N + r)
            return pos

        st = static.tocoo()
        self.static = np.zeros(keys.size)
        np.add.at(self.static, locate(st.row, st.col), st.data)
        self.indices = pattern.indices
        self.indptr = pattern.indptr
        self.diag = locate(rows_d, rows_d)
        self.uv = locate(rows_uv, cols_uv)
        self.vu = locate(cols_uv, rows_uv)
        self.shape = (N, N)
        self.n, self.n1 = n, n1

    def assemble(self, diag_u, diag_v, uv, vu) -> sp.csc_matrix:
        data = self.static.copy()
        data[self.diag[: self.n]] += diag_u
        data[self.diag[self.n:]] += diag_v
        data[self.uv] = uv
        data[self.vu] = vu
        return sp.csc_matrix((data, self.indices, self.indptr), shape=self.shape)


def _pattern(grid: Grid) -> _BlockPattern:
    if "block_pattern" not in grid._cache:
        grid._cache["block_pattern"] = _BlockPattern(grid)
    return grid._cache["block_pattern"]


@dataclass(frozen=True)
class BlockJacobian:
    """2x2 block Jacobian with rows/columns ordered ``[Omega nodes, habitat nodes]``."""

    matrix: sp.csc_matrix
    n_u: int
    n_v: int

    def blocks(self):
        m = self.matrix.tocsr()
        n = self.n_u
        return m[:n, :n], m[:n, n:], m[n:, :n], m[n:, n:]


# ---------------------------------------------------------------------------
# systems


class _System:
    """Residual/Jacobian pair on stacked unknowns ``x = [u, v]``."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.L = neumann_laplacian(grid, Region.OMEGA).matrix
        self.L1 = neumann_laplacian(grid, Region.HABITAT).matrix
        self.ind = grid.indicator
        self.idx1 = grid.idx1
        self.n, self.n1 = grid.n, grid.n1

    def split(self, x):
        return x[: self.n], x[self.n:]

    def prolong(self, v):
        out = np.zeros(self.n)
        out[self.idx1] = v
        return out

    def admissible(self, x) -> bool:
        return True

    def residual(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> sp.csc_matrix:
        raise NotImplementedError

    def dF_dlam(self, x) -> np.ndarray:
        raise NotImplementedError

    def with_lam(self, lam: float) -> "_System":
        raise NotImplementedError


class SP2System(_System):
    """The substituted steady system with directed flux strength alpha."""

    def __init__(self, grid: Grid, params: ModelParams):
        super().__init__(grid)
        self.params = params

    def with_lam(self, lam):
        return SP2System(self.grid, self.params.with_(lam=lam))

    def _den(self, u1):
        den = 1.0 + self.params.alpha * u1
        if den.size and den.min() <= 0:
            raise DegenerateDenominator(f"min(1 + alpha u) = {den.min():.3e} on the habitat")
        return den

    def admissible(self, x):
        u1 = x[: self.n][self.idx1]
        return bool(np.all(1.0 + self.params.alpha * u1 > 0))

    def residual(self, x):
        p = self.params
        u, v = self.split(x)
        u1 = u[self.idx1]
        den = self._den(u1)
        Fu = self.L @ u + u * (p.lam - u - p.b * self.ind * self.prolong(v))
        h = p.alpha * u1 * (p.lam - u1 - p.b * v) + p.mu + p.c * u1 - v
        Fv = self.L1 @ v + v * h / den
        return np.concatenate([Fu, Fv])

    def jacobian(self, x):
        p = self.params
        u, v = self.split(x)
        u1 = u[self.idx1]
        den = self._den(u1)
        h = p.alpha * u1 * (p.lam - u1 - p.b * v) + p.mu + p.c * u1 - v
        h_u = p.alpha * (p.lam - 2 * u1 - p.b * v) + p.c
        h_v = -p.alpha * p.b * u1 - 1.0
        g_u = v * (h_u * den - p.alpha * h) / den**2
        g_v = (h + v * h_v) / den
        diag_u = p.lam - 2 * u - p.b * self.ind * self.prolong(v)
        uv = -p.b * u1 * self.ind[self.idx1]
        return _pattern(self.grid).assemble(diag_u, g_v, uv, g_u)

    def dF_dlam(self, x):
        p = self.params
        u, v = self.split(x)
        u1 = u[self.idx1]
        return np.concatenate([u, v * p.alpha * u1 / self._den(u1)])


class LP2System(_System):
    """Large-flux limit system in the rescaled prey variable ``w``."""

    def __init__(self, grid: Grid, lam: float, mu: float, b: float):
        super().__init__(grid)
        self.lam, self.mu, self.b = float(lam), float(mu), float(b)
        if not self.b > 0:
            raise BadParameter("b must be positive")

    def with_lam(self, lam):
        return LP2System(self.grid, lam, self.mu, self.b)

    def _den(self, w1):
        den = 1.0 + w1
        if den.size and den.min() <= 0:
            raise DegenerateDenominator(f"min(1 + w) = {den.min():.3e} on the habitat")
        return den

    def admissible(self, x):
        return bool(np.all(1.0 + x[: self.n][self.idx1] > 0))

    def residual(self, x):
        w, v = self.split(x)
        w1 = w[self.idx1]
        den = self._den(w1)
        Fw = self.L @ w + w * (self.lam - self.b * self.ind * self.prolong(v))
        k = w1 * (self.lam - self.b * v) + self.mu - v
        Fv = self.L1 @ v + v * k / den
        return np.concatenate([Fw, Fv])

    def jacobian(self, x):
        w, v = self.split(x)
        w1 = w[self.idx1]
        den = self._den(w1)
        k = w1 * (self.lam - self.b * v) + self.mu - v
        g_w = v * ((self.lam - self.b * v) * den - k) / den**2
        g_v = (k + v * (-self.b * w1 - 1.0)) / den
        diag_w = self.lam - self.b * self.ind * self.prolong(v)
        wv = -self.b * w1 * self.ind[self.idx1]
        return _pattern(self.grid).assemble(diag_w, g_v, wv, g_w)

    def dF_dlam(self, x):
        w, v = self.split(x)
        w1 = w[self.idx1]
        return np.concatenate([w, v * w1 / self._den(w1)])


# ---------------------------------------------------------------------------
# public residual / Jacobian API


def _stack(grid: Grid, u, v) -> np.ndarray:
    u_vals, _ = as_values(grid, u, Region.OMEGA)
    v_vals, _ = as_values(grid, v, Region.HABITAT)
    return np.concatenate([u_vals, v_vals])


def _unstack(grid: Grid, x) -> tuple[Field, Field]:
    return Field(Region.OMEGA, x[: grid.n]), Field(Region.HABITAT, x[grid.n:])


def residual_sp2(grid: Grid, params: ModelParams, u, v) -> tuple[Field, Field]:
    """Residuals of the prey (on Omega) and predator (on the habitat) equations."""
    return _unstack(grid, SP2System(grid, params).residual(_stack(grid, u, v)))


def jacobian_sp2(grid: Grid, params: ModelParams, u, v) -> BlockJacobian:
    mat = SP2System(grid, params).jacobian(_stack(grid, u, v))
    return BlockJacobian(mat, grid.n, grid.n1)


def residual_lp2(grid: Grid, lam: float, mu: float, b: float, w, v) -> tuple[Field, Field]:
    return _unstack(grid, LP2System(grid, lam, mu, b).residual(_stack(grid, w, v)))


def jacobian_lp2(grid: Grid, lam: float, mu: float, b: float, w, v) -> BlockJacobian:
    mat = LP2System(grid, lam, mu, b).jacobian(_stack(grid, w, v))
    return BlockJacobian(mat, grid.n, grid.n1)


def habitat_side_laplacian(grid: Grid, params: ModelParams, u, v) -> np.ndarray:
    """Laplacian of u seen from the habitat side, on habitat nodes.

    On a refuge-boundary node the dual box straddles the refuge, and the
    discrete Laplacian averages the two one-sided values. The prey equation
    fixes their jump (the predation term switches on across the boundary),
    so the habitat-side value is ``L u + b (1 - 1_{Omega1}) u v``.
    """
    u_vals, _ = as_values(grid, u, Region.OMEGA)
    v_vals, _ = as_values(grid, v, Region.HABITAT)
    lu = (neumann_laplacian(grid, Region.OMEGA).matrix @ u_vals)[grid.idx1]
    u1 = u_vals[grid.idx1]
    return lu + params.b * (1.0 - grid.indicator[grid.idx1]) * u1 * v_vals


def residual_raw(grid: Grid, params: ModelParams, u, v) -> tuple[Field, Field]:
    """Residuals of the unsubstituted system, a cross-check diagnostic.

    The predator equation reads ``(1 + alpha u) Delta v - alpha v Delta u +
    v (mu + c u - v)``, the product-rule expansion of the flux form.
    """
    p = params
    Fu, _ = residual_sp2(grid, params, u, v)
    u_vals, _ = as_values(grid, u, Region.OMEGA)
    v_vals, _ = as_values(grid, v, Region.HABITAT)
    u1 = u_vals[grid.idx1]
    L1 = neumann_laplacian(grid, Region.HABITAT).matrix
    lap_u = habitat_side_laplacian(grid, params, u_vals, v_vals)
    Fv = ((1 + p.alpha * u1) * (L1 @ v_vals) - p.alpha * v_vals * lap_u
          + v_vals * (p.mu + p.c * u1 - v_vals))
    return Fu, Field(Region.HABITAT, Fv)


# ---------------------------------------------------------------------------
# Newton


@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    reason: str = ""


def newton_core(system: _System, x0: np.ndarray, cfg: NewtonConfig = NewtonConfig(),
                raise_on_failure: bool = True) -> NewtonResult:
    """Damped Newton with backtracking on the l2 residual norm."""
    x = np.array(x0, dtype=float)
    if not system.admissible(x):
        raise DegenerateDenominator("initial guess violates 1 + alpha u > 0")
    F = system.residual(x)
    fnorm = np.linalg.norm(F)
    it = 0
    reason = ""
    while True:
        if np.max(np.abs(F)) <= cfg.tol:
            return NewtonResult(x, float(np.max(np.abs(F))), it, True)
        if it >= cfg.max_iter:
            reason = "iteration limit"
            break
        it += 1
        try:
            dx = spla.splu(system.jacobian(x)).solve(-F)
        except RuntimeError:
            reason = "singular Jacobian"
            break
        if not np.all(np.isfinite(dx)):
            reason = "nonfinite step"
            break
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = x + t * dx
            if system.admissible(trial):
                Ft = system.residual(trial)
                ft = np.linalg.norm(Ft)
                if np.isfinite(ft) and ft <= (1 - 1e-4 * t) * fnorm:
                    break
            t *= 0.5
        else:
            reason = "line search failed"
            break
        x, F, fnorm = trial, Ft, ft
        if np.max(np.abs(x)) > cfg.blowup:
            reason = "iterate diverged"
            break
    res = float(np.max(np.abs(F)))
    if raise_on_failure:
        raise MaxIterations(f"Newton failed ({reason}) after {it} iterations, residual {res:.3e}")
    return NewtonResult(x, res, it, False, reason)


def _state(grid: Grid, params, x, res, it) -> SteadyState:
    u, v = _unstack(grid, x)
    st = SteadyState(u, v, params, res, it,
                     (bool(u.values.min() > 0), bool(v.values.min() > 0)))
    if isinstance(params, ModelParams):
        st.diagnostics.update(_diagnostics(grid, params, st))
    return st


def _diagnostics(grid: Grid, params: ModelParams, st: SteadyState) -> dict:
    I_u, I_v = integral_identities(grid, params, st)
    U, V = params.box()
    slack = 1 + 10 * grid.h**2
    return {
        "I_u": I_u,
        "I_v": I_v,
        "max_u": float(st.u.values.max()),
        "max_v": float(st.v.values.max()),
        "box_u": bool(st.u.values.max() <= U * slack),
        "box_v": bool(st.v.values.max() <= V * slack),
    }


def newton_solve(grid: Grid, params: ModelParams, initial, cfg: NewtonConfig = NewtonConfig()
                 ) -> SteadyState:
    """Solve the steady system from ``initial = (u, v)``; positivity is recorded only."""
    u0, v0 = initial
    system = SP2System(grid, params)
    r = newton_core(system, _stack(grid, u0, v0), cfg)
    return _state(grid, params, r.x, r.residual_norm, r.iterations)


@dataclass(frozen=True)
class LP2Params:
    lam: float
    mu: float
    b: float


def newton_lp2(grid: Grid, lam: float, mu: float, b: float, initial,
               cfg: NewtonConfig = NewtonConfig()) -> SteadyState:
    """Solve the limit system for ``(w, v)``; ``state.u`` holds w."""
    w0, v0 = initial
    r = newton_core(LP2System(grid, lam, mu, b), _stack(grid, w0, v0), cfg)
    return _state(grid, LP2Params(lam, mu, b), r.x, r.residual_norm, r.iterations)


# ---------------------------------------------------------------------------
# special states and diagnostics


def semitrivial(grid: Grid, params: ModelParams, which: str) -> SteadyState:
    """Prey-only ``(lam, 0)`` or predator-only ``(0, mu)`` state."""
    if which == "prey_only":
        if not params.lam > 0:
            raise BadParameter("prey-only state needs lam > 0")
        u, v = np.full(grid.n, params.lam), np.zeros(grid.n1)
    elif which == "predator_only":
        if not params.mu > 0:
            raise BadParameter("predator-only state needs mu > 0")
        u, v = np.zeros(grid.n), np.full(grid.n1, params.mu)
    else:
        raise BadParameter(f"unknown semitrivial state {which!r}")
    x = np.concatenate([u, v])
    res = float(np.max(np.abs(SP2System(grid, params).residual(x))))
    return _state(grid, params, x, res, 0)


def integral_identities(grid: Grid, params: ModelParams, state) -> tuple[float, float]:
    """Integrated prey and predator equations; both vanish at steady states."""
    p = params
    u = state.u.values
    v = state.v.values
    u1 = u[grid.idx1]
    I_u = float(grid.weights @ (u * (p.lam - u - p.b * grid.indicator * grid.extend(v))))
    h = p.alpha * u1 * (p.lam - u1 - p.b * v) + p.mu + p.c * u1 - v
    I_v = float(grid.region_weights(Region.HABITAT) @ (v * h / (1 + p.alpha * u1)))
    return I_u, I_v


# ---------------------------------------------------------------------------
# multistart


def smooth_noise(grid: Grid, rng: np.random.Generator, length: float) -> np.ndarray:
    """Random field on Omega with correlation length ``length``, scaled to [-1, 1]."""
    m = 1.0 / length**2
    raw = rng.standard_normal(grid.n)
    f = shifted_inverse(grid, Region.OMEGA, m, m * raw).values
    f -= f.mean()
    return f / max(np.max(np.abs(f)), 1e-300)


def multistart_initials(grid: Grid, params: ModelParams, n_starts: int, seed: int,
                        noise: float = 0.3, log_prey: bool = True):
    """Constant-plus-noise starts inside the a priori box.

    Latin hypercube samples pick the two levels. The prey level is sampled on a
    log scale over ``[1e-3, 1]`` times its bound so that states close to the
    predator-only branch are reachable.
    """
    U, V = params.box()
    if not U > 0:
        return []
    V = V if V > 0 else U / params.b
    rng = np.random.default_rng(seed)
    sampler = qmc.LatinHypercube(d=2, seed=rng)
    levels = sampler.random(n_starts)
    size = np.ptp(grid.coords, axis=0).max()
    out = []
    for a, bb in levels:
        u_lvl = U * (10 ** (-3 * (1 - a)) if log_prey else a)
        v_lvl = V * max(bb, 1e-3)
        nu = smooth_noise(grid, rng, 0.2 * size)
        nv = smooth_noise(grid, rng, 0.2 * size)[grid.idx1]
        u0 = np.clip(u_lvl * (1 + noise * nu), 0.0, U)
        v0 = np.clip(v_lvl * (1 + noise * nv), 0.0, V)
        out.append((u0, v0))
    return out


def dedupe(states, tol: float = 1e-3):
    """Drop states within ``tol`` (sup norm over both components) of an earlier one."""
    kept = []
    for st in states:
        x = st.vector()
        if all(np.max(np.abs(x - k.vector())) > tol for k in kept):
            kept.append(st)
    return kept


def multistart(grid: Grid, params: ModelParams, n_starts: int = 50, seed: int = 0,
               cfg: NewtonConfig = NewtonConfig(max_iter=30), positive_only: bool = False,
               initials=None):
    """Newton from many starts; returns distinct converged states."""
    system = SP2System(grid, params)
    found = []
    if initials is None:
        initials = multistart_initials(grid, params, n_starts, seed)
    for u0, v0 in initials:
        x0 = np.concatenate([u0, v0])
        if not system.admissible(x0):
            continue
        r = newton_core(system, x0, cfg, raise_on_failure=False)
        if not r.converged:
            continue
        st = _state(grid, params, r.x, r.residual_norm, r.iterations)
        if positive_only and not st.is_positive:
            continue
        found.append(st)
    return dedupe(found)


def positive_solutions(states):
    return [s for s in states if s.is_positive]


# ---------------------------------------------------------------------------
# finite-difference check


def column_coloring(pattern: sp.spmatrix) -> np.ndarray:
    """Greedy coloring so that columns of one color share no row."""
    A = sp.csc_matrix(pattern, dtype=bool)
    R = A.tocsr()
    n = A.shape[1]
    colors = np.full(n, -1)
    for j in range(n):
        rows = A.indices[A.indptr[j]:A.indptr[j + 1]]
        nbrs = np.unique(np.concatenate([R.indices[R.indptr[r]:R.indptr[r + 1]] for r in rows])) \
            if rows.size else np.empty(0, dtype=int)
        used = set(colors[nbrs][colors[nbrs] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        colors[j] = c
    return colors


def fd_jacobian(system: _System, x: np.ndarray, eps: float = 1e-6) -> sp.csc_matrix:
    """Central-difference Jacobian on the analytic sparsity pattern.

    Columns are perturbed together by color, so the cost is two residual
    evaluations per color rather than per unknown.
    """
    pattern = system.jacobian(x).tocsc()
    pattern.data[:] = 1.0
    colors = column_coloring(pattern)
    out = pattern.copy().astype(float)
    rows_of = [pattern.indices[pattern.indptr[j]:pattern.indptr[j + 1]] for j in range(x.size)]
    for c in range(colors.max() + 1):
        cols = np.flatnonzero(colors == c)
        h = eps * np.maximum(1.0, np.abs(x[cols]))
        d = np.zeros_like(x)
        d[cols] = h
        diff = system.residual(x + d) - system.residual(x - d)
        for j, hj in zip(cols, h):
            out.data[pattern.indptr[j]:pattern.indptr[j + 1]] = diff[rows_of[j]] / (2 * hj)
    return out
