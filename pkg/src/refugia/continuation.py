"""Pseudo-arclength continuation in lam with branch switching off the semitrivial states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CorrectionFailed, SolutionNotFound, StallAtFold
from .geometry import Field, Grid, Region, measures
from .spectra import phi_lower_star, phi_star
from .steady import LP2Params, LP2System, ModelParams, SP2System
from .thresholds import _tangent_parts, lambda_prime0_gamma_u, lambda_prime0_gamma_v


@dataclass(frozen=True)
class ContinuationConfig:
    ds: float = 0.05
    ds_min: float = 1e-6
    ds_max: float = 0.5
    max_steps: int = 400
    lam_window: tuple[float, float] = (0.0, np.inf)
    tol: float = 1e-10
    max_corrector: int = 8
    easy_iterations: int = 3
    grow_after: int = 4
    grow: float = 1.3
    track_singular: bool = True


@dataclass
class BranchPoint:
    lam: float
    x: np.ndarray
    s: float
    tangent: np.ndarray  # (dlam, dx), unit in the branch norm
    n_u: int
    fold: bool = False
    sigma_min: float = np.nan
    residual: float = 0.0
    constraint: float = 0.0

    @property
    def u(self) -> Field:
        return Field(Region.OMEGA, self.x[: self.n_u])

    @property
    def v(self) -> Field:
        return Field(Region.HABITAT, self.x[self.n_u:])

    @property
    def positive(self) -> bool:
        return bool(self.x.min() > 0)


@dataclass
class Branch:
    points: list[BranchPoint]
    origin: str
    origin_lam: float
    params: object
    termination: str = ""
    folds: list[int] = field(default_factory=list)

    @property
    def lams(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    def __len__(self):
        return len(self.points)


def branch_weights(grid: Grid) -> np.ndarray:
    """Weights of the state norm: quadrature over each region divided by |Omega|."""
    total, _, _ = measures(grid)
    return np.concatenate([grid.weights, grid.region_weights(Region.HABITAT)]) / total


def _norm(wx, dlam, dx) -> float:
    return float(np.sqrt(dlam**2 + wx @ (dx * dx)))


def _bordered(J, F_lam, row_x, row_lam) -> sp.csc_matrix:
    return sp.bmat(
        [[J, sp.csc_matrix(F_lam[:, None])],
         [sp.csc_matrix(row_x[None, :]), sp.csc_matrix([[row_lam]])]],
        format="csc",
    )


def _tangent_at(system, x, wx, prev: np.ndarray) -> np.ndarray:
    """Unit tangent of the solution curve oriented along ``prev``."""
    J = system.jacobian(x)
    A = _bordered(J, system.dF_dlam(x), wx * prev[1:], prev[0])
    rhs = np.zeros(x.size + 1)
    rhs[-1] = 1.0
    z = spla.splu(A).solve(rhs)
    t = np.concatenate([[z[-1]], z[:-1]])
    return t / _norm(wx, t[0], t[1:])


def smallest_singular_value(J, iters: int = 6) -> float:
    """Power iteration on (J^T J)^{-1}; a proxy for distance to singularity."""
    try:
        lu = spla.splu(J.tocsc())
    except RuntimeError:
        return 0.0
    rng = np.random.default_rng(0)
    z = rng.standard_normal(J.shape[0])
    z /= np.linalg.norm(z)
    est = 0.0
    for _ in range(iters):
        y = lu.solve(lu.solve(z), trans="T")
        est = np.linalg.norm(y)
        if not np.isfinite(est) or est == 0:
            return 0.0
        z = y / est
    return float(1.0 / np.sqrt(est))


def _correct(system_at, lam0, x0, wx, direction, anchor_lam, anchor_x, ds, cfg):
    """Newton on F(x, lam) = 0 plus the pseudo-arclength hyperplane.

    The hyperplane is ``<direction, (lam, x) - anchor> = ds`` in the branch
    norm. Returns ``(lam, x, iterations, constraint residual)``.
    """
    lam, x = lam0, x0.copy()
    tl, tx = direction[0], direction[1:]
    # residual round-off grows with the size of the state
    tol = cfg.tol * max(1.0, float(np.max(np.abs(x0))))
    for it in range(1, cfg.max_corrector + 1):
        system = system_at(lam)
        if not system.admissible(x):
            raise CorrectionFailed("corrector left the admissible set")
        F = system.residual(x)
        N = tl * (lam - anchor_lam) + wx @ (tx * (x - anchor_x)) - ds
        if np.max(np.abs(F)) <= tol and abs(N) <= cfg.tol:
            return lam, x, it - 1, abs(N)
        A = _bordered(system.jacobian(x), system.dF_dlam(x), wx * tx, tl)
        try:
            z = spla.splu(A).solve(-np.append(F, N))
        except RuntimeError as exc:
            raise CorrectionFailed("bordered system is singular") from exc
        if not np.all(np.isfinite(z)):
            raise CorrectionFailed("nonfinite corrector step")
        x = x + z[:-1]
        lam = lam + z[-1]
    system = system_at(lam)
    if system.admissible(x):
        F = system.residual(x)
        N = tl * (lam - anchor_lam) + wx @ (tx * (x - anchor_x)) - ds
        if np.max(np.abs(F)) <= tol and abs(N) <= cfg.tol:
            return lam, x, cfg.max_corrector, abs(N)
    raise CorrectionFailed(f"corrector did not converge in {cfg.max_corrector} iterations")


def _seed_correct(system_at, lam, x, row_x, target, tol, max_iter=30):
    """Newton on F = 0 plus the linear normalisation ``row_x . x = target``."""
    for _ in range(max_iter):
        system = system_at(lam)
        if not system.admissible(x):
            raise CorrectionFailed("seed correction left the admissible set")
        F = system.residual(x)
        N = row_x @ x - target
        if np.max(np.abs(F)) <= tol and abs(N) <= tol:
            return lam, x
        A = _bordered(system.jacobian(x), system.dF_dlam(x), row_x, 0.0)
        try:
            z = spla.splu(A).solve(-np.append(F, N))
        except RuntimeError as exc:
            raise CorrectionFailed("seed system is singular") from exc
        x = x + z[:-1]
        lam = lam + z[-1]
        if not np.all(np.isfinite(x)) or abs(z[-1]) > 1e3:
            break
    raise CorrectionFailed("seed correction did not converge; reduce s")


def _finish_seed(grid, system_at, lam, x, tangent_guess, origin, origin_lam, params, tol):
    wx = branch_weights(grid)
    t = _tangent_at(system_at(lam), x, wx, tangent_guess / _norm(wx, tangent_guess[0], tangent_guess[1:]))
    res = float(np.max(np.abs(system_at(lam).residual(x))))
    point = BranchPoint(lam, x, 0.0, t, grid.n, residual=res)
    return point, t


def seed_from_gamma_v(grid: Grid, params: ModelParams, s: float = 0.02, tol: float = 1e-10):
    """Corrected first point of the branch leaving the predator-only state.

    The guess ``(s phi*, mu + s psi*)`` at ``lam = sigma_1 + s lam'(0)`` is
    corrected with ``<u, phi*> = s`` fixed, which stays nonsingular at the
    bifurcation point.
    """
    if not params.mu > 0:
        raise ValueError("the predator-only branch needs mu > 0")
    eig, phi, psi0, psi1 = _tangent_parts(grid, params.mu, params.b, params.c)
    psi = psi0 + params.alpha * psi1
    dlam = lambda_prime0_gamma_v(grid, params)
    lam0 = eig.value
    x0 = np.concatenate([s * phi, params.mu + s * psi])
    row = np.concatenate([grid.weights * phi, np.zeros(grid.n1)])
    system_at = lambda lam: SP2System(grid, params.with_(lam=lam))
    lam, x = _seed_correct(system_at, lam0 + s * dlam, x0, row, s, tol)
    guess = np.concatenate([[dlam], phi, psi])
    point, t = _finish_seed(grid, system_at, lam, x, guess, "from_gamma_v", lam0, params, tol)
    return point, t


def seed_from_gamma_u(grid: Grid, params: ModelParams, s: float = 0.02, tol: float = 1e-10):
    """Corrected first point of the branch leaving the prey-only state (mu < 0).

    Guess ``(lam + s phi_lower, s)`` at ``lam = |mu|/c + s lam'(0)``, corrected
    with the habitat mean of v fixed at s.
    """
    if not params.mu < 0:
        raise ValueError("the prey-only branch needs mu < 0")
    lam0 = abs(params.mu) / params.c
    phi = phi_lower_star(grid, params.b, lam0).values
    dlam = lambda_prime0_gamma_u(grid, params)
    lam1 = lam0 + s * dlam
    x0 = np.concatenate([lam1 + s * phi, np.full(grid.n1, s)])
    w1 = grid.region_weights(Region.HABITAT)
    row = np.concatenate([np.zeros(grid.n), w1 / w1.sum()])
    system_at = lambda lam: SP2System(grid, params.with_(lam=lam))
    lam, x = _seed_correct(system_at, lam1, x0, row, s, tol)
    guess = np.concatenate([[dlam], dlam + phi, np.ones(grid.n1)])
    return _finish_seed(grid, system_at, lam, x, guess, "from_gamma_u", lam0, params, tol)


def extrapolated_origin(grid: Grid, params: ModelParams, which: str = "gamma_v",
                        s: float = 1e-3) -> float:
    """Bifurcation value read off the branch itself.

    Seeds are corrected at amplitudes s, s/2 and s/4 and the lam values are
    extrapolated quadratically to zero amplitude, so the result does not use
    the eigenvalue or threshold that located the seed.
    """
    seed = {"gamma_v": seed_from_gamma_v, "gamma_u": seed_from_gamma_u}[which]
    amps = np.array([s, s / 2, s / 4])
    lams = np.array([seed(grid, params, a)[0].lam for a in amps])
    return float(np.polyval(np.polyfit(amps, lams, 2), 0.0))


def _trace(grid, system_at, base: BranchPoint, tangent, cfg: ContinuationConfig, origin,
           origin_lam, params) -> Branch:
    wx = branch_weights(grid)
    lo, hi = cfg.lam_window
    base.tangent = tangent
    if cfg.track_singular:
        base.sigma_min = smallest_singular_value(system_at(base.lam).jacobian(base.x))
    branch = Branch([base], origin, origin_lam, params)
    direction = tangent.copy()
    ds = cfg.ds
    easy = 0
    prev = base
    while True:
        if len(branch.points) > cfg.max_steps:
            branch.termination = "max_steps"
            break
        pred_lam = prev.lam + ds * direction[0]
        pred_x = prev.x + ds * direction[1:]
        try:
            lam, x, iters, cres = _correct(
                system_at, pred_lam, pred_x, wx, direction, prev.lam, prev.x, ds, cfg
            )
        except CorrectionFailed:
            ds *= 0.5
            easy = 0
            if ds < cfg.ds_min:
                branch.termination = "ds_underflow"
                exc = StallAtFold(f"step size underflow at lam = {prev.lam:.6g}")
                exc.branch = branch
                raise exc
            continue
        dlam, dx = lam - prev.lam, x - prev.x
        chord = _norm(wx, dlam, dx)
        system = system_at(lam)
        point = BranchPoint(lam, x, prev.s + chord, np.empty(0), grid.n,
                            residual=float(np.max(np.abs(system.residual(x)))),
                            constraint=cres)
        # secant direction for the next predictor; exact tangent kept for the record
        direction = np.concatenate([[dlam], dx]) / chord
        try:
            point.tangent = _tangent_at(system, x, wx, direction)
        except RuntimeError:
            point.tangent = direction.copy()
        if cfg.track_singular:
            point.sigma_min = smallest_singular_value(system.jacobian(x))
        branch.points.append(point)
        prev = point
        if lam < lo or lam > hi:
            branch.termination = "lam_window"
            break
        easy = easy + 1 if iters <= cfg.easy_iterations else 0
        if easy >= cfg.grow_after:
            ds = min(ds * cfg.grow, cfg.ds_max)
            easy = 0
        ds = min(max(ds, cfg.ds_min), cfg.ds_max)
    branch.folds = detect_folds(branch)
    for k in branch.folds:
        branch.points[k].fold = True
    return branch


def continue_branch(grid: Grid, base: BranchPoint, tangent, cfg: ContinuationConfig = ContinuationConfig(),
                    params: ModelParams | None = None, origin: str = "manual",
                    origin_lam: float | None = None) -> Branch:
    """Follow the steady-state curve through ``base`` in the direction ``tangent``."""
    if params is None:
        raise ValueError("params are required")
    system_at = lambda lam: SP2System(grid, params.with_(lam=lam))
    return _trace(grid, system_at, base, tangent, cfg, origin,
                  base.lam if origin_lam is None else origin_lam, params)


def branch_from_gamma_v(grid: Grid, params: ModelParams, cfg: ContinuationConfig = ContinuationConfig(),
                        s: float = 0.02) -> Branch:
    base, t = seed_from_gamma_v(grid, params, s)
    lam0 = phi_star(grid, params.b, params.mu).value
    return continue_branch(grid, base, t, cfg, params, "from_gamma_v", lam0)


def branch_from_gamma_u(grid: Grid, params: ModelParams, cfg: ContinuationConfig = ContinuationConfig(),
                        s: float = 0.02) -> Branch:
    base, t = seed_from_gamma_u(grid, params, s)
    return continue_branch(grid, base, t, cfg, params, "from_gamma_u", abs(params.mu) / params.c)


def detect_folds(branch) -> list[int]:
    """Indices where the lam-increments change sign (zero increments skipped)."""
    lams = branch.lams if isinstance(branch, Branch) else np.asarray(branch, dtype=float)
    if lams.size < 3:
        return []
    d = np.diff(lams)
    nz = np.flatnonzero(d != 0)
    folds = []
    for a, b in zip(nz[:-1], nz[1:]):
        if np.sign(d[a]) != np.sign(d[b]):
            # the turning point sits at the node after increment a
            folds.append(int(a + 1))
    return folds


def crossings(branch: Branch, lam: float) -> list[int]:
    """Indices k with lam between points k and k+1."""
    lams = branch.lams
    return [k for k in range(len(lams) - 1) if (lams[k] - lam) * (lams[k + 1] - lam) <= 0]


def state_at_lam(branch: Branch, lam: float, which: int = 0) -> np.ndarray:
    """Linear interpolation of the branch state at its ``which``-th crossing of lam."""
    ks = crossings(branch, lam)
    if len(ks) <= which:
        raise SolutionNotFound(f"branch does not reach lam = {lam:g}")
    k = ks[which]
    a, b = branch.points[k], branch.points[k + 1]
    t = 0.0 if b.lam == a.lam else (lam - a.lam) / (b.lam - a.lam)
    return (1 - t) * a.x + t * b.x


def fold_lam(branch: Branch, k: int) -> float:
    """Quadratic estimate of the extreme lam around fold index ``k``."""
    pts = branch.points
    if k <= 0 or k >= len(pts) - 1:
        return pts[k].lam
    s = np.array([pts[k - 1].s, pts[k].s, pts[k + 1].s])
    lam = np.array([pts[k - 1].lam, pts[k].lam, pts[k + 1].lam])
    a, b, c = np.polyfit(s - s[1], lam, 2)
    if a == 0:
        return float(lam[1])
    s_star = -b / (2 * a)
    if abs(s_star) > max(abs(s[0] - s[1]), abs(s[2] - s[1])):
        return float(lam[1])
    return float(c - b * b / (4 * a))


def continue_lp2_branch(grid: Grid, mu: float, b: float,
                        cfg: ContinuationConfig = ContinuationConfig(), s: float = 0.02) -> Branch:
    """Branch of the large-flux limit system leaving ``(0, mu)`` at ``sigma_1(b mu 1_{Omega1})``.

    ``x`` holds ``(w, v)``. Each point records ``lam * max(w)`` in
    ``Branch.diagnostics``-style fields via :func:`lp2_diagnostics`.
    """
    if not mu > 0:
        raise ValueError("the limit system branch needs mu > 0")
    eig, phi, _, psi1 = _tangent_parts(grid, mu, b, 1.0)
    w1 = grid.region_weights(Region.HABITAT)
    dlam = float(b * (w1 @ (psi1 * phi[grid.idx1] ** 2)))
    lam0 = eig.value
    x0 = np.concatenate([s * phi, mu + s * psi1])
    row = np.concatenate([grid.weights * phi, np.zeros(grid.n1)])
    system_at = lambda lam: LP2System(grid, lam, mu, b)
    lam, x = _seed_correct(system_at, lam0 + s * dlam, x0, row, s, cfg.tol)
    guess = np.concatenate([[dlam], phi, psi1])
    base, t = _finish_seed(grid, system_at, lam, x, guess, "lp2", lam0, None, cfg.tol)
    return _trace(grid, system_at, base, t, cfg, "lp2_from_gamma_v", lam0, LP2Params(lam0, mu, b))


def lp2_diagnostics(branch: Branch) -> list[dict]:
    """Per point: lam, lam * max(w), max(v), min(v)."""
    rows = []
    for p in branch.points:
        w, v = p.u.values, p.v.values
        rows.append({"lam": p.lam, "lam_wmax": p.lam * float(w.max()),
                     "vmax": float(v.max()), "vmin": float(v.min())})
    return rows
