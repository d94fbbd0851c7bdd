"""Semi-implicit time stepping of the prey-predator system with directed flux.

Each step first advances the prey with implicit diffusion and explicit
logistic/predation terms, then the predator with implicit diffusion whose
coefficient ``1 + alpha chi(u)`` is frozen at the old prey state, and
explicit flux and reaction terms evaluated with the new prey.

Two predator discretizations are available:

``substituted`` (default)
    ``(1 + alpha chi(u)) Delta v - alpha v Delta_1 u + v (mu + c u - v)``,
    the product-rule form of the flux, with ``Delta_1`` the habitat-side
    Laplacian of u. Its fixed points are exactly the solutions of the
    steady solver.
``flux``
    ``div((1 + alpha chi(u)) grad v) - alpha div(v grad u) + ...`` with both
    fluxes closed at the refuge boundary. Mass conservative, but it imposes
    a zero total predator flux on the refuge boundary instead of a zero
    gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BadParameter, BlowupDetected, NonfiniteState, SolveFailure
from .geometry import Field, Grid, Region, as_values
from .operators import advection_matrix, divergence_form, flux_difference, neumann_laplacian
from .steady import ModelParams, habitat_side_laplacian, residual_sp2

NEGATIVITY_FLOOR = -1e-12


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 0.05
    dt_min: float = 1e-8
    dt_max: float = 0.2
    T: float = 1000.0
    delta: float | None = None
    steady_tol: float = 1e-9
    output_every: int = 10
    snapshots: int = 0
    blowup: float = 1e6
    scheme: str = "substituted"
    grow: float = 1.05
    reactions: bool = True

    def cutoff_width(self, alpha: float) -> float:
        if self.delta is None:
            return 0.25 if alpha == 0 else 0.25 / alpha
        if not self.delta > 0 or (alpha > 0 and self.delta >= 1 / (2 * alpha)):
            raise BadParameter("cutoff width must lie in (0, 1/(2 alpha))")
        return self.delta


def cutoff(s, delta: float) -> np.ndarray:
    """C^1 cutoff: identity for s >= 0, constant -delta for s <= -delta."""
    s = np.asarray(s, dtype=float)
    t = (s + delta) / delta
    mid = delta * (-t**3 + 2 * t**2 - 1)
    return np.where(s >= 0, s, np.where(s <= -delta, -delta, mid))


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    monitors: dict[str, list[float]] = field(default_factory=dict)
    snapshots: list[tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)
    status: str = ""
    u: Field | None = None
    v: Field | None = None
    steps: int = 0
    min_u: float = np.inf
    min_v: float = np.inf

    def record(self, t: float, **values):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase")
        self.times.append(t)
        for k, val in values.items():
            self.monitors.setdefault(k, []).append(float(val))


def steady_residual_monitor(grid: Grid, params: ModelParams, state) -> float:
    """Sup norm of the steady residual at ``state = (u, v)``."""
    u, v = state
    Fu, Fv = residual_sp2(grid, params, u, v)
    return float(max(np.max(np.abs(Fu.values)), np.max(np.abs(Fv.values))))


def step(grid: Grid, params: ModelParams, state, dt: float,
         cfg: EvolutionConfig = EvolutionConfig()):
    """One IMEX step; returns the new ``(u, v)`` as arrays."""
    if not dt > 0:
        raise BadParameter("dt must be positive")
    u_in, v_in = state
    u, _ = as_values(grid, u_in, Region.OMEGA)
    v, _ = as_values(grid, v_in, Region.HABITAT)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NonfiniteState("state is not finite")
    p = params
    idx1 = grid.idx1
    L = neumann_laplacian(grid, Region.OMEGA).matrix
    eye = sp.identity(grid.n, format="csc")
    key = ("imex_u", float(dt))
    cache = grid._cache.setdefault("imex", {})
    if key not in cache:
        if len(cache) > 16:
            cache.clear()
        cache[key] = spla.splu((eye - dt * L).tocsc())
    on = 1.0 if cfg.reactions else 0.0
    # increment form: a constant steady state gives a zero right-hand side
    rhs_u = flux_difference(grid, Region.OMEGA, u)
    rhs_u += on * u * (p.lam - u - p.b * grid.indicator * grid.extend(v))
    u_new = u + cache[key].solve(dt * rhs_u)

    delta = cfg.cutoff_width(p.alpha)
    a = 1.0 + p.alpha * cutoff(u[idx1], delta)
    u1 = u_new[idx1]
    reaction = on * v * (p.mu + p.c * u1 - v)
    if cfg.scheme == "substituted":
        L1 = neumann_laplacian(grid, Region.HABITAT).matrix
        A = sp.diags(a) @ L1
        explicit = -p.alpha * v * habitat_side_laplacian(grid, p, u_new, v)
    elif cfg.scheme == "flux":
        A = divergence_form(grid, a).matrix
        explicit = p.alpha * (advection_matrix(grid, u_new) @ v)
    else:
        raise BadParameter(f"unknown scheme {cfg.scheme!r}")
    M = (sp.identity(grid.n1, format="csc") - dt * A).tocsc()
    try:
        v_new = v + spla.splu(M).solve(dt * (A @ v + explicit + reaction))
    except RuntimeError as exc:
        raise SolveFailure(f"predator update failed: {exc}") from exc
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise NonfiniteState("step produced a nonfinite state")
    return u_new, v_new


def evolve(grid: Grid, params: ModelParams, u0, v0,
           cfg: EvolutionConfig = EvolutionConfig()) -> Trajectory:
    """Integrate to ``cfg.T`` or until the steady residual drops below ``cfg.steady_tol``.

    A step is rejected, and dt halved, when it produces a value below
    ``-1e-12`` or a nonfinite state.
    """
    u, _ = as_values(grid, u0, Region.OMEGA)
    v, _ = as_values(grid, v0, Region.HABITAT)
    if u.min() < 0 or v.min() < 0:
        raise BadParameter("initial data must be nonnegative")
    cfg.cutoff_width(params.alpha)
    u, v = u.copy(), v.copy()
    traj = Trajectory()
    t, dt = 0.0, cfg.dt
    res = steady_residual_monitor(grid, params, (u, v))
    w1 = grid.region_weights(Region.HABITAT)

    def log(rate):
        traj.record(t, min_u=u.min(), min_v=v.min() if v.size else 0.0,
                    mass_u=grid.weights @ u, mass_v=w1 @ v, residual=res,
                    rate=rate, dt=dt)

    log(np.nan)
    snap_every = cfg.T / cfg.snapshots if cfg.snapshots else np.inf
    next_snap = 0.0
    while True:
        if res <= cfg.steady_tol:
            traj.status = "steady"
            break
        if t >= cfg.T * (1 - 1e-12):
            traj.status = "T_reached"
            break
        h = min(dt, cfg.T - t)
        try:
            u_new, v_new = step(grid, params, (u, v), h, cfg)
            ok = u_new.min() >= NEGATIVITY_FLOOR and (v_new.size == 0 or v_new.min() >= NEGATIVITY_FLOOR)
        except (NonfiniteState, SolveFailure):
            ok = False
        if not ok:
            dt = h * 0.5
            if dt < cfg.dt_min:
                traj.status = "failure"
                raise SolveFailure(f"dt fell below {cfg.dt_min} at t = {t:.6g}")
            continue
        rate = max(np.max(np.abs(u_new - u)), np.max(np.abs(v_new - v), initial=0.0)) / h
        u, v = u_new, v_new
        t += h
        traj.steps += 1
        traj.min_u = min(traj.min_u, float(u.min()))
        traj.min_v = min(traj.min_v, float(v.min()) if v.size else 0.0)
        if max(np.max(np.abs(u)), np.max(np.abs(v), initial=0.0)) > cfg.blowup:
            traj.status = "blowup"
            raise BlowupDetected(f"state norm exceeded {cfg.blowup:g} at t = {t:.6g}")
        res = steady_residual_monitor(grid, params, (u, v))
        if traj.steps % cfg.output_every == 0:
            log(rate)
        if cfg.snapshots and t >= next_snap:
            traj.snapshots.append((t, u.copy(), v.copy()))
            next_snap += snap_every
        dt = min(dt * cfg.grow, cfg.dt_max)
    if traj.times[-1] < t:
        log(np.nan)
    traj.u, traj.v = Field(Region.OMEGA, u), Field(Region.HABITAT, v)
    return traj
