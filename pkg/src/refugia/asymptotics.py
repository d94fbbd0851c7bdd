"""Large-flux and small-growth-rate asymptotics.

``alpha_sweep`` follows one positive steady state as the flux strength grows
and reports its distance to the prey-only state ``(lam, 0)`` and, below the
bifurcation curve, to the limit system solution after rescaling u by alpha.

``lp2_scaling_probe`` follows the limit system as ``lam -> 0+`` and
decomposes the scaled unknowns ``lam w`` and ``v / lam`` into means and
mean-zero parts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .continuation import (
    ContinuationConfig,
    branch_from_gamma_u,
    branch_from_gamma_v,
    continue_lp2_branch,
    state_at_lam,
)
from .errors import MaxIterations, RefugiaError, SolutionNotFound
from .geometry import Grid, Region, measures
from .operators import mean_zero_inverse
from .spectra import sigma1_curve
from .steady import ModelParams, NewtonConfig, SP2System, newton_core, newton_lp2

_MIN_RATIO = 1.005


@dataclass(frozen=True)
class AlphaSweepRow:
    alpha: float
    err_u: float
    err_v: float
    err_w: float = np.nan
    case: str = ""
    converged: bool = True
    max_u: float = np.nan

    @property
    def total(self) -> float:
        return self.err_u + self.err_v


@dataclass(frozen=True)
class LSDecomposition:
    s: float
    t: float
    phi: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class ScalingRow:
    lam: float
    lam_wmax: float
    wmax: float
    s: float
    t: float
    phi_dev: float
    psi_norm: float
    vmin_over_lam: float
    vmax_over_lam: float
    harnack: float
    residual: float


def _initial_state(grid: Grid, params: ModelParams, cfg: ContinuationConfig, lam_max: float):
    """A positive solution at ``params.lam``, read off the semitrivial branch."""
    if params.mu < 0:
        br = branch_from_gamma_u(grid, params, cfg.__class__(**{**cfg.__dict__, "lam_window": (0.0, lam_max)}))
    else:
        br = branch_from_gamma_v(grid, params, cfg.__class__(**{**cfg.__dict__, "lam_window": (0.0, lam_max)}))
    x0 = state_at_lam(br, params.lam)
    r = newton_core(SP2System(grid, params), x0, NewtonConfig())
    return r.x


def _advance_alpha(grid, params, x, a_from, a_to, newton):
    """Warm-started geometric continuation in alpha; returns the state at a_to."""
    a = a_from
    while a < a_to:
        trial = a_to
        while True:
            r = newton_core(SP2System(grid, params.with_(alpha=trial)), x, newton, raise_on_failure=False)
            if r.converged and r.x.min() > 0:
                break
            if a > 0:
                if trial / a < _MIN_RATIO:
                    raise SolutionNotFound(f"alpha continuation stalled at {a:g}")
                trial = float(np.sqrt(a * trial))
            else:
                if trial < 1e-3:
                    raise SolutionNotFound("alpha continuation failed to leave 0")
                trial = trial / 2
        a, x = trial, r.x
    return x


def lp2_solution_at(grid: Grid, lam: float, mu: float, b: float,
                    cfg: ContinuationConfig = ContinuationConfig()) -> np.ndarray:
    """Positive solution ``(w, v)`` of the limit system at ``lam`` from its branch."""
    cfg = cfg.__class__(**{**cfg.__dict__, "lam_window": (lam, np.inf)})
    br = continue_lp2_branch(grid, mu, b, cfg)
    x0 = state_at_lam(br, lam)
    w0, v0 = x0[: grid.n], x0[grid.n:]
    st = newton_lp2(grid, lam, mu, b, (w0, v0))
    return st.vector()


def _label(grid, lam, u, v, w_inf, v_inf, alpha):
    """Case (a) or (b): whichever limit the state is relatively closer to."""
    d_a = np.max(np.abs(u - lam)) / lam + np.max(np.abs(v)) / max(np.max(np.abs(v)), lam)
    if w_inf is None:
        return "a", np.nan
    err_w = float(np.max(np.abs(alpha * u - w_inf)))
    d_b = err_w / np.max(np.abs(w_inf)) + np.max(np.abs(v - v_inf)) / np.max(np.abs(v_inf))
    return ("a" if d_a <= d_b else "b"), err_w


def alpha_sweep(grid: Grid, lam: float, mu: float, b: float, c: float, alphas,
                cfg: ContinuationConfig = ContinuationConfig(),
                newton: NewtonConfig = NewtonConfig(max_iter=30)) -> list[AlphaSweepRow]:
    """Rows for increasing alphas along one warm-started chain of positive solutions.

    The chain starts from the semitrivial branch at ``alphas[0]``. Below the
    bifurcation curve the rescaled state ``(alpha u, v)`` is also compared
    with a limit system solution. A failed alpha is recorded with
    ``converged=False`` and ends the chain.
    """
    alphas = sorted(float(a) for a in alphas)
    s1 = sigma1_curve(grid, b, mu) if mu > 0 else -np.inf
    w_inf = v_inf = None
    if mu > 0 and lam < s1:
        xl = lp2_solution_at(grid, lam, mu, b, cfg)
        w_inf, v_inf = xl[: grid.n], xl[grid.n:]
    base = ModelParams(lam=lam, mu=mu, b=b, c=c, alpha=alphas[0])
    rows: list[AlphaSweepRow] = []
    try:
        x = _initial_state(grid, base, cfg, lam_max=max(2 * lam, s1 + 1.0))
    except RefugiaError:
        return [AlphaSweepRow(a, np.nan, np.nan, converged=False) for a in alphas]
    prev = alphas[0]
    for a in alphas:
        try:
            x = _advance_alpha(grid, base, x, prev, a, newton)
        except (SolutionNotFound, MaxIterations):
            rows.extend(AlphaSweepRow(r, np.nan, np.nan, converged=False)
                        for r in alphas[len(rows):])
            break
        prev = a
        u, v = x[: grid.n], x[grid.n:]
        case, err_w = _label(grid, lam, u, v, w_inf, v_inf, a)
        rows.append(AlphaSweepRow(a, float(np.max(np.abs(u - lam))), float(np.max(np.abs(v))),
                                  err_w, case, True, float(u.max())))
    return rows


def base_point(grid: Grid, mu: float, b: float):
    """``(s0, t0, phi0)`` of the small-lam expansion of the limit system."""
    omega, om0, om1 = measures(grid)
    s0 = mu * om1 / om0
    t0 = omega / (b * om1)
    f = grid.indicator
    rhs = (om1 / om0) * (1.0 - f) - f
    phi0 = mu * mean_zero_inverse(grid, Region.OMEGA, rhs).values
    return s0, t0, phi0


def extract_lyapunov_schmidt(grid: Grid, w, v, lam: float) -> LSDecomposition:
    """Means and mean-zero parts of ``lam w = s + lam phi`` and ``v / lam = t + lam psi``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    w = np.asarray(getattr(w, "values", w), dtype=float)
    v = np.asarray(getattr(v, "values", v), dtype=float)
    W = grid.weights
    W1 = grid.region_weights(Region.HABITAT)
    s = float(W @ (lam * w) / W.sum())
    t = float(W1 @ (v / lam) / W1.sum())
    return LSDecomposition(s, t, (lam * w - s) / lam, (v / lam - t) / lam)


def jacobian_base_point(grid: Grid, b: float, mu: float) -> tuple[np.ndarray, float]:
    """2x2 Jacobian of the reduced equations at ``(s0, t0)`` and its determinant."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    _, om0, om1 = measures(grid)
    s0, t0 = mu * om1 / om0, measures(grid)[0] / (b * om1)
    J = np.array([[0.0, -s0 * b * om1], [-(t0 / s0) * om0, -b * t0 * om1]])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return J, float(det)


def lp2_scaling_probe(grid: Grid, mu: float, b: float, lams,
                      newton: NewtonConfig = NewtonConfig()) -> list[ScalingRow]:
    """Limit-system solutions for decreasing lam, started from the base point.

    Each solve is warm-started from the previous one, rescaled by the ratio
    of consecutive lam values. The residual tolerance is relative to the size
    of w, which grows like 1/lam.
    """
    lams = [float(l) for l in lams]
    if any(b2 >= a2 for a2, b2 in zip(lams, lams[1:])):
        raise ValueError("lams must be strictly decreasing")
    s0, t0, phi0 = base_point(grid, mu, b)
    rows = []
    prev = None
    for lam in lams:
        if prev is None:
            w0 = (s0 + lam * phi0) / lam
            v0 = np.full(grid.n1, lam * t0)
        else:
            r = prev[0] / lam
            w0, v0 = prev[1] * r, prev[2] / r
        cfg = dataclasses.replace(newton, tol=newton.tol * max(1.0, float(np.max(w0))))
        st = newton_lp2(grid, lam, mu, b, (w0, v0), cfg)
        w, v = st.u.values, st.v.values
        ls = extract_lyapunov_schmidt(grid, w, v, lam)
        rows.append(ScalingRow(
            lam=lam, lam_wmax=lam * float(w.max()), wmax=float(w.max()), s=ls.s, t=ls.t,
            phi_dev=float(np.max(np.abs(ls.phi - phi0))), psi_norm=float(np.max(np.abs(ls.psi))),
            vmin_over_lam=float(v.min() / lam), vmax_over_lam=float(v.max() / lam),
            harnack=float(v.max() / v.min()), residual=st.residual_norm,
        ))
        prev = (lam, w, v)
    return rows


def loglog_slope(rows: list[ScalingRow]) -> float:
    """Least-squares slope of log max(w) against log(1/lam)."""
    x = np.log([1.0 / r.lam for r in rows])
    y = np.log([r.wmax for r in rows])
    return float(np.polyfit(x, y, 1)[0])
