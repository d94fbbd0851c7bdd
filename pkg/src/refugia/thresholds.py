"""Parameter-plane curves: nonexistence boundaries, bifurcation directions and alpha*."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .errors import NoSignChange, OutOfRegime
from .geometry import Grid, Region, measures
from .operators import shifted_inverse
from .spectra import phi_lower_star, phi_star, sigma1_dirichlet, sigma1_potential

ROOT_XTOL = 1e-12


class Verdict(str, Enum):
    NONEXISTENCE_PREY_THRESHOLD = "nonexistence_by_prop43"
    NONEXISTENCE_PREDATOR_THRESHOLD = "nonexistence_by_prop44"
    EXISTENCE = "existence_guaranteed"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class RegionVerdict:
    classification: Verdict
    lam: float
    mu: float
    alpha: float
    sigma1: float | None
    ell_tilde: float | None
    m: float

    @property
    def nonexistence(self) -> bool:
        return self.classification in (
            Verdict.NONEXISTENCE_PREY_THRESHOLD,
            Verdict.NONEXISTENCE_PREDATOR_THRESHOLD,
        )


def K_eval(grid: Grid, lam: float, mu: float, alpha: float, b: float, c: float) -> float:
    """``lam - sigma_1(b (c lam + mu) / (alpha b lam + 1) 1_{Omega1})``."""
    if lam < 0:
        raise ValueError("K is defined for lam >= 0")
    coeff = b * (c * lam + mu) / (alpha * b * lam + 1.0)
    return lam - sigma1_potential(grid, coeff)


def _regime_edge(alpha: float, b: float, c: float) -> float:
    return np.inf if alpha == 0 else c / (alpha * b)


def ell(grid: Grid, mu: float, alpha: float, b: float, c: float) -> float:
    """Unique positive root of ``K(., mu, alpha)``; requires ``mu > c/(alpha b)``.

    K is negative at 0 and positive at the Dirichlet eigenvalue of the
    refuge, so a bracketed root finder is safe.
    """
    if not alpha > 0 or not mu > _regime_edge(alpha, b, c):
        raise OutOfRegime(f"ell needs alpha > 0 and mu > c/(alpha b); got mu={mu}, alpha={alpha}")
    hi = sigma1_dirichlet(grid)
    f = lambda lam: K_eval(grid, lam, mu, alpha, b, c)
    return brentq(f, 0.0, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)


def ell_tilde(grid: Grid, mu: float, alpha: float, b: float, c: float) -> float:
    """sigma_1(b mu 1_{Omega1}) up to ``mu = c/(alpha b)`` and ell beyond.

    With ``alpha = 0`` the switch point is at infinity.
    """
    if not mu > 0:
        raise ValueError("ell_tilde needs mu > 0")
    if mu <= _regime_edge(alpha, b, c):
        return sigma1_potential(grid, b * mu)
    return ell(grid, mu, alpha, b, c)


def m_curve(lam: float, alpha: float, c: float) -> float:
    """Predator-rate threshold: ``-c lam`` up to ``c/alpha``, then ``-(alpha/4)(lam + c/alpha)^2``."""
    if alpha == 0 or lam <= c / alpha:
        return -c * lam
    return -(alpha / 4.0) * (lam + c / alpha) ** 2


def _tangent_parts(grid: Grid, mu: float, b: float, c: float):
    """phi*, sigma_1 and the two alpha-components of psi*: psi* = psi0 + alpha psi1."""
    eig = phi_star(grid, b, mu)
    phi = eig.eigenfunction.values
    phi1 = phi[grid.idx1]
    psi0 = shifted_inverse(grid, Region.HABITAT, mu, mu * c * phi1).values
    psi1 = shifted_inverse(grid, Region.HABITAT, mu, mu * (eig.value - b * mu) * phi1).values
    return eig, phi, psi0, psi1


def _direction_coefficients(grid: Grid, mu: float, b: float, c: float) -> tuple[float, float]:
    """(A, B) with lambda'(0) = A + alpha B at the predator-only branch."""
    _, phi, psi0, psi1 = _tangent_parts(grid, mu, b, c)
    w1 = grid.region_weights(Region.HABITAT)
    phi1 = phi[grid.idx1]
    A = float(grid.weights @ phi**3 + b * (w1 @ (psi0 * phi1**2)))
    B = float(b * (w1 @ (psi1 * phi1**2)))
    return A, B


def lambda_prime0_gamma_v(grid: Grid, params) -> float:
    """Bifurcation direction at ``lam = sigma_1(b mu 1_{Omega1})``.

    Quadrature of ``(phi* + b 1_{Omega1} psi*) phi*^2`` over Omega.
    """
    if not params.mu > 0:
        raise ValueError("direction from the predator-only branch needs mu > 0")
    A, B = _direction_coefficients(grid, params.mu, params.b, params.c)
    return A + params.alpha * B


def alpha_star(grid: Grid, mu: float, b: float, c: float) -> float:
    """Directed-flux strength at which the bifurcation turns subcritical.

    psi* is affine in alpha, so lambda'(0) = A + alpha B and the root is
    ``-A/B``. The sign pattern is confirmed at alpha*/2 and 2 alpha*.
    """
    if not mu > 0:
        raise ValueError("alpha_star needs mu > 0")
    A, B = _direction_coefficients(grid, mu, b, c)
    if not (A > 0 and B < 0):
        raise NoSignChange(f"lambda'(0) = {A:.3e} + alpha*{B:.3e} has no positive root")
    root = -A / B
    if not (A + 0.5 * root * B > 0 > A + 2 * root * B):
        raise NoSignChange("sign pattern around alpha* not confirmed")
    return root


def lambda_prime0_gamma_u(grid: Grid, params, lam0: float | None = None) -> float:
    """Bifurcation direction at ``lam = |mu|/c`` from the prey-only branch (mu < 0)."""
    mu, b, c, alpha = params.mu, params.b, params.c, params.alpha
    if not mu < 0:
        raise ValueError("direction from the prey-only branch needs mu < 0")
    lam0 = abs(mu) / c if lam0 is None else lam0
    phi = phi_lower_star(grid, b, lam0).values
    _, _, hab = measures(grid)
    l1_hab = float(grid.habitat_weights @ np.abs(phi))
    return (c**2 * l1_hab + c * hab + alpha * abs(mu) * (b * hab - l1_hab)) / (c**2 * hab)


def classify(
    grid: Grid, lam: float, mu: float, alpha: float, b: float, c: float
) -> RegionVerdict:
    """Place ``(lam, mu, alpha)`` relative to the nonexistence and existence curves."""
    if not lam > 0:
        raise ValueError("classify needs lam > 0")
    m = m_curve(lam, alpha, c)
    if mu > 0:
        s1 = sigma1_potential(grid, b * mu)
        lt = ell_tilde(grid, mu, alpha, b, c)
        if lam <= lt:
            verdict = Verdict.NONEXISTENCE_PREY_THRESHOLD
        elif lam > s1:
            verdict = Verdict.EXISTENCE
        else:
            verdict = Verdict.INDETERMINATE
        return RegionVerdict(verdict, lam, mu, alpha, s1, lt, m)
    if mu <= m:
        verdict = Verdict.NONEXISTENCE_PREDATOR_THRESHOLD
    elif mu < 0 and lam > abs(mu) / c:
        verdict = Verdict.EXISTENCE
    else:
        verdict = Verdict.INDETERMINATE
    return RegionVerdict(verdict, lam, mu, alpha, None, None, m)
