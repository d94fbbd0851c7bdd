import math

import numpy as np
import pytest

from refugia.errors import OutOfRegime
from refugia.geometry import measures
from refugia.spectra import sigma1_curve, sigma1_dirichlet, sigma1_potential
from refugia.steady import ModelParams
from refugia.thresholds import (
    K_eval,
    Verdict,
    alpha_star,
    classify,
    ell,
    ell_tilde,
    lambda_prime0_gamma_u,
    lambda_prime0_gamma_v,
    m_curve,
)


def test_m_curve_examples():
    assert m_curve(0.3, 2.0, 1.0) == pytest.approx(-0.3)
    assert m_curve(1.0, 2.0, 1.0) == pytest.approx(-1.125)
    junction = 0.5
    assert m_curve(junction, 2.0, 1.0) == pytest.approx(-0.5)
    h = 1e-6
    left = (m_curve(junction, 2.0, 1.0) - m_curve(junction - h, 2.0, 1.0)) / h
    right = (m_curve(junction + h, 2.0, 1.0) - m_curve(junction, 2.0, 1.0)) / h
    assert left == pytest.approx(right, abs=1e-5)


def test_m_curve_nonpositive_decreasing():
    lams = np.linspace(0.01, 5, 200)
    for a in (0.1, 1.0, 7.0):
        m = np.array([m_curve(l, a, 1.0) for l in lams])
        assert np.all(m <= 0) and np.all(np.diff(m) < 0)


def test_K_eval(ring):
    assert K_eval(ring, 0.0, 2.0, 1.0, 1.0, 1.0) == pytest.approx(-sigma1_curve(ring, 1.0, 2.0))
    assert K_eval(ring, 50.0, 2.0, 1.0, 1.0, 1.0) > 0
    lams = np.linspace(0.0, 3.0, 40)
    K = [K_eval(ring, l, 2.0, 1.0, 1.0, 1.0) for l in lams]
    assert np.all(np.diff(K) > 0)


def test_ell(ring):
    b, c, alpha = 1.0, 1.0, 1.0
    mu = 2.0
    root = ell(ring, mu, alpha, b, c)
    assert abs(K_eval(ring, root, mu, alpha, b, c)) < 1e-8
    assert 0 < root < sigma1_dirichlet(ring)
    with pytest.raises(OutOfRegime):
        ell(ring, 0.5, alpha, b, c)
    near = ell(ring, c / (alpha * b) * (1 + 1e-7), alpha, b, c)
    assert near == pytest.approx(sigma1_potential(ring, c / alpha), abs=1e-5)
    mus = [1.5, 2, 4, 8, 16]
    vals = [ell(ring, m, alpha, b, c) for m in mus]
    assert all(a < b_ for a, b_ in zip(vals, vals[1:]))
    alphas = [1, 10, 100, 1000, 1e4]
    vals = [ell(ring, 2.0, a, b, c) for a in alphas]
    assert all(a > b_ for a, b_ in zip(vals, vals[1:]))
    # decay toward 0: each decade in alpha cuts ell by a factor of about sqrt(10)
    assert vals[-1] < 0.025 * vals[0]
    assert vals[-1] / vals[-2] < 0.4


def test_ell_tilde(ring):
    alpha = 2.0
    edge = 1.0 / alpha
    assert ell_tilde(ring, edge, alpha, 1, 1) == pytest.approx(sigma1_curve(ring, 1, edge))
    assert ell_tilde(ring, edge * (1 + 1e-9), alpha, 1, 1) == pytest.approx(
        sigma1_curve(ring, 1, edge), abs=1e-6)
    assert ell_tilde(ring, 0.2, alpha, 1, 1) == sigma1_curve(ring, 1, 0.2)
    mus = np.geomspace(0.05, 1e4, 30)
    vals = np.array([ell_tilde(ring, m, alpha, 1, 1) for m in mus])
    s1D = sigma1_dirichlet(ring)
    assert np.all(np.diff(vals) > 0)
    assert np.all(vals <= s1D)
    assert vals[-1] == pytest.approx(s1D, rel=0.02)
    for m in mus:
        assert ell_tilde(ring, m, alpha, 1, 1) <= sigma1_curve(ring, 1, m) + 1e-12
        assert ell_tilde(ring, m, 2 * alpha, 1, 1) <= ell_tilde(ring, m, alpha, 1, 1) + 1e-12


def test_direction_gamma_v(ring):
    p = ModelParams(lam=1.0, mu=2.0)
    vals = [lambda_prime0_gamma_v(ring, p.with_(alpha=a)) for a in (0, 1, 10, 100, 1000)]
    assert vals[0] > 0 and vals[-1] < 0
    assert np.all(np.diff(vals) < 0)


def test_alpha_star(ring):
    a = alpha_star(ring, 2.0, 1.0, 1.0)
    p = ModelParams(lam=1.0, mu=2.0)
    assert abs(lambda_prime0_gamma_v(ring, p.with_(alpha=a))) < 1e-8
    assert lambda_prime0_gamma_v(ring, p.with_(alpha=a / 2)) > 0
    assert lambda_prime0_gamma_v(ring, p.with_(alpha=2 * a)) < 0
    # independent oracle: bisection over a geometric bracket
    f = lambda al: lambda_prime0_gamma_v(ring, p.with_(alpha=al))
    grid = np.geomspace(1e-2, 1e4, 61)
    signs = np.sign([f(x) for x in grid])
    k = int(np.flatnonzero(signs[:-1] != signs[1:])[0])
    lo, hi = grid[k], grid[k + 1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > 0 else (lo, mid)
    assert a == pytest.approx(0.5 * (lo + hi), rel=1e-8)


def test_direction_gamma_u(ring):
    for alpha in (0.0, 1.0, 100.0):
        p = ModelParams(lam=1.0, mu=-0.5, alpha=alpha)
        assert lambda_prime0_gamma_u(ring, p) > 0
    # b -> 0 limit of the closed form is 1
    tiny = ModelParams(lam=1.0, mu=-0.5, b=1e-12)
    assert lambda_prime0_gamma_u(ring, tiny) == pytest.approx(1.0, abs=1e-9)


def test_classify(ring):
    alpha = 2.0
    lt = ell_tilde(ring, 2.0, alpha, 1, 1)
    s1 = sigma1_curve(ring, 1, 2.0)
    v = classify(ring, 0.9 * lt, 2.0, alpha, 1, 1)
    assert v.classification is Verdict.NONEXISTENCE_PREY_THRESHOLD and v.nonexistence
    assert classify(ring, 1.1 * s1, 2.0, alpha, 1, 1).classification is Verdict.EXISTENCE
    if lt < s1:
        assert classify(ring, 0.5 * (lt + s1), 2.0, alpha, 1, 1).classification is Verdict.INDETERMINATE
    lam = 1.0
    m = m_curve(lam, alpha, 1.0)
    assert classify(ring, lam, m - 0.1, alpha, 1, 1).classification is \
        Verdict.NONEXISTENCE_PREDATOR_THRESHOLD
    assert classify(ring, lam, -0.5, alpha, 1, 1).classification is Verdict.EXISTENCE
