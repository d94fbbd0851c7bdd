import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from refugia.errors import NonellipticCoefficient, RegionMismatch
from refugia.geometry import DomainSpec, Field, Region, build_grid, integrate, measures
from refugia.operators import (
    advection_matrix,
    advective_term,
    dirichlet_laplacian_refuge,
    divergence_form,
    flux_difference,
    mean_zero_inverse,
    neumann_laplacian,
    shifted_inverse,
)
from refugia.spectra import phi_lower_star

from conftest import ring_x

GRIDS = {n: build_grid(DomainSpec.ring(n=n)) for n in (32, 64, 128, 256)}


def _cos_error(n):
    g = GRIDS[n]
    x = ring_x(g)
    L = neumann_laplacian(g).matrix
    return np.max(np.abs(L @ np.cos(x) + np.cos(x)))


def test_neumann_constants_in_kernel(ring, rect):
    for g in (ring, rect):
        for region in (Region.OMEGA, Region.HABITAT):
            L = neumann_laplacian(g, region)
            assert np.max(np.abs(L.matrix @ np.ones(L.shape[0]))) < 1e-9
            f = flux_difference(g, region, np.full(L.shape[0], 3.7))
            assert np.all(f == 0.0)


def test_neumann_cos_second_order():
    errs = [_cos_error(n) for n in (64, 128, 256)]
    assert errs[-1] < 1e-3
    for a, b in zip(errs, errs[1:]):
        assert 3.5 < a / b < 4.5


def test_neumann_refuge_region_rejected(ring):
    with pytest.raises(RegionMismatch):
        neumann_laplacian(ring, Region.REFUGE)


def test_habitat_neumann_kernel_simple(ring64):
    L = neumann_laplacian(ring64, Region.HABITAT)
    w = ring64.region_weights(Region.HABITAT)
    # symmetric form W^(1/2) (-L) W^(-1/2)
    s = np.sqrt(w)
    S = (s[:, None] * -L.toarray()) / s[None, :]
    ev = np.sort(scipy.linalg.eigvalsh(0.5 * (S + S.T)))
    assert abs(ev[0]) < 1e-10
    assert ev[1] > 1e-3


def test_flux_difference_matches_matrix(rect_small, rng):
    g = rect_small
    f = rng.normal(size=g.n)
    a = flux_difference(g, Region.OMEGA, f)
    b = neumann_laplacian(g).matrix @ f
    assert np.max(np.abs(a - b)) < 1e-9 * np.max(np.abs(b))


def test_dirichlet_ring_eigenvalue_and_refinement():
    errs = []
    for n in (64, 128, 256):
        D = dirichlet_laplacian_refuge(GRIDS[n]).toarray()
        w = GRIDS[n].weights[GRIDS[n].idx0]
        s = np.sqrt(w)
        S = (s[:, None] * D) / s[None, :]
        ev = scipy.linalg.eigvalsh(0.5 * (S + S.T))
        assert ev[0] > 0
        errs.append(abs(ev[0] - 1.0))
    assert errs[-1] < 1e-3
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


def test_dirichlet_rect_eigenvalue(rect):
    from refugia.spectra import sigma1_dirichlet
    exact = math.pi**2 * 31.25
    assert sigma1_dirichlet(rect) == pytest.approx(exact, rel=0.02)


def test_divergence_form_reduces_and_scales(rect_small):
    g = rect_small
    L1 = neumann_laplacian(g, Region.HABITAT).matrix
    A1 = divergence_form(g, Field(Region.HABITAT, np.ones(g.n1))).matrix
    A2 = divergence_form(g, Field(Region.HABITAT, np.full(g.n1, 2.0))).matrix
    assert abs(A1 - L1).max() == 0
    assert abs(A2 - 2 * L1).max() < 1e-12 * abs(L1).max()
    assert np.max(np.abs(A2 @ np.ones(g.n1))) < 1e-9


def test_divergence_form_nonelliptic(ring64):
    a = np.ones(ring64.n1)
    a[3] = 0.0
    with pytest.raises(NonellipticCoefficient):
        divergence_form(ring64, Field(Region.HABITAT, a))


def test_divergence_form_manufactured():
    errs = []
    for n in (64, 128, 256):
        g = GRIDS[n]
        x = ring_x(g)
        a = 1 + 0.5 * np.cos(x)
        v = np.sin(x)
        exact = -0.5 * np.sin(x) * np.cos(x) - (1 + 0.5 * np.cos(x)) * np.sin(x)
        num = divergence_form(g, Field(Region.OMEGA, a), Region.OMEGA).matrix @ v
        errs.append(np.max(np.abs(num - exact)))
    assert errs[-1] < 1e-3
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_advective_term_constant_u(ring64, rng):
    v = Field(Region.HABITAT, rng.random(ring64.n1))
    out = advective_term(ring64, v, Field(Region.OMEGA, np.full(ring64.n, 2.0)))
    assert np.max(np.abs(out.values)) == 0.0


def test_advective_term_conservative(rect_small, rng):
    g = rect_small
    for _ in range(5):
        v = Field(Region.HABITAT, rng.random(g.n1))
        u = Field(Region.OMEGA, rng.random(g.n))
        out = advective_term(g, v, u)
        assert abs(integrate(g, out)) < 1e-12 * max(1.0, np.abs(out.values).max())


def test_advective_term_manufactured_interior():
    # v constant: -div(v grad u) = -v Lap u away from the refuge walls
    errs = []
    for n in (64, 128, 256):
        g = GRIDS[n]
        x = ring_x(g)
        u = np.cos(x)
        out = advective_term(g, Field(Region.HABITAT, np.full(g.n1, 3.0)), Field(Region.OMEGA, u))
        x1 = x[g.idx1]
        far = np.abs(np.sin(x1)) > 0.3  # refuge is [0, pi]; walls at 0 and pi
        errs.append(np.max(np.abs(out.values[far] - 3.0 * np.cos(x1[far]))))
    assert errs[-1] < 1e-3
    assert errs[0] / errs[1] > 3.0


def test_advective_term_region_check(ring64):
    with pytest.raises(RegionMismatch):
        advective_term(ring64, Field(Region.OMEGA, np.ones(ring64.n)), np.ones(ring64.n))


def test_advection_matrix_columns_sum_to_zero(rect_small, rng):
    g = rect_small
    M = advection_matrix(g, rng.random(g.n))
    w = g.region_weights(Region.HABITAT)
    assert np.max(np.abs(w @ M.toarray())) < 1e-12 * abs(M).max() * w.max()


def test_shifted_inverse(ring64, rng):
    g = ring64
    one = shifted_inverse(g, Region.OMEGA, 2.5, np.full(g.n, 2.5))
    assert np.max(np.abs(one.values - 1)) < 1e-10
    for region in (Region.OMEGA, Region.HABITAT):
        L = neumann_laplacian(g, region).matrix
        x = rng.normal(size=L.shape[0])
        rhs = 0.7 * x - L @ x
        back = shifted_inverse(g, region, 0.7, rhs).values
        assert np.max(np.abs(back - x)) < 1e-9


def test_phi_lower_star_l1_identity(ring, rect):
    for g, b, lam in ((ring, 1.0, 0.5), (rect, 2.0, 3.0)):
        phi = phi_lower_star(g, b, lam).values
        _, _, hab = measures(g)
        assert np.all(phi < 0)
        assert g.weights @ np.abs(phi) == pytest.approx(b * hab, abs=1e-6)
        assert g.habitat_weights @ np.abs(phi) < b * hab


def test_mean_zero_inverse(ring):
    g = ring
    assert np.all(mean_zero_inverse(g, Region.OMEGA, np.zeros(g.n)).values == 0)
    x = ring_x(g)
    out = mean_zero_inverse(g, Region.OMEGA, np.cos(x)).values
    assert np.max(np.abs(out - np.cos(x))) < 1e-3


def test_mean_zero_inverse_base_profile(rect_small):
    g = rect_small
    tot, r0, r1 = measures(g)
    f = g.indicator
    rhs = 2.0 * ((r1 / r0) * (1 - f) - f)
    phi = mean_zero_inverse(g, Region.OMEGA, rhs).values
    assert abs(g.weights @ phi) < 1e-10
    L = neumann_laplacian(g).matrix
    proj = rhs - (g.weights @ rhs) / tot
    assert np.max(np.abs(-L @ phi - proj)) < 1e-8 * np.max(np.abs(rhs))


def test_export(ring64, tmp_path):
    path = tmp_path / "L.mtx"
    neumann_laplacian(ring64).export(path)
    assert path.read_text().startswith("%%MatrixMarket")


# ---- properties -------------------------------------------------------------

arrays = st.integers(0, 2**32 - 1)


@settings(max_examples=30, deadline=None)
@given(seed=arrays, region=st.sampled_from([Region.OMEGA, Region.HABITAT]))
def test_adjointness(seed, region):
    g = GRIDS[64]
    r = np.random.default_rng(seed)
    n = g.region_size(region)
    f, h = r.normal(size=n), r.normal(size=n)
    w = g.region_weights(region)
    a = r.random(n) + 0.1
    for L in (neumann_laplacian(g, region).matrix,
              divergence_form(g, Field(region, a), region).matrix):
        lhs = w @ ((L @ f) * h)
        rhs = w @ (f * (L @ h))
        assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(lhs)))


@settings(max_examples=30, deadline=None)
@given(seed=arrays, region=st.sampled_from([Region.OMEGA, Region.HABITAT]))
def test_divergence_theorem(seed, region):
    g = GRIDS[64]
    r = np.random.default_rng(seed)
    f = r.normal(size=g.region_size(region))
    out = neumann_laplacian(g, region).apply(Field(region, f))
    assert abs(integrate(g, out)) < 1e-10 * (1 + np.abs(out.values).max())


@settings(max_examples=30, deadline=None)
@given(seed=arrays)
def test_monotone_coefficient(seed):
    g = GRIDS[64]
    r = np.random.default_rng(seed)
    f = r.normal(size=g.n1)
    a = r.random(g.n1) + 0.1
    a2 = a + r.random(g.n1)
    w = g.region_weights(Region.HABITAT)
    q = lambda c: -w @ ((divergence_form(g, Field(Region.HABITAT, c)).matrix @ f) * f)
    assert q(a2) >= q(a) - 1e-12
