import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refugia.errors import DisconnectedComplement, GeometryError, RefugeTouchesBoundary, RegionMismatch
from refugia.geometry import DomainSpec, Field, Region, build_grid, integrate, measures


def test_ring_measures(ring):
    tot, r0, r1 = measures(ring)
    assert tot == pytest.approx(2 * math.pi, rel=1e-13)
    assert r0 == pytest.approx(math.pi, rel=1e-13)
    assert r1 == pytest.approx(math.pi, rel=1e-13)


def test_rect_measures(rect):
    tot, r0, r1 = measures(rect)
    assert tot == pytest.approx(2.0, rel=1e-13)
    assert r0 == pytest.approx(0.08, rel=1e-12)
    assert r1 == pytest.approx(1.92, rel=1e-13)


@pytest.mark.parametrize("spec", [DomainSpec.rect((256, 128)), DomainSpec.rect((128, 64)).refined(2),
                                  DomainSpec.ring(n=100), DomainSpec.ring(n=512)])
def test_measures_mesh_independent(spec):
    g = build_grid(spec)
    tot, r0, r1 = measures(g)
    expect = (2.0, 0.08, 1.92) if spec.kind != "ring1d" else (2 * math.pi, math.pi, math.pi)
    assert np.allclose((tot, r0, r1), expect, rtol=1e-12)
    assert abs(r0 + r1 - tot) <= 1e-12 * tot


def test_refuge_filling_ring_rejected():
    with pytest.raises(RefugeTouchesBoundary):
        build_grid(DomainSpec.ring(n=64, refuge_length=2 * math.pi))
    with pytest.raises(GeometryError):
        build_grid(DomainSpec.ring(n=64, refuge_length=3 * math.pi))


def test_hole_touching_outer_boundary_rejected():
    with pytest.raises(GeometryError):
        build_grid(DomainSpec.rect((64, 32), hole=((0.0, 0.5), (0.4, 0.6))))


def test_hole_cutting_domain_rejected():
    # a hole spanning the full height splits the habitat in two
    with pytest.raises((DisconnectedComplement, RefugeTouchesBoundary)):
        build_grid(DomainSpec.rect((64, 32), hole=((0.8, 1.2), (0.0, 1.0))))


def test_low_resolution_rejected():
    with pytest.raises(GeometryError):
        build_grid(DomainSpec.ring(n=8))


def test_integrate_constants(ring, rect):
    assert integrate(ring, Field(Region.OMEGA, np.ones(ring.n))) == pytest.approx(2 * math.pi)
    assert integrate(ring, Field(Region.HABITAT, np.ones(ring.n1))) == pytest.approx(math.pi)
    assert integrate(rect, Field(Region.OMEGA, rect.indicator)) == pytest.approx(1.92)


def test_field_region_mismatch(ring):
    a = Field(Region.OMEGA, np.ones(ring.n))
    b = Field(Region.HABITAT, np.ones(ring.n1))
    with pytest.raises(RegionMismatch):
        a + b
    with pytest.raises(RegionMismatch):
        ring.field(Region.HABITAT, np.ones(ring.n))


def test_partition_of_unity(rect_small, rng):
    g = rect_small
    f = rng.normal(size=g.n)
    whole = integrate(g, Field(Region.OMEGA, f))
    hab = integrate(g, Field(Region.OMEGA, f * g.indicator))
    ref = integrate(g, Field(Region.OMEGA, f * (1 - g.indicator)))
    assert whole == pytest.approx(hab + ref, abs=1e-12 * np.abs(f).sum())


def test_habitat_connected_bfs(rect_small):
    g = rect_small
    idx1 = set(g.idx1.tolist())
    nbrs = {i: [] for i in idx1}
    for i, j, a in zip(g.face_i, g.face_j, g.face_area1):
        if a > 0:
            nbrs[i].append(j)
            nbrs[j].append(i)
    start = next(iter(idx1))
    seen, todo = {start}, [start]
    while todo:
        k = todo.pop()
        for m in nbrs[k]:
            if m not in seen:
                seen.add(m)
                todo.append(m)
    assert seen == idx1


def test_indicator_fractional_on_interface(rect):
    f = rect.indicator
    assert np.all((f >= 0) & (f <= 1))
    edge = rect.interface_nodes
    assert np.all((f[edge] > 0) & (f[edge] < 1))


def test_spec_roundtrip():
    for spec in (DomainSpec.ring(n=64, refuge_start=0.5), DomainSpec.rect((64, 32)).refined(2)):
        assert DomainSpec.from_dict(spec.to_dict()) == spec


def test_checksum_and_json(ring64, tmp_path):
    assert ring64.checksum() == build_grid(DomainSpec.ring(n=64)).checksum()
    assert ring64.checksum() != build_grid(DomainSpec.ring(n=65)).checksum()
    path = tmp_path / "grid.json"
    ring64.to_json(path)
    assert path.stat().st_size > 0


@settings(max_examples=25, deadline=None)
@given(n=st.integers(16, 200), start=st.floats(0, 2 * math.pi), frac=st.floats(0.1, 0.9))
def test_ring_measures_property(n, start, frac):
    g = build_grid(DomainSpec.ring(n=n, refuge_start=start, refuge_length=frac * 2 * math.pi))
    tot, r0, r1 = measures(g)
    assert tot == pytest.approx(2 * math.pi, rel=1e-12)
    assert r0 + r1 == pytest.approx(tot, rel=1e-12)
