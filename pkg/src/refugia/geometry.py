"""Discrete domains with an interior refuge.

Nodes sit on the vertices of a piecewise-uniform tensor grid whose lines pass
through the refuge boundary. Each primal cell lies entirely in the refuge or
entirely in the habitat. A node owns the dual box around it (a quarter of
each adjacent cell in 2-D, half of each adjacent interval in 1-D); the part
of that box inside the habitat is its habitat volume.

Nodes strictly inside the refuge carry the label ``omega0``. Every other node,
including the nodes on the refuge boundary, carries ``omega1``: predators
live on the closure of the habitat. On boundary nodes the habitat indicator
is fractional (1/2 on an edge, 3/4 at a corner of a box refuge), which is the
share of the dual box occupied by habitat.

Two geometries are supported:

``ring1d``
    A circle of given circumference with the refuge as one arc.
``rect2d_with_hole``
    An axis-aligned box with a box-shaped refuge strictly inside it.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .errors import (
    DisconnectedComplement,
    EmptyRefuge,
    GeometryError,
    RefugeTouchesBoundary,
    RegionMismatch,
)

MIN_RESOLUTION = 16


class Region(str, Enum):
    OMEGA = "omega"
    REFUGE = "omega0"
    HABITAT = "omega1"


@dataclass(frozen=True)
class DomainSpec:
    """Serializable description of a domain.

    ``ring1d`` uses ``circumference``, ``refuge_start`` (an angle in radians)
    and ``refuge_length`` (arc length). ``rect2d_with_hole`` uses ``outer``
    and ``hole`` as ``((x0, x1), (y0, y1))``. ``resolution`` holds the node
    count per axis; ``subdivision`` splits every interval of that layout into
    equal pieces, which gives nested refinements.
    """

    kind: str
    resolution: tuple[int, ...]
    circumference: float = 2 * math.pi
    refuge_start: float = 0.0
    refuge_length: float = math.pi
    outer: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 2.0), (0.0, 1.0))
    hole: tuple[tuple[float, float], tuple[float, float]] = ((0.8, 1.2), (0.4, 0.6))
    subdivision: int = 1

    @classmethod
    def ring(
        cls,
        n: int = 256,
        circumference: float = 2 * math.pi,
        refuge_start: float = 0.0,
        refuge_length: float = math.pi,
    ) -> "DomainSpec":
        return cls(
            kind="ring1d",
            resolution=(int(n),),
            circumference=float(circumference),
            refuge_start=float(refuge_start),
            refuge_length=float(refuge_length),
        )

    @classmethod
    def rect(
        cls,
        shape: Sequence[int] = (128, 64),
        outer=((0.0, 2.0), (0.0, 1.0)),
        hole=((0.8, 1.2), (0.4, 0.6)),
    ) -> "DomainSpec":
        outer = tuple(tuple(float(x) for x in ax) for ax in outer)
        hole = tuple(tuple(float(x) for x in ax) for ax in hole)
        return cls(
            kind="rect2d_with_hole",
            resolution=tuple(int(n) for n in shape),
            outer=outer,
            hole=hole,
        )

    def refined(self, factor: int = 2) -> "DomainSpec":
        """The same layout with every interval split into ``factor`` pieces."""
        return dataclasses.replace(self, subdivision=self.subdivision * factor)

    def to_dict(self) -> dict[str, Any]:
        extra = {"subdivision": self.subdivision} if self.subdivision != 1 else {}
        if self.kind == "ring1d":
            return extra | {
                "kind": self.kind,
                "resolution": list(self.resolution),
                "circumference": self.circumference,
                "refuge_start": self.refuge_start,
                "refuge_length": self.refuge_length,
            }
        return extra | {
            "kind": self.kind,
            "resolution": list(self.resolution),
            "outer": [list(ax) for ax in self.outer],
            "hole": [list(ax) for ax in self.hole],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DomainSpec":
        data = dict(data)
        kind = data.pop("kind", None)
        res = data.pop("resolution", None)
        sub = int(data.pop("subdivision", 1))
        if res is None:
            raise GeometryError("domain block needs a resolution")
        if kind == "ring1d":
            n = res[0] if isinstance(res, (list, tuple)) else res
            allowed = {"circumference", "refuge_start", "refuge_length"}
            unknown = set(data) - allowed
            if unknown:
                raise GeometryError(f"unknown domain keys for ring1d: {sorted(unknown)}")
            spec = cls.ring(n=int(n), **{k: float(v) for k, v in data.items()})
            return dataclasses.replace(spec, subdivision=sub)
        if kind == "rect2d_with_hole":
            allowed = {"outer", "hole"}
            unknown = set(data) - allowed
            if unknown:
                raise GeometryError(
                    f"unknown domain keys for rect2d_with_hole: {sorted(unknown)}"
                )
            return dataclasses.replace(cls.rect(shape=tuple(res), **data), subdivision=sub)
        raise GeometryError(f"unknown domain kind {kind!r}")


def _split_axis(
    breaks: Sequence[float], n: int, mins: Sequence[int], sub: int = 1
) -> np.ndarray:
    """Widths of intervals over consecutive segments ``breaks``.

    ``n`` intervals are distributed proportionally to segment length
    (largest-remainder rounding, respecting the minimum ``mins``) and each
    is then split into ``sub`` equal pieces.
    """
    lengths = np.diff(np.asarray(breaks, dtype=float))
    mins = np.asarray(mins, dtype=int)
    if n < mins.sum():
        raise GeometryError("too few nodes for the refuge layout")
    ideal = n * lengths / lengths.sum()
    counts = np.maximum(np.floor(ideal).astype(int), mins)
    while counts.sum() > n:
        k = int(np.argmax(np.where(counts > mins, counts - ideal, -np.inf)))
        counts[k] -= 1
    while counts.sum() < n:
        k = int(np.argmax(ideal - counts))
        counts[k] += 1
    return np.concatenate([np.full(c * sub, ln / (c * sub)) for c, ln in zip(counts, lengths)])


@dataclass(frozen=True, eq=False)
class Grid:
    """Vertex grid with dual-box control volumes; immutable after construction.

    Per node: ``weights`` is the dual-box volume and ``habitat_weights`` its
    habitat part. Per edge ``(face_i, face_j)``: ``face_len`` is the node
    distance, ``face_area`` the dual face measure and ``face_area1`` its
    habitat part.
    """

    spec: DomainSpec
    coords: np.ndarray
    weights: np.ndarray
    habitat_weights: np.ndarray
    refuge_mask: np.ndarray
    face_i: np.ndarray
    face_j: np.ndarray
    face_len: np.ndarray
    face_area: np.ndarray
    face_area1: np.ndarray
    spacing: tuple[float, ...]
    shape: tuple[int, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("coords", "weights", "habitat_weights", "refuge_mask", "face_i",
                     "face_j", "face_len", "face_area", "face_area1"):
            getattr(self, name).setflags(write=False)

    @property
    def ndim(self) -> int:
        return self.coords.shape[1]

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def idx0(self) -> np.ndarray:
        return self._memo("idx0", lambda: np.flatnonzero(self.refuge_mask))

    @property
    def idx1(self) -> np.ndarray:
        return self._memo("idx1", lambda: np.flatnonzero(~self.refuge_mask))

    @property
    def n0(self) -> int:
        return self.idx0.size

    @property
    def n1(self) -> int:
        return self.idx1.size

    @property
    def indicator(self) -> np.ndarray:
        """Habitat indicator on Omega: the habitat share of each dual box."""
        def build():
            ind = self.habitat_weights / self.weights
            ind.setflags(write=False)
            return ind
        return self._memo("indicator", build)

    @property
    def interface_nodes(self) -> np.ndarray:
        """Nodes on the refuge boundary (fractional indicator)."""
        ind = self.indicator
        return self._memo(
            "interface_nodes", lambda: np.flatnonzero((ind > 0) & (ind < 1))
        )

    @property
    def interface(self) -> np.ndarray:
        """(K, 2) array of (refuge node, boundary node) neighbour pairs."""
        def build():
            r_i = self.refuge_mask[self.face_i]
            r_j = self.refuge_mask[self.face_j]
            cross = r_i != r_j
            fi, fj = self.face_i[cross], self.face_j[cross]
            left = r_i[cross]
            return np.column_stack([np.where(left, fi, fj), np.where(left, fj, fi)])
        return self._memo("interface", build)

    @property
    def h(self) -> float:
        return max(self.spacing)

    def _memo(self, key, factory):
        try:
            return self._cache[key]
        except KeyError:
            val = self._cache[key] = factory()
            return val

    def region_size(self, region: Region) -> int:
        region = Region(region)
        if region is Region.OMEGA:
            return self.n
        return self.n0 if region is Region.REFUGE else self.n1

    def region_index(self, region: Region) -> np.ndarray:
        region = Region(region)
        if region is Region.OMEGA:
            return self._memo("idx", lambda: np.arange(self.n))
        return self.idx0 if region is Region.REFUGE else self.idx1

    def region_weights(self, region: Region) -> np.ndarray:
        """Quadrature weights for fields living on ``region``."""
        region = Region(region)
        if region is Region.HABITAT:
            return self._memo("w1", lambda: self.habitat_weights[self.idx1])
        return self.weights[self.region_index(region)]

    def restrict(self, values: np.ndarray, region: Region) -> np.ndarray:
        """Restrict an Omega array to the nodes of a subregion."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n:
            raise RegionMismatch("restrict expects an array on Omega")
        return values[self.region_index(region)]

    def extend(self, values: np.ndarray, region: Region = Region.HABITAT) -> np.ndarray:
        """Extend a subregion array to Omega by zero."""
        values = np.asarray(values, dtype=float)
        idx = self.region_index(region)
        if values.shape[0] != idx.size:
            raise RegionMismatch("extend: length does not match region")
        out = np.zeros(self.n)
        out[idx] = values
        return out

    def field(self, region: Region, values) -> "Field":
        region = Region(region)
        arr = np.array(values, dtype=float)
        if arr.ndim == 0:
            arr = np.full(self.region_size(region), float(arr))
        if arr.shape != (self.region_size(region),):
            raise RegionMismatch(
                f"{arr.size} values given for region {region.value} "
                f"with {self.region_size(region)} nodes"
            )
        return Field(region, arr)

    def mean(self, values, region: Region) -> float:
        w = self.region_weights(region)
        return float(w @ np.asarray(values, dtype=float) / w.sum())

    def checksum(self) -> str:
        import hashlib

        m = hashlib.sha256()
        for arr in (self.coords, self.weights, self.habitat_weights,
                    self.refuge_mask.astype(np.uint8)):
            m.update(np.ascontiguousarray(arr).tobytes())
        return m.hexdigest()[:16]

    def to_json(self, path=None) -> str:
        """Debug dump; also written to ``path`` when given."""
        payload = {
            "spec": self.spec.to_dict(),
            "shape": list(self.shape),
            "spacing": list(self.spacing),
            "measures": list(measures(self)),
            "coords": self.coords.tolist(),
            "weights": self.weights.tolist(),
            "habitat_weights": self.habitat_weights.tolist(),
            "refuge": self.refuge_mask.astype(int).tolist(),
            "interface": self.interface.tolist(),
        }
        text = json.dumps(payload)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on one region. Arithmetic is only allowed within a region."""

    region: Region
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "region", Region(self.region))
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1:
            raise RegionMismatch("field values must be one-dimensional")
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def _other(self, other):
        if isinstance(other, Field):
            if other.region is not self.region:
                raise RegionMismatch(
                    f"cannot combine {self.region.value} and {other.region.value} fields"
                )
            return other.values
        if np.isscalar(other):
            return other
        raise TypeError("Field arithmetic needs a Field or a scalar")

    def __add__(self, other):
        return Field(self.region, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.region, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.region, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.region, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.region, self.values / self._other(other))

    def __neg__(self):
        return Field(self.region, -self.values)


def as_values(grid: Grid, f, region: Region | None = None) -> tuple[np.ndarray, Region]:
    """Return ``(values, region)`` for a Field, or an array with explicit region."""
    if isinstance(f, Field):
        if region is not None and Region(region) is not f.region:
            raise RegionMismatch(
                f"expected a {Region(region).value} field, got {f.region.value}"
            )
        if f.values.size != grid.region_size(f.region):
            raise RegionMismatch("field length does not match grid region")
        return f.values, f.region
    if region is None:
        raise RegionMismatch("plain arrays need an explicit region")
    region = Region(region)
    arr = np.asarray(f, dtype=float)
    if arr.shape != (grid.region_size(region),):
        raise RegionMismatch(
            f"array of shape {arr.shape} does not match region {region.value}"
        )
    return arr, region


def _ring_grid(spec: DomainSpec) -> Grid:
    (n,) = spec.resolution
    C = spec.circumference
    length = spec.refuge_length
    if not C > 0:
        raise GeometryError("circumference must be positive")
    if length <= 0:
        raise EmptyRefuge("refuge arc must have positive length")
    if length >= C:
        raise RefugeTouchesBoundary("refuge arc must be shorter than the circumference")
    # interval k joins node k and node k+1; the refuge intervals come first
    widths = _split_axis([0.0, length, C], n, mins=(2, 2), sub=spec.subdivision)
    n = widths.size
    n_ref = int(np.sum(np.cumsum(widths) <= length * (1 + 1e-12)))
    habitat = np.arange(n) >= n_ref
    start = spec.refuge_start * C / (2 * math.pi)
    pos = np.concatenate([[0.0], np.cumsum(widths)[:-1]])
    coords = np.mod(start + pos, C)[:, None]
    prev = np.roll(np.arange(n), 1)
    weights = (widths[prev] + widths) / 2
    habitat_w = (widths[prev] * habitat[prev] + widths * habitat) / 2
    fi = np.arange(n)
    return Grid(
        spec=spec,
        coords=coords,
        weights=weights,
        habitat_weights=habitat_w,
        refuge_mask=habitat_w == 0,
        face_i=fi,
        face_j=(fi + 1) % n,
        face_len=widths.copy(),
        face_area=np.ones(n),
        face_area1=habitat.astype(float),
        spacing=(float(widths.max()),),
        shape=(n,),
    )


def _pad(a, axis):
    width = [(0, 0)] * a.ndim
    width[axis] = (1, 1)
    return np.pad(a, width)


def _rect_grid(spec: DomainSpec) -> Grid:
    nx, ny = spec.resolution
    (ox0, ox1), (oy0, oy1) = spec.outer
    (hx0, hx1), (hy0, hy1) = spec.hole
    if not (ox0 < ox1 and oy0 < oy1):
        raise GeometryError("outer box must have positive extents")
    if not (hx0 < hx1 and hy0 < hy1):
        raise EmptyRefuge("hole must have positive extents")
    if not (ox0 < hx0 and hx1 < ox1 and oy0 < hy0 and hy1 < oy1):
        raise RefugeTouchesBoundary("hole closure must lie strictly inside the box")
    sub = spec.subdivision
    wx = _split_axis([ox0, hx0, hx1, ox1], nx - 1, mins=(1, 2, 1), sub=sub)
    wy = _split_axis([oy0, hy0, hy1, oy1], ny - 1, mins=(1, 2, 1), sub=sub)
    nx, ny = wx.size + 1, wy.size + 1
    x = np.concatenate([[ox0], ox0 + np.cumsum(wx)])
    y = np.concatenate([[oy0], oy0 + np.cumsum(wy)])
    x[-1], y[-1] = ox1, oy1
    X, Y = np.meshgrid(x, y, indexing="ij")
    coords = np.column_stack([X.ravel(), Y.ravel()])

    cx, cy = (x[:-1] + x[1:]) / 2, (y[:-1] + y[1:]) / 2
    refuge_cell = ((cx[:, None] > hx0) & (cx[:, None] < hx1)
                   & (cy[None, :] > hy0) & (cy[None, :] < hy1))
    hab_cell = (~refuge_cell).astype(float)
    area = np.outer(wx, wy)

    def to_nodes(cellvals):
        p = _pad(_pad(cellvals, 0), 1)
        return ((p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:]) / 4).ravel()

    weights = to_nodes(area)
    habitat_w = to_nodes(area * hab_cell)

    idx = np.arange(nx * ny).reshape(nx, ny)
    # x-edges (i,j)-(i+1,j): dual face spans half of the cells below and above
    wyp = np.concatenate([[0.0], wy, [0.0]]) / 2
    hx = _pad(hab_cell, 1)
    ax = np.broadcast_to(wyp[:-1] + wyp[1:], (nx - 1, ny))
    ax1 = hx[:, :-1] * wyp[:-1] + hx[:, 1:] * wyp[1:]
    lx = np.broadcast_to(wx[:, None], (nx - 1, ny))
    # y-edges (i,j)-(i,j+1)
    wxp = np.concatenate([[0.0], wx, [0.0]]) / 2
    hy = _pad(hab_cell, 0)
    ay = np.broadcast_to((wxp[:-1] + wxp[1:])[:, None], (nx, ny - 1))
    ay1 = hy[:-1, :] * wxp[:-1, None] + hy[1:, :] * wxp[1:, None]
    ly = np.broadcast_to(wy[None, :], (nx, ny - 1))
    return Grid(
        spec=spec,
        coords=coords,
        weights=weights,
        habitat_weights=habitat_w,
        refuge_mask=habitat_w == 0,
        face_i=np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()]),
        face_j=np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()]),
        face_len=np.concatenate([lx.ravel(), ly.ravel()]),
        face_area=np.concatenate([ax.ravel(), ay.ravel()]),
        face_area1=np.concatenate([ax1.ravel(), ay1.ravel()]),
        spacing=(float(wx.max()), float(wy.max())),
        shape=(nx, ny),
    )


def _habitat_connected(grid: Grid) -> bool:
    idx1 = grid.idx1
    if idx1.size == 0:
        return False
    keep = grid.face_area1 > 0
    adj: dict[int, list[int]] = {int(i): [] for i in idx1}
    for a, b in zip(grid.face_i[keep], grid.face_j[keep]):
        adj[int(a)].append(int(b))
        adj[int(b)].append(int(a))
    seen = {int(idx1[0])}
    queue = deque(seen)
    while queue:
        k = queue.popleft()
        for m in adj[k]:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return len(seen) == idx1.size


def build_grid(spec: DomainSpec) -> Grid:
    """Build the grid for ``spec``.

    Raises
    ------
    RefugeTouchesBoundary
        The refuge closure is not contained in the domain.
    DisconnectedComplement
        The habitat splits into several components.
    """
    if any(n < MIN_RESOLUTION for n in spec.resolution):
        raise GeometryError(f"resolution must be >= {MIN_RESOLUTION} nodes per axis")
    if spec.kind == "ring1d":
        if len(spec.resolution) != 1:
            raise GeometryError("ring1d takes a single resolution")
        grid = _ring_grid(spec)
    elif spec.kind == "rect2d_with_hole":
        if len(spec.resolution) != 2:
            raise GeometryError("rect2d_with_hole takes two resolutions")
        grid = _rect_grid(spec)
    else:
        raise GeometryError(f"unknown domain kind {spec.kind!r}")
    if grid.n0 == 0:
        raise EmptyRefuge("refuge contains no nodes")
    if not _habitat_connected(grid):
        raise DisconnectedComplement("habitat Omega1 is not connected")
    if grid.interface.shape[0] == 0:
        raise GeometryError("refuge has no interface with the habitat")
    return grid


def measures(grid: Grid) -> tuple[float, float, float]:
    """(|Omega|, |Omega0|, |Omega1|) from the dual-box volumes."""
    total = math.fsum(grid.weights)
    habitat = math.fsum(grid.habitat_weights)
    refuge = math.fsum(grid.weights - grid.habitat_weights)
    return total, refuge, habitat


def integrate(grid: Grid, f, region: Region | None = None) -> float:
    """Quadrature of a field over its own region."""
    values, region = as_values(grid, f, region)
    return float(grid.region_weights(region) @ values)
