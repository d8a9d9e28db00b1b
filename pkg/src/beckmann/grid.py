"""Uniform cell-centred grids, staggered (face-centred) fluxes and the exact
gradient/divergence pair.

Layout
------
Scalars live on cell centres, an array of shape ``dims``.  A flux holds one
array of shape ``dims`` per axis; entry ``i`` along axis ``d`` is the face
between cells ``i`` and ``i + 1``.  With ``boundary="neumann"`` the last face
along each axis is the wall and is held at zero, as is the (implicit) wall
face in front of cell 0.

The gradient is the forward difference across each face and the divergence
is the backward difference, so ``<grad u, w> = -<u, div w>`` holds exactly in
floating point up to summation order.

Cell-wise vector gradients are reconstructed with ``2**n`` one-sided
stencils: for every axis a stencil picks either the face after the cell or
the one before it.  Each stencil alone has only constants in its kernel,
which keeps checkerboard modes out of the discrete energy.
"""
from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

BOUNDARIES = ("periodic", "neumann")
_MAGIC = b"BKMF"


@dataclass(frozen=True)
class GridDomain:
    dims: tuple
    spacing: float
    boundary: str = "periodic"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) not in (2, 3):
            raise ValueError(f"only 2 or 3 dimensions are supported, got {len(self.dims)}")
        if min(self.dims) < 16:
            raise ValueError(f"need at least 16 cells per axis, got {self.dims}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @classmethod
    def unit(cls, cells: int, n: int = 2, boundary: str = "periodic") -> "GridDomain":
        """``cells**n`` grid on the unit box."""
        return cls((cells,) * n, 1.0 / cells, boundary)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def extent(self) -> tuple:
        return tuple(d * self.spacing for d in self.dims)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.ndim

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def centers(self) -> list:
        """Cell-centre coordinate arrays, ``indexing='ij'``."""
        axes = [(np.arange(d) + 0.5) * self.spacing for d in self.dims]
        return list(np.meshgrid(*axes, indexing="ij"))

    def face_centers(self, axis: int) -> list:
        """Coordinates of the faces carrying flux component ``axis``."""
        xs = self.centers()
        xs[axis] = xs[axis] + 0.5 * self.spacing
        return xs

    def inner(self, a, b) -> float:
        """Discrete L2 inner product of two cell fields (or stacks of them)."""
        return float(self.cell_volume * np.sum(np.asarray(a) * np.asarray(b)))


@dataclass
class ScalarField:
    values: np.ndarray
    domain: GridDomain

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.dims:
            raise ValueError(f"values shape {self.values.shape} != dims {self.domain.dims}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")

    def mean(self) -> float:
        return float(np.mean(self.values))

    def zero_mean(self) -> "ScalarField":
        return ScalarField(self.values - self.values.mean(), self.domain)

    def norm(self) -> float:
        return float(np.sqrt(self.domain.inner(self.values, self.values)))


@dataclass
class FluxField:
    """Face-centred vector field.

    ``cells`` optionally carries the cell-wise flux vectors of every one-sided
    stencil, shape ``(2**n, *dims, n)``; when present they are the primal
    variable whose stencil average produces the face components.
    """

    components: tuple
    domain: GridDomain
    cells: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.components = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(self.components) != self.domain.ndim:
            raise ValueError("need one component per axis")
        for c in self.components:
            if c.shape != self.domain.dims:
                raise ValueError(f"component shape {c.shape} != dims {self.domain.dims}")

    @classmethod
    def zeros(cls, domain: GridDomain) -> "FluxField":
        return cls(tuple(np.zeros(domain.dims) for _ in domain.dims), domain)

    def boundary_normal_max(self) -> float:
        """Largest normal flux on wall faces (zero for a valid Neumann field)."""
        if self.domain.periodic:
            return 0.0
        return max(float(np.abs(np.take(c, -1, axis=d)).max())
                   for d, c in enumerate(self.components))

    def norm(self) -> float:
        return float(np.sqrt(self.domain.cell_volume * sum(np.sum(c * c) for c in self.components)))


# ------------------------------------------------------------- raw stencils

def grad_faces(u: np.ndarray, h: float, periodic: bool = True) -> list:
    out = []
    for d in range(u.ndim):
        g = (np.roll(u, -1, axis=d) - u) / h
        if not periodic:
            _wall(g, d)[...] = 0.0
        out.append(g)
    return out


def div_cells(w: Sequence[np.ndarray], h: float, periodic: bool = True) -> np.ndarray:
    out = np.zeros_like(w[0])
    for d, c in enumerate(w):
        if periodic:
            out += (c - np.roll(c, 1, axis=d)) / h
        else:
            prev = np.roll(c, 1, axis=d)
            _first(prev, d)[...] = 0.0
            # wall faces carry no flux whatever the caller stored there
            cur = c.copy()
            _wall(cur, d)[...] = 0.0
            out += (cur - prev) / h
    return out


def _wall(a: np.ndarray, axis: int) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = -1
    return a[tuple(idx)]


def _first(a: np.ndarray, axis: int) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = 0
    return a[tuple(idx)]


def stencil_choices(n: int) -> list:
    """All ``2**n`` one-sided picks; 0 = face after the cell, 1 = face before."""
    return list(itertools.product((0, 1), repeat=n))


def stencil_vectors(faces: Sequence[np.ndarray], periodic: bool = True) -> np.ndarray:
    """Cell vectors of every one-sided stencil, shape ``(2**n, *dims, n)``."""
    n = len(faces)
    before = []
    for d, c in enumerate(faces):
        b = np.roll(c, 1, axis=d)
        if not periodic:
            _first(b, d)[...] = 0.0
        before.append(b)
    out = np.empty((2 ** n,) + faces[0].shape + (n,))
    for k, pick in enumerate(stencil_choices(n)):
        for d in range(n):
            out[k, ..., d] = before[d] if pick[d] else faces[d]
    return out


def stencil_average_adjoint(cells: np.ndarray, periodic: bool = True) -> list:
    """Adjoint of :func:`stencil_vectors` divided by the number of stencils.

    Maps cell vectors back to faces; applied to ``stencil_vectors(w)`` it
    returns ``w`` unchanged.
    """
    K, n = cells.shape[0], cells.shape[-1]
    after = np.zeros((n,) + cells.shape[1:-1])
    before = np.zeros_like(after)
    for k, pick in enumerate(stencil_choices(n)):
        for d in range(n):
            if pick[d]:
                before[d] += cells[k, ..., d]
            else:
                after[d] += cells[k, ..., d]
    out = []
    for d in range(n):
        w = after[d] + np.roll(before[d], -1, axis=d)
        if not periodic:
            _wall(w, d)[...] = 0.0
        out.append(w / K)
    return out


# ------------------------------------------------------------- field level

def discrete_gradient(u: ScalarField) -> FluxField:
    """Forward differences across every face."""
    dom = u.domain
    return FluxField(tuple(grad_faces(u.values, dom.spacing, dom.periodic)), dom)


def discrete_divergence(w: FluxField) -> ScalarField:
    """Backward differences; the exact negative adjoint of the gradient."""
    dom = w.domain
    return ScalarField(div_cells(w.components, dom.spacing, dom.periodic), dom)


def cell_gradients(u: ScalarField) -> np.ndarray:
    """Stencil reconstruction of ``grad u``, shape ``(2**n, *dims, n)``."""
    dom = u.domain
    return stencil_vectors(grad_faces(u.values, dom.spacing, dom.periodic), dom.periodic)


# ------------------------------------------------------------- serialization

def _header(domain: GridDomain, ncomp: int) -> bytes:
    n = domain.ndim
    return (_MAGIC + struct.pack("<i", n) + struct.pack(f"<{n}i", *domain.dims)
            + struct.pack("<d", domain.spacing)
            + struct.pack("<ii", BOUNDARIES.index(domain.boundary), ncomp))


def write_fields(path, *fields) -> None:
    """Write scalar and flux fields back to back in the flat binary layout.

    Each record is ``b"BKMF"``, ``int32 n``, ``int32 dims[n]``,
    ``float64 spacing``, ``int32 boundary`` (0 periodic, 1 neumann),
    ``int32 ncomp`` and then ``ncomp`` row-major float64 arrays, all
    little-endian.
    """
    with open(path, "wb") as fh:
        for f in fields:
            arrays = [f.values] if isinstance(f, ScalarField) else list(f.components)
            fh.write(_header(f.domain, len(arrays)))
            for a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_fields(path) -> list:
    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        if data[pos:pos + 4] != _MAGIC:
            raise ValueError(f"bad record marker at byte {pos}")
        pos += 4
        (n,) = struct.unpack_from("<i", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{n}i", data, pos)
        pos += 4 * n
        (spacing,) = struct.unpack_from("<d", data, pos)
        pos += 8
        bmode, ncomp = struct.unpack_from("<ii", data, pos)
        pos += 8
        dom = GridDomain(dims, spacing, BOUNDARIES[bmode])
        size = int(np.prod(dims))
        arrays = []
        for _ in range(ncomp):
            arrays.append(np.frombuffer(data, "<f8", size, pos).reshape(dims).copy())
            pos += 8 * size
        if ncomp == 1:
            out.append(ScalarField(arrays[0], dom))
        else:
            out.append(FluxField(tuple(arrays), dom))
    return out


def write_csv(path, f) -> None:
    """Small-grid CSV dump: one row per cell, index columns then values."""
    arrays = [f.values] if isinstance(f, ScalarField) else list(f.components)
    n = f.domain.ndim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{d}" for d in range(n)]
                   + (["value"] if len(arrays) == 1 else [f"c{d}" for d in range(n)]))
        for idx in np.ndindex(*f.domain.dims):
            w.writerow(list(idx) + [repr(float(a[idx])) for a in arrays])
