"""Filtered cubical complexes on pixel grids and their 0/1-dimensional
persistence.

Pixels are the top-dimensional cells (T-construction): a square carries its
pixel value and every edge or vertex carries the minimum over the squares it
bounds. As a consequence two pixels touching only at a corner are connected
in the sublevel set (8-connectivity for components).

Cells are enumerated row-major within each dimension. Edges are numbered
horizontal first, then vertical::

    vertex (r, c)          -> r * (w + 1) + c            r <= h, c <= w
    horizontal edge (r, c) -> r * w + c                  r <= h, c <  w
    vertical edge (r, c)   -> (h + 1) * w + r * (w + 1) + c   r < h, c <= w
    square (r, c)          -> r * w + c

The filtration order is (value, dimension, index), which puts every face
before its cofaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

ESSENTIAL = math.inf


@dataclass(frozen=True, eq=False)
class FilteredCubicalComplex:
    squares: np.ndarray  # (h, w)
    hedges: np.ndarray  # (h + 1, w)
    vedges: np.ndarray  # (h, w + 1)
    vertices: np.ndarray  # (h + 1, w + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.squares.shape

    @property
    def n_vertices(self) -> int:
        return self.vertices.size

    @property
    def n_edges(self) -> int:
        return self.hedges.size + self.vedges.size

    @property
    def n_squares(self) -> int:
        return self.squares.size

    @property
    def n_cells(self) -> int:
        return self.n_vertices + self.n_edges + self.n_squares

    @cached_property
    def edge_values(self) -> np.ndarray:
        return np.concatenate([self.hedges.ravel(), self.vedges.ravel()])

    @cached_property
    def edge_vertices(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoint vertex ids (u, v) of every edge, in edge enumeration order."""
        h, w = self.shape
        r, c = np.divmod(np.arange((h + 1) * w), w)
        hu = r * (w + 1) + c
        r2, c2 = np.divmod(np.arange(h * (w + 1)), w + 1)
        vu = r2 * (w + 1) + c2
        return np.concatenate([hu, vu]), np.concatenate([hu + 1, vu + w + 1])

    @cached_property
    def edge_squares(self) -> tuple[np.ndarray, np.ndarray]:
        """The two square ids on either side of every edge.

        Boundary edges have one side on the exterior, encoded as ``h * w``.
        """
        h, w = self.shape
        ext = h * w
        r, c = np.divmod(np.arange((h + 1) * w), w)
        ha = np.where(r > 0, (r - 1) * w + c, ext)
        hb = np.where(r < h, r * w + c, ext)
        r2, c2 = np.divmod(np.arange(h * (w + 1)), w + 1)
        va = np.where(c2 > 0, r2 * w + c2 - 1, ext)
        vb = np.where(c2 < w, r2 * w + c2, ext)
        return np.concatenate([ha, va]), np.concatenate([hb, vb])

    def incidences(self):
        """Yield (face_value, coface_value) for every codimension-1 incidence."""
        vflat = self.vertices.ravel()
        ev = self.edge_values
        u, v = self.edge_vertices
        for e in range(self.n_edges):
            yield vflat[u[e]], ev[e]
            yield vflat[v[e]], ev[e]
        sflat = self.squares.ravel()
        a, b = self.edge_squares
        ext = self.n_squares
        for e in range(self.n_edges):
            for s in (a[e], b[e]):
                if s != ext:
                    yield ev[e], sflat[s]


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Birth/death pairs of one homology dimension, sorted by (birth, death).

    Essential classes have death ``ESSENTIAL`` (+inf).
    """

    dim: int
    pairs: np.ndarray  # (n, 2) float64

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 2)
        if p.size:
            p = p[np.lexsort((p[:, 1], p[:, 0]))]
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def births(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def n_essential(self) -> int:
        return int(np.isinf(self.deaths).sum())

    def as_set(self) -> list[tuple[float, float]]:
        return [(float(b), float(d)) for b, d in self.pairs]

    def __eq__(self, other):
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.pairs, other.pairs)


def build_complex(values) -> FilteredCubicalComplex:
    sq = np.asarray(values, dtype=np.float64)
    if sq.ndim != 2 or sq.size == 0:
        raise ValueError(f"need a non-empty 2D grid, got shape {sq.shape}")
    h, w = sq.shape
    pad = np.full((h + 2, w + 2), np.inf)
    pad[1:-1, 1:-1] = sq
    hedges = np.minimum(pad[: h + 1, 1:-1], pad[1:, 1:-1])
    vedges = np.minimum(pad[1:-1, : w + 1], pad[1:-1, 1:])
    vertices = np.minimum(
        np.minimum(pad[: h + 1, : w + 1], pad[: h + 1, 1:]),
        np.minimum(pad[1:, : w + 1], pad[1:, 1:]),
    )
    arrays = [np.array(a) for a in (sq, hedges, vedges, vertices)]
    for a in arrays:
        a.setflags(write=False)
    return FilteredCubicalComplex(*arrays)


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _dim0_pairs(vkey, eu, ev, evals, vvals, order):
    # vkey: forward rank of each vertex; smaller rank = older
    n = vkey.shape[0]
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    oldest = np.arange(n)
    out = np.empty((n, 2), dtype=np.float64)
    m = 0
    for e in order:
        ra = _find(parent, eu[e])
        rb = _find(parent, ev[e])
        if ra == rb:
            continue
        a = oldest[ra]
        b = oldest[rb]
        if vkey[a] < vkey[b]:
            elder, young = a, b
        else:
            elder, young = b, a
        if vvals[young] < evals[e]:
            out[m, 0] = vvals[young]
            out[m, 1] = evals[e]
            m += 1
        if size[ra] < size[rb]:
            ra, rb = rb, ra
        parent[rb] = ra
        size[ra] += size[rb]
        oldest[ra] = elder
    return out[:m]


@njit(cache=True)
def _dim1_pairs(skey, sa, sb, evals, svals, order):
    # dual union-find on squares + exterior, edges in reverse filtration order;
    # larger forward rank = born earlier in the reversed filtration = older
    n = skey.shape[0]
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    oldest = np.arange(n)
    out = np.empty((n, 2), dtype=np.float64)
    m = 0
    for i in range(order.shape[0] - 1, -1, -1):
        e = order[i]
        ra = _find(parent, sa[e])
        rb = _find(parent, sb[e])
        if ra == rb:
            continue
        a = oldest[ra]
        b = oldest[rb]
        if skey[a] > skey[b]:
            elder, young = a, b
        else:
            elder, young = b, a
        if evals[e] < svals[young]:
            out[m, 0] = evals[e]
            out[m, 1] = svals[young]
            m += 1
        if size[ra] < size[rb]:
            ra, rb = rb, ra
        parent[rb] = ra
        size[ra] += size[rb]
        oldest[ra] = elder
    return out[:m]


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank


def persistence(cx: FilteredCubicalComplex) -> tuple[PersistenceDiagram, PersistenceDiagram]:
    """0- and 1-dimensional persistence diagrams of the sublevel filtration.

    Components: union-find over vertices, edges in filtration order, elder
    rule with ties resolved by vertex index. Holes: by duality, components of
    the reversed filtration on the dual graph (squares plus one exterior
    node), where a merge pairs the edge with the younger square.
    Zero-persistence pairs are dropped.
    """
    vvals = cx.vertices.ravel()
    svals = cx.squares.ravel()
    evals = cx.edge_values
    eorder = np.argsort(evals, kind="stable")

    u, v = cx.edge_vertices
    d0 = _dim0_pairs(_ranks(vvals), u, v, evals, vvals, eorder)
    d0 = np.vstack([d0, [[vvals.min(), ESSENTIAL]]])

    skey = np.append(_ranks(svals), svals.size)  # exterior is the oldest
    sfull = np.append(svals, np.inf)
    a, b = cx.edge_squares
    d1 = _dim1_pairs(skey, a, b, evals, sfull, eorder)
    return PersistenceDiagram(0, d0), PersistenceDiagram(1, d1)


def sublevel_persistence(values) -> tuple[PersistenceDiagram, PersistenceDiagram]:
    return persistence(build_complex(values))


def betti_at(values, t: float) -> tuple[int, int]:
    """Betti numbers of the sublevel subcomplex {cells with value <= t}.

    Independent of :func:`persistence`: b0 by a plain union-find over the
    present vertices and edges, b1 from the Euler characteristic.
    """
    cx = build_complex(values)
    vmask = cx.vertices.ravel() <= t
    emask = cx.edge_values <= t
    n_v, n_e = int(vmask.sum()), int(emask.sum())
    n_s = int((cx.squares <= t).sum())
    if n_v == 0:
        return 0, 0
    parent = {int(i): int(i) for i in np.flatnonzero(vmask)}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    components = n_v
    u, v = cx.edge_vertices
    for e in np.flatnonzero(emask):
        ra, rb = find(int(u[e])), find(int(v[e]))
        if ra != rb:
            parent[ra] = rb
            components -= 1
    euler = n_v - n_e + n_s
    return components, components - euler


def format_diagrams(diagrams) -> str:
    """One ``dim birth death`` line per pair; essential deaths print as ``inf``."""
    lines = []
    for dgm in diagrams:
        for b, d in dgm.pairs:
            lines.append(f"{dgm.dim} {float(b)!r} {'inf' if math.isinf(d) else repr(float(d))}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_diagrams(text: str) -> tuple[PersistenceDiagram, PersistenceDiagram]:
    rows: dict[int, list[tuple[float, float]]] = {0: [], 1: []}
    for line in text.splitlines():
        if not line.strip():
            continue
        dim, b, d = line.split()
        rows[int(dim)].append((float(b), float(d)))
    return PersistenceDiagram(0, rows[0]), PersistenceDiagram(1, rows[1])
