"""Hexagonal 57-cell grid with three-sector sites and toroidal wrap-around.

Geometry follows the reference urban micro-cell layout: 19 sites, each a
three-sector base station sitting on the shared vertex of its three
hexagonal cells.  Cell ids run 1..57 in the printed numbering of the
reference figure; all arrays are indexed by ``cell_id - 1``.

Internally a position is mapped onto the infinite hexagonal tiling.  Hex
centres form the lattice spanned by ``h1 = (2a, 0)`` and ``h2 = (a, 1.5R)``
(``R`` the hexagon circumradius, ``a = R*sqrt(3)/2`` the apothem).  The
wrap-around lattice is the index-57 sublattice spanned by ``7*h1 + h2`` and
``h1 - 8*h2``, so ``(8*i + j) mod 57`` labels the cell of hex ``(i, j)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_CELLS = 57
N_SITES = 19

# Sector boresights (degrees) and the frequency each sector uses.
SECTOR_BORESIGHT_DEG = (30.0, 150.0, 270.0)
SECTOR_FREQUENCY = (1, 2, 3)

# Reference layout transcribed from the figure.  Entries are
# (cell_id, x, y) with x in units of the apothem and y in units of R/2,
# measured from the top of the drawing.
_FIGURE_CELLS = (
    (1, 1, -12), (2, -1, -12), (3, 0, -15), (4, 4, -9), (5, 2, -9), (6, 3, -12),
    (7, 1, -6), (8, -1, -6), (9, 0, -9), (10, -2, -9), (11, -4, -9), (12, -3, -12),
    (13, -2, -15), (14, -4, -15), (15, -3, -18), (16, 1, -18), (17, -1, -18),
    (18, 0, -21), (19, 4, -15), (20, 2, -15), (21, 3, -18), (22, 7, -12),
    (23, 5, -12), (24, 6, -15), (25, 4, -3), (26, 2, -3), (27, 3, -6), (28, -2, -3),
    (29, -4, -3), (30, -3, -6), (31, -5, -12), (32, -7, -12), (33, -6, -15),
    (34, -2, -21), (35, -4, -21), (36, -3, -24), (37, 4, -21), (38, 2, -21),
    (39, 3, -24), (40, 7, -6), (41, 5, -6), (42, 6, -9), (43, 1, 0), (44, -1, 0),
    (45, 0, -3), (46, -5, -6), (47, -7, -6), (48, -6, -9), (49, -5, -18),
    (50, -7, -18), (51, -6, -21), (52, 1, -24), (53, -1, -24), (54, 0, -27),
    (55, 7, -18), (56, 5, -18), (57, 6, -21),
)
# The central site of the figure sits at (0, -13); it becomes the origin.
_FIGURE_ORIGIN = (0, -13)

# Sublattice generators expressed in hex-lattice coordinates (h1, h2).
_WRAP_GENERATORS = ((7, 1), (1, -8))
_RESIDUE_COEF = (8, 1)

_TIE_TOL = 1e-9


@dataclass(frozen=True)
class CellGeom:
    id: int
    cluster_id: int
    bs_position: tuple[float, float]
    sector_boresight: float
    frequency: int
    cochannel_neighbors: tuple[int, ...]
    center: tuple[float, float]


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable cell layout plus the array views the simulator kernels use."""

    inter_station_distance: float
    cells: list[CellGeom]
    clusters: list[tuple[tuple[float, float], tuple[int, int, int]]]
    # array views, row k describes cell k + 1
    centers: np.ndarray = field(repr=False)
    bs_positions: np.ndarray = field(repr=False)
    boresights: np.ndarray = field(repr=False)
    frequencies: np.ndarray = field(repr=False)
    cochannel: np.ndarray = field(repr=False)
    edge_neighbors: np.ndarray = field(repr=False)
    lattice: np.ndarray = field(repr=False)
    _hex_basis: np.ndarray = field(repr=False)
    _hex_origin: np.ndarray = field(repr=False)
    _residue_cell: np.ndarray = field(repr=False)

    @property
    def radius(self) -> float:
        """Hexagon circumradius (ISD / 3)."""
        return self.inter_station_distance / 3.0

    @property
    def apothem(self) -> float:
        return self.radius * math.sqrt(3.0) / 2.0

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def cell_area(self) -> float:
        return 1.5 * math.sqrt(3.0) * self.radius**2

    @property
    def domain_area(self) -> float:
        return abs(float(np.linalg.det(self.lattice)))

    @property
    def bounding_region(self) -> np.ndarray:
        """Lattice vectors (rows) whose translations tile the plane with the domain."""
        return self.lattice

    def cell(self, cell_id: int) -> CellGeom:
        return self.cells[cell_id - 1]

    def hexagon(self, cell_id: int) -> np.ndarray:
        """Vertices of a cell polygon, counter-clockwise from 30 degrees."""
        ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
        c = self.centers[cell_id - 1]
        return c + self.radius * np.column_stack([np.cos(ang), np.sin(ang)])


def build_grid(isd: float = 200.0) -> Grid:
    if not isd > 0:
        raise ValueError(f"inter-station distance must be positive, got {isd}")
    R = isd / 3.0
    a = R * math.sqrt(3.0) / 2.0
    fx0, fy0 = _FIGURE_ORIGIN

    centers = np.zeros((N_CELLS, 2))
    for cid, fx, fy in _FIGURE_CELLS:
        centers[cid - 1] = ((fx - fx0) * a, (fy - fy0) * R / 2.0)

    # cells 3k+1..3k+3 share a site; sector order follows SECTOR_BORESIGHT_DEG
    boresights = np.zeros(N_CELLS)
    frequencies = np.zeros(N_CELLS, dtype=np.int64)
    bs_positions = np.zeros((N_CELLS, 2))
    clusters = []
    for k in range(N_SITES):
        members = (3 * k + 1, 3 * k + 2, 3 * k + 3)
        sites = []
        for sector, cid in enumerate(members):
            phi = math.radians(SECTOR_BORESIGHT_DEG[sector])
            boresights[cid - 1] = phi
            frequencies[cid - 1] = SECTOR_FREQUENCY[sector]
            sites.append(centers[cid - 1] - R * np.array([math.cos(phi), math.sin(phi)]))
        if not np.allclose(sites, sites[0], atol=1e-9 * isd):
            raise AssertionError(f"cluster {k + 1} members do not share a site")
        bs = np.round(np.mean(sites, axis=0), 9)
        bs_positions[list(m - 1 for m in members)] = bs
        clusters.append(((float(bs[0]), float(bs[1])), members))

    hex_basis = np.array([[2.0 * a, 0.0], [a, 1.5 * R]])
    lattice = np.array([
        _WRAP_GENERATORS[0][0] * hex_basis[0] + _WRAP_GENERATORS[0][1] * hex_basis[1],
        _WRAP_GENERATORS[1][0] * hex_basis[0] + _WRAP_GENERATORS[1][1] * hex_basis[1],
    ])
    hex_origin = centers[0].copy()
    residue_cell = np.full(N_CELLS, -1, dtype=np.int64)
    inv = np.linalg.inv(hex_basis.T)
    for k in range(N_CELLS):
        ij = np.rint(inv @ (centers[k] - hex_origin)).astype(np.int64)
        res = (_RESIDUE_COEF[0] * ij[0] + _RESIDUE_COEF[1] * ij[1]) % N_CELLS
        if residue_cell[res] != -1:
            raise AssertionError("two cells share a wrap-around residue")
        residue_cell[res] = k + 1

    partial = Grid(
        inter_station_distance=float(isd), cells=[], clusters=clusters,
        centers=centers, bs_positions=bs_positions, boresights=boresights,
        frequencies=frequencies, cochannel=np.zeros((N_CELLS, 6), dtype=np.int64),
        edge_neighbors=np.zeros((N_CELLS, 6), dtype=np.int64), lattice=lattice,
        _hex_basis=hex_basis, _hex_origin=hex_origin, _residue_cell=residue_cell,
    )

    site_dirs = np.deg2rad(30.0 + 60.0 * np.arange(6))
    edge_dirs = np.deg2rad(60.0 * np.arange(6))
    cochannel = np.zeros((N_CELLS, 6), dtype=np.int64)
    edge_neighbors = np.zeros((N_CELLS, 6), dtype=np.int64)
    for k in range(N_CELLS):
        pts = centers[k] + isd * np.column_stack([np.cos(site_dirs), np.sin(site_dirs)])
        cochannel[k] = locate_cell(pts, partial)
        pts = centers[k] + 2.0 * a * np.column_stack([np.cos(edge_dirs), np.sin(edge_dirs)])
        edge_neighbors[k] = locate_cell(pts, partial)

    cells = [
        CellGeom(
            id=k + 1,
            cluster_id=k // 3 + 1,
            bs_position=(float(bs_positions[k, 0]), float(bs_positions[k, 1])),
            sector_boresight=float(boresights[k]),
            frequency=int(frequencies[k]),
            cochannel_neighbors=tuple(int(c) for c in cochannel[k]),
            center=(float(centers[k, 0]), float(centers[k, 1])),
        )
        for k in range(N_CELLS)
    ]
    return Grid(
        inter_station_distance=float(isd), cells=cells, clusters=clusters,
        centers=centers, bs_positions=bs_positions, boresights=boresights,
        frequencies=frequencies, cochannel=cochannel, edge_neighbors=edge_neighbors,
        lattice=lattice, _hex_basis=hex_basis, _hex_origin=hex_origin,
        _residue_cell=residue_cell,
    )


def _nearest_hex(p: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Hex-lattice point containing each position and the cell id it maps to.

    Boundary points go to the candidate with the lowest cell id.
    """
    p = np.asarray(p, dtype=float)
    flat = p.reshape(-1, 2)
    inv = np.linalg.inv(grid._hex_basis.T)
    frac = (flat - grid._hex_origin) @ inv.T
    base = np.floor(frac).astype(np.int64)
    best_ij = np.zeros_like(base)
    best_id = np.full(len(flat), np.iinfo(np.int64).max)
    best_d = np.full(len(flat), np.inf)
    tol = _TIE_TOL * grid.radius
    # the nearest lattice point is a corner of the enclosing basis cell
    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
        ij = base + np.array([di, dj])
        ctr = grid._hex_origin + ij @ grid._hex_basis
        d = np.hypot(*(flat - ctr).T)
        res = (_RESIDUE_COEF[0] * ij[:, 0] + _RESIDUE_COEF[1] * ij[:, 1]) % N_CELLS
        cid = grid._residue_cell[res]
        closer = d < best_d - tol
        tie = (np.abs(d - best_d) <= tol) & (cid < best_id)
        take = closer | tie
        best_d = np.where(take, np.minimum(d, best_d), best_d)
        best_id = np.where(take, cid, best_id)
        best_ij[take] = ij[take]
    shape = p.shape[:-1]
    return best_ij.reshape(shape + (2,)), best_id.reshape(shape)


def locate_cell(p, grid: Grid):
    """Cell id (1..57) containing each position, after wrap-around."""
    _, cid = _nearest_hex(p, grid)
    return int(cid) if np.ndim(cid) == 0 else cid


def wrap(p, grid: Grid) -> np.ndarray:
    """Translate positions by lattice vectors into the 57-cell domain."""
    p = np.asarray(p, dtype=float)
    ij, cid = _nearest_hex(p, grid)
    hex_ctr = grid._hex_origin + ij @ grid._hex_basis
    return p - hex_ctr + grid.centers[cid - 1]


def in_domain(p, grid: Grid, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.all(np.abs(wrap(p, grid) - p) <= tol * grid.inter_station_distance, axis=-1)


def wrapped_displacement(a, b, grid: Grid) -> np.ndarray:
    """Shortest ``b - a`` over all wrap-around translations."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    flat = d.reshape(-1, 2)
    L = grid.lattice
    coef = flat @ np.linalg.inv(L)
    flat = flat - np.rint(coef) @ L
    best = flat.copy()
    best_n = np.hypot(*flat.T)
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            if i == 0 and j == 0:
                continue
            cand = flat + i * L[0] + j * L[1]
            n = np.hypot(*cand.T)
            better = n < best_n
            best[better] = cand[better]
            best_n = np.minimum(n, best_n)
    return best.reshape(d.shape)


def sample_in_cell(cell_id, n: int, grid: Grid, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions inside a cell (or one per entry of an id array)."""
    ids = np.broadcast_to(np.asarray(cell_id), (n,)) if np.ndim(cell_id) == 0 else np.asarray(cell_id)
    n = len(ids)
    out = np.empty((n, 2))
    todo = np.arange(n)
    R, a = grid.radius, grid.apothem
    normals = np.column_stack([np.cos(np.deg2rad(60.0 * np.arange(6))),
                               np.sin(np.deg2rad(60.0 * np.arange(6)))])
    while len(todo):
        cand = rng.uniform([-a, -R], [a, R], size=(len(todo), 2))
        ok = np.all(cand @ normals.T <= a, axis=1)
        out[todo[ok]] = cand[ok] + grid.centers[ids[todo[ok]] - 1]
        todo = todo[~ok]
    return out


def dump_csv(grid: Grid, path) -> None:
    """Write the frequency plan, one row per cell, plus polygon vertices."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "cluster_id", "bs_x", "bs_y", "boresight_rad", "freq"]
                   + [f"v{k}_{ax}" for k in range(6) for ax in "xy"])
        for c in grid.cells:
            verts = grid.hexagon(c.id).ravel()
            w.writerow([c.id, c.cluster_id, repr(c.bs_position[0]), repr(c.bs_position[1]),
                        repr(c.sector_boresight), c.frequency] + [repr(float(v)) for v in verts])
