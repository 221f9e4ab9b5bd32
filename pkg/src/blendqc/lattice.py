"""Finite FCC reference configurations, point defects, and neighbor lists.

Sites are generated from the 4-site conventional cell so every position is
an exact multiple of a/2.  Site ordering is lexicographic by cell index and
basis index, which makes runs reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

# site flag codes
FLAG_UNSET = -1
FLAG_CORE = 0
FLAG_BLEND = 1
FLAG_FAR = 2
FLAG_CLAMPED = 3

FLAG_NAMES = {FLAG_UNSET: "unset", FLAG_CORE: "core", FLAG_BLEND: "blend",
              FLAG_FAR: "far", FLAG_CLAMPED: "clamped"}

_FCC_BASIS = np.array([[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]])  # units of a/2


class DomainTooSmallError(ValueError):
    pass


class DefectError(ValueError):
    pass


@dataclass(frozen=True)
class DefectSpec:
    """Point-defect descriptor applied near the origin.

    kind: one of none, vacancy, divacancy, interstitial, microcrack.
    crack_sites: number of collinear [110] sites removed for a microcrack.
    core_radius: declared radius r_def containing every modification; if
    None it is derived from the modified sites.
    """

    kind: str = "none"
    crack_sites: int = 3
    core_radius: float | None = None

    KINDS = ("none", "vacancy", "divacancy", "interstitial", "microcrack")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DefectError(f"unknown defect kind {self.kind!r}")
        if self.kind == "microcrack" and self.crack_sites < 1:
            raise DefectError("microcrack needs at least one removed site")


@dataclass
class DefectedLattice:
    """Reference FCC site set with optional defect and cutoff adjacency.

    ``half_coords`` holds positions in exact units of a/2 (integers), the
    float ``positions`` are derived from them.  Adjacency is stored as a
    CSR neighbor list plus the equivalent directed pair arrays.
    """

    lattice_constant: float
    ball_radius: float
    half_coords: np.ndarray          # (N, 3) int
    defect: DefectSpec = field(default_factory=DefectSpec)
    defect_core_radius: float = 0.0
    cutoff: float | None = None
    site_flags: np.ndarray | None = None
    # adjacency (set by build_adjacency)
    nbr_ptr: np.ndarray | None = None   # (N+1,)
    nbr_idx: np.ndarray | None = None   # (n_directed,)

    def __post_init__(self):
        if self.site_flags is None:
            self.site_flags = np.full(len(self.half_coords), FLAG_UNSET, dtype=np.int8)

    @property
    def n_sites(self) -> int:
        return len(self.half_coords)

    @property
    def positions(self) -> np.ndarray:
        return self.half_coords * (0.5 * self.lattice_constant)

    @property
    def nn_distance(self) -> float:
        return self.lattice_constant / np.sqrt(2.0)

    def neighbors(self, i: int):
        """Neighbor indices and reference difference vectors of site i."""
        if self.nbr_ptr is None:
            raise ValueError("adjacency not built; call build_adjacency first")
        idx = self.nbr_idx[self.nbr_ptr[i]:self.nbr_ptr[i + 1]]
        pos = self.positions
        return idx, pos[idx] - pos[i]

    def directed_bonds(self):
        """(src, dst) arrays listing every adjacency entry once per direction."""
        if self.nbr_ptr is None:
            raise ValueError("adjacency not built; call build_adjacency first")
        counts = np.diff(self.nbr_ptr)
        src = np.repeat(np.arange(self.n_sites), counts)
        return src, self.nbr_idx


def build_fcc_ball(lattice_constant: float, radius: float) -> DefectedLattice:
    """All FCC sites of the conventional-cell lattice with |x| <= radius."""
    if radius < 2.0 * lattice_constant:
        raise DomainTooSmallError(
            f"domain below minimum: radius {radius} < 2 a = {2 * lattice_constant}"
        )
    a = lattice_constant
    nmax = int(np.floor(radius / a)) + 1
    rng = np.arange(-nmax, nmax + 1)
    # lexicographic by (cell i, j, k) then basis index
    ci, cj, ck = np.meshgrid(rng, rng, rng, indexing="ij")
    cells = np.stack([ci, cj, ck], axis=-1).reshape(-1, 1, 3)
    half = (2 * cells + _FCC_BASIS[None, :, :]).reshape(-1, 3)
    r2 = np.sum(half * half, axis=1) * (0.25 * a * a)
    half = half[r2 <= radius * radius + 1e-12]
    return DefectedLattice(lattice_constant=a, ball_radius=radius,
                           half_coords=np.ascontiguousarray(half))


def _find_site(lat: DefectedLattice, half: np.ndarray) -> int:
    match = np.all(lat.half_coords == np.asarray(half), axis=1)
    hits = np.nonzero(match)[0]
    return int(hits[0]) if len(hits) else -1


def apply_defect(lat: DefectedLattice, spec: DefectSpec) -> DefectedLattice:
    """Return a new lattice with the defect applied near the origin.

    Must be called before build_adjacency; removed sites therefore never
    appear in any adjacency list.
    """
    if lat.nbr_ptr is not None:
        lat = replace(lat, nbr_ptr=None, nbr_idx=None)
    a = lat.lattice_constant
    if spec.kind == "none":
        return replace(lat, defect=spec, defect_core_radius=0.0)

    removed: list[np.ndarray] = []
    added: list[np.ndarray] = []
    if spec.kind == "vacancy":
        removed = [np.array([0, 0, 0])]
    elif spec.kind == "divacancy":
        removed = [np.array([0, 0, 0]), np.array([0, 1, 1])]
    elif spec.kind == "interstitial":
        added = [np.array([1, 0, 0])]  # octahedral hole (a/2, 0, 0)
    elif spec.kind == "microcrack":
        k = spec.crack_sites
        lo = -((k - 1) // 2)
        removed = [np.array([m, m, 0]) for m in range(lo, lo + k)]

    modified = removed + added
    r_mod = max(0.5 * a * float(np.linalg.norm(h)) for h in modified)
    r_def = r_mod + lat.nn_distance
    if spec.core_radius is not None:
        if r_mod > spec.core_radius:
            raise DefectError(
                f"defect kind {spec.kind!r} extends to radius {r_mod:.4g}, "
                f"beyond declared core radius {spec.core_radius:.4g}"
            )
        r_def = spec.core_radius

    keep = np.ones(lat.n_sites, dtype=bool)
    for h in removed:
        i = _find_site(lat, h)
        if i < 0:
            raise DefectError(f"defect site {h.tolist()} not present in lattice")
        keep[i] = False
    half = lat.half_coords[keep]
    for h in added:
        if _find_site(replace(lat, half_coords=half), h) >= 0:
            raise DefectError("interstitial insertion collides with existing site")
        half = np.vstack([half, h[None, :]])
    return replace(lat, half_coords=np.ascontiguousarray(half), defect=spec,
                   defect_core_radius=r_def,
                   site_flags=np.full(len(half), FLAG_UNSET, dtype=np.int8))


def build_adjacency(lat: DefectedLattice, cutoff: float) -> DefectedLattice:
    """Attach a symmetric neighbor list for all pairs within the cutoff."""
    if cutoff < lat.nn_distance:
        raise ValueError(
            f"cutoff {cutoff} below nearest-neighbor distance {lat.nn_distance}"
        )
    pos = lat.positions
    tree = cKDTree(pos)
    pairs = tree.query_pairs(cutoff, output_type="ndarray").astype(np.int32)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    del pairs
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    ptr = np.zeros(lat.n_sites + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    np.cumsum(ptr, out=ptr)
    return replace(lat, cutoff=float(cutoff), nbr_ptr=ptr, nbr_idx=dst)


def assign_site_flags(lat: DefectedLattice, r0: float, r1: float) -> None:
    """Set core/blend/far flags by radius; clamped within one cutoff of the
    outer boundary.  Mutates lat.site_flags in place."""
    r = np.linalg.norm(lat.positions, axis=1)
    flags = np.full(lat.n_sites, FLAG_FAR, dtype=np.int8)
    flags[r < r1] = FLAG_BLEND
    flags[r < r0] = FLAG_CORE
    if lat.cutoff is not None:
        flags[r > lat.ball_radius - lat.cutoff] = FLAG_CLAMPED
    lat.site_flags = flags
