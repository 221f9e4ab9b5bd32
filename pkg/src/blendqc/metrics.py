"""Error measures against the pure-atomistic reference.

The energy-norm error sums squared differences of displacement jumps over
nearest-neighbor bonds inside a comparison ball, so clamp-boundary artifacts
stay out of the comparison and rigid translations are invisible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import PointOutsideMeshError


@dataclass
class ErrorReport:
    model: str
    r0: float
    ndof: int
    err_grad: float
    err_energy: float
    ghost_force_norm: float
    iterations: int
    wall_time_seconds: float

    def __post_init__(self):
        if self.ndof <= 0:
            raise ValueError("DOF count must be positive")
        for name in ("err_grad", "err_energy", "ghost_force_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def discrete_energy_norm_error(model, x_approx, ref_model, x_ref,
                               comparison_radius: float) -> float:
    """Energy-seminorm distance between two solutions on NN bonds.

    Both displacements are evaluated at the reference lattice sites inside
    ``comparison_radius``; the approximate model interpolates through its
    mesh where it has no site of its own.
    """
    ref_lat = ref_model.lattice
    pos = ref_lat.positions
    r = np.linalg.norm(pos, axis=1)
    inside = np.where(r <= comparison_radius)[0]
    if inside.size == 0:
        return 0.0
    inside_set = np.zeros(ref_lat.n_sites, dtype=bool)
    inside_set[inside] = True

    u_ref = ref_model.displacement_at_sites(x_ref)
    try:
        u_app = model.displacement_at_sites(x_approx, pos[inside])
    except PointOutsideMeshError as exc:
        raise ValueError("domain mismatch: reference site not covered by "
                         "the approximate model") from exc
    # map reference site index -> row in u_app
    row = np.full(ref_lat.n_sites, -1, dtype=np.int64)
    row[inside] = np.arange(inside.size)

    nn_cut = ref_lat.lattice_constant / np.sqrt(2.0) * 1.1
    tree = cKDTree(pos[inside])
    pairs = tree.query_pairs(nn_cut, output_type="ndarray")
    if pairs.size == 0:
        return 0.0
    gi = inside[pairs[:, 0]]
    gj = inside[pairs[:, 1]]
    d_ref = u_ref[gj] - u_ref[gi]
    d_app = u_app[row[gj]] - u_app[row[gi]]
    diff = d_app - d_ref
    return float(np.sqrt(np.einsum("ij,ij->", diff, diff)))


def defect_energy(model, x_solved) -> float:
    """Energy released by relaxation, E(u) - E(0), in the model's own functional."""
    return float(model.energy(x_solved) - model.energy(model.zero_displacement()))


def fit_convergence_slope(points) -> float:
    """Least-squares slope of log(error) against log(DOF)."""
    pts = [(float(n), float(e)) for n, e in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(e <= 0.0 for _, e in pts):
        raise ValueError("degenerate point: error must be positive")
    logn = np.log([n for n, _ in pts])
    loge = np.log([e for _, e in pts])
    slope, _ = np.polyfit(logn, loge, 1)
    return float(slope)
