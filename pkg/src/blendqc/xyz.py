"""Extended XYZ writer for atomic configurations with per-site fields."""

from __future__ import annotations

import numpy as np

from .lattice import FLAG_NAMES


def write_extended_xyz(path, positions, displacements=None, beta=None,
                       flags=None, comment="", species="Cu"):
    """Write one frame with columns pos(3), disp(3), beta(1), flag(1).

    Missing fields default to zeros / "unset" so every file carries the full
    column set and stays parseable by the same reader.
    """
    pos = np.asarray(positions, float)
    n = len(pos)
    disp = np.zeros((n, 3)) if displacements is None else np.asarray(displacements, float)
    bet = np.zeros(n) if beta is None else np.asarray(beta, float)
    if flags is None:
        names = ["unset"] * n
    else:
        names = [FLAG_NAMES.get(int(f), str(int(f))) for f in flags]
    if disp.shape != (n, 3) or bet.shape != (n,) or len(names) != n:
        raise ValueError("field lengths do not match positions")
    props = "species:S:1:pos:R:3:disp:R:3:beta:R:1:flag:S:1"
    with open(path, "w") as fh:
        fh.write(f"{n}\n")
        fh.write(f'Properties={props} Comment="{comment}"\n')
        for i in range(n):
            x, y, z = pos[i]
            dx, dy, dz = disp[i]
            fh.write(f"{species} {x:.12g} {y:.12g} {z:.12g} "
                     f"{dx:.12g} {dy:.12g} {dz:.12g} {bet[i]:.12g} {names[i]}\n")


def read_extended_xyz(path):
    """Read back one frame written by write_extended_xyz (for round-trips)."""
    with open(path) as fh:
        n = int(fh.readline())
        fh.readline()
        pos = np.empty((n, 3))
        disp = np.empty((n, 3))
        beta = np.empty(n)
        flags = []
        for i in range(n):
            parts = fh.readline().split()
            pos[i] = [float(v) for v in parts[1:4]]
            disp[i] = [float(v) for v in parts[4:7]]
            beta[i] = float(parts[7])
            flags.append(parts[8])
    return pos, disp, beta, flags
