"""Site potentials: tapered Morse pair interaction and a toy EAM variant.

Both potentials map a site's neighbor difference vectors to a scalar site
energy and per-neighbor analytic gradients.  Pair terms carry a 1/2 factor
at the site level so that summing site energies over a lattice gives the
total energy without double counting bonds.

All radial helpers (`pair_value`, `density_value`, ...) are vectorized over
arbitrarily shaped distance arrays so callers can batch over sites or over
quadrature points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

A_NOMINAL = float(np.sqrt(2.0))  # lattice constant with unit nearest-neighbor distance


class CoincidentSitesError(ValueError):
    """Raised when a neighbor difference vector has (near-)zero length."""


@dataclass(frozen=True)
class TaperWindow:
    """C2-smooth cutoff window: 1 on [0, r_taper], 0 at cutoff.

    The transition uses the quintic 1 - (6 t^5 - 15 t^4 + 10 t^3), which has
    vanishing first and second derivatives at both ends.
    """

    r_taper: float
    cutoff: float

    def __post_init__(self):
        if self.r_taper >= self.cutoff:
            raise ValueError(
                f"taper start {self.r_taper} must be below cutoff {self.cutoff}"
            )

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        t = np.clip((r - self.r_taper) / (self.cutoff - self.r_taper), 0.0, 1.0)
        return 1.0 - t**3 * (10.0 + t * (-15.0 + 6.0 * t))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        w = self.cutoff - self.r_taper
        t = np.clip((r - self.r_taper) / w, 0.0, 1.0)
        return -30.0 * t**2 * (1.0 - t) ** 2 / w


def make_taper(r_taper: float, cutoff: float) -> TaperWindow:
    return TaperWindow(r_taper, cutoff)


@dataclass(frozen=True)
class MorsePair:
    """Tapered Morse pair potential.

    phi(r) = exp(-2 alpha (r - r_nn)) - 2 exp(-alpha (r - r_nn)), scaled by
    the taper window.  The minimum phi(r_nn) = -1 sits at the nearest-neighbor
    distance of the nominal lattice.
    """

    alpha: float = 4.4
    r_nn: float = 1.0
    cutoff: float = 1.4 * A_NOMINAL
    r_taper: float = 1.2 * A_NOMINAL

    kind = "morse_pair"
    has_embedding = False

    @property
    def taper(self) -> TaperWindow:
        return TaperWindow(self.r_taper, self.cutoff)

    # -- radial pieces (vectorized, taper included) --

    def pair_value(self, r):
        r = np.asarray(r, dtype=float)
        e = np.exp(-self.alpha * (r - self.r_nn))
        return np.where(r < self.cutoff, (e * e - 2.0 * e) * self.taper(r), 0.0)

    def pair_derivative(self, r):
        r = np.asarray(r, dtype=float)
        e = np.exp(-self.alpha * (r - self.r_nn))
        phi = e * e - 2.0 * e
        dphi = -2.0 * self.alpha * (e * e - e)
        tap = self.taper
        return np.where(r < self.cutoff, dphi * tap(r) + phi * tap.derivative(r), 0.0)

    # -- embedding hooks; the pair potential has none --

    def density_value(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def density_derivative(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def embed(self, rho):
        return np.zeros_like(np.asarray(rho, dtype=float))

    def embed_derivative(self, rho):
        return np.zeros_like(np.asarray(rho, dtype=float))


@dataclass(frozen=True)
class ToyEAM(MorsePair):
    """Morse pair part plus a -sqrt(host density) embedding term.

    Host density is the tapered sum of psi(r) = exp(-2 beta_e (r - r_nn))
    over neighbors; the embedding of an empty neighborhood is defined as 0.
    """

    beta_e: float = 8.8  # default 2 * alpha

    kind = "toy_eam"
    has_embedding = True

    def density_value(self, r):
        r = np.asarray(r, dtype=float)
        psi = np.exp(-2.0 * self.beta_e * (r - self.r_nn))
        return np.where(r < self.cutoff, psi * self.taper(r), 0.0)

    def density_derivative(self, r):
        r = np.asarray(r, dtype=float)
        psi = np.exp(-2.0 * self.beta_e * (r - self.r_nn))
        dpsi = -2.0 * self.beta_e * psi
        tap = self.taper
        return np.where(r < self.cutoff, dpsi * tap(r) + psi * tap.derivative(r), 0.0)

    def embed(self, rho):
        rho = np.asarray(rho, dtype=float)
        return -np.sqrt(np.maximum(rho, 0.0))

    def embed_derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        pos = rho > 0.0
        np.divide(-0.5, np.sqrt(rho, where=pos, out=np.ones_like(rho)), where=pos, out=out)
        return out


def make_potential(kind: str, **params) -> MorsePair:
    if kind == "morse_pair":
        return MorsePair(**params)
    if kind == "toy_eam":
        if "beta_e" not in params:
            params["beta_e"] = 2.0 * params.get("alpha", 4.4)
        return ToyEAM(**params)
    raise ValueError(f"unknown potential kind {kind!r}")


def _distances(neighbors):
    nb = np.asarray(neighbors, dtype=float)
    if nb.ndim < 2 or nb.shape[-1] != 3:
        raise ValueError("neighbors must have shape (..., n, 3)")
    d = np.linalg.norm(nb, axis=-1)
    if np.any(d < 1e-10):
        raise CoincidentSitesError("coincident sites: zero-length neighbor vector")
    return nb, d


def site_energy(pot: MorsePair, neighbors) -> float | np.ndarray:
    """Energy of one site given its neighbor difference vectors (..., n, 3)."""
    nb = np.asarray(neighbors, dtype=float)
    if nb.shape[-2] == 0:
        return np.zeros(nb.shape[:-2])[()] if nb.ndim > 2 else 0.0
    nb, d = _distances(nb)
    e = 0.5 * np.sum(pot.pair_value(d), axis=-1)
    if pot.has_embedding:
        e = e + pot.embed(np.sum(pot.density_value(d), axis=-1))
    return e[()] if np.ndim(e) == 0 else e


def site_gradient(pot: MorsePair, neighbors) -> np.ndarray:
    """Per-neighbor gradients dE/dr of the site energy, shape (..., n, 3)."""
    nb = np.asarray(neighbors, dtype=float)
    if nb.shape[-2] == 0:
        return np.zeros_like(nb)
    nb, d = _distances(nb)
    coeff = 0.5 * pot.pair_derivative(d)
    if pot.has_embedding:
        rho = np.sum(pot.density_value(d), axis=-1, keepdims=True)
        coeff = coeff + pot.embed_derivative(rho) * pot.density_derivative(d)
    return coeff[..., None] * (nb / d[..., None])
