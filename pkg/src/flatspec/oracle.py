"""Independent verification oracles for the closed-form heat traces.

Two cross-checks that share no code path with the closed forms:

* ``spectrum`` builds the Laplace spectrum from the dual lattice and the
  holonomy character average, so partial eigenvalue sums bound the trace.
* ``trace_by_quadrature`` integrates the method-of-images heat kernel over a
  fundamental cell with a midpoint rule; the integrand is smooth and cell
  periodic, so the rule converges spectrally fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ManifoldDescriptor,
    fundamental_cell,
    holonomy_elements,
    translation_lattice,
    volume,
)
from .heat_trace import _tail3
from .lattice import dual, enumerate_within, shortest_norm

_MULT_DEFECT_TOL = 1e-9
_FIXED_VECTOR_TOL = 1e-9
_GROUP_GAP_TOL = 1e-9


class OracleError(RuntimeError):
    """An oracle invariant failed (non-integer multiplicity, bad geometry)."""


@dataclass(frozen=True)
class Spectrum:
    """Laplace eigenvalues with multiplicities, complete up to ``lambda_max``."""

    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    lambda_max: float
    max_defect: float
    dual_shortest: float

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        mult = np.asarray(self.multiplicities, dtype=int)
        ev.setflags(write=False)
        mult.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "multiplicities", mult)

    def __len__(self):
        return int(self.eigenvalues.size)


def spectrum(d: ManifoldDescriptor, lambda_max: float) -> Spectrum:
    """All Laplace eigenvalues <= lambda_max with exact multiplicities.

    Torus eigenvalues are 4 pi^2 |mu|^2 over the dual lattice; the quotient
    multiplicity is the holonomy average of fixed-vector characters. Each
    multiplicity must land on an integer to within 1e-9 or the oracle aborts.
    """
    if not (lambda_max >= 0.0 and math.isfinite(lambda_max)):
        raise ValueError("lambda_max must be finite and nonnegative")
    lat = translation_lattice(d)
    dl = dual(lat)
    radius = math.sqrt(lambda_max) / (2.0 * math.pi)
    pts = enumerate_within(dl, radius)
    motions = holonomy_elements(d)

    norms2 = np.einsum("ij,ij->i", pts, pts)
    lam = 4.0 * math.pi**2 * norms2
    keep = lam <= lambda_max * (1.0 + 1e-12)
    pts, lam = pts[keep], lam[keep]

    # per-point holonomy weight: sum over motions of [A mu = mu] * cos(2 pi <mu, a>)
    weights = np.zeros(lam.size)
    scale = 1.0 + np.sqrt(norms2[keep])
    for g in motions:
        A = g.rotation
        a = g.translation
        moved = pts @ A.T
        fixed = np.linalg.norm(moved - pts, axis=1) <= _FIXED_VECTOR_TOL * scale
        weights[fixed] += np.cos(2.0 * math.pi * (pts[fixed] @ a))

    order = np.argsort(lam, kind="stable")
    lam, weights = lam[order], weights[order]
    starts = [0]
    for i in range(1, lam.size):
        if lam[i] - lam[i - 1] > _GROUP_GAP_TOL * (1.0 + lam[i]):
            starts.append(i)
    sums = np.add.reduceat(weights, np.array(starts, dtype=int)) if lam.size else np.array([])
    eigenvalues = []
    multiplicities = []
    max_defect = 0.0
    for j, s in enumerate(starts):
        e = lam.size if j + 1 == len(starts) else starts[j + 1]
        m = sums[j] / len(motions)
        defect = abs(m - round(m))
        max_defect = max(max_defect, defect)
        if defect > _MULT_DEFECT_TOL:
            raise OracleError(
                f"non-integer multiplicity {m!r} at eigenvalue {lam[s]!r}"
            )
        if round(m) < 0:
            raise OracleError(f"negative multiplicity {m!r} at eigenvalue {lam[s]!r}")
        if round(m) > 0:
            eigenvalues.append(float(np.mean(lam[s:e])))
            multiplicities.append(int(round(m)))
    return Spectrum(
        eigenvalues=np.array(eigenvalues),
        multiplicities=np.array(multiplicities, dtype=int),
        lambda_max=float(lambda_max),
        max_defect=float(max_defect),
        dual_shortest=shortest_norm(dl),
    )


def partial_heat_sum(s: Spectrum, t: float) -> tuple:
    """Sum of mult * exp(-lambda t) over the stored band, with a certified
    bound on the discarded tail above ``lambda_max``."""
    if not (t > 0.0):
        raise ValueError("t must be positive")
    value = float(np.dot(s.multiplicities, np.exp(-s.eigenvalues * t)))
    # tail multiplicities are dominated by the covering torus, whose tail is
    # a dual-lattice Gaussian sum at equivalent time 1/(16 pi^2 t)
    tau = 1.0 / (16.0 * math.pi**2 * t)
    rho = 0.5 * s.dual_shortest
    radius = math.sqrt(s.lambda_max) / (2.0 * math.pi)
    return value, _tail3(rho, radius, tau)


def _grid_coordinates(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def trace_by_quadrature(d: ManifoldDescriptor, t: float, n: int = 64, radius=None) -> float:
    """Heat trace via midpoint quadrature of the method-of-images kernel.

    Averages sum_g sum_l exp(-|(I-A)x - a - l|^2 / 4t) over a fundamental
    cell. Cell directions annihilated by (I-A) drop out exactly, so each
    holonomy element integrates over at most a 2-d grid of n^2 midpoints.
    """
    if not (t > 0.0 and math.isfinite(t)):
        raise ValueError("t must be positive and finite")
    if n < 1:
        raise ValueError("n must be at least 1")
    lat = translation_lattice(d)
    cell = fundamental_cell(d)
    vol = volume(d)
    gauss_radius = 2.0 * math.sqrt(t * 42.0) if radius is None else float(radius)

    total = 0.0
    for g in holonomy_elements(d):
        A = g.rotation
        a = g.translation
        shear = np.eye(3) - A
        mapped = cell @ shear.T  # row i is (I - A) applied to cell vector i
        active = [
            i
            for i in range(3)
            if np.linalg.norm(mapped[i]) > 1e-12 * np.linalg.norm(cell[i])
        ]
        if active:
            coords = _grid_coordinates(n)
            mesh = np.meshgrid(*([coords] * len(active)), indexing="ij")
            frac = np.stack([m.reshape(-1) for m in mesh], axis=1)
            centers = frac @ mapped[active] - a
        else:
            centers = -a[None, :]
        # max |center| over the affine image of the subcell = max over corners
        corner_frac = np.array(
            np.meshgrid(*([(0.0, 1.0)] * max(1, len(active))), indexing="ij")
        ).reshape(max(1, len(active)), -1).T
        if active:
            corners = corner_frac[:, : len(active)] @ mapped[active] - a
        else:
            corners = -a[None, :]
        max_shift = float(np.max(np.linalg.norm(corners, axis=1)))
        pts = enumerate_within(lat, max_shift + gauss_radius)
        acc = 0.0
        chunk = max(1, int(4_000_000 // max(1, pts.shape[0])))
        for lo in range(0, centers.shape[0], chunk):
            c = centers[lo : lo + chunk]
            diff = c[:, None, :] - pts[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            acc += float(np.sum(np.exp(-d2 / (4.0 * t))))
        total += acc / centers.shape[0]
    return vol / (4.0 * math.pi * t) ** 1.5 * total


def quadrature_error_estimate(d: ManifoldDescriptor, t: float, n: int = 32) -> float:
    """Self-convergence estimate |Q_n - Q_2n| for the quadrature oracle."""
    return abs(trace_by_quadrature(d, t, n) - trace_by_quadrature(d, t, 2 * n))
