"""Rank-3 and rank-2 point lattices: enumeration, duals, reduced bases.

Bases are stored as row vectors (``basis[i]`` is the i-th generator). All
enumeration is complete within the requested radius: the integer coefficient
box is derived from the dual basis, so no vector inside the ball is missed,
and the output order is the lexicographic order of the integer coefficients,
which makes every result deterministic.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

DEFAULT_POINT_CAP = 10_000_000
POINT_CAP_ENV = "FLATSPEC_POINT_CAP"

# Relative slack used when testing |v| <= R so that boundary vectors are not
# dropped to floating-point dust.
_BOUNDARY_SLACK = 1e-12


class EnumerationCapError(RuntimeError):
    """An enumeration would materialize more points than the configured cap."""


def point_cap() -> int:
    """Active enumeration cap: FLATSPEC_POINT_CAP env var or the default 1e7."""
    raw = os.environ.get(POINT_CAP_ENV)
    if raw is None:
        return DEFAULT_POINT_CAP
    try:
        value = int(float(raw))
    except ValueError as exc:
        raise ValueError(f"{POINT_CAP_ENV} must be a number, got {raw!r}") from exc
    if value <= 0:
        raise ValueError(f"{POINT_CAP_ENV} must be positive, got {value}")
    return value


class Lattice3:
    """A rank-3 lattice given by three basis row vectors, with cached Gram.

    If a precomputed Gram matrix is supplied it is checked against the basis
    at absolute tolerance 1e-12 (relative to the squared length scale).
    """

    __slots__ = ("basis", "gram")

    def __init__(self, basis, gram=None):
        B = np.array(basis, dtype=float)
        if B.shape != (3, 3):
            raise ValueError(f"basis must be 3x3, got shape {B.shape}")
        if not np.all(np.isfinite(B)):
            raise ValueError("basis entries must be finite")
        G = B @ B.T
        scale2 = float(np.max(np.abs(G)))
        if scale2 <= 0.0 or abs(np.linalg.det(B)) <= 1e-12 * scale2 ** 1.5:
            raise ValueError("basis is degenerate")
        if gram is not None:
            G_in = np.asarray(gram, dtype=float)
            if G_in.shape != (3, 3) or np.max(np.abs(G_in - G)) > 1e-12 * scale2:
                raise ValueError("supplied Gram matrix is inconsistent with basis")
            G = G_in
        B.setflags(write=False)
        G.setflags(write=False)
        self.basis = B
        self.gram = G

    def covolume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    def __repr__(self):
        return f"Lattice3({self.basis.tolist()})"


@dataclass(frozen=True)
class PlaneLattice:
    """A rank-2 lattice as (first length, second length, angle in radians)."""

    s1: float
    s2: float
    angle: float

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0):
            raise ValueError("plane lattice lengths must be positive")
        if not (0.0 < self.angle < math.pi):
            raise ValueError("plane lattice angle must lie in (0, pi)")

    def basis(self) -> np.ndarray:
        return np.array(
            [
                [self.s1, 0.0],
                [self.s2 * math.cos(self.angle), self.s2 * math.sin(self.angle)],
            ]
        )

    def area(self) -> float:
        return self.s1 * self.s2 * math.sin(self.angle)


def dual(lat: Lattice3) -> Lattice3:
    """Dual lattice: generators b_j with <a_i, b_j> = delta_ij."""
    return Lattice3(np.linalg.inv(np.asarray(lat.basis)).T)


def _coefficient_box(basis: np.ndarray, radius: float) -> np.ndarray:
    # m = v @ B^-1, so |m_i| <= radius * ||column i of B^-1||.
    Binv = np.linalg.inv(basis)
    bounds = radius * np.linalg.norm(Binv, axis=0)
    return np.floor(bounds + 1e-9).astype(int)


_SLAB_POINTS = 2_000_000


def enumerate_within(lat: Lattice3 | np.ndarray, radius: float, cap: int | None = None) -> np.ndarray:
    """All lattice vectors v with |v| <= radius, zero included.

    Returns an (n, 3) float array ordered lexicographically by the integer
    coefficients with respect to the given basis. Raises EnumerationCapError
    when the ball is expected to hold more than ``cap`` points (or when a
    badly skewed basis makes the coefficient box hopeless to scan). Large
    boxes are scanned in slabs so peak memory stays bounded.
    """
    basis = lat.basis if isinstance(lat, Lattice3) else np.asarray(lat, dtype=float)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if cap is None:
        cap = point_cap()
    k = _coefficient_box(basis, radius)
    count = (2 * k[0] + 1) * (2 * k[1] + 1) * (2 * k[2] + 1)
    covol = abs(float(np.linalg.det(basis)))
    ball = (4.0 * math.pi / 3.0) * radius**3 / covol + 8.0
    if min(count, ball) > cap or count > 64 * cap:
        raise EnumerationCapError(
            f"about {min(count, ball):.3g} lattice points within radius "
            f"{radius:.3g} exceeds cap {cap}"
        )
    axes = [np.arange(-int(ki), int(ki) + 1) for ki in k]
    r2cut = radius * radius * (1.0 + _BOUNDARY_SLACK)
    per_slab = (2 * k[1] + 1) * (2 * k[2] + 1)
    step = max(1, _SLAB_POINTS // max(per_slab, 1))
    chunks = []
    for start in range(0, axes[0].size, step):
        coeffs = np.stack(
            np.meshgrid(axes[0][start : start + step], axes[1], axes[2], indexing="ij"),
            axis=-1,
        ).reshape(-1, 3)
        pts = coeffs @ basis
        d2 = np.einsum("ij,ij->i", pts, pts)
        chunks.append(pts[d2 <= r2cut])
    return np.concatenate(chunks) if len(chunks) > 1 else chunks[0]


def enumerate_shifted_plane(
    basis2: np.ndarray, d1: float, d2: float, radius: float, cap: int | None = None
) -> np.ndarray:
    """All points (m+d1) b1 + (n+d2) b2 with norm <= radius, lex order in (m, n)."""
    B = np.asarray(basis2, dtype=float)
    if cap is None:
        cap = point_cap()
    Binv = np.linalg.inv(B)
    bounds = radius * np.linalg.norm(Binv, axis=0)
    lo = [math.floor(-b - d + 1e-9) for b, d in zip(bounds, (d1, d2))]
    hi = [math.ceil(b - d + 1e-9) for b, d in zip(bounds, (d1, d2))]
    count = (hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1)
    if count > cap:
        raise EnumerationCapError(
            f"enumeration box of {count} points exceeds cap {cap}"
        )
    ms = np.arange(lo[0], hi[0] + 1, dtype=float) + d1
    ns = np.arange(lo[1], hi[1] + 1, dtype=float) + d2
    coeffs = np.stack(np.meshgrid(ms, ns, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = coeffs @ B
    n2 = np.einsum("ij,ij->i", pts, pts)
    keep = n2 <= radius * radius * (1.0 + _BOUNDARY_SLACK)
    return pts[keep]


def reduce_plane(plane: PlaneLattice) -> PlaneLattice:
    """Gauss (Lagrange) reduction of a rank-2 lattice.

    The reduced triple satisfies 0 < s1 <= s2 and |cos angle| <= s1/(2 s2),
    with the representative chosen so that the angle lies in [pi/3, pi/2]
    (ties broken toward angle <= pi/2 by flipping the second generator).
    """
    u = np.array([plane.s1, 0.0])
    v = plane.s2 * np.array([math.cos(plane.angle), math.sin(plane.angle)])
    if np.dot(u, u) > np.dot(v, v):
        u, v = v, u
    for _ in range(256):
        k = round(float(np.dot(u, v) / np.dot(u, u)))
        v = v - k * u
        if np.dot(v, v) >= np.dot(u, u):
            break
        u, v = v, u
    else:
        raise RuntimeError("plane reduction did not terminate")
    s1 = math.sqrt(float(np.dot(u, u)))
    s2 = math.sqrt(float(np.dot(v, v)))
    c = float(np.dot(u, v)) / (s1 * s2)
    c = min(1.0, max(-1.0, abs(c)))  # angle <= pi/2 representative
    return PlaneLattice(s1, s2, math.acos(c))


def _pair_reduce(b: np.ndarray, i: int, j: int) -> bool:
    """Shorten b[j] modulo b[i]; returns True if b[j] changed."""
    k = round(float(np.dot(b[i], b[j]) / np.dot(b[i], b[i])))
    if k != 0:
        b[j] = b[j] - k * b[i]
        return True
    return False


def _reduce_basis3(basis: np.ndarray) -> np.ndarray:
    """Greedy Minkowski reduction of a rank-3 basis (rows), exact in rank 3.

    Iterates: sort by length, size-reduce each vector against the shorter
    ones, then replace the longest vector by its closest lattice point in the
    sublattice of the first two (small integer search, sufficient after size
    reduction). Terminates when no change shortens anything.
    """
    b = np.array(basis, dtype=float)
    for _ in range(256):
        changed = False
        order = np.argsort(np.einsum("ij,ij->i", b, b), kind="stable")
        b = b[order]
        if order.tolist() != [0, 1, 2]:
            changed = True
        for i in range(3):
            for j in range(3):
                if i < j and _pair_reduce(b, i, j):
                    changed = True
        # closest-vector polish for the last vector over the first two
        best = float(np.dot(b[2], b[2]))
        best_mn = (0, 0)
        for m in range(-2, 3):
            for n in range(-2, 3):
                cand = b[2] - m * b[0] - n * b[1]
                v = float(np.dot(cand, cand))
                if v < best * (1 - 1e-15):
                    best = v
                    best_mn = (m, n)
        if best_mn != (0, 0):
            b[2] = b[2] - best_mn[0] * b[0] - best_mn[1] * b[1]
            changed = True
        if not changed:
            return b
    raise RuntimeError("rank-3 reduction did not terminate")


def _canonical_gram(G: np.ndarray) -> np.ndarray:
    """Deterministic representative of a reduced Gram matrix.

    Reduced bases are unique only up to permutations of equal-length vectors
    and sign flips; pick the lexicographically largest off-diagonal triple
    (g12, g13, g23) over all diagonal-preserving permutations and flips.
    """
    diag = np.diag(G)
    perms = [
        p
        for p in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
        if all(diag[p[i]] <= diag[p[i + 1]] * (1 + 1e-12) for i in range(2))
    ]
    best = None
    for p in perms:
        P = G[np.ix_(p, p)]
        for s1 in (1, -1):
            for s2 in (1, -1):
                for s3 in (1, -1):
                    s = np.array([s1, s2, s3], dtype=float)
                    C = P * np.outer(s, s)
                    key = (C[0, 1], C[0, 2], C[1, 2])
                    if best is None or key > best[0]:
                        best = (key, C)
    return best[1]


def reduce_gram(gram: np.ndarray) -> np.ndarray:
    """Minkowski-reduced Gram matrix with ascending diagonal, canonical signs."""
    G = np.asarray(gram, dtype=float)
    if G.shape != (3, 3) or np.max(np.abs(G - G.T)) > 1e-12 * max(1.0, np.max(np.abs(G))):
        raise ValueError("gram must be a symmetric 3x3 matrix")
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ValueError("gram must be positive definite") from exc
    b = _reduce_basis3(L)
    R = b @ b.T
    return _canonical_gram(R)


def shortest_norm(lat: Lattice3) -> float:
    """Length of a shortest nonzero lattice vector."""
    b = _reduce_basis3(lat.basis)
    return math.sqrt(float(np.dot(b[0], b[0])))


def shortest_plane_norm(basis2: np.ndarray) -> float:
    B = np.asarray(basis2, dtype=float)
    s1 = math.sqrt(float(np.dot(B[0], B[0])))
    s2 = math.sqrt(float(np.dot(B[1], B[1])))
    dot = float(np.dot(B[0], B[1]))
    ang = math.acos(min(1.0, max(-1.0, dot / (s1 * s2))))
    red = reduce_plane(PlaneLattice(s1, s2, ang))
    return red.s1
