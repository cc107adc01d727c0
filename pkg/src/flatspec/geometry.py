"""The ten closed flat 3-manifolds: parameters, lattices, holonomy, isometry.

Each manifold class is an orbit space R^3 / G where G is generated by the
translation lattice plus at most three extra rigid motions. Classes are named
M1..M6 (orientable) and N1..N4 (non-orientable). M1 is the torus; its covers
of the other classes are recorded in COVERING_EDGES.

Descriptors are value objects: a class name plus a flat parameter mapping.
All functions in the package take descriptors, so geometry stays in one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Lattice3, PlaneLattice, reduce_gram, reduce_plane

CLASS_NAMES = ("M1", "M2", "M3", "M4", "M5", "M6", "N1", "N2", "N3", "N4")

ORIENTABLE = {"M1", "M2", "M3", "M4", "M5", "M6"}

PARAM_KEYS = {
    "M1": ("basis",),
    "M2": ("l1", "l2", "l3", "angle_rad"),
    "M3": ("l1", "l"),
    "M4": ("l1", "l"),
    "M5": ("l1", "l"),
    "M6": ("l1", "l2", "l3"),
    "N1": ("l1", "l2", "angle_rad", "l3"),
    "N2": ("l1", "l2", "angle_rad", "height"),
    "N3": ("l1", "l2", "l3"),
    "N4": ("l1", "l2", "l3"),
}

# Fold counts of the direct covers: the torus covers M2..M5, N1, N2 directly
# and M2 covers the three classes whose holonomy contains its half-turn.
HOLONOMY_ORDER = {
    "M1": 1, "M2": 2, "M3": 3, "M4": 4, "M5": 6, "M6": 4,
    "N1": 2, "N2": 2, "N3": 4, "N4": 4,
}


class ValidationError(ValueError):
    """Descriptor parameters are malformed or out of range."""


class ManifoldDescriptor:
    """Immutable (class name, parameters) pair identifying one flat manifold."""

    __slots__ = ("class_name", "params", "_key")

    def __init__(self, class_name: str, params: dict):
        object.__setattr__(self, "class_name", class_name)
        object.__setattr__(self, "params", dict(params))
        key = (class_name, tuple((k, self.params[k]) for k in sorted(self.params)))
        object.__setattr__(self, "_key", key)

    def __setattr__(self, name, value):
        raise AttributeError("ManifoldDescriptor is immutable")

    def __eq__(self, other):
        return isinstance(other, ManifoldDescriptor) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self._key[1])
        return f"descriptor({self.class_name!r}, {inner})"


def _as_basis_tuple(value) -> tuple:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != 9 or not np.all(np.isfinite(arr)):
        raise ValidationError("basis must be 9 finite numbers (rows concatenated)")
    return tuple(float(x) for x in arr)


def descriptor(class_name: str, **params) -> ManifoldDescriptor:
    """Build and validate a manifold descriptor.

    M1 takes ``basis`` (3x3 nested or 9 flat numbers, rows concatenated);
    the other classes take positive lengths, plus ``angle_rad`` in (0, pi)
    for M2/N1/N2 and ``height`` for N2.
    """
    if class_name not in PARAM_KEYS:
        raise ValidationError(f"unknown manifold class {class_name!r}")
    keys = PARAM_KEYS[class_name]
    if set(params) != set(keys):
        raise ValidationError(
            f"{class_name} needs parameters {sorted(keys)}, got {sorted(params)}"
        )
    clean = {}
    for k in keys:
        if k == "basis":
            clean[k] = _as_basis_tuple(params[k])
            continue
        try:
            v = float(params[k])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"parameter {k} must be a number") from exc
        if not math.isfinite(v):
            raise ValidationError(f"parameter {k} must be finite")
        if k == "angle_rad":
            if not (0.0 < v < math.pi):
                raise ValidationError("angle_rad must lie strictly between 0 and pi")
        elif v <= 0.0:
            raise ValidationError(f"parameter {k} must be positive")
        clean[k] = v
    d = ManifoldDescriptor(class_name, clean)
    try:
        translation_lattice(d)
    except ValueError as exc:
        raise ValidationError(f"degenerate basis: {exc}") from exc
    return d


def validate(d: ManifoldDescriptor) -> ManifoldDescriptor:
    """Re-run all descriptor checks; raises ValidationError on failure."""
    descriptor(d.class_name, **d.params)
    return d


def from_dict(obj) -> ManifoldDescriptor:
    """Parse the wire form {"class": name, "params": {...}}."""
    if not isinstance(obj, dict):
        raise ValidationError("descriptor must be a JSON object")
    try:
        name = obj["class"]
        params = obj["params"]
    except (KeyError, TypeError) as exc:
        raise ValidationError('descriptor needs "class" and "params" fields') from exc
    if not isinstance(params, dict):
        raise ValidationError('"params" must be an object')
    return descriptor(name, **params)


def as_dict(d: ManifoldDescriptor) -> dict:
    params = {}
    for k in PARAM_KEYS[d.class_name]:
        v = d.params[k]
        params[k] = list(v) if isinstance(v, tuple) else v
    return {"class": d.class_name, "params": params}


def _rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class RigidMotion:
    """Euclidean motion x -> rot @ x + trans with orthogonal rot."""

    rot: tuple
    trans: tuple

    @staticmethod
    def of(rot, trans) -> "RigidMotion":
        R = np.asarray(rot, dtype=float)
        t = np.asarray(trans, dtype=float)
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-12:
            raise ValueError("rotation part must be orthogonal")
        if abs(abs(np.linalg.det(R)) - 1.0) > 1e-12:
            raise ValueError("rotation part must have determinant +-1")
        return RigidMotion(tuple(map(tuple, R)), tuple(t))

    @property
    def rotation(self) -> np.ndarray:
        return np.array(self.rot)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.trans)

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.rotation.T + self.translation

    def preserves_orientation(self) -> bool:
        return np.linalg.det(self.rotation) > 0


def translation_lattice(d: ManifoldDescriptor) -> Lattice3:
    """The full translation lattice of the manifold's motion group."""
    p = d.params
    name = d.class_name
    if name == "M1":
        return Lattice3(np.array(p["basis"]).reshape(3, 3))
    if name == "M2":
        phi = p["angle_rad"]
        return Lattice3(
            [
                [p["l1"], 0.0, 0.0],
                [0.0, p["l2"], 0.0],
                [0.0, p["l3"] * math.cos(phi), p["l3"] * math.sin(phi)],
            ]
        )
    if name in ("M3", "M5"):
        l = p["l"]
        return Lattice3(
            [
                [p["l1"], 0.0, 0.0],
                [0.0, l, 0.0],
                [0.0, -l / 2.0, l * math.sqrt(3.0) / 2.0],
            ]
        )
    if name == "M4":
        return Lattice3([[p["l1"], 0, 0], [0, p["l"], 0], [0, 0, p["l"]]])
    if name in ("M6", "N3", "N4"):
        return Lattice3(np.diag([p["l1"], p["l2"], p["l3"]]))
    phi = p["angle_rad"]
    a1 = [p["l1"], 0.0, 0.0]
    a2 = [p["l2"] * math.cos(phi), p["l2"] * math.sin(phi), 0.0]
    if name == "N1":
        return Lattice3([a1, a2, [0.0, 0.0, p["l3"]]])
    if name == "N2":
        a3 = [(a1[0] + a2[0]) / 2.0, a2[1] / 2.0, p["height"]]
        return Lattice3([a1, a2, a3])
    raise ValidationError(f"unknown manifold class {name!r}")


def holonomy_elements(d: ManifoldDescriptor) -> tuple:
    """Coset representatives of the point group, identity first.

    Each motion g satisfies g . L . g^-1 = L for the translation lattice L,
    and the returned list maps bijectively onto the holonomy group.
    """
    p = d.params
    name = d.class_name
    ident = RigidMotion.of(np.eye(3), (0.0, 0.0, 0.0))
    if name == "M1":
        return (ident,)
    if name in ("M2", "M3", "M4", "M5"):
        order = HOLONOMY_ORDER[name]
        out = [ident]
        for k in range(1, order):
            out.append(
                RigidMotion.of(
                    _rot_x(2.0 * math.pi * k / order),
                    (k * p["l1"] / order, 0.0, 0.0),
                )
            )
        return tuple(out)
    if name == "M6":
        l1, l2, l3 = p["l1"], p["l2"], p["l3"]
        return (
            ident,
            RigidMotion.of(np.diag([1.0, -1.0, -1.0]), (l1 / 2, 0.0, 0.0)),
            RigidMotion.of(np.diag([-1.0, 1.0, -1.0]), (0.0, l2 / 2, l3 / 2)),
            RigidMotion.of(np.diag([-1.0, -1.0, 1.0]), (l1 / 2, l2 / 2, l3 / 2)),
        )
    if name in ("N1", "N2"):
        return (
            ident,
            RigidMotion.of(np.diag([1.0, 1.0, -1.0]), (p["l1"] / 2, 0.0, 0.0)),
        )
    if name == "N3":
        l1, l2 = p["l1"], p["l2"]
        return (
            ident,
            RigidMotion.of(np.diag([1.0, -1.0, -1.0]), (l1 / 2, 0.0, 0.0)),
            RigidMotion.of(np.diag([1.0, 1.0, -1.0]), (0.0, l2 / 2, 0.0)),
            RigidMotion.of(np.diag([1.0, -1.0, 1.0]), (l1 / 2, l2 / 2, 0.0)),
        )
    if name == "N4":
        l1, l2, l3 = p["l1"], p["l2"], p["l3"]
        return (
            ident,
            RigidMotion.of(np.diag([1.0, -1.0, -1.0]), (l1 / 2, 0.0, 0.0)),
            RigidMotion.of(np.diag([1.0, 1.0, -1.0]), (0.0, l2 / 2, l3 / 2)),
            RigidMotion.of(np.diag([1.0, -1.0, 1.0]), (l1 / 2, l2 / 2, l3 / 2)),
        )
    raise ValidationError(f"unknown manifold class {name!r}")


def holonomy_order(d: ManifoldDescriptor) -> int:
    return HOLONOMY_ORDER[d.class_name]


def volume(d: ManifoldDescriptor) -> float:
    """Riemannian volume: lattice covolume over the holonomy order."""
    return translation_lattice(d).covolume() / HOLONOMY_ORDER[d.class_name]


def is_orientable(d: ManifoldDescriptor) -> bool:
    return d.class_name in ORIENTABLE


_CELL_FRACTIONS = {
    "M1": (1.0, 1.0, 1.0),
    "M2": (0.5, 1.0, 1.0),
    "M3": (1.0 / 3.0, 1.0, 1.0),
    "M4": (0.25, 1.0, 1.0),
    "M5": (1.0 / 6.0, 1.0, 1.0),
    "M6": (0.5, 0.5, 1.0),
    "N1": (0.5, 1.0, 1.0),
    "N2": (0.5, 1.0, 1.0),
    "N3": (0.5, 0.5, 1.0),
    "N4": (0.5, 0.5, 1.0),
}


def fundamental_cell(d: ManifoldDescriptor) -> np.ndarray:
    """Rows spanning a parallelepiped fundamental domain of the motion group.

    The box {s1 c1 + s2 c2 + s3 c3 : s in [0,1)^3} has the manifold's volume
    and tiles space under the group, so averaging a group-invariant function
    over it equals the average over the manifold.
    """
    cell = translation_lattice(d).basis.copy()
    for i, f in enumerate(_CELL_FRACTIONS[d.class_name]):
        cell[i] *= f
    return cell


def scale(d: ManifoldDescriptor, factor: float) -> ManifoldDescriptor:
    """Scale every length parameter by ``factor`` (angles unchanged)."""
    if not (factor > 0 and math.isfinite(factor)):
        raise ValidationError("scale factor must be positive and finite")
    new = {}
    for k, v in d.params.items():
        if k == "angle_rad":
            new[k] = v
        elif k == "basis":
            new[k] = tuple(factor * x for x in v)
        else:
            new[k] = factor * v
    return descriptor(d.class_name, **new)


def _ext_gcd(a: int, b: int) -> tuple:
    """Extended Euclid: (g, x, y) with a*x + b*y = g and g = gcd(a, b) >= 0."""
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return (-a, -x0, -y0) if a < 0 else (a, x0, y0)


def _half_coset_axes(s1: float, s2: float, angle: float, tag: tuple) -> tuple:
    """Shortest doubled vectors of a marked half-lattice coset.

    ``tag`` gives the coset coordinates mod 2 in the basis (a1, a2): the
    marked coset is (tag[0] a1 + tag[1] a2)/2 + L. Returns the Gauss-reduced
    basis vectors (with the tag carried through the reduction) and the
    integer coordinate pairs (u, v) of all minimal-norm vectors u a1 + v a2
    congruent to the tag mod 2. Minimality forces each winner to be
    primitive, so each extends to a basis of the lattice.
    """
    a1 = np.array([s1, 0.0])
    a2 = s2 * np.array([math.cos(angle), math.sin(angle)])
    t1, t2 = int(tag[0]) % 2, int(tag[1]) % 2
    for _ in range(256):
        if np.dot(a1, a1) > np.dot(a2, a2):
            a1, a2 = a2, a1
            t1, t2 = t2, t1
        k = round(float(np.dot(a1, a2) / np.dot(a1, a1)))
        if k == 0:
            break
        # a2 -> a2 - k a1 rewrites coset coords (x, y) as (x + k y, y)
        a2 = a2 - k * a1
        t1 = (t1 + k * t2) % 2
    else:
        raise RuntimeError("plane reduction did not terminate")
    cands = []
    for m in range(-3, 4):
        for n in range(-3, 4):
            u, v = t1 + 2 * m, t2 + 2 * n
            w = u * a1 + v * a2
            cands.append((float(np.dot(w, w)), u, v))
    qmin = min(q for q, _, _ in cands)
    winners = [(u, v) for q, u, v in cands if q <= qmin * (1.0 + 1e-9)]
    return a1, a2, winners


def _tol_lex_min(trips: list, rel: float = 1e-9) -> tuple:
    """Lexicographic minimum of length/angle triples with tolerant ties.

    Plain ``min`` over float triples breaks ties by whichever candidate
    happens to round a few ulps lower, so two presentations of the same
    manifold can canonicalize to wildly different triples. Components that
    agree within ``rel`` are treated as equal and the next component decides;
    the survivors are settled by exact comparison to stay deterministic.
    """
    pool = trips
    for i in range(3):
        lo = min(t[i] for t in pool)
        pool = [t for t in pool if t[i] <= lo + rel * max(1.0, lo)]
    return min(pool)


def _axis_coset_reduce(s1: float, s2: float, angle: float) -> tuple:
    """Canonical (l1, l2, angle) of a plane lattice with marked a1/2 coset.

    The first length doubles the shortest coset vector, the second generator
    is shortened modulo the first and reflected to nonnegative dot product.
    The triple is a complete isometry invariant of the (lattice, coset) pair,
    so two glide presentations agree here exactly when the manifolds agree.
    """
    a1, a2, winners = _half_coset_axes(s1, s2, angle, (1, 0))
    trips = []
    for u, v in winners:
        g, x, y = _ext_gcd(u, v)
        if g != 1:
            continue
        axis = u * a1 + v * a2
        w = -y * a1 + x * a2
        sq = float(np.dot(axis, axis))
        k = round(-float(np.dot(w, axis)) / sq)
        w = min((w + j * axis for j in (k - 1, k, k + 1)),
                key=lambda z: float(np.dot(z, z)))
        if np.dot(w, axis) < 0:
            w = -w
        la, lw = math.sqrt(sq), math.sqrt(float(np.dot(w, w)))
        cosang = min(1.0, max(-1.0, float(np.dot(axis, w)) / (la * lw)))
        trips.append((la, lw, math.acos(cosang)))
    return _tol_lex_min(trips)


def _sum_coset_reduce(s1: float, s2: float, angle: float) -> tuple:
    """Canonical (l1, l2, angle) of a plane lattice with marked (a1+a2)/2 coset.

    Produces a basis pair whose sum doubles the shortest coset vector. Given
    that sum, the sorted norms and the angle are pinned by the lattice
    covolume, so the triple is a complete invariant of the (lattice, coset)
    pair just like the axis version.
    """
    a1, a2, winners = _half_coset_axes(s1, s2, angle, (1, 1))
    trips = []
    for u, v in winners:
        g, x, y = _ext_gcd(u, v)
        if g != 1:
            continue
        axis = u * a1 + v * a2
        w = -y * a1 + x * a2
        sq = float(np.dot(axis, axis))
        k0 = round(float(np.dot(0.5 * axis - w, axis)) / sq)
        for j in (k0 - 1, k0, k0 + 1):
            b1 = w + j * axis
            b2 = axis - b1
            la = math.sqrt(float(np.dot(b1, b1)))
            lb = math.sqrt(float(np.dot(b2, b2)))
            cosang = min(1.0, max(-1.0, float(np.dot(b1, b2)) / (la * lb)))
            trips.append((min(la, lb), max(la, lb), math.acos(cosang)))
    return _tol_lex_min(trips)


def canonical_form(d: ManifoldDescriptor) -> ManifoldDescriptor:
    """Canonical parameter representative of the isometry class.

    Torus bases are replaced by the Cholesky rows of the reduced Gram matrix
    and the rank-2 sublattice of M2 is Gauss reduced. For N1 and N2 the plane
    is reduced together with the half-lattice coset that carries the glide
    (respectively the screw), which the plain reduction would forget: two
    glides over the same plane lattice along different cosets are different
    manifolds.
    """
    p = d.params
    name = d.class_name
    if name == "M1":
        G = reduce_gram(translation_lattice(d).gram)
        return descriptor(name, basis=np.linalg.cholesky(G))
    if name == "M2":
        red = reduce_plane(PlaneLattice(p["l2"], p["l3"], p["angle_rad"]))
        return descriptor(name, l1=p["l1"], l2=red.s1, l3=red.s2, angle_rad=red.angle)
    if name == "M6":
        l1, l2, l3 = sorted((p["l1"], p["l2"], p["l3"]))
        return descriptor(name, l1=l1, l2=l2, l3=l3)
    if name == "N1":
        l1, l2, ang = _axis_coset_reduce(p["l1"], p["l2"], p["angle_rad"])
        return descriptor(name, l1=l1, l2=l2, angle_rad=ang, l3=p["l3"])
    if name == "N2":
        l1, l2, ang = _sum_coset_reduce(p["l1"], p["l2"], p["angle_rad"])
        return descriptor(name, l1=l1, l2=l2, angle_rad=ang, height=p["height"])
    return d


def _param_vector(d: ManifoldDescriptor) -> np.ndarray:
    vals = []
    for k in PARAM_KEYS[d.class_name]:
        v = d.params[k]
        vals.extend(v) if isinstance(v, tuple) else vals.append(v)
    return np.array(vals)


def is_isometric(d1: ManifoldDescriptor, d2: ManifoldDescriptor, rtol: float = 1e-9) -> bool:
    """Whether the two descriptors present the same manifold up to isometry.

    Compares canonical forms parameterwise at relative tolerance ``rtol``.
    For the torus the comparison runs on reduced Gram matrices, which are a
    complete isometry invariant of the lattice.
    """
    if d1.class_name != d2.class_name:
        return False
    c1, c2 = canonical_form(d1), canonical_form(d2)
    if d1.class_name == "M1":
        g1 = reduce_gram(translation_lattice(c1).gram)
        g2 = reduce_gram(translation_lattice(c2).gram)
        tol = rtol * max(1.0, float(np.max(np.abs(g1))))
        return bool(np.max(np.abs(g1 - g2)) <= tol)
    v1, v2 = _param_vector(c1), _param_vector(c2)
    return bool(np.all(np.abs(v1 - v2) <= rtol * (1.0 + np.maximum(np.abs(v1), np.abs(v2)))))


@dataclass(frozen=True)
class CoveringEdge:
    """``cover_class`` covers ``quotient_class`` with the given fold count."""

    cover_class: str
    quotient_class: str
    folds: int


COVERING_EDGES = (
    CoveringEdge("M1", "M2", 2),
    CoveringEdge("M1", "M3", 3),
    CoveringEdge("M1", "M4", 4),
    CoveringEdge("M1", "M5", 6),
    CoveringEdge("M1", "N1", 2),
    CoveringEdge("M1", "N2", 2),
    CoveringEdge("M2", "M6", 2),
    CoveringEdge("M2", "N3", 2),
    CoveringEdge("M2", "N4", 2),
)


def covering_info(class_name: str) -> dict:
    """Direct covering edges incident to a class.

    Returns {"covered_by": edges with this class as quotient,
    "covers": edges with this class as cover,
    "torus_fold": holonomy order (fold count of the torus cover)}.
    """
    if class_name not in PARAM_KEYS:
        raise ValidationError(f"unknown manifold class {class_name!r}")
    return {
        "covered_by": tuple(e for e in COVERING_EDGES if e.quotient_class == class_name),
        "covers": tuple(e for e in COVERING_EDGES if e.cover_class == class_name),
        "torus_fold": HOLONOMY_ORDER[class_name],
    }


def default_params(class_name: str) -> dict:
    """A valid template parameter set, used by the command line for examples."""
    if class_name not in PARAM_KEYS:
        raise ValidationError(f"unknown manifold class {class_name!r}")
    template = {
        "basis": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        "l1": 1.0,
        "l2": 1.0,
        "l3": 1.0,
        "l": 1.0,
        "angle_rad": math.pi / 2,
        "height": 1.0,
    }
    return {k: template[k] for k in PARAM_KEYS[class_name]}
