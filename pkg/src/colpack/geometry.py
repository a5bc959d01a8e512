"""Shape catalog, measures and exact pairwise overlap predicates.

Every hard shape is reduced to one of three kernel classes:

* ``ROUND``   disk / sphere, tested by center distance,
* ``HULL``    spheropolytope (convex vertex set + rounding radius); covers
  polygons, polyhedra and capsules,
* ``ELLIPSOID`` ellipse / ellipsoid, tested with the Perram-Wertheim contact
  function.

Canonical body-frame vertex tables (all centered at the centroid):

=============  ==============================================================
triangle       equilateral, vertices at 90, 210 and 330 degrees, R = e/sqrt(3)
square         (+-e/2, +-e/2)
rectangle      (+-w/2, +-h/2)
capsule (2D)   segment (+-L/2, 0), rounding radius w/2
cube           (+-e/2, +-e/2, +-e/2)
octahedron     (+-a, 0, 0), (0, +-a, 0), (0, 0, +-a) with a = e/sqrt(2)
tetrahedron    alternate cube corners (s,s,s), (s,-s,-s), (-s,s,-s), (-s,-s,s)
               with s = e/(2 sqrt(2))
capsule (3D)   segment (+-L/2, 0, 0), rounding radius w/2
=============  ==============================================================

Ellipse parameters ``a, b`` are semi-axes; ellipsoid parameters ``a, b, c``
are full axis lengths. Orientation angles are radians (2D); quaternions are
``(w, x, y, z)`` (3D).
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ColpackError

ROUND, HULL, ELLIPSOID = 0, 1, 2

# contact band: separations within this of contact count as non-overlapping
CONTACT_EPS = 1e-9

SHAPE_PARAMS = {
    "disk": ("diameter",),
    "ellipse": ("a", "b"),
    "triangle": ("edge",),
    "square": ("edge",),
    "rectangle": ("width", "height"),
    "capsule2d": ("length", "width"),
    "sphere": ("diameter",),
    "ellipsoid": ("a", "b", "c"),
    "cube": ("edge",),
    "octahedron": ("edge",),
    "tetrahedron": ("edge",),
    "capsule3d": ("length", "width"),
}

SHAPE_DEFAULTS = {
    "disk": {"diameter": 1.0},
    "ellipse": {"a": 1.0, "b": 0.5},
    "triangle": {"edge": 1.0},
    "square": {"edge": 1.0},
    "rectangle": {"width": 2.0, "height": 1.0},
    "capsule2d": {"length": 2.0, "width": 1.0},
    "sphere": {"diameter": 1.0},
    "ellipsoid": {"a": 2.0, "b": 1.0, "c": 1.0},
    "cube": {"edge": 1.0},
    "octahedron": {"edge": 1.0},
    "tetrahedron": {"edge": 1.0},
    "capsule3d": {"length": 2.0, "width": 1.0},
}

SHAPES_2D = ("disk", "ellipse", "triangle", "square", "rectangle", "capsule2d")
SHAPES_3D = ("sphere", "ellipsoid", "cube", "octahedron", "tetrahedron", "capsule3d")

ROUND_KINDS = frozenset({"disk", "sphere"})
ELLIPSOID_KINDS = frozenset({"ellipse", "ellipsoid"})


class IntegratorFamily(str, enum.Enum):
    SPHERE_LIKE = "sphere_like"
    ELLIPSOID_LIKE = "ellipsoid_like"
    POLYTOPE_LIKE = "polytope_like"


_FAMILY_PREFERENCE = (
    IntegratorFamily.POLYTOPE_LIKE,
    IntegratorFamily.ELLIPSOID_LIKE,
    IntegratorFamily.SPHERE_LIKE,
)


def shape_dimension(kind):
    if kind in SHAPES_2D:
        return 2
    if kind in SHAPES_3D:
        return 3
    raise ColpackError("unknown_shape", f"unknown shape kind {kind!r}")


def canonical_kind(name, dimension=None):
    """Map a user-facing shape name to a catalog kind.

    ``capsule`` is ambiguous without a dimension and resolves to
    ``capsule2d``/``capsule3d``; every other name is already a kind.
    """
    name = str(name).strip().lower()
    if name == "capsule":
        if dimension == 3:
            return "capsule3d"
        return "capsule2d"
    if name not in SHAPE_PARAMS:
        raise ColpackError("unknown_shape", f"unknown shape {name!r}",
                           supported=sorted(set(SHAPE_PARAMS) | {"capsule"}))
    return name


def public_name(kind):
    return "capsule" if kind.startswith("capsule") else kind


@dataclass
class ShapeSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SHAPE_PARAMS:
            raise ColpackError("unknown_shape", f"unknown shape kind {self.kind!r}")
        names = SHAPE_PARAMS[self.kind]
        params = dict(self.params) if self.params else dict(SHAPE_DEFAULTS[self.kind])
        extra = set(params) - set(names)
        if extra:
            raise ColpackError("unknown_parameter",
                               f"{self.kind} has no parameter(s) {sorted(extra)}",
                               allowed=list(names))
        missing = [n for n in names if n not in params]
        if missing:
            raise ColpackError("missing_parameter", f"{self.kind} needs {missing}")
        for n in names:
            v = float(params[n])
            if not (v > 0 and math.isfinite(v)):
                raise ColpackError("non_positive_value", f"{self.kind}.{n} must be > 0, got {params[n]!r}")
            params[n] = v
        self.params = {n: params[n] for n in names}

    @property
    def dimension(self):
        return shape_dimension(self.kind)

    @property
    def orientable(self):
        return self.kind not in ROUND_KINDS

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params") or {}))


@dataclass
class Pose:
    position: np.ndarray
    orientation: object = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape == (3,):
            q = np.asarray(self.orientation if not np.isscalar(self.orientation)
                           else (1.0, 0.0, 0.0, 0.0), dtype=float)
            if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
                raise ColpackError("invalid_pose", "3D orientation must be a unit quaternion")
            self.orientation = q
        elif self.position.shape == (2,):
            self.orientation = float(self.orientation)
        else:
            raise ColpackError("invalid_pose", "position must have 2 or 3 components")

    @property
    def dimension(self):
        return self.position.shape[0]

    def quaternion(self):
        if self.dimension == 2:
            return angle_to_quat(self.orientation)
        return np.asarray(self.orientation, dtype=float)


@dataclass
class HullRep:
    vertices: np.ndarray
    rounding_radius: float = 0.0


# -- rotations ---------------------------------------------------------------

def angle_to_quat(theta):
    return np.array([math.cos(0.5 * theta), 0.0, 0.0, math.sin(0.5 * theta)])


def quat_to_angle(q):
    return 2.0 * math.atan2(q[3], q[0])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def random_quaternions(rng, n):
    """Uniformly distributed unit quaternions (Shoemake)."""
    u1, u2, u3 = rng.random((3, n))
    a, b = np.sqrt(1 - u1), np.sqrt(u1)
    return np.column_stack([b * np.cos(2 * np.pi * u3), a * np.sin(2 * np.pi * u2),
                            a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3)])


# -- catalog geometry --------------------------------------------------------

def _vertices(shape):
    p = shape.params
    k = shape.kind
    if k == "triangle":
        r = p["edge"] / math.sqrt(3.0)
        ang = np.deg2rad([90.0, 210.0, 330.0])
        return np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    if k == "square":
        h = p["edge"] / 2
        return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    if k == "rectangle":
        w, h = p["width"] / 2, p["height"] / 2
        return np.array([[-w, -h], [w, -h], [w, h], [-w, h]])
    if k == "capsule2d":
        return np.array([[-p["length"] / 2, 0.0], [p["length"] / 2, 0.0]])
    if k == "cube":
        h = p["edge"] / 2
        return np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    if k == "octahedron":
        a = p["edge"] / math.sqrt(2.0)
        return np.array([[a, 0, 0], [-a, 0, 0], [0, a, 0], [0, -a, 0], [0, 0, a], [0, 0, -a]], float)
    if k == "tetrahedron":
        s = p["edge"] / (2 * math.sqrt(2.0))
        return np.array([[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]])
    if k == "capsule3d":
        return np.array([[-p["length"] / 2, 0.0, 0.0], [p["length"] / 2, 0.0, 0.0]])
    if k in ("disk", "sphere"):
        return np.zeros((1, shape.dimension))
    raise ColpackError("unsupported_pair", f"{k} has no hull representation")


def hull_rep(shape):
    """Spheropolytope form of a non-ellipsoidal shape."""
    if shape.kind in ELLIPSOID_KINDS:
        raise ColpackError("unsupported_pair", f"{shape.kind} has no hull representation")
    radius = 0.0
    if shape.kind in ROUND_KINDS:
        radius = shape.params["diameter"] / 2
    elif shape.kind.startswith("capsule"):
        radius = shape.params["width"] / 2
    return HullRep(_vertices(shape), radius)


def semi_axes(shape):
    p = shape.params
    if shape.kind == "ellipse":
        return np.array([p["a"], p["b"], p["b"]])
    if shape.kind == "ellipsoid":
        return np.array([p["a"], p["b"], p["c"]]) / 2
    if shape.kind in ROUND_KINDS:
        return np.full(3, p["diameter"] / 2)
    raise ColpackError("unsupported_pair", f"{shape.kind} is not ellipsoid-like")


def shape_measure(shape):
    """Area (2D) or volume (3D) of a catalog shape."""
    p = shape.params
    k = shape.kind
    if k == "disk":
        return math.pi * p["diameter"] ** 2 / 4
    if k == "ellipse":
        return math.pi * p["a"] * p["b"]
    if k == "capsule2d":
        return p["length"] * p["width"] + math.pi * (p["width"] / 2) ** 2
    if k == "sphere":
        return math.pi * p["diameter"] ** 3 / 6
    if k == "ellipsoid":
        return math.pi / 6 * p["a"] * p["b"] * p["c"]
    if k == "cube":
        return p["edge"] ** 3
    if k == "octahedron":
        return math.sqrt(2.0) / 3 * p["edge"] ** 3
    if k == "tetrahedron":
        return p["edge"] ** 3 / (6 * math.sqrt(2.0))
    if k == "capsule3d":
        r = p["width"] / 2
        return math.pi * r * r * p["length"] + math.pi / 6 * p["width"] ** 3
    v = _vertices(shape)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def circumradius(shape):
    p = shape.params
    k = shape.kind
    if k in ROUND_KINDS:
        return p["diameter"] / 2
    if k == "ellipse":
        return max(p["a"], p["b"])
    if k == "ellipsoid":
        return max(p["a"], p["b"], p["c"]) / 2
    if k.startswith("capsule"):
        return p["length"] / 2 + p["width"] / 2
    return float(np.max(np.linalg.norm(_vertices(shape), axis=1)))


def admissible_families(shape):
    if shape.kind in ROUND_KINDS:
        return set(IntegratorFamily)
    if shape.kind in ELLIPSOID_KINDS:
        return {IntegratorFamily.ELLIPSOID_LIKE}
    return {IntegratorFamily.POLYTOPE_LIKE}


def resolve_family(shapes):
    shapes = list(shapes)
    if not shapes:
        raise ColpackError("empty_mixture", "at least one shape is required")
    dims = {s.dimension for s in shapes}
    if len(dims) > 1:
        raise ColpackError("dimension_shape_mismatch",
                           "shapes from different dimensions cannot be mixed",
                           shapes=[s.kind for s in shapes])
    common = set(IntegratorFamily)
    for s in shapes:
        common &= admissible_families(s)
    if not common:
        raise ColpackError(
            "incompatible_mixture",
            "ellipse/ellipsoid shapes cannot be mixed with polygonal, polyhedral or capsule shapes",
            shapes=[public_name(s.kind) for s in shapes])
    for fam in _FAMILY_PREFERENCE:
        if fam in common:
            return fam


def long_axis_body(shape):
    """Body-frame unit vector along a shape's long axis (nematic director)."""
    d = shape.dimension
    e = np.eye(d)
    p = shape.params
    if shape.kind == "ellipse":
        return e[0] if p["a"] >= p["b"] else e[1]
    if shape.kind == "rectangle":
        return e[0] if p["width"] >= p["height"] else e[1]
    if shape.kind == "ellipsoid":
        return e[int(np.argmax([p["a"], p["b"], p["c"]]))]
    return e[0]


def body_axes(shape, pose):
    """World-frame symmetry axes of a 3D shape, long axis first for elongated kinds."""
    if shape.dimension != 3:
        raise ColpackError("invalid_for_system", "body_axes is defined for 3D shapes")
    rot = quat_to_matrix(pose.quaternion())
    order = [0, 1, 2]
    if shape.kind == "ellipsoid":
        p = shape.params
        order = sorted(order, key=lambda i: -[p["a"], p["b"], p["c"]][i])
    return [rot[:, i].copy() for i in order]


# -- SAT tables --------------------------------------------------------------

def _unique_dirs(vectors, tol=1e-9):
    out = []
    for v in vectors:
        n = np.linalg.norm(v)
        if n < tol:
            continue
        v = v / n
        if not any(abs(abs(float(np.dot(v, u))) - 1.0) < tol for u in out):
            out.append(v)
    return out


def sat_axes(shape):
    """Body-frame face normals and edge directions of a polytope."""
    v = _vertices(shape)
    if shape.dimension == 2:
        if len(v) < 3:
            return [], []
        edges = np.roll(v, -1, axis=0) - v
        normals = np.column_stack([edges[:, 1], -edges[:, 0]])
        pad = lambda a: [np.append(x, 0.0) for x in a]
        return pad(_unique_dirs(normals)), pad(_unique_dirs(edges))
    if len(v) < 4:
        return [], []
    from scipy.spatial import ConvexHull

    hull = ConvexHull(v)
    normals = _unique_dirs(hull.equations[:, :3])
    edge_faces = {}
    for fi, simplex in enumerate(hull.simplices):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = tuple(sorted((int(simplex[a]), int(simplex[b]))))
            edge_faces.setdefault(key, []).append(fi)
    edges = []
    for (a, b), faces in edge_faces.items():
        n0 = hull.equations[faces[0], :3]
        if all(np.allclose(hull.equations[f, :3], n0, atol=1e-9) for f in faces):
            continue  # diagonal of a triangulated face
        edges.append(v[b] - v[a])
    return normals, _unique_dirs(edges)


@dataclass
class SpeciesTable:
    """Flat per-species arrays consumed by the compiled and Python kernels."""

    cls: np.ndarray
    circ: np.ndarray
    rad: np.ndarray
    nv: np.ndarray
    verts: np.ndarray
    nf: np.ndarray
    fnorm: np.ndarray
    ne: np.ndarray
    edir: np.ndarray
    semi: np.ndarray
    orientable: np.ndarray

    @property
    def n_species(self):
        return len(self.cls)


def species_table(shapes):
    shapes = list(shapes)
    ns = len(shapes)
    reps = []
    for s in shapes:
        if s.kind in ROUND_KINDS:
            reps.append((ROUND, np.zeros((1, 3)), s.params["diameter"] / 2, [], []))
        elif s.kind in ELLIPSOID_KINDS:
            reps.append((ELLIPSOID, np.zeros((1, 3)), 0.0, [], []))
        else:
            h = hull_rep(s)
            v = np.zeros((len(h.vertices), 3))
            v[:, : s.dimension] = h.vertices
            normals, edges = sat_axes(s)
            reps.append((HULL, v, h.rounding_radius, normals, edges))
    maxv = max(len(r[1]) for r in reps)
    maxf = max([len(r[3]) for r in reps] + [1])
    maxe = max([len(r[4]) for r in reps] + [1])
    tab = SpeciesTable(
        cls=np.zeros(ns, np.int32), circ=np.zeros(ns), rad=np.zeros(ns),
        nv=np.zeros(ns, np.int32), verts=np.zeros((ns, maxv, 3)),
        nf=np.zeros(ns, np.int32), fnorm=np.zeros((ns, maxf, 3)),
        ne=np.zeros(ns, np.int32), edir=np.zeros((ns, maxe, 3)),
        semi=np.zeros((ns, 3)), orientable=np.zeros(ns, np.int32),
    )
    for i, (s, (c, v, r, normals, edges)) in enumerate(zip(shapes, reps)):
        tab.cls[i] = c
        tab.circ[i] = circumradius(s)
        tab.rad[i] = r
        tab.nv[i] = len(v)
        tab.verts[i, : len(v)] = v
        tab.nf[i] = len(normals)
        for j, n in enumerate(normals):
            tab.fnorm[i, j] = n
        tab.ne[i] = len(edges)
        for j, e in enumerate(edges):
            tab.edir[i, j] = e
        if c in (ROUND, ELLIPSOID):
            tab.semi[i] = semi_axes(s)
        tab.orientable[i] = int(s.orientable)
    return tab


# -- pair predicates ---------------------------------------------------------

def _check_pair(shapeA, shapeB):
    if shapeA.dimension != shapeB.dimension:
        raise ColpackError("dimension_shape_mismatch",
                           f"{shapeA.kind} and {shapeB.kind} live in different dimensions")
    a_ell = shapeA.kind in ELLIPSOID_KINDS
    b_ell = shapeB.kind in ELLIPSOID_KINDS
    a_poly = not a_ell and shapeA.kind not in ROUND_KINDS
    b_poly = not b_ell and shapeB.kind not in ROUND_KINDS
    if (a_ell and b_poly) or (b_ell and a_poly):
        raise ColpackError("unsupported_pair",
                           f"no overlap test between {shapeA.kind} and {shapeB.kind}")


def _box_edges(box, dim):
    if box is None:
        return np.zeros(3)
    edges = np.asarray(getattr(box, "edges", box), dtype=float)
    out = np.zeros(3)
    out[:dim] = edges[:dim]
    return out


def _pos3(p):
    out = np.zeros(3)
    out[: len(p)] = p
    return out


def _shape_key(shape):
    return shape.kind, tuple(sorted(shape.params.items()))


@functools.lru_cache(maxsize=256)
def _pair_table(keyA, keyB):
    return species_table([ShapeSpec(keyA[0], dict(keyA[1])), ShapeSpec(keyB[0], dict(keyB[1]))])


def overlap(shapeA, poseA, shapeB, poseB, box=None):
    """True iff the interiors of the two placed shapes intersect.

    ``box`` (a Box or its edge lengths) enables the minimum-image convention;
    ``None`` means open space.
    """
    from . import kernel

    _check_pair(shapeA, shapeB)
    dim = shapeA.dimension
    tab = _pair_table(_shape_key(shapeA), _shape_key(shapeB))
    return bool(kernel.pair_overlap(
        tab, 0, _pos3(poseA.position), poseA.quaternion(),
        1, _pos3(poseB.position), poseB.quaternion(),
        _box_edges(box, dim), dim))


def _min_image(r, box, dim):
    if box is None:
        return r
    L = _box_edges(box, dim)[:dim]
    return r - L * np.floor(r / L + 0.5)


def _pw_matrix(shape, pose):
    s = semi_axes(shape)
    if np.any(s < 1e-12):
        raise ColpackError("degenerate_shape", "semi-axis below 1e-12")
    rot = quat_to_matrix(pose.quaternion())
    return rot @ np.diag(s * s) @ rot.T


def pw_contact(ellA, poseA, ellB, poseB, box=None, tol=1e-10):
    """Perram-Wertheim contact value F; the pair overlaps iff F < 1."""
    for s in (ellA, ellB):
        if s.kind not in ELLIPSOID_KINDS and s.kind not in ROUND_KINDS:
            raise ColpackError("unsupported_pair", f"{s.kind} is not ellipsoid-like")
    dim = ellA.dimension
    A = _pw_matrix(ellA, poseA)
    B = _pw_matrix(ellB, poseB)
    r = _pos3(_min_image(poseB.position - poseA.position, box, dim))
    if dim == 2:
        A, B, r = A[:2, :2], B[:2, :2], r[:2]

    def value_and_slope(lam):
        M = (1 - lam) * A + lam * B
        x = np.linalg.solve(M, r)
        f = lam * (1 - lam) * float(r @ x)
        df = (1 - 2 * lam) * float(r @ x) - lam * (1 - lam) * float(x @ (B - A) @ x)
        return f, df

    lo, hi = 0.0, 1.0
    lam = 0.5
    # F is concave in lambda, so its slope is monotone decreasing
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        f, df = value_and_slope(lam)
        if abs(df) < tol or hi - lo < 1e-16:
            break
        if df > 0:
            lo = lam
        else:
            hi = lam
    return value_and_slope(lam)[0]
