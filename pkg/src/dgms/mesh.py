"""Nested Cartesian quadrilateral meshes on rectangular and L-shaped domains.

Elements are axis-aligned squares of width 2^-level, ordered row-major in
(iy, ix). Faces are enumerated once each; for interior faces the normal
points from the lower-ordered element (T-) to the higher-ordered one (T+),
on the boundary it points outward. All objects are immutable after
construction and safe to share between workers.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2

MAX_LEVEL = 12  # 4^12 elements; beyond this the dof index space gets silly


@dataclass(frozen=True)
class BoundarySegment:
    """Axis-aligned boundary segment.

    axis 'x' denotes {x = value, lo <= y <= hi}; axis 'y' denotes
    {y = value, lo <= x <= hi}.
    """

    axis: str
    value: float
    lo: float
    hi: float

    def contains_point(self, x, y, tol=1e-12):
        if self.axis == "x":
            return abs(x - self.value) <= tol and self.lo - tol <= y <= self.hi + tol
        if self.axis == "y":
            return abs(y - self.value) <= tol and self.lo - tol <= x <= self.hi + tol
        raise ConfigError(f"unknown segment axis {self.axis!r}")


@dataclass(frozen=True)
class DomainSpec:
    """Domain geometry plus the boundary partition into Dirichlet/Neumann.

    If `dirichlet` is None, the Dirichlet part is the complement of the
    Neumann segments. If both selectors are given they must cover the
    whole boundary.
    """

    kind: str  # 'unit-square' | 'l-shape'
    neumann: tuple = ()
    dirichlet: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("unit-square", "l-shape"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")


def unit_square(neumann=(), dirichlet=None):
    return DomainSpec("unit-square", tuple(neumann), dirichlet)


def l_shape(neumann=(), dirichlet=None):
    """Unit square with the lower right quadrant removed."""
    return DomainSpec("l-shape", tuple(neumann), dirichlet)


def l_shape_benchmark():
    """L-shape with Neumann boundary on {y=0} and {x=1}, Dirichlet elsewhere."""
    return l_shape(
        neumann=(
            BoundarySegment("y", 0.0, 0.0, 1.0),
            BoundarySegment("x", 1.0, 0.0, 1.0),
        )
    )


class Mesh:
    """Uniform quadrilateral mesh of all occupied cells at one level."""

    def __init__(self, domain, level):
        if not (1 <= level <= MAX_LEVEL):
            raise ConfigError(f"mesh level {level} outside supported range 1..{MAX_LEVEL}")
        self.domain = domain
        self.level = level
        self.n = 1 << level
        self.width = 1.0 / self.n

        occ = np.ones((self.n, self.n), dtype=bool)  # indexed [ix, iy]
        if domain.kind == "l-shape":
            half = self.n // 2
            occ[half:, :half] = False
        self.occupied = occ

        # row-major element ordering: iy outer, ix inner
        ids = np.full((self.n, self.n), -1, dtype=np.int64)
        coords = []
        k = 0
        for iy in range(self.n):
            for ix in range(self.n):
                if occ[ix, iy]:
                    ids[ix, iy] = k
                    coords.append((ix, iy))
                    k += 1
        self.elem_id = ids
        self.coords = np.array(coords, dtype=np.int64)
        self.nel = k
        self.ndof = 4 * k

        self._build_faces()
        self.face_tags = classify_faces_array(self)

    def _build_faces(self):
        axis, minus, plus, mside, nsign = [], [], [], [], []
        ids = self.elem_id
        n = self.n

        def nb(ix, iy):
            if 0 <= ix < n and 0 <= iy < n:
                return ids[ix, iy]
            return -1

        for e in range(self.nel):
            ix, iy = self.coords[e]
            west, east = nb(ix - 1, iy), nb(ix + 1, iy)
            south, north = nb(ix, iy - 1), nb(ix, iy + 1)
            if west < 0:
                axis.append(0); minus.append(e); plus.append(-1); mside.append(0); nsign.append(-1)
            if south < 0:
                axis.append(1); minus.append(e); plus.append(-1); mside.append(0); nsign.append(-1)
            if east >= 0:
                axis.append(0); minus.append(e); plus.append(east); mside.append(1); nsign.append(1)
            else:
                axis.append(0); minus.append(e); plus.append(-1); mside.append(1); nsign.append(1)
            if north >= 0:
                axis.append(1); minus.append(e); plus.append(north); mside.append(1); nsign.append(1)
            else:
                axis.append(1); minus.append(e); plus.append(-1); mside.append(1); nsign.append(1)

        self.face_axis = np.array(axis, dtype=np.int8)
        self.face_minus = np.array(minus, dtype=np.int64)
        self.face_plus = np.array(plus, dtype=np.int64)
        self.face_mside = np.array(mside, dtype=np.int8)
        self.face_nsign = np.array(nsign, dtype=np.int8)
        self.nfaces = len(axis)

    def face_midpoint(self, f):
        w = self.width
        ix, iy = self.coords[self.face_minus[f]]
        if self.face_axis[f] == 0:
            x = (ix + self.face_mside[f]) * w
            y = (iy + 0.5) * w
        else:
            x = (ix + 0.5) * w
            y = (iy + self.face_mside[f]) * w
        return x, y

    def element_origin(self, e):
        ix, iy = self.coords[e]
        return ix * self.width, iy * self.width

    def element_vertices(self, e):
        """Vertex coordinates in local ordering (0,0),(1,0),(0,1),(1,1)."""
        x0, y0 = self.element_origin(e)
        w = self.width
        return np.array([(x0, y0), (x0 + w, y0), (x0, y0 + w), (x0 + w, y0 + w)])

    @property
    def area(self):
        return self.nel * self.width**2


def classify_faces_array(mesh, domain=None):
    """Per-face tags (INTERIOR | DIRICHLET | NEUMANN) for mesh+domain."""
    if domain is None:
        domain = mesh.domain
    tags = np.full(mesh.nfaces, INTERIOR, dtype=np.int8)
    n_dirichlet = 0
    for f in range(mesh.nfaces):
        if mesh.face_plus[f] >= 0:
            continue
        x, y = mesh.face_midpoint(f)
        in_neumann = any(s.contains_point(x, y) for s in domain.neumann)
        if domain.dirichlet is None:
            tags[f] = NEUMANN if in_neumann else DIRICHLET
        else:
            in_dirichlet = any(s.contains_point(x, y) for s in domain.dirichlet)
            if in_neumann and not in_dirichlet:
                tags[f] = NEUMANN
            elif in_dirichlet:
                tags[f] = DIRICHLET
            else:
                raise ConfigError(
                    f"boundary face at ({x:.6g},{y:.6g}) not covered by any selector"
                )
        if tags[f] == DIRICHLET:
            n_dirichlet += 1
    if n_dirichlet == 0:
        raise ConfigError("Dirichlet boundary is empty; at least one face required")
    return tags


def classify_faces(mesh, domain=None):
    """Partition face ids into {'interior', 'dirichlet', 'neumann'}."""
    if domain is None or domain is mesh.domain:
        tags = mesh.face_tags
    else:
        tags = classify_faces_array(mesh, domain)
    return {
        "interior": np.nonzero(tags == INTERIOR)[0],
        "dirichlet": np.nonzero(tags == DIRICHLET)[0],
        "neumann": np.nonzero(tags == NEUMANN)[0],
    }


def element_dofs(elements):
    """Global dG dof indices of the given elements, in element order."""
    els = np.asarray(elements, dtype=np.int64).reshape(-1, 1)
    return (4 * els + np.arange(4)).ravel()


@dataclass(frozen=True)
class MeshHierarchy:
    domain: DomainSpec
    coarse: Mesh
    fine: Mesh
    ratio: int
    children: np.ndarray  # (n_coarse, ratio^2) fine element ids
    parents: np.ndarray  # (n_fine,) coarse element ids

    @property
    def coarse_H(self):
        return self.coarse.width

    @property
    def fine_h(self):
        return self.fine.width


def build_hierarchy(domain, coarse_level, fine_level, fine=None):
    """Nested coarse/fine pair; pass `fine` to share one fine mesh (and the
    operators assembled on it) between hierarchies at different coarse levels."""
    if not (1 <= coarse_level <= fine_level):
        raise ConfigError(
            f"need 1 <= coarse_level <= fine_level, got {coarse_level}, {fine_level}"
        )
    coarse = Mesh(domain, coarse_level)
    if fine is None:
        fine = Mesh(domain, fine_level)
    elif fine.level != fine_level or fine.domain is not domain:
        raise ConfigError("supplied fine mesh does not match level/domain")
    r = 1 << (fine_level - coarse_level)
    children = np.empty((coarse.nel, r * r), dtype=np.int64)
    parents = np.empty(fine.nel, dtype=np.int64)
    for T in range(coarse.nel):
        ix, iy = coarse.coords[T]
        k = 0
        for cy in range(r):
            for cx in range(r):
                t = fine.elem_id[ix * r + cx, iy * r + cy]
                assert t >= 0, "fine mesh does not cover coarse element"
                children[T, k] = t
                parents[t] = T
                k += 1
    return MeshHierarchy(domain, coarse, fine, r, children, parents)


@dataclass(frozen=True)
class Patch:
    """Element patch of L coarse layers around a center element.

    L=1 is the element itself; each further layer adds every coarse
    element whose closure touches the previous patch (vertex contact
    counts). Saturates at the whole domain.
    """

    center: int
    radius: int
    members: np.ndarray  # sorted coarse element ids
    fine_elements: np.ndarray  # sorted fine element ids
    fine_faces: np.ndarray  # fine face ids meeting the patch closure


def patch(hier, T, L):
    if L < 1:
        raise ConfigError(f"patch radius must be >= 1, got {L}")
    if not (0 <= T < hier.coarse.nel):
        raise ConfigError(f"coarse element {T} out of range")
    coarse = hier.coarse
    mask = np.zeros((coarse.n, coarse.n), dtype=bool)
    ix, iy = coarse.coords[T]
    mask[ix, iy] = True
    for _ in range(L - 1):
        grown = mask.copy()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                shifted = np.zeros_like(mask)
                xs = slice(max(dx, 0), coarse.n + min(dx, 0))
                xd = slice(max(-dx, 0), coarse.n + min(-dx, 0))
                ys = slice(max(dy, 0), coarse.n + min(dy, 0))
                yd = slice(max(-dy, 0), coarse.n + min(-dy, 0))
                shifted[xd, yd] = mask[xs, ys]
                grown |= shifted
        mask = grown & coarse.occupied
    members = np.sort(coarse.elem_id[mask])
    fine_elements = np.sort(hier.children[members].ravel())
    in_patch = np.zeros(hier.fine.nel + 1, dtype=bool)
    in_patch[fine_elements] = True
    fmask = in_patch[hier.fine.face_minus] | (
        (hier.fine.face_plus >= 0) & in_patch[hier.fine.face_plus]
    )
    fine_faces = np.nonzero(fmask)[0]
    return Patch(T, L, members, fine_elements, fine_faces)
