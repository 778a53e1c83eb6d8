"""Spatially interpolated head maps from per-electrode band centroids.

Pipeline per window and band: project unit-sphere electrode positions to the
plane with an azimuthal equidistant (polar) projection, Delaunay-triangulate
the projected points once per montage, then evaluate a C1 piecewise-cubic
Clough-Tocher interpolant on a fixed square grid. The five band maps are
stacked into one ``grid x grid x bands`` tensor.

All internal ordering (triangle vertices, gradient neighbor sums, triangle
scan order) is canonicalized by point position, never by input index, so maps
are bit-identical under any permutation of the electrode input order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import FormatError, ValidationError
from .signal_io import Montage
from .spectral import BandScheme, band_centroids, power_spectrum
from .windowing import Window

TENSOR_MAGIC = b"TOPO"
TENSOR_VERSION = 1
_TENSOR_HEADER = struct.Struct("<4sHHHQ")  # magic, version, grid, bands, count

GRID_MARGIN = 0.05  # of the max projected radius, on each side
_INSIDE_TOL = 1e-12


@dataclass(frozen=True)
class ProjectedLayout:
    """2D electrode coordinates: radius = great-circle angle from the vertex."""

    labels: tuple[str, ...]
    points: np.ndarray  # (n, 2)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.labels)


def project(montage: Montage, labels: Sequence[str] | None = None) -> ProjectedLayout:
    """Azimuthal equidistant projection of electrode positions.

    An electrode at polar angle theta from +z and azimuth phi maps to
    ``(theta cos phi, theta sin phi)``: the vertex lands at the origin and the
    projected radius equals the angular distance from the vertex.
    """
    labels = tuple(montage.labels if labels is None else labels)
    pos = np.array([montage.position(l) for l in labels])
    z = np.clip(pos[:, 2], -1.0, 1.0)
    theta = np.arccos(z)
    near_antipode = theta >= np.pi - 1e-9
    if np.any(near_antipode):
        bad = [labels[i] for i in np.flatnonzero(near_antipode)]
        raise ValidationError(f"electrodes at the antipode cannot be projected: {bad}")
    phi = np.arctan2(pos[:, 1], pos[:, 0])
    return ProjectedLayout(labels, np.column_stack([theta * np.cos(phi), theta * np.sin(phi)]))


@dataclass(frozen=True)
class Triangulation:
    """Delaunay triangulation with position-canonical vertex and triangle order.

    ``simplices`` index into ``points``; within each triangle vertices are
    ordered by (x, y) position and triangles are sorted the same way, so the
    structure depends only on the point set.
    """

    points: np.ndarray
    simplices: np.ndarray  # (n_triangles, 3)
    vertex_neighbors: tuple[tuple[int, ...], ...]


def triangulate(layout: ProjectedLayout) -> Triangulation:
    """Delaunay triangulation of the projected electrode positions."""
    pts = layout.points
    if len(pts) < 3:
        raise ValidationError(f"need at least 3 electrodes to triangulate, got {len(pts)}")
    order = np.lexsort((pts[:, 1], pts[:, 0]))  # canonical: by x, then y
    try:
        tri = Delaunay(pts[order])
    except QhullError as exc:
        raise ValidationError(f"electrode positions cannot be triangulated: {exc}") from exc
    if tri.simplices.shape[0] == 0:
        raise ValidationError("degenerate layout: all electrodes are collinear")

    # Map back to layout indices, keeping position-canonical order everywhere.
    simplices = np.sort(tri.simplices, axis=1)
    simplices = simplices[np.lexsort(tuple(simplices[:, k] for k in (2, 1, 0)))]
    indptr, indices = tri.vertex_neighbor_vertices
    neighbors_sorted = [np.sort(indices[indptr[i] : indptr[i + 1]]) for i in range(len(pts))]

    inverse = order  # sorted index -> original index
    neighbors: list[tuple[int, ...]] = [()] * len(pts)
    for si, nb in enumerate(neighbors_sorted):
        neighbors[inverse[si]] = tuple(int(inverse[j]) for j in nb)
    return Triangulation(
        points=pts,
        simplices=inverse[simplices],
        vertex_neighbors=tuple(neighbors),
    )


def circumcircle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, float]:
    """Center and radius of the circle through three points."""
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if d == 0:
        raise ValidationError("collinear points have no circumcircle")
    aa, bb, cc = (a * a).sum(), (b * b).sum(), (c * c).sum()
    ux = (aa * (b[1] - c[1]) + bb * (c[1] - a[1]) + cc * (a[1] - b[1])) / d
    uy = (aa * (c[0] - b[0]) + bb * (a[0] - c[0]) + cc * (b[0] - a[0])) / d
    center = np.array([ux, uy])
    return center, float(np.linalg.norm(a - center))


class CloughTocherInterpolator:
    """Reduced Hsieh-Clough-Tocher interpolant over one projected layout.

    Each Delaunay triangle is split at its centroid into three cubic Bezier
    patches. The 19 Bezier ordinates per triangle are determined by the vertex
    values, vertex gradients (local least-squares fit over the Delaunay
    neighbors of each vertex), C1 continuity across the internal split edges,
    and a linearly varying normal derivative along each outer edge. The result
    is C1, exact at the electrodes, reproduces affine fields, and is linear in
    the data for the fixed layout.
    """

    def __init__(self, layout: ProjectedLayout):
        self.layout = layout
        self.triangulation = triangulate(layout)
        pts = layout.points
        tris = self.triangulation.simplices
        self._v1 = pts[tris[:, 0]]
        self._v2 = pts[tris[:, 1]]
        self._v3 = pts[tris[:, 2]]
        self._center = (self._v1 + self._v2 + self._v3) / 3.0

        # Per-vertex gradient solve: g_i = W_i @ (z[neighbors] - z[i]).
        self._grad_nb: list[np.ndarray] = []
        self._grad_w: list[np.ndarray] = []
        for i, nb in enumerate(self.triangulation.vertex_neighbors):
            nb_idx = np.asarray(nb, dtype=np.intp)
            a = pts[nb_idx] - pts[i]
            m = a.T @ a
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if abs(det) < 1e-30:
                w = np.linalg.pinv(a)
            else:
                w = np.linalg.solve(m, a.T)
            self._grad_nb.append(nb_idx)
            self._grad_w.append(w)

        # Barycentric solve matrices per triangle: lambda_12 = Tinv @ (x - v3).
        d1 = self._v1 - self._v3
        d2 = self._v2 - self._v3
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self._bary_inv = np.empty((len(tris), 2, 2))
        self._bary_inv[:, 0, 0] = d2[:, 1] / det
        self._bary_inv[:, 0, 1] = -d2[:, 0] / det
        self._bary_inv[:, 1, 0] = -d1[:, 1] / det
        self._bary_inv[:, 1, 1] = d1[:, 0] / det

        # Direction barycentrics of each outer-edge normal, one triple per mini
        # patch: coefficients (a1, a2, a3) with d = a1 (p - c) + a2 (q - c) and
        # a3 = -(a1 + a2), for (p, q) = (v1,v2), (v2,v3), (v3,v1).
        self._edge_dir = np.empty((len(tris), 3, 3))
        for k, (p, q) in enumerate(((self._v1, self._v2), (self._v2, self._v3), (self._v3, self._v1))):
            edge = q - p
            normal = np.column_stack([-edge[:, 1], edge[:, 0]])
            dp = p - self._center
            dq = q - self._center
            det_k = dp[:, 0] * dq[:, 1] - dp[:, 1] * dq[:, 0]
            a1 = (normal[:, 0] * dq[:, 1] - normal[:, 1] * dq[:, 0]) / det_k
            a2 = (dp[:, 0] * normal[:, 1] - dp[:, 1] * normal[:, 0]) / det_k
            self._edge_dir[:, k, 0] = a1
            self._edge_dir[:, k, 1] = a2
            self._edge_dir[:, k, 2] = -(a1 + a2)

        self._grid_cache: dict[tuple[int, float], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # -- data-dependent pieces -------------------------------------------------

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """Least-squares plane-fit gradient at every electrode."""
        values = np.asarray(values, dtype=np.float64)
        grads = np.empty((len(values), 2))
        for i, (nb, w) in enumerate(zip(self._grad_nb, self._grad_w)):
            grads[i] = w @ (values[nb] - values[i])
        return grads

    def _ordinates(self, values: np.ndarray) -> np.ndarray:
        """The 19 Bezier ordinates per triangle, stacked as (n_triangles, 19).

        Order: z1 z2 z3 | t12 t21 t23 t32 t31 t13 | e1 e2 e3 | A B C | u1 u2 u3 | bc
        where t_pq sits on outer edge p->q next to p, e_i / u_i sit on the
        internal edge from vertex i to the centroid, A/B/C are the interior
        ordinates of the mini patches opposite v3/v1/v2, and bc is the center.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self.layout),):
            raise ValidationError(
                f"need one value per electrode ({len(self.layout)}), got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("electrode values must be finite")
        grads = self.gradients(values)
        tris = self.triangulation.simplices
        z = values[tris]  # (T, 3)
        g1, g2, g3 = grads[tris[:, 0]], grads[tris[:, 1]], grads[tris[:, 2]]
        v1, v2, v3, c = self._v1, self._v2, self._v3, self._center

        def along(z0, g, frm, to):
            return z0 + ((to - frm) * g).sum(axis=1) / 3.0

        e1 = along(z[:, 0], g1, v1, c)
        e2 = along(z[:, 1], g2, v2, c)
        e3 = along(z[:, 2], g3, v3, c)
        t12 = along(z[:, 0], g1, v1, v2)
        t21 = along(z[:, 1], g2, v2, v1)
        t23 = along(z[:, 1], g2, v2, v3)
        t32 = along(z[:, 2], g3, v3, v2)
        t31 = along(z[:, 2], g3, v3, v1)
        t13 = along(z[:, 0], g1, v1, v3)

        def interior(k, z_p, t_pq, e_p, t_qp, z_q, e_q):
            a1, a2, a3 = self._edge_dir[:, k, 0], self._edge_dir[:, k, 1], self._edge_dir[:, k, 2]
            return (
                a1 * z_p + (a2 - 2 * a1) * t_pq + a3 * e_p + (a1 - 2 * a2) * t_qp + a2 * z_q + a3 * e_q
            ) / (2 * a3)

        b_a = interior(0, z[:, 0], t12, e1, t21, z[:, 1], e2)
        b_b = interior(1, z[:, 1], t23, e2, t32, z[:, 2], e3)
        b_c_patch = interior(2, z[:, 2], t31, e3, t13, z[:, 0], e1)

        u1 = (b_c_patch + b_a + e1) / 3.0
        u2 = (b_a + b_b + e2) / 3.0
        u3 = (b_b + b_c_patch + e3) / 3.0
        bc = (u1 + u2 + u3) / 3.0

        return np.column_stack(
            [z[:, 0], z[:, 1], z[:, 2], t12, t21, t23, t32, t31, t13, e1, e2, e3, b_a, b_b, b_c_patch, u1, u2, u3, bc]
        )

    # -- point location and evaluation ----------------------------------------

    def _locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First containing triangle per point (canonical scan order), barycentrics."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        rel = points[None, :, :] - self._v3[:, None, :]  # (T, P, 2)
        lam12 = np.einsum("tij,tpj->tpi", self._bary_inv, rel)
        lam = np.concatenate([lam12, 1.0 - lam12.sum(axis=2, keepdims=True)], axis=2)
        inside = (lam >= -_INSIDE_TOL).all(axis=2)  # (T, P)
        has_tri = inside.any(axis=0)
        tri_idx = np.where(has_tri, inside.argmax(axis=0), -1)
        bary = np.where(
            has_tri[:, None],
            lam[np.clip(tri_idx, 0, None), np.arange(points.shape[0])],
            np.nan,
        )
        return tri_idx, bary

    @staticmethod
    def _eval_patches(ordinates: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Evaluate the mini patch selected by the smallest barycentric coordinate."""
        (z1, z2, z3, t12, t21, t23, t32, t31, t13, e1, e2, e3, b_a, b_b, b_c, u1, u2, u3, bc) = ordinates.T
        mini = bary.argmin(axis=1)
        n = len(bary)
        ten = np.empty((n, 10))
        abg = np.empty((n, 3))
        for smallest, oset in (
            (2, (z1, z2, bc, t12, t21, e1, e2, u1, u2, b_a)),  # mini A: lambda3 smallest
            (0, (z2, z3, bc, t23, t32, e2, e3, u2, u3, b_b)),  # mini B: lambda1 smallest
            (1, (z3, z1, bc, t31, t13, e3, e1, u3, u1, b_c)),  # mini C: lambda2 smallest
        ):
            sel = mini == smallest
            if not np.any(sel):
                continue
            lam = bary[sel]
            small = lam[:, smallest]
            abg[sel, 0] = lam[:, (smallest + 1) % 3] - small
            abg[sel, 1] = lam[:, (smallest + 2) % 3] - small
            abg[sel, 2] = 3.0 * small
            ten[sel] = np.column_stack([o[sel] for o in oset])
        al, be, ga = abg[:, 0], abg[:, 1], abg[:, 2]
        b300, b030, b003, b210, b120, b201, b021, b102, b012, b111 = ten.T
        return (
            b300 * al**3
            + b030 * be**3
            + b003 * ga**3
            + 3 * b210 * al**2 * be
            + 3 * b120 * al * be**2
            + 3 * b201 * al**2 * ga
            + 3 * b021 * be**2 * ga
            + 3 * b102 * al * ga**2
            + 3 * b012 * be * ga**2
            + 6 * b111 * al * be * ga
        )

    def evaluate(self, values: np.ndarray, points: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Interpolant at arbitrary points; ``fill`` outside the convex hull."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tri_idx, bary = self._locate(points)
        out = np.full(points.shape[0], float(fill))
        hit = tri_idx >= 0
        if np.any(hit):
            ords = self._ordinates(values)
            out[hit] = self._eval_patches(ords[tri_idx[hit]], bary[hit])
        return out

    # -- fixed-grid evaluation -------------------------------------------------

    def grid_geometry(self, grid_size: int, margin: float = GRID_MARGIN) -> tuple[np.ndarray, float]:
        """Pixel-center coordinates of the evaluation grid and its half extent.

        The grid spans the square ``[-(R+m), R+m]^2`` with ``R`` the largest
        projected radius and ``m = margin * R``. Row r runs top to bottom
        (y decreasing), column c left to right (x increasing).
        """
        radius = float(np.linalg.norm(self.layout.points, axis=1).max())
        half = radius * (1.0 + margin)
        step = 2.0 * half / grid_size
        coords = -half + step * (np.arange(grid_size) + 0.5)
        xs, ys = np.meshgrid(coords, coords[::-1])
        return np.column_stack([xs.ravel(), ys.ravel()]), half

    def _grid_cells(self, grid_size: int, margin: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        key = (grid_size, margin)
        if key not in self._grid_cache:
            pts, _ = self.grid_geometry(grid_size, margin)
            tri_idx, bary = self._locate(pts)
            self._grid_cache[key] = (pts, tri_idx, bary)
        return self._grid_cache[key]

    def grid(self, values: np.ndarray, grid_size: int = 32, margin: float = GRID_MARGIN, fill: float = 0.0) -> np.ndarray:
        """Interpolated map on the fixed square grid."""
        _, tri_idx, bary = self._grid_cells(grid_size, margin)
        flat = np.full(grid_size * grid_size, float(fill))
        hit = tri_idx >= 0
        if np.any(hit):
            ords = self._ordinates(values)
            flat[hit] = self._eval_patches(ords[tri_idx[hit]], bary[hit])
        return flat.reshape(grid_size, grid_size)

    def inside_mask(self, grid_size: int = 32, margin: float = GRID_MARGIN) -> np.ndarray:
        """Boolean grid: which pixels fall inside the electrode hull."""
        _, tri_idx, _ = self._grid_cells(grid_size, margin)
        return (tri_idx >= 0).reshape(grid_size, grid_size)


def interpolate(layout: ProjectedLayout, values: np.ndarray, grid_size: int = 32) -> np.ndarray:
    """One-shot Clough-Tocher map; build a :class:`CloughTocherInterpolator` to reuse."""
    return CloughTocherInterpolator(layout).grid(values, grid_size)


@dataclass(frozen=True)
class TopoMap:
    """Stacked per-band head maps for one window: shape (grid, grid, n_bands)."""

    grid: np.ndarray
    band_names: tuple[str, ...]
    trial_id: str
    start_index: int

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or g.shape[0] != g.shape[1] or g.shape[2] != len(self.band_names):
            raise ValidationError(f"tensor shape {g.shape} does not match {len(self.band_names)} bands")
        if not np.all(np.isfinite(g)):
            raise ValidationError("tensor contains non-finite values")
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)


class TopoMapBuilder:
    """Window -> tensor pipeline with the montage-dependent parts precomputed."""

    def __init__(
        self,
        montage: Montage,
        channel_names: Sequence[str],
        scheme: BandScheme = BandScheme(),
        grid_size: int = 32,
    ):
        missing = [ch for ch in channel_names if ch not in montage]
        if missing:
            raise ValidationError(f"window channels not present in montage: {missing}")
        self.channel_names = tuple(channel_names)
        self.scheme = scheme
        self.grid_size = grid_size
        self.layout = project(montage, self.channel_names)
        self.interpolator = CloughTocherInterpolator(self.layout)

    def from_centroids(self, centroids: np.ndarray, trial_id: str, start_index: int) -> TopoMap:
        maps = np.stack(
            [self.interpolator.grid(centroids[b], self.grid_size) for b in range(self.scheme.n_bands)],
            axis=2,
        )
        return TopoMap(grid=maps, band_names=self.scheme.names, trial_id=trial_id, start_index=start_index)

    def build(self, window: Window, sample_rate: float, taper: str = "rect") -> TopoMap:
        if window.channel_names is not None and window.channel_names != self.channel_names:
            raise ValidationError(
                "window channel order does not match the builder's electrode layout"
            )
        if window.samples.shape[0] != len(self.channel_names):
            raise ValidationError(
                f"window has {window.samples.shape[0]} channels, builder expects {len(self.channel_names)}"
            )
        spectrum = power_spectrum(window, sample_rate, taper=taper)
        centroids = band_centroids(spectrum, self.scheme)
        return self.from_centroids(centroids, window.trial_id, window.start_index)


def build_tensor(
    window: Window,
    sample_rate: float,
    montage: Montage,
    channel_names: Sequence[str] | None = None,
    scheme: BandScheme = BandScheme(),
    grid_size: int = 32,
) -> TopoMap:
    """Convenience wrapper over :class:`TopoMapBuilder` for a single window.

    Channel names default to the window's own; build a :class:`TopoMapBuilder`
    directly to amortize the projection and triangulation across windows.
    """
    if channel_names is None:
        if window.channel_names is None:
            raise ValidationError("window carries no channel names; pass channel_names explicitly")
        channel_names = window.channel_names
    return TopoMapBuilder(montage, channel_names, scheme, grid_size).build(window, sample_rate)


# -- tensor container ----------------------------------------------------------


def write_tensor_file(path: str | Path, tensors: np.ndarray) -> None:
    """Write a ``TOPO`` container: (count, grid, grid, bands) float32."""
    tensors = np.asarray(tensors)
    if tensors.ndim != 4 or tensors.shape[1] != tensors.shape[2]:
        raise ValidationError(f"expected (count, grid, grid, bands) tensors, got {tensors.shape}")
    count, grid, _, bands = tensors.shape
    with open(path, "wb") as fh:
        fh.write(_TENSOR_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, grid, bands, count))
        fh.write(np.ascontiguousarray(tensors, dtype="<f4").tobytes())


def read_tensor_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _TENSOR_HEADER.size:
        raise FormatError(f"{path}: file too short for a tensor header")
    magic, version, grid, bands, count = _TENSOR_HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported tensor version {version}")
    expected = count * grid * grid * bands * 4
    payload = raw[_TENSOR_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(count, grid, grid, bands).astype(np.float64)


def save_band_images(topo: TopoMap, out_dir: str | Path, prefix: str = "") -> list[Path]:
    """Render each band of a tensor as a grayscale PNG (inspection aid)."""
    from matplotlib import image as mpl_image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for b, name in enumerate(topo.band_names):
        path = out_dir / f"{prefix}{topo.trial_id}_w{topo.start_index:06d}_{name}.png"
        band = topo.grid[:, :, b]
        span = band.max() - band.min()
        norm = (band - band.min()) / span if span > 0 else np.zeros_like(band)
        mpl_image.imsave(path, norm, cmap="gray", vmin=0.0, vmax=1.0)
        paths.append(path)
    return paths
