"""Discrete point clouds for rectangular acoustic-structure layouts.

A layout is an outer rectangle of fluid with a solid rectangle inside
(elastic wall topped by a thin metasurface band split into equal-width
subunits).  Three computational domains are sampled: the fluid interior,
the outer radiation boundary and the fluid-solid coupling boundary.
Interior points come from a jittered grid graded toward the solid;
boundary points are equally spaced per edge.  Everything is
deterministic per (config, seed).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-9
_MARGIN = 1e-7  # generated points keep at least this clearance off boundaries
_REFINE_WEIGHT = 3.0


class GeometryError(Exception):
    pass


class DomainTag(enum.Enum):
    PRESSURE_ACOUSTIC = "pressure_acoustic"
    PLANE_WAVE_RADIATION = "plane_wave_radiation"
    ACOUSTIC_STRUCTURE_COUPLING = "acoustic_structure_coupling"


@dataclass(frozen=True)
class Rect:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    def contains(self, x, y, shrink=0.0):
        return (self.xmin + shrink <= x <= self.xmax - shrink
                and self.ymin + shrink <= y <= self.ymax - shrink)

    def strictly_inside(self, x, y, tol=EPS):
        return (self.xmin + tol < x < self.xmax - tol
                and self.ymin + tol < y < self.ymax - tol)

    def distance(self, x, y):
        dx = max(self.xmin - x, 0.0, x - self.xmax)
        dy = max(self.ymin - y, 0.0, y - self.ymax)
        return float(np.hypot(dx, dy))


@dataclass(frozen=True)
class BoundarySample:
    point: tuple
    normal: tuple
    tangent: tuple
    subunit: int | None = None


@dataclass(frozen=True)
class CaseConfig:
    case_id: str
    outer: Rect
    solid: Rect
    thickness: float          # metasurface band at the top of the solid
    n_interior: int
    n_radiation: int
    n_coupling: int
    obs_counts: tuple = (0, 0, 0)   # (interior, radiation, coupling)
    subunits: int = 25
    refine_band: float = 3.7

    def __post_init__(self):
        s, o = self.solid, self.outer
        if not (o.xmin < s.xmin and s.xmax < o.xmax
                and o.ymin < s.ymin and s.ymax < o.ymax):
            raise GeometryError("solid must lie strictly inside the outer rectangle")
        if self.thickness <= 0 or self.thickness >= s.height:
            raise GeometryError("metasurface thickness must be in (0, solid height)")


def case1(obs=True):
    """20 m x 15 m water domain, 10 m x ~2.1 m solid centred in x."""
    return CaseConfig(
        case_id="case1",
        outer=Rect(-10.0, 10.0, -4.0, 11.0),
        solid=Rect(-5.0, 5.0, -2.0, 0.08),
        thickness=0.08,
        n_interior=1377, n_radiation=88, n_coupling=158,
        obs_counts=(30, 4, 16) if obs else (0, 0, 0),
    )


def case2(obs=True):
    # same layout as case1; the two differ only in which quantity varies
    cfg = case1(obs)
    return CaseConfig(**{**cfg.__dict__, "case_id": "case2"})


def case3(obs=True):
    return CaseConfig(
        case_id="case3",
        outer=Rect(-6.0, 14.0, -4.0, 11.0),
        solid=Rect(0.0, 10.0, -2.0, 0.08),
        thickness=0.08,
        n_interior=4928, n_radiation=140, n_coupling=554,
        obs_counts=(100, 10, 40) if obs else (0, 0, 0),
    )


def manufactured_case(obs=True):
    """Unit-square desk-scale layout with a small solid slab."""
    return CaseConfig(
        case_id="manufactured",
        outer=Rect(0.0, 1.0, 0.0, 1.0),
        solid=Rect(0.3, 0.7, 0.3, 0.42),
        thickness=0.02,
        n_interior=500, n_radiation=40, n_coupling=60,
        obs_counts=(9, 1, 5) if obs else (0, 0, 0),
        refine_band=0.3,
    )


CASES = {
    "case1": case1,
    "case2": case2,
    "case3": case3,
    "manufactured": manufactured_case,
}


@dataclass
class PointCloudSet:
    """Sampled cloud for one layout: interior points plus oriented
    boundary points with outward normals and tangents."""
    case_id: str
    interior: np.ndarray                 # (N1, 2)
    radiation_points: np.ndarray         # (N2, 2)
    radiation_normals: np.ndarray
    radiation_tangents: np.ndarray
    coupling_points: np.ndarray          # (N3, 2)
    coupling_normals: np.ndarray
    coupling_tangents: np.ndarray
    coupling_subunits: np.ndarray        # (N3,), -1 where off the metasurface

    @property
    def counts(self):
        return (len(self.interior), len(self.radiation_points),
                len(self.coupling_points))

    @property
    def total(self):
        return sum(self.counts)

    def points(self, tag):
        return {
            DomainTag.PRESSURE_ACOUSTIC: self.interior,
            DomainTag.PLANE_WAVE_RADIATION: self.radiation_points,
            DomainTag.ACOUSTIC_STRUCTURE_COUPLING: self.coupling_points,
        }[tag]

    def boundary_samples(self, tag):
        if tag == DomainTag.PLANE_WAVE_RADIATION:
            pts, nrm, tan = (self.radiation_points, self.radiation_normals,
                             self.radiation_tangents)
            subs = [None] * len(pts)
        elif tag == DomainTag.ACOUSTIC_STRUCTURE_COUPLING:
            pts, nrm, tan = (self.coupling_points, self.coupling_normals,
                             self.coupling_tangents)
            subs = [int(s) if s >= 0 else None for s in self.coupling_subunits]
        else:
            raise GeometryError(f"{tag} has no boundary samples")
        return [BoundarySample(tuple(p), tuple(n), tuple(t), s)
                for p, n, t, s in zip(pts, nrm, tan, subs)]


@dataclass
class ObservationSet:
    """Indices into a cloud plus the true scattered-pressure values
    copied at those points (complex Pa)."""
    indices: dict            # DomainTag -> (k,) int array
    values: dict             # DomainTag -> (k,) complex array

    @property
    def total(self):
        return sum(len(v) for v in self.indices.values())


# ---------------------------------------------------------------------------
# classification and orientation


def classify_point(x, y, config):
    """Tag a location of the closed fluid region.

    Outer-rectangle edge -> radiation; solid surface -> coupling;
    anywhere else in the fluid -> interior.  A location strictly inside
    the solid (or outside the outer rectangle) is an error.
    """
    o, s = config.outer, config.solid
    if not (o.xmin - EPS <= x <= o.xmax + EPS
            and o.ymin - EPS <= y <= o.ymax + EPS):
        raise GeometryError(f"point ({x}, {y}) lies outside the domain")
    on_outer = (abs(x - o.xmin) <= EPS or abs(x - o.xmax) <= EPS
                or abs(y - o.ymin) <= EPS or abs(y - o.ymax) <= EPS)
    if on_outer:
        return DomainTag.PLANE_WAVE_RADIATION
    if (s.xmin - EPS <= x <= s.xmax + EPS
            and s.ymin - EPS <= y <= s.ymax + EPS):
        if s.strictly_inside(x, y):
            raise GeometryError(f"point ({x}, {y}) lies inside the solid")
        return DomainTag.ACOUSTIC_STRUCTURE_COUPLING
    return DomainTag.PRESSURE_ACOUSTIC


def boundary_normal(x, y, config):
    """Axis-aligned outward normal at a boundary location.

    Radiation normals point out of the fluid; coupling normals point
    out of the solid.  Corners belong to the vertical edge.
    """
    tag = classify_point(x, y, config)
    o, s = config.outer, config.solid
    if tag == DomainTag.PLANE_WAVE_RADIATION:
        if abs(x - o.xmin) <= EPS:
            return np.array([-1.0, 0.0])
        if abs(x - o.xmax) <= EPS:
            return np.array([1.0, 0.0])
        return np.array([0.0, -1.0]) if abs(y - o.ymin) <= EPS \
            else np.array([0.0, 1.0])
    if tag == DomainTag.ACOUSTIC_STRUCTURE_COUPLING:
        if abs(x - s.xmin) <= EPS:
            return np.array([-1.0, 0.0])
        if abs(x - s.xmax) <= EPS:
            return np.array([1.0, 0.0])
        return np.array([0.0, -1.0]) if abs(y - s.ymin) <= EPS \
            else np.array([0.0, 1.0])
    raise GeometryError(f"point ({x}, {y}) is not on a boundary")


def tangent_of(normal):
    """Unit tangent, the normal rotated a quarter turn."""
    return np.array([-normal[1], normal[0]])


def subunit_index(x, config):
    """Metasurface subunit owning abscissa x on the solid top face."""
    s = config.solid
    raw = int(np.floor(config.subunits * (x - s.xmin) / s.width))
    return min(max(raw, 0), config.subunits - 1)


# ---------------------------------------------------------------------------
# cloud construction


def _largest_remainder(weights, total):
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        raise GeometryError("target counts infeasible: no room to place points")
    quota = weights / weights.sum() * total
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _in_fluid(x, y, config, margin):
    o, s = config.outer, config.solid
    if not o.contains(x, y, shrink=margin):
        return False
    return s.distance(x, y) > margin


def _sample_interior(config, rng):
    o, s = config.outer, config.solid
    n = config.n_interior
    ncells = max(1, round(n / 2))
    nx = max(1, round(np.sqrt(ncells * o.width / o.height)))
    ny = max(1, int(np.ceil(ncells / nx)))
    xs = np.linspace(o.xmin, o.xmax, nx + 1)
    ys = np.linspace(o.ymin, o.ymax, ny + 1)

    cells, weights = [], []
    for j in range(ny):
        for i in range(nx):
            cell = Rect(xs[i], xs[i + 1], ys[j], ys[j + 1])
            probes = [(cell.xmin + _MARGIN, cell.ymin + _MARGIN),
                      (cell.xmax - _MARGIN, cell.ymin + _MARGIN),
                      (cell.xmin + _MARGIN, cell.ymax - _MARGIN),
                      (cell.xmax - _MARGIN, cell.ymax - _MARGIN),
                      ((cell.xmin + cell.xmax) / 2, (cell.ymin + cell.ymax) / 2)]
            frac = sum(_in_fluid(px, py, config, _MARGIN) for px, py in probes) / 5.0
            if frac == 0.0:
                continue
            cx, cy = (cell.xmin + cell.xmax) / 2, (cell.ymin + cell.ymax) / 2
            near = s.distance(cx, cy) <= config.refine_band
            cells.append(cell)
            weights.append(frac * (_REFINE_WEIGHT if near else 1.0))

    counts = _largest_remainder(weights, n)
    pts = np.empty((n, 2))
    k = 0
    for cell, m in zip(cells, counts):
        for _ in range(m):
            for _attempt in range(500):
                x = rng.uniform(cell.xmin, cell.xmax)
                y = rng.uniform(cell.ymin, cell.ymax)
                if _in_fluid(x, y, config, _MARGIN):
                    pts[k] = (x, y)
                    k += 1
                    break
            else:
                raise GeometryError(
                    "target counts infeasible: could not place an interior "
                    f"point in cell {cell}")
    return pts


def _edge_points(p0, p1, count):
    """count points equally spaced strictly inside the segment p0-p1."""
    t = (np.arange(count) + 0.5) / count
    return np.outer(1 - t, p0) + np.outer(t, p1)


def _sample_rect_boundary(rect, total, normals_out):
    """Equally spaced points per edge; per-edge counts follow edge length.

    ``normals_out`` is +1 to orient normals away from the rectangle
    (solid boundary) -- the outer boundary also points away from the
    rectangle's inside, which there *is* the fluid, so +1 serves both.
    """
    corners = [np.array([rect.xmin, rect.ymin]), np.array([rect.xmax, rect.ymin]),
               np.array([rect.xmax, rect.ymax]), np.array([rect.xmin, rect.ymax])]
    edges = [(corners[0], corners[1], np.array([0.0, -1.0])),
             (corners[1], corners[2], np.array([1.0, 0.0])),
             (corners[2], corners[3], np.array([0.0, 1.0])),
             (corners[3], corners[0], np.array([-1.0, 0.0]))]
    lengths = [np.linalg.norm(p1 - p0) for p0, p1, _ in edges]
    counts = _largest_remainder(lengths, total)
    pts, nrm = [], []
    for (p0, p1, n), c in zip(edges, counts):
        if c == 0:
            continue
        pts.append(_edge_points(p0, p1, c))
        nrm.append(np.tile(n * normals_out, (c, 1)))
    points = np.vstack(pts) if pts else np.empty((0, 2))
    normals = np.vstack(nrm) if nrm else np.empty((0, 2))
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    return points, normals, tangents


def build_case_geometry(config, seed):
    """Deterministic cloud for (config, seed) honouring the target counts."""
    rng = np.random.default_rng(seed)
    interior = _sample_interior(config, rng)
    rad_p, rad_n, rad_t = _sample_rect_boundary(config.outer, config.n_radiation, 1.0)
    cpl_p, cpl_n, cpl_t = _sample_rect_boundary(config.solid, config.n_coupling, 1.0)

    top_y = config.solid.ymax
    subs = np.full(len(cpl_p), -1, dtype=int)
    on_top = np.abs(cpl_p[:, 1] - top_y) <= EPS
    for i in np.where(on_top)[0]:
        subs[i] = subunit_index(cpl_p[i, 0], config)

    cloud = PointCloudSet(
        case_id=config.case_id,
        interior=interior,
        radiation_points=rad_p, radiation_normals=rad_n, radiation_tangents=rad_t,
        coupling_points=cpl_p, coupling_normals=cpl_n, coupling_tangents=cpl_t,
        coupling_subunits=subs,
    )
    if cloud.counts != (config.n_interior, config.n_radiation, config.n_coupling):
        raise GeometryError(
            f"sampler produced {cloud.counts}, expected "
            f"{(config.n_interior, config.n_radiation, config.n_coupling)}")
    return cloud


def sample_observations(cloud, counts, seed, truth):
    """Pick observation points uniformly without replacement per domain.

    ``truth`` maps each DomainTag to the complex scattered pressure of
    every point of that domain; values at the drawn indices are copied
    into the returned set.
    """
    rng = np.random.default_rng(seed)
    tags = (DomainTag.PRESSURE_ACOUSTIC, DomainTag.PLANE_WAVE_RADIATION,
            DomainTag.ACOUSTIC_STRUCTURE_COUPLING)
    indices, values = {}, {}
    for tag, want in zip(tags, counts):
        have = len(cloud.points(tag))
        if want > have:
            raise GeometryError(
                f"requested {want} observations from {tag.value} "
                f"but only {have} points exist")
        idx = np.sort(rng.choice(have, size=want, replace=False))
        indices[tag] = idx.astype(np.intp)
        values[tag] = np.asarray(truth[tag], dtype=complex)[idx] if want else \
            np.empty(0, dtype=complex)
    return ObservationSet(indices=indices, values=values)


# ---------------------------------------------------------------------------
# files: cloud CSV `x,y,tag,nx,ny,subunit`, observations CSV
# `domain,index,ps_re,ps_im`


def cloud_to_csv(cloud):
    lines = ["x,y,tag,nx,ny,subunit"]
    for x, y in cloud.interior:
        lines.append(f"{float(x)!r},{float(y)!r},{DomainTag.PRESSURE_ACOUSTIC.value},,,")
    for p, n in zip(cloud.radiation_points, cloud.radiation_normals):
        lines.append(f"{float(p[0])!r},{float(p[1])!r},{DomainTag.PLANE_WAVE_RADIATION.value},"
                     f"{float(n[0])!r},{float(n[1])!r},")
    for p, n, s in zip(cloud.coupling_points, cloud.coupling_normals,
                       cloud.coupling_subunits):
        sub = "" if s < 0 else str(int(s))
        lines.append(f"{float(p[0])!r},{float(p[1])!r},{DomainTag.ACOUSTIC_STRUCTURE_COUPLING.value},"
                     f"{float(n[0])!r},{float(n[1])!r},{sub}")
    return "\n".join(lines) + "\n"


def save_cloud(cloud, path):
    with open(path, "w", newline="\n") as f:
        f.write(cloud_to_csv(cloud))


def load_cloud(path, case_id=""):
    interior, rad, cpl = [], [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "x,y,tag,nx,ny,subunit":
            raise GeometryError(f"unexpected cloud header: {header}")
        for line in f:
            parts = line.rstrip("\n").split(",")
            x, y, tag = float(parts[0]), float(parts[1]), parts[2]
            if tag == DomainTag.PRESSURE_ACOUSTIC.value:
                interior.append((x, y))
            else:
                nx, ny = float(parts[3]), float(parts[4])
                sub = int(parts[5]) if parts[5] else -1
                (rad if tag == DomainTag.PLANE_WAVE_RADIATION.value
                 else cpl).append((x, y, nx, ny, sub))
    rad = np.asarray(rad, dtype=float).reshape(-1, 5)
    cpl = np.asarray(cpl, dtype=float).reshape(-1, 5)
    rn, cn = rad[:, 2:4], cpl[:, 2:4]
    return PointCloudSet(
        case_id=case_id,
        interior=np.asarray(interior, dtype=float).reshape(-1, 2),
        radiation_points=rad[:, :2], radiation_normals=rn,
        radiation_tangents=np.column_stack([-rn[:, 1], rn[:, 0]]),
        coupling_points=cpl[:, :2], coupling_normals=cn,
        coupling_tangents=np.column_stack([-cn[:, 1], cn[:, 0]]),
        coupling_subunits=cpl[:, 4].astype(int),
    )


def observations_to_csv(obs):
    lines = ["domain,index,ps_re,ps_im"]
    for tag in (DomainTag.PRESSURE_ACOUSTIC, DomainTag.PLANE_WAVE_RADIATION,
                DomainTag.ACOUSTIC_STRUCTURE_COUPLING):
        for i, v in zip(obs.indices[tag], obs.values[tag]):
            lines.append(f"{tag.value},{int(i)},{float(v.real)!r},{float(v.imag)!r}")
    return "\n".join(lines) + "\n"


def save_observations(obs, path):
    with open(path, "w", newline="\n") as f:
        f.write(observations_to_csv(obs))


def load_observations(path):
    indices = {tag: [] for tag in DomainTag}
    values = {tag: [] for tag in DomainTag}
    with open(path) as f:
        header = f.readline().strip()
        if header != "domain,index,ps_re,ps_im":
            raise GeometryError(f"unexpected observations header: {header}")
        for line in f:
            dom, idx, re_, im_ = line.rstrip("\n").split(",")
            tag = DomainTag(dom)
            indices[tag].append(int(idx))
            values[tag].append(complex(float(re_), float(im_)))
    return ObservationSet(
        indices={t: np.asarray(v, dtype=np.intp) for t, v in indices.items()},
        values={t: np.asarray(v, dtype=complex) for t, v in values.items()},
    )
