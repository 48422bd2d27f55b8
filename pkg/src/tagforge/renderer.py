"""Procedural humanoid mesh and a deterministic z-buffer rasterizer.

World frame: y up, the person faces +z, feet on the plane y = 0.

Every curved surface is a lathe whose angular samples are mirror-symmetric
bit for bit, and every lathe cell is a triangle fan around a centre vertex.
Together with sign-symmetric camera maths this makes the renders of a
left/right symmetric subject exactly mirrored when the camera azimuth is
negated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from numba import njit

from .scene_model import JOINTS, Pattern, PersonSpec, Pose, RenderOptions

VERTICAL_FOV_DEG = 45.0
NEAR_PLANE_M = 0.05


class RenderError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle soup with per-triangle material colour.

    The first vertex of each triangle carries the facet's shading normal.
    """
    vertices: np.ndarray   # (N, 3) float64, metres
    normals: np.ndarray    # (N, 3) float64, unit
    triangles: np.ndarray  # (M, 3) int32
    colors: np.ndarray     # (M, 3) float64, linear RGB

    def __post_init__(self):
        n = len(self.vertices)
        if len(self.triangles) == 0:
            raise ValueError("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= n:
            raise ValueError("triangle index out of range")
        if self.normals.shape != self.vertices.shape:
            raise ValueError("normals/vertices shape mismatch")
        if self.colors.shape != (len(self.triangles), 3):
            raise ValueError("need one colour per triangle")
        for arr in (self.vertices, self.normals, self.colors):
            arr.setflags(write=False)
        self.triangles.setflags(write=False)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def anchor(self) -> np.ndarray:
        lo, hi = self.bounds()
        return (lo + hi) / 2.0

    def same_as(self, other: "Mesh") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("vertices", "normals", "triangles", "colors"))


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    rgb: np.ndarray    # (H, W, 3) float64 in [0, 1]
    alpha: np.ndarray  # (H, W) float64 in [0, 1]

    def __post_init__(self):
        h, w = self.alpha.shape
        if h < 1 or w < 1 or self.rgb.shape != (h, w, 3):
            raise ValueError("bad image buffer shape")

    @property
    def width(self) -> int:
        return self.alpha.shape[1]

    @property
    def height(self) -> int:
        return self.alpha.shape[0]


# ---------------------------------------------------------------------------
# exact trig helpers
# ---------------------------------------------------------------------------

def _reduce_deg(a: float) -> float:
    a = math.fmod(a, 360.0)
    if a > 180.0:
        a -= 360.0
    elif a <= -180.0:
        a += 360.0
    return a


def sind(a: float) -> float:
    a = _reduce_deg(a)
    exact = {0.0: 0.0, 90.0: 1.0, -90.0: -1.0, 180.0: 0.0}
    return exact[a] if a in exact else math.sin(math.radians(a))


def cosd(a: float) -> float:
    a = _reduce_deg(a)
    exact = {0.0: 1.0, 90.0: 0.0, -90.0: 0.0, 180.0: -1.0}
    return exact[a] if a in exact else math.cos(math.radians(a))


def euler_zxy(rz: float, rx: float, ry: float) -> np.ndarray:
    cz, sz, cx, sx, cy, sy = cosd(rz), sind(rz), cosd(rx), sind(rx), cosd(ry), sind(ry)
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    return Rz @ Rx @ Ry


def _apply(R: np.ndarray, t: np.ndarray, P: np.ndarray) -> np.ndarray:
    # elementwise on purpose: identical rounding for mirrored rows
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    return np.stack([R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0],
                     R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1],
                     R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]], axis=1)


# ---------------------------------------------------------------------------
# primitive builders (local frames)
# ---------------------------------------------------------------------------

class _Part:
    def __init__(self):
        self.v: List[np.ndarray] = []
        self.n: List[np.ndarray] = []
        self.t: List[np.ndarray] = []
        self.c: List[np.ndarray] = []
        self.count = 0

    def add(self, verts, norms, tris, colors):
        verts = np.asarray(verts, dtype=np.float64)
        self.v.append(verts)
        self.n.append(np.asarray(norms, dtype=np.float64))
        self.t.append(np.asarray(tris, dtype=np.int64) + self.count)
        self.c.append(np.asarray(colors, dtype=np.float64))
        self.count += len(verts)

    def arrays(self):
        return (np.concatenate(self.v), np.concatenate(self.n),
                np.concatenate(self.t), np.concatenate(self.c))


def _ring_table(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """cos/sin of 2*pi*k/n with cos[n/2-k] == -cos[k] and sin[n/2-k] == sin[k] exactly."""
    k = np.arange(n)
    t = 2.0 * np.pi * k / n
    c, s = np.cos(t), np.sin(t)
    m = (n // 2 - k) % n
    return 0.5 * (c - c[m]), 0.5 * (s + s[m])


def _lathe(profile, n_seg: int, color_fn):
    """Surface of revolution about the local y axis.

    profile: rows (y, radius, normal_y, normal_r) from top to bottom; a zero
    radius is a pole.  color_fn(band, angle_index_2x) -> rgb.
    """
    c2, s2 = _ring_table(2 * n_seg)
    verts, norms, tris, cols = [], [], [], []

    def vert(y, r, ny, nr, j):
        verts.append((r * c2[j], y, r * s2[j]))
        nn = math.hypot(ny, nr)
        norms.append((nr / nn * c2[j], ny / nn, nr / nn * s2[j]))
        return len(verts) - 1

    rings = []
    for y, r, ny, nr in profile:
        if r == 0.0:
            rings.append([vert(y, 0.0, ny, 0.0, 0)] * n_seg)
        else:
            rings.append([vert(y, r, ny, nr, 2 * k) for k in range(n_seg)])
    for b in range(len(profile) - 1):
        (y0, r0, ny0, nr0), (y1, r1, ny1, nr1) = profile[b], profile[b + 1]
        ym, rm, nym, nrm = (y0 + y1) / 2, (r0 + r1) / 2, (ny0 + ny1) / 2, (nr0 + nr1) / 2
        for k in range(n_seg):
            k1 = (k + 1) % n_seg
            jm = 2 * k + 1
            ctr = vert(ym, rm, nym, nrm, jm)
            corners = [rings[b][k], rings[b][k1], rings[b + 1][k1], rings[b + 1][k]]
            rgb = color_fn(b, jm)
            for i in range(4):
                a, bb = corners[i], corners[(i + 1) % 4]
                if a == bb:
                    continue  # collapsed pole edge
                tris.append((ctr, a, bb))
                cols.append(rgb)
    return np.array(verts), np.array(norms), np.array(tris), np.array(cols)


def _capsule_profile(length: float, radius: float, cap_rings: int = 3):
    prof = []
    for i in range(cap_rings + 1):  # top cap, pole first
        phi = (math.pi / 2) * i / cap_rings
        prof.append((radius * math.cos(phi), radius * math.sin(phi), math.cos(phi), math.sin(phi)))
    for i in range(cap_rings + 1):
        phi = (math.pi / 2) * i / cap_rings
        prof.append((-length - radius * math.sin(phi), radius * math.cos(phi), -math.sin(phi), math.cos(phi)))
    prof[0] = (prof[0][0], 0.0, 1.0, 0.0)
    prof[-1] = (prof[-1][0], 0.0, -1.0, 0.0)
    return prof


def _sphere_profile(radius: float, rings: int = 7):
    prof = []
    for i in range(rings + 1):
        phi = math.pi * i / rings
        r = 0.0 if i in (0, rings) else radius * math.sin(phi)
        prof.append((radius * math.cos(phi), r, math.cos(phi), math.sin(phi)))
    return prof


def _capsule(length, radius, rgb, n_seg=12):
    return _lathe(_capsule_profile(length, radius), n_seg, lambda b, j: rgb)


def _sym_space(lo: float, hi: float, n: int) -> np.ndarray:
    a = np.linspace(lo, hi, n + 1)
    if lo == -hi:
        a = 0.5 * (a - a[::-1])
    return a


def _box(x0, x1, y0, y1, z0, z1, color_fn, div=(1, 1, 1)):
    """Axis-aligned box; faces are grids of quads.  color_fn(center xyz) -> rgb."""
    xs, ys, zs = _sym_space(x0, x1, div[0]), _sym_space(y0, y1, div[1]), _sym_space(z0, z1, div[2])
    verts, norms, tris, cols = [], [], [], []

    def face(us, vs, make, normal):
        base = len(verts)
        for v in vs:
            for u in us:
                verts.append(make(u, v))
                norms.append(normal)
        nu = len(us)
        for j in range(len(vs) - 1):
            for i in range(nu - 1):
                a, b = base + j * nu + i, base + j * nu + i + 1
                c, d = base + (j + 1) * nu + i + 1, base + (j + 1) * nu + i
                centre = make((us[i] + us[i + 1]) / 2, (vs[j] + vs[j + 1]) / 2)
                rgb = color_fn(centre)
                tris.extend([(a, b, c), (a, c, d)])
                cols.extend([rgb, rgb])

    face(xs, ys, lambda u, v: (u, v, z1), (0.0, 0.0, 1.0))
    face(xs, ys, lambda u, v: (u, v, z0), (0.0, 0.0, -1.0))
    face(zs, ys, lambda u, v: (x1, v, u), (1.0, 0.0, 0.0))
    face(zs, ys, lambda u, v: (x0, v, u), (-1.0, 0.0, 0.0))
    face(xs, zs, lambda u, v: (u, y1, v), (0.0, 1.0, 0.0))
    face(xs, zs, lambda u, v: (u, y0, v), (0.0, -1.0, 0.0))
    return np.array(verts), np.array(norms), np.array(tris), np.array(cols)


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------

_PARENT = {
    "pelvis": None, "spine": "pelvis", "neck": "spine", "head": "neck",
    "l_shoulder": "spine", "r_shoulder": "spine", "l_elbow": "l_shoulder", "r_elbow": "r_shoulder",
    "l_hip": "pelvis", "r_hip": "pelvis", "l_knee": "l_hip", "r_knee": "r_hip",
}


def _dimensions(spec: PersonSpec) -> Dict[str, float]:
    H, b, ls = spec.stature_m, spec.bulk_scale, spec.limb_scale
    d = {"H": H}
    d["foot_h"] = 0.04 * H
    d["hip_y"] = 0.53 * H * (1.0 + 0.4 * (ls - 1.0))
    leg = d["hip_y"] - d["foot_h"]
    d["thigh"], d["shin"] = 0.53 * leg, 0.47 * leg
    d["head_r"] = 0.062 * H
    head_y = H - 1.9 * d["head_r"]
    d["neck_len"] = 0.04 * H
    neck_y = head_y - d["neck_len"]
    d["pelvis_len"] = 0.08 * H
    d["torso_len"] = neck_y - d["hip_y"] - d["pelvis_len"]
    d["torso_hw"], d["torso_hd"] = 0.105 * H * b, 0.06 * H * b
    d["upper_arm"], d["lower_arm"] = 0.17 * H * ls, 0.21 * H * ls
    d["upper_arm_r"], d["lower_arm_r"] = 0.03 * H * b, 0.024 * H * b
    d["thigh_r"], d["shin_r"] = 0.045 * H * b, 0.032 * H * b
    d["neck_r"] = 0.028 * H * b
    d["hip_x"] = 0.055 * H * b
    d["shoulder_x"] = d["torso_hw"] + 0.6 * d["upper_arm_r"]
    d["shoulder_drop"] = 0.03 * H
    return d


def _joint_offsets(d: Dict[str, float]) -> Dict[str, Tuple[float, float, float]]:
    sy = d["torso_len"] - d["shoulder_drop"]
    return {
        "pelvis": (0.0, d["hip_y"], 0.0),
        "spine": (0.0, d["pelvis_len"], 0.0),
        "neck": (0.0, d["torso_len"], 0.0),
        "head": (0.0, d["neck_len"], 0.0),
        "l_shoulder": (d["shoulder_x"], sy, 0.0),
        "r_shoulder": (-d["shoulder_x"], sy, 0.0),
        "l_elbow": (0.0, -d["upper_arm"], 0.0),
        "r_elbow": (0.0, -d["upper_arm"], 0.0),
        "l_hip": (d["hip_x"], 0.0, 0.0),
        "r_hip": (-d["hip_x"], 0.0, 0.0),
        "l_knee": (0.0, -d["thigh"], 0.0),
        "r_knee": (0.0, -d["thigh"], 0.0),
    }


def forward_kinematics(spec: PersonSpec, pose: Pose) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """World (rotation, position) of each joint before ground alignment."""
    offsets = _joint_offsets(_dimensions(spec))
    world: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for j in JOINTS:  # parents precede children in JOINTS
        R_local = euler_zxy(*pose[j])
        off = np.array([offsets[j]])
        parent = _PARENT[j]
        if parent is None:
            world[j] = (R_local, off[0])
        else:
            Rp, tp = world[parent]
            world[j] = (Rp @ R_local, _apply(Rp, tp, off)[0])
    return world


def _torso_color(spec: PersonSpec):
    base, pat, s = spec.torso_rgb, spec.pattern_rgb, spec.pattern_scale

    def fn(c):
        x, y, z = c
        if spec.torso_pattern is Pattern.stripes:
            on = math.floor(y / s) % 2 == 1
        elif spec.torso_pattern is Pattern.checker:
            on = (math.floor(abs(x) / s) + math.floor(y / s) + math.floor(abs(z) / s)) % 2 == 1
        else:
            on = False
        return pat if on else base
    return fn


def _head_color(spec: PersonSpec, n_seg: int, n_bands: int):
    _, s2 = _ring_table(2 * n_seg)

    def fn(band, j):
        back = s2[j] < -0.25          # z < 0 is the back of the head
        top = band < n_bands * 0.35
        return spec.hair_rgb if top or (back and band < n_bands * 0.65) else spec.skin_rgb
    return fn


def build_mesh(spec: PersonSpec, pose: Pose) -> Mesh:
    """Articulated low-poly humanoid for one identity in one pose."""
    d = _dimensions(spec)
    world = forward_kinematics(spec, pose)
    parts = _Part()

    def attach(joint, geom):
        v, n, t, c = geom
        R, p = world[joint]
        parts.add(_apply(R, p, v), _apply(R, np.zeros(3), n), t, c)

    legs, skin, shoes = spec.legs_rgb, spec.skin_rgb, spec.shoes_rgb
    attach("pelvis", _box(-d["torso_hw"] * 0.95, d["torso_hw"] * 0.95, -0.07 * d["H"], d["pelvis_len"],
                          -d["torso_hd"], d["torso_hd"], lambda c: legs, div=(2, 2, 2)))
    attach("spine", _box(-d["torso_hw"], d["torso_hw"], 0.0, d["torso_len"], -d["torso_hd"], d["torso_hd"],
                         _torso_color(spec), div=(8, 10, 4)))
    # capsules hang along -y from their joint; the neck one is lifted to point up
    neck = _capsule(d["neck_len"], d["neck_r"], skin)
    attach("neck", (neck[0] + np.array([0.0, d["neck_len"], 0.0]),) + neck[1:])
    n_bands = 7
    head = _lathe(_sphere_profile(d["head_r"], n_bands), 12, _head_color(spec, 12, n_bands))
    head = (head[0] + np.array([0.0, 0.9 * d["head_r"], 0.0]),) + head[1:]
    attach("head", head)
    for side in ("l", "r"):
        attach(f"{side}_shoulder", _capsule(d["upper_arm"], d["upper_arm_r"], spec.torso_rgb))
        attach(f"{side}_elbow", _capsule(d["lower_arm"], d["lower_arm_r"], skin))
        attach(f"{side}_hip", _capsule(d["thigh"], d["thigh_r"], legs))
        attach(f"{side}_knee", _capsule(d["shin"], d["shin_r"], legs))
        fw = d["shin_r"] * 1.05
        attach(f"{side}_knee", _box(-fw, fw, -d["shin"] - d["foot_h"], -d["shin"],
                                    -0.035 * d["H"], 0.11 * d["H"], lambda c: shoes))

    v, n, t, c = parts.arrays()
    v = v - np.array([0.0, v[:, 1].min(), 0.0])
    return Mesh(v, n, t.astype(np.int32), c)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

@njit(cache=True)
def _rasterize(sx, sy, inv_z, tris, width, height, ids, zbuf):
    hw = width / 2.0
    hh = height / 2.0
    for t in range(tris.shape[0]):
        a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
        iz0, iz1, iz2 = inv_z[a], inv_z[b], inv_z[c]
        if iz0 <= 0.0 or iz1 <= 0.0 or iz2 <= 0.0:
            continue
        x0, y0, x1, y1, x2, y2 = sx[a], sy[a], sx[b], sy[b], sx[c], sy[c]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        # pixel (i, j) has its centre at (j + 0.5 - hw, i + 0.5 - hh)
        jlo = max(int(math.ceil(min(x0, x1, x2) + hw - 0.5)), 0)
        jhi = min(int(math.floor(max(x0, x1, x2) + hw - 0.5)), width - 1)
        ilo = max(int(math.ceil(min(y0, y1, y2) + hh - 0.5)), 0)
        ihi = min(int(math.floor(max(y0, y1, y2) + hh - 0.5)), height - 1)
        for i in range(ilo, ihi + 1):
            py = i + 0.5 - hh
            for j in range(jlo, jhi + 1):
                px = j + 0.5 - hw
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if area > 0.0:
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                else:
                    if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                        continue
                iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area
                if iz > zbuf[i, j]:
                    zbuf[i, j] = iz
                    ids[i, j] = t


def camera_basis(opts: RenderOptions):
    """Unit offset direction from anchor to camera, plus right/up/forward axes."""
    ct, st = cosd(opts.camera_depression_deg), sind(opts.camera_depression_deg)
    cp, sp = cosd(opts.camera_azimuth_deg), sind(opts.camera_azimuth_deg)
    offset = np.array([ct * sp, st, ct * cp])
    right = np.array([cp, 0.0, -sp])
    up = np.array([-st * sp, ct, -st * cp])
    return offset, right, up, -offset


def light_direction(opts: RenderOptions) -> np.ndarray:
    ce, se = cosd(opts.light_elevation_deg), sind(opts.light_elevation_deg)
    return np.array([ce * sind(opts.light_azimuth_deg), se, ce * cosd(opts.light_azimuth_deg)])


def shade(mesh: Mesh, opts: RenderOptions) -> np.ndarray:
    """Per-triangle Lambert colour."""
    n = mesh.normals[mesh.triangles[:, 0]]
    l = light_direction(opts)
    ndotl = n[:, 0] * l[0] + n[:, 1] * l[1] + n[:, 2] * l[2]
    k = np.clip(opts.ambient + opts.light_intensity * np.maximum(0.0, ndotl), 0.0, 1.0)
    return mesh.colors * k[:, None]


def project(mesh: Mesh, opts: RenderOptions, canvas_h: int):
    """Screen coordinates relative to the canvas centre (x right, y down) and 1/depth."""
    offset, right, up, fwd = camera_basis(opts)
    cam = mesh.anchor() + opts.camera_distance_m * offset
    rel = mesh.vertices - cam
    dx, dy, dz = rel[:, 0], rel[:, 1], rel[:, 2]
    xv = dx * right[0] + dy * right[1] + dz * right[2]
    yv = dx * up[0] + dy * up[1] + dz * up[2]
    zv = dx * fwd[0] + dy * fwd[1] + dz * fwd[2]
    focal = (canvas_h / 2.0) / math.tan(math.radians(VERTICAL_FOV_DEG / 2.0))
    safe = np.where(zv > NEAR_PLANE_M, zv, 1.0)
    inv_z = np.where(zv > NEAR_PLANE_M, 1.0 / safe, -1.0)
    return focal * xv * inv_z, -focal * yv * inv_z, inv_z


def render(mesh: Mesh, opts: RenderOptions, canvas_w: int, canvas_h: int) -> ImageBuffer:
    """Rasterize the mesh as seen from the option's camera.  Alpha is 1 on covered pixels."""
    if canvas_w < 16 or canvas_h < 16:
        raise ValueError("canvas must be at least 16x16")
    sx, sy, inv_z = project(mesh, opts, canvas_h)
    ids = np.full((canvas_h, canvas_w), -1, dtype=np.int64)
    zbuf = np.zeros((canvas_h, canvas_w), dtype=np.float64)
    _rasterize(sx, sy, inv_z, mesh.triangles, canvas_w, canvas_h, ids, zbuf)
    covered = ids >= 0
    if not covered.any():
        raise RenderError("subject out of frame")
    colors = shade(mesh, opts)
    rgb = np.zeros((canvas_h, canvas_w, 3), dtype=np.float64)
    rgb[covered] = colors[ids[covered]]
    return ImageBuffer(rgb, covered.astype(np.float64))
