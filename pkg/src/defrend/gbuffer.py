"""G-buffer generation by BVH-accelerated ray casting.

The whole scene (room walls triangulated, objects posed into world space)
is flattened into one triangle soup, a median-split BVH is built over it,
and one primary ray per pixel center fills camera-space positions,
camera-space unit normals (flipped toward the camera), instance ids and
interpolated base albedo.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels, dataio
from .errors import InvalidParameter
from .scenegen import Pose, SceneGraph

LEAF_SIZE = 4


@dataclass
class TriangleSoup:
    """World-space triangles with per-corner shading attributes."""

    v0: np.ndarray   # (T,3) float64
    v1: np.ndarray
    v2: np.ndarray
    n0: np.ndarray   # (T,3) per-corner unit normals
    n1: np.ndarray
    n2: np.ndarray
    a0: np.ndarray   # (T,) per-corner base albedo
    a1: np.ndarray
    a2: np.ndarray
    instance: np.ndarray  # (T,) int32; 0 = room
    orig: np.ndarray      # (T,) int32 original triangle ids

    def __len__(self):
        return len(self.v0)

    def take(self, idx):
        return TriangleSoup(
            self.v0[idx], self.v1[idx], self.v2[idx],
            self.n0[idx], self.n1[idx], self.n2[idx],
            self.a0[idx], self.a1[idx], self.a2[idx],
            self.instance[idx], self.orig[idx])


@dataclass
class Bvh:
    bounds_min: np.ndarray  # (N,3)
    bounds_max: np.ndarray  # (N,3)
    left: np.ndarray        # (N,) child ids, -1 on leaves
    right: np.ndarray
    start: np.ndarray       # (N,) leaf triangle range (into reordered soup)
    count: np.ndarray       # > 0 marks a leaf
    permutation: np.ndarray  # (T,) original index of reordered triangle i
    soup: TriangleSoup       # reordered so leaves are contiguous

    def ray_args(self):
        s = self.soup
        return (self.bounds_min, self.bounds_max, self.left, self.right,
                self.start, self.count, s.v0, s.v1, s.v2)


def _room_triangles(room):
    w, d, h = room
    x, y = w / 2.0, d / 2.0
    c = {
        "nnn": (-x, -y, 0.0), "pnn": (x, -y, 0.0),
        "ppn": (x, y, 0.0), "npn": (-x, y, 0.0),
        "nnp": (-x, -y, h), "pnp": (x, -y, h),
        "ppp": (x, y, h), "npp": (-x, y, h),
    }
    # quads wound so the flat normal points into the room
    quads = [
        (("nnn", "npn", "ppn", "pnn"), (0, 0, 1)),    # floor
        (("nnp", "pnp", "ppp", "npp"), (0, 0, -1)),   # ceiling
        (("nnn", "pnn", "pnp", "nnp"), (0, 1, 0)),    # y = -d/2 wall
        (("ppn", "npn", "npp", "ppp"), (0, -1, 0)),   # y = +d/2 wall
        (("pnn", "ppn", "ppp", "pnp"), (-1, 0, 0)),   # x = +w/2 wall
        (("npn", "nnn", "nnp", "npp"), (1, 0, 0)),    # x = -w/2 wall
    ]
    verts, norms = [], []
    for (a, b, cc, dd), n in quads:
        for tri in ((a, b, cc), (a, cc, dd)):
            verts.append([c[k] for k in tri])
            norms.append([n, n, n])
    return np.asarray(verts, dtype=np.float64), np.asarray(norms, dtype=np.float64)


def scene_triangle_soup(scene: SceneGraph) -> TriangleSoup:
    tri_v, tri_n, tri_a, tri_i = [], [], [], []

    rv, rn = _room_triangles(scene.room)
    tri_v.append(rv)
    tri_n.append(rn)
    tri_a.append(np.ones((len(rv), 3)))
    tri_i.append(np.zeros(len(rv), dtype=np.int32))

    for obj in scene.objects:
        m = obj.mesh
        vw = obj.pose.apply(m.vertices)
        nw = obj.pose.rotate(m.vertex_normals)
        t = m.triangles
        tri_v.append(np.stack([vw[t[:, 0]], vw[t[:, 1]], vw[t[:, 2]]], axis=1))
        tri_n.append(np.stack([nw[t[:, 0]], nw[t[:, 1]], nw[t[:, 2]]], axis=1))
        tri_a.append(np.stack([m.base_albedo[t[:, 0]], m.base_albedo[t[:, 1]],
                               m.base_albedo[t[:, 2]]], axis=1))
        tri_i.append(np.full(len(t), obj.object_id, dtype=np.int32))

    v = np.concatenate(tri_v)
    n = np.concatenate(tri_n)
    a = np.concatenate(tri_a)
    inst = np.concatenate(tri_i)
    nt = len(v)
    return TriangleSoup(
        np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]),
        np.ascontiguousarray(v[:, 2]),
        np.ascontiguousarray(n[:, 0]), np.ascontiguousarray(n[:, 1]),
        np.ascontiguousarray(n[:, 2]),
        np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1]),
        np.ascontiguousarray(a[:, 2]),
        inst, np.arange(nt, dtype=np.int32))


def bvh_from_soup(soup: TriangleSoup) -> Bvh:
    nt = len(soup)
    if nt == 0:
        raise InvalidParameter("cannot build a BVH over zero triangles")
    lo = np.minimum(np.minimum(soup.v0, soup.v1), soup.v2) - 1e-9
    hi = np.maximum(np.maximum(soup.v0, soup.v1), soup.v2) + 1e-9
    centroid = (soup.v0 + soup.v1 + soup.v2) / 3.0

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    perm = np.empty(nt, dtype=np.int64)
    cursor = 0

    def new_node():
        bmin.append(None)
        bmax.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(bmin) - 1

    stack = [(np.arange(nt), new_node())]
    while stack:
        idx, node = stack.pop()
        bmin[node] = lo[idx].min(axis=0)
        bmax[node] = hi[idx].max(axis=0)
        cents = centroid[idx]
        extent = cents.max(axis=0) - cents.min(axis=0)
        if len(idx) <= LEAF_SIZE or extent.max() < 1e-12:
            perm[cursor:cursor + len(idx)] = idx
            start[node] = cursor
            count[node] = len(idx)
            cursor += len(idx)
            continue
        axis = int(np.argmax(extent))
        order = np.argsort(cents[:, axis], kind="stable")
        half = len(idx) // 2
        left[node] = new_node()
        right[node] = new_node()
        # push right first so the left subtree is laid out first
        stack.append((idx[order[half:]], right[node]))
        stack.append((idx[order[:half]], left[node]))

    return Bvh(
        bounds_min=np.asarray(bmin), bounds_max=np.asarray(bmax),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        start=np.asarray(start, dtype=np.int32),
        count=np.asarray(count, dtype=np.int32),
        permutation=perm.astype(np.int32),
        soup=soup.take(perm))


def build_bvh(scene: SceneGraph) -> Bvh:
    return bvh_from_soup(scene_triangle_soup(scene))


def cast_nearest(bvh: Bvh, origins, dirs, tmin=1e-7, tmax=None):
    """Batch nearest-hit query; returns (tri, t, u, v) arrays."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = len(origins)
    if tmax is None:
        tmax = np.full(n, np.inf)
    else:
        tmax = np.ascontiguousarray(np.broadcast_to(tmax, (n,)), dtype=np.float64)
    out_tri = np.empty(n, dtype=np.int64)
    out_t = np.empty(n, dtype=np.float64)
    out_u = np.empty(n, dtype=np.float64)
    out_v = np.empty(n, dtype=np.float64)
    _kernels.nearest_batch(*bvh.ray_args(), bvh.soup.orig, origins, dirs,
                           float(tmin), tmax, out_tri, out_t, out_u, out_v)
    return out_tri, out_t, out_u, out_v


def cast_anyhit(bvh: Bvh, origins, dirs, tmax, tmin=0.0):
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = len(origins)
    tmax = np.ascontiguousarray(np.broadcast_to(tmax, (n,)), dtype=np.float64)
    out = np.zeros(n, dtype=np.uint8)
    _kernels.anyhit_batch(*bvh.ray_args(), origins, dirs, float(tmin), tmax, out)
    return out.astype(bool)


@dataclass
class GBuffer:
    width: int
    height: int
    x: np.ndarray            # (H,W,3) float32 camera-space positions
    n: np.ndarray            # (H,W,3) float32 camera-space unit normals
    instance: np.ndarray     # (H,W) int32; 0 room, >=1 objects, -1 miss
    base_albedo: np.ndarray  # (H,W) float32 in [0,1]
    valid: np.ndarray        # (H,W) bool, instance >= 0
    world_to_camera: Pose

    def validate(self):
        m = self.valid
        if m.any():
            norms = np.linalg.norm(self.n[m], axis=-1)
            if not np.allclose(norms, 1.0, atol=1e-5):
                raise InvalidParameter("valid-pixel normals must be unit")
            if (self.x[m][:, 2] <= 0).any():
                raise InvalidParameter("valid pixels must lie in front of camera")


def camera_rays(scene: SceneGraph, width: int, height: int):
    """Per-pixel-center rays: camera-space dirs plus world origins/dirs."""
    cam = scene.camera
    scale = height / cam.height
    fx, fy = cam.fx * scale, cam.fy * scale
    cx, cy = width / 2.0, height / 2.0
    u = (np.arange(width) + 0.5 - cx) / fx
    v = (np.arange(height) + 0.5 - cy) / fy
    uu, vv = np.meshgrid(u, v)
    d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    w2c = scene.world_to_camera
    d_world = d.reshape(-1, 3) @ w2c.rotation
    origin = w2c.inverse().translation
    return d.reshape(-1, 3), d_world, origin


def raycast_gbuffer(scene: SceneGraph, bvh: Bvh, width: int, height: int) -> GBuffer:
    if width < 8 or height < 8:
        raise InvalidParameter("resolution must be at least 8x8")
    d_cam, d_world, origin = camera_rays(scene, width, height)
    npx = width * height
    origins = np.broadcast_to(origin, (npx, 3))
    tri, t, bu, bv = cast_nearest(bvh, origins, d_world)

    hit = tri >= 0
    s = bvh.soup
    x = np.zeros((npx, 3))
    n = np.zeros((npx, 3))
    albedo = np.zeros(npx)
    inst = np.full(npx, -1, dtype=np.int32)
    if hit.any():
        th = tri[hit]
        w = 1.0 - bu[hit] - bv[hit]
        p_world = origins[hit] + t[hit, None] * d_world[hit]
        x[hit] = scene.world_to_camera.apply(p_world)
        nw = (w[:, None] * s.n0[th] + bu[hit, None] * s.n1[th]
              + bv[hit, None] * s.n2[th])
        nw /= np.maximum(np.linalg.norm(nw, axis=1, keepdims=True), 1e-12)
        flip = np.sum(nw * d_world[hit], axis=1) > 0
        nw[flip] = -nw[flip]
        n[hit] = nw @ scene.world_to_camera.rotation.T
        albedo[hit] = w * s.a0[th] + bu[hit] * s.a1[th] + bv[hit] * s.a2[th]
        inst[hit] = s.instance[th]

    shape = (height, width)
    return GBuffer(
        width=width, height=height,
        x=x.reshape(*shape, 3).astype(np.float32),
        n=n.reshape(*shape, 3).astype(np.float32),
        instance=inst.reshape(shape),
        base_albedo=np.clip(albedo, 0.0, 1.0).reshape(shape).astype(np.float32),
        valid=(inst >= 0).reshape(shape),
        world_to_camera=scene.world_to_camera)


def save_gbuffer(dirpath, gbuf: GBuffer) -> None:
    os.makedirs(dirpath, exist_ok=True)
    dataio.save_tensor(os.path.join(dirpath, "X.tnsr"), gbuf.x)
    dataio.save_tensor(os.path.join(dirpath, "N.tnsr"), gbuf.n)
    dataio.save_tensor(os.path.join(dirpath, "instance.tnsr"), gbuf.instance)
    dataio.save_tensor(os.path.join(dirpath, "baseAlbedo.tnsr"), gbuf.base_albedo)
    dataio.save_tensor(os.path.join(dirpath, "valid.tnsr"),
                       gbuf.valid.astype(np.uint8))
    dataio.write_json(os.path.join(dirpath, "camera.json"),
                      {"worldToCamera": gbuf.world_to_camera.to_dict(),
                       "width": gbuf.width, "height": gbuf.height})


def load_gbuffer(dirpath) -> GBuffer:
    meta = dataio.read_json(os.path.join(dirpath, "camera.json"))
    x = dataio.load_tensor(os.path.join(dirpath, "X.tnsr"))
    return GBuffer(
        width=int(meta["width"]), height=int(meta["height"]),
        x=x,
        n=dataio.load_tensor(os.path.join(dirpath, "N.tnsr")),
        instance=dataio.load_tensor(os.path.join(dirpath, "instance.tnsr")),
        base_albedo=dataio.load_tensor(os.path.join(dirpath, "baseAlbedo.tnsr")),
        valid=dataio.load_tensor(os.path.join(dirpath, "valid.tnsr")).astype(bool),
        world_to_camera=Pose.from_dict(meta["worldToCamera"]))
