import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from defrend import gbuffer as gb  # noqa: E402
from defrend import randomize, scenegen  # noqa: E402


def make_scene(seed=42, count=3, kinds=("cube", "icosphere", "cylinder"),
               sizes=(0.3, 0.35, 0.3), scene_id=1):
    meshes = [scenegen.make_primitive(k, size=s) for k, s in zip(kinds, sizes)]
    return scenegen.place_objects(meshes, (4.0, 4.0, 2.5), count, seed,
                                  scene_id=scene_id)


@pytest.fixture(scope="session")
def scene():
    return make_scene()


@pytest.fixture(scope="session")
def bvh(scene):
    return gb.build_bvh(scene)


@pytest.fixture(scope="session")
def gbuf(scene, bvh):
    return gb.raycast_gbuffer(scene, bvh, 32, 32)


@pytest.fixture(scope="session")
def draw(scene, gbuf):
    """One randomized draw: (light, lightmaps, materials, matmaps)."""
    light = randomize.sample_light(7, scene.world_to_camera)
    lmaps = randomize.light_maps(gbuf, light)
    mats = randomize.sample_materials(scene.object_ids(), 11)
    mmaps = randomize.compose_material_maps(gbuf, mats)
    return light, lmaps, mats, mmaps


def flat_quad_gbuffer(width=16, height=16, z=2.0, n=(0.0, 0.0, -1.0),
                      extent=0.0):
    """Synthetic g-buffer of a fronto-parallel plane at camera-space z.

    extent > 0 spreads the pixels over a +-extent/2 square; extent == 0
    puts every pixel at the same point (handy for exact hand cases).
    """
    x = np.zeros((height, width, 3), dtype=np.float32)
    if extent > 0:
        xs = np.linspace(-extent / 2, extent / 2, width, dtype=np.float32)
        ys = np.linspace(-extent / 2, extent / 2, height, dtype=np.float32)
        x[..., 0], x[..., 1] = np.meshgrid(xs, ys)
    x[..., 2] = z
    nn = np.zeros_like(x)
    nn[:] = np.asarray(n, dtype=np.float32)
    return gb.GBuffer(
        width=width, height=height, x=x, n=nn,
        instance=np.zeros((height, width), dtype=np.int32),
        base_albedo=np.ones((height, width), dtype=np.float32),
        valid=np.ones((height, width), dtype=bool),
        world_to_camera=scenegen.Pose.identity())


def soup_from_triangles(tris, normals=None, albedo=1.0, instance=0):
    """TriangleSoup from an (T,3,3) vertex array, flat normals by default."""
    tris = np.asarray(tris, dtype=np.float64)
    t = len(tris)
    if normals is None:
        e1 = tris[:, 1] - tris[:, 0]
        e2 = tris[:, 2] - tris[:, 0]
        fn = np.cross(e1, e2)
        fn /= np.maximum(np.linalg.norm(fn, axis=1, keepdims=True), 1e-12)
        normals = np.stack([fn, fn, fn], axis=1)
    normals = np.asarray(normals, dtype=np.float64)
    alb = np.full((t, 3), albedo, dtype=np.float64)
    inst = np.full(t, instance, dtype=np.int32)
    return gb.TriangleSoup(
        np.ascontiguousarray(tris[:, 0]), np.ascontiguousarray(tris[:, 1]),
        np.ascontiguousarray(tris[:, 2]),
        np.ascontiguousarray(normals[:, 0]), np.ascontiguousarray(normals[:, 1]),
        np.ascontiguousarray(normals[:, 2]),
        alb[:, 0].copy(), alb[:, 1].copy(), alb[:, 2].copy(),
        inst, np.arange(t, dtype=np.int32))


def exhaustive_nearest(soup, origins, dirs, tmin=1e-7):
    """Brute-force reference intersector: loop over every triangle."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    r = len(origins)
    best_t = np.full(r, np.inf)
    best_tri = np.full(r, -1, dtype=np.int64)
    v0, v1, v2 = soup.v0, soup.v1, soup.v2
    for j in range(len(v0)):
        e1 = v1[j] - v0[j]
        e2 = v2[j] - v0[j]
        p = np.cross(dirs, e2)
        det = p @ e1
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = origins - v0[j]
        u = np.einsum("ij,ij->i", tv, p) * inv
        q = np.cross(tv, np.broadcast_to(e1, tv.shape))
        v = np.einsum("ij,ij->i", dirs, q) * inv
        t = (q @ e2) * inv
        hit = (ok & (u >= -1e-9) & (u <= 1 + 1e-9) & (v >= -1e-9)
               & (u + v <= 1 + 1e-9) & (t > tmin))
        better = hit & ((t < best_t - 1e-12)
                        | ((np.abs(t - best_t) <= 1e-12)
                           & (soup.orig[j] < np.where(best_tri >= 0,
                                                      best_tri, 2**31))))
        best_t = np.where(better, t, best_t)
        best_tri = np.where(better, soup.orig[j], best_tri)
    return best_tri, best_t
