"""Procedural scene construction.

Scenes are a box room with the floor at z=0, z up, and the "scene center"
at the origin of the floor.  Objects are dropped onto the floor with a
random yaw (full 3D rotation behind a flag), rejection-sampled until their
bounding spheres are pairwise disjoint and clear of the walls.  The camera
sits on a fixed-elevation arc looking at the scene center; its azimuth is
part of the seeded draw, so scene generation is a pure function of
(meshes, room, count, seed).
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (InvalidParameter, NonTriangularFace, ParseError,
                     PlacementFailure)

# Rec.709 luminance weights, used to decolorize per-vertex colors.
LUMA = np.array([0.2126, 0.7152, 0.0722])


# ---------------------------------------------------------------------------
# geometry containers


@dataclass
class Mesh:
    vertices: np.ndarray        # (V,3) float64, meters
    triangles: np.ndarray       # (T,3) int32, CCW outward
    vertex_normals: np.ndarray  # (V,3) float64, unit
    base_albedo: np.ndarray     # (V,) float64 in [0,1]
    name: str = "mesh"

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices - self.centroid, axis=1).max())

    def validate(self) -> None:
        v = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= v):
            raise InvalidParameter("triangle index out of range")
        norms = np.linalg.norm(self.vertex_normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise InvalidParameter("vertex normals must be unit length")
        if self.base_albedo.min() < 0 or self.base_albedo.max() > 1:
            raise InvalidParameter("base albedo must lie in [0,1]")


@dataclass
class Pose:
    rotation: np.ndarray     # (3,3)
    translation: np.ndarray  # (3,)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors) @ self.rotation.T

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self ∘ other)(x) = self(other(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def validate(self, tol: float = 1e-6) -> None:
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > tol or abs(np.linalg.det(self.rotation) - 1.0) > tol:
            raise InvalidParameter("rotation must be orthonormal with det +1")

    def to_dict(self):
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @staticmethod
    def from_dict(d):
        return Pose(np.asarray(d["rotation"], dtype=np.float64),
                    np.asarray(d["translation"], dtype=np.float64))


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int   # reference resolution the intrinsics were stated at
    height: int


@dataclass
class SceneObject:
    mesh: Mesh
    pose: Pose
    object_id: int


@dataclass
class SceneGraph:
    room: tuple            # (width, depth, height) in meters
    objects: list          # of SceneObject, object_id >= 1 (0 = room)
    camera: CameraModel
    world_to_camera: Pose
    scene_id: int = 1

    @property
    def camera_position(self) -> np.ndarray:
        inv = self.world_to_camera.inverse()
        return inv.translation

    def object_ids(self) -> list:
        return [0] + [o.object_id for o in self.objects]


# ---------------------------------------------------------------------------
# primitive meshes


def _vertex_normals_from_faces(vertices, triangles):
    """Area-weighted average of adjacent face normals, normalized."""
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    face = np.cross(e1, e2)  # magnitude = 2*area, so the sum is area-weighted
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    degenerate = norms[:, 0] < 1e-12
    acc[degenerate] = (0.0, 0.0, 1.0)
    norms[degenerate] = 1.0
    return acc / norms


def _mesh(vertices, triangles, name, normals=None, base_albedo=None):
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int32)
    if normals is None:
        normals = _vertex_normals_from_faces(vertices, triangles)
    if base_albedo is None:
        base_albedo = np.ones(len(vertices))
    m = Mesh(vertices, triangles, np.asarray(normals, dtype=np.float64),
             np.asarray(base_albedo, dtype=np.float64), name=name)
    m.validate()
    return m


_CUBE_FACES = [  # quads, CCW seen from outside
    (0, 3, 2, 1),  # -z
    (4, 5, 6, 7),  # +z
    (0, 1, 5, 4),  # -y
    (1, 2, 6, 5),  # +x
    (2, 3, 7, 6),  # +y
    (3, 0, 4, 7),  # -x
]


def _cube(size):
    s = size / 2.0
    verts = np.array([
        [-s, -s, -s], [s, -s, -s], [s, s, -s], [-s, s, -s],
        [-s, -s, s], [s, -s, s], [s, s, s], [-s, s, s],
    ])
    tris = []
    for a, b, c, d in _CUBE_FACES:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return _mesh(verts, tris, f"cube_{size:g}")


def _icosphere(size, subdivision):
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(map(tuple, verts))
    for _ in range(subdivision):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = np.add(verts[i], verts[j]) / 2.0
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    verts = np.asarray(verts) * (size / 2.0)
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return _mesh(verts, faces, f"icosphere_{size:g}_s{subdivision}", normals=normals)


def _cylinder(size, segments):
    radius, height = size / 2.0, size
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.concatenate([ring, np.full((segments, 1), -height / 2)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2)], axis=1)
    verts = np.concatenate([bottom, top,
                            [[0, 0, -height / 2]], [[0, 0, height / 2]]], axis=0)
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + j), (i, segments + j, segments + i)]  # side
        tris += [(cb, j, i), (ct, segments + i, segments + j)]           # caps
    return _mesh(verts, tris, f"cylinder_{size:g}")


def _plane(size):
    s = size / 2.0
    verts = [[-s, -s, 0], [s, -s, 0], [s, s, 0], [-s, s, 0]]
    tris = [(0, 1, 2), (0, 2, 3)]
    return _mesh(verts, tris, f"plane_{size:g}")


def make_primitive(kind: str, size: float = 1.0, subdivision: int = 2,
                   segments: int = 24) -> Mesh:
    """Build a unit-ish primitive: cube, icosphere, cylinder, or plane."""
    if size <= 0:
        raise InvalidParameter(f"size must be positive, got {size}")
    if not 0 <= subdivision <= 4:
        raise InvalidParameter(f"subdivision must be in [0,4], got {subdivision}")
    if kind == "cube":
        return _cube(size)
    if kind == "icosphere":
        return _icosphere(size, subdivision)
    if kind == "cylinder":
        if segments < 3:
            raise InvalidParameter("cylinder needs at least 3 segments")
        return _cylinder(size, segments)
    if kind == "plane":
        return _plane(size)
    raise InvalidParameter(f"unknown primitive kind {kind!r}")


# ---------------------------------------------------------------------------
# OBJ ingestion (v / vn / triangular f, 1-based indices)


def load_obj(text) -> Mesh:
    if hasattr(text, "read"):
        text = text.read()
    verts, colors, normals, faces = [], [], [], []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag, rest = parts[0], parts[1:]
        if tag == "v":
            if len(rest) not in (3, 6):
                raise ParseError("vertex needs 3 coords (plus optional rgb)", lineno)
            try:
                vals = [float(x) for x in rest]
            except ValueError:
                raise ParseError(f"bad vertex number in {raw.strip()!r}", lineno)
            verts.append(vals[:3])
            colors.append(vals[3:6] if len(vals) == 6 else None)
        elif tag == "vn":
            if len(rest) != 3:
                raise ParseError("normal needs 3 components", lineno)
            try:
                normals.append([float(x) for x in rest])
            except ValueError:
                raise ParseError(f"bad normal number in {raw.strip()!r}", lineno)
        elif tag == "f":
            if len(rest) != 3:
                raise NonTriangularFace(
                    f"face with {len(rest)} vertices; only triangles supported", lineno)
            idx = []
            for tok in rest:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ParseError(f"bad face index {tok!r}", lineno)
                if i < 1 or i > len(verts):
                    raise ParseError(f"face index {i} out of range", lineno)
                idx.append(i - 1)
            faces.append(idx)
        # other records (vt, o, g, usemtl, ...) are ignored
    if not verts or not faces:
        raise ParseError("OBJ stream contains no vertices or no faces")
    verts = np.asarray(verts, dtype=np.float64)
    tris = np.asarray(faces, dtype=np.int32)
    if len(normals) == len(verts):
        vn = np.asarray(normals, dtype=np.float64)
        vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-12)
    else:
        vn = None
    if any(c is not None for c in colors):
        albedo = np.array([
            float(np.dot(LUMA, c)) if c is not None else 1.0 for c in colors])
        albedo = np.clip(albedo, 0.0, 1.0)
    else:
        albedo = None
    return _mesh(verts, tris, "obj", normals=vn, base_albedo=albedo)


# ---------------------------------------------------------------------------
# placement


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(u1, u2, u3) -> np.ndarray:
    """Uniform SO(3) rotation from three U[0,1) draws (Shoemake quaternion)."""
    a, b = 2 * np.pi * u2, 2 * np.pi * u3
    q = np.array([
        math.sqrt(1 - u1) * math.sin(a), math.sqrt(1 - u1) * math.cos(a),
        math.sqrt(u1) * math.sin(b), math.sqrt(u1) * math.cos(b)])
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """world->camera pose; camera looks down +z, +x right, +y down."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight along up: pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
        nr = 1.0
    right /= nr
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    return Pose(r, -r @ position)


def place_objects(meshes, room, count: int, seed: int, *,
                  full_rotation: bool = False,
                  camera_distance: float = 2.0,
                  camera_elevation_deg: float = 45.0,
                  reference_resolution=(64, 64),
                  place_radius: float = 0.9,
                  max_attempts: int = 1000,
                  scene_id: int = 1) -> SceneGraph:
    """Drop `count` meshes into the room without bounding-sphere overlap.

    Pure function of its arguments: all draws come from counter-based
    streams keyed by `seed`.
    """
    if count < 1:
        raise InvalidParameter("count must be >= 1")
    if not meshes:
        raise InvalidParameter("need at least one mesh")
    w, d, h = room
    if min(w, d, h) <= 0:
        raise InvalidParameter("room dimensions must be positive")
    if min(w, d) / 2.0 <= min(m.bounding_radius for m in meshes):
        raise InvalidParameter("room too small for the smallest mesh")

    placed = []   # (SceneObject, sphere_center, radius)
    for i in range(count):
        ok = False
        for attempt in range(max_attempts):
            u = rng.uniforms(seed, 8, rng.STREAM_SCENE, i, attempt)
            mesh = meshes[int(u[0] * len(meshes)) % len(meshes)]
            r = mesh.bounding_radius
            if full_rotation:
                rot = random_rotation(u[1], u[2], u[3])
            else:
                rot = rot_z(2.0 * np.pi * u[1])
            ax = min(place_radius, w / 2.0 - r - 1e-3)
            ay = min(place_radius, d / 2.0 - r - 1e-3)
            if ax <= 0 or ay <= 0:
                continue
            x = (2.0 * u[4] - 1.0) * ax
            y = (2.0 * u[5] - 1.0) * ay
            rot_verts = mesh.vertices @ rot.T
            tz = -rot_verts[:, 2].min()  # rest on the floor
            t = np.array([x, y, tz])
            center = rot @ mesh.centroid + t
            if center[2] + r > h:  # ceiling clearance; floor is exact contact
                continue
            if any(np.linalg.norm(center - c) <= r + rr for _, c, rr in placed):
                continue
            pose = Pose(rot, t)
            placed.append((SceneObject(mesh, pose, i + 1), center, r))
            ok = True
            break
        if not ok:
            raise PlacementFailure(
                f"could not place object {i + 1} after {max_attempts} attempts")

    az = 2.0 * np.pi * rng.uniform(seed, rng.STREAM_SCENE, 10**6)
    el = math.radians(camera_elevation_deg)
    cam_pos = camera_distance * np.array(
        [math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el)])
    world_to_camera = look_at_pose(cam_pos, (0.0, 0.0, 0.0))
    rw, rh = reference_resolution
    camera = CameraModel(fx=float(rh), fy=float(rh),
                         cx=rw / 2.0, cy=rh / 2.0, width=rw, height=rh)
    return SceneGraph(room=(float(w), float(d), float(h)),
                      objects=[o for o, _, _ in placed],
                      camera=camera, world_to_camera=world_to_camera,
                      scene_id=scene_id)


# ---------------------------------------------------------------------------
# JSON serialization


def scene_to_dict(scene: SceneGraph) -> dict:
    return {
        "sceneId": scene.scene_id,
        "room": list(scene.room),
        "camera": {
            "fx": scene.camera.fx, "fy": scene.camera.fy,
            "cx": scene.camera.cx, "cy": scene.camera.cy,
            "width": scene.camera.width, "height": scene.camera.height,
            "pose": scene.world_to_camera.to_dict(),
        },
        "worldToCamera": scene.world_to_camera.to_dict(),
        "objects": [
            {
                "objectId": o.object_id,
                "pose": o.pose.to_dict(),
                "mesh": {
                    "name": o.mesh.name,
                    "vertices": o.mesh.vertices.tolist(),
                    "triangles": o.mesh.triangles.tolist(),
                    "vertexNormals": o.mesh.vertex_normals.tolist(),
                    "baseAlbedo": o.mesh.base_albedo.tolist(),
                },
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(d: dict) -> SceneGraph:
    cam = d["camera"]
    objects = []
    for od in d["objects"]:
        md = od["mesh"]
        mesh = Mesh(
            np.asarray(md["vertices"], dtype=np.float64),
            np.asarray(md["triangles"], dtype=np.int32),
            np.asarray(md["vertexNormals"], dtype=np.float64),
            np.asarray(md["baseAlbedo"], dtype=np.float64),
            name=md.get("name", "mesh"),
        )
        objects.append(SceneObject(mesh, Pose.from_dict(od["pose"]),
                                   int(od["objectId"])))
    return SceneGraph(
        room=tuple(d["room"]),
        objects=objects,
        camera=CameraModel(fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
                           width=int(cam["width"]), height=int(cam["height"])),
        world_to_camera=Pose.from_dict(d["worldToCamera"]),
        scene_id=int(d["sceneId"]),
    )
