"""Domain-randomization samplers and per-pixel map composition.

Lights are drawn uniformly by solid angle on the upper hemisphere of
radius 1.5 m around the scene center; materials are five independent
uniforms per object (RGB albedo, roughness, specularity).  Both samplers
are pure functions of their seeds.
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DegenerateGeometry, MissingMaterial
from .gbuffer import GBuffer
from .scenegen import Pose

LIGHT_RADIUS = 1.5
LIGHT_INTENSITY = 3.0
ROUGHNESS_MIN = 0.05


@dataclass
class LightSample:
    position_scene: np.ndarray   # (3,) on the radius-1.5 upper hemisphere
    position_camera: np.ndarray  # (3,) same point in the camera frame
    intensity: float = LIGHT_INTENSITY

    def to_dict(self):
        return {"positionScene": self.position_scene.tolist(),
                "positionCamera": self.position_camera.tolist(),
                "intensity": self.intensity}

    @staticmethod
    def from_dict(d):
        return LightSample(np.asarray(d["positionScene"], dtype=np.float64),
                           np.asarray(d["positionCamera"], dtype=np.float64),
                           float(d["intensity"]))


@dataclass
class LightMaps:
    ldir: np.ndarray   # (H,W,3) float32 unit pixel->light directions
    ldist: np.ndarray  # (H,W) float32 meters


@dataclass
class MaterialSample:
    object_id: int
    albedo_rgb: np.ndarray  # (3,) in [0,1]
    roughness: float        # in [ROUGHNESS_MIN, 1]
    specularity: float      # in [0,1]

    def to_dict(self):
        return {"objectId": self.object_id,
                "albedoRgb": self.albedo_rgb.tolist(),
                "roughness": self.roughness,
                "specularity": self.specularity}

    @staticmethod
    def from_dict(d):
        return MaterialSample(int(d["objectId"]),
                              np.asarray(d["albedoRgb"], dtype=np.float64),
                              float(d["roughness"]), float(d["specularity"]))


@dataclass
class MaterialMaps:
    a: np.ndarray  # (H,W,3) float32 albedo in [0,1]
    r: np.ndarray  # (H,W) float32 roughness
    s: np.ndarray  # (H,W) float32 specularity


def hemisphere_direction(u1: float, u2: float) -> np.ndarray:
    """Uniform-by-solid-angle direction on the z>=0 hemisphere."""
    z = u1
    s = np.sqrt(max(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * u2
    return np.array([s * np.cos(phi), s * np.sin(phi), z])


def sample_light(seed: int, world_to_camera: Pose, *,
                 radius: float = LIGHT_RADIUS,
                 intensity: float = LIGHT_INTENSITY) -> LightSample:
    u = rng.uniforms(seed, 2, rng.STREAM_LIGHT)
    pos = radius * hemisphere_direction(u[0], u[1])
    return LightSample(position_scene=pos,
                       position_camera=world_to_camera.apply(pos),
                       intensity=intensity)


def light_maps(gbuffer: GBuffer, light: LightSample) -> LightMaps:
    diff = light.position_camera[None, None, :] - gbuffer.x.astype(np.float64)
    dist = np.linalg.norm(diff, axis=-1)
    m = gbuffer.valid
    if m.any() and dist[m].min() < 1e-6:
        raise DegenerateGeometry("a visible surface point coincides with the light")
    ldir = np.zeros_like(diff)
    ldir[m] = diff[m] / dist[m, None]
    ldist = np.where(m, dist, 0.0)
    return LightMaps(ldir=ldir.astype(np.float32), ldist=ldist.astype(np.float32))


def sample_materials(object_ids, seed: int, *,
                     r_min: float = ROUGHNESS_MIN,
                     fixed_roughness: float | None = None,
                     fixed_specularity: float | None = None):
    """One MaterialSample per object id, draws keyed by (seed, id).

    fixed_roughness / fixed_specularity override the sampled values (the
    albedo-only ablation); the underlying draw streams are unchanged.
    """
    if len(object_ids) == 0:
        raise MissingMaterial("object id list is empty")
    if len(set(object_ids)) != len(object_ids):
        raise MissingMaterial("object ids must be unique")
    out = []
    for oid in object_ids:
        u = rng.uniforms(seed, 5, rng.STREAM_MATERIAL, int(oid))
        rough = r_min + (1.0 - r_min) * u[3] if fixed_roughness is None \
            else float(fixed_roughness)
        spec = u[4] if fixed_specularity is None else float(fixed_specularity)
        out.append(MaterialSample(object_id=int(oid), albedo_rgb=u[:3].copy(),
                                  roughness=rough, specularity=spec))
    return out


def material_lookup(samples, max_id=None):
    """Dense per-instance tables (albedo (M,3), rough (M,), spec (M,))."""
    ids = [s.object_id for s in samples]
    m = (max(ids) if max_id is None else max_id) + 1
    albedo = np.zeros((m, 3))
    rough = np.zeros(m)
    spec = np.zeros(m)
    for s in samples:
        albedo[s.object_id] = s.albedo_rgb
        rough[s.object_id] = s.roughness
        spec[s.object_id] = s.specularity
    return albedo, rough, spec


def compose_material_maps(gbuffer: GBuffer, samples) -> MaterialMaps:
    m = gbuffer.valid
    present = np.unique(gbuffer.instance[m]) if m.any() else np.array([], int)
    known = {s.object_id for s in samples}
    missing = [int(i) for i in present if int(i) not in known]
    if missing:
        raise MissingMaterial(f"no material sample for instance ids {missing}")
    albedo, rough, spec = material_lookup(samples)
    inst = np.where(m, gbuffer.instance, 0)
    a = albedo[inst] * gbuffer.base_albedo[..., None].astype(np.float64)
    r = rough[inst]
    s = spec[inst]
    a[~m] = 0.0
    r = np.where(m, r, 0.0)
    s = np.where(m, s, 0.0)
    return MaterialMaps(a=a.astype(np.float32), r=r.astype(np.float32),
                        s=s.astype(np.float32))
