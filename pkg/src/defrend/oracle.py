"""Ground-truth CPU shading: direct and one-bounce indirect light buffers.

Buffer semantics follow deferred-render pass conventions: the diffuse
buffers exclude the receiver's albedo and the glossy buffers exclude its
specular color, so the composited image factorizes exactly into
(Ddir+Dind)*Dcol + (Gdir+Gind)*Gcol.  Fresnel is likewise folded into the
specular color term rather than the glossy buffers.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels, rng
from .errors import ShapeMismatch
from .gbuffer import Bvh, GBuffer, cast_anyhit
from .randomize import LightMaps, LightSample, MaterialMaps, material_lookup

ALPHA_MIN = 0.0025  # GGX is singular as alpha -> 0
ON_SIGMA_SCALE = np.pi / 4.0  # shared roughness scalar -> Oren-Nayar sigma


@dataclass
class LightBuffers:
    ddir: np.ndarray  # (H,W,3) float32, linear HDR
    dind: np.ndarray
    gdir: np.ndarray
    gind: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.ddir, self.dind, self.gdir, self.gind],
                              axis=-1)

    @staticmethod
    def from_stacked(arr) -> "LightBuffers":
        return LightBuffers(ddir=arr[..., 0:3], dind=arr[..., 3:6],
                            gdir=arr[..., 6:9], gind=arr[..., 9:12])


@dataclass
class ShadeConfig:
    indirect_samples: int = 16
    indirect_glossy_samples: int = 4
    shadow_epsilon: float = 1e-4
    seed: int = 0
    oren_nayar: bool = True


def oren_nayar_factor(n_dot_l, n_dot_v, phi_diff, sigma):
    """Qualitative rough-diffuse factor; 1.0 exactly at sigma=0.

    Clamped to 1.1 to bound the well-known grazing blow-up of the
    qualitative model.
    """
    return _on_factor_from_cos(n_dot_l, n_dot_v, np.cos(phi_diff), sigma)


def _on_factor_from_cos(n_dot_l, n_dot_v, cos_phi, sigma):
    n_dot_l = np.asarray(n_dot_l, dtype=np.float64)
    n_dot_v = np.asarray(n_dot_v, dtype=np.float64)
    s2 = np.square(sigma)
    a = 1.0 - 0.5 * s2 / (s2 + 0.33)
    b = 0.45 * s2 / (s2 + 0.09)
    cos_alpha = np.minimum(n_dot_l, n_dot_v)
    cos_beta = np.maximum(n_dot_l, n_dot_v)
    sin_alpha = np.sqrt(np.maximum(0.0, 1.0 - cos_alpha * cos_alpha))
    tan_beta = (np.sqrt(np.maximum(0.0, 1.0 - cos_beta * cos_beta))
                / np.maximum(cos_beta, 1e-7))
    out = a + b * np.maximum(0.0, cos_phi) * sin_alpha * tan_beta
    return np.minimum(out, 1.1)


def ggx_d(n_dot_h, alpha):
    a2 = alpha * alpha
    denom = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def smith_g(n_dot_i, n_dot_o, alpha):
    """Height-correlated Smith masking-shadowing for GGX."""
    a2 = alpha * alpha
    li = (-1.0 + np.sqrt(1.0 + a2 * (1.0 - n_dot_i ** 2)
                         / np.maximum(n_dot_i ** 2, 1e-14))) * 0.5
    lo = (-1.0 + np.sqrt(1.0 + a2 * (1.0 - n_dot_o ** 2)
                         / np.maximum(n_dot_o ** 2, 1e-14))) * 0.5
    return 1.0 / (1.0 + li + lo)


def ggx_specular(n, wi, wo, alpha):
    """GGX microfacet BRDF value D*G/(4 cos_i cos_o), Fresnel excluded."""
    n = np.asarray(n, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    ndi = np.sum(n * wi, axis=-1)
    ndo = np.sum(n * wo, axis=-1)
    h = wi + wo
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    ndh = np.sum(n * h, axis=-1)
    d = ggx_d(ndh, alpha)
    g = smith_g(ndi, ndo, alpha)
    return d * g / np.maximum(4.0 * ndi * ndo, 1e-12)


def _check_res(gbuffer, matmaps, lightmaps):
    shape = gbuffer.valid.shape
    for arr in (matmaps.a[..., 0], matmaps.r, matmaps.s,
                lightmaps.ldir[..., 0], lightmaps.ldist):
        if arr.shape != shape:
            raise ShapeMismatch(
                f"map shape {arr.shape} does not match g-buffer {shape}")


def shade_direct(gbuffer: GBuffer, matmaps: MaterialMaps,
                 lightmaps: LightMaps, light: LightSample, bvh: Bvh,
                 cfg: ShadeConfig):
    """Single-reflection lighting with hard point-light shadows.

    Returns (Ddir, Gdir): irradiance times the diffuse factor / glossy
    BRDF, replicated to three channels.
    """
    _check_res(gbuffer, matmaps, lightmaps)
    h, w = gbuffer.valid.shape
    m = gbuffer.valid
    n = gbuffer.n.astype(np.float64)
    ldir = lightmaps.ldir.astype(np.float64)
    ldist = lightmaps.ldist.astype(np.float64)
    x = gbuffer.x.astype(np.float64)

    ndl = np.sum(n * ldir, axis=-1)
    lit = m & (ndl > 0.0)

    vis = np.zeros((h, w), dtype=bool)
    if lit.any():
        cam_to_world = gbuffer.world_to_camera.inverse()
        p_w = cam_to_world.apply(x[lit])
        n_w = cam_to_world.rotate(n[lit])
        eps = cfg.shadow_epsilon
        origins = p_w + eps * n_w
        dirs = (light.position_scene[None, :] - origins)
        dist_w = np.linalg.norm(dirs, axis=1)
        dirs /= dist_w[:, None]
        occluded = cast_anyhit(bvh, origins, dirs, tmax=dist_w - eps)
        vis[lit] = ~occluded

    e = np.where(vis, light.intensity * np.maximum(ndl, 0.0)
                 / np.maximum(ldist, 1e-9) ** 2, 0.0)

    view = -x
    view /= np.maximum(np.linalg.norm(view, axis=-1, keepdims=True), 1e-12)
    ndv = np.clip(np.sum(n * view, axis=-1), 1e-7, 1.0)

    if cfg.oren_nayar:
        lp = ldir - n * ndl[..., None]
        vp = view - n * ndv[..., None]
        lpn = np.linalg.norm(lp, axis=-1)
        vpn = np.linalg.norm(vp, axis=-1)
        ok = (lpn > 1e-9) & (vpn > 1e-9)
        cos_phi = np.zeros((h, w))
        cos_phi[ok] = np.sum(lp[ok] * vp[ok], axis=-1) / (lpn[ok] * vpn[ok])
        sigma = matmaps.r.astype(np.float64) * ON_SIGMA_SCALE
        factor = _on_factor_from_cos(np.clip(ndl, 0.0, 1.0), ndv, cos_phi, sigma)
    else:
        factor = np.ones((h, w))
    ddir = e * factor / np.pi

    alpha = np.maximum(matmaps.r.astype(np.float64) ** 2, ALPHA_MIN)
    hv = ldir + view
    hv /= np.maximum(np.linalg.norm(hv, axis=-1, keepdims=True), 1e-12)
    ndh = np.sum(n * hv, axis=-1)
    spec = (ggx_d(ndh, alpha) * smith_g(np.maximum(ndl, 1e-7), ndv, alpha)
            / np.maximum(4.0 * np.maximum(ndl, 1e-7) * ndv, 1e-12))
    gdir = e * spec

    rep = np.repeat
    ddir3 = rep(ddir[..., None], 3, axis=-1).astype(np.float32)
    gdir3 = rep(gdir[..., None], 3, axis=-1).astype(np.float32)
    return ddir3, gdir3


def shade_indirect(gbuffer: GBuffer, matmaps: MaterialMaps,
                   lightmaps: LightMaps, light: LightSample, bvh: Bvh,
                   cfg: ShadeConfig, materials):
    """One-bounce Monte Carlo gather (see _kernels.indirect_gather).

    `materials` is the per-object MaterialSample list: secondary hits can
    land on surfaces outside the view, whose properties are not
    recoverable from the per-pixel maps.
    """
    _check_res(gbuffer, matmaps, lightmaps)
    h, w = gbuffer.valid.shape
    out_d = np.zeros((h * w, 3))
    out_g = np.zeros((h * w, 3))
    if (cfg.indirect_samples > 0 or cfg.indirect_glossy_samples > 0) \
            and gbuffer.valid.any():
        cam_to_world = gbuffer.world_to_camera.inverse()
        x = gbuffer.x.reshape(-1, 3).astype(np.float64)
        n = gbuffer.n.reshape(-1, 3).astype(np.float64)
        p_w = cam_to_world.apply(x)
        n_w = cam_to_world.rotate(n)
        view_w = cam_to_world.translation[None, :] - p_w
        view_w /= np.maximum(np.linalg.norm(view_w, axis=1, keepdims=True), 1e-12)
        max_id = int(max(bvh.soup.instance.max(),
                         max(s.object_id for s in materials)))
        albedo, rough, _ = material_lookup(materials, max_id=max_id)
        s = bvh.soup
        base = np.uint64(rng.derive_seed(cfg.seed, rng.STREAM_SHADE))
        _kernels.indirect_gather(
            bvh.bounds_min, bvh.bounds_max, bvh.left, bvh.right,
            bvh.start, bvh.count,
            s.v0, s.v1, s.v2, s.n0, s.n1, s.n2, s.a0, s.a1, s.a2,
            s.instance, s.orig,
            np.ascontiguousarray(p_w), np.ascontiguousarray(n_w),
            np.ascontiguousarray(view_w),
            np.ascontiguousarray(matmaps.r.reshape(-1).astype(np.float64)),
            gbuffer.valid.reshape(-1).astype(np.uint8),
            albedo, rough,
            float(light.position_scene[0]), float(light.position_scene[1]),
            float(light.position_scene[2]), float(light.intensity),
            int(cfg.indirect_samples), int(cfg.indirect_glossy_samples),
            base, float(cfg.shadow_epsilon),
            np.uint8(1 if cfg.oren_nayar else 0),
            out_d, out_g)
    dind = out_d.reshape(h, w, 3).astype(np.float32)
    gind = out_g.reshape(h, w, 3).astype(np.float32)
    return dind, gind


def shade(gbuffer: GBuffer, matmaps: MaterialMaps, lightmaps: LightMaps,
          light: LightSample, bvh: Bvh, cfg: ShadeConfig,
          materials) -> LightBuffers:
    """Full oracle pass: the four light buffers for one randomized draw."""
    ddir, gdir = shade_direct(gbuffer, matmaps, lightmaps, light, bvh, cfg)
    dind, gind = shade_indirect(gbuffer, matmaps, lightmaps, light, bvh, cfg,
                                materials)
    return LightBuffers(ddir=ddir, dind=dind, gdir=gdir, gind=gind)
