"""Linear-space compositing of the light buffers and the filmic tone map.

I_HDR = (Ddir + Dind) * Dcol + (Gdir + Gind) * Gcol, with Dcol the albedo
map and Gcol the (achromatic) specularity broadcast to RGB.  The tone map
is the Hejl / Burgess-Dawson rational fit with its built-in display
response, so no extra gamma is applied.
"""

import numpy as np

from .errors import ShapeMismatch
from .oracle import LightBuffers
from .randomize import MaterialMaps

TONE_TOE = 0.004


def composite_hdr(buffers: LightBuffers, d_col: np.ndarray,
                  g_col: np.ndarray) -> np.ndarray:
    shape = buffers.ddir.shape
    for name, arr in (("Dind", buffers.dind), ("Gdir", buffers.gdir),
                      ("Gind", buffers.gind), ("Dcol", d_col), ("Gcol", g_col)):
        if arr.shape != shape:
            raise ShapeMismatch(f"{name} shape {arr.shape} != Ddir {shape}")
    d = buffers.ddir.astype(np.float64) + buffers.dind.astype(np.float64)
    g = buffers.gdir.astype(np.float64) + buffers.gind.astype(np.float64)
    return d * d_col + g * g_col


def tone_map(hdr: np.ndarray) -> np.ndarray:
    """Map linear HDR radiance to display range [0,1)."""
    s = np.maximum(0.0, np.asarray(hdr, dtype=np.float64) - TONE_TOE)
    return s * (6.2 * s + 0.5) / (s * (6.2 * s + 1.7) + 0.06)


def specular_color(matmaps: MaterialMaps) -> np.ndarray:
    return np.repeat(matmaps.s[..., None].astype(np.float64), 3, axis=-1)


def render_ldr(buffers: LightBuffers, matmaps: MaterialMaps) -> np.ndarray:
    """Composite + tone map with Dcol = albedo map, Gcol = specularity."""
    hdr = composite_hdr(buffers, matmaps.a.astype(np.float64),
                        specular_color(matmaps))
    return tone_map(hdr)
