"""Numba kernels: BVH traversal and the indirect-lighting gather loop.

All kernels are deterministic for any thread count: parallel loops write
only to their own pixel/ray slot and every random number is a pure
function of (stream seed, pixel, sample, dim) via splitmix64 mixing that
matches rng.uniform byte for byte.
"""

import numpy as np
from numba import njit, prange

U64 = np.uint64
_C1 = U64(0x9E3779B97F4A7C15)
_C2 = U64(0xBF58476D1CE4E5B9)
_C3 = U64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

_STACK = 128
_TIE_EPS = 1e-12


@njit(cache=True, inline="always")
def _mix64(x):
    z = x + _C1
    z = (z ^ (z >> U64(30))) * _C2
    z = (z ^ (z >> U64(27))) * _C3
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _u01(base, a, b, c):
    h = _mix64(base ^ U64(a))
    h = _mix64(h ^ U64(b))
    h = _mix64(h ^ U64(c))
    return float(h >> U64(11)) * _INV53


@njit(cache=True, inline="always")
def _safe_inv(d):
    if d > 1e-12 or d < -1e-12:
        return 1.0 / d
    return 1e12 if d >= 0.0 else -1e12


@njit(cache=True, inline="always")
def _aabb_enter(bmin, bmax, node, ox, oy, oz, ix, iy, iz, tmax):
    """Entry distance into the node box, or inf when the slab test misses."""
    t1 = (bmin[node, 0] - ox) * ix
    t2 = (bmax[node, 0] - ox) * ix
    lo = min(t1, t2)
    hi = max(t1, t2)
    t1 = (bmin[node, 1] - oy) * iy
    t2 = (bmax[node, 1] - oy) * iy
    lo = max(lo, min(t1, t2))
    hi = min(hi, max(t1, t2))
    t1 = (bmin[node, 2] - oz) * iz
    t2 = (bmax[node, 2] - oz) * iz
    lo = max(lo, min(t1, t2))
    hi = min(hi, max(t1, t2))
    if hi >= max(lo, 0.0) and lo < tmax:
        return lo
    return np.inf


@njit(cache=True, inline="always")
def _tri_t(v0, v1, v2, tri, ox, oy, oz, dx, dy, dz):
    """Moller-Trumbore; returns (t, u, v), t < 0 on miss."""
    e1x = v1[tri, 0] - v0[tri, 0]
    e1y = v1[tri, 1] - v0[tri, 1]
    e1z = v1[tri, 2] - v0[tri, 2]
    e2x = v2[tri, 0] - v0[tri, 0]
    e2y = v2[tri, 1] - v0[tri, 1]
    e2z = v2[tri, 2] - v0[tri, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if -1e-12 < det < 1e-12:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - v0[tri, 0]
    ty = oy - v0[tri, 1]
    tz = oz - v0[tri, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return -1.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True)
def _nearest(bmin, bmax, left, right, start, count,
             v0, v1, v2, orig,
             ox, oy, oz, dx, dy, dz, tmin, tmax):
    """Nearest hit; ties on t are broken toward the lower original id."""
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    stack = np.empty(_STACK, np.int32)
    tstack = np.empty(_STACK, np.float64)
    best_t = tmax
    best_tri = -1
    best_u = 0.0
    best_v = 0.0
    sp = 0
    t0 = _aabb_enter(bmin, bmax, 0, ox, oy, oz, ix, iy, iz, best_t)
    if np.isfinite(t0):
        stack[0] = 0
        tstack[0] = t0
        sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if tstack[sp] >= best_t:
            continue
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                t, u, v = _tri_t(v0, v1, v2, i, ox, oy, oz, dx, dy, dz)
                if t > tmin and (t < best_t - _TIE_EPS or
                                 (t < best_t + _TIE_EPS and
                                  (best_tri < 0 or orig[i] < orig[best_tri]))):
                    best_t = t
                    best_tri = i
                    best_u = u
                    best_v = v
        else:
            lt = _aabb_enter(bmin, bmax, left[node], ox, oy, oz, ix, iy, iz, best_t)
            rt = _aabb_enter(bmin, bmax, right[node], ox, oy, oz, ix, iy, iz, best_t)
            if lt <= rt:  # push far first so the near child pops next
                if np.isfinite(rt):
                    stack[sp] = right[node]
                    tstack[sp] = rt
                    sp += 1
                if np.isfinite(lt):
                    stack[sp] = left[node]
                    tstack[sp] = lt
                    sp += 1
            else:
                if np.isfinite(lt):
                    stack[sp] = left[node]
                    tstack[sp] = lt
                    sp += 1
                if np.isfinite(rt):
                    stack[sp] = right[node]
                    tstack[sp] = rt
                    sp += 1
    return best_tri, best_t, best_u, best_v


@njit(cache=True)
def _any_hit(bmin, bmax, left, right, start, count, v0, v1, v2,
             ox, oy, oz, dx, dy, dz, tmin, tmax):
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    stack = np.empty(_STACK, np.int32)
    sp = 0
    if np.isfinite(_aabb_enter(bmin, bmax, 0, ox, oy, oz, ix, iy, iz, tmax)):
        stack[0] = 0
        sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                t, _, _ = _tri_t(v0, v1, v2, i, ox, oy, oz, dx, dy, dz)
                if tmin < t < tmax:
                    return True
        else:
            if np.isfinite(_aabb_enter(bmin, bmax, left[node],
                                       ox, oy, oz, ix, iy, iz, tmax)):
                stack[sp] = left[node]
                sp += 1
            if np.isfinite(_aabb_enter(bmin, bmax, right[node],
                                       ox, oy, oz, ix, iy, iz, tmax)):
                stack[sp] = right[node]
                sp += 1
    return False


@njit(cache=True, parallel=True)
def nearest_batch(bmin, bmax, left, right, start, count, v0, v1, v2, orig,
                  origins, dirs, tmin, tmax,
                  out_tri, out_t, out_u, out_v):
    for r in prange(origins.shape[0]):
        tri, t, u, v = _nearest(
            bmin, bmax, left, right, start, count, v0, v1, v2, orig,
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], tmin, tmax[r])
        out_tri[r] = tri
        out_t[r] = t
        out_u[r] = u
        out_v[r] = v


@njit(cache=True, parallel=True)
def anyhit_batch(bmin, bmax, left, right, start, count, v0, v1, v2,
                 origins, dirs, tmin, tmax, out_hit):
    for r in prange(origins.shape[0]):
        out_hit[r] = _any_hit(
            bmin, bmax, left, right, start, count, v0, v1, v2,
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], tmin, tmax[r])


# ---------------------------------------------------------------------------
# shading helpers (must match the numpy formulas in oracle.py)


@njit(cache=True, inline="always")
def _on_factor(ndl, ndv, cos_phi, sigma):
    s2 = sigma * sigma
    a = 1.0 - 0.5 * s2 / (s2 + 0.33)
    b = 0.45 * s2 / (s2 + 0.09)
    cos_alpha = min(ndl, ndv)
    cos_beta = max(ndl, ndv)
    sin_alpha = np.sqrt(max(0.0, 1.0 - cos_alpha * cos_alpha))
    tan_beta = np.sqrt(max(0.0, 1.0 - cos_beta * cos_beta)) / max(cos_beta, 1e-7)
    return min(a + b * max(0.0, cos_phi) * sin_alpha * tan_beta, 1.1)


@njit(cache=True, inline="always")
def _smith_g(ndi, ndo, a2):
    li = (-1.0 + np.sqrt(1.0 + a2 * (1.0 - ndi * ndi) / (ndi * ndi))) * 0.5
    lo = (-1.0 + np.sqrt(1.0 + a2 * (1.0 - ndo * ndo) / (ndo * ndo))) * 0.5
    return 1.0 / (1.0 + li + lo)


@njit(cache=True, inline="always")
def _cos_phi_diff(lx, ly, lz, vx, vy, vz, nx, ny, nz, ndl, ndv):
    """Cosine of the azimuth between light and view around the normal."""
    px = lx - nx * ndl
    py = ly - ny * ndl
    pz = lz - nz * ndl
    qx = vx - nx * ndv
    qy = vy - ny * ndv
    qz = vz - nz * ndv
    pn = np.sqrt(px * px + py * py + pz * pz)
    qn = np.sqrt(qx * qx + qy * qy + qz * qz)
    if pn < 1e-9 or qn < 1e-9:
        return 0.0
    return (px * qx + py * qy + pz * qz) / (pn * qn)


@njit(cache=True)
def _hit_radiance(bmin, bmax, left, right, start, count,
                  v0, v1, v2, n0, n1, n2, a0, a1, a2c, inst, orig,
                  mat_albedo, mat_rough,
                  hx, hy, hz, in_dx, in_dy, in_dz, tri, u, v,
                  lpx, lpy, lpz, intensity, eps, use_on):
    """Direct diffuse radiance leaving the hit point toward -incoming dir."""
    w = 1.0 - u - v
    nx = w * n0[tri, 0] + u * n1[tri, 0] + v * n2[tri, 0]
    ny = w * n0[tri, 1] + u * n1[tri, 1] + v * n2[tri, 1]
    nz = w * n0[tri, 2] + u * n1[tri, 2] + v * n2[tri, 2]
    nl = np.sqrt(nx * nx + ny * ny + nz * nz)
    if nl < 1e-12:
        return 0.0, 0.0, 0.0
    nx /= nl
    ny /= nl
    nz /= nl
    if nx * in_dx + ny * in_dy + nz * in_dz > 0.0:  # face the incoming ray
        nx = -nx
        ny = -ny
        nz = -nz
    lx = lpx - hx
    ly = lpy - hy
    lz = lpz - hz
    dist = np.sqrt(lx * lx + ly * ly + lz * lz)
    if dist < 1e-9:
        return 0.0, 0.0, 0.0
    lx /= dist
    ly /= dist
    lz /= dist
    ndl = nx * lx + ny * ly + nz * lz
    if ndl <= 0.0:
        return 0.0, 0.0, 0.0
    if _any_hit(bmin, bmax, left, right, start, count, v0, v1, v2,
                hx + eps * nx, hy + eps * ny, hz + eps * nz,
                lx, ly, lz, 0.0, dist - eps):
        return 0.0, 0.0, 0.0
    irr = intensity * ndl / (dist * dist)
    if use_on:
        ndv = -(nx * in_dx + ny * in_dy + nz * in_dz)
        sigma = mat_rough[inst[tri]] * (np.pi / 4.0)
        cphi = _cos_phi_diff(lx, ly, lz, -in_dx, -in_dy, -in_dz,
                             nx, ny, nz, ndl, min(ndv, 1.0))
        fac = _on_factor(min(ndl, 1.0), min(max(ndv, 1e-7), 1.0), cphi, sigma)
    else:
        fac = 1.0
    base = w * a0[tri] + u * a1[tri] + v * a2c[tri]
    scale = irr * fac / np.pi * base
    m = inst[tri]
    return (scale * mat_albedo[m, 0], scale * mat_albedo[m, 1],
            scale * mat_albedo[m, 2])


@njit(cache=True, parallel=True)
def indirect_gather(bmin, bmax, left, right, start, count,
                    v0, v1, v2, n0, n1, n2, a0, a1, a2c, inst, orig,
                    pw, nw, vieww, rough_px, valid,
                    mat_albedo, mat_rough,
                    lpx, lpy, lpz, intensity,
                    n_diff, n_gloss, base_seed, eps, use_on,
                    out_d, out_g):
    """One-bounce gather: cosine-sampled diffuse, GGX-sampled glossy.

    Secondary hits contribute their direct diffuse radiance including
    their own albedo color.  Writes per-pixel means into out_d/out_g.
    """
    npx = pw.shape[0]
    for p in prange(npx):
        if valid[p] == 0:
            continue
        nx = nw[p, 0]
        ny = nw[p, 1]
        nz = nw[p, 2]
        # orthonormal tangent frame around the normal
        if abs(nx) < 0.9:
            tx, ty, tz = 0.0, nz, -ny
        else:
            tx, ty, tz = -nz, 0.0, nx
        tl = np.sqrt(tx * tx + ty * ty + tz * tz)
        tx /= tl
        ty /= tl
        tz /= tl
        bx = ny * tz - nz * ty
        by = nz * tx - nx * tz
        bz = nx * ty - ny * tx
        oxp = pw[p, 0] + eps * nx
        oyp = pw[p, 1] + eps * ny
        ozp = pw[p, 2] + eps * nz

        accdx = accdy = accdz = 0.0
        for s in range(n_diff):
            u1 = _u01(base_seed, p, s, 0)
            u2 = _u01(base_seed, p, s, 1)
            sin_t = np.sqrt(u1)
            cos_t = np.sqrt(max(0.0, 1.0 - u1))
            phi = 2.0 * np.pi * u2
            lxl = sin_t * np.cos(phi)
            lyl = sin_t * np.sin(phi)
            dx = lxl * tx + lyl * bx + cos_t * nx
            dy = lxl * ty + lyl * by + cos_t * ny
            dz = lxl * tz + lyl * bz + cos_t * nz
            tri, t, u, v = _nearest(bmin, bmax, left, right, start, count,
                                    v0, v1, v2, orig,
                                    oxp, oyp, ozp, dx, dy, dz, 0.0, np.inf)
            if tri < 0:
                continue
            hx = oxp + t * dx
            hy = oyp + t * dy
            hz = ozp + t * dz
            rr, rg, rb = _hit_radiance(
                bmin, bmax, left, right, start, count,
                v0, v1, v2, n0, n1, n2, a0, a1, a2c, inst, orig,
                mat_albedo, mat_rough, hx, hy, hz, dx, dy, dz, tri, u, v,
                lpx, lpy, lpz, intensity, eps, use_on)
            accdx += rr
            accdy += rg
            accdz += rb
        if n_diff > 0:
            out_d[p, 0] = accdx / n_diff
            out_d[p, 1] = accdy / n_diff
            out_d[p, 2] = accdz / n_diff

        accgx = accgy = accgz = 0.0
        vx = vieww[p, 0]
        vy = vieww[p, 1]
        vz = vieww[p, 2]
        ndv = nx * vx + ny * vy + nz * vz
        if ndv > 1e-6:
            alpha = max(rough_px[p] * rough_px[p], 0.0025)
            a2 = alpha * alpha
            for s in range(n_gloss):
                u1 = _u01(base_seed, p, s, 2)
                u2 = _u01(base_seed, p, s, 3)
                cos_h = np.sqrt(max(0.0, (1.0 - u1) / (1.0 + (a2 - 1.0) * u1)))
                sin_h = np.sqrt(max(0.0, 1.0 - cos_h * cos_h))
                phi = 2.0 * np.pi * u2
                hxl = sin_h * np.cos(phi)
                hyl = sin_h * np.sin(phi)
                hwx = hxl * tx + hyl * bx + cos_h * nx
                hwy = hxl * ty + hyl * by + cos_h * ny
                hwz = hxl * tz + hyl * bz + cos_h * nz
                vdh = vx * hwx + vy * hwy + vz * hwz
                if vdh <= 1e-7:
                    continue
                dx = 2.0 * vdh * hwx - vx
                dy = 2.0 * vdh * hwy - vy
                dz = 2.0 * vdh * hwz - vz
                ndl = nx * dx + ny * dy + nz * dz
                if ndl <= 1e-7:
                    continue
                tri, t, u, v = _nearest(bmin, bmax, left, right, start, count,
                                        v0, v1, v2, orig,
                                        oxp, oyp, ozp, dx, dy, dz, 0.0, np.inf)
                if tri < 0:
                    continue
                weight = (_smith_g(ndl, ndv, a2) * vdh /
                          max(ndv * cos_h, 1e-9))
                hx = oxp + t * dx
                hy = oyp + t * dy
                hz = ozp + t * dz
                rr, rg, rb = _hit_radiance(
                    bmin, bmax, left, right, start, count,
                    v0, v1, v2, n0, n1, n2, a0, a1, a2c, inst, orig,
                    mat_albedo, mat_rough, hx, hy, hz, dx, dy, dz, tri, u, v,
                    lpx, lpy, lpz, intensity, eps, use_on)
                accgx += rr * weight
                accgy += rg * weight
                accgz += rb * weight
            if n_gloss > 0:
                out_g[p, 0] = accgx / n_gloss
                out_g[p, 1] = accgy / n_gloss
                out_g[p, 2] = accgz / n_gloss
