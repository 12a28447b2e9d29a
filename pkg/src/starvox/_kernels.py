"""Compiled inner loops: rasterization, point membership, ray marching,
and convex-polytope clipping. All coordinates are (z, y, x) float64 voxel
units; voxel centers sit at integer coordinates."""

import math

import numpy as np
from numba import njit, prange

_BARY_EPS = 1e-9


@njit(cache=True)
def _tet_inverse(c, va, vb, vc):
    """Inverse of the 3x3 matrix with columns (va-c, vb-c, vc-c); det returned.

    A point q is inside the tetrahedron (c, va, vb, vc) iff the barycentric
    coordinates lam = Minv @ (q - c) are all >= 0 and sum to <= 1.
    """
    a0 = va[0] - c[0]
    a1 = va[1] - c[1]
    a2 = va[2] - c[2]
    b0 = vb[0] - c[0]
    b1 = vb[1] - c[1]
    b2 = vb[2] - c[2]
    d0 = vc[0] - c[0]
    d1 = vc[1] - c[1]
    d2 = vc[2] - c[2]
    det = a0 * (b1 * d2 - b2 * d1) - b0 * (a1 * d2 - a2 * d1) + d0 * (a1 * b2 - a2 * b1)
    inv = np.empty((3, 3))
    if abs(det) < 1e-300:
        return inv, 0.0
    k = 1.0 / det
    inv[0, 0] = (b1 * d2 - b2 * d1) * k
    inv[0, 1] = (b2 * d0 - b0 * d2) * k
    inv[0, 2] = (b0 * d1 - b1 * d0) * k
    inv[1, 0] = (a2 * d1 - a1 * d2) * k
    inv[1, 1] = (a0 * d2 - a2 * d0) * k
    inv[1, 2] = (a1 * d0 - a0 * d1) * k
    inv[2, 0] = (a1 * b2 - a2 * b1) * k
    inv[2, 1] = (a2 * b0 - a0 * b2) * k
    inv[2, 2] = (a0 * b1 - a1 * b0) * k
    return inv, det


@njit(cache=True)
def fill_mask(center, verts, faces, lo, mask):
    """OR into ``mask`` all voxels of the region [lo, lo+mask.shape) whose
    center lies in the polyhedron = union of tets (center, face). Exact for
    star-convex triangulated surfaces."""
    nz, ny, nx = mask.shape
    for f in range(faces.shape[0]):
        va = verts[faces[f, 0]]
        vb = verts[faces[f, 1]]
        vc = verts[faces[f, 2]]
        inv, det = _tet_inverse(center, va, vb, vc)
        if abs(det) < 1e-12:
            continue
        z0 = min(min(va[0], vb[0]), min(vc[0], center[0]))
        z1 = max(max(va[0], vb[0]), max(vc[0], center[0]))
        y0 = min(min(va[1], vb[1]), min(vc[1], center[1]))
        y1 = max(max(va[1], vb[1]), max(vc[1], center[1]))
        x0 = min(min(va[2], vb[2]), min(vc[2], center[2]))
        x1 = max(max(va[2], vb[2]), max(vc[2], center[2]))
        iz0 = max(int(math.ceil(z0 - _BARY_EPS)) - lo[0], 0)
        iz1 = min(int(math.floor(z1 + _BARY_EPS)) - lo[0], nz - 1)
        iy0 = max(int(math.ceil(y0 - _BARY_EPS)) - lo[1], 0)
        iy1 = min(int(math.floor(y1 + _BARY_EPS)) - lo[1], ny - 1)
        ix0 = max(int(math.ceil(x0 - _BARY_EPS)) - lo[2], 0)
        ix1 = min(int(math.floor(x1 + _BARY_EPS)) - lo[2], nx - 1)
        for iz in range(iz0, iz1 + 1):
            rz = iz + lo[0] - center[0]
            for iy in range(iy0, iy1 + 1):
                ry = iy + lo[1] - center[1]
                for ix in range(ix0, ix1 + 1):
                    if mask[iz, iy, ix]:
                        continue
                    rx = ix + lo[2] - center[2]
                    l0 = inv[0, 0] * rz + inv[0, 1] * ry + inv[0, 2] * rx
                    if l0 < -_BARY_EPS:
                        continue
                    l1 = inv[1, 0] * rz + inv[1, 1] * ry + inv[1, 2] * rx
                    if l1 < -_BARY_EPS:
                        continue
                    l2 = inv[2, 0] * rz + inv[2, 1] * ry + inv[2, 2] * rx
                    if l2 < -_BARY_EPS or l0 + l1 + l2 > 1.0 + _BARY_EPS:
                        continue
                    mask[iz, iy, ix] = True


@njit(cache=True)
def pair_intersection_count(center_a, verts_a, faces_a, center_b, verts_b, faces_b, lo, shape):
    """Number of voxels of the region [lo, lo+shape) inside both polyhedra."""
    mask_a = np.zeros((shape[0], shape[1], shape[2]), dtype=np.bool_)
    fill_mask(center_a, verts_a, faces_a, lo, mask_a)
    mask_b = np.zeros((shape[0], shape[1], shape[2]), dtype=np.bool_)
    fill_mask(center_b, verts_b, faces_b, lo, mask_b)
    count = 0
    for iz in range(shape[0]):
        for iy in range(shape[1]):
            for ix in range(shape[2]):
                if mask_a[iz, iy, ix] and mask_b[iz, iy, ix]:
                    count += 1
    return count


@njit(cache=True)
def pair_intersection_count_cached(mask_a, lo_a, center_b, verts_b, faces_b, lo, shape):
    """Same count as pair_intersection_count, with polyhedron a's mask
    already rasterized over its own bounding box (anchored at lo_a)."""
    mask_b = np.zeros((shape[0], shape[1], shape[2]), dtype=np.bool_)
    fill_mask(center_b, verts_b, faces_b, lo, mask_b)
    count = 0
    oz = lo[0] - lo_a[0]
    oy = lo[1] - lo_a[1]
    ox = lo[2] - lo_a[2]
    for iz in range(shape[0]):
        for iy in range(shape[1]):
            for ix in range(shape[2]):
                if mask_b[iz, iy, ix] and mask_a[iz + oz, iy + oy, ix + ox]:
                    count += 1
    return count


@njit(cache=True)
def contains_points(center, verts, faces, r_out, r_in, points, out):
    """Membership of each point in the closed polyhedron (tet-union test,
    with bounding/inscribed sphere early outs)."""
    ro2 = r_out * r_out * (1.0 + 1e-12) + 1e-12
    ri2 = r_in * r_in * (1.0 - 1e-12)
    nf = faces.shape[0]
    for p in range(points.shape[0]):
        rz = points[p, 0] - center[0]
        ry = points[p, 1] - center[1]
        rx = points[p, 2] - center[2]
        rr = rz * rz + ry * ry + rx * rx
        if rr > ro2:
            out[p] = False
            continue
        if rr <= ri2:
            out[p] = True
            continue
        hit = False
        for f in range(nf):
            inv, det = _tet_inverse(
                center, verts[faces[f, 0]], verts[faces[f, 1]], verts[faces[f, 2]]
            )
            if abs(det) < 1e-12:
                continue
            l0 = inv[0, 0] * rz + inv[0, 1] * ry + inv[0, 2] * rx
            if l0 < -_BARY_EPS:
                continue
            l1 = inv[1, 0] * rz + inv[1, 1] * ry + inv[1, 2] * rx
            if l1 < -_BARY_EPS:
                continue
            l2 = inv[2, 0] * rz + inv[2, 1] * ry + inv[2, 2] * rx
            if l2 < -_BARY_EPS or l0 + l1 + l2 > 1.0 + _BARY_EPS:
                continue
            hit = True
            break
        out[p] = hit


@njit(cache=True)
def march_single(labels, z, y, x, rays_zyx, out):
    """Radial distances at one voxel: unit steps along each ray with
    nearest-neighbor label lookup until the label changes or the volume
    boundary is exited (distance clipped there)."""
    nz, ny, nx = labels.shape
    lab = labels[z, y, x]
    n = rays_zyx.shape[0]
    t_max = 3 * (nz + ny + nx)
    for k in range(n):
        rz = rays_zyx[k, 0]
        ry = rays_zyx[k, 1]
        rx = rays_zyx[k, 2]
        d = 0.0
        for t in range(1, t_max):
            iz = int(math.floor(z + t * rz + 0.5))
            iy = int(math.floor(y + t * ry + 0.5))
            ix = int(math.floor(x + t * rx + 0.5))
            if iz < 0 or iz >= nz or iy < 0 or iy >= ny or ix < 0 or ix >= nx:
                d = t
                break
            if labels[iz, iy, ix] != lab:
                d = t
                break
        out[k] = d


@njit(cache=True, parallel=True)
def march_all(labels, rays_zyx, out):
    """Radial distances for every foreground voxel (background stays 0)."""
    nz, ny, nx = labels.shape
    n = rays_zyx.shape[0]
    t_max = 3 * (nz + ny + nx)
    for z in prange(nz):
        for y in range(ny):
            for x in range(nx):
                lab = labels[z, y, x]
                if lab == 0:
                    continue
                for k in range(n):
                    rz = rays_zyx[k, 0]
                    ry = rays_zyx[k, 1]
                    rx = rays_zyx[k, 2]
                    d = 0.0
                    for t in range(1, t_max):
                        iz = int(math.floor(z + t * rz + 0.5))
                        iy = int(math.floor(y + t * ry + 0.5))
                        ix = int(math.floor(x + t * rx + 0.5))
                        if iz < 0 or iz >= nz or iy < 0 or iy >= ny or ix < 0 or ix >= nx:
                            d = t
                            break
                        if labels[iz, iy, ix] != lab:
                            d = t
                            break
                    out[z, y, x, k] = d


@njit(cache=True)
def clip_volume(verts, offsets, planes, eps):
    """Volume of a convex polytope after clipping by half-spaces.

    The polytope comes in as a closed, outward-oriented polygon soup
    (``verts`` flat (N,3), ``offsets`` (F+1,) prefix indices); ``planes``
    rows are (nz, ny, nx, b) half-spaces n.x <= b. Clipping is successive
    Sutherland-Hodgman over the faces; each cut that removes area is closed
    with a cap polygon (convex, so ordering cap points by angle around
    their centroid in the plane is valid).
    """
    nf = offsets.shape[0] - 1
    if nf < 4:
        return 0.0
    nv = offsets[nf]
    cur_v = verts.copy()
    cur_o = offsets.copy()
    for p in range(planes.shape[0]):
        a0 = planes[p, 0]
        a1 = planes[p, 1]
        a2 = planes[p, 2]
        b = planes[p, 3]
        s = np.empty(nv)
        all_in = True
        all_out = True
        for i in range(nv):
            si = a0 * cur_v[i, 0] + a1 * cur_v[i, 1] + a2 * cur_v[i, 2] - b
            s[i] = si
            if si > eps:
                all_in = False
            if si < -eps:
                all_out = False
        if all_in:
            continue
        if all_out:
            return 0.0
        # per convex face: all vertices kept + <= 2 crossings; the cap face
        # re-emits every cap point (crossings plus on-plane vertices)
        new_v = np.empty((2 * nv + 4 * nf + 64, 3))
        new_o = np.empty(nf + 2, np.int64)
        cap = np.empty((nv + 2 * nf + 32, 3))
        ncap = 0
        nnf = 0
        cnt = 0
        new_o[0] = 0
        for f in range(nf):
            beg = cur_o[f]
            end = cur_o[f + 1]
            m = end - beg
            start = cnt
            for i in range(m):
                i0 = beg + i
                i1 = beg + (i + 1) % m
                s0 = s[i0]
                s1 = s[i1]
                if s0 <= eps:
                    new_v[cnt, 0] = cur_v[i0, 0]
                    new_v[cnt, 1] = cur_v[i0, 1]
                    new_v[cnt, 2] = cur_v[i0, 2]
                    cnt += 1
                    # vertices on the plane are cap-polygon corners: later
                    # cuts routinely pass exactly through vertices created
                    # by earlier cuts, and skipping them leaves holes
                    if s0 >= -eps and ncap < cap.shape[0]:
                        cap[ncap, 0] = cur_v[i0, 0]
                        cap[ncap, 1] = cur_v[i0, 1]
                        cap[ncap, 2] = cur_v[i0, 2]
                        ncap += 1
                if (s0 < -eps and s1 > eps) or (s0 > eps and s1 < -eps):
                    t = s0 / (s0 - s1)
                    qz = cur_v[i0, 0] + t * (cur_v[i1, 0] - cur_v[i0, 0])
                    qy = cur_v[i0, 1] + t * (cur_v[i1, 1] - cur_v[i0, 1])
                    qx = cur_v[i0, 2] + t * (cur_v[i1, 2] - cur_v[i0, 2])
                    new_v[cnt, 0] = qz
                    new_v[cnt, 1] = qy
                    new_v[cnt, 2] = qx
                    cnt += 1
                    if ncap < cap.shape[0]:
                        cap[ncap, 0] = qz
                        cap[ncap, 1] = qy
                        cap[ncap, 2] = qx
                        ncap += 1
            if cnt - start >= 3:
                nnf += 1
                new_o[nnf] = cnt
            else:
                cnt = start
        if ncap >= 3:
            # cap polygon: order points by angle in the cut plane so the
            # polygon normal equals the plane normal (outward)
            mz = 0.0
            my = 0.0
            mx = 0.0
            for i in range(ncap):
                mz += cap[i, 0]
                my += cap[i, 1]
                mx += cap[i, 2]
            mz /= ncap
            my /= ncap
            mx /= ncap
            nn = math.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
            uz = a0 / nn
            uy = a1 / nn
            ux = a2 / nn
            if abs(uz) < 0.9:
                hz, hy, hx = 1.0, 0.0, 0.0
            else:
                hz, hy, hx = 0.0, 1.0, 0.0
            # e1 = u x h, e2 = u x e1  =>  (e1, e2, u) right-handed
            e1z = uy * hx - ux * hy
            e1y = ux * hz - uz * hx
            e1x = uz * hy - uy * hz
            en = math.sqrt(e1z * e1z + e1y * e1y + e1x * e1x)
            e1z /= en
            e1y /= en
            e1x /= en
            e2z = uy * e1x - ux * e1y
            e2y = ux * e1z - uz * e1x
            e2x = uz * e1y - uy * e1z
            ang = np.empty(ncap)
            for i in range(ncap):
                dz = cap[i, 0] - mz
                dy = cap[i, 1] - my
                dx = cap[i, 2] - mx
                ang[i] = math.atan2(
                    dz * e2z + dy * e2y + dx * e2x, dz * e1z + dy * e1y + dx * e1x
                )
            order = np.argsort(ang)
            # (e1, e2, u) right-handed: ascending-angle order winds with
            # normal +u = outward normal of the cap
            for i in range(ncap):
                j = order[i]
                new_v[cnt, 0] = cap[j, 0]
                new_v[cnt, 1] = cap[j, 1]
                new_v[cnt, 2] = cap[j, 2]
                cnt += 1
            nnf += 1
            new_o[nnf] = cnt
        if nnf < 4:
            return 0.0
        cur_v = new_v[:cnt].copy()
        cur_o = new_o[: nnf + 1].copy()
        nf = nnf
        nv = cnt
    # signed volume from the origin over outward-oriented faces
    vol = 0.0
    for f in range(nf):
        beg = cur_o[f]
        end = cur_o[f + 1]
        az = cur_v[beg, 0]
        ay = cur_v[beg, 1]
        ax = cur_v[beg, 2]
        for i in range(beg + 1, end - 1):
            bz = cur_v[i, 0]
            by = cur_v[i, 1]
            bx = cur_v[i, 2]
            cz = cur_v[i + 1, 0]
            cy = cur_v[i + 1, 1]
            cx = cur_v[i + 1, 2]
            vol += az * (by * cx - bx * cy) - ay * (bz * cx - bx * cz) + ax * (bz * cy - by * cz)
    vol /= 6.0
    return vol if vol > 0.0 else 0.0
