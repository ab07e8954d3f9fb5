"""Compiled inner loops for the restricted power diagram."""
import numpy as np
from numba import njit

BOX_LABEL = -1

_QW0 = -27.0 / 48.0
_QW1 = 25.0 / 48.0


@njit(cache=True)
def _clip(px, py, pl, n, nx, ny, off, label, tol, ox, oy, ol, dist):
    """One Sutherland-Hodgman step; returns the new vertex count (0 if empty)."""
    n_in = 0
    for k in range(n):
        dist[k] = px[k] * nx + py[k] * ny - off
        if dist[k] <= tol:
            n_in += 1
    if n_in == n:
        for k in range(n):
            ox[k] = px[k]
            oy[k] = py[k]
            ol[k] = pl[k]
        return n
    if n_in == 0:
        return 0
    m = 0
    for k in range(n):
        k1 = k + 1
        if k1 == n:
            k1 = 0
        dk = dist[k]
        dk1 = dist[k1]
        if dk <= tol:
            if dk1 <= tol:
                ox[m] = px[k]
                oy[m] = py[k]
                ol[m] = pl[k]
                m += 1
            elif dk >= -tol:
                ox[m] = px[k]
                oy[m] = py[k]
                ol[m] = label
                m += 1
            else:
                ox[m] = px[k]
                oy[m] = py[k]
                ol[m] = pl[k]
                m += 1
                s = dk / (dk - dk1)
                ox[m] = px[k] + s * (px[k1] - px[k])
                oy[m] = py[k] + s * (py[k1] - py[k])
                ol[m] = label
                m += 1
        elif dk1 < -tol:
            s = dk / (dk - dk1)
            ox[m] = px[k] + s * (px[k1] - px[k])
            oy[m] = py[k] + s * (py[k1] - py[k])
            ol[m] = pl[k]
            m += 1
    if m < 3:
        return 0
    return m


@njit(cache=True)
def _area(px, py, n):
    a = 0.0
    for k in range(n):
        k1 = k + 1
        if k1 == n:
            k1 = 0
        a += px[k] * py[k1] - px[k1] * py[k]
    return 0.5 * a


@njit(cache=True)
def _moments(px, py, n, gx, gy, g0, out):
    """Mass, first moment and cost about the local origin, exact for linear density.

    ``px, py`` are local coordinates; density is ``gx*qx + gy*qy + g0``.
    """
    mass = 0.0
    fx = 0.0
    fy = 0.0
    cost = 0.0
    for k in range(1, n - 1):
        ax, ay = px[0], py[0]
        bx, by = px[k], py[k]
        cx, cy = px[k + 1], py[k + 1]
        area = 0.5 * ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))
        for q in range(4):
            if q == 0:
                l0 = 1.0 / 3.0
                l1 = 1.0 / 3.0
                w = _QW0
            elif q == 1:
                l0 = 0.6
                l1 = 0.2
                w = _QW1
            elif q == 2:
                l0 = 0.2
                l1 = 0.6
                w = _QW1
            else:
                l0 = 0.2
                l1 = 0.2
                w = _QW1
            l2 = 1.0 - l0 - l1
            x = l0 * ax + l1 * bx + l2 * cx
            y = l0 * ay + l1 * by + l2 * cy
            r = (gx * x + gy * y + g0) * w * area
            mass += r
            fx += r * x
            fy += r * y
            cost += r * (x * x + y * y)
    out[0] = mass
    out[1] = fx
    out[2] = fy
    out[3] = cost


@njit(cache=True)
def build_cells(
    sites, weights, cstart, citems,
    mv, tris, tedge, dgrad, doff,
    gx0, gy0, gcell, gnx, gny, gstart, gitems,
    hull, eps_len, eps_area,
    piece_tri, piece_site, piece_start, pvx, pvy, plab, pmom,
):
    """Clip every site's power cell against the mesh triangles.

    ``citems[cstart[i]:cstart[i + 1]]`` must contain every power-diagram
    neighbour of site ``i`` (extra candidates are harmless).  Returns
    ``(n_pieces, n_vertices, overflow)``.
    """
    n_sites = sites.shape[0]
    n_hull = hull.shape[0]
    max_deg = 0
    for i in range(n_sites):
        if cstart[i + 1] - cstart[i] > max_deg:
            max_deg = cstart[i + 1] - cstart[i]
    maxv = max_deg + n_hull + 16
    ax = np.empty(maxv)
    ay = np.empty(maxv)
    al = np.empty(maxv, dtype=np.int64)
    bx = np.empty(maxv)
    by = np.empty(maxv)
    bl = np.empty(maxv, dtype=np.int64)
    hn = np.empty((maxv, 3))
    hlab = np.empty(maxv, dtype=np.int64)
    dist = np.empty(maxv)
    stamp = np.full(tris.shape[0], -1, dtype=np.int64)
    mom = np.empty(4)
    np_ = 0
    nv = 0
    cap_p = piece_tri.shape[0]
    cap_v = pvx.shape[0]
    for i in range(n_sites):
        xi = sites[i, 0]
        yi = sites[i, 1]
        # cell polygon in coordinates local to the site
        for k in range(n_hull):
            ax[k] = hull[k, 0] - xi
            ay[k] = hull[k, 1] - yi
            al[k] = -1
        n = n_hull
        cur_is_a = True
        for k in range(cstart[i], cstart[i + 1]):
            j = citems[k]
            if j == i:
                continue
            dx = sites[j, 0] - xi
            dy = sites[j, 1] - yi
            nx = 2.0 * dx
            ny = 2.0 * dy
            off = dx * dx + dy * dy + weights[i] - weights[j]
            tol = eps_len * np.sqrt(nx * nx + ny * ny)
            if cur_is_a:
                n = _clip(ax, ay, al, n, nx, ny, off, j, tol, bx, by, bl, dist)
            else:
                n = _clip(bx, by, bl, n, nx, ny, off, j, tol, ax, ay, al, dist)
            cur_is_a = not cur_is_a
            if n == 0:
                break
        if n == 0:
            continue
        if not cur_is_a:
            for q in range(n):
                ax[q] = bx[q]
                ay[q] = by[q]
                al[q] = bl[q]
        # bisector half-planes bounding the cell
        nh = 0
        cxmin = 1e300
        cymin = 1e300
        cxmax = -1e300
        cymax = -1e300
        for q in range(n):
            if ax[q] < cxmin:
                cxmin = ax[q]
            if ax[q] > cxmax:
                cxmax = ax[q]
            if ay[q] < cymin:
                cymin = ay[q]
            if ay[q] > cymax:
                cymax = ay[q]
            j = al[q]
            if j >= 0:
                dx = sites[j, 0] - xi
                dy = sites[j, 1] - yi
                hn[nh, 0] = 2.0 * dx
                hn[nh, 1] = 2.0 * dy
                hn[nh, 2] = dx * dx + dy * dy + weights[i] - weights[j]
                hlab[nh] = j
                nh += 1
        cxmin += xi - eps_len
        cxmax += xi + eps_len
        cymin += yi - eps_len
        cymax += yi + eps_len
        i0 = max(0, min(gnx - 1, int((cxmin - gx0) / gcell)))
        i1 = max(0, min(gnx - 1, int((cxmax - gx0) / gcell)))
        j0 = max(0, min(gny - 1, int((cymin - gy0) / gcell)))
        j1 = max(0, min(gny - 1, int((cymax - gy0) / gcell)))
        for gj in range(j0, j1 + 1):
            for gi in range(i0, i1 + 1):
                b = gj * gnx + gi
                for it in range(gstart[b], gstart[b + 1]):
                    t = gitems[it]
                    if stamp[t] == i:
                        continue
                    stamp[t] = i
                    txmin = 1e300
                    txmax = -1e300
                    tymin = 1e300
                    tymax = -1e300
                    for c in range(3):
                        vx = mv[tris[t, c], 0]
                        vy = mv[tris[t, c], 1]
                        if vx < txmin:
                            txmin = vx
                        if vx > txmax:
                            txmax = vx
                        if vy < tymin:
                            tymin = vy
                        if vy > tymax:
                            tymax = vy
                    if txmax < cxmin or txmin > cxmax or tymax < cymin or tymin > cymax:
                        continue
                    for c in range(3):
                        bx[c] = mv[tris[t, c], 0] - xi
                        by[c] = mv[tris[t, c], 1] - yi
                        bl[c] = -(tedge[t, c] + 2)
                    m = 3
                    in_b = True
                    for e in range(nh):
                        tol = eps_len * np.sqrt(hn[e, 0] ** 2 + hn[e, 1] ** 2)
                        if in_b:
                            m = _clip(bx, by, bl, m, hn[e, 0], hn[e, 1], hn[e, 2], hlab[e], tol, ax, ay, al, dist)
                        else:
                            m = _clip(ax, ay, al, m, hn[e, 0], hn[e, 1], hn[e, 2], hlab[e], tol, bx, by, bl, dist)
                        in_b = not in_b
                        if m == 0:
                            break
                    if m == 0:
                        continue
                    if not in_b:
                        for q in range(m):
                            bx[q] = ax[q]
                            by[q] = ay[q]
                            bl[q] = al[q]
                    if _area(bx, by, m) < eps_area:
                        continue
                    if np_ >= cap_p or nv + m > cap_v:
                        return np_, nv, True
                    gx = dgrad[t, 0]
                    gy = dgrad[t, 1]
                    g0 = doff[t] + gx * xi + gy * yi
                    _moments(bx, by, m, gx, gy, g0, mom)
                    piece_tri[np_] = t
                    piece_site[np_] = i
                    piece_start[np_] = nv
                    for q in range(m):
                        pvx[nv + q] = bx[q] + xi
                        pvy[nv + q] = by[q] + yi
                        plab[nv + q] = bl[q]
                    nv += m
                    pmom[np_, 0] = mom[0]
                    pmom[np_, 1] = mom[1] + mom[0] * xi
                    pmom[np_, 2] = mom[2] + mom[0] * yi
                    pmom[np_, 3] = mom[3]
                    np_ += 1
    piece_start[np_] = nv
    return np_, nv, False
