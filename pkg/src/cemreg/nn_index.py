"""Exact nearest-neighbor queries over a fixed 3D point set.

Three structures back every index:

* two lookup grids. Each cell stores only the points that can be nearest to
  some location inside the cell, so a query that lands in a covered cell
  scans that short list and stops. The fine one has cells about one point
  spacing wide (lists of a few points) and covers the cloud's
  bounding box plus a thin margin; the coarse one has larger cells and
  reaches one cloud extent beyond the box, which catches the far queries
  made from poorly aligned poses;
* a uniform grid searched ring by ring outward from the query's cell,
  for queries neither lookup grid covers;
* a kd-tree (median splits on the widest axis, 16-point leaves) that answers
  queries the coarse grid cannot settle within ``GRID_REACH`` cells.

All searches are exact and break distance ties toward the lowest point
index. All kernels release the GIL.
"""

from __future__ import annotations

from functools import cached_property

import numba as nb
import numpy as np
from numpy.typing import ArrayLike, NDArray

LEAF_SIZE = 16
GRID_REACH = 3
MAX_GRID_CELLS = 1 << 21
# relative slack on computed cell walls when bounding distances
WALL_SLACK = 1e-12
# fine lookup cell width in typical point spacings; its margin and the
# nearest-point distance above which a cell is left to the coarser searches,
# both in fine-cell widths
LOOKUP_CELL = 1.0
LOOKUP_MARGIN = 2
LOOKUP_CAP = 3
# cells along the longest side of the coarse lookup region
COARSE_CELLS = 16
# lookup grid size limit; thin or elongated clouds get wider cells instead
LOOKUP_CELLS_PER_POINT = 128
MIN_LOOKUP_CELLS = 1 << 14


@nb.njit(cache=True, nogil=True, inline="always")
def _gap(v, a, b):
    if v < a:
        return a - v
    if v > b:
        return v - b
    return 0.0


@nb.njit(cache=True, nogil=True, inline="always")
def _gap_lb(v, a, b, slack):
    return max(_gap(v, a, b) - slack, 0.0)


@nb.njit(cache=True, nogil=True)
def _scan_cells(qx, qy, qz, gp, gorder, starts, dims, x0, x1, y0, y1, z0, z1, best, bi):
    for ix in range(x0, x1 + 1):
        for iy in range(y0, y1 + 1):
            base = (ix * dims[1] + iy) * dims[2]
            for j in range(starts[base + z0], starts[base + z1 + 1]):
                dx = qx - gp[j, 0]
                dy = qy - gp[j, 1]
                dz = qz - gp[j, 2]
                dd = dx * dx + dy * dy + dz * dz
                if dd < best or (dd == best and (bi < 0 or gorder[j] < bi)):
                    best = dd
                    bi = gorder[j]
    return best, bi


@nb.njit(cache=True, nogil=True)
def _grid_search(qx, qy, qz, bound2, gp, gorder, starts, glo, dims, h):
    """Closest point with squared distance <= bound2, or (bound2, -1)."""
    nx, ny, nz = dims[0], dims[1], dims[2]
    lx, ly, lz = glo[0], glo[1], glo[2]
    hx = lx + nx * h
    hy = ly + ny * h
    hz = lz + nz * h
    # cell walls are computed, not stored, so they can sit an ulp off the
    # points filed against them; shrink every gap so exact ties survive pruning
    slack = WALL_SLACK * (abs(lx) + abs(ly) + abs(lz) + (nx + ny + nz) * h + abs(qx) + abs(qy) + abs(qz))
    ex = _gap_lb(qx, lx, hx, slack)
    ey = _gap_lb(qy, ly, hy, slack)
    ez = _gap_lb(qz, lz, hz, slack)
    best = bound2
    bi = -1
    if ex * ex + ey * ey + ez * ez > best:
        return best, bi
    cx = min(max(int(np.floor((qx - lx) / h)), 0), nx - 1)
    cy = min(max(int(np.floor((qy - ly) / h)), 0), ny - 1)
    cz = min(max(int(np.floor((qz - lz) / h)), 0), nz - 1)
    bx0 = cx
    bx1 = cx
    by0 = cy
    by1 = cy
    bz0 = cz
    bz1 = cz
    best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, cx, cx, cy, cy, cz, cz, best, bi)
    while True:
        # lower bound on the distance to any cell outside the searched block
        lb = np.inf
        if bx0 > 0:
            a = _gap_lb(qx, lx, lx + bx0 * h, slack)
            lb = min(lb, a * a + ey * ey + ez * ez)
        if bx1 < nx - 1:
            a = _gap_lb(qx, lx + (bx1 + 1) * h, hx, slack)
            lb = min(lb, a * a + ey * ey + ez * ez)
        if by0 > 0:
            a = _gap_lb(qy, ly, ly + by0 * h, slack)
            lb = min(lb, ex * ex + a * a + ez * ez)
        if by1 < ny - 1:
            a = _gap_lb(qy, ly + (by1 + 1) * h, hy, slack)
            lb = min(lb, ex * ex + a * a + ez * ez)
        if bz0 > 0:
            a = _gap_lb(qz, lz, lz + bz0 * h, slack)
            lb = min(lb, ex * ex + ey * ey + a * a)
        if bz1 < nz - 1:
            a = _gap_lb(qz, lz + (bz1 + 1) * h, hz, slack)
            lb = min(lb, ex * ex + ey * ey + a * a)
        if lb > best:
            break
        nx0 = max(bx0 - 1, 0)
        nx1 = min(bx1 + 1, nx - 1)
        ny0 = max(by0 - 1, 0)
        ny1 = min(by1 + 1, ny - 1)
        nz0 = max(bz0 - 1, 0)
        nz1 = min(bz1 + 1, nz - 1)
        if nx0 < bx0:
            best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, nx0, nx0, ny0, ny1, nz0, nz1, best, bi)
        if nx1 > bx1:
            best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, nx1, nx1, ny0, ny1, nz0, nz1, best, bi)
        if ny0 < by0:
            best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, bx0, bx1, ny0, ny0, nz0, nz1, best, bi)
        if ny1 > by1:
            best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, bx0, bx1, ny1, ny1, nz0, nz1, best, bi)
        if nz0 < bz0:
            best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, bx0, bx1, by0, by1, nz0, nz0, best, bi)
        if nz1 > bz1:
            best, bi = _scan_cells(qx, qy, qz, gp, gorder, starts, dims, bx0, bx1, by0, by1, nz1, nz1, best, bi)
        bx0 = nx0
        bx1 = nx1
        by0 = ny0
        by1 = ny1
        bz0 = nz0
        bz1 = nz1
    return best, bi


@nb.njit(cache=True, nogil=True)
def _tree_search(qx, qy, qz, bound2, tp, torder, tlo, thi, left, right, tstart, tend):
    best = bound2
    bi = -1
    stack = np.empty(128, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        d = 0.0
        a = _gap(qx, tlo[node, 0], thi[node, 0])
        d += a * a
        a = _gap(qy, tlo[node, 1], thi[node, 1])
        d += a * a
        a = _gap(qz, tlo[node, 2], thi[node, 2])
        d += a * a
        if d > best:
            continue
        lc = left[node]
        if lc < 0:
            for j in range(tstart[node], tend[node]):
                dx = qx - tp[j, 0]
                dy = qy - tp[j, 1]
                dz = qz - tp[j, 2]
                dd = dx * dx + dy * dy + dz * dz
                if dd < best or (dd == best and (bi < 0 or torder[j] < bi)):
                    best = dd
                    bi = torder[j]
        else:
            rc = right[node]
            dl = 0.0
            dr = 0.0
            for k in range(3):
                v = qx if k == 0 else (qy if k == 1 else qz)
                a = _gap(v, tlo[lc, k], thi[lc, k])
                dl += a * a
                a = _gap(v, tlo[rc, k], thi[rc, k])
                dr += a * a
            # nearer child on top of the stack
            if dl <= dr:
                stack[sp] = rc
                stack[sp + 1] = lc
            else:
                stack[sp] = lc
                stack[sp + 1] = rc
            sp += 2
    return best, bi


@nb.njit(cache=True, nogil=True)
def _fallback_search(qx, qy, qz, bound2, gp, gorder, starts, glo, dims, h, tp, torder, tlo, thi, left, right, tstart, tend):
    reach2 = (GRID_REACH * h) * (GRID_REACH * h)
    if bound2 <= reach2:
        return _grid_search(qx, qy, qz, bound2, gp, gorder, starts, glo, dims, h)
    best, bi = _grid_search(qx, qy, qz, reach2, gp, gorder, starts, glo, dims, h)
    if bi >= 0:
        return best, bi
    return _tree_search(qx, qy, qz, bound2, tp, torder, tlo, thi, left, right, tstart, tend)


UNCOVERED = -2


@nb.njit(cache=True, nogil=True, inline="always")
def nn_lookup(qx, qy, qz, bound2, lookup):
    """Search one lookup grid: ``(d2, j)`` as for :func:`nn_point`, or ``(bound2, UNCOVERED)``.

    Hot loops unpack ``fine, coarse = arrays[0], arrays[1]`` once, then per
    query try the fine grid, the coarse grid on UNCOVERED, and
    :func:`fallback_point` if still UNCOVERED. Keep that sequence in the loop
    itself: wrapped in another inlined helper, or with the fallback call
    inside this function, every query gets several times slower.
    """
    clo, cdims, c, miss2, cspan, cpts, cidx = lookup
    ix = int(np.floor((qx - clo[0]) / c))
    iy = int(np.floor((qy - clo[1]) / c))
    iz = int(np.floor((qz - clo[2]) / c))
    if 0 <= ix < cdims[0] and 0 <= iy < cdims[1] and 0 <= iz < cdims[2]:
        cell = (ix * cdims[1] + iy) * cdims[2] + iz
        a = cspan[cell, 0]
        if a >= 0:
            best = bound2
            bi = -1
            for j in range(a, cspan[cell, 1]):
                dx = qx - cpts[j, 0]
                dy = qy - cpts[j, 1]
                dz = qz - cpts[j, 2]
                dd = dx * dx + dy * dy + dz * dz
                if dd < best or (dd == best and (bi < 0 or cidx[j] < bi)):
                    best = dd
                    bi = cidx[j]
            return best, bi
    # uncovered locations are at least sqrt(miss2) from every point
    if bound2 < miss2:
        return bound2, -1
    return bound2, UNCOVERED


@nb.njit(cache=True, nogil=True)
def fallback_point(qx, qy, qz, bound2, arrays):
    gp, gorder, starts, glo, dims, h, tp, torder, tlo, thi, left, right, tstart, tend = arrays[2]
    return _fallback_search(qx, qy, qz, bound2, gp, gorder, starts, glo, dims, h,
                            tp, torder, tlo, thi, left, right, tstart, tend)


@nb.njit(cache=True, nogil=True)
def nn_point(qx, qy, qz, bound2, arrays):
    """Squared distance and index of the nearest point within ``sqrt(bound2)``.

    ``arrays`` is :attr:`NeighborIndex.arrays`. Returns ``(bound2, -1)`` when
    no point lies within the bound.
    """
    d2, j = nn_lookup(qx, qy, qz, bound2, arrays[0])
    if j == UNCOVERED:
        d2, j = nn_lookup(qx, qy, qz, bound2, arrays[1])
    if j == UNCOVERED:
        d2, j = fallback_point(qx, qy, qz, bound2, arrays)
    return d2, j


@nb.njit(cache=True, nogil=True)
def _ball(qx, qy, qz, r2, gp, starts, glo, dims, h, out):
    # grid slots of all points within sqrt(r2) of q
    n = 0
    rr = np.sqrt(r2)
    x0 = max(int(np.floor((qx - rr - glo[0]) / h)), 0)
    x1 = min(int(np.floor((qx + rr - glo[0]) / h)), dims[0] - 1)
    y0 = max(int(np.floor((qy - rr - glo[1]) / h)), 0)
    y1 = min(int(np.floor((qy + rr - glo[1]) / h)), dims[1] - 1)
    z0 = max(int(np.floor((qz - rr - glo[2]) / h)), 0)
    z1 = min(int(np.floor((qz + rr - glo[2]) / h)), dims[2] - 1)
    if z0 > z1:
        return 0
    for ix in range(x0, x1 + 1):
        for iy in range(y0, y1 + 1):
            base = (ix * dims[1] + iy) * dims[2]
            for j in range(starts[base + z0], starts[base + z1 + 1]):
                dx = qx - gp[j, 0]
                dy = qy - gp[j, 1]
                dz = qz - gp[j, 2]
                if dx * dx + dy * dy + dz * dz <= r2:
                    out[n] = j
                    n += 1
    return n


@nb.njit(cache=True)
def _build_lookup(lo, dims, c, cap, tol, gp, gorder, starts, glo, gdims, h, tp, torder, tlo, thi, left, right, tstart, tend):
    """Candidate lists per lookup cell.

    For a cell with centre z and nearest point p*, every location q in the
    cell has its nearest point within ``U = max_corner |corner - p*|`` of q,
    hence within ``U + half-diagonal`` of z. Those points are gathered and a
    point is dropped when another kept point is strictly closer to every
    location of the cell (a linear test on the box). Cells whose centre is
    farther than ``cap`` from the cloud get the span ``(-1, -1)``.
    """
    ncell = dims[0] * dims[1] * dims[2]
    counts = np.zeros(ncell, np.int64)
    lists = np.empty(4 * ncell + 16, np.int64)
    nl = 0
    npts = gp.shape[0]
    buf = np.empty(npts, np.int64)
    dz = np.empty(npts)
    keep = np.empty(npts, np.int64)
    half_diag = 0.5 * c * np.sqrt(3.0)
    for ix in range(dims[0]):
        for iy in range(dims[1]):
            for iz in range(dims[2]):
                cell = (ix * dims[1] + iy) * dims[2] + iz
                b0x = lo[0] + ix * c
                b0y = lo[1] + iy * c
                b0z = lo[2] + iz * c
                zx = b0x + 0.5 * c
                zy = b0y + 0.5 * c
                zz = b0z + 0.5 * c
                d2, _ = _fallback_search(zx, zy, zz, np.inf, gp, gorder, starts, glo, gdims, h,
                                         tp, torder, tlo, thi, left, right, tstart, tend)
                if np.sqrt(d2) > cap:
                    counts[cell] = -1
                    continue
                m = _ball(zx, zy, zz, d2 * (1.0 + 1e-9) + 1e-300, gp, starts, glo, gdims, h, buf)
                ps = buf[0]
                for a in range(1, m):
                    if gorder[buf[a]] < gorder[ps]:
                        ps = buf[a]
                ux = max(abs(b0x - gp[ps, 0]), abs(b0x + c - gp[ps, 0]))
                uy = max(abs(b0y - gp[ps, 1]), abs(b0y + c - gp[ps, 1]))
                uz = max(abs(b0z - gp[ps, 2]), abs(b0z + c - gp[ps, 2]))
                U2 = ux * ux + uy * uy + uz * uz
                R = np.sqrt(U2) + half_diag + np.sqrt(tol)
                m = _ball(zx, zy, zz, R * R, gp, starts, glo, gdims, h, buf)
                for a in range(m):
                    j = buf[a]
                    ex = zx - gp[j, 0]
                    ey = zy - gp[j, 1]
                    ez = zz - gp[j, 2]
                    dz[a] = ex * ex + ey * ey + ez * ez
                order = np.argsort(dz[:m])
                nk = 0
                for o in range(m):
                    j = buf[order[o]]
                    px = gp[j, 0]
                    py = gp[j, 1]
                    pz = gp[j, 2]
                    g = _gap(px, b0x, b0x + c)
                    s = g * g
                    g = _gap(py, b0y, b0y + c)
                    s += g * g
                    g = _gap(pz, b0z, b0z + c)
                    s += g * g
                    if s > U2 + tol:
                        continue
                    dominated = False
                    for kk in range(nk):
                        k = keep[kk]
                        vx = px - gp[k, 0]
                        vy = py - gp[k, 1]
                        vz = pz - gp[k, 2]
                        # min over the box of |q - p|^2 - |q - k|^2, which is linear in q
                        qx = b0x + c if vx > 0 else b0x
                        qy = b0y + c if vy > 0 else b0y
                        qz = b0z + c if vz > 0 else b0z
                        f = (px * px + py * py + pz * pz) - (gp[k, 0] ** 2 + gp[k, 1] ** 2 + gp[k, 2] ** 2)
                        f -= 2.0 * (qx * vx + qy * vy + qz * vz)
                        if f > tol:
                            dominated = True
                            break
                    if not dominated:
                        keep[nk] = j
                        nk += 1
                if nl + nk > lists.shape[0]:
                    grown = np.empty(2 * lists.shape[0] + nk, np.int64)
                    grown[:nl] = lists[:nl]
                    lists = grown
                for kk in range(nk):
                    lists[nl + kk] = keep[kk]
                nl += nk
                counts[cell] = nk
    span = np.empty((ncell, 2), np.int64)
    pos = 0
    for cell in range(ncell):
        if counts[cell] < 0:
            span[cell, 0] = -1
            span[cell, 1] = -1
        else:
            span[cell, 0] = pos
            pos += counts[cell]
            span[cell, 1] = pos
    return span, lists[:nl]


@nb.njit(cache=True, nogil=True)
def _query_many(Q, bound2, arrays):
    fine, coarse = arrays[0], arrays[1]
    n = Q.shape[0]
    dist = np.empty(n)
    idx = np.empty(n, np.int64)
    for q in range(n):
        d2, j = nn_lookup(Q[q, 0], Q[q, 1], Q[q, 2], bound2, fine)
        if j == UNCOVERED:
            d2, j = nn_lookup(Q[q, 0], Q[q, 1], Q[q, 2], bound2, coarse)
        if j == UNCOVERED:
            d2, j = fallback_point(Q[q, 0], Q[q, 1], Q[q, 2], bound2, arrays)
        if j < 0:
            dist[q] = np.inf
        else:
            dist[q] = np.sqrt(d2)
        idx[q] = j
    return dist, idx


@nb.njit(cache=True, nogil=True)
def _query_plain(Q, bound2, gp, gorder, starts, glo, dims, h, tp, torder, tlo, thi, left, right, tstart, tend):
    # ring grid + tree only, for one-off queries that would not repay the lookup build
    n = Q.shape[0]
    dist = np.empty(n)
    idx = np.empty(n, np.int64)
    for q in range(n):
        d2, j = _fallback_search(Q[q, 0], Q[q, 1], Q[q, 2], bound2, gp, gorder, starts, glo, dims, h,
                                 tp, torder, tlo, thi, left, right, tstart, tend)
        if j < 0:
            dist[q] = np.inf
        else:
            dist[q] = np.sqrt(d2)
        idx[q] = j
    return dist, idx


def _build_tree(points: NDArray[np.float64]):
    order = np.arange(points.shape[0], dtype=np.int64)
    lo, hi, left, right, start, end = [], [], [], [], [], []

    def rec(s: int, e: int) -> int:
        node = len(lo)
        sub = points[order[s:e]]
        lo.append(sub.min(axis=0))
        hi.append(sub.max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        end.append(e)
        if e - s <= LEAF_SIZE:
            return node
        dim = int(np.argmax(hi[node] - lo[node]))
        ids = order[s:e]
        order[s:e] = ids[np.argsort(points[ids, dim], kind="stable")]
        mid = s + (e - s) // 2
        left[node] = rec(s, mid)
        right[node] = rec(mid, e)
        return node

    rec(0, points.shape[0])
    return (
        np.ascontiguousarray(points[order]),
        order,
        np.array(lo),
        np.array(hi),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(start, dtype=np.int64),
        np.array(end, dtype=np.int64),
    )


def _typical_spacing(points: NDArray[np.float64]) -> float:
    n = points.shape[0]
    if n < 2:
        return 0.0
    sample = points[np.linspace(0, n - 1, min(n, 256)).astype(np.int64)]
    d2 = ((sample[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    d2[d2 == 0.0] = np.inf
    nn = np.sqrt(d2.min(axis=1))
    nn = nn[np.isfinite(nn)]
    return float(np.median(nn)) if nn.size else 0.0


def _build_grid(points: NDArray[np.float64]):
    lo = points.min(axis=0)
    extent = float((points.max(axis=0) - lo).max())
    h = 2.0 * _typical_spacing(points)
    if not h > 0.0:
        h = extent / 8.0 if extent > 0.0 else 1.0
    h = max(h, extent / 256.0)
    while True:
        dims = np.floor((points - lo) / h).astype(np.int64).max(axis=0) + 1
        if int(np.prod(dims)) <= MAX_GRID_CELLS:
            break
        h *= 1.5
    cells = np.minimum(np.floor((points - lo) / h).astype(np.int64), dims - 1)
    cid = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    order = np.lexsort((np.arange(points.shape[0]), cid)).astype(np.int64)
    counts = np.bincount(cid, minlength=int(np.prod(dims)))
    starts = np.zeros(counts.size + 1, dtype=np.int64)
    starts[1:] = np.cumsum(counts)
    return np.ascontiguousarray(points[order]), order, starts, lo.astype(np.float64), dims, float(h)


def _lookup_grid(points, grid, tree, c, margin, cap, miss, per_cell=False):
    # with ``per_cell`` the margin, cap and miss distances are kept as fixed
    # multiples of the cell width when the cells have to be widened
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    limit = min(MAX_GRID_CELLS, max(MIN_LOOKUP_CELLS, LOOKUP_CELLS_PER_POINT * points.shape[0]))
    while True:
        clo = lo - margin
        dims = np.floor((hi + margin - clo) / c).astype(np.int64) + 1
        if int(np.prod(dims)) <= limit:
            break
        c *= 1.5
        if per_cell:
            margin *= 1.5
            cap *= 1.5
            miss *= 1.5
    scale = float((hi - lo).max()) + 2.0 * margin + c
    # slack on squared distances so rounding never drops a possible nearest point
    tol = 1e-9 * scale * scale
    span, slots = _build_lookup(clo, dims, c, cap, tol, *grid, *tree)
    gp, gorder = grid[0], grid[1]
    return clo, dims, float(c), float(miss * miss), span, np.ascontiguousarray(gp[slots]), gorder[slots].copy()


def _build_lookups(points: NDArray[np.float64], grid: tuple, tree: tuple) -> tuple:
    c = 0.5 * LOOKUP_CELL * grid[5]
    m = LOOKUP_MARGIN * c
    # capped cells are at least (LOOKUP_CAP - sqrt(3)/2) * c > m from every point
    fine = _lookup_grid(points, grid, tree, c, m, LOOKUP_CAP * c, m, per_cell=True)
    extent = float((points.max(axis=0) - points.min(axis=0)).max()) or 2.0 * c
    coarse = _lookup_grid(points, grid, tree, 3.0 * extent / COARSE_CELLS, extent, np.inf, extent)
    return fine, coarse


class NeighborIndex:
    """Exact 1-nearest-neighbor index over a fixed point set."""

    def __init__(self, points: ArrayLike):
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("cannot index an empty point cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        self.points.setflags(write=False)
        self.grid = _build_grid(pts)
        self.tree = _build_tree(pts)

    @cached_property
    def lookup(self) -> tuple:
        """The fine and coarse lookup grids, built on first use."""
        return _build_lookups(self.points, self.grid, self.tree)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def arrays(self) -> tuple:
        """``(fine lookup, coarse lookup, ring grid + tree)``, the layout ``nn_point`` expects."""
        return self.lookup + (self.grid + self.tree,)

    def query(self, queries: ArrayLike, upper_bound: float = np.inf):
        """Distances and indices of the nearest points to each row of ``queries``.

        Queries with no point within ``upper_bound`` get ``(inf, -1)``.
        """
        Q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(Q)):
            raise ValueError("query coordinates must be finite")
        bound2 = float(upper_bound) ** 2 if np.isfinite(upper_bound) else np.inf
        if "lookup" in self.__dict__:
            return _query_many(Q, bound2, self.arrays)
        return _query_plain(Q, bound2, *self.grid, *self.tree)


def build_index(cloud) -> NeighborIndex:
    """Index a :class:`~cemreg.se3.PointCloud` or an ``(n, 3)`` array."""
    return NeighborIndex(getattr(cloud, "points", cloud))


def nearest(q: ArrayLike, idx: NeighborIndex) -> tuple[float, int]:
    """Distance to and index of the point of ``idx`` closest to ``q``."""
    q = np.asarray(q, dtype=np.float64).reshape(3)
    d, i = idx.query(q[None, :])
    return float(d[0]), int(i[0])
