"""Compiled kernels for union-of-balls geometry on a uniform cell grid.

All kernels take the grid as plain arrays so they can be shared by the
cluster builder, the lattice approximation and the path simulators.
Positions passed to the kernels may be unwrapped; periodic grids reduce
displacements to the minimum image.
"""
import numpy as np
from numba import njit

from .errors import InvalidParameterError

STATUS_OK = 0
STATUS_REJECTED = 1
STATUS_OUTSIDE = 2


class CellGrid:
    """Points bucketed into cubic cells of side ``side``.

    ``centers`` holds the points sorted by cell; ``order[k]`` is the original
    index of ``centers[k]``.
    """

    def __init__(self, points, side, lower, upper, periodic):
        points = np.asarray(points, dtype=float)
        d = points.shape[1]
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        self.periodic = bool(periodic)
        self.dim = d
        if self.periodic:
            L = upper - lower
            ncell = np.floor(L / side).astype(np.int64)
            if np.any(ncell < 3):
                raise InvalidParameterError(
                    "periodic box must span at least three interaction lengths per axis"
                )
            self.side_vec = L / ncell
            self.L = L
            self.glo = lower.copy()
            wrapped = lower + np.mod(points - lower, L)
            cid = np.floor((wrapped - lower) / self.side_vec).astype(np.int64)
            cid = np.minimum(cid, ncell - 1)
        else:
            if len(points):
                glo = np.minimum(lower, points.min(axis=0)) - 1e-9
                ghi = np.maximum(upper, points.max(axis=0)) + 1e-9
            else:
                glo, ghi = lower, upper
            ncell = np.maximum(1, np.ceil((ghi - glo) / side).astype(np.int64))
            self.side_vec = np.full(d, float(side))
            self.L = ghi - glo
            self.glo = glo
            cid = np.floor((points - glo) / side).astype(np.int64)
            cid = np.clip(cid, 0, ncell - 1)
        self.ncell = ncell
        flat = np.ravel_multi_index(cid.T, tuple(ncell)) if len(points) else np.zeros(0, np.int64)
        self.order = np.argsort(flat, kind="stable").astype(np.int64)
        self.centers = np.ascontiguousarray(points[self.order]) if len(points) else np.zeros((0, d))
        counts = np.bincount(flat, minlength=int(np.prod(ncell)))
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def args(self):
        return (self.centers, self.cell_start, self.glo, self.side_vec, self.ncell, self.periodic, self.L)


@njit(cache=True)
def _cell_of(p, glo, side, ncell, periodic, L, out):
    d = p.shape[0]
    for j in range(d):
        x = p[j] - glo[j]
        if periodic:
            x = x - L[j] * np.floor(x / L[j])
        c = int(np.floor(x / side[j]))
        if periodic:
            c = c % ncell[j]
        out[j] = c


@njit(cache=True)
def _disp(p, c, periodic, L, out):
    d = p.shape[0]
    s = 0.0
    for j in range(d):
        dx = p[j] - c[j]
        if periodic:
            dx = dx - L[j] * np.floor(dx / L[j] + 0.5)
        out[j] = dx
        s += dx * dx
    return s


@njit(cache=True)
def _ranges(cc, reach, side, ncell, periodic, start, count):
    """Cell window around ``cc`` covering ``reach``; returns the window size."""
    d = cc.shape[0]
    span = 1
    for j in range(d):
        r = int(np.ceil(reach / side[j]))
        if periodic:
            if 2 * r + 1 >= ncell[j]:
                start[j] = 0
                count[j] = ncell[j]
            else:
                start[j] = cc[j] - r
                count[j] = 2 * r + 1
        else:
            a = max(0, cc[j] - r)
            b = min(ncell[j] - 1, cc[j] + r)
            start[j] = a
            count[j] = max(0, b - a + 1)
        span *= count[j]
    return span


@njit(cache=True)
def _cell_lin(flat, start, count, ncell, periodic):
    d = start.shape[0]
    rem = flat
    lin = 0
    for j in range(d):
        c = start[j] + rem % count[j]
        rem //= count[j]
        if periodic:
            c = c % ncell[j]
        lin = lin * ncell[j] + c
    return lin


@njit(cache=True)
def max_margin(p, centers, cell_start, glo, side, ncell, periodic, L, radius):
    """Return (radius - min distance to a ball centre, sorted index of that ball).

    Only balls within ``radius`` are inspected; a margin of ``-inf`` with
    index -1 means no centre lies within ``radius`` of ``p``.
    """
    d = p.shape[0]
    cc = np.empty(d, np.int64)
    _cell_of(p, glo, side, ncell, periodic, L, cc)
    st = np.empty(d, np.int64)
    ct = np.empty(d, np.int64)
    span = _ranges(cc, radius, side, ncell, periodic, st, ct)
    best = -np.inf
    best_i = -1
    dv = np.empty(d)
    idx = np.empty(d, np.int64)
    r2 = radius * radius
    for flat in range(span):
        lin = _cell_lin(flat, st, ct, ncell, periodic)
        for k in range(cell_start[lin], cell_start[lin + 1]):
            s = _disp(p, centers[k], periodic, L, dv)
            if s < r2:
                m = radius - np.sqrt(s)
                if m > best:
                    best = m
                    best_i = k
    return best, best_i


@njit(cache=True)
def max_margin_many(pts, centers, cell_start, glo, side, ncell, periodic, L, radius):
    n = pts.shape[0]
    out = np.empty(n)
    arg = np.empty(n, np.int64)
    for i in range(n):
        m, k = max_margin(pts[i], centers, cell_start, glo, side, ncell, periodic, L, radius)
        out[i] = m
        arg[i] = k
    return out, arg


@njit(cache=True)
def first_exit(p, q, centers, cell_start, glo, side, ncell, periodic, L, radius, tol):
    """First parameter t in [0, 1] where p + t (q - p) leaves the union of balls.

    Returns (t, sorted ball index whose sphere is crossed).  t >= 1 means the
    whole segment stays inside; index -1 with t == 0 means p is not covered.
    Open intervals of the line inside each ball are merged by a sweep.
    """
    d = p.shape[0]
    v = np.empty(d)
    a = 0.0
    for j in range(d):
        v[j] = q[j] - p[j]
        a += v[j] * v[j]
    seg = np.sqrt(a)
    if seg == 0.0:
        m, k = max_margin(p, centers, cell_start, glo, side, ncell, periodic, L, radius)
        if m > 0:
            return 2.0, -1
        return 0.0, -1
    tol_t = tol / seg
    reach = radius + seg
    cc = np.empty(d, np.int64)
    _cell_of(p, glo, side, ncell, periodic, L, cc)
    st = np.empty(d, np.int64)
    ct = np.empty(d, np.int64)
    span = _ranges(cc, reach, side, ncell, periodic, st, ct)
    cap = 64
    t1s = np.empty(cap)
    t2s = np.empty(cap)
    ids = np.empty(cap, np.int64)
    nint = 0
    dv = np.empty(d)
    idx = np.empty(d, np.int64)
    r2 = radius * radius
    for flat in range(span):
        lin = _cell_lin(flat, st, ct, ncell, periodic)
        for k in range(cell_start[lin], cell_start[lin + 1]):
            s = _disp(p, centers[k], periodic, L, dv)
            b = 0.0
            for j in range(d):
                b += v[j] * dv[j]
            b *= 2.0
            c0 = s - r2
            disc = b * b - 4.0 * a * c0
            if disc <= 0.0:
                continue
            sq = np.sqrt(disc)
            t1 = (-b - sq) / (2.0 * a)
            t2 = (-b + sq) / (2.0 * a)
            if t2 <= 0.0 or t1 >= 1.0:
                continue
            if nint == cap:
                cap *= 2
                nt1 = np.empty(cap)
                nt2 = np.empty(cap)
                nid = np.empty(cap, np.int64)
                nt1[:nint] = t1s[:nint]
                nt2[:nint] = t2s[:nint]
                nid[:nint] = ids[:nint]
                t1s, t2s, ids = nt1, nt2, nid
            t1s[nint] = t1
            t2s[nint] = t2
            ids[nint] = k
            nint += 1
    cur = 0.0
    exit_k = -1
    while True:
        best = cur
        best_k = -1
        for i in range(nint):
            if t1s[i] < cur + tol_t and t2s[i] > best:
                best = t2s[i]
                best_k = ids[i]
        if best_k < 0:
            break
        cur = best
        exit_k = best_k
        if cur >= 1.0:
            break
    return cur, exit_k


@njit(cache=True)
def reflect_segment(p, q, centers, cell_start, glo, side, ncell, periodic, L, radius, tol,
                    max_refl, ev_pts, ev_idx):
    """Specularly reflect the segment p -> q off the union-of-balls boundary.

    Writes up to ``max_refl`` exit points / ball indices into the event
    buffers and returns (status, final point, number of events).
    """
    d = p.shape[0]
    cp = p.copy()
    cq = q.copy()
    e = np.empty(d)
    nrm = np.empty(d)
    for k in range(max_refl + 1):
        t, bi = first_exit(cp, cq, centers, cell_start, glo, side, ncell, periodic, L, radius, tol)
        if t >= 1.0:
            return STATUS_OK, cq, k
        if bi < 0:
            return STATUS_OUTSIDE, cp, k
        if k == max_refl:
            return STATUS_REJECTED, cp, k
        for j in range(d):
            e[j] = cp[j] + t * (cq[j] - cp[j])
        s = _disp(e, centers[bi], periodic, L, nrm)
        ln = np.sqrt(s)
        rn = 0.0
        for j in range(d):
            nrm[j] /= ln
            rn += (cq[j] - e[j]) * nrm[j]
        for j in range(d):
            ev_pts[k, j] = e[j]
            cq[j] = cq[j] - 2.0 * rn * nrm[j]
            cp[j] = e[j]
        ev_idx[k] = bi
    return STATUS_REJECTED, cp, max_refl


@njit(cache=True)
def _pair_pass(centers, cell_start, glo, side, ncell, periodic, L, cutoff, fill,
               out_i, out_j, out_d, out_k):
    n = centers.shape[0]
    d = centers.shape[1]
    cc = np.empty(d, np.int64)
    dv = np.empty(d)
    st = np.empty(d, np.int64)
    ct = np.empty(d, np.int64)
    c2 = cutoff * cutoff
    cnt = 0
    for a in range(n):
        _cell_of(centers[a], glo, side, ncell, periodic, L, cc)
        span = _ranges(cc, cutoff, side, ncell, periodic, st, ct)
        for flat in range(span):
            lin = _cell_lin(flat, st, ct, ncell, periodic)
            for b in range(max(a + 1, cell_start[lin]), cell_start[lin + 1]):
                s = _disp(centers[b], centers[a], periodic, L, dv)
                if s < c2:
                    if fill:
                        out_i[cnt] = a
                        out_j[cnt] = b
                        out_d[cnt] = np.sqrt(s)
                        for j in range(d):
                            # image shift applied to b to reach its nearest copy
                            raw = centers[b, j] - centers[a, j]
                            out_k[cnt, j] = int(np.round((dv[j] - raw) / L[j])) if periodic else 0
                    cnt += 1
    return cnt


def find_pairs(grid, cutoff):
    """All pairs at distance < cutoff as (i, j, dist, image_shift) in original indices."""
    args = grid.args
    dim = grid.dim
    dummy_i = np.empty(0, np.int64)
    dummy_d = np.empty(0)
    dummy_k = np.empty((0, dim), np.int64)
    n = _pair_pass(*args, float(cutoff), False, dummy_i, dummy_i, dummy_d, dummy_k)
    oi = np.empty(n, np.int64)
    oj = np.empty(n, np.int64)
    od = np.empty(n)
    ok = np.empty((n, dim), np.int64)
    _pair_pass(*args, float(cutoff), True, oi, oj, od, ok)
    i = grid.order[oi]
    j = grid.order[oj]
    return i, j, od, ok


@njit(cache=True)
def open_sites_kernel(centers, radius, delta, m0, shape, periodic, mask):
    """Mark lattice sites whose cube of side delta lies inside a single ball.

    Site ``idx`` sits at ``delta * (m0 + idx)``; ``mask`` is flat C-ordered.
    The farthest cube corner from a centre c is at distance
    sqrt(sum (|s_j - c_j| + delta/2)^2).
    """
    n = centers.shape[0]
    d = centers.shape[1]
    h = 0.5 * delta
    r2 = radius * radius
    lo = np.empty(d, np.int64)
    w = np.empty(d, np.int64)
    idx = np.empty(d, np.int64)
    for i in range(n):
        span = 1
        for j in range(d):
            lo[j] = int(np.ceil((centers[i, j] - radius) / delta))
            hi = int(np.floor((centers[i, j] + radius) / delta))
            w[j] = max(0, hi - lo[j] + 1)
            span *= w[j]
        for flat in range(span):
            rem = flat
            s = 0.0
            skip = False
            for j in range(d):
                m = lo[j] + rem % w[j]
                rem //= w[j]
                t = abs(m * delta - centers[i, j]) + h
                s += t * t
                k = m - m0[j]
                if periodic:
                    k = k % shape[j]
                elif k < 0 or k >= shape[j]:
                    skip = True
                    break
                idx[j] = k
            if skip or s >= r2:
                continue
            lin = 0
            for j in range(d):
                lin = lin * shape[j] + idx[j]
            mask[lin] = True


@njit(cache=True)
def bfs_distances(mask, shape, periodic, start, max_dist):
    """Graph distances from flat site ``start`` through nearest-neighbour open sites.

    ``mask`` is the flat open-site mask; unreached sites get -1.  The search
    stops expanding at ``max_dist`` (use a negative value for no limit).
    """
    n = mask.shape[0]
    d = shape.shape[0]
    dist = np.full(n, -1, np.int64)
    if not mask[start]:
        return dist
    stride = np.ones(d, np.int64)
    for j in range(d - 2, -1, -1):
        stride[j] = stride[j + 1] * shape[j + 1]
    queue = np.empty(n, np.int64)
    head = 0
    tail = 0
    queue[tail] = start
    tail += 1
    dist[start] = 0
    while head < tail:
        cur = queue[head]
        head += 1
        dc = dist[cur]
        if max_dist >= 0 and dc >= max_dist:
            continue
        for j in range(d):
            cj = (cur // stride[j]) % shape[j]
            for sgn in (-1, 1):
                nj = cj + sgn
                if nj < 0 or nj >= shape[j]:
                    if not periodic:
                        continue
                    nj = nj % shape[j]
                nb = cur + (nj - cj) * stride[j]
                if mask[nb] and dist[nb] < 0:
                    dist[nb] = dc + 1
                    queue[tail] = nb
                    tail += 1
    return dist
