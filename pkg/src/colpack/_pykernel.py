"""Pure-Python Monte Carlo kernel.

Line-for-line twin of ``_ckernel.pyx``: same random-number layout, same
arithmetic order, so both backends produce bit-identical trajectories.
Positions are always stored with three components (z = 0 in 2D) and
orientations as unit quaternions ``(w, x, y, z)``.
"""

import math

ROUND, HULL, ELLIPSOID = 0, 1, 2
EPS = 1e-9
GJK_TOL = 1e-10
GJK_MAXIT = 64
PW_TOL = 1e-10
RAND_PER_TRIAL = 6

BACKEND = "python"


class _Species:
    __slots__ = ("cls", "circ", "rad", "verts", "fnorm", "edir", "semi", "orientable")


def _unpack(tab):
    out = []
    for s in range(len(tab.cls)):
        sp = _Species()
        sp.cls = int(tab.cls[s])
        sp.circ = float(tab.circ[s])
        sp.rad = float(tab.rad[s])
        sp.verts = [tuple(float(c) for c in tab.verts[s, k]) for k in range(int(tab.nv[s]))]
        sp.fnorm = [tuple(float(c) for c in tab.fnorm[s, k]) for k in range(int(tab.nf[s]))]
        sp.edir = [tuple(float(c) for c in tab.edir[s, k]) for k in range(int(tab.ne[s]))]
        sp.semi = tuple(float(c) for c in tab.semi[s])
        sp.orientable = int(tab.orientable[s])
        out.append(sp)
    return out


# -- small vector helpers ----------------------------------------------------

def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _rotmat(q):
    w, x, y, z = q
    return (1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
            2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
            2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y))


def _rot(R, v):
    return (R[0] * v[0] + R[1] * v[1] + R[2] * v[2],
            R[3] * v[0] + R[4] * v[1] + R[5] * v[2],
            R[6] * v[0] + R[7] * v[1] + R[8] * v[2])


def _rot_t(R, v):
    return (R[0] * v[0] + R[3] * v[1] + R[6] * v[2],
            R[1] * v[0] + R[4] * v[1] + R[7] * v[2],
            R[2] * v[0] + R[5] * v[1] + R[8] * v[2])


def _min_image(d, box, dim):
    dx = d[0] - box[0] * math.floor(d[0] / box[0] + 0.5)
    dy = d[1] - box[1] * math.floor(d[1] / box[1] + 0.5)
    dz = 0.0
    if dim == 3:
        dz = d[2] - box[2] * math.floor(d[2] / box[2] + 0.5)
    return (dx, dy, dz)


def _wrap(x, L):
    x = x - L * math.floor(x / L)
    if x >= L:
        x = x - L
    return x


# -- GJK distance between spheropolytope cores --------------------------------

def _support(sp, R, p, d):
    db = _rot_t(R, d)
    best = 0
    bestv = _dot(sp.verts[0], db)
    for k in range(1, len(sp.verts)):
        v = _dot(sp.verts[k], db)
        if v > bestv:
            bestv = v
            best = k
    w = _rot(R, sp.verts[best])
    return (w[0] + p[0], w[1] + p[1], w[2] + p[2])


def _closest_segment(a, b):
    ab = _sub(b, a)
    den = _dot(ab, ab)
    if den <= 0.0:
        return a, [a]
    t = -_dot(a, ab) / den
    if t <= 0.0:
        return a, [a]
    if t >= 1.0:
        return b, [b]
    return (a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]), [a, b]


def _closest_triangle(a, b, c):
    ab = _sub(b, a)
    ac = _sub(c, a)
    d1 = -_dot(ab, a)
    d2 = -_dot(ac, a)
    if d1 <= 0.0 and d2 <= 0.0:
        return a, [a]
    d3 = -_dot(ab, b)
    d4 = -_dot(ac, b)
    if d3 >= 0.0 and d4 <= d3:
        return b, [b]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return (a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]), [a, b]
    d5 = -_dot(ab, c)
    d6 = -_dot(ac, c)
    if d6 >= 0.0 and d5 <= d6:
        return c, [c]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return (a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]), [a, c]
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return (b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])), [b, c]
    den = va + vb + vc
    if den <= 1e-300:
        # degenerate (collinear) triangle: best of its edges
        best = None
        for s0, s1 in ((a, b), (a, c), (b, c)):
            q, simp = _closest_segment(s0, s1)
            if best is None or _dot(q, q) < _dot(best[0], best[0]):
                best = (q, simp)
        return best
    den = 1.0 / den
    v = vb * den
    w = vc * den
    return (a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w,
            a[2] + ab[2] * v + ac[2] * w), [a, b, c]


def _closest_tetra(a, b, c, d):
    best = None
    inside = True
    for p0, p1, p2, p3 in ((a, b, c, d), (a, c, d, b), (a, d, b, c), (b, d, c, a)):
        n = _cross(_sub(p1, p0), _sub(p2, p0))
        sp = -_dot(p0, n)
        sd = _dot(_sub(p3, p0), n)
        if sd * sd <= 1e-24 * _dot(n, n) * _dot(n, n) or sp * sd < 0.0:
            inside = False
            q, simp = _closest_triangle(p0, p1, p2)
            if best is None or _dot(q, q) < _dot(best[0], best[0]):
                best = (q, simp)
    if inside:
        return (0.0, 0.0, 0.0), [a, b, c, d]
    return best


def _gjk_overlap(spi, Ri, pi, spj, Rj, pj, rsum, dim):
    """True iff dist(core_i, core_j) < rsum - EPS."""
    thr = rsum - EPS
    if thr <= 0.0:
        return False
    thr2 = thr * thr
    v = _sub(_support(spi, Ri, pi, (1.0, 0.0, 0.0)), _support(spj, Rj, pj, (-1.0, 0.0, 0.0)))
    simplex = []
    for _ in range(GJK_MAXIT):
        vv = _dot(v, v)
        if vv < thr2:
            return True
        nv = (-v[0], -v[1], -v[2])
        w = _sub(_support(spi, Ri, pi, nv), _support(spj, Rj, pj, v))
        vw = _dot(v, w)
        if vw > 0.0 and vw * vw >= thr2 * vv:
            return False
        if vv - vw <= GJK_TOL * vv:
            return False
        simplex.append(w)
        n = len(simplex)
        if n == 1:
            v, simplex = w, [w]
        elif n == 2:
            v, simplex = _closest_segment(simplex[0], simplex[1])
        elif n == 3:
            v, simplex = _closest_triangle(simplex[0], simplex[1], simplex[2])
        else:
            v, simplex = _closest_tetra(simplex[0], simplex[1], simplex[2], simplex[3])
        if len(simplex) == 4 or (dim == 2 and len(simplex) == 3):
            return True
    return _dot(v, v) < thr2


# -- separating-axis test for pure polytopes ---------------------------------

def _project(sp, R, p, axis):
    lo = hi = None
    for vb in sp.verts:
        w = _rot(R, vb)
        x = _dot((w[0] + p[0], w[1] + p[1], w[2] + p[2]), axis)
        if lo is None or x < lo:
            lo = x
        if hi is None or x > hi:
            hi = x
    return lo, hi


def _separated_on(spi, Ri, pi, spj, Rj, pj, axis):
    ai, bi = _project(spi, Ri, pi, axis)
    aj, bj = _project(spj, Rj, pj, axis)
    depth = bi - aj
    if bj - ai < depth:
        depth = bj - ai
    return depth <= EPS


def _sat_overlap(spi, Ri, pi, spj, Rj, pj, dim):
    for n in spi.fnorm:
        if _separated_on(spi, Ri, pi, spj, Rj, pj, _rot(Ri, n)):
            return False
    for n in spj.fnorm:
        if _separated_on(spi, Ri, pi, spj, Rj, pj, _rot(Rj, n)):
            return False
    if dim == 3:
        for ea in spi.edir:
            wa = _rot(Ri, ea)
            for eb in spj.edir:
                c = _cross(wa, _rot(Rj, eb))
                nn = _dot(c, c)
                if nn < 1e-18:
                    continue
                nn = math.sqrt(nn)
                if _separated_on(spi, Ri, pi, spj, Rj, pj, (c[0] / nn, c[1] / nn, c[2] / nn)):
                    return False
    return True


# -- Perram-Wertheim ---------------------------------------------------------

def _pw_matrix(R, s):
    # R diag(s^2) R^T, symmetric, stored as (xx, xy, xz, yy, yz, zz)
    a, b, c = s[0] * s[0], s[1] * s[1], s[2] * s[2]
    return (R[0] * R[0] * a + R[1] * R[1] * b + R[2] * R[2] * c,
            R[0] * R[3] * a + R[1] * R[4] * b + R[2] * R[5] * c,
            R[0] * R[6] * a + R[1] * R[7] * b + R[2] * R[8] * c,
            R[3] * R[3] * a + R[4] * R[4] * b + R[5] * R[5] * c,
            R[3] * R[6] * a + R[4] * R[7] * b + R[5] * R[8] * c,
            R[6] * R[6] * a + R[7] * R[7] * b + R[8] * R[8] * c)


def _pw_eval(A, B, r, lam, dim):
    m0 = (1.0 - lam) * A[0] + lam * B[0]
    m1 = (1.0 - lam) * A[1] + lam * B[1]
    m2 = (1.0 - lam) * A[2] + lam * B[2]
    m3 = (1.0 - lam) * A[3] + lam * B[3]
    m4 = (1.0 - lam) * A[4] + lam * B[4]
    m5 = (1.0 - lam) * A[5] + lam * B[5]
    if dim == 2:
        det = m0 * m3 - m1 * m1
        x0 = (m3 * r[0] - m1 * r[1]) / det
        x1 = (m0 * r[1] - m1 * r[0]) / det
        x2 = 0.0
    else:
        c00 = m3 * m5 - m4 * m4
        c01 = m2 * m4 - m1 * m5
        c02 = m1 * m4 - m2 * m3
        c11 = m0 * m5 - m2 * m2
        c12 = m1 * m2 - m0 * m4
        c22 = m0 * m3 - m1 * m1
        det = m0 * c00 + m1 * c01 + m2 * c02
        x0 = (c00 * r[0] + c01 * r[1] + c02 * r[2]) / det
        x1 = (c01 * r[0] + c11 * r[1] + c12 * r[2]) / det
        x2 = (c02 * r[0] + c12 * r[1] + c22 * r[2]) / det
    rx = r[0] * x0 + r[1] * x1 + r[2] * x2
    d0 = B[0] - A[0]
    d1 = B[1] - A[1]
    d2 = B[2] - A[2]
    d3 = B[3] - A[3]
    d4 = B[4] - A[4]
    d5 = B[5] - A[5]
    xdx = (x0 * (d0 * x0 + d1 * x1 + d2 * x2) + x1 * (d1 * x0 + d3 * x1 + d4 * x2)
           + x2 * (d2 * x0 + d4 * x1 + d5 * x2))
    f = lam * (1.0 - lam) * rx
    df = (1.0 - 2.0 * lam) * rx - lam * (1.0 - lam) * xdx
    return f, df


def _pw_overlap(spi, Ri, spj, Rj, r, dim):
    A = _pw_matrix(Ri, spi.semi)
    B = _pw_matrix(Rj, spj.semi)
    lim = 1.0 - EPS
    lo = 0.0
    hi = 1.0
    for _ in range(100):
        lam = 0.5 * (lo + hi)
        f, df = _pw_eval(A, B, r, lam, dim)
        if f >= lim:
            return False
        if df < PW_TOL and df > -PW_TOL:
            return True
        if df > 0.0:
            lo = lam
        else:
            hi = lam
        if hi - lo < 1e-15:
            return True
    return True


# -- pair dispatch -----------------------------------------------------------

def _pair(species, si, pi, Ri, sj, pj, Rj, box, dim):
    spi = species[si]
    spj = species[sj]
    r = _min_image(_sub(pj, pi), box, dim)
    rr = _dot(r, r)
    cut = spi.circ + spj.circ
    if rr >= cut * cut:
        return False
    ci = spi.cls
    cj = spj.cls
    if ci == ROUND and cj == ROUND:
        s = spi.rad + spj.rad - EPS
        return rr < s * s
    if ci == ELLIPSOID or cj == ELLIPSOID:
        if ci == HULL or cj == HULL:
            return True
        return _pw_overlap(spi, Ri, spj, Rj, r, dim)
    origin = (0.0, 0.0, 0.0)
    if spi.rad == 0.0 and spj.rad == 0.0:
        return _sat_overlap(spi, Ri, origin, spj, Rj, r, dim)
    return _gjk_overlap(spi, Ri, origin, spj, Rj, r, spi.rad + spj.rad, dim)


def pair_overlap(tab, si, pi, qi, sj, pj, qj, box, dim):
    species = _unpack(tab)
    bx = tuple(float(x) for x in box)
    if bx[0] <= 0.0:
        bx = (1e300, 1e300, 1e300)
    return _pair(species, int(si), tuple(float(x) for x in pi), _rotmat(tuple(float(x) for x in qi)),
                 int(sj), tuple(float(x) for x in pj), _rotmat(tuple(float(x) for x in qj)), bx, dim)


# -- cell list -----------------------------------------------------------------

class _Cells:
    def __init__(self, pos, box, dim, width):
        self.dim = dim
        self.nc = [1, 1, 1]
        self.brute = False
        for d in range(dim):
            n = int(box[d] / width)
            if n < 3:
                self.brute = True
                n = 1
            self.nc[d] = n
        if self.brute:
            self.nc = [1, 1, 1]
        self.box = box
        ncell = self.nc[0] * self.nc[1] * self.nc[2]
        self.head = [-1] * ncell
        n = len(pos)
        self.nxt = [-1] * n
        self.prv = [-1] * n
        self.cell = [0] * n
        for i in range(n):
            self.insert(i, self.index(pos[i]))

    def coord(self, x, d):
        if self.nc[d] == 1:
            return 0
        c = int(x / self.box[d] * self.nc[d])
        if c >= self.nc[d]:
            c = self.nc[d] - 1
        if c < 0:
            c = 0
        return c

    def index(self, p):
        return (self.coord(p[0], 0) * self.nc[1] + self.coord(p[1], 1)) * self.nc[2] + self.coord(p[2], 2)

    def insert(self, i, c):
        self.cell[i] = c
        self.prv[i] = -1
        self.nxt[i] = self.head[c]
        if self.head[c] != -1:
            self.prv[self.head[c]] = i
        self.head[c] = i

    def remove(self, i):
        c = self.cell[i]
        if self.prv[i] != -1:
            self.nxt[self.prv[i]] = self.nxt[i]
        else:
            self.head[c] = self.nxt[i]
        if self.nxt[i] != -1:
            self.prv[self.nxt[i]] = self.prv[i]

    def neighbor_cells(self, p):
        if self.brute:
            return [0]
        cx, cy, cz = self.coord(p[0], 0), self.coord(p[1], 1), self.coord(p[2], 2)
        nx, ny, nz = self.nc
        out = []
        zr = (-1, 0, 1) if self.dim == 3 else (0,)
        for dx in (-1, 0, 1):
            x = (cx + dx) % nx
            for dy in (-1, 0, 1):
                y = (cy + dy) % ny
                for dz in zr:
                    z = (cz + dz) % nz
                    out.append((x * ny + y) * nz + z)
        return out


def _count_for(species, types, pos, rots, cells, i, p, R, box, dim, stop_at_first):
    si = types[i]
    count = 0
    for c in cells.neighbor_cells(p):
        j = cells.head[c]
        while j != -1:
            if j != i and _pair(species, si, p, R, types[j], pos[j], rots[j], box, dim):
                count += 1
                if stop_at_first:
                    return count
            j = cells.nxt[j]
    return count


def _count_all(species, types, pos, rots, cells, box, dim):
    total = 0
    n = len(types)
    for i in range(n):
        for c in cells.neighbor_cells(pos[i]):
            j = cells.head[c]
            while j != -1:
                if j > i and _pair(species, types[i], pos[i], rots[i], types[j], pos[j], rots[j], box, dim):
                    total += 1
                j = cells.nxt[j]
    return total


def _cell_width(species, delta):
    w = 0.0
    for sp in species:
        if 2.0 * sp.circ > w:
            w = 2.0 * sp.circ
    dmax = 0.0
    for d in delta:
        if d > dmax:
            dmax = d
    return w + dmax


def _load(types, pos, quat):
    t = [int(x) for x in types]
    p = [(float(r[0]), float(r[1]), float(r[2])) for r in pos]
    q = [(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in quat]
    return t, p, q


def count_overlaps(tab, types, pos, quat, box, dim):
    species = _unpack(tab)
    t, p, q = _load(types, pos, quat)
    rots = [_rotmat(x) for x in q]
    bx = [float(x) for x in box]
    cells = _Cells(p, bx, dim, _cell_width(species, [0.0]))
    return _count_all(species, t, p, rots, cells, bx, dim)


def _volume_move(species, types, pos, rots, cells, box, dim, pressure, dV, u0, u1, delta):
    n = len(types)
    V = box[0] * box[1]
    if dim == 3:
        V = V * box[2]
    Vn = V + dV * (2.0 * u0 - 1.0)
    if Vn <= 0.0:
        return False, cells
    lnacc = -pressure * (Vn - V) + n * math.log(Vn / V)
    if lnacc < 0.0 and u1 >= math.exp(lnacc):
        return False, cells
    scale = math.pow(Vn / V, 1.0 / dim)
    old_box = list(box)
    old_pos = list(pos)
    for d in range(dim):
        box[d] = old_box[d] * scale
    for i in range(n):
        x = pos[i]
        pos[i] = (_wrap(x[0] * scale, box[0]), _wrap(x[1] * scale, box[1]),
                  _wrap(x[2] * scale, box[2]) if dim == 3 else 0.0)
    new_cells = _Cells(pos, box, dim, _cell_width(species, delta))
    if scale < 1.0 and _count_all(species, types, pos, rots, new_cells, box, dim) > 0:
        for d in range(dim):
            box[d] = old_box[d]
        pos[:] = old_pos
        return False, cells
    return True, new_cells


def volume_move(tab, types, pos, quat, box, dim, pressure, dV, u0, u1):
    """Single NPT volume move; updates ``pos`` and ``box`` in place on acceptance."""
    species = _unpack(tab)
    t, p, q = _load(types, pos, quat)
    rots = [_rotmat(x) for x in q]
    bx = [float(x) for x in box]
    cells = None
    ok, _ = _volume_move(species, t, p, rots, cells, bx, dim, float(pressure), float(dV),
                         float(u0), float(u1), [0.0])
    if ok:
        for i in range(len(t)):
            pos[i, 0], pos[i, 1], pos[i, 2] = p[i]
        for d in range(3):
            box[d] = bx[d]
    return ok


def run_sweeps(tab, types, pos, quat, box, dim, delta, dtheta, dV, pressure, npt, rand, stats):
    """Run ``len(rand)`` sweeps in place. ``rand`` has shape (n_sweeps, 6N + 2)."""
    species = _unpack(tab)
    t, p, q = _load(types, pos, quat)
    rots = [_rotmat(x) for x in q]
    bx = [float(x) for x in box]
    dl = [float(x) for x in delta]
    dth = [float(x) for x in dtheta]
    dV = float(dV)
    pressure = float(pressure)
    n = len(t)
    st = [int(x) for x in stats]
    cells = _Cells(p, bx, dim, _cell_width(species, dl))
    nsweep = rand.shape[0]
    for s in range(nsweep):
        u = rand[s].tolist()
        for k in range(n):
            base = RAND_PER_TRIAL * k
            i = int(u[base] * n)
            if i >= n:
                i = n - 1
            si = t[i]
            old_p = p[i]
            old_q = q[i]
            old_R = rots[i]
            if species[si].orientable and u[base + 1] < 0.5:
                rotate = True
                if dim == 2:
                    ang = dth[si] * (2.0 * u[base + 2] - 1.0)
                    ax, ay, az = 0.0, 0.0, 1.0
                else:
                    z = 2.0 * u[base + 2] - 1.0
                    phi = 2.0 * math.pi * u[base + 3]
                    sz = math.sqrt(max(0.0, 1.0 - z * z))
                    ax, ay, az = sz * math.cos(phi), sz * math.sin(phi), z
                    ang = dth[si] * (2.0 * u[base + 4] - 1.0)
                c = math.cos(0.5 * ang)
                sn = math.sin(0.5 * ang)
                rw, rx, ry, rz = c, sn * ax, sn * ay, sn * az
                w0, x0, y0, z0 = old_q
                nw = rw * w0 - rx * x0 - ry * y0 - rz * z0
                nx = rw * x0 + rx * w0 + ry * z0 - rz * y0
                ny = rw * y0 - rx * z0 + ry * w0 + rz * x0
                nz = rw * z0 + rx * y0 - ry * x0 + rz * w0
                norm = math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
                new_q = (nw / norm, nx / norm, ny / norm, nz / norm)
                new_R = _rotmat(new_q)
                new_p = old_p
                st[3] += 1
            else:
                rotate = False
                d = dl[si]
                px = _wrap(old_p[0] + d * (2.0 * u[base + 2] - 1.0), bx[0])
                py = _wrap(old_p[1] + d * (2.0 * u[base + 3] - 1.0), bx[1])
                pz = 0.0
                if dim == 3:
                    pz = _wrap(old_p[2] + d * (2.0 * u[base + 4] - 1.0), bx[2])
                new_p = (px, py, pz)
                new_q = old_q
                new_R = old_R
                st[1] += 1
            accept = _count_for(species, t, p, rots, cells, i, new_p, new_R, bx, dim, True) == 0
            if accept:
                if rotate:
                    q[i] = new_q
                    rots[i] = new_R
                    st[2] += 1
                else:
                    p[i] = new_p
                    nc = cells.index(new_p)
                    if nc != cells.cell[i]:
                        cells.remove(i)
                        cells.insert(i, nc)
                    st[0] += 1
        if npt:
            st[5] += 1
            ok, cells = _volume_move(species, t, p, rots, cells, bx, dim, pressure, dV,
                                     u[RAND_PER_TRIAL * n], u[RAND_PER_TRIAL * n + 1], dl)
            if ok:
                st[4] += 1
    for i in range(n):
        pos[i, 0], pos[i, 1], pos[i, 2] = p[i]
        quat[i, 0], quat[i, 1], quat[i, 2], quat[i, 3] = q[i]
    for d in range(3):
        box[d] = bx[d]
    for k in range(6):
        stats[k] = st[k]
    return nsweep
