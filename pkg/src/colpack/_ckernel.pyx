# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo kernel; mirrors ``_pykernel`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, cos, sin, log, exp, pow, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF ROUND = 0
DEF HULL = 1
DEF ELLIPSOID = 2
DEF EPS = 1e-9
DEF GJK_TOL = 1e-10
DEF GJK_MAXIT = 64
DEF PW_TOL = 1e-10
DEF RPT = 6

BACKEND = "cython"


cdef struct Tab:
    int ns
    int* cls
    double* circ
    double* rad
    int* nv
    double* verts
    int maxv
    int* nf
    double* fnorm
    int maxf
    int* ne
    double* edir
    int maxe
    double* semi
    int* orientable


cdef class _TabHolder:
    """Keeps contiguous copies of the species arrays alive while C code uses them."""
    cdef object arrays
    cdef Tab tab

    def __init__(self, t):
        cdef cnp.ndarray cls = np.ascontiguousarray(t.cls, dtype=np.int32)
        cdef cnp.ndarray circ = np.ascontiguousarray(t.circ, dtype=np.float64)
        cdef cnp.ndarray rad = np.ascontiguousarray(t.rad, dtype=np.float64)
        cdef cnp.ndarray nv = np.ascontiguousarray(t.nv, dtype=np.int32)
        cdef cnp.ndarray verts = np.ascontiguousarray(t.verts, dtype=np.float64)
        cdef cnp.ndarray nf = np.ascontiguousarray(t.nf, dtype=np.int32)
        cdef cnp.ndarray fnorm = np.ascontiguousarray(t.fnorm, dtype=np.float64)
        cdef cnp.ndarray ne = np.ascontiguousarray(t.ne, dtype=np.int32)
        cdef cnp.ndarray edir = np.ascontiguousarray(t.edir, dtype=np.float64)
        cdef cnp.ndarray semi = np.ascontiguousarray(t.semi, dtype=np.float64)
        cdef cnp.ndarray orientable = np.ascontiguousarray(t.orientable, dtype=np.int32)
        self.arrays = (cls, circ, rad, nv, verts, nf, fnorm, ne, edir, semi, orientable)
        self.tab.ns = cls.shape[0]
        self.tab.cls = <int*> cls.data
        self.tab.circ = <double*> circ.data
        self.tab.rad = <double*> rad.data
        self.tab.nv = <int*> nv.data
        self.tab.verts = <double*> verts.data
        self.tab.maxv = verts.shape[1]
        self.tab.nf = <int*> nf.data
        self.tab.fnorm = <double*> fnorm.data
        self.tab.maxf = fnorm.shape[1]
        self.tab.ne = <int*> ne.data
        self.tab.edir = <double*> edir.data
        self.tab.maxe = edir.shape[1]
        self.tab.semi = <double*> semi.data
        self.tab.orientable = <int*> orientable.data


# -- vector helpers ----------------------------------------------------------

cdef inline double dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void sub3(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[0] - b[0]
    out[1] = a[1] - b[1]
    out[2] = a[2] - b[2]


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline void copy3(const double* a, double* out) noexcept nogil:
    out[0] = a[0]
    out[1] = a[1]
    out[2] = a[2]


cdef inline void rotmat(const double* q, double* R) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0] = 1.0 - 2.0 * (y * y + z * z)
    R[1] = 2.0 * (x * y - w * z)
    R[2] = 2.0 * (x * z + w * y)
    R[3] = 2.0 * (x * y + w * z)
    R[4] = 1.0 - 2.0 * (x * x + z * z)
    R[5] = 2.0 * (y * z - w * x)
    R[6] = 2.0 * (x * z - w * y)
    R[7] = 2.0 * (y * z + w * x)
    R[8] = 1.0 - 2.0 * (x * x + y * y)


cdef inline void rot(const double* R, const double* v, double* out) noexcept nogil:
    out[0] = R[0] * v[0] + R[1] * v[1] + R[2] * v[2]
    out[1] = R[3] * v[0] + R[4] * v[1] + R[5] * v[2]
    out[2] = R[6] * v[0] + R[7] * v[1] + R[8] * v[2]


cdef inline void rot_t(const double* R, const double* v, double* out) noexcept nogil:
    out[0] = R[0] * v[0] + R[3] * v[1] + R[6] * v[2]
    out[1] = R[1] * v[0] + R[4] * v[1] + R[7] * v[2]
    out[2] = R[2] * v[0] + R[5] * v[1] + R[8] * v[2]


cdef inline void min_image(const double* d, const double* box, int dim, double* out) noexcept nogil:
    out[0] = d[0] - box[0] * floor(d[0] / box[0] + 0.5)
    out[1] = d[1] - box[1] * floor(d[1] / box[1] + 0.5)
    out[2] = 0.0
    if dim == 3:
        out[2] = d[2] - box[2] * floor(d[2] / box[2] + 0.5)


cdef inline double wrap(double x, double L) noexcept nogil:
    x = x - L * floor(x / L)
    if x >= L:
        x = x - L
    return x


# -- GJK -----------------------------------------------------------------------

cdef void support(const Tab* t, int s, const double* R, const double* p, const double* d,
                  double* out) noexcept nogil:
    cdef double db[3]
    cdef double w[3]
    cdef int k, best = 0
    cdef const double* vs = t.verts + s * t.maxv * 3
    rot_t(R, d, db)
    cdef double bestv = dot3(vs, db), v
    for k in range(1, t.nv[s]):
        v = dot3(vs + 3 * k, db)
        if v > bestv:
            bestv = v
            best = k
    rot(R, vs + 3 * best, w)
    out[0] = w[0] + p[0]
    out[1] = w[1] + p[1]
    out[2] = w[2] + p[2]


# Each closest_* writes the closest point to the origin into ``v`` and the
# reduced simplex into ``outs``; the return value is its vertex count.

cdef int closest_segment(const double* a, const double* b, double* v, double* outs) noexcept nogil:
    cdef double ab[3]
    sub3(b, a, ab)
    cdef double den = dot3(ab, ab), t
    if den <= 0.0:
        copy3(a, v)
        copy3(a, outs)
        return 1
    t = -dot3(a, ab) / den
    if t <= 0.0:
        copy3(a, v)
        copy3(a, outs)
        return 1
    if t >= 1.0:
        copy3(b, v)
        copy3(b, outs)
        return 1
    v[0] = a[0] + t * ab[0]
    v[1] = a[1] + t * ab[1]
    v[2] = a[2] + t * ab[2]
    copy3(a, outs)
    copy3(b, outs + 3)
    return 2


cdef int closest_triangle(const double* a, const double* b, const double* c, double* v,
                          double* outs) noexcept nogil:
    cdef double ab[3]
    cdef double ac[3]
    cdef double d1, d2, d3, d4, d5, d6, vc, vb, va, w, vv, den
    cdef double q[3]
    cdef double tmp[6]
    cdef double bestd
    cdef int n, bestn, k
    sub3(b, a, ab)
    sub3(c, a, ac)
    d1 = -dot3(ab, a)
    d2 = -dot3(ac, a)
    if d1 <= 0.0 and d2 <= 0.0:
        copy3(a, v)
        copy3(a, outs)
        return 1
    d3 = -dot3(ab, b)
    d4 = -dot3(ac, b)
    if d3 >= 0.0 and d4 <= d3:
        copy3(b, v)
        copy3(b, outs)
        return 1
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        vv = d1 / (d1 - d3)
        v[0] = a[0] + vv * ab[0]
        v[1] = a[1] + vv * ab[1]
        v[2] = a[2] + vv * ab[2]
        copy3(a, outs)
        copy3(b, outs + 3)
        return 2
    d5 = -dot3(ab, c)
    d6 = -dot3(ac, c)
    if d6 >= 0.0 and d5 <= d6:
        copy3(c, v)
        copy3(c, outs)
        return 1
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        v[0] = a[0] + w * ac[0]
        v[1] = a[1] + w * ac[1]
        v[2] = a[2] + w * ac[2]
        copy3(a, outs)
        copy3(c, outs + 3)
        return 2
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        v[0] = b[0] + w * (c[0] - b[0])
        v[1] = b[1] + w * (c[1] - b[1])
        v[2] = b[2] + w * (c[2] - b[2])
        copy3(b, outs)
        copy3(c, outs + 3)
        return 2
    den = va + vb + vc
    if den <= 1e-300:
        bestn = closest_segment(a, b, v, outs)
        bestd = dot3(v, v)
        n = closest_segment(a, c, q, tmp)
        if dot3(q, q) < bestd:
            bestd = dot3(q, q)
            copy3(q, v)
            for k in range(3 * n):
                outs[k] = tmp[k]
            bestn = n
        n = closest_segment(b, c, q, tmp)
        if dot3(q, q) < bestd:
            copy3(q, v)
            for k in range(3 * n):
                outs[k] = tmp[k]
            bestn = n
        return bestn
    den = 1.0 / den
    vv = vb * den
    w = vc * den
    v[0] = a[0] + ab[0] * vv + ac[0] * w
    v[1] = a[1] + ab[1] * vv + ac[1] * w
    v[2] = a[2] + ab[2] * vv + ac[2] * w
    copy3(a, outs)
    copy3(b, outs + 3)
    copy3(c, outs + 6)
    return 3


cdef int closest_tetra(const double* a, const double* b, const double* c, const double* d,
                       double* v, double* outs) noexcept nogil:
    cdef const double* f[4][4]
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double nrm[3]
    cdef double q[3]
    cdef double tmp[9]
    cdef double sp, sd, nn, bestd = 0.0
    cdef int k, m, n, bestn = 0, have = 0, inside = 1
    f[0][0] = a; f[0][1] = b; f[0][2] = c; f[0][3] = d
    f[1][0] = a; f[1][1] = c; f[1][2] = d; f[1][3] = b
    f[2][0] = a; f[2][1] = d; f[2][2] = b; f[2][3] = c
    f[3][0] = b; f[3][1] = d; f[3][2] = c; f[3][3] = a
    for k in range(4):
        sub3(f[k][1], f[k][0], e1)
        sub3(f[k][2], f[k][0], e2)
        cross3(e1, e2, nrm)
        sp = -dot3(f[k][0], nrm)
        sub3(f[k][3], f[k][0], e3)
        sd = dot3(e3, nrm)
        nn = dot3(nrm, nrm)
        if sd * sd <= 1e-24 * nn * nn or sp * sd < 0.0:
            inside = 0
            n = closest_triangle(f[k][0], f[k][1], f[k][2], q, tmp)
            if have == 0 or dot3(q, q) < bestd:
                have = 1
                bestd = dot3(q, q)
                copy3(q, v)
                for m in range(3 * n):
                    outs[m] = tmp[m]
                bestn = n
    if inside:
        v[0] = 0.0
        v[1] = 0.0
        v[2] = 0.0
        copy3(a, outs)
        copy3(b, outs + 3)
        copy3(c, outs + 6)
        copy3(d, outs + 9)
        return 4
    return bestn


cdef bint gjk_overlap(const Tab* t, int si, const double* Ri, const double* pi,
                      int sj, const double* Rj, const double* pj, double rsum, int dim) noexcept nogil:
    cdef double thr = rsum - EPS, thr2, vv, vw
    cdef double v[3]
    cdef double nv[3]
    cdef double w[3]
    cdef double sa[3]
    cdef double sb[3]
    cdef double simp[12]
    cdef double outs[12]
    cdef double ex[3]
    cdef int n = 0, it, k
    if thr <= 0.0:
        return 0
    thr2 = thr * thr
    ex[0] = 1.0; ex[1] = 0.0; ex[2] = 0.0
    support(t, si, Ri, pi, ex, sa)
    ex[0] = -1.0
    support(t, sj, Rj, pj, ex, sb)
    sub3(sa, sb, v)
    for it in range(GJK_MAXIT):
        vv = dot3(v, v)
        if vv < thr2:
            return 1
        nv[0] = -v[0]; nv[1] = -v[1]; nv[2] = -v[2]
        support(t, si, Ri, pi, nv, sa)
        support(t, sj, Rj, pj, v, sb)
        sub3(sa, sb, w)
        vw = dot3(v, w)
        if vw > 0.0 and vw * vw >= thr2 * vv:
            return 0
        if vv - vw <= GJK_TOL * vv:
            return 0
        copy3(w, simp + 3 * n)
        n += 1
        if n == 1:
            copy3(w, v)
        elif n == 2:
            n = closest_segment(simp, simp + 3, v, outs)
            for k in range(3 * n):
                simp[k] = outs[k]
        elif n == 3:
            n = closest_triangle(simp, simp + 3, simp + 6, v, outs)
            for k in range(3 * n):
                simp[k] = outs[k]
        else:
            n = closest_tetra(simp, simp + 3, simp + 6, simp + 9, v, outs)
            for k in range(3 * n):
                simp[k] = outs[k]
        if n == 4 or (dim == 2 and n == 3):
            return 1
    return dot3(v, v) < thr2


# -- SAT -----------------------------------------------------------------------

cdef void project(const Tab* t, int s, const double* R, const double* p, const double* axis,
                  double* lo, double* hi) noexcept nogil:
    cdef const double* vs = t.verts + s * t.maxv * 3
    cdef double w[3]
    cdef double x
    cdef int k
    for k in range(t.nv[s]):
        rot(R, vs + 3 * k, w)
        w[0] = w[0] + p[0]
        w[1] = w[1] + p[1]
        w[2] = w[2] + p[2]
        x = dot3(w, axis)
        if k == 0 or x < lo[0]:
            lo[0] = x
        if k == 0 or x > hi[0]:
            hi[0] = x


cdef bint separated_on(const Tab* t, int si, const double* Ri, const double* pi,
                       int sj, const double* Rj, const double* pj, const double* axis) noexcept nogil:
    cdef double ai = 0.0, bi = 0.0, aj = 0.0, bj = 0.0, depth
    project(t, si, Ri, pi, axis, &ai, &bi)
    project(t, sj, Rj, pj, axis, &aj, &bj)
    depth = bi - aj
    if bj - ai < depth:
        depth = bj - ai
    return depth <= EPS


cdef bint sat_overlap(const Tab* t, int si, const double* Ri, const double* pi,
                      int sj, const double* Rj, const double* pj, int dim) noexcept nogil:
    cdef double ax[3]
    cdef double wa[3]
    cdef double wb[3]
    cdef double c[3]
    cdef double nn
    cdef int k, m
    for k in range(t.nf[si]):
        rot(Ri, t.fnorm + (si * t.maxf + k) * 3, ax)
        if separated_on(t, si, Ri, pi, sj, Rj, pj, ax):
            return 0
    for k in range(t.nf[sj]):
        rot(Rj, t.fnorm + (sj * t.maxf + k) * 3, ax)
        if separated_on(t, si, Ri, pi, sj, Rj, pj, ax):
            return 0
    if dim == 3:
        for k in range(t.ne[si]):
            rot(Ri, t.edir + (si * t.maxe + k) * 3, wa)
            for m in range(t.ne[sj]):
                rot(Rj, t.edir + (sj * t.maxe + m) * 3, wb)
                cross3(wa, wb, c)
                nn = dot3(c, c)
                if nn < 1e-18:
                    continue
                nn = sqrt(nn)
                ax[0] = c[0] / nn
                ax[1] = c[1] / nn
                ax[2] = c[2] / nn
                if separated_on(t, si, Ri, pi, sj, Rj, pj, ax):
                    return 0
    return 1


# -- Perram-Wertheim -------------------------------------------------------------

cdef void pw_matrix(const double* R, const double* s, double* M) noexcept nogil:
    cdef double a = s[0] * s[0], b = s[1] * s[1], c = s[2] * s[2]
    M[0] = R[0] * R[0] * a + R[1] * R[1] * b + R[2] * R[2] * c
    M[1] = R[0] * R[3] * a + R[1] * R[4] * b + R[2] * R[5] * c
    M[2] = R[0] * R[6] * a + R[1] * R[7] * b + R[2] * R[8] * c
    M[3] = R[3] * R[3] * a + R[4] * R[4] * b + R[5] * R[5] * c
    M[4] = R[3] * R[6] * a + R[4] * R[7] * b + R[5] * R[8] * c
    M[5] = R[6] * R[6] * a + R[7] * R[7] * b + R[8] * R[8] * c


cdef void pw_eval(const double* A, const double* B, const double* r, double lam, int dim,
                  double* f, double* df) noexcept nogil:
    cdef double m0 = (1.0 - lam) * A[0] + lam * B[0]
    cdef double m1 = (1.0 - lam) * A[1] + lam * B[1]
    cdef double m2 = (1.0 - lam) * A[2] + lam * B[2]
    cdef double m3 = (1.0 - lam) * A[3] + lam * B[3]
    cdef double m4 = (1.0 - lam) * A[4] + lam * B[4]
    cdef double m5 = (1.0 - lam) * A[5] + lam * B[5]
    cdef double det, x0, x1, x2, c00, c01, c02, c11, c12, c22, rx, xdx
    cdef double d0, d1, d2, d3, d4, d5
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
    f[0] = lam * (1.0 - lam) * rx
    df[0] = (1.0 - 2.0 * lam) * rx - lam * (1.0 - lam) * xdx


cdef bint pw_overlap(const Tab* t, int si, const double* Ri, int sj, const double* Rj,
                     const double* r, int dim) noexcept nogil:
    cdef double A[6]
    cdef double B[6]
    cdef double lim = 1.0 - EPS, lo = 0.0, hi = 1.0, lam, f = 0.0, df = 0.0
    cdef int it
    pw_matrix(Ri, t.semi + 3 * si, A)
    pw_matrix(Rj, t.semi + 3 * sj, B)
    for it in range(100):
        lam = 0.5 * (lo + hi)
        pw_eval(A, B, r, lam, dim, &f, &df)
        if f >= lim:
            return 0
        if df < PW_TOL and df > -PW_TOL:
            return 1
        if df > 0.0:
            lo = lam
        else:
            hi = lam
        if hi - lo < 1e-15:
            return 1
    return 1


# -- pair dispatch -----------------------------------------------------------------

cdef bint pair(const Tab* t, int si, const double* pi, const double* Ri,
               int sj, const double* pj, const double* Rj, const double* box, int dim) noexcept nogil:
    cdef double d[3]
    cdef double r[3]
    cdef double origin[3]
    cdef double rr, cut, s
    cdef int ci, cj
    sub3(pj, pi, d)
    min_image(d, box, dim, r)
    rr = dot3(r, r)
    cut = t.circ[si] + t.circ[sj]
    if rr >= cut * cut:
        return 0
    ci = t.cls[si]
    cj = t.cls[sj]
    if ci == ROUND and cj == ROUND:
        s = t.rad[si] + t.rad[sj] - EPS
        return rr < s * s
    if ci == ELLIPSOID or cj == ELLIPSOID:
        if ci == HULL or cj == HULL:
            return 1
        return pw_overlap(t, si, Ri, sj, Rj, r, dim)
    origin[0] = 0.0
    origin[1] = 0.0
    origin[2] = 0.0
    if t.rad[si] == 0.0 and t.rad[sj] == 0.0:
        return sat_overlap(t, si, Ri, origin, sj, Rj, r, dim)
    return gjk_overlap(t, si, Ri, origin, sj, Rj, r, t.rad[si] + t.rad[sj], dim)


def pair_overlap(tab, int si, pi, qi, int sj, pj, qj, box, int dim):
    cdef _TabHolder h = _TabHolder(tab)
    cdef double p1[3]
    cdef double p2[3]
    cdef double q1[4]
    cdef double q2[4]
    cdef double R1[9]
    cdef double R2[9]
    cdef double bx[3]
    cdef int k
    for k in range(3):
        p1[k] = pi[k]
        p2[k] = pj[k]
        bx[k] = box[k]
    for k in range(4):
        q1[k] = qi[k]
        q2[k] = qj[k]
    if bx[0] <= 0.0:
        bx[0] = 1e300
        bx[1] = 1e300
        bx[2] = 1e300
    rotmat(q1, R1)
    rotmat(q2, R2)
    return bool(pair(&h.tab, si, p1, R1, sj, p2, R2, bx, dim))


# -- cell list -----------------------------------------------------------------------

cdef struct Cells:
    int nc[3]
    int brute
    int ncell
    int* head
    int* nxt
    int* prv
    int* cell
    int n


cdef inline int cell_coord(const Cells* c, double x, const double* box, int d) noexcept nogil:
    cdef int k
    if c.nc[d] == 1:
        return 0
    k = <int> (x / box[d] * c.nc[d])
    if k >= c.nc[d]:
        k = c.nc[d] - 1
    if k < 0:
        k = 0
    return k


cdef inline int cell_index(const Cells* c, const double* p, const double* box) noexcept nogil:
    return ((cell_coord(c, p[0], box, 0) * c.nc[1] + cell_coord(c, p[1], box, 1)) * c.nc[2]
            + cell_coord(c, p[2], box, 2))


cdef inline void cell_insert(Cells* c, int i, int k) noexcept nogil:
    c.cell[i] = k
    c.prv[i] = -1
    c.nxt[i] = c.head[k]
    if c.head[k] != -1:
        c.prv[c.head[k]] = i
    c.head[k] = i


cdef inline void cell_remove(Cells* c, int i) noexcept nogil:
    cdef int k = c.cell[i]
    if c.prv[i] != -1:
        c.nxt[c.prv[i]] = c.nxt[i]
    else:
        c.head[k] = c.nxt[i]
    if c.nxt[i] != -1:
        c.prv[c.nxt[i]] = c.prv[i]


cdef void cells_free(Cells* c) noexcept nogil:
    free(c.head)
    free(c.nxt)
    free(c.prv)
    free(c.cell)
    c.head = NULL
    c.nxt = NULL
    c.prv = NULL
    c.cell = NULL


cdef int cells_build(Cells* c, const double* pos, int n, const double* box, int dim,
                     double width) noexcept nogil:
    cdef int d, i, k
    c.brute = 0
    c.nc[0] = 1
    c.nc[1] = 1
    c.nc[2] = 1
    for d in range(dim):
        k = <int> (box[d] / width)
        if k < 3:
            c.brute = 1
            k = 1
        c.nc[d] = k
    if c.brute:
        c.nc[0] = 1
        c.nc[1] = 1
        c.nc[2] = 1
    c.ncell = c.nc[0] * c.nc[1] * c.nc[2]
    c.n = n
    c.head = <int*> malloc(c.ncell * sizeof(int))
    c.nxt = <int*> malloc(n * sizeof(int))
    c.prv = <int*> malloc(n * sizeof(int))
    c.cell = <int*> malloc(n * sizeof(int))
    if c.head == NULL or c.nxt == NULL or c.prv == NULL or c.cell == NULL:
        cells_free(c)
        return -1
    for k in range(c.ncell):
        c.head[k] = -1
    for i in range(n):
        cell_insert(c, i, cell_index(c, pos + 3 * i, box))
    return 0


cdef int neighbor_cells(const Cells* c, const double* p, const double* box, int dim,
                        int* out) noexcept nogil:
    cdef int cx, cy, cz, dx, dy, dz, x, y, z, n = 0, zlo, zhi
    if c.brute:
        out[0] = 0
        return 1
    cx = cell_coord(c, p[0], box, 0)
    cy = cell_coord(c, p[1], box, 1)
    cz = cell_coord(c, p[2], box, 2)
    zlo = -1 if dim == 3 else 0
    zhi = 1 if dim == 3 else 0
    for dx in range(-1, 2):
        x = (cx + dx + c.nc[0]) % c.nc[0]
        for dy in range(-1, 2):
            y = (cy + dy + c.nc[1]) % c.nc[1]
            for dz in range(zlo, zhi + 1):
                z = (cz + dz + c.nc[2]) % c.nc[2]
                out[n] = (x * c.nc[1] + y) * c.nc[2] + z
                n += 1
    return n


cdef int count_for(const Tab* t, const int* types, const double* pos, const double* rots,
                   const Cells* c, int i, const double* p, const double* R, const double* box,
                   int dim, bint stop_at_first) noexcept nogil:
    cdef int cellbuf[27]
    cdef int nc = neighbor_cells(c, p, box, dim, cellbuf)
    cdef int k, j, count = 0
    cdef int si = types[i]
    for k in range(nc):
        j = c.head[cellbuf[k]]
        while j != -1:
            if j != i and pair(t, si, p, R, types[j], pos + 3 * j, rots + 9 * j, box, dim):
                count += 1
                if stop_at_first:
                    return count
            j = c.nxt[j]
    return count


cdef long count_all(const Tab* t, const int* types, const double* pos, const double* rots,
                    const Cells* c, int n, const double* box, int dim) noexcept nogil:
    cdef int cellbuf[27]
    cdef int i, k, j, nc
    cdef long total = 0
    for i in range(n):
        nc = neighbor_cells(c, pos + 3 * i, box, dim, cellbuf)
        for k in range(nc):
            j = c.head[cellbuf[k]]
            while j != -1:
                if j > i and pair(t, types[i], pos + 3 * i, rots + 9 * i, types[j], pos + 3 * j,
                                  rots + 9 * j, box, dim):
                    total += 1
                j = c.nxt[j]
    return total


cdef double cell_width(const Tab* t, const double* delta) noexcept nogil:
    cdef double w = 0.0, dmax = 0.0
    cdef int s
    for s in range(t.ns):
        if 2.0 * t.circ[s] > w:
            w = 2.0 * t.circ[s]
    for s in range(t.ns):
        if delta[s] > dmax:
            dmax = delta[s]
    return w + dmax


# -- volume move --------------------------------------------------------------------

cdef int volume_move_c(const Tab* t, const int* types, double* pos, const double* rots, Cells* cells,
                       int n, double* box, int dim, double pressure, double dV, double u0, double u1,
                       const double* delta, double* scratch) noexcept nogil:
    """Returns 1 if accepted, 0 if rejected, -1 on allocation failure."""
    cdef double V = box[0] * box[1], Vn, lnacc, scale
    cdef double old_box[3]
    cdef int i, d
    cdef Cells nc
    if dim == 3:
        V = V * box[2]
    Vn = V + dV * (2.0 * u0 - 1.0)
    if Vn <= 0.0:
        return 0
    lnacc = -pressure * (Vn - V) + (<double> n) * log(Vn / V)
    if lnacc < 0.0 and u1 >= exp(lnacc):
        return 0
    scale = pow(Vn / V, 1.0 / dim)
    for d in range(3):
        old_box[d] = box[d]
    for i in range(3 * n):
        scratch[i] = pos[i]
    for d in range(dim):
        box[d] = old_box[d] * scale
    for i in range(n):
        pos[3 * i] = wrap(scratch[3 * i] * scale, box[0])
        pos[3 * i + 1] = wrap(scratch[3 * i + 1] * scale, box[1])
        if dim == 3:
            pos[3 * i + 2] = wrap(scratch[3 * i + 2] * scale, box[2])
        else:
            pos[3 * i + 2] = 0.0
    if cells_build(&nc, pos, n, box, dim, cell_width(t, delta)) != 0:
        return -1
    if scale < 1.0 and count_all(t, types, pos, rots, &nc, n, box, dim) > 0:
        cells_free(&nc)
        for d in range(dim):
            box[d] = old_box[d]
        for i in range(3 * n):
            pos[i] = scratch[i]
        return 0
    if cells != NULL:
        cells_free(cells)
        cells[0] = nc
    else:
        cells_free(&nc)
    return 1


def volume_move(tab, int[::1] types, double[:, ::1] pos, double[:, ::1] quat, double[::1] box,
                int dim, double pressure, double dV, double u0, double u1):
    cdef _TabHolder h = _TabHolder(tab)
    cdef int n = types.shape[0], i, r
    cdef double* rots = <double*> malloc(9 * n * sizeof(double))
    cdef double* scratch = <double*> malloc(3 * n * sizeof(double))
    cdef double zero = 0.0
    if rots == NULL or scratch == NULL:
        free(rots)
        free(scratch)
        raise MemoryError()
    for i in range(n):
        rotmat(&quat[i, 0], rots + 9 * i)
    with nogil:
        r = volume_move_c(&h.tab, &types[0], &pos[0, 0], rots, NULL, n, &box[0], dim, pressure, dV,
                          u0, u1, &zero, scratch)
    free(rots)
    free(scratch)
    if r < 0:
        raise MemoryError()
    return r == 1


def count_overlaps(tab, int[::1] types, double[:, ::1] pos, double[:, ::1] quat, double[::1] box,
                   int dim):
    cdef _TabHolder h = _TabHolder(tab)
    cdef int n = types.shape[0], i
    cdef long total
    cdef double zero = 0.0
    cdef Cells c
    cdef double* rots = <double*> malloc(9 * n * sizeof(double))
    if rots == NULL:
        raise MemoryError()
    for i in range(n):
        rotmat(&quat[i, 0], rots + 9 * i)
    if cells_build(&c, &pos[0, 0], n, &box[0], dim, cell_width(&h.tab, &zero)) != 0:
        free(rots)
        raise MemoryError()
    with nogil:
        total = count_all(&h.tab, &types[0], &pos[0, 0], rots, &c, n, &box[0], dim)
    cells_free(&c)
    free(rots)
    return total


cdef int sweeps_c(const Tab* t, const int* types, double* pos, double* quat, double* rots,
                  double* box, int n, int dim, const double* delta, const double* dtheta,
                  double dV, double pressure, int npt, const double* rand, int nsweep,
                  long* st, double* scratch) noexcept nogil:
    cdef Cells cells
    cdef int s, k, base, i, si, ncell, vr
    cdef bint rotate, accept
    cdef const double* u
    cdef double ang, ax, ay, az, z, phi, sz, c, sn, rw, rx, ry, rz, w0, x0, y0, z0
    cdef double nw, nx, ny, nz, norm, d
    cdef double new_p[3]
    cdef double new_q[4]
    cdef double new_R[9]
    cdef int stride = RPT * n + 2
    if cells_build(&cells, pos, n, box, dim, cell_width(t, delta)) != 0:
        return -1
    for s in range(nsweep):
        u = rand + s * stride
        for k in range(n):
            base = RPT * k
            i = <int> (u[base] * n)
            if i >= n:
                i = n - 1
            si = types[i]
            if t.orientable[si] and u[base + 1] < 0.5:
                rotate = 1
                if dim == 2:
                    ang = dtheta[si] * (2.0 * u[base + 2] - 1.0)
                    ax = 0.0
                    ay = 0.0
                    az = 1.0
                else:
                    z = 2.0 * u[base + 2] - 1.0
                    phi = 2.0 * M_PI * u[base + 3]
                    sz = 1.0 - z * z
                    if sz < 0.0:
                        sz = 0.0
                    sz = sqrt(sz)
                    ax = sz * cos(phi)
                    ay = sz * sin(phi)
                    az = z
                    ang = dtheta[si] * (2.0 * u[base + 4] - 1.0)
                c = cos(0.5 * ang)
                sn = sin(0.5 * ang)
                rw = c
                rx = sn * ax
                ry = sn * ay
                rz = sn * az
                w0 = quat[4 * i]
                x0 = quat[4 * i + 1]
                y0 = quat[4 * i + 2]
                z0 = quat[4 * i + 3]
                nw = rw * w0 - rx * x0 - ry * y0 - rz * z0
                nx = rw * x0 + rx * w0 + ry * z0 - rz * y0
                ny = rw * y0 - rx * z0 + ry * w0 + rz * x0
                nz = rw * z0 + rx * y0 - ry * x0 + rz * w0
                norm = sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
                new_q[0] = nw / norm
                new_q[1] = nx / norm
                new_q[2] = ny / norm
                new_q[3] = nz / norm
                rotmat(new_q, new_R)
                copy3(pos + 3 * i, new_p)
                st[3] += 1
            else:
                rotate = 0
                d = delta[si]
                new_p[0] = wrap(pos[3 * i] + d * (2.0 * u[base + 2] - 1.0), box[0])
                new_p[1] = wrap(pos[3 * i + 1] + d * (2.0 * u[base + 3] - 1.0), box[1])
                new_p[2] = 0.0
                if dim == 3:
                    new_p[2] = wrap(pos[3 * i + 2] + d * (2.0 * u[base + 4] - 1.0), box[2])
                for ncell in range(9):
                    new_R[ncell] = rots[9 * i + ncell]
                st[1] += 1
            accept = count_for(t, types, pos, rots, &cells, i, new_p, new_R, box, dim, 1) == 0
            if accept:
                if rotate:
                    quat[4 * i] = new_q[0]
                    quat[4 * i + 1] = new_q[1]
                    quat[4 * i + 2] = new_q[2]
                    quat[4 * i + 3] = new_q[3]
                    for ncell in range(9):
                        rots[9 * i + ncell] = new_R[ncell]
                    st[2] += 1
                else:
                    copy3(new_p, pos + 3 * i)
                    ncell = cell_index(&cells, new_p, box)
                    if ncell != cells.cell[i]:
                        cell_remove(&cells, i)
                        cell_insert(&cells, i, ncell)
                    st[0] += 1
        if npt:
            st[5] += 1
            vr = volume_move_c(t, types, pos, rots, &cells, n, box, dim, pressure, dV,
                               u[RPT * n], u[RPT * n + 1], delta, scratch)
            if vr < 0:
                cells_free(&cells)
                return -1
            if vr == 1:
                st[4] += 1
    cells_free(&cells)
    return nsweep


def run_sweeps(tab, int[::1] types, double[:, ::1] pos, double[:, ::1] quat, double[::1] box,
               int dim, double[::1] delta, double[::1] dtheta, double dV, double pressure,
               bint npt, double[:, ::1] rand, long[::1] stats):
    """Run ``rand.shape[0]`` sweeps in place. ``rand`` has shape (n_sweeps, 6N + 2)."""
    cdef _TabHolder h = _TabHolder(tab)
    cdef int n = types.shape[0], i, r
    cdef int nsweep = rand.shape[0]
    if rand.shape[1] != RPT * n + 2:
        raise ValueError("random buffer has the wrong row length")
    cdef double* rots = <double*> malloc(9 * n * sizeof(double))
    cdef double* scratch = <double*> malloc(3 * n * sizeof(double))
    if rots == NULL or scratch == NULL:
        free(rots)
        free(scratch)
        raise MemoryError()
    for i in range(n):
        rotmat(&quat[i, 0], rots + 9 * i)
    with nogil:
        r = sweeps_c(&h.tab, &types[0], &pos[0, 0], &quat[0, 0], rots, &box[0], n, dim,
                     &delta[0], &dtheta[0], dV, pressure, npt, &rand[0, 0], nsweep,
                     &stats[0], scratch)
    free(rots)
    free(scratch)
    if r < 0:
        raise MemoryError()
    return r
