# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in ``_fallback`` with the same signature
and the same kernel summation order, so results agree to rounding.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


cdef inline double _smoothstep(double t) noexcept nogil:
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return t * t * (3.0 - 2.0 * t)


cdef inline double _smoothstep_deriv(double t) noexcept nogil:
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return 6.0 * t * (1.0 - t)


cdef inline void _mixture_point(const double[:, ::1] params, Py_ssize_t k0, Py_ssize_t k1,
                                double x, double y, double z, double cutoff,
                                double* val, double* gx, double* gy, double* gz) noexcept nogil:
    cdef Py_ssize_t k
    cdef double dx, dy, dz, ix, iy, iz, e, g
    cdef double v = 0.0, ax = 0.0, ay = 0.0, az = 0.0
    for k in range(k0, k1):
        ix = 1.0 / (params[k, 4] * params[k, 4])
        iy = 1.0 / (params[k, 5] * params[k, 5])
        iz = 1.0 / (params[k, 6] * params[k, 6])
        dx = x - params[k, 1]
        dy = y - params[k, 2]
        dz = z - params[k, 3]
        e = -0.5 * (dx * dx * ix + dy * dy * iy + dz * dz * iz)
        if e <= -cutoff:
            continue
        g = params[k, 0] * exp(e)
        v += g
        ax -= g * dx * ix
        ay -= g * dy * iy
        az -= g * dz * iz
    val[0] = v
    gx[0] = ax
    gy[0] = ay
    gz[0] = az


def mixture_eval(const double[:, ::1] params, const double[:, ::1] pts, double cutoff):
    """Value and gradient of one kernel set at many points."""
    cdef Py_ssize_t n = pts.shape[0], i
    cdef Py_ssize_t nk = params.shape[0]
    val_arr = np.zeros(n)
    grad_arr = np.zeros((n, 3))
    cdef double[::1] val = val_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double v, gx, gy, gz
    with nogil:
        for i in range(n):
            _mixture_point(params, 0, nk, pts[i, 0], pts[i, 1], pts[i, 2], cutoff,
                           &v, &gx, &gy, &gz)
            val[i] = v
            grad[i, 0] = gx
            grad[i, 1] = gy
            grad[i, 2] = gz
    return val_arr, grad_arr


def mixture_jacobian(const double[:, ::1] params, const double[:, ::1] pts, double cutoff):
    """Mixture value and d(value)/d(w, mu, log l) for every kernel.

    Columns are grouped per kernel as ``[w, mx, my, mz, log lx, log ly, log lz]``.
    """
    cdef Py_ssize_t n = pts.shape[0], nk = params.shape[0], i, k, c
    val_arr = np.zeros(n)
    jac_arr = np.zeros((n, 7 * nk))
    cdef double[::1] val = val_arr
    cdef double[:, ::1] jac = jac_arr
    cdef double dx, dy, dz, ix, iy, iz, e, ex, g, v
    with nogil:
        for i in range(n):
            v = 0.0
            for k in range(nk):
                ix = 1.0 / (params[k, 4] * params[k, 4])
                iy = 1.0 / (params[k, 5] * params[k, 5])
                iz = 1.0 / (params[k, 6] * params[k, 6])
                dx = pts[i, 0] - params[k, 1]
                dy = pts[i, 1] - params[k, 2]
                dz = pts[i, 2] - params[k, 3]
                e = -0.5 * (dx * dx * ix + dy * dy * iy + dz * dz * iz)
                if e <= -cutoff:
                    continue
                ex = exp(e)
                g = params[k, 0] * ex
                v += g
                c = 7 * k
                jac[i, c] = ex
                jac[i, c + 1] = g * dx * ix
                jac[i, c + 2] = g * dy * iy
                jac[i, c + 3] = g * dz * iz
                jac[i, c + 4] = g * dx * dx * ix
                jac[i, c + 5] = g * dy * dy * iy
                jac[i, c + 6] = g * dz * dz * iz
            val[i] = v
    return val_arr, jac_arr


def blend_eval(const double[:, ::1] pts, const cnp.int64_t[:, ::1] slots,
               const double[:, ::1] origins, const cnp.int64_t[::1] kstart,
               const double[:, ::1] params, double block_size, double delta, double cutoff):
    """Smoothstep-blended value and exact gradient over candidate blocks.

    ``slots[i]`` lists up to eight block ids (``-1`` = empty) whose extended
    domain may contain point ``i``.
    """
    cdef Py_ssize_t n = pts.shape[0], ns = slots.shape[1], i, s, j
    cdef cnp.int64_t b
    val_arr = np.zeros(n)
    grad_arr = np.zeros((n, 3))
    valid_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] val = val_arr
    cdef double[:, ::1] grad = grad_arr
    cdef cnp.uint8_t[::1] valid = valid_arr
    cdef double width = 2.0 * delta
    cdef double x[3]
    cdef double s_ax[3]
    cdef double ds_ax[3]
    cdef double t_lo, t_hi, a_lo, a_hi, alpha, da0, da1, da2
    cdef double f, fx, fy, fz
    cdef double wsum, vsum, gx, gy, gz, ax, ay, az, value
    with nogil:
        for i in range(n):
            x[0] = pts[i, 0]
            x[1] = pts[i, 1]
            x[2] = pts[i, 2]
            wsum = 0.0
            vsum = 0.0
            gx = 0.0
            gy = 0.0
            gz = 0.0
            ax = 0.0
            ay = 0.0
            az = 0.0
            for s in range(ns):
                b = slots[i, s]
                if b < 0:
                    continue
                for j in range(3):
                    t_lo = (x[j] - (origins[b, j] - delta)) / width
                    t_hi = ((origins[b, j] + block_size + delta) - x[j]) / width
                    a_lo = _smoothstep(t_lo)
                    a_hi = _smoothstep(t_hi)
                    s_ax[j] = a_lo * a_hi
                    ds_ax[j] = (_smoothstep_deriv(t_lo) * a_hi - a_lo * _smoothstep_deriv(t_hi)) / width
                alpha = s_ax[0] * s_ax[1] * s_ax[2]
                if alpha <= 0.0:
                    continue
                da0 = ds_ax[0] * s_ax[1] * s_ax[2]
                da1 = s_ax[0] * ds_ax[1] * s_ax[2]
                da2 = s_ax[0] * s_ax[1] * ds_ax[2]
                _mixture_point(params, kstart[b], kstart[b + 1], x[0], x[1], x[2], cutoff,
                               &f, &fx, &fy, &fz)
                wsum += alpha
                vsum += alpha * f
                gx += da0 * f + alpha * fx
                gy += da1 * f + alpha * fy
                gz += da2 * f + alpha * fz
                ax += da0
                ay += da1
                az += da2
            if wsum > 0.0:
                value = vsum / wsum
                val[i] = value
                grad[i, 0] = (gx - value * ax) / wsum
                grad[i, 1] = (gy - value * ay) / wsum
                grad[i, 2] = (gz - value * az) / wsum
                valid[i] = 1
    return val_arr, grad_arr, valid_arr


cdef void _edt_line(double* f, cnp.int64_t* fin, Py_ssize_t n, Py_ssize_t stride,
                    double* d, cnp.int64_t* fout, int* v, double* z) noexcept nogil:
    # Lower envelope of parabolas rooted at finite samples of f.
    cdef Py_ssize_t q, k = -1, p
    cdef double s
    for q in range(n):
        if f[q * stride] == INFINITY:
            continue
        while True:
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -INFINITY
                z[1] = INFINITY
                break
            s = ((f[q * stride] + q * q) - (f[v[k] * stride] + v[k] * v[k])) / (2.0 * (q - v[k]))
            if s <= z[k]:
                k -= 1
                continue
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = INFINITY
            break
    if k < 0:
        for p in range(n):
            d[p] = INFINITY
            fout[p] = -1
        return
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        d[p] = (p - v[k]) * (p - v[k]) + f[v[k] * stride]
        fout[p] = fin[v[k] * stride]


def squared_edt(const cnp.uint8_t[:, :, ::1] occupied):
    """Exact squared EDT in voxel units plus nearest-site flat indices.

    Free voxels of an all-free grid get ``inf`` and index ``-1``.
    """
    cdef Py_ssize_t n0 = occupied.shape[0], n1 = occupied.shape[1], n2 = occupied.shape[2]
    cdef Py_ssize_t a, b, c, nmax = max(n0, n1, n2)
    f_arr = np.empty((n0, n1, n2))
    feat_arr = np.empty((n0, n1, n2), dtype=np.int64)
    cdef double[:, :, ::1] f = f_arr
    cdef cnp.int64_t[:, :, ::1] feat = feat_arr
    buf_d_arr = np.empty(nmax)
    buf_f_arr = np.empty(nmax, dtype=np.int64)
    v_arr = np.empty(nmax, dtype=np.intc)
    z_arr = np.empty(nmax + 1)
    cdef double[::1] buf_d = buf_d_arr
    cdef cnp.int64_t[::1] buf_f = buf_f_arr
    cdef int[::1] v = v_arr
    cdef double[::1] z = z_arr
    with nogil:
        for a in range(n0):
            for b in range(n1):
                for c in range(n2):
                    if occupied[a, b, c]:
                        f[a, b, c] = 0.0
                        feat[a, b, c] = (a * n1 + b) * n2 + c
                    else:
                        f[a, b, c] = INFINITY
                        feat[a, b, c] = -1
        # axis 2
        for a in range(n0):
            for b in range(n1):
                _edt_line(&f[a, b, 0], &feat[a, b, 0], n2, 1, &buf_d[0], &buf_f[0], &v[0], &z[0])
                for c in range(n2):
                    f[a, b, c] = buf_d[c]
                    feat[a, b, c] = buf_f[c]
        # axis 1
        for a in range(n0):
            for c in range(n2):
                _edt_line(&f[a, 0, c], &feat[a, 0, c], n1, n2, &buf_d[0], &buf_f[0], &v[0], &z[0])
                for b in range(n1):
                    f[a, b, c] = buf_d[b]
                    feat[a, b, c] = buf_f[b]
        # axis 0
        for b in range(n1):
            for c in range(n2):
                _edt_line(&f[0, b, c], &feat[0, b, c], n0, n1 * n2, &buf_d[0], &buf_f[0], &v[0], &z[0])
                for a in range(n0):
                    f[a, b, c] = buf_d[a]
                    feat[a, b, c] = buf_f[a]
    return f_arr, feat_arr
