# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar kernels; mirrors ``_kernels_py`` function for function."""

from libc.math cimport cosh, sinh, sqrt, log, fabs, copysign, atanh, isinf, NAN

cdef double BISECT_TOL = 1e-12
cdef double RESIDUAL_TOL = 1e-10
cdef double SPEED_TOL = 1e-12


cdef inline void _prop(double y, double vy, double c, double t,
                       double* yo, double* vo) noexcept nogil:
    cdef double ch = cosh(c * t)
    cdef double sh = sinh(c * t)
    yo[0] = y * ch + vy / c * sh
    vo[0] = y * c * sh + vy * ch


def propagate(double y, double vy, double c, double t):
    cdef double yo, vo
    _prop(y, vy, c, t, &yo, &vo)
    return yo, vo


cpdef double orbital_energy(double y, double vy, double c):
    return 0.5 * (vy * vy - c * c * y * y)


cpdef double apex_distance(double y, double vy, double c):
    if orbital_energy(y, vy, c) >= 0.0:
        return NAN
    cdef double w = vy / c
    return sqrt(y * y - w * w)


cpdef double foot_placement(double y, double vy, double c, double alpha):
    cdef double w = vy / c
    return y + sqrt(alpha * alpha + w * w)


cdef inline bint _direction_ok(double v, int direction) noexcept nogil:
    if direction > 0:
        return v >= -SPEED_TOL
    if direction < 0:
        return v <= SPEED_TOL
    return True


cdef double _bisect_time(double y, double vy, double c, double target, int direction):
    cdef double horizon = 5.0 / c
    cdef int n = 200
    cdef double prev_t = 0.0
    cdef double prev_f = y - target
    cdef double t, f, yt, vt, lo, hi, flo, mid, ym, vm, fm, tc
    cdef int i, k
    for i in range(1, n + 1):
        t = horizon * i / n
        _prop(y, vy, c, t, &yt, &vt)
        f = yt - target
        if prev_f == 0.0:
            _prop(y, vy, c, prev_t, &ym, &vm)
            if _direction_ok(vm, direction):
                return prev_t
        elif (prev_f < 0.0) != (f < 0.0):
            lo = prev_t
            hi = t
            flo = prev_f
            for k in range(200):
                mid = 0.5 * (lo + hi)
                _prop(y, vy, c, mid, &ym, &vm)
                fm = ym - target
                if fabs(fm) <= BISECT_TOL or hi - lo < 1e-15:
                    lo = mid
                    hi = mid
                    break
                if (flo < 0.0) == (fm < 0.0):
                    lo = mid
                    flo = fm
                else:
                    hi = mid
            tc = 0.5 * (lo + hi)
            _prop(y, vy, c, tc, &ym, &vm)
            if _direction_ok(vm, direction):
                return tc
        prev_t = t
        prev_f = f
    return NAN


cpdef double time_to_position(double y, double vy, double c, double target, int direction):
    if fabs(y - target) <= BISECT_TOL and _direction_ok(vy, direction):
        return 0.0
    cdef double w = vy / c
    cdef double a = 0.5 * (y + w)
    cdef double b = 0.5 * (y - w)
    cdef double roots[2]
    cdef int nroots = 0
    cdef double disc, sq, q, u, t, yt, vt, res, tn
    cdef double best = NAN
    cdef int r, k
    if fabs(a) <= 1e-15 * (fabs(y) + fabs(w) + 1e-300):
        if target != 0.0:
            roots[0] = b / target
            nroots = 1
    else:
        disc = target * target - 4.0 * a * b
        if disc < 0.0:
            if disc > -1e-12 * target * target:
                disc = 0.0
            else:
                return NAN
        sq = sqrt(disc)
        if target != 0.0:
            q = 0.5 * (target + copysign(sq, target))
        else:
            q = 0.5 * sq
        if q != 0.0:
            roots[0] = q / a
            roots[1] = b / q
            nroots = 2
        else:
            roots[0] = sqrt(b / a if b / a > 0.0 else 0.0)
            nroots = 1
    for r in range(nroots):
        u = roots[r]
        if not (u >= 1.0 - 1e-12) or isinf(u):
            continue
        t = log(u) / c if u > 1.0 else 0.0
        _prop(y, vy, c, t, &yt, &vt)
        if not _direction_ok(vt, direction):
            continue
        for k in range(3):
            res = yt - target
            if fabs(res) <= 1e-15 or fabs(vt) < 1e-9:
                break
            tn = t - res / vt
            if tn < 0.0:
                break
            t = tn
            _prop(y, vy, c, t, &yt, &vt)
        if fabs(yt - target) > RESIDUAL_TOL:
            continue
        if best != best or t < best:
            best = t
    if best == best:
        return best
    return _bisect_time(y, vy, c, target, direction)


cdef inline void _cell(double x, double lo, double hi, Py_ssize_t n,
                       Py_ssize_t* idx, double* frac) noexcept nogil:
    cdef double pos
    cdef Py_ssize_t i
    if x <= lo:
        idx[0] = 0
        frac[0] = 0.0
        return
    if x >= hi:
        idx[0] = n - 2
        frac[0] = 1.0
        return
    pos = (x - lo) / (hi - lo) * (n - 1)
    i = <Py_ssize_t>pos
    if i > n - 2:
        i = n - 2
    idx[0] = i
    frac[0] = pos - i


cpdef double grid_query(double[:, ::1] values, double y_lo, double y_hi,
                        double v_lo, double v_hi, double y, double vy):
    cdef Py_ssize_t i, j
    cdef double fy, fv
    _cell(y, y_lo, y_hi, values.shape[0], &i, &fy)
    _cell(vy, v_lo, v_hi, values.shape[1], &j, &fv)
    return ((1.0 - fy) * (1.0 - fv) * values[i, j]
            + fy * (1.0 - fv) * values[i + 1, j]
            + (1.0 - fy) * fv * values[i, j + 1]
            + fy * fv * values[i + 1, j + 1])


cpdef void grid_scatter(double[:, ::1] values, long long[:, ::1] visits,
                        double y_lo, double y_hi, double v_lo, double v_hi,
                        double y, double vy, double amount):
    cdef Py_ssize_t i, j
    cdef double fy, fv
    _cell(y, y_lo, y_hi, values.shape[0], &i, &fy)
    _cell(vy, v_lo, v_hi, values.shape[1], &j, &fv)
    values[i, j] += (1.0 - fy) * (1.0 - fv) * amount
    values[i + 1, j] += fy * (1.0 - fv) * amount
    values[i, j + 1] += (1.0 - fy) * fv * amount
    values[i + 1, j + 1] += fy * fv * amount
    visits[i + (1 if fy > 0.5 else 0), j + (1 if fv > 0.5 else 0)] += 1


cpdef double segment_apex(double y, double vy, double c, double pivot, double t):
    cdef double u = y - pivot
    cdef double w, t_star
    if vy > 0.0 or u <= 0.0:
        return NAN
    w = vy / c
    if w * w >= u * u:
        return NAN
    t_star = atanh(-w / u) / c
    if t_star > t:
        return NAN
    return pivot + sqrt(u * u - w * w)
