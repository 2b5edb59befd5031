"""Pure-Python scalar kernels.

Reference implementation of the hot inner-loop routines. The compiled
module ``_kernels`` exposes the same functions with the same signatures;
``capstep._backend`` picks one at import time.

Absent results (no apex, target never reached) are returned as NaN so the
signatures stay plain floats in both backends.
"""

import math

NAN = float("nan")

# Position tolerance for the bisection fallback.
BISECT_TOL = 1e-12
# Residual above which the closed-form inversion is considered unreliable.
RESIDUAL_TOL = 1e-10
# Speeds below this count as zero when checking a crossing's direction, so a
# target touched at the apex is accepted.
SPEED_TOL = 1e-12


def propagate(y, vy, c, t):
    ch = math.cosh(c * t)
    sh = math.sinh(c * t)
    return y * ch + vy / c * sh, y * c * sh + vy * ch


def orbital_energy(y, vy, c):
    return 0.5 * (vy * vy - c * c * y * y)


def apex_distance(y, vy, c):
    if orbital_energy(y, vy, c) >= 0.0:
        return NAN
    w = vy / c
    return math.sqrt(y * y - w * w)


def foot_placement(y, vy, c, alpha):
    w = vy / c
    return y + math.sqrt(alpha * alpha + w * w)


def _direction_ok(v, direction):
    if direction > 0:
        return v >= -SPEED_TOL
    if direction < 0:
        return v <= SPEED_TOL
    return True


def _bisect_time(y, vy, c, target, direction):
    """First crossing on [0, 5/c] found by sampling and bisection."""
    horizon = 5.0 / c
    n = 200
    prev_t = 0.0
    prev_f = y - target
    for i in range(1, n + 1):
        t = horizon * i / n
        yt, vt = propagate(y, vy, c, t)
        f = yt - target
        if prev_f == 0.0:
            _yp, vp = propagate(y, vy, c, prev_t)
            if _direction_ok(vp, direction):
                return prev_t
        elif (prev_f < 0.0) != (f < 0.0):
            lo, hi = prev_t, t
            flo = prev_f
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                ym, _vm = propagate(y, vy, c, mid)
                fm = ym - target
                if abs(fm) <= BISECT_TOL or hi - lo < 1e-15:
                    lo = hi = mid
                    break
                if (flo < 0.0) == (fm < 0.0):
                    lo, flo = mid, fm
                else:
                    hi = mid
            tc = 0.5 * (lo + hi)
            _yc, vc = propagate(y, vy, c, tc)
            if _direction_ok(vc, direction):
                return tc
        prev_t, prev_f = t, f
    return NAN


def time_to_position(y, vy, c, target, direction):
    """Smallest t >= 0 with y(t) == target, NaN if never reached.

    ``direction`` restricts accepted crossings to those with the sign of the
    velocity at the crossing (+1 increasing y, -1 decreasing, 0 either).
    """
    if abs(y - target) <= BISECT_TOL and _direction_ok(vy, direction):
        return 0.0
    # y(t) = A u + B / u with u = exp(c t) >= 1
    w = vy / c
    a = 0.5 * (y + w)
    b = 0.5 * (y - w)
    roots = []
    if abs(a) <= 1e-15 * (abs(y) + abs(w) + 1e-300):
        if target != 0.0:
            roots.append(b / target)
    else:
        disc = target * target - 4.0 * a * b
        if disc < 0.0:
            if disc > -1e-12 * target * target:
                disc = 0.0
            else:
                return NAN
        sq = math.sqrt(disc)
        # a u^2 - target u + b = 0, numerically stable pair
        q = 0.5 * (target + math.copysign(sq, target)) if target != 0.0 else 0.5 * sq
        if q != 0.0:
            roots.append(q / a)
            roots.append(b / q)
        else:
            roots.append(math.sqrt(max(b / a, 0.0)))
    best = NAN
    for u in roots:
        if not (u >= 1.0 - 1e-12) or math.isinf(u):
            continue
        t = math.log(u) / c if u > 1.0 else 0.0
        yt, vt = propagate(y, vy, c, t)
        if not _direction_ok(vt, direction):
            continue
        # Newton polish on the position residual
        for _ in range(3):
            res = yt - target
            if abs(res) <= 1e-15 or abs(vt) < 1e-9:
                break
            tn = t - res / vt
            if tn < 0.0:
                break
            t = tn
            yt, vt = propagate(y, vy, c, t)
        if abs(yt - target) > RESIDUAL_TOL:
            continue
        if best != best or t < best:
            best = t
    if best == best:
        return best
    return _bisect_time(y, vy, c, target, direction)


def _cell(x, lo, hi, n):
    """Clamp ``x`` into [lo, hi] and return (lower node index, fraction)."""
    if x <= lo:
        return 0, 0.0
    if x >= hi:
        return n - 2, 1.0
    pos = (x - lo) / (hi - lo) * (n - 1)
    i = int(pos)
    if i > n - 2:
        i = n - 2
    return i, pos - i


def grid_query(values, y_lo, y_hi, v_lo, v_hi, y, vy):
    ny, nv = values.shape
    i, fy = _cell(y, y_lo, y_hi, ny)
    j, fv = _cell(vy, v_lo, v_hi, nv)
    return ((1.0 - fy) * (1.0 - fv) * values[i, j]
            + fy * (1.0 - fv) * values[i + 1, j]
            + (1.0 - fy) * fv * values[i, j + 1]
            + fy * fv * values[i + 1, j + 1])


def grid_scatter(values, visits, y_lo, y_hi, v_lo, v_hi, y, vy, amount):
    """Add ``amount`` onto the four surrounding nodes with bilinear weights.

    The visit count goes to the node carrying the largest weight.
    """
    ny, nv = values.shape
    i, fy = _cell(y, y_lo, y_hi, ny)
    j, fv = _cell(vy, v_lo, v_hi, nv)
    values[i, j] += (1.0 - fy) * (1.0 - fv) * amount
    values[i + 1, j] += fy * (1.0 - fv) * amount
    values[i, j + 1] += (1.0 - fy) * fv * amount
    values[i + 1, j + 1] += fy * fv * amount
    visits[i + (1 if fy > 0.5 else 0), j + (1 if fv > 0.5 else 0)] += 1


def segment_apex(y, vy, c, pivot, t):
    """Apex position reached within [0, t] while swinging about ``pivot``.

    NaN when the velocity does not pass through zero from below in the
    segment or the motion relative to the pivot has no apex.
    """
    u = y - pivot
    if vy > 0.0 or u <= 0.0:
        return NAN
    w = vy / c
    if w * w >= u * u:
        return NAN
    t_star = math.atanh(-w / u) / c
    if t_star > t:
        return NAN
    return pivot + math.sqrt(u * u - w * w)
