# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_kernels_py`` operation-for-operation."""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, sin, sqrt, INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

NAME = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MUL1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MUL2 = 0x94D049BB133111EBULL
cdef double INV53 = 1.0 / 9007199254740992.0
cdef double PI = 3.14159265358979323846
cdef double HALF_LOG_2PI = 0.91893853320467274178
cdef double LANCZOS_G = 7.0
cdef double[9] LANCZOS_COEF
LANCZOS_COEF[:] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
]
cdef double BETACF_EPS = 1e-16
cdef double BETACF_TINY = 1e-300
cdef int BETACF_MAXIT = 1000


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MUL1
    z = (z ^ (z >> 27)) * MUL2
    return z ^ (z >> 31)


cdef inline double _u01(uint64_t key, uint64_t counter) nogil:
    cdef uint64_t z = _mix64(key + (counter + 1) * GOLDEN)
    return (<double>(z >> 11) + 0.5) * INV53


def mix64(z):
    return _mix64(<uint64_t>z)


def bits_at(key, counter):
    return _mix64(<uint64_t>key + (<uint64_t>counter + 1) * GOLDEN)


def derive_key(key, stream):
    cdef uint64_t k = <uint64_t>(key & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t s = <uint64_t>(stream & 0xFFFFFFFFFFFFFFFF)
    return _mix64(_mix64(k) ^ (s * MUL2))


def uniform_fill(key, counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef uint64_t k = <uint64_t>key
    cdef uint64_t c = <uint64_t>counter
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = _u01(k, c + i)
    return out


cdef inline double _normal(uint64_t key, uint64_t* counter) nogil:
    cdef double a, b, s
    while True:
        a = 2.0 * _u01(key, counter[0]) - 1.0
        b = 2.0 * _u01(key, counter[0] + 1) - 1.0
        counter[0] += 2
        s = a * a + b * b
        if 0.0 < s < 1.0:
            return a * sqrt(-2.0 * log(s) / s)


cdef double _gamma(uint64_t key, uint64_t* counter, double shape) nogil:
    cdef double alpha = shape + 1.0 if shape < 1.0 else shape
    cdef double d = alpha - 1.0 / 3.0
    cdef double c = 1.0 / sqrt(9.0 * d)
    cdef double x, t, v, u, x2, g
    while True:
        x = _normal(key, counter)
        t = 1.0 + c * x
        if t <= 0.0:
            continue
        v = t * t * t
        u = _u01(key, counter[0])
        counter[0] += 1
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            break
        if log(u) < 0.5 * x2 + d * (1.0 - v + log(v)):
            break
    g = d * v
    if shape < 1.0:
        u = _u01(key, counter[0])
        counter[0] += 1
        g = g * exp(log(u) / shape)
    return g


def gamma_fill(key, counter, double shape, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef uint64_t k = <uint64_t>key
    cdef uint64_t c = <uint64_t>counter
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = _gamma(k, &c, shape)
    return out, int(c)


def beta_fill(key, counter, double a, double b, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef uint64_t k = <uint64_t>key
    cdef uint64_t c = <uint64_t>counter
    cdef Py_ssize_t i
    cdef double x, y, s, r
    for i in range(n):
        while True:
            x = _gamma(k, &c, a)
            y = _gamma(k, &c, b)
            s = x + y
            if s > 0.0:
                r = x / s
                if 0.0 < r < 1.0:
                    break
        out[i] = r
    return out, int(c)


cdef double _lgamma(double x) nogil:
    cdef double acc, t
    cdef int i
    if x < 0.5:
        return log(PI / fabs(sin(PI * x))) - _lgamma(1.0 - x)
    x -= 1.0
    acc = LANCZOS_COEF[0]
    t = x + LANCZOS_G + 0.5
    for i in range(1, 9):
        acc += LANCZOS_COEF[i] / (x + i)
    return HALF_LOG_2PI + (x + 0.5) * log(t) - t + log(acc)


def lgamma_vec(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_in = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_out = np.empty_like(flat_in)
    cdef Py_ssize_t i
    for i in range(flat_in.shape[0]):
        flat_out[i] = _lgamma(flat_in[i])
    return flat_out.reshape(np.shape(x))


cdef double _betacf(double a, double b, double x) nogil:
    cdef double qab = a + b
    cdef double qap = a + 1.0
    cdef double qam = a - 1.0
    cdef double c = 1.0
    cdef double d = 1.0 - qab * x / qap
    cdef double h, aa, delta, dm
    cdef int m, m2
    if fabs(d) < BETACF_TINY:
        d = BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETACF_MAXIT + 1):
        m2 = 2 * m
        dm = <double>m
        aa = dm * (b - dm) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < BETACF_TINY:
            d = BETACF_TINY
        c = 1.0 + aa / c
        if fabs(c) < BETACF_TINY:
            c = BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + dm) * (qab + dm) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < BETACF_TINY:
            d = BETACF_TINY
        c = 1.0 + aa / c
        if fabs(c) < BETACF_TINY:
            c = BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < BETACF_EPS:
            break
    return h


cdef double _betainc(double a, double b, double x, double lbeta) nogil:
    cdef double front
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = exp(a * log(x) + b * log1p(-x) - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc_vec(double a, double b, x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_in = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_out = np.empty_like(flat_in)
    cdef double lbeta = _lgamma(a) + _lgamma(b) - _lgamma(a + b)
    cdef Py_ssize_t i
    for i in range(flat_in.shape[0]):
        flat_out[i] = _betainc(a, b, flat_in[i], lbeta)
    return flat_out.reshape(np.shape(x))


def hungarian(cost):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.zeros(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.zeros(m + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] minv = np.empty(m + 1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] p = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] way = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row
