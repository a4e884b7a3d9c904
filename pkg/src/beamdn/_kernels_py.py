"""Pure-Python reference versions of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and, for the RNG-driven ones, the same floating-point operation order, so
both backends produce bit-identical streams.
"""
import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0

LANCZOS_G = 7.0
LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.91893853320467274178

BETACF_EPS = 1e-16
BETACF_TINY = 1e-300
BETACF_MAXIT = 1000

NAME = "python"


def mix64(z):
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def bits_at(key, counter):
    return mix64((key + (counter + 1) * GOLDEN) & MASK64)


def derive_key(key, stream):
    return mix64((mix64(key & MASK64) ^ ((stream * _MUL2) & MASK64)) & MASK64)


def _u01(key, counter):
    # open interval (0, 1): safe for log()
    return ((bits_at(key, counter) >> 11) + 0.5) * _INV53


def uniform_fill(key, counter, n):
    idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(counter)
    z = np.uint64(key) + idx * np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def _normal(key, counter):
    # Marsaglia polar method; the second variate is discarded
    while True:
        a = 2.0 * _u01(key, counter) - 1.0
        b = 2.0 * _u01(key, counter + 1) - 1.0
        counter += 2
        s = a * a + b * b
        if 0.0 < s < 1.0:
            return a * math.sqrt(-2.0 * math.log(s) / s), counter


def _gamma(key, counter, shape):
    # Marsaglia-Tsang squeeze/rejection; shape < 1 boosted via u**(1/shape)
    alpha = shape + 1.0 if shape < 1.0 else shape
    d = alpha - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x, counter = _normal(key, counter)
        t = 1.0 + c * x
        if t <= 0.0:
            continue
        v = t * t * t
        u = _u01(key, counter)
        counter += 1
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            break
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            break
    g = d * v
    if shape < 1.0:
        u = _u01(key, counter)
        counter += 1
        g = g * math.exp(math.log(u) / shape)
    return g, counter


def gamma_fill(key, counter, shape, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i], counter = _gamma(key, counter, shape)
    return out, counter


def beta_fill(key, counter, a, b, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        while True:
            x, counter = _gamma(key, counter, a)
            y, counter = _gamma(key, counter, b)
            s = x + y
            if s > 0.0:
                r = x / s
                if 0.0 < r < 1.0:
                    break
        out[i] = r
    return out, counter


def _lgamma(x):
    if x < 0.5:
        return math.log(math.pi / abs(math.sin(math.pi * x))) - _lgamma(1.0 - x)
    x -= 1.0
    acc = LANCZOS_COEF[0]
    t = x + LANCZOS_G + 0.5
    for i in range(1, 9):
        acc += LANCZOS_COEF[i] / (x + i)
    return _HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(acc)


def lgamma_vec(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat_in = x.reshape(-1)
    flat_out = out.reshape(-1)
    for i in range(flat_in.shape[0]):
        flat_out[i] = _lgamma(float(flat_in[i]))
    return out


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < BETACF_TINY:
        d = BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETACF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < BETACF_TINY:
            d = BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < BETACF_TINY:
            c = BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < BETACF_TINY:
            d = BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < BETACF_TINY:
            c = BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETACF_EPS:
            break
    return h


def _betainc(a, b, x, lbeta):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc_vec(a, b, x):
    x = np.asarray(x, dtype=np.float64)
    lbeta = _lgamma(a) + _lgamma(b) - _lgamma(a + b)
    out = np.empty_like(x)
    flat_in = x.reshape(-1)
    flat_out = out.reshape(-1)
    for i in range(flat_in.shape[0]):
        flat_out[i] = _betainc(a, b, float(flat_in[i]), lbeta)
    return out


def hungarian(cost):
    """Min-cost assignment of every row to a distinct column (rows <= cols).

    Shortest-augmenting-path form with row/column potentials. Returns an int
    array ``col_of_row``.
    """
    a = np.asarray(cost, dtype=np.float64)
    n, m = a.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    rows = a.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
