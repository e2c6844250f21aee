"""Compiled inner loops for the n^2-iteration SGD stages.

The kernels carry their own counter-free xoshiro256++ generator seeded via
splitmix64, with Box-Muller normals. Rationale: the numba bridge to
numpy.random uses process-global state, which is neither reproducible across
numba versions nor safe under the threaded sweep harness; an explicit state
array per run is both. Python-level code keeps using numpy Generators.

Set TRUNCDP_NO_NUMBA=1 to skip compilation; estimator falls back to the
pure-python path (same algorithm, slower, different but still deterministic
random stream).

Kernels return (theta, max_grad_norm, max_attempts). max_grad_norm < 0
signals that some iteration exhausted its rejection cap; the caller raises.
"""

from __future__ import annotations

import math
import os

import numpy as np

_MASK = (1 << 64) - 1

HAVE_NUMBA = False
if os.environ.get("TRUNCDP_NO_NUMBA", "") != "1":
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False

if not HAVE_NUMBA:
    def njit(*args, **kwargs):  # type: ignore
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def make_state(seed: int) -> np.ndarray:
    """xoshiro256++ state from a 64-bit seed via splitmix64."""
    x = seed & _MASK
    out = np.empty(4, dtype=np.uint64)
    for i in range(4):
        x = (x + 0x9E3779B97F4A7C15) & _MASK
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        out[i] = np.uint64(z ^ (z >> 31))
    if not out.any():
        out[0] = np.uint64(1)
    return out


@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, nogil=True, inline="always")
def _next_u64(s):
    result = _rotl(s[0] + s[3], 23) + s[0]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, nogil=True, inline="always")
def _uniform(s):
    return float(_next_u64(s) >> np.uint64(11)) * 1.1102230246251565e-16


@njit(cache=True, nogil=True, inline="always")
def _two_normals(s):
    u1 = _uniform(s) + 1e-300
    u2 = _uniform(s)
    r = math.sqrt(-2.0 * math.log(u1))
    a = 6.283185307179586 * u2
    return r * math.cos(a), r * math.sin(a)


@njit(cache=True, nogil=True)
def _fill_normals(s, out):
    n = out.shape[0]
    i = 0
    while i + 1 < n:
        z1, z2 = _two_normals(s)
        out[i] = z1
        out[i + 1] = z2
        i += 2
    if i < n:
        z1, z2 = _two_normals(s)
        out[i] = z1


@njit(cache=True, nogil=True)
def mean_sgd_kernel(
    data,        # (n, d) truncated dataset
    theta0,      # (d,) start
    tau_c,       # (d,) survival ball center (statistic space = data space)
    r_surv,      # survival ball radius
    box_c,       # (d,) projection ball center
    box_r,       # projection ball radius (2R)
    lam_sc,      # step-size constant: gamma_t = 1/(lam_sc * t)
    sigma,       # per-coordinate gradient noise scale
    cap,         # rejection draw cap per iteration
    iters,       # number of SGD iterations (n^2)
    state,       # (4,) uint64 RNG state, mutated
):
    n = data.shape[0]
    d = data.shape[1]
    theta = theta0.copy()
    y = np.empty(d)
    g = np.empty(d)
    max_grad = 0.0
    max_att = 0
    r2 = r_surv * r_surv
    for t in range(iters):
        # y ~ N(theta, I) conditioned on the survival ball
        att = 0
        ok = False
        while att < cap:
            _fill_normals(state, y)
            ss = 0.0
            for j in range(d):
                y[j] += theta[j]
                diff = y[j] - tau_c[j]
                ss += diff * diff
            att += 1
            if ss <= r2:
                ok = True
                break
        if not ok:
            return theta, -1.0, att
        if att > max_att:
            max_att = att
        xi = int(_uniform(state) * n)
        if xi >= n:
            xi = n - 1
        gn = 0.0
        for j in range(d):
            g[j] = y[j] - data[xi, j]
            gn += g[j] * g[j]
        gn = math.sqrt(gn)
        if gn > max_grad:
            max_grad = gn
        gamma = 1.0 / (lam_sc * (t + 1.0))
        if sigma > 0.0:
            _fill_normals(state, y)  # reuse buffer for noise draws
            for j in range(d):
                theta[j] -= gamma * (g[j] + sigma * y[j])
        else:
            for j in range(d):
                theta[j] -= gamma * g[j]
        # project onto B(box_c, box_r); Theta is all of R^d for this family
        ss = 0.0
        for j in range(d):
            diff = theta[j] - box_c[j]
            ss += diff * diff
        if ss > box_r * box_r:
            scale = box_r / math.sqrt(ss)
            for j in range(d):
                theta[j] = box_c[j] + (theta[j] - box_c[j]) * scale
    return theta, max_grad, max_att


@njit(cache=True, nogil=True)
def _chol_lower(a, lo):
    # lower Cholesky of a (d, d) SPD matrix into lo; returns False if not SPD
    d = a.shape[0]
    for i in range(d):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= lo[i, k] * lo[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                lo[i, i] = math.sqrt(s)
            else:
                lo[i, j] = s / lo[j, j]
        for j in range(i + 1, d):
            lo[i, j] = 0.0
    return True


@njit(cache=True, nogil=True)
def _jacobi_eigh(a, v, w):
    # cyclic Jacobi for small symmetric matrices; a is destroyed,
    # eigenvalues into w, eigenvectors into columns of v
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            v[i, j] = 1.0 if i == j else 0.0
    for _sweep in range(50):
        off = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                off += a[i, j] * a[i, j]
        if off < 1e-24:
            break
        for p in range(d):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) < 1e-18:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(d):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    for i in range(d):
        w[i] = a[i, i]


@njit(cache=True, nogil=True)
def _spectral_clip_packed(theta, iu, ju, lo_b, hi_b, a, v, w, out):
    # theta: packed symmetric (sqrt2 offdiag); clip eigenvalues to [lo_b, hi_b]
    d = a.shape[0]
    m = theta.shape[0]
    inv_s2 = 0.7071067811865476
    for idx in range(m):
        i = iu[idx]
        j = ju[idx]
        val = theta[idx] if i == j else theta[idx] * inv_s2
        a[i, j] = val
        a[j, i] = val
    _jacobi_eigh(a, v, w)
    changed = False
    for i in range(d):
        if w[i] < lo_b:
            w[i] = lo_b
            changed = True
        elif w[i] > hi_b:
            w[i] = hi_b
            changed = True
    if not changed:
        for idx in range(m):
            out[idx] = theta[idx]
        return
    s2 = 1.4142135623730951
    for idx in range(m):
        i = iu[idx]
        j = ju[idx]
        s = 0.0
        for k in range(d):
            s += v[i, k] * w[k] * v[j, k]
        out[idx] = s if i == j else s * s2
    return


@njit(cache=True, nogil=True)
def _min_eig_packed(theta, iu, ju, a, v, w):
    d = a.shape[0]
    m = theta.shape[0]
    inv_s2 = 0.7071067811865476
    for idx in range(m):
        i = iu[idx]
        j = ju[idx]
        val = theta[idx] if i == j else theta[idx] * inv_s2
        a[i, j] = val
        a[j, i] = val
    _jacobi_eigh(a, v, w)
    mn = w[0]
    mx = w[0]
    for i in range(1, d):
        if w[i] < mn:
            mn = w[i]
        if w[i] > mx:
            mx = w[i]
    return mn, mx


@njit(cache=True, nogil=True)
def precision_sgd_kernel(
    stats_x,      # (n, m) precomputed scaled statistics of the data
    theta0,       # (m,) start, scaled parameterization
    inv_scale,    # M = unpack(theta) * inv_scale
    tau_c,        # (m,) survival ball center in scaled statistic space
    r_surv,
    box_c,        # (m,) projection ball center
    box_r,
    lo_b,         # spectral bounds on unpack(theta) (scaled space)
    hi_b,
    lam_sc,
    sigma,
    cap,
    iters,
    d,
    state,
):
    n = stats_x.shape[0]
    m = theta0.shape[0]
    theta = theta0.copy()
    # packed index maps, row-major upper triangle
    iu = np.empty(m, dtype=np.int64)
    ju = np.empty(m, dtype=np.int64)
    idx = 0
    for i in range(d):
        for j in range(i, d):
            iu[idx] = i
            ju[idx] = j
            idx += 1
    a = np.empty((d, d))
    v = np.empty((d, d))
    w = np.empty(d)
    lo = np.empty((d, d))
    y = np.empty(d)
    z = np.empty(d)
    ty = np.empty(m)
    g = np.empty(m)
    noise = np.empty(m)
    # Dykstra workspaces
    p_corr = np.empty(m)
    q_corr = np.empty(m)
    cur = np.empty(m)
    tmp = np.empty(m)
    max_grad = 0.0
    max_att = 0
    inv_s2 = 0.7071067811865476
    s2 = 1.4142135623730951
    r2 = r_surv * r_surv
    for t in range(iters):
        # M = unpack(theta) * inv_scale, then lower Cholesky
        for k in range(m):
            i = iu[k]
            j = ju[k]
            val = theta[k] * inv_scale if i == j else theta[k] * inv_scale * inv_s2
            a[i, j] = val
            a[j, i] = val
        if not _chol_lower(a, lo):
            return theta, -2.0, 0  # projector should keep M SPD; bail loudly
        att = 0
        ok = False
        while att < cap:
            _fill_normals(state, z)
            # y = L^{-T} z  => Cov[y] = (L L^T)^{-1} = M^{-1}
            for i in range(d - 1, -1, -1):
                s = z[i]
                for k2 in range(i + 1, d):
                    s -= lo[k2, i] * y[k2]
                y[i] = s / lo[i, i]
            att += 1
            # scaled statistic of y: T'(y) = pack(-yy^T/2) * inv_scale
            ss = 0.0
            for k in range(m):
                i = iu[k]
                j = ju[k]
                if i == j:
                    tv = -0.5 * y[i] * y[i] * inv_scale
                else:
                    tv = -0.5 * s2 * y[i] * y[j] * inv_scale
                ty[k] = tv
                diff = tv - tau_c[k]
                ss += diff * diff
            if ss <= r2:
                ok = True
                break
        if not ok:
            return theta, -1.0, att
        if att > max_att:
            max_att = att
        xi = int(_uniform(state) * n)
        if xi >= n:
            xi = n - 1
        gn = 0.0
        for k in range(m):
            g[k] = ty[k] - stats_x[xi, k]
            gn += g[k] * g[k]
        gn = math.sqrt(gn)
        if gn > max_grad:
            max_grad = gn
        gamma = 1.0 / (lam_sc * (t + 1.0))
        if sigma > 0.0:
            _fill_normals(state, noise)
            for k in range(m):
                theta[k] -= gamma * (g[k] + sigma * noise[k])
        else:
            for k in range(m):
                theta[k] -= gamma * g[k]
        # membership check before running Dykstra
        ss = 0.0
        for k in range(m):
            diff = theta[k] - box_c[k]
            ss += diff * diff
        mn, mx = _min_eig_packed(theta, iu, ju, a, v, w)
        if ss <= box_r * box_r and mn >= lo_b - 1e-12 and mx <= hi_b + 1e-12:
            continue
        # Dykstra between the ball and the spectral box
        for k in range(m):
            cur[k] = theta[k]
            p_corr[k] = 0.0
            q_corr[k] = 0.0
        for _dy in range(10000):
            move = 0.0
            # ball projection of cur + p
            ss = 0.0
            for k in range(m):
                tmp[k] = cur[k] + p_corr[k]
                diff = tmp[k] - box_c[k]
                ss += diff * diff
            if ss > box_r * box_r:
                scale = box_r / math.sqrt(ss)
                for k in range(m):
                    nv = box_c[k] + (tmp[k] - box_c[k]) * scale
                    p_corr[k] = tmp[k] - nv
                    tmp[k] = nv
            else:
                for k in range(m):
                    p_corr[k] = 0.0
            # spectral projection of tmp + q
            for k in range(m):
                cur[k] = tmp[k] + q_corr[k]
            _spectral_clip_packed(cur, iu, ju, lo_b, hi_b, a, v, w, noise)
            for k in range(m):
                q_corr[k] = cur[k] - noise[k]
                diff = noise[k] - tmp[k]
                move += diff * diff
                cur[k] = noise[k]
            if move < 1e-18:
                break
        for k in range(m):
            theta[k] = cur[k]
    return theta, max_grad, max_att
