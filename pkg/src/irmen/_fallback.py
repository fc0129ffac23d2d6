"""Pure-numpy macrospin stepper, used when the compiled kernel is unavailable.

Reproduces the compiled kernel's counter-based noise stream, so both backends
follow the same trajectory up to floating-point rounding.
"""

import numpy as np

NAME = "python"

_M1 = np.uint32(0x7FEB352D)
_M2 = np.uint32(0x846CA68B)
_LN2 = 0.6931471805599453
_SQRT2_BITS = np.uint64(0x3FF6A09E667F3BCD)
_LOG_COEF = [1.0 / k for k in range(19, 0, -2)]
_SIN_COEF = [
    -1.0 / 1307674368000.0, 1.0 / 6227020800.0, -1.0 / 39916800.0, 1.0 / 362880.0,
    -1.0 / 5040.0, 1.0 / 120.0, -1.0 / 6.0, 1.0,
]


def _h32(x):
    x = np.asarray(x, dtype=np.uint32)
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint32(16))
        x = x * _M1
        x = x ^ (x >> np.uint32(15))
        x = x * _M2
        x = x ^ (x >> np.uint32(16))
    return x


def _h32s(x):
    return int(_h32(np.uint32(x & 0xFFFFFFFF)))


def step_key(key, step):
    a = _h32s((key >> 32) ^ _h32s(step >> 32))
    return _h32s((key & 0xFFFFFFFF) ^ _h32s((step & 0xFFFFFFFF) ^ a))


def _log(x):
    b = x.view(np.uint64)
    mb = (b & np.uint64(0x000FFFFFFFFFFFFF)) | np.uint64(0x3FF0000000000000)
    big = (mb > _SQRT2_BITS).astype(np.uint64)
    mb = mb - (big << np.uint64(52))
    e = (b >> np.uint64(52)).astype(np.int64) - 1023 + big.astype(np.int64)
    m = mb.view(np.float64)
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    p = np.full_like(s, _LOG_COEF[0])
    for c in _LOG_COEF[1:]:
        p = p * s2 + c
    return 2.0 * s * p + e * _LN2


def normals_for_key(sk, n_pairs, sigma=1.0):
    j = np.arange(n_pairs, dtype=np.uint32)
    sk = np.uint32(sk)
    r1 = _h32(sk ^ (np.uint32(2) * j))
    r2 = _h32(sk ^ (np.uint32(2) * j + np.uint32(1)))
    u1 = (r1.astype(np.float64) + 0.5) * 2.0**-32
    u2 = r2.astype(np.float64) * 2.0**-32
    rad = sigma * np.sqrt(-2.0 * _log(u1))
    h = np.pi * (u2 - 0.5)
    h2 = h * h
    ps = np.full_like(h, _SIN_COEF[0])
    for c in _SIN_COEF[1:]:
        ps = ps * h2 + c
    sn = h * ps
    out = np.empty(2 * n_pairs)
    out[:n_pairs] = rad * (2.0 * sn * sn - 1.0)
    out[n_pairs:] = rad * 2.0 * sn * np.sqrt(1.0 - sn * sn)
    return out


def normals(key, step, count):
    """The first ``count`` unit normals of one step of the noise stream."""
    return normals_for_key(step_key(int(key), int(step)), (count + 1) // 2)[:count]


def _ramp(t, t_ramp):
    if t_ramp <= 0.0:
        return 1.0
    return min(t / t_ramp, 1.0)


def run(m, stiff, h0, h1, *, n_steps, dt, gmu, alpha, t_ramp=0.0, t0=0.0,
        sigma=0.0, noise_key=None, step0=0, filt_axis=-1, filt_tau=0.0, filt=None,
        rec_every=0):
    n = m.shape[0]
    if sigma > 0.0 and noise_key is None:
        raise ValueError("thermal run needs a noise key")
    k = np.asarray(stiff, dtype=np.float64)
    h0 = np.asarray(h0, dtype=np.float64)
    dh = np.asarray(h1, dtype=np.float64) - h0
    fc = 1.0 - np.exp(-dt / filt_tau) if filt_axis >= 0 else 0.0
    n_rec = n_steps // rec_every if rec_every > 0 else 0
    rec = np.empty((n_rec, n, 3)) if n_rec else None
    if n == 0:
        return rec

    x = np.array(m, dtype=np.float64)
    half = 0.5 * dt
    n_pairs = (3 * n + 1) // 2

    def rhs(mm, base, u):
        h = k * mm + base + u * dh
        c = np.cross(mm, h)
        return -gmu * (c + alpha * np.cross(mm, c))

    r = 0
    for s in range(n_steps):
        t = t0 + s * dt
        u0, uh, u1 = _ramp(t, t_ramp), _ramp(t + half, t_ramp), _ramp(t + dt, t_ramp)
        if sigma > 0.0:
            noise = normals_for_key(step_key(int(noise_key), step0 + s), n_pairs, sigma)
            base = h0 + noise[: 3 * n].reshape(3, n).T
        else:
            base = h0
        k1 = rhs(x, base, u0)
        k2 = rhs(x + half * k1, base, uh)
        k3 = rhs(x + half * k2, base, uh)
        k4 = rhs(x + dt * k3, base, u1)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x /= np.sqrt(np.einsum("ij,ij->i", x, x))[:, None]
        if filt_axis >= 0:
            filt += fc * (x[:, filt_axis] - filt)
        if n_rec and (s + 1) % rec_every == 0:
            rec[r] = x
            r += 1
    m[:] = x
    return rec
