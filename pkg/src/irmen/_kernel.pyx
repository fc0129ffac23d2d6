# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled macrospin stepper. Same call signature as ``irmen._fallback.run``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

cdef extern from "_llg_core.h":
    ctypedef struct llg_cfg:
        double kx, ky, kz, gmu, alpha, dt, t_ramp, t0, sigma
        uint64_t key, step0
        int filt_axis
        double filt_c

    void llg_steps(const llg_cfg *cfg, Py_ssize_t n, long n_steps,
                   double *mx, double *my, double *mz,
                   const double *h0x, const double *h0y, const double *h0z,
                   const double *dhx, const double *dhy, const double *dhz,
                   double *noise, double *filt,
                   double *rec, long rec_every) nogil
    uint32_t irmen_step_key(uint64_t key, uint64_t step) nogil
    void irmen_normals(uint32_t sk, Py_ssize_t n_pairs, double sigma, double *out) nogil

NAME = "compiled"


def normals(uint64_t key, uint64_t step, Py_ssize_t count):
    """The first ``count`` unit normals of one step of the noise stream."""
    cdef Py_ssize_t n_pairs = (count + 1) // 2
    cdef double[::1] out = np.empty(max(2 * n_pairs, 1))
    with nogil:
        irmen_normals(irmen_step_key(key, step), n_pairs, 1.0, &out[0])
    return np.asarray(out)[:count].copy()


def run(m, stiff, h0, h1, *, long n_steps, double dt, double gmu, double alpha,
        double t_ramp=0.0, double t0=0.0, double sigma=0.0, noise_key=None,
        uint64_t step0=0, int filt_axis=-1, double filt_tau=0.0, filt=None,
        long rec_every=0):
    cdef Py_ssize_t n = m.shape[0]
    cdef llg_cfg cfg
    if sigma > 0.0 and noise_key is None:
        raise ValueError("thermal run needs a noise key")
    cfg.kx = stiff[0]
    cfg.ky = stiff[1]
    cfg.kz = stiff[2]
    cfg.gmu = gmu
    cfg.alpha = alpha
    cfg.dt = dt
    cfg.t_ramp = t_ramp
    cfg.t0 = t0
    cfg.sigma = sigma
    cfg.key = 0 if noise_key is None else int(noise_key)
    cfg.step0 = step0
    cfg.filt_axis = filt_axis
    cfg.filt_c = 1.0 - exp(-dt / filt_tau) if filt_axis >= 0 else 0.0

    h0 = np.asarray(h0, dtype=np.float64)
    dh = np.asarray(h1, dtype=np.float64) - h0
    cdef double[::1] mx = np.ascontiguousarray(m[:, 0], dtype=np.float64)
    cdef double[::1] my = np.ascontiguousarray(m[:, 1], dtype=np.float64)
    cdef double[::1] mz = np.ascontiguousarray(m[:, 2], dtype=np.float64)
    cdef const double[::1] h0x = np.ascontiguousarray(h0[:, 0])
    cdef const double[::1] h0y = np.ascontiguousarray(h0[:, 1])
    cdef const double[::1] h0z = np.ascontiguousarray(h0[:, 2])
    cdef const double[::1] dhx = np.ascontiguousarray(dh[:, 0])
    cdef const double[::1] dhy = np.ascontiguousarray(dh[:, 1])
    cdef const double[::1] dhz = np.ascontiguousarray(dh[:, 2])
    cdef double[::1] noise = np.empty(max(2 * ((3 * n + 1) // 2), 1))

    cdef double[::1] fbuf
    if filt_axis >= 0:
        fbuf = np.ascontiguousarray(filt, dtype=np.float64)
    else:
        fbuf = np.empty(1)

    n_rec = n_steps // rec_every if rec_every > 0 else 0
    rec = np.empty((n_rec, n, 3)) if n_rec else np.empty((1, 1, 3))
    cdef double[:, :, ::1] rbuf = rec

    if n > 0 and n_steps > 0:
        with nogil:
            llg_steps(&cfg, n, n_steps, &mx[0], &my[0], &mz[0],
                      &h0x[0], &h0y[0], &h0z[0], &dhx[0], &dhy[0], &dhz[0],
                      &noise[0], &fbuf[0], &rbuf[0, 0, 0], rec_every)

    m[:, 0] = mx
    m[:, 1] = my
    m[:, 2] = mz
    if filt_axis >= 0:
        filt[:] = fbuf
    return rec if n_rec else None
