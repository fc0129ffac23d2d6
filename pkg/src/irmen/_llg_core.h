/*
 * Batched macrospin RK4 stepper.
 *
 * All cells share one diagonal stiffness (anisotropy + demag, H_int = k .* m)
 * and carry their own external field, ramped linearly from h0 to h1 over
 * t_ramp and held at h1 afterwards. The thermal field is drawn once per step
 * and held across the RK4 substeps. State is structure-of-arrays so the cell
 * loop vectorizes.
 *
 * Thermal noise comes from a counter-based generator: the normal for
 * (key, step, slot) is a pure function of those integers, so runs are
 * reproducible regardless of call chunking and the numpy fallback can
 * reproduce the exact stream.
 */
#ifndef IRMEN_LLG_CORE_H
#define IRMEN_LLG_CORE_H

#include <math.h>
#include <stddef.h>
#include <stdint.h>
#include <string.h>

typedef struct {
    double kx, ky, kz;      /* diagonal stiffness, A/m per unit m */
    double gmu;             /* gamma * mu0 */
    double alpha;
    double dt;
    double t_ramp;          /* <= 0: field jumps to h1 immediately */
    double t0;              /* time offset into the ramp at call start */
    double sigma;           /* thermal field std per component, A/m */
    uint64_t key;           /* noise stream key */
    uint64_t step0;         /* global index of the first step */
    int filt_axis;          /* -1: no readout filter */
    double filt_c;          /* 1 - exp(-dt / tau) */
} llg_cfg;

static inline uint32_t irmen_h32(uint32_t x)
{
    x ^= x >> 16;
    x *= 0x7feb352dU;
    x ^= x >> 15;
    x *= 0x846ca68bU;
    x ^= x >> 16;
    return x;
}

static inline uint32_t irmen_step_key(uint64_t key, uint64_t step)
{
    uint32_t a = irmen_h32((uint32_t)(key >> 32) ^ irmen_h32((uint32_t)(step >> 32)));
    return irmen_h32((uint32_t)key ^ irmen_h32((uint32_t)step ^ a));
}

/* Natural log for x in (0, 1], branch-free so the caller's loop vectorizes. */
static inline double irmen_log(double x)
{
    uint64_t b;
    memcpy(&b, &x, 8);
    uint64_t mb = (b & 0x000fffffffffffffULL) | 0x3ff0000000000000ULL;
    const uint64_t big = (uint64_t)(mb > 0x3ff6a09e667f3bcdULL);
    mb -= big << 52;
    const int64_t e = (int64_t)(b >> 52) - 1023 + (int64_t)big;
    double m;
    memcpy(&m, &mb, 8);
    const double s = (m - 1.0) / (m + 1.0), s2 = s * s;
    double p = 1.0 / 19;
    p = p * s2 + 1.0 / 17;
    p = p * s2 + 1.0 / 15;
    p = p * s2 + 1.0 / 13;
    p = p * s2 + 1.0 / 11;
    p = p * s2 + 1.0 / 9;
    p = p * s2 + 1.0 / 7;
    p = p * s2 + 1.0 / 5;
    p = p * s2 + 1.0 / 3;
    p = p * s2 + 1.0;
    return 2.0 * s * p + (double)e * 0.6931471805599453;
}

/* 2 * n_pairs standard normals scaled by sigma, Box-Muller on hashed counters. */
static void irmen_normals(uint32_t sk, ptrdiff_t n_pairs, double sigma, double *restrict out)
{
#pragma omp simd
    for (ptrdiff_t j = 0; j < n_pairs; ++j) {
        const uint32_t r1 = irmen_h32(sk ^ (uint32_t)(2 * j));
        const uint32_t r2 = irmen_h32(sk ^ (uint32_t)(2 * j + 1));
        const double u1 = ((double)r1 + 0.5) * 0x1.0p-32;
        const double u2 = (double)r2 * 0x1.0p-32;
        const double rad = sigma * sqrt(-2.0 * irmen_log(u1));
        const double h = 3.141592653589793 * (u2 - 0.5), h2 = h * h;
        double ps = -1.0 / 1307674368000.0;
        ps = ps * h2 + 1.0 / 6227020800.0;
        ps = ps * h2 - 1.0 / 39916800.0;
        ps = ps * h2 + 1.0 / 362880.0;
        ps = ps * h2 - 1.0 / 5040.0;
        ps = ps * h2 + 1.0 / 120.0;
        ps = ps * h2 - 1.0 / 6.0;
        ps = ps * h2 + 1.0;
        const double sn = h * ps;
        out[j] = rad * (2.0 * sn * sn - 1.0);
        out[j + n_pairs] = rad * 2.0 * sn * sqrt(1.0 - sn * sn);
    }
}

static inline double ramp_u(const llg_cfg *c, double t)
{
    if (c->t_ramp <= 0.0) return 1.0;
    double u = t / c->t_ramp;
    return u < 1.0 ? u : 1.0;
}

/*
 * dh holds h1 - h0. noise needs room for 2 * ((3n + 1) / 2) doubles; its
 * first 3n entries are the x, y and z thermal fields for every cell.
 */
static void llg_steps(const llg_cfg *cfg, ptrdiff_t n, long n_steps,
                      double *restrict mx, double *restrict my, double *restrict mz,
                      const double *restrict h0x, const double *restrict h0y,
                      const double *restrict h0z,
                      const double *restrict dhx, const double *restrict dhy,
                      const double *restrict dhz,
                      double *restrict noise, double *restrict filt,
                      double *restrict rec, long rec_every)
{
    const double kx = cfg->kx, ky = cfg->ky, kz = cfg->kz;
    const double g = cfg->gmu, a = cfg->alpha, dt = cfg->dt;
    const double h2 = 0.5 * dt, d6 = dt / 6.0;
    const int thermal = cfg->sigma > 0.0;
    const ptrdiff_t n_pairs = (3 * n + 1) / 2;
    const double *restrict tnx = noise;
    const double *restrict tny = noise + n;
    const double *restrict tnz = noise + 2 * n;
    long r = 0;

    if (!thermal)
        memset(noise, 0, sizeof(double) * 3 * n);

    for (long s = 0; s < n_steps; ++s) {
        const double t = cfg->t0 + s * dt;
        const double u0 = ramp_u(cfg, t);
        const double uh = ramp_u(cfg, t + h2);
        const double u1 = ramp_u(cfg, t + dt);

        if (thermal)
            irmen_normals(irmen_step_key(cfg->key, cfg->step0 + (uint64_t)s),
                          n_pairs, cfg->sigma, noise);

        for (ptrdiff_t i = 0; i < n; ++i) {
            const double bx = h0x[i] + tnx[i], by = h0y[i] + tny[i], bz = h0z[i] + tnz[i];
            const double dx = dhx[i], dy = dhy[i], dz = dhz[i];
            const double x0 = mx[i], y0 = my[i], z0 = mz[i];
            double px, py, pz, hx, hy, hz, cx, cy, cz;
            double k1x, k1y, k1z, k2x, k2y, k2z, k3x, k3y, k3z, k4x, k4y, k4z;

#define LLG_RHS(MX, MY, MZ, U, OX, OY, OZ)                              \
            hx = kx * (MX) + bx + (U) * dx;                             \
            hy = ky * (MY) + by + (U) * dy;                             \
            hz = kz * (MZ) + bz + (U) * dz;                             \
            cx = (MY) * hz - (MZ) * hy;                                 \
            cy = (MZ) * hx - (MX) * hz;                                 \
            cz = (MX) * hy - (MY) * hx;                                 \
            OX = -g * (cx + a * ((MY) * cz - (MZ) * cy));               \
            OY = -g * (cy + a * ((MZ) * cx - (MX) * cz));               \
            OZ = -g * (cz + a * ((MX) * cy - (MY) * cx));

            LLG_RHS(x0, y0, z0, u0, k1x, k1y, k1z)
            px = x0 + h2 * k1x; py = y0 + h2 * k1y; pz = z0 + h2 * k1z;
            LLG_RHS(px, py, pz, uh, k2x, k2y, k2z)
            px = x0 + h2 * k2x; py = y0 + h2 * k2y; pz = z0 + h2 * k2z;
            LLG_RHS(px, py, pz, uh, k3x, k3y, k3z)
            px = x0 + dt * k3x; py = y0 + dt * k3y; pz = z0 + dt * k3z;
            LLG_RHS(px, py, pz, u1, k4x, k4y, k4z)
#undef LLG_RHS
            const double nx = x0 + d6 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            const double ny = y0 + d6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            const double nz = z0 + d6 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
            const double inv = 1.0 / sqrt(nx * nx + ny * ny + nz * nz);
            mx[i] = nx * inv;
            my[i] = ny * inv;
            mz[i] = nz * inv;
        }

        if (cfg->filt_axis >= 0) {
            const double *src = cfg->filt_axis == 0 ? mx : (cfg->filt_axis == 1 ? my : mz);
            const double fc = cfg->filt_c;
            for (ptrdiff_t i = 0; i < n; ++i)
                filt[i] += fc * (src[i] - filt[i]);
        }

        if (rec_every > 0 && (s + 1) % rec_every == 0) {
            double *dst = rec + (size_t)r * 3 * n;
            for (ptrdiff_t i = 0; i < n; ++i) {
                dst[3 * i] = mx[i];
                dst[3 * i + 1] = my[i];
                dst[3 * i + 2] = mz[i];
            }
            ++r;
        }
    }
}

#endif
