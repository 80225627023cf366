/* Per-vertex blend of padded 3x4 node matrices (16 floats each). */
#ifndef DRAPE_BLEND_H
#define DRAPE_BLEND_H

#if defined(__GNUC__) || defined(__clang__)
typedef float drape_v16 __attribute__((vector_size(64), aligned(64)));

static inline void drape_blend(int n, int ks, const int *sup, const float *w, const float *n16,
                               const float *x, float *out)
{
    const drape_v16 *nv = (const drape_v16 *)n16;
    for (int i = 0; i < n; i++) {
        drape_v16 acc = {0};
        for (int k = 0; k < ks; k++)
            acc += w[i * ks + k] * nv[sup[i * ks + k]];
        for (int r = 0; r < 3; r++)
            out[3 * i + r] = acc[4 * r] * x[3 * i] + acc[4 * r + 1] * x[3 * i + 1]
                             + acc[4 * r + 2] * x[3 * i + 2] + acc[4 * r + 3];
    }
}
#else
static inline void drape_blend(int n, int ks, const int *sup, const float *w, const float *n16,
                               const float *x, float *out)
{
    for (int i = 0; i < n; i++) {
        float acc[16] = {0};
        for (int k = 0; k < ks; k++) {
            const float wk = w[i * ks + k];
            const float *src = n16 + 16 * sup[i * ks + k];
            for (int r = 0; r < 16; r++)
                acc[r] += wk * src[r];
        }
        for (int r = 0; r < 3; r++)
            out[3 * i + r] = acc[4 * r] * x[3 * i] + acc[4 * r + 1] * x[3 * i + 1]
                             + acc[4 * r + 2] * x[3 * i + 2] + acc[4 * r + 3];
    }
}
#endif

#endif
