#include "elm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace elm {

void set_num_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }
int num_threads() { return omp_get_max_threads(); }

namespace kern {

namespace {
constexpr real kSqrt1_2 = 0.70710678118654752440;   // 1/sqrt(2)
constexpr real kInvSqrt2Pi = 0.39894228040143267794;  // 1/sqrt(2*pi)
}  // namespace

// -------------------- matmul family --------------------
// All loops accumulate each output element in a fixed order; the OpenMP
// split is across output rows, so thread count never changes results.

void matmul(const real* a, const real* b, real* c, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        real* crow = c + static_cast<std::size_t>(i) * n;
        if (!acc) std::memset(crow, 0, sizeof(real) * n);
        const real* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const real av = arow[p];
            const real* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const real* arow = a + static_cast<std::size_t>(i) * k;
        real* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* brow = b + static_cast<std::size_t>(j) * k;
            real s = 0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = acc ? crow[j] + s : s;
        }
    }
}

void matmul_tn(const real* a, const real* g, real* c, int m, int k, int n, bool acc) {
    // c(k x n) = sum_i a[i,:]^T g[i,:]; parallel over output rows (k dim).
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
        real* crow = c + static_cast<std::size_t>(p) * n;
        if (!acc) std::memset(crow, 0, sizeof(real) * n);
        for (int i = 0; i < m; ++i) {
            const real av = a[static_cast<std::size_t>(i) * k + p];
            const real* grow = g + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

// -------------------- elementwise --------------------

void vadd(const real* x, const real* y, real* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) out[i] = x[i] + y[i];
}

void vsub(const real* x, const real* y, real* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) out[i] = x[i] - y[i];
}

void vmul(const real* x, const real* y, real* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) out[i] = x[i] * y[i];
}

void vscale(const real* x, real a, real* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) out[i] = a * x[i];
}

void vaxpy(real a, const real* x, real* y, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) y[i] += a * x[i];
}

// -------------------- activations --------------------

void gelu_fwd(const real* x, real* y, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const real v = x[i];
        y[i] = static_cast<real>(0.5) * v * (1 + std::erf(v * kSqrt1_2));
    }
}

void gelu_bwd(const real* x, const real* gy, real* gx_acc, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const real v = x[i];
        const real cdf = static_cast<real>(0.5) * (1 + std::erf(v * kSqrt1_2));
        const real pdf = kInvSqrt2Pi * std::exp(static_cast<real>(-0.5) * v * v);
        gx_acc[i] += gy[i] * (cdf + v * pdf);
    }
}

void sigmoid_fwd(const real* x, real* y, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const real v = x[i];
        y[i] = v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v));
    }
}

void sigmoid_bwd(const real* y, const real* gy, real* gx_acc, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
        gx_acc[i] += gy[i] * y[i] * (1 - y[i]);
}

// -------------------- softmax --------------------

void softmax_rows_fwd(const real* x, real* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const real* xr = x + static_cast<std::size_t>(i) * cols;
        real* yr = y + static_cast<std::size_t>(i) * cols;
        real mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        real z = 0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        const real inv = 1 / z;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void softmax_rows_bwd(const real* y, const real* gy, real* gx_acc, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const real* yr = y + static_cast<std::size_t>(i) * cols;
        const real* gr = gy + static_cast<std::size_t>(i) * cols;
        real* xr = gx_acc + static_cast<std::size_t>(i) * cols;
        real dot = 0;
        for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < cols; ++j) xr[j] += yr[j] * (gr[j] - dot);
    }
}

// -------------------- rms norm --------------------

void rmsnorm_fwd(const real* x, const real* gain, real* y, real* inv_rms, int rows, int cols,
                 real eps) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const real* xr = x + static_cast<std::size_t>(i) * cols;
        real* yr = y + static_cast<std::size_t>(i) * cols;
        real ss = 0;
        for (int j = 0; j < cols; ++j) ss += xr[j] * xr[j];
        const real inv = 1 / std::sqrt(ss / cols + eps);
        inv_rms[i] = inv;
        for (int j = 0; j < cols; ++j) yr[j] = gain[j] * xr[j] * inv;
    }
}

void rmsnorm_bwd(const real* x, const real* gain, const real* inv_rms, const real* gy,
                 real* gx_acc, real* ggain_acc, int rows, int cols) {
    // dx_j = inv*(g_j*gy_j) - x_j * inv^3/cols * sum_k(g_k*gy_k*x_k)
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const real* xr = x + static_cast<std::size_t>(i) * cols;
        const real* gr = gy + static_cast<std::size_t>(i) * cols;
        real* dxr = gx_acc + static_cast<std::size_t>(i) * cols;
        const real inv = inv_rms[i];
        real dot = 0;
        for (int j = 0; j < cols; ++j) dot += gain[j] * gr[j] * xr[j];
        const real coef = dot * inv * inv * inv / cols;
        for (int j = 0; j < cols; ++j) dxr[j] += gain[j] * gr[j] * inv - xr[j] * coef;
    }
    // Gain gradient: column sums, parallel across columns.
#pragma omp parallel for schedule(static)
    for (int j = 0; j < cols; ++j) {
        real s = 0;
        for (int i = 0; i < rows; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * cols + j;
            s += gy[off] * x[off] * inv_rms[i];
        }
        ggain_acc[j] += s;
    }
}

// -------------------- fused attention --------------------

void attention_fwd(const real* q, const real* k, const real* v, real* out, real* probs, int batch,
                   int T, int dim, int heads, bool causal) {
    const int hd = dim / heads;
    const real scale = 1 / std::sqrt(static_cast<real>(hd));
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            const std::size_t rowbase = static_cast<std::size_t>(b) * T;
            const std::size_t hoff = static_cast<std::size_t>(h) * hd;
            real* P = probs + (static_cast<std::size_t>(b) * heads + h) * T * T;
            for (int i = 0; i < T; ++i) {
                const real* qi = q + (rowbase + i) * dim + hoff;
                const int jmax = causal ? i + 1 : T;
                real* Pi = P + static_cast<std::size_t>(i) * T;
                real mx = -1e300;
                for (int j = 0; j < jmax; ++j) {
                    const real* kj = k + (rowbase + j) * dim + hoff;
                    real s = 0;
                    for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
                    Pi[j] = s * scale;
                    mx = std::max(mx, Pi[j]);
                }
                real z = 0;
                for (int j = 0; j < jmax; ++j) {
                    Pi[j] = std::exp(Pi[j] - mx);
                    z += Pi[j];
                }
                const real inv = 1 / z;
                for (int j = 0; j < jmax; ++j) Pi[j] *= inv;
                for (int j = jmax; j < T; ++j) Pi[j] = 0;  // masked: exactly zero
                real* oi = out + (rowbase + i) * dim + hoff;
                for (int d = 0; d < hd; ++d) oi[d] = 0;
                for (int j = 0; j < jmax; ++j) {
                    const real p = Pi[j];
                    const real* vj = v + (rowbase + j) * dim + hoff;
                    for (int d = 0; d < hd; ++d) oi[d] += p * vj[d];
                }
            }
        }
    }
}

void attention_bwd(const real* q, const real* k, const real* v, const real* probs,
                   const real* gout, real* gq_acc, real* gk_acc, real* gv_acc, int batch, int T,
                   int dim, int heads, bool causal) {
    const int hd = dim / heads;
    const real scale = 1 / std::sqrt(static_cast<real>(hd));
    // Heads write disjoint column slices and batches disjoint rows, so the
    // (b,h) grid is safe to run in parallel.
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            const std::size_t rowbase = static_cast<std::size_t>(b) * T;
            const std::size_t hoff = static_cast<std::size_t>(h) * hd;
            const real* P = probs + (static_cast<std::size_t>(b) * heads + h) * T * T;
            for (int i = 0; i < T; ++i) {
                const int jmax = causal ? i + 1 : T;
                const real* Pi = P + static_cast<std::size_t>(i) * T;
                const real* goi = gout + (rowbase + i) * dim + hoff;
                // dP[i,j] = dot(gout_i, v_j); dS = P .* (dP - sum_j dP P)
                real dot = 0;
                for (int j = 0; j < jmax; ++j) {
                    const real* vj = v + (rowbase + j) * dim + hoff;
                    real dp = 0;
                    for (int d = 0; d < hd; ++d) dp += goi[d] * vj[d];
                    dot += dp * Pi[j];
                }
                const real* qi = q + (rowbase + i) * dim + hoff;
                real* gqi = gq_acc + (rowbase + i) * dim + hoff;
                for (int j = 0; j < jmax; ++j) {
                    const real* vj = v + (rowbase + j) * dim + hoff;
                    real dp = 0;
                    for (int d = 0; d < hd; ++d) dp += goi[d] * vj[d];
                    const real ds = Pi[j] * (dp - dot) * scale;
                    const real* kj = k + (rowbase + j) * dim + hoff;
                    real* gkj = gk_acc + (rowbase + j) * dim + hoff;
                    real* gvj = gv_acc + (rowbase + j) * dim + hoff;
                    const real p = Pi[j];
                    for (int d = 0; d < hd; ++d) {
                        gqi[d] += ds * kj[d];
                        gkj[d] += ds * qi[d];
                        gvj[d] += p * goi[d];
                    }
                }
            }
        }
    }
}

real reduce_sum(const real* x, std::size_t n) {
    real s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

// -------------------- serial references --------------------

namespace ref {

void matmul(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            real s = 0;
            for (int p = 0; p < k; ++p)
                s += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = s;
        }
    }
}

void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            real s = 0;
            for (int p = 0; p < k; ++p)
                s += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(j) * k + p];
            c[static_cast<std::size_t>(i) * n + j] = s;
        }
}

void matmul_tn(const real* a, const real* g, real* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
            real s = 0;
            for (int i = 0; i < m; ++i)
                s += a[static_cast<std::size_t>(i) * k + p] * g[static_cast<std::size_t>(i) * n + j];
            c[static_cast<std::size_t>(p) * n + j] = s;
        }
}

void softmax_rows(const real* x, real* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const real* xr = x + static_cast<std::size_t>(i) * cols;
        real* yr = y + static_cast<std::size_t>(i) * cols;
        real mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        real z = 0;
        for (int j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
        for (int j = 0; j < cols; ++j) yr[j] = std::exp(xr[j] - mx) / z;
    }
}

void gelu(const real* x, real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        y[i] = static_cast<real>(0.5) * x[i] * (1 + std::erf(x[i] * kSqrt1_2));
}

void rmsnorm(const real* x, const real* gain, real* y, int rows, int cols, real eps) {
    for (int i = 0; i < rows; ++i) {
        const real* xr = x + static_cast<std::size_t>(i) * cols;
        real* yr = y + static_cast<std::size_t>(i) * cols;
        real ss = 0;
        for (int j = 0; j < cols; ++j) ss += xr[j] * xr[j];
        const real r = std::sqrt(ss / cols + eps);
        for (int j = 0; j < cols; ++j) yr[j] = gain[j] * xr[j] / r;
    }
}

void attention(const real* q, const real* k, const real* v, real* out, int batch, int T, int dim,
               int heads, bool causal) {
    const int hd = dim / heads;
    const real scale = 1 / std::sqrt(static_cast<real>(hd));
    std::vector<real> row(T);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            const std::size_t rowbase = static_cast<std::size_t>(b) * T;
            const std::size_t hoff = static_cast<std::size_t>(h) * hd;
            for (int i = 0; i < T; ++i) {
                const int jmax = causal ? i + 1 : T;
                const real* qi = q + (rowbase + i) * dim + hoff;
                for (int j = 0; j < jmax; ++j) {
                    const real* kj = k + (rowbase + j) * dim + hoff;
                    real s = 0;
                    for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
                    row[j] = s * scale;
                }
                softmax_rows(row.data(), row.data(), 1, jmax);
                real* oi = out + (rowbase + i) * dim + hoff;
                for (int d = 0; d < hd; ++d) oi[d] = 0;
                for (int j = 0; j < jmax; ++j)
                    for (int d = 0; d < hd; ++d)
                        oi[d] += row[j] * v[(rowbase + j) * dim + hoff + d];
            }
        }
    }
}

}  // namespace ref
}  // namespace kern
}  // namespace elm
