#pragma once

#include <cstddef>

#include "elm/real.hpp"

// Dense kernels behind the tensor ops. The production versions in elm::kern
// parallelize with OpenMP across output rows only, so every output element is
// computed with a fixed summation order: results are bitwise identical for
// any thread count. elm::kern::ref holds naive serial references used by the
// tests and the benchmark.

namespace elm {

// Global thread control (forwards to OpenMP).
void set_num_threads(int n);
int num_threads();

namespace kern {

// C = A(m x k) * B(k x n); acc accumulates into C instead of overwriting.
void matmul(const real* a, const real* b, real* c, int m, int k, int n, bool acc = false);
// C = A(m x k) * B(n x k)^T -> (m x n)
void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n, bool acc = false);
// C = A(m x k)^T * G(m x n) -> (k x n)
void matmul_tn(const real* a, const real* g, real* c, int m, int k, int n, bool acc = false);

void vadd(const real* x, const real* y, real* out, std::size_t n);
void vsub(const real* x, const real* y, real* out, std::size_t n);
void vmul(const real* x, const real* y, real* out, std::size_t n);
void vscale(const real* x, real a, real* out, std::size_t n);
void vaxpy(real a, const real* x, real* y, std::size_t n);  // y += a*x

// GELU with the exact erf formulation.
void gelu_fwd(const real* x, real* y, std::size_t n);
void gelu_bwd(const real* x, const real* gy, real* gx_acc, std::size_t n);

void sigmoid_fwd(const real* x, real* y, std::size_t n);
// gx += gy * y * (1 - y); takes the forward output.
void sigmoid_bwd(const real* y, const real* gy, real* gx_acc, std::size_t n);

// Row softmax with max subtraction.
void softmax_rows_fwd(const real* x, real* y, int rows, int cols);
// gx += y .* (gy - rowdot(gy, y))
void softmax_rows_bwd(const real* y, const real* gy, real* gx_acc, int rows, int cols);

// y[i,:] = gain .* x[i,:] / rms(x[i,:]); saves 1/rms per row for backward.
void rmsnorm_fwd(const real* x, const real* gain, real* y, real* inv_rms, int rows, int cols,
                 real eps);
void rmsnorm_bwd(const real* x, const real* gain, const real* inv_rms, const real* gy,
                 real* gx_acc, real* ggain_acc, int rows, int cols);

// Fused multi-head attention over batch-flattened sequences.
// q,k,v,out are (batch*T) x dim row-major, dim = heads * head_dim.
// probs stores the post-softmax scores, batch*heads*T*T, needed for backward;
// causal restricts row i to keys j <= i (masked entries are exactly zero).
void attention_fwd(const real* q, const real* k, const real* v, real* out, real* probs, int batch,
                   int T, int dim, int heads, bool causal);
void attention_bwd(const real* q, const real* k, const real* v, const real* probs,
                   const real* gout, real* gq_acc, real* gk_acc, real* gv_acc, int batch, int T,
                   int dim, int heads, bool causal);

// Serial left-to-right sum (deterministic).
real reduce_sum(const real* x, std::size_t n);

namespace ref {

// Naive textbook implementations, kept serial, for comparison tests and the
// kernel benchmark.
void matmul(const real* a, const real* b, real* c, int m, int k, int n);
void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n);
void matmul_tn(const real* a, const real* g, real* c, int m, int k, int n);
void softmax_rows(const real* x, real* y, int rows, int cols);
void gelu(const real* x, real* y, std::size_t n);
void rmsnorm(const real* x, const real* gain, real* y, int rows, int cols, real eps);
// Attention composed from the pieces above (scores, mask, softmax, mix).
void attention(const real* q, const real* k, const real* v, real* out, int batch, int T, int dim,
               int heads, bool causal);

}  // namespace ref
}  // namespace kern
}  // namespace elm
