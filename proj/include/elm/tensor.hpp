#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "elm/errors.hpp"
#include "elm/real.hpp"
#include "elm/rng.hpp"

namespace elm {

// Reverse-mode autodiff over dense row-major arrays. The graph is
// define-by-run: each op appends a node holding its output buffer and a
// backward closure; backward() walks the reachable nodes in exact reverse
// creation order. Tensors are cheap handles onto shared nodes.

struct AttnCapture;

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<real> val;
    std::vector<real> grad;  // sized lazily; zero until touched
    bool requires_grad = false;
    std::int64_t seq = 0;  // creation order
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::size_t numel() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0);
    }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Records no graph while any guard is alive; ops then run forward-only.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, real value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<real> values,
                       bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, real stddev,
                        bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const std::vector<int>& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->val.size(); }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    int rows() const;
    int cols() const;

    std::vector<real>& val() { return n_->val; }
    const std::vector<real>& val() const { return n_->val; }
    real& at(int i, int j) { return n_->val[static_cast<std::size_t>(i) * cols() + j]; }
    real at(int i, int j) const { return n_->val[static_cast<std::size_t>(i) * cols() + j]; }
    real item() const;

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }
    // Gradient buffer (zeros of the value shape until backward touches it).
    const std::vector<real>& grad() const;
    void zero_grad();
    bool all_finite() const { return elm::all_finite(n_->val.data(), n_->val.size()); }

    detail::NodePtr node() const { return n_; }
    static Tensor wrap(detail::NodePtr n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    detail::NodePtr n_;
};

// Populates .grad for every requires_grad tensor reachable from loss.
// Repeated calls accumulate; callers reset with zero_grad().
void backward(const Tensor& loss);

// -------------------- ops --------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [m,n] + [n] per row
Tensor scale(const Tensor& x, real c);
Tensor add_scalar(const Tensor& x, real c);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor rmsnorm(const Tensor& x, const Tensor& gain, real eps = 1e-12);
Tensor softmax_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor transpose(const Tensor& x);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);

// Row gather: out[i,:] = x[indices[i],:]; backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);
// Embedding lookup is row gather on the table.
inline Tensor embedding(const Tensor& table, const std::vector<int>& indices) {
    return gather_rows(table, indices);
}

// Mean of w[t]*(-log softmax(logits)[t]) over rows, fused log-sum-exp.
// Weights select/weight rows (MLM loss uses 0/1); sum(w) must be > 0.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
Tensor cross_entropy_weighted(const Tensor& logits, const std::vector<int>& targets,
                              const std::vector<real>& row_weights);

// Additive causal mask on a [T,T] score matrix: entries j>i get -1e30.
Tensor mask_causal(const Tensor& scores);

// y[i,:] = w[i] * x[i,:] with constant per-row weights.
Tensor scale_rows(const Tensor& x, const std::vector<real>& w);

// Fused multi-head attention; q,k,v are [B*T, dim]. When capture is given the
// post-softmax score matrices are copied out per (batch, head).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int T, int heads, bool causal,
                 AttnCapture* capture = nullptr);

// Forward takes the provided quantized values, backward passes gradients
// through unchanged (identity Jacobian).
Tensor straight_through(const Tensor& x, std::vector<real> quantized);

// Stop-gradient copy.
Tensor detach(const Tensor& x);

struct AttnCapture {
    int batch = 0, heads = 0, T = 0;
    // scores[b*heads+h] is a T*T row-major post-softmax matrix.
    std::vector<std::vector<real>> scores;
};

}  // namespace elm
