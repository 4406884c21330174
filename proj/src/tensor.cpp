#include "elm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "elm/kernels.hpp"

namespace elm {

namespace {

std::atomic<std::int64_t> g_seq{0};
thread_local int g_no_grad_depth = 0;

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t shape_numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

detail::NodePtr make_node(std::vector<int> shape, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->val.resize(shape_numel(n->shape));
    n->requires_grad = requires_grad;
    n->seq = g_seq.fetch_add(1);
    return n;
}

void require_2d(const Tensor& t, const char* who) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(who) + " needs a 2-d tensor, got " + shape_str(t.shape()));
}

// Builds the output node of an op. Records inputs/backward only when grad
// mode is on and some input needs gradients.
Tensor make_op(std::vector<int> shape, std::vector<detail::NodePtr> inputs,
               std::function<void(detail::Node&)> bw) {
    bool need = false;
    if (grad_enabled()) {
        for (const auto& in : inputs)
            if (in->requires_grad) need = true;
    }
    auto out = make_node(std::move(shape), need);
    if (need) {
        out->inputs = std::move(inputs);
        out->backward = std::move(bw);
    }
    return Tensor::wrap(out);
}

real* grad_of(const detail::NodePtr& n) {
    n->ensure_grad();
    return n->grad.data();
}

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// -------------------- Tensor basics --------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return wrap(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    std::fill(n->val.begin(), n->val.end(), value);
    return wrap(n);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> values, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    if (values.size() != n->val.size())
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(n->shape));
    n->val = std::move(values);
    return wrap(n);
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, real stddev, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    for (auto& v : n->val) v = static_cast<real>(rng.normal()) * stddev;
    return wrap(n);
}

int Tensor::rows() const {
    require_2d(*this, "rows()");
    return n_->shape[0];
}

int Tensor::cols() const {
    require_2d(*this, "cols()");
    return n_->shape[1];
}

real Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() needs a scalar, got " + shape_str(n_->shape));
    return n_->val[0];
}

const std::vector<real>& Tensor::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

void Tensor::zero_grad() {
    n_->ensure_grad();
    std::fill(n_->grad.begin(), n_->grad.end(), 0);
}

// -------------------- backward --------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ConfigError("backward() requires a scalar loss");
    auto root = loss.node();
    if (!root->requires_grad) return;  // nothing reachable requires grad

    // Collect the reachable sub-graph, then replay in reverse creation order.
    std::vector<detail::NodePtr> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::NodePtr> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::NodePtr& a, const detail::NodePtr& b) { return a->seq > b->seq; });

    // Op outputs restart from zero each pass; leaves accumulate across
    // passes until the caller resets them.
    for (auto& n : order) {
        if (n->backward) {
            n->ensure_grad();
            std::fill(n->grad.begin(), n->grad.end(), 0);
        }
    }
    root->ensure_grad();
    root->grad[0] += 1;
    for (auto& n : order) {
        if (n->backward) n->backward(*n);
    }
}

// -------------------- ops --------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto an = a.node(), bn = b.node();
    Tensor out = make_op({m, n}, {an, bn}, [an, bn, m, k, n](detail::Node& o) {
        if (an->requires_grad) kern::matmul_nt(o.grad.data(), bn->val.data(), grad_of(an), m, n, k, true);
        if (bn->requires_grad) kern::matmul_tn(an->val.data(), o.grad.data(), grad_of(bn), m, k, n, true);
    });
    kern::matmul(an->val.data(), bn->val.data(), out.val().data(), m, k, n);
    return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(who) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    const std::size_t n = a.numel();
    Tensor out = make_op(a.shape(), {an, bn}, [an, bn, n](detail::Node& o) {
        if (an->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(an), n);
        if (bn->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(bn), n);
    });
    kern::vadd(an->val.data(), bn->val.data(), out.val().data(), n);
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    const std::size_t n = a.numel();
    Tensor out = make_op(a.shape(), {an, bn}, [an, bn, n](detail::Node& o) {
        if (an->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(an), n);
        if (bn->requires_grad) kern::vaxpy(-1, o.grad.data(), grad_of(bn), n);
    });
    kern::vsub(an->val.data(), bn->val.data(), out.val().data(), n);
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    const std::size_t n = a.numel();
    Tensor out = make_op(a.shape(), {an, bn}, [an, bn, n](detail::Node& o) {
        if (an->requires_grad) {
            real* ga = grad_of(an);
            for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i] * bn->val[i];
        }
        if (bn->requires_grad) {
            real* gb = grad_of(bn);
            for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i] * an->val[i];
        }
    });
    kern::vmul(an->val.data(), bn->val.data(), out.val().data(), n);
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_2d(x, "add_bias");
    if (bias.shape().size() != 1 || bias.dim(0) != x.dim(1))
        throw ShapeError("add_bias needs bias [n] matching " + shape_str(x.shape()));
    auto xn = x.node(), bn = bias.node();
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = make_op(x.shape(), {xn, bn}, [xn, bn, m, n](detail::Node& o) {
        if (xn->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(xn), o.grad.size());
        if (bn->requires_grad) {
            real* gb = grad_of(bn);
            for (int j = 0; j < n; ++j) {
                real s = 0;
                for (int i = 0; i < m; ++i) s += o.grad[static_cast<std::size_t>(i) * n + j];
                gb[j] += s;
            }
        }
    });
    for (int i = 0; i < m; ++i)
        kern::vadd(xn->val.data() + static_cast<std::size_t>(i) * n, bn->val.data(),
                   out.val().data() + static_cast<std::size_t>(i) * n, n);
    return out;
}

Tensor scale(const Tensor& x, real c) {
    auto xn = x.node();
    const std::size_t n = x.numel();
    Tensor out = make_op(x.shape(), {xn}, [xn, c, n](detail::Node& o) {
        if (xn->requires_grad) kern::vaxpy(c, o.grad.data(), grad_of(xn), n);
    });
    kern::vscale(xn->val.data(), c, out.val().data(), n);
    return out;
}

Tensor add_scalar(const Tensor& x, real c) {
    auto xn = x.node();
    const std::size_t n = x.numel();
    Tensor out = make_op(x.shape(), {xn}, [xn, n](detail::Node& o) {
        if (xn->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(xn), n);
    });
    for (std::size_t i = 0; i < n; ++i) out.val()[i] = xn->val[i] + c;
    return out;
}

Tensor gelu(const Tensor& x) {
    auto xn = x.node();
    const std::size_t n = x.numel();
    Tensor out = make_op(x.shape(), {xn}, [xn, n](detail::Node& o) {
        if (xn->requires_grad) kern::gelu_bwd(xn->val.data(), o.grad.data(), grad_of(xn), n);
    });
    kern::gelu_fwd(xn->val.data(), out.val().data(), n);
    return out;
}

Tensor sigmoid(const Tensor& x) {
    auto xn = x.node();
    const std::size_t n = x.numel();
    Tensor out = make_op(x.shape(), {xn}, [xn, n](detail::Node& o) {
        if (xn->requires_grad) kern::sigmoid_bwd(o.val.data(), o.grad.data(), grad_of(xn), n);
    });
    kern::sigmoid_fwd(xn->val.data(), out.val().data(), n);
    return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, real eps) {
    require_2d(x, "rmsnorm");
    if (gain.shape().size() != 1 || gain.dim(0) != x.dim(1))
        throw ShapeError("rmsnorm gain must be [cols] of " + shape_str(x.shape()));
    auto xn = x.node(), gn = gain.node();
    const int rows = x.dim(0), cols = x.dim(1);
    auto inv_rms = std::make_shared<std::vector<real>>(rows);
    Tensor out = make_op(x.shape(), {xn, gn}, [xn, gn, inv_rms, rows, cols](detail::Node& o) {
        // gain gradient accumulated even when only x needs grad is harmless:
        // guard both for clarity.
        std::vector<real> dummy;
        real* ggain = nullptr;
        if (gn->requires_grad) {
            ggain = grad_of(gn);
        } else {
            dummy.assign(cols, 0);
            ggain = dummy.data();
        }
        real* gx = nullptr;
        std::vector<real> dummyx;
        if (xn->requires_grad) {
            gx = grad_of(xn);
        } else {
            dummyx.assign(static_cast<std::size_t>(rows) * cols, 0);
            gx = dummyx.data();
        }
        kern::rmsnorm_bwd(xn->val.data(), gn->val.data(), inv_rms->data(), o.grad.data(), gx,
                          ggain, rows, cols);
    });
    kern::rmsnorm_fwd(xn->val.data(), gn->val.data(), out.val().data(), inv_rms->data(), rows,
                      cols, eps);
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    auto xn = x.node();
    const int rows = x.dim(0), cols = x.dim(1);
    Tensor out = make_op(x.shape(), {xn}, [xn, rows, cols](detail::Node& o) {
        if (xn->requires_grad)
            kern::softmax_rows_bwd(o.val.data(), o.grad.data(), grad_of(xn), rows, cols);
    });
    kern::softmax_rows_fwd(xn->val.data(), out.val().data(), rows, cols);
    return out;
}

Tensor sum(const Tensor& x) {
    auto xn = x.node();
    const std::size_t n = x.numel();
    Tensor out = make_op({1}, {xn}, [xn, n](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            const real g = o.grad[0];
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        }
    });
    out.val()[0] = kern::reduce_sum(xn->val.data(), n);
    return out;
}

Tensor mean(const Tensor& x) {
    auto xn = x.node();
    const std::size_t n = x.numel();
    Tensor out = make_op({1}, {xn}, [xn, n](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            const real g = o.grad[0] / static_cast<real>(n);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        }
    });
    out.val()[0] = kern::reduce_sum(xn->val.data(), n) / static_cast<real>(n);
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    auto xn = x.node();
    Tensor out = make_op(std::move(shape), {xn}, [xn](detail::Node& o) {
        if (xn->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(xn), o.grad.size());
    });
    out.val() = xn->val;
    return out;
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose");
    const int m = x.dim(0), n = x.dim(1);
    auto xn = x.node();
    Tensor out = make_op({n, m}, {xn}, [xn, m, n](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] +=
                        o.grad[static_cast<std::size_t>(j) * m + i];
        }
    });
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.val()[static_cast<std::size_t>(j) * m + i] =
                xn->val[static_cast<std::size_t>(i) * n + j];
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_2d(a, "concat_cols");
    require_2d(b, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols row mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int m = a.dim(0), na = a.dim(1), nb = b.dim(1);
    auto an = a.node(), bn = b.node();
    Tensor out = make_op({m, na + nb}, {an, bn}, [an, bn, m, na, nb](detail::Node& o) {
        const int n = na + nb;
        if (an->requires_grad) {
            real* ga = grad_of(an);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < na; ++j)
                    ga[static_cast<std::size_t>(i) * na + j] +=
                        o.grad[static_cast<std::size_t>(i) * n + j];
        }
        if (bn->requires_grad) {
            real* gb = grad_of(bn);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nb; ++j)
                    gb[static_cast<std::size_t>(i) * nb + j] +=
                        o.grad[static_cast<std::size_t>(i) * n + na + j];
        }
    });
    for (int i = 0; i < m; ++i) {
        std::memcpy(out.val().data() + static_cast<std::size_t>(i) * (na + nb),
                    an->val.data() + static_cast<std::size_t>(i) * na, sizeof(real) * na);
        std::memcpy(out.val().data() + static_cast<std::size_t>(i) * (na + nb) + na,
                    bn->val.data() + static_cast<std::size_t>(i) * nb, sizeof(real) * nb);
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_2d(a, "concat_rows");
    require_2d(b, "concat_rows");
    if (a.dim(1) != b.dim(1))
        throw ShapeError("concat_rows column mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
    auto an = a.node(), bn = b.node();
    Tensor out = make_op({ma + mb, n}, {an, bn}, [an, bn, ma, mb, n](detail::Node& o) {
        if (an->requires_grad)
            kern::vaxpy(1, o.grad.data(), grad_of(an), static_cast<std::size_t>(ma) * n);
        if (bn->requires_grad)
            kern::vaxpy(1, o.grad.data() + static_cast<std::size_t>(ma) * n, grad_of(bn),
                        static_cast<std::size_t>(mb) * n);
    });
    std::memcpy(out.val().data(), an->val.data(), sizeof(real) * an->val.size());
    std::memcpy(out.val().data() + an->val.size(), bn->val.data(), sizeof(real) * bn->val.size());
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int count) {
    require_2d(x, "slice_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (start < 0 || count < 1 || start + count > m)
        throw ShapeError("slice_rows [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
    auto xn = x.node();
    Tensor out = make_op({count, n}, {xn}, [xn, start, n](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn) + static_cast<std::size_t>(start) * n;
            kern::vaxpy(1, o.grad.data(), gx, o.grad.size());
        }
    });
    std::memcpy(out.val().data(), xn->val.data() + static_cast<std::size_t>(start) * n,
                sizeof(real) * out.numel());
    return out;
}

Tensor slice_cols(const Tensor& x, int start, int count) {
    require_2d(x, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    if (start < 0 || count < 1 || start + count > n)
        throw ShapeError("slice_cols [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
    auto xn = x.node();
    Tensor out = make_op({m, count}, {xn}, [xn, m, n, start, count](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < count; ++j)
                    gx[static_cast<std::size_t>(i) * n + start + j] +=
                        o.grad[static_cast<std::size_t>(i) * count + j];
        }
    });
    for (int i = 0; i < m; ++i)
        std::memcpy(out.val().data() + static_cast<std::size_t>(i) * count,
                    xn->val.data() + static_cast<std::size_t>(i) * n + start,
                    sizeof(real) * count);
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
    require_2d(x, "gather_rows");
    const int m = x.dim(0), n = x.dim(1);
    for (int idx : indices)
        if (idx < 0 || idx >= m)
            throw ConfigError("gather_rows index " + std::to_string(idx) + " out of [0," +
                              std::to_string(m) + ")");
    auto xn = x.node();
    auto idx = std::make_shared<std::vector<int>>(indices);
    const int rows = static_cast<int>(indices.size());
    Tensor out = make_op({rows, n}, {xn}, [xn, idx, n](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            // scatter-add, serial: rows may repeat
            for (std::size_t i = 0; i < idx->size(); ++i) {
                const real* g = o.grad.data() + i * n;
                real* dst = gx + static_cast<std::size_t>((*idx)[i]) * n;
                for (int j = 0; j < n; ++j) dst[j] += g[j];
            }
        }
    });
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.val().data() + i * n,
                    xn->val.data() + static_cast<std::size_t>(indices[i]) * n, sizeof(real) * n);
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    return cross_entropy_weighted(logits, targets,
                                  std::vector<real>(targets.size(), static_cast<real>(1)));
}

Tensor cross_entropy_weighted(const Tensor& logits, const std::vector<int>& targets,
                              const std::vector<real>& row_weights) {
    require_2d(logits, "cross_entropy");
    const int rows = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(targets.size()) != rows || row_weights.size() != targets.size())
        throw ShapeError("cross_entropy needs one target and weight per row");
    for (int t : targets)
        if (t < 0 || t >= K)
            throw ConfigError("cross_entropy target " + std::to_string(t) + " out of [0," +
                              std::to_string(K) + ")");
    real wsum = 0;
    for (real w : row_weights) wsum += w;
    if (!(wsum > 0)) throw ConfigError("cross_entropy needs positive total row weight");

    auto xn = logits.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    auto wts = std::make_shared<std::vector<real>>(row_weights);
    Tensor out = make_op({1}, {xn}, [xn, tgt, wts, rows, K, wsum](detail::Node& o) {
        if (!xn->requires_grad) return;
        real* gx = grad_of(xn);
        const real gscale = o.grad[0] / wsum;
#pragma omp parallel for schedule(static)
        for (int i = 0; i < rows; ++i) {
            const real w = (*wts)[i];
            if (w == 0) continue;
            const real* lr = xn->val.data() + static_cast<std::size_t>(i) * K;
            real* gr = gx + static_cast<std::size_t>(i) * K;
            real mx = lr[0];
            for (int j = 1; j < K; ++j) mx = std::max(mx, lr[j]);
            real z = 0;
            for (int j = 0; j < K; ++j) z += std::exp(lr[j] - mx);
            const real c = gscale * w;
            for (int j = 0; j < K; ++j) gr[j] += c * std::exp(lr[j] - mx) / z;
            gr[(*tgt)[i]] -= c;
        }
    });
    // forward: weighted mean of (logsumexp - logit[target])
    real loss = 0;
    for (int i = 0; i < rows; ++i) {
        const real w = row_weights[i];
        if (w == 0) continue;
        const real* lr = xn->val.data() + static_cast<std::size_t>(i) * K;
        real mx = lr[0];
        for (int j = 1; j < K; ++j) mx = std::max(mx, lr[j]);
        real z = 0;
        for (int j = 0; j < K; ++j) z += std::exp(lr[j] - mx);
        loss += w * (mx + std::log(z) - lr[targets[i]]);
    }
    out.val()[0] = loss / wsum;
    return out;
}

Tensor mask_causal(const Tensor& scores) {
    require_2d(scores, "mask_causal");
    if (scores.dim(0) != scores.dim(1))
        throw ShapeError("mask_causal needs a square matrix, got " + shape_str(scores.shape()));
    const int T = scores.dim(0);
    auto xn = scores.node();
    Tensor out = make_op(scores.shape(), {xn}, [xn, T](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            for (int i = 0; i < T; ++i)
                for (int j = 0; j <= i; ++j)
                    gx[static_cast<std::size_t>(i) * T + j] +=
                        o.grad[static_cast<std::size_t>(i) * T + j];
        }
    });
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j)
            out.val()[static_cast<std::size_t>(i) * T + j] =
                j <= i ? xn->val[static_cast<std::size_t>(i) * T + j] : static_cast<real>(-1e30);
    return out;
}

Tensor scale_rows(const Tensor& x, const std::vector<real>& w) {
    require_2d(x, "scale_rows");
    const int m = x.dim(0), n = x.dim(1);
    if (static_cast<int>(w.size()) != m) throw ShapeError("scale_rows needs one weight per row");
    auto xn = x.node();
    auto wp = std::make_shared<std::vector<real>>(w);
    Tensor out = make_op(x.shape(), {xn}, [xn, wp, m, n](detail::Node& o) {
        if (xn->requires_grad) {
            real* gx = grad_of(xn);
            for (int i = 0; i < m; ++i) {
                const real wi = (*wp)[i];
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] +=
                        wi * o.grad[static_cast<std::size_t>(i) * n + j];
            }
        }
    });
    for (int i = 0; i < m; ++i)
        kern::vscale(xn->val.data() + static_cast<std::size_t>(i) * n, w[i],
                     out.val().data() + static_cast<std::size_t>(i) * n, n);
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int T, int heads, bool causal,
                 AttnCapture* capture) {
    require_2d(q, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const int rows = q.dim(0), dim = q.dim(1);
    if (T < 1 || rows % T != 0)
        throw ShapeError("attention rows " + std::to_string(rows) + " not a multiple of T=" +
                         std::to_string(T));
    if (heads < 1 || dim % heads != 0)
        throw ShapeError("attention dim " + std::to_string(dim) + " not divisible by heads=" +
                         std::to_string(heads));
    const int batch = rows / T;
    auto qn = q.node(), kn = k.node(), vn = v.node();
    auto probs = std::make_shared<std::vector<real>>(
        static_cast<std::size_t>(batch) * heads * T * T);
    Tensor out = make_op(q.shape(), {qn, kn, vn},
                         [qn, kn, vn, probs, batch, T, dim, heads, causal](detail::Node& o) {
                             kern::attention_bwd(qn->val.data(), kn->val.data(), vn->val.data(),
                                                 probs->data(), o.grad.data(), grad_of(qn),
                                                 grad_of(kn), grad_of(vn), batch, T, dim, heads,
                                                 causal);
                         });
    kern::attention_fwd(qn->val.data(), kn->val.data(), vn->val.data(), out.val().data(),
                        probs->data(), batch, T, dim, heads, causal);
    if (capture) {
        capture->batch = batch;
        capture->heads = heads;
        capture->T = T;
        capture->scores.resize(static_cast<std::size_t>(batch) * heads);
        for (int b = 0; b < batch; ++b)
            for (int h = 0; h < heads; ++h) {
                const real* src = probs->data() + (static_cast<std::size_t>(b) * heads + h) * T * T;
                capture->scores[static_cast<std::size_t>(b) * heads + h].assign(src,
                                                                                 src + T * T);
            }
    }
    return out;
}

Tensor straight_through(const Tensor& x, std::vector<real> quantized) {
    if (quantized.size() != x.numel())
        throw ShapeError("straight_through replacement size mismatch");
    auto xn = x.node();
    Tensor out = make_op(x.shape(), {xn}, [xn](detail::Node& o) {
        if (xn->requires_grad) kern::vaxpy(1, o.grad.data(), grad_of(xn), o.grad.size());
    });
    out.val() = std::move(quantized);
    return out;
}

Tensor detach(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), false);
    out.val() = x.val();
    return out;
}

}  // namespace elm
