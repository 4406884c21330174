#include "elm/infer.hpp"

#include <algorithm>
#include <cmath>

namespace elm {

namespace {

// Row-vector times matrix, accumulating in the same order as the batched
// matmul kernel so incremental and full forwards agree bitwise.
void vecmat(const real* x, const real* w, real* out, int in, int out_n, bool acc = false) {
    if (!acc)
        for (int j = 0; j < out_n; ++j) out[j] = 0;
    for (int p = 0; p < in; ++p) {
        const real xv = x[p];
        const real* wrow = w + static_cast<std::size_t>(p) * out_n;
        for (int j = 0; j < out_n; ++j) out[j] += xv * wrow[j];
    }
}

void rms_row(const real* x, const real* gain, real* y, int n, real eps = 1e-12) {
    real ss = 0;
    for (int j = 0; j < n; ++j) ss += x[j] * x[j];
    const real inv = 1 / std::sqrt(ss / n + eps);
    for (int j = 0; j < n; ++j) y[j] = gain[j] * x[j] * inv;
}

constexpr real kSqrt1_2 = 0.70710678118654752440;

void gelu_row(real* x, int n) {
    for (int j = 0; j < n; ++j)
        x[j] = static_cast<real>(0.5) * x[j] * (1 + std::erf(x[j] * kSqrt1_2));
}

}  // namespace

ArDecoder::ArDecoder(const LmModel& model) : model_(&model) {
    if (model.config().mode != LmMode::ar)
        throw ConfigError("incremental decoding needs an ar checkpoint");
    dim_ = model.config().dim;
    heads_ = model.config().heads;
    head_dim_ = dim_ / heads_;
    const int depth = model.config().depth;
    kcache_.assign(static_cast<std::size_t>(depth), {});
    vcache_.assign(static_cast<std::size_t>(depth), {});
    logits_.resize(static_cast<std::size_t>(model.config().vocab.g));
}

void ArDecoder::start(int class_id) {
    if (class_id < 0 || class_id > model_->config().num_classes)
        throw ConfigError("class id " + std::to_string(class_id) + " out of range");
    for (auto& c : kcache_) c.clear();
    for (auto& c : vcache_) c.clear();
    cur_ = 0;
    const auto& cls = model_->class_emb_.val();
    std::vector<real> x(cls.begin() + static_cast<std::size_t>(class_id) * dim_,
                        cls.begin() + static_cast<std::size_t>(class_id + 1) * dim_);
    step(std::move(x), 0);
}

void ArDecoder::feed(const std::uint16_t* subcodes, int pos) {
    if (pos != cur_)
        throw ConfigError("decoder fed position " + std::to_string(pos) + ", expected " +
                          std::to_string(cur_));
    if (pos >= model_->config().T())
        throw ConfigError("decoder fed past the context window (T=" +
                          std::to_string(model_->config().T()) + ")");
    const auto& vocab = model_->config().vocab;
    const auto& emb = model_->embed_;
    const int tw = emb.table_width();
    std::vector<real> cat(static_cast<std::size_t>(vocab.g) * tw);
    for (int s = 0; s < vocab.g; ++s) {
        const std::uint16_t idx = subcodes[s];
        if (idx >= vocab.sub_vocab())
            throw ConfigError("subcode " + std::to_string(idx) + " out of range");
        const auto& tv = emb.table(s).val();
        std::copy_n(tv.data() + static_cast<std::size_t>(idx) * tw, tw,
                    cat.data() + static_cast<std::size_t>(s) * tw);
    }
    std::vector<real> x(static_cast<std::size_t>(dim_));
    vecmat(cat.data(), emb.projection().val().data(), x.data(), vocab.g * tw, dim_);
    step(std::move(x), pos);
}

void ArDecoder::step(std::vector<real> x, int pos) {
    const auto& pe = model_->pos_emb_.val();
    for (int j = 0; j < dim_; ++j) x[static_cast<std::size_t>(j)] += pe[static_cast<std::size_t>(pos) * dim_ + j];

    std::vector<real> h(static_cast<std::size_t>(dim_));
    std::vector<real> q(static_cast<std::size_t>(dim_)), k(static_cast<std::size_t>(dim_)),
        v(static_cast<std::size_t>(dim_)), attn(static_cast<std::size_t>(dim_)),
        proj(static_cast<std::size_t>(dim_));
    std::vector<real> mlp(static_cast<std::size_t>(4) * dim_);
    std::vector<real> scores(static_cast<std::size_t>(cur_) + 1);

    for (std::size_t li = 0; li < model_->layers_.size(); ++li) {
        const auto& l = model_->layers_[li];
        rms_row(x.data(), l.ln1_gain.val().data(), h.data(), dim_);
        vecmat(h.data(), l.wq.val().data(), q.data(), dim_, dim_);
        vecmat(h.data(), l.wk.val().data(), k.data(), dim_, dim_);
        vecmat(h.data(), l.wv.val().data(), v.data(), dim_, dim_);
        auto& kc = kcache_[li];
        auto& vc = vcache_[li];
        kc.insert(kc.end(), k.begin(), k.end());
        vc.insert(vc.end(), v.begin(), v.end());
        const int n_keys = cur_ + 1;
        const real scale = 1 / std::sqrt(static_cast<real>(head_dim_));
        for (int hh = 0; hh < heads_; ++hh) {
            const int off = hh * head_dim_;
            real mx = -1e300;
            for (int j = 0; j < n_keys; ++j) {
                const real* kj = kc.data() + static_cast<std::size_t>(j) * dim_ + off;
                real s = 0;
                for (int d = 0; d < head_dim_; ++d) s += q[static_cast<std::size_t>(off + d)] * kj[d];
                scores[static_cast<std::size_t>(j)] = s * scale;
                mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
            }
            real z = 0;
            for (int j = 0; j < n_keys; ++j) {
                scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                z += scores[static_cast<std::size_t>(j)];
            }
            const real inv = 1 / z;
            for (int j = 0; j < n_keys; ++j) scores[static_cast<std::size_t>(j)] *= inv;
            for (int d = 0; d < head_dim_; ++d) attn[static_cast<std::size_t>(off + d)] = 0;
            for (int j = 0; j < n_keys; ++j) {
                const real p = scores[static_cast<std::size_t>(j)];
                const real* vj = vc.data() + static_cast<std::size_t>(j) * dim_ + off;
                for (int d = 0; d < head_dim_; ++d) attn[static_cast<std::size_t>(off + d)] += p * vj[d];
            }
        }
        vecmat(attn.data(), l.wo.val().data(), proj.data(), dim_, dim_);
        for (int j = 0; j < dim_; ++j) x[static_cast<std::size_t>(j)] += proj[static_cast<std::size_t>(j)];
        rms_row(x.data(), l.ln2_gain.val().data(), h.data(), dim_);
        vecmat(h.data(), l.w1.val().data(), mlp.data(), dim_, 4 * dim_);
        gelu_row(mlp.data(), 4 * dim_);
        vecmat(mlp.data(), l.w2.val().data(), proj.data(), 4 * dim_, dim_);
        for (int j = 0; j < dim_; ++j) x[static_cast<std::size_t>(j)] += proj[static_cast<std::size_t>(j)];
    }

    rms_row(x.data(), model_->lnf_gain_.val().data(), h.data(), dim_);
    const auto& vocab = model_->config().vocab;
    for (int s = 0; s < vocab.g; ++s) {
        auto& lg = logits_[static_cast<std::size_t>(s)];
        lg.assign(static_cast<std::size_t>(vocab.sub_vocab()), 0);
        vecmat(h.data(), model_->heads_.weight(s).val().data(), lg.data(), dim_,
               vocab.sub_vocab());
        const auto& bias = model_->heads_.bias(s).val();
        for (int j = 0; j < vocab.sub_vocab(); ++j) lg[static_cast<std::size_t>(j)] += bias[static_cast<std::size_t>(j)];
    }
    ++cur_;
}

std::vector<std::vector<real>> window_logits(const LmModel& model, int class_id,
                                             const std::uint16_t* subcodes, int n_tokens) {
    ArDecoder dec(model);
    dec.start(class_id);
    const int g = model.config().vocab.g;
    for (int i = 0; i < n_tokens; ++i)
        dec.feed(subcodes + static_cast<std::size_t>(i) * g, i + 1);
    return dec.logits();
}

}  // namespace elm
