#include "elm/optim.hpp"

#include <cmath>

namespace elm {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0);
        v_.emplace_back(p.numel(), 0);
    }
}

void AdamW::step() {
    for (auto& p : params_) {
        const auto& g = p.grad();
        if (!elm::all_finite(g.data(), g.size()))
            throw NumericalError("adamw: non-finite gradient, refusing step");
    }
    ++step_;
    const real bc1 = 1 - std::pow(cfg_.beta1, static_cast<real>(step_));
    const real bc2 = 1 - std::pow(cfg_.beta2, static_cast<real>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& val = params_[k].val();
        const auto& g = params_[k].grad();
        auto& m = m_[k];
        auto& v = v_[k];
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(val.size()); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g[i] * g[i];
            const real mhat = m[i] / bc1;
            const real vhat = v[i] / bc2;
            // decoupled decay: applied to the parameter, not the gradient
            val[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * val[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace elm
