#pragma once

#include <cstdint>
#include <vector>

#include "elm/tensor.hpp"

namespace elm {

struct AdamWConfig {
    real lr = 1e-4;
    real beta1 = 0.9;
    real beta2 = 0.95;
    real eps = 1e-8;
    real weight_decay = 0.05;
};

// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    // One update from the parameters' current .grad. Throws NumericalError
    // (leaving parameters and state untouched) if any gradient is non-finite.
    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_; }
    AdamWConfig& config() { return cfg_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<real>> m_, v_;
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
};

}  // namespace elm
