#pragma once

#include <cstdint>
#include <vector>

#include "elm/lm.hpp"

namespace elm {

// Incremental decoder over a frozen AR checkpoint with cached keys/values.
// Per-position arithmetic runs in the same order as the batched forward, so
// the two paths agree to machine precision.
class ArDecoder {
public:
    explicit ArDecoder(const LmModel& model);

    // Clears the cache and feeds the class token at position 0.
    void start(int class_id);
    // Feeds one token (g subcode indices) at the given absolute position
    // (1..T-1). Positions must advance by one per call.
    void feed(const std::uint16_t* subcodes, int pos);

    // Logits predicting the next grid position, one vector per subhead,
    // refreshed after every start/feed.
    const std::vector<std::vector<real>>& logits() const { return logits_; }

    int positions_fed() const { return cur_; }
    const LmModel& model() const { return *model_; }

private:
    void step(std::vector<real> x, int pos);

    const LmModel* model_;
    int dim_ = 0, heads_ = 0, head_dim_ = 0;
    // per layer: cached K and V rows, cur_ * dim
    std::vector<std::vector<real>> kcache_, vcache_;
    int cur_ = 0;
    std::vector<std::vector<real>> logits_;
};

// Full-sequence logits for a window of tokens placed at positions 1..n with
// the class token at 0: one fresh decoder pass, no reuse. Returns the
// logits after the last fed token.
std::vector<std::vector<real>> window_logits(const LmModel& model, int class_id,
                                             const std::uint16_t* subcodes, int n_tokens);

}  // namespace elm
