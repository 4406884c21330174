#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/infer.hpp"
#include "elm/lm.hpp"
#include "elm/tokenizer.hpp"

namespace elm {

enum class CfgKind { constant, linear, cos, log, square, r_square };

CfgKind cfg_kind_from_string(const std::string& s);
std::string to_string(CfgKind k);

// Guidance scale schedule over decoding steps. All non-constant kinds start
// at s_min and end at s_max, nondecreasing in between.
struct CfgSchedule {
    CfgKind kind = CfgKind::linear;
    real s_min = 1;
    real s_max = 3;
    int steps = 1;

    CfgSchedule() = default;
    CfgSchedule(CfgKind k, real lo, real hi, int n) : kind(k), s_min(lo), s_max(hi), steps(n) {}
    CfgSchedule with_steps(int n) const { return CfgSchedule(kind, s_min, s_max, n); }
};

std::vector<real> cfg_scale_sequence(const CfgSchedule& sched);

// Guided logits: uncond + s * (cond - uncond), elementwise.
void cfg_combine(const real* cond, const real* uncond, real s, real* out, int n);

// Keeps the k largest entries (ties at the boundary value resolved toward
// lower indices); everything else is driven to -1e30.
void top_k_filter(real* logits, int n, int k);

// Softmax draw after temperature and top-k; returns the sampled index and,
// optionally, the log-probability it was drawn with.
int sample_categorical(const real* logits, int n, real temperature, int top_k, Rng& rng,
                       real* logp = nullptr);

struct SamplerConfig {
    CfgSchedule cfg{CfgKind::linear, 1, 3, 1};  // steps are set per decode
    int top_k = 0;          // per subhead; 0 means the full sub-vocabulary
    real temperature = 1;
    real tau = 4;           // MLM confidence noise coefficient
    bool anneal_tau = true; // scale tau by (1 - t/T) across iterations
    int iterations = 8;     // MLM decode iterations T
    int grid_h = 8, grid_w = 8;
    std::uint64_t seed = 7;
};

struct TokenGrid {
    int h = 0, w = 0;
    VocabSpec vocab;
    std::vector<std::uint16_t> codes;  // h*w*g, position-major

    int L() const { return h * w; }
};

// L sequential steps with two decoder passes per step (class and null
// class); the guidance schedule is indexed over those L steps.
TokenGrid ar_generate(const LmModel& model, int class_id, const SamplerConfig& cfg);

// MaskGIT-style iterative decode: sample every masked position, keep the
// most confident so that ceil(ratio(t/T)*L) stay masked, re-mask the rest.
// Confidence is the mean subhead log-probability plus annealed Gumbel noise.
// masked_trajectory, when given, records the masked count after each
// iteration.
TokenGrid mlm_generate(const LmModel& model, int class_id, const SamplerConfig& cfg,
                       std::vector<int>* masked_trajectory = nullptr);

// Raster generation past the trained grid using a sliding window of the
// most recent L tokens, positions reassigned window-relative.
TokenGrid extend_generate(const LmModel& model, int class_id, int target_h, int target_w,
                          const SamplerConfig& cfg);

// Batch helpers; sample i uses the stream derived from (seed, i), so results
// do not depend on batch size.
std::vector<TokenGrid> generate_batch(const LmModel& model, const std::vector<int>& classes,
                                      const SamplerConfig& cfg);

// Recompose subcodes into bit codes and run the tokenizer decoder.
Image tokens_to_image(const TokenGrid& grid, const ImageTokenizer& tokenizer);

// ELMT wrappers for single grids.
void save_grid(const std::string& path, const TokenGrid& grid, int class_id,
               std::uint64_t seed, int num_classes);
TokenGrid load_grid(const std::string& path);

}  // namespace elm
