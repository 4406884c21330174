#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "elm/dataset.hpp"
#include "elm/optim.hpp"
#include "elm/tensor.hpp"
#include "elm/vocab.hpp"

namespace elm {

enum class LmMode { ar, mlm };

LmMode lm_mode_from_string(const std::string& s);
std::string to_string(LmMode m);

struct LmConfig {
    int depth = 4;
    int dim = 128;
    int heads = 4;
    VocabSpec vocab{8, 2, 4};
    int seq_len = 64;  // token grid positions L
    int num_classes = 10;
    LmMode mode = LmMode::ar;
    real class_drop_prob = 0.1;  // null-class substitution rate during training
    bool full_width_tables = false;

    int T() const { return seq_len + 1; }  // class token + L grid positions
    void validate() const;

    // Named shapes: "s" 4/128/4 and "m" 8/256/8 train on this box; the
    // larger ladder (l 24/1024/16, xl 36/1280/20, xxl 48/1536/24,
    // 2b 48/1792/28) is constructible but meant for bigger machines.
    static LmConfig preset(const std::string& name);
};

// Cosine mask-ratio schedule: fraction masked at normalized progress r.
real train_mask_ratio(real r);

// Number of positions masked for one training sample: ceil(ratio(r) * L)
// with r drawn uniformly. Always >= 1 for r in [0,1).
int sample_mask_count(int L, Rng& rng);
// n distinct positions drawn uniformly from [0, L).
std::vector<int> sample_mask_positions(int L, int n, Rng& rng);

struct LmBatch {
    int B = 0;
    std::vector<int> classes;           // B entries
    std::vector<std::uint16_t> tokens;  // B * L * g, position-major subcodes
};

// Decoder-only transformer trunk shared by the AR and MLM objectives:
// pre-norm blocks, RMS normalization, GELU MLP with 4x expansion, learned
// absolute positions, decomposed token embedding and per-subcode heads.
class LmModel {
public:
    LmModel() = default;
    LmModel(const LmConfig& cfg, std::uint64_t init_seed);

    const LmConfig& config() const { return cfg_; }
    std::vector<Tensor> parameters();
    std::int64_t param_count() const;

    // Runs the trunk over B sequences of T rows each (class token first).
    // mask (B*L, 0/1) substitutes the learned mask embedding; required iff
    // mode is mlm. Returns g logit tensors [B*T, 2^b]. capture, when given,
    // is resized to depth and receives post-softmax attention per layer.
    std::vector<Tensor> forward_rows(const std::vector<int>& classes,
                                     const std::vector<std::uint16_t>& tokens,
                                     const std::vector<real>* mask,
                                     std::vector<AttnCapture>* capture = nullptr) const;

    // Single-sequence helpers (no gradients). Logits at row p predict the
    // token at grid position p (AR), or position p-1's own token (MLM rows
    // 1..L). AR row L exists but has no training target.
    std::vector<Tensor> ar_forward(const TokenSample& sample, int class_id,
                                   std::vector<AttnCapture>* capture = nullptr) const;
    std::vector<Tensor> mlm_forward(const TokenSample& sample, const std::vector<bool>& mask,
                                    int class_id,
                                    std::vector<AttnCapture>* capture = nullptr) const;

    // Teacher-forced loss graph for one batch; rng drives class drop and,
    // for MLM, the per-sample mask draw.
    Tensor loss_graph(const LmBatch& batch, Rng& rng) const;

    void save(const std::string& path, std::int64_t step, const Rng& trainer_rng) const;
    static struct LmLoaded load(const std::string& path);

    // Exposed for probes and tests.
    Tensor& pos_embedding() { return pos_emb_; }
    const MultiHead& heads() const { return heads_; }

private:
    LmConfig cfg_;
    DecomposedEmbedding embed_;
    MultiHead heads_;
    Tensor class_emb_;  // [num_classes+1, dim]; last row is the null class
    Tensor pos_emb_;    // [T, dim]
    Tensor mask_emb_;   // [1, dim], mlm only
    struct Layer {
        Tensor ln1_gain, wq, wk, wv, wo;
        Tensor ln2_gain, w1, w2;
    };
    std::vector<Layer> layers_;
    Tensor lnf_gain_;

    Tensor trunk(const Tensor& input_rows, int T, std::vector<AttnCapture>* capture) const;
    friend class ArDecoder;
};

struct LmLoaded {
    LmModel model;
    std::int64_t step = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

struct LmTrainOptions {
    int steps = 2000;
    int batch = 16;
    real lr = 1e-4;
    real weight_decay = 0.05;
    std::uint64_t seed = 1;
    int log_every = 25;
};

struct LmLogRow {
    int step;
    real loss;
    real lr;
    double wall_ms;
};

struct LmTrainResult {
    std::vector<LmLogRow> log;
    bool diverged = false;
    real final_loss = 0;  // mean loss over the last 50 logged steps
};

// One optimizer step on a sampled batch; throws NumericalError on NaN loss.
real lm_train_step(LmModel& model, AdamW& opt, const LmBatch& batch, Rng& rng);

// Samples batches from the dataset and trains for opts.steps.
LmTrainResult train_lm(LmModel& model, const TokenDataset& data, const LmTrainOptions& opts);

// Draws a batch (with replacement) from the dataset.
LmBatch sample_batch(const TokenDataset& data, int B, Rng& rng);

}  // namespace elm
