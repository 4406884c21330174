#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/errors.hpp"
#include "elm/rng.hpp"
#include "elm/tensor.hpp"

namespace elm {

// Code decomposition: a D-bit token code split into g contiguous b-bit
// subcodes, each indexing its own sub-vocabulary of size 2^b. Named "g-b"
// ("2-4", "1-16", ...) in configs and checkpoints.
struct VocabSpec {
    int D = 8;  // code bits
    int g = 1;  // subcode count
    int b = 8;  // bits per subcode

    VocabSpec() = default;
    VocabSpec(int D_, int g_, int b_) : D(D_), g(g_), b(b_) { validate(); }

    void validate() const {
        if (g < 1 || b < 1 || D != g * b)
            throw ConfigError("vocab spec needs D = g*b, got D=" + std::to_string(D) + " g=" +
                              std::to_string(g) + " b=" + std::to_string(b));
        if (b > 16) throw ConfigError("subcode width " + std::to_string(b) + " exceeds u16 indices");
    }

    int sub_vocab() const { return 1 << b; }
    std::string name() const { return std::to_string(g) + "-" + std::to_string(b); }

    // Parses "g-b" against a known code width D.
    static VocabSpec parse(const std::string& name, int D);
};

// bits -> g subcode indices; chunks are contiguous, read MSB-first.
std::vector<std::uint16_t> decompose(const std::vector<std::uint8_t>& bits, const VocabSpec& spec);
// exact inverse of decompose
std::vector<std::uint8_t> recompose(const std::vector<std::uint16_t>& indices,
                                    const VocabSpec& spec);

// Convenience on packed integer codes (bit D-1 of the code = first bit).
std::vector<std::uint16_t> decompose_code(std::uint32_t code, const VocabSpec& spec);
std::uint32_t recompose_code(const std::vector<std::uint16_t>& indices, const VocabSpec& spec);

// Per-subcode embedding tables plus a projection restoring the model width.
// Table rows are dim/g wide by default; full_width makes them dim wide with a
// g*dim -> dim projection instead.
class DecomposedEmbedding {
public:
    DecomposedEmbedding() = default;
    DecomposedEmbedding(const VocabSpec& spec, int dim, bool full_width, Rng& rng);

    // indices: flat position-major stream, g consecutive entries per position.
    // Returns [positions, dim].
    Tensor forward(const std::vector<std::uint16_t>& indices) const;

    std::vector<Tensor> parameters();
    std::int64_t param_count() const;
    const VocabSpec& spec() const { return spec_; }
    int table_width() const { return full_width_ ? dim_ : dim_ / spec_.g; }
    const Tensor& table(int s) const { return tables_[static_cast<std::size_t>(s)]; }
    const Tensor& projection() const { return projection_; }

private:
    VocabSpec spec_;
    int dim_ = 0;
    bool full_width_ = false;
    std::vector<Tensor> tables_;  // g tables, [2^b, table_width]
    Tensor projection_;           // [g*table_width, dim]
};

// One linear prediction head per subcode, logits width 2^b each.
// Weights and biases start at zero so an untrained model emits uniform
// distributions per subhead.
class MultiHead {
public:
    MultiHead() = default;
    MultiHead(const VocabSpec& spec, int dim);

    // features [n, dim] -> g logit tensors [n, 2^b]
    std::vector<Tensor> forward(const Tensor& features) const;

    std::vector<Tensor> parameters();
    std::int64_t param_count() const;
    const Tensor& weight(int s) const { return weights_[static_cast<std::size_t>(s)]; }
    const Tensor& bias(int s) const { return biases_[static_cast<std::size_t>(s)]; }

private:
    VocabSpec spec_;
    int dim_ = 0;
    std::vector<Tensor> weights_;  // g x [dim, 2^b]
    std::vector<Tensor> biases_;   // g x [2^b]
};

// Sum over subheads of the mean cross-entropy, optionally row-weighted.
// targets: per head, one index stream aligned with the logits' rows.
Tensor multi_head_loss(const std::vector<Tensor>& logit_groups,
                       const std::vector<std::vector<int>>& targets);
Tensor multi_head_loss_weighted(const std::vector<Tensor>& logit_groups,
                                const std::vector<std::vector<int>>& targets,
                                const std::vector<real>& row_weights);

}  // namespace elm
