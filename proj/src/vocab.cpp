#include "elm/vocab.hpp"

#include <cmath>

namespace elm {

VocabSpec VocabSpec::parse(const std::string& name, int D) {
    const auto dash = name.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 >= name.size())
        throw ConfigError("vocab name must look like \"g-b\", got \"" + name + "\"");
    int g = 0, b = 0;
    try {
        g = std::stoi(name.substr(0, dash));
        b = std::stoi(name.substr(dash + 1));
    } catch (const std::exception&) {
        throw ConfigError("vocab name must look like \"g-b\", got \"" + name + "\"");
    }
    if (g * b != D)
        throw ConfigError("vocab \"" + name + "\" does not cover " + std::to_string(D) +
                          " code bits (" + std::to_string(g) + "*" + std::to_string(b) +
                          " != " + std::to_string(D) + ")");
    return VocabSpec(D, g, b);
}

std::vector<std::uint16_t> decompose(const std::vector<std::uint8_t>& bits,
                                     const VocabSpec& spec) {
    spec.validate();
    if (static_cast<int>(bits.size()) != spec.D)
        throw ShapeError("decompose expects " + std::to_string(spec.D) + " bits, got " +
                         std::to_string(bits.size()));
    std::vector<std::uint16_t> out(spec.g);
    for (int s = 0; s < spec.g; ++s) {
        std::uint16_t v = 0;
        for (int j = 0; j < spec.b; ++j) {
            const std::uint8_t bit = bits[static_cast<std::size_t>(s) * spec.b + j];
            v = static_cast<std::uint16_t>((v << 1) | (bit ? 1 : 0));
        }
        out[s] = v;
    }
    return out;
}

std::vector<std::uint8_t> recompose(const std::vector<std::uint16_t>& indices,
                                    const VocabSpec& spec) {
    spec.validate();
    if (static_cast<int>(indices.size()) != spec.g)
        throw ShapeError("recompose expects " + std::to_string(spec.g) + " indices, got " +
                         std::to_string(indices.size()));
    std::vector<std::uint8_t> bits(spec.D);
    for (int s = 0; s < spec.g; ++s) {
        const std::uint16_t v = indices[s];
        if (v >= (1u << spec.b))
            throw ConfigError("subcode index " + std::to_string(v) + " out of [0," +
                              std::to_string(1 << spec.b) + ")");
        for (int j = 0; j < spec.b; ++j)
            bits[static_cast<std::size_t>(s) * spec.b + j] =
                static_cast<std::uint8_t>((v >> (spec.b - 1 - j)) & 1);
    }
    return bits;
}

std::vector<std::uint16_t> decompose_code(std::uint32_t code, const VocabSpec& spec) {
    std::vector<std::uint8_t> bits(spec.D);
    for (int i = 0; i < spec.D; ++i)
        bits[i] = static_cast<std::uint8_t>((code >> (spec.D - 1 - i)) & 1);
    return decompose(bits, spec);
}

std::uint32_t recompose_code(const std::vector<std::uint16_t>& indices, const VocabSpec& spec) {
    const auto bits = recompose(indices, spec);
    std::uint32_t code = 0;
    for (int i = 0; i < spec.D; ++i) code = (code << 1) | bits[i];
    return code;
}

// -------------------- DecomposedEmbedding --------------------

DecomposedEmbedding::DecomposedEmbedding(const VocabSpec& spec, int dim, bool full_width, Rng& rng)
    : spec_(spec), dim_(dim), full_width_(full_width) {
    spec_.validate();
    if (dim % spec.g != 0)
        throw ConfigError("feature dim " + std::to_string(dim) + " not divisible by g=" +
                          std::to_string(spec.g));
    const int table_width = full_width ? dim : dim / spec.g;
    const real std_table = static_cast<real>(0.02);
    tables_.reserve(spec.g);
    for (int s = 0; s < spec.g; ++s)
        tables_.push_back(Tensor::randn({spec.sub_vocab(), table_width}, rng, std_table, true));
    const int concat = spec.g * table_width;
    projection_ = Tensor::randn({concat, dim}, rng,
                                static_cast<real>(1.0 / std::sqrt(static_cast<double>(concat))),
                                true);
}

Tensor DecomposedEmbedding::forward(const std::vector<std::uint16_t>& indices) const {
    if (indices.size() % static_cast<std::size_t>(spec_.g) != 0)
        throw ShapeError("index stream length not a multiple of g");
    const std::size_t positions = indices.size() / spec_.g;
    std::vector<std::vector<int>> per_head(spec_.g);
    for (int s = 0; s < spec_.g; ++s) per_head[s].resize(positions);
    for (std::size_t p = 0; p < positions; ++p)
        for (int s = 0; s < spec_.g; ++s)
            per_head[s][p] = indices[p * spec_.g + s];
    Tensor cat = gather_rows(tables_[0], per_head[0]);
    for (int s = 1; s < spec_.g; ++s)
        cat = concat_cols(cat, gather_rows(tables_[s], per_head[s]));
    return matmul(cat, projection_);
}

std::vector<Tensor> DecomposedEmbedding::parameters() {
    std::vector<Tensor> ps(tables_.begin(), tables_.end());
    ps.push_back(projection_);
    return ps;
}

std::int64_t DecomposedEmbedding::param_count() const {
    std::int64_t n = 0;
    for (const auto& t : tables_) n += static_cast<std::int64_t>(t.numel());
    n += static_cast<std::int64_t>(projection_.numel());
    return n;
}

// -------------------- MultiHead --------------------

MultiHead::MultiHead(const VocabSpec& spec, int dim) : spec_(spec), dim_(dim) {
    spec_.validate();
    for (int s = 0; s < spec.g; ++s) {
        weights_.push_back(Tensor::zeros({dim, spec.sub_vocab()}, true));
        biases_.push_back(Tensor::zeros({spec.sub_vocab()}, true));
    }
}

std::vector<Tensor> MultiHead::forward(const Tensor& features) const {
    if (features.cols() != dim_)
        throw ShapeError("head features have width " + std::to_string(features.cols()) +
                         ", expected " + std::to_string(dim_));
    std::vector<Tensor> out;
    out.reserve(weights_.size());
    for (std::size_t s = 0; s < weights_.size(); ++s)
        out.push_back(add_bias(matmul(features, weights_[s]), biases_[s]));
    return out;
}

std::vector<Tensor> MultiHead::parameters() {
    std::vector<Tensor> ps;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
        ps.push_back(weights_[s]);
        ps.push_back(biases_[s]);
    }
    return ps;
}

std::int64_t MultiHead::param_count() const {
    std::int64_t n = 0;
    for (const auto& w : weights_) n += static_cast<std::int64_t>(w.numel());
    for (const auto& b : biases_) n += static_cast<std::int64_t>(b.numel());
    return n;
}

// -------------------- losses --------------------

Tensor multi_head_loss(const std::vector<Tensor>& logit_groups,
                       const std::vector<std::vector<int>>& targets) {
    if (logit_groups.empty()) throw ConfigError("multi_head_loss needs at least one head");
    return multi_head_loss_weighted(
        logit_groups, targets,
        std::vector<real>(static_cast<std::size_t>(logit_groups[0].rows()), 1));
}

Tensor multi_head_loss_weighted(const std::vector<Tensor>& logit_groups,
                                const std::vector<std::vector<int>>& targets,
                                const std::vector<real>& row_weights) {
    if (logit_groups.size() != targets.size())
        throw ShapeError("multi_head_loss: " + std::to_string(logit_groups.size()) +
                         " heads vs " + std::to_string(targets.size()) + " target streams");
    // Sum (not mean) over subheads keeps the g=1 reduction exact.
    Tensor total = cross_entropy_weighted(logit_groups[0], targets[0], row_weights);
    for (std::size_t s = 1; s < logit_groups.size(); ++s)
        total = add(total, cross_entropy_weighted(logit_groups[s], targets[s], row_weights));
    return total;
}

}  // namespace elm
