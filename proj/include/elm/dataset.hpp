#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/vocab.hpp"

namespace elm {

enum class QuantizerMode : std::uint8_t { sign = 0, bernoulli = 1, vq = 2 };

QuantizerMode quantizer_mode_from_string(const std::string& s);
std::string to_string(QuantizerMode m);

struct TokenSample {
    int class_id = 0;
    // position-major: g consecutive subcode indices per raster position
    std::vector<std::uint16_t> codes;
};

// Tokenized corpus / generated grids. On disk this is the "ELMT" format.
struct TokenDataset {
    int h = 0, w = 0;
    VocabSpec vocab;
    QuantizerMode mode = QuantizerMode::sign;
    std::uint64_t seed = 0;
    int num_classes = 0;
    std::vector<TokenSample> samples;

    int L() const { return h * w; }

    // Re-expresses every sample under another g-b split of the same D.
    TokenDataset regroup(const VocabSpec& target) const;

    // Full D-bit code at a raster position of a sample.
    std::uint32_t code_at(const TokenSample& s, int pos) const;
};

void save_dataset(const std::string& path, const TokenDataset& ds);
TokenDataset load_dataset(const std::string& path);

// Uniform-random token sequences with uniform-random labels: the
// no-structure control corpus (every subcode index i.i.d. uniform).
TokenDataset make_noise_dataset(int h, int w, const VocabSpec& vocab, int count, int num_classes,
                                std::uint64_t seed);

}  // namespace elm
