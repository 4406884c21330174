#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/dataset.hpp"
#include "elm/image.hpp"
#include "elm/optim.hpp"
#include "elm/tensor.hpp"
#include "elm/vocab.hpp"

namespace elm {

enum class TokenizerKind { bae, vq };

TokenizerKind tokenizer_kind_from_string(const std::string& s);
std::string to_string(TokenizerKind k);

struct TokenizerConfig {
    TokenizerKind kind = TokenizerKind::bae;
    int f = 4;       // downsample factor = patch side
    int D = 8;       // latent dim = code bits; vq codebook size K = 2^D
    int C = 1;       // image channels
    int hidden = 64; // residual block width
    real beta = 0.25;  // vq commitment weight

    int K() const { return 1 << D; }
    void validate() const;
};

// h x w x D real grid, D innermost. BAE latents are sigmoid-normalized into
// (0,1); VQ latents are raw.
struct LatentGrid {
    int h = 0, w = 0, D = 0;
    std::vector<real> values;
    real at(int r, int c, int d) const {
        return values[(static_cast<std::size_t>(r) * w + c) * D + d];
    }
};

struct BitGrid {
    int h = 0, w = 0, D = 0;
    std::vector<std::uint8_t> bits;  // exactly 0 or 1
    std::uint8_t at(int r, int c, int d) const {
        return bits[(static_cast<std::size_t>(r) * w + c) * D + d];
    }
};

// Elementwise threshold at 0.5; the boundary value 0.5 maps to 1.
BitGrid quantize_sign(const LatentGrid& z);
// Each bit independently 1 with probability equal to the latent value.
BitGrid quantize_bernoulli(const LatentGrid& z, Rng& rng);

struct VqCodebook {
    int K = 0, D = 0;
    std::vector<real> codes;          // K x D
    std::vector<std::int64_t> usage;  // increments on every lookup
};

// Nearest code per position by Euclidean distance, ties to the lowest index.
// Returns per-position indices and fills quantized with the selected codes.
std::vector<int> vq_lookup(const LatentGrid& z, VqCodebook& cb, LatentGrid* quantized = nullptr);

// Patch autoencoder: f*f patches through a linear projection and two
// residual MLP blocks per side, mirrored. BAE squashes the code through a
// sigmoid and quantizes per dimension; VQ keeps raw codes and looks up a
// learned codebook.
class ImageTokenizer {
public:
    ImageTokenizer() = default;
    ImageTokenizer(const TokenizerConfig& cfg, std::uint64_t init_seed);

    const TokenizerConfig& config() const { return cfg_; }

    LatentGrid encode(const Image& img) const;
    Image decode(const BitGrid& bits) const;
    // VQ path: decode codebook entries selected by full-code indices.
    Image decode_vq(const std::vector<int>& indices, int h, int w) const;

    // Mean over grid positions of the pre-quantization latent, for the
    // latent-distribution metrics. Length D.
    std::vector<real> encode_pooled(const Image& img) const;

    // Differentiable pieces used by the trainer.
    Tensor encode_rows(const Tensor& patches) const;  // [P, f*f*C] -> [P, D]
    Tensor decode_rows(const Tensor& codes) const;    // [P, D] -> [P, f*f*C]

    Tensor patchify(const Image& img) const;  // [h*w, f*f*C] raster order
    Image unpatchify(const std::vector<real>& rows, int h, int w) const;

    std::vector<Tensor> parameters();
    VqCodebook& codebook() { return cb_; }
    const VqCodebook& codebook() const { return cb_; }
    // Pushes the trained codebook tensor into cb_ (after training steps).
    void sync_codebook();

    void save(const std::string& path) const;
    static ImageTokenizer load(const std::string& path);

private:
    TokenizerConfig cfg_;
    // declaration order = checkpoint order
    Tensor enc_in_w_, enc_in_b_;
    Tensor enc_b1_w1_, enc_b1_b1_, enc_b1_w2_, enc_b1_b2_;
    Tensor enc_b2_w1_, enc_b2_b1_, enc_b2_w2_, enc_b2_b2_;
    Tensor enc_out_w_, enc_out_b_;
    Tensor dec_in_w_, dec_in_b_;
    Tensor dec_b1_w1_, dec_b1_b1_, dec_b1_w2_, dec_b1_b2_;
    Tensor dec_b2_w1_, dec_b2_b1_, dec_b2_w2_, dec_b2_b2_;
    Tensor dec_out_w_, dec_out_b_;
    Tensor codebook_;  // [K, D], vq only
    VqCodebook cb_;

    Tensor res_block(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                     const Tensor& b2) const;
};

struct TokenizerTrainOptions {
    int steps = 3000;
    int batch = 32;  // images per step
    real lr = 1e-3;
    std::uint64_t seed = 1;
    // BAE only: quantizer used inside training (straight-through either way)
    QuantizerMode train_quantizer = QuantizerMode::bernoulli;
    int log_every = 50;
    int snapshot_every = 50;
};

struct TokenizerTrainResult {
    ImageTokenizer tokenizer;
    std::vector<std::pair<int, real>> loss_log;  // (step, loss)
    bool diverged = false;
};

// Minimizes reconstruction MSE (+ codebook and commitment terms for VQ).
// On a non-finite loss the run aborts and the last snapshot is returned with
// diverged=true.
TokenizerTrainResult train_tokenizer(const std::vector<ImageSample>& corpus,
                                     const TokenizerConfig& cfg,
                                     const TokenizerTrainOptions& opts);

// Tokenizes every image (raster order) under the frozen checkpoint.
// Bernoulli mode derives one stream per image from (seed, image index).
TokenDataset tokenize_dataset(const std::vector<ImageSample>& corpus,
                              const ImageTokenizer& tokenizer, QuantizerMode mode,
                              std::uint64_t seed, const VocabSpec& group);

struct UtilizationReport {
    std::vector<std::int64_t> counts;  // per full code
    std::int64_t total = 0;
    int distinct = 0;
    double fraction = 0;                       // distinct / vocabulary size
    std::vector<std::int64_t> sorted_counts;   // descending
};

UtilizationReport code_utilization(const TokenDataset& ds);

}  // namespace elm
