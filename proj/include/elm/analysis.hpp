#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "elm/dataset.hpp"
#include "elm/image.hpp"
#include "elm/lm.hpp"
#include "elm/tokenizer.hpp"

namespace elm {

// Empirical n-gram statistics over full D-bit codes. Bigrams pair raster-
// adjacent positions within a sequence only.
struct NgramDistribution {
    int order = 1;
    std::map<std::uint64_t, std::int64_t> counts;  // tuple key: t0*K + t1 for bigrams
    std::int64_t total = 0;
    double support_size = 0;  // K^order
};

NgramDistribution ngram_counts(const TokenDataset& ds, int order);

// KL(empirical || uniform) in nats: sum over observed tuples of p*ln(p*K^order).
double ngram_kl(const TokenDataset& ds, int order);
double ngram_kl(const NgramDistribution& dist);

// Per-layer mean post-softmax attention for one head over a sample set.
struct AttentionSummary {
    int layers = 0, T = 0, head = 0;
    std::vector<std::vector<real>> mean_scores;  // per layer, T*T row-major
};

AttentionSummary attention_average(const LmModel& model, const TokenDataset& ds, int n_samples,
                                   int head_index);

// Mean attention-weighted |query - key| distance per layer; 0 means each
// position attends only to itself.
std::vector<double> locality_index(const AttentionSummary& summary);

void save_attention_summary(const std::string& path, const AttentionSummary& s);

// Frechet distance between Gaussian fits: |mu1-mu2|^2 + tr(S1+S2-2(S1 S2)^{1/2}).
// Features are rows; covariance gets a 1e-6 diagonal floor.
double frechet_from_features(const std::vector<std::vector<real>>& a,
                             const std::vector<std::vector<real>>& b);

// Pooled pre-quantization encoder latents as the feature space.
double latent_frechet(const std::vector<ImageSample>& real_images,
                      const std::vector<ImageSample>& generated_images,
                      const ImageTokenizer& tokenizer);
double latent_frechet_images(const std::vector<Image>& real_images,
                             const std::vector<Image>& generated_images,
                             const ImageTokenizer& tokenizer);

// Symmetric eigendecomposition (cyclic Jacobi); used by the Frechet proxy
// and exposed for its tests.
void symmetric_eigen(const std::vector<double>& m, int n, std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors);

// metric/scope/value report rows, written as CSV by the CLI.
struct ReportRow {
    std::string metric;
    std::string scope;
    double value;
};

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

}  // namespace elm
