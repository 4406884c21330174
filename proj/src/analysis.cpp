#include "elm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace elm {

// -------------------- n-grams --------------------

NgramDistribution ngram_counts(const TokenDataset& ds, int order) {
    if (ds.samples.empty()) throw ConfigError("ngram statistics need a nonempty dataset");
    if (order != 1 && order != 2) throw ConfigError("ngram order must be 1 or 2");
    const double K = std::pow(2.0, ds.vocab.D);
    NgramDistribution dist;
    dist.order = order;
    dist.support_size = std::pow(K, order);
    const int L = ds.L();
    for (const auto& s : ds.samples) {
        if (order == 1) {
            for (int p = 0; p < L; ++p) ++dist.counts[ds.code_at(s, p)];
        } else {
            for (int p = 0; p + 1 < L; ++p) {
                const std::uint64_t key =
                    static_cast<std::uint64_t>(ds.code_at(s, p)) * static_cast<std::uint64_t>(K) +
                    ds.code_at(s, p + 1);
                ++dist.counts[key];
            }
        }
    }
    for (const auto& [k, c] : dist.counts) dist.total += c;
    return dist;
}

double ngram_kl(const NgramDistribution& dist) {
    if (dist.total == 0) throw ConfigError("ngram distribution is empty");
    double kl = 0;
    for (const auto& [k, c] : dist.counts) {
        const double p = static_cast<double>(c) / static_cast<double>(dist.total);
        kl += p * std::log(p * dist.support_size);
    }
    return kl;
}

double ngram_kl(const TokenDataset& ds, int order) { return ngram_kl(ngram_counts(ds, order)); }

// -------------------- attention --------------------

AttentionSummary attention_average(const LmModel& model, const TokenDataset& ds, int n_samples,
                                   int head_index) {
    if (ds.samples.empty() || n_samples < 1)
        throw ConfigError("attention averaging needs a nonempty sample set");
    if (head_index < 0 || head_index >= model.config().heads)
        throw ConfigError("head index out of range");
    const int n = std::min<int>(n_samples, static_cast<int>(ds.samples.size()));
    const int T = model.config().T();
    AttentionSummary out;
    out.layers = model.config().depth;
    out.T = T;
    out.head = head_index;
    out.mean_scores.assign(static_cast<std::size_t>(out.layers),
                           std::vector<real>(static_cast<std::size_t>(T) * T, 0));
    const bool mlm = model.config().mode == LmMode::mlm;
    for (int i = 0; i < n; ++i) {
        const auto& s = ds.samples[static_cast<std::size_t>(i)];
        std::vector<AttnCapture> captures;
        if (mlm) {
            std::vector<bool> mask(static_cast<std::size_t>(ds.L()), false);
            mask[0] = true;  // capture needs a valid mlm forward; mask one position
            model.mlm_forward(s, mask, s.class_id, &captures);
        } else {
            model.ar_forward(s, s.class_id, &captures);
        }
        for (int l = 0; l < out.layers; ++l) {
            const auto& score =
                captures[static_cast<std::size_t>(l)].scores[static_cast<std::size_t>(head_index)];
            auto& acc = out.mean_scores[static_cast<std::size_t>(l)];
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += score[j];
        }
    }
    for (auto& layer : out.mean_scores)
        for (auto& v : layer) v /= static_cast<real>(n);
    return out;
}

std::vector<double> locality_index(const AttentionSummary& summary) {
    std::vector<double> out(static_cast<std::size_t>(summary.layers), 0.0);
    const int T = summary.T;
    for (int l = 0; l < summary.layers; ++l) {
        const auto& m = summary.mean_scores[static_cast<std::size_t>(l)];
        double acc = 0;
        for (int i = 0; i < T; ++i) {
            double row = 0;
            for (int j = 0; j < T; ++j)
                row += static_cast<double>(m[static_cast<std::size_t>(i) * T + j]) * std::abs(i - j);
            acc += row;
        }
        out[static_cast<std::size_t>(l)] = acc / T;
    }
    return out;
}

void save_attention_summary(const std::string& path, const AttentionSummary& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f << "layers " << s.layers << " head " << s.head << " T " << s.T << "\n";
    for (const auto& layer : s.mean_scores) {
        std::vector<float> row(layer.size());
        for (std::size_t i = 0; i < layer.size(); ++i) row[i] = static_cast<float>(layer[i]);
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw DataError("short write to " + path);
}

// -------------------- symmetric eigensolver --------------------

void symmetric_eigen(const std::vector<double>& m, int n, std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors) {
    // cyclic Jacobi rotations; plenty for the small covariance matrices here
    std::vector<double> a(m);
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    auto vt = [&](int i, int j) -> double& { return v[static_cast<std::size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-30) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = vt(k, p), vkq = vt(k, q);
                    vt(k, p) = c * vkp - s * vkq;
                    vt(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigenvalues.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) eigenvalues[static_cast<std::size_t>(i)] = at(i, i);
    eigenvectors = v;
}

// -------------------- Frechet proxy --------------------

namespace {

void mean_cov(const std::vector<std::vector<real>>& x, std::vector<double>& mu,
              std::vector<double>& cov) {
    const int n = static_cast<int>(x.size());
    const int d = static_cast<int>(x[0].size());
    mu.assign(static_cast<std::size_t>(d), 0.0);
    for (const auto& row : x)
        for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += static_cast<double>(row[static_cast<std::size_t>(j)]);
    for (auto& v : mu) v /= n;
    cov.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (const auto& row : x)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                cov[static_cast<std::size_t>(i) * d + j] +=
                    (static_cast<double>(row[static_cast<std::size_t>(i)]) - mu[static_cast<std::size_t>(i)]) *
                    (static_cast<double>(row[static_cast<std::size_t>(j)]) - mu[static_cast<std::size_t>(j)]);
    const double denom = n > 1 ? n - 1 : 1;
    for (auto& v : cov) v /= denom;
    for (int i = 0; i < d; ++i) cov[static_cast<std::size_t>(i) * d + i] += 1e-6;  // regularize
}

// B = A^{1/2} for symmetric PSD A (negative eigenvalues clamped to zero).
std::vector<double> sym_sqrt(const std::vector<double>& a, int n) {
    std::vector<double> evals, evecs;
    symmetric_eigen(a, n, evals, evecs);
    std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double lam = std::sqrt(std::max(0.0, evals[static_cast<std::size_t>(k)]));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out[static_cast<std::size_t>(i) * n + j] +=
                    lam * evecs[static_cast<std::size_t>(i) * n + k] *
                    evecs[static_cast<std::size_t>(j) * n + k];
    }
    return out;
}

std::vector<double> matmul_d(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> c(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double av = a[static_cast<std::size_t>(i) * n + k];
            for (int j = 0; j < n; ++j)
                c[static_cast<std::size_t>(i) * n + j] += av * b[static_cast<std::size_t>(k) * n + j];
        }
    return c;
}

}  // namespace

double frechet_from_features(const std::vector<std::vector<real>>& a,
                             const std::vector<std::vector<real>>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ConfigError("frechet distance needs at least 2 samples per side");
    const int d = static_cast<int>(a[0].size());
    std::vector<double> mu1, mu2, c1, c2;
    mean_cov(a, mu1, c1);
    mean_cov(b, mu2, c2);
    double dist = 0;
    for (int j = 0; j < d; ++j) {
        const double t = mu1[static_cast<std::size_t>(j)] - mu2[static_cast<std::size_t>(j)];
        dist += t * t;
    }
    // tr(c1 + c2 - 2 (c1^{1/2} c2 c1^{1/2})^{1/2})
    const auto s1 = sym_sqrt(c1, d);
    auto inner = matmul_d(matmul_d(s1, c2, d), s1, d);
    // symmetrize against round-off before the second square root
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double m = 0.5 * (inner[static_cast<std::size_t>(i) * d + j] +
                                    inner[static_cast<std::size_t>(j) * d + i]);
            inner[static_cast<std::size_t>(i) * d + j] = m;
            inner[static_cast<std::size_t>(j) * d + i] = m;
        }
    std::vector<double> evals, evecs;
    symmetric_eigen(inner, d, evals, evecs);
    double tr_sqrt = 0;
    for (double lam : evals) tr_sqrt += std::sqrt(std::max(0.0, lam));
    for (int i = 0; i < d; ++i)
        dist += c1[static_cast<std::size_t>(i) * d + i] + c2[static_cast<std::size_t>(i) * d + i];
    dist -= 2 * tr_sqrt;
    return dist;
}

double latent_frechet_images(const std::vector<Image>& real_images,
                             const std::vector<Image>& generated_images,
                             const ImageTokenizer& tokenizer) {
    if (real_images.size() < 2 || generated_images.size() < 2)
        throw ConfigError("latent frechet needs at least 2 images per side");
    auto features = [&](const std::vector<Image>& set) {
        std::vector<std::vector<real>> f(set.size());
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(set.size()); ++i)
            f[static_cast<std::size_t>(i)] =
                tokenizer.encode_pooled(set[static_cast<std::size_t>(i)]);
        return f;
    };
    return frechet_from_features(features(real_images), features(generated_images));
}

double latent_frechet(const std::vector<ImageSample>& real_images,
                      const std::vector<ImageSample>& generated_images,
                      const ImageTokenizer& tokenizer) {
    std::vector<Image> a(real_images.size()), b(generated_images.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = real_images[i].image;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = generated_images[i].image;
    return latent_frechet_images(a, b, tokenizer);
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f << "metric,scope,value\n";
    for (const auto& r : rows) {
        char buf[64];
        snprintf(buf, sizeof buf, "%.10g", r.value);
        f << r.metric << "," << r.scope << "," << buf << "\n";
    }
    if (!f) throw DataError("short write to " + path);
}

}  // namespace elm
