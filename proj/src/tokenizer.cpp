#include "elm/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "elm/io_util.hpp"

namespace elm {

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

TokenizerKind tokenizer_kind_from_string(const std::string& s) {
    if (s == "bae") return TokenizerKind::bae;
    if (s == "vq") return TokenizerKind::vq;
    throw ConfigError("unknown tokenizer kind \"" + s + "\" (want bae|vq)");
}

std::string to_string(TokenizerKind k) { return k == TokenizerKind::bae ? "bae" : "vq"; }

void TokenizerConfig::validate() const {
    if (f < 1 || D < 1 || D > 16 || hidden < 1) throw ConfigError("bad tokenizer config");
    if (C != 1 && C != 3) throw ConfigError("tokenizer supports C=1 or C=3");
}

// -------------------- quantizers --------------------

BitGrid quantize_sign(const LatentGrid& z) {
    BitGrid out{z.h, z.w, z.D, std::vector<std::uint8_t>(z.values.size())};
    for (std::size_t i = 0; i < z.values.size(); ++i)
        out.bits[i] = z.values[i] < static_cast<real>(0.5) ? 0 : 1;
    return out;
}

BitGrid quantize_bernoulli(const LatentGrid& z, Rng& rng) {
    BitGrid out{z.h, z.w, z.D, std::vector<std::uint8_t>(z.values.size())};
    for (std::size_t i = 0; i < z.values.size(); ++i)
        out.bits[i] = rng.bernoulli(static_cast<double>(z.values[i])) ? 1 : 0;
    return out;
}

std::vector<int> vq_lookup(const LatentGrid& z, VqCodebook& cb, LatentGrid* quantized) {
    if (cb.K < 1) throw ConfigError("vq lookup on an empty codebook");
    if (cb.D != z.D)
        throw ShapeError("vq code dim " + std::to_string(cb.D) + " vs latent dim " +
                         std::to_string(z.D));
    const int P = z.h * z.w;
    std::vector<int> idx(P);
    if (quantized) *quantized = LatentGrid{z.h, z.w, z.D, std::vector<real>(z.values.size())};
    for (int p = 0; p < P; ++p) {
        const real* v = z.values.data() + static_cast<std::size_t>(p) * z.D;
        int best = 0;
        real best_d = 0;
        for (int k = 0; k < cb.K; ++k) {
            const real* code = cb.codes.data() + static_cast<std::size_t>(k) * cb.D;
            real d = 0;
            for (int j = 0; j < cb.D; ++j) {
                const real t = v[j] - code[j];
                d += t * t;
            }
            if (k == 0 || d < best_d) {  // strict < keeps the lowest index on ties
                best = k;
                best_d = d;
            }
        }
        idx[p] = best;
        ++cb.usage[best];
        if (quantized)
            std::copy_n(cb.codes.data() + static_cast<std::size_t>(best) * cb.D, cb.D,
                        quantized->values.data() + static_cast<std::size_t>(p) * cb.D);
    }
    return idx;
}

// -------------------- model --------------------

ImageTokenizer::ImageTokenizer(const TokenizerConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    const int ffc = cfg.f * cfg.f * cfg.C;
    const int h = cfg.hidden;
    auto lin = [&](int in, int out) {
        return Tensor::randn({in, out}, rng,
                             static_cast<real>(1.0 / std::sqrt(static_cast<double>(in))), true);
    };
    enc_in_w_ = lin(ffc, h);
    enc_in_b_ = Tensor::zeros({h}, true);
    enc_b1_w1_ = lin(h, 2 * h);
    enc_b1_b1_ = Tensor::zeros({2 * h}, true);
    enc_b1_w2_ = lin(2 * h, h);
    enc_b1_b2_ = Tensor::zeros({h}, true);
    enc_b2_w1_ = lin(h, 2 * h);
    enc_b2_b1_ = Tensor::zeros({2 * h}, true);
    enc_b2_w2_ = lin(2 * h, h);
    enc_b2_b2_ = Tensor::zeros({h}, true);
    enc_out_w_ = lin(h, cfg.D);
    enc_out_b_ = Tensor::zeros({cfg.D}, true);
    dec_in_w_ = lin(cfg.D, h);
    dec_in_b_ = Tensor::zeros({h}, true);
    dec_b1_w1_ = lin(h, 2 * h);
    dec_b1_b1_ = Tensor::zeros({2 * h}, true);
    dec_b1_w2_ = lin(2 * h, h);
    dec_b1_b2_ = Tensor::zeros({h}, true);
    dec_b2_w1_ = lin(h, 2 * h);
    dec_b2_b1_ = Tensor::zeros({2 * h}, true);
    dec_b2_w2_ = lin(2 * h, h);
    dec_b2_b2_ = Tensor::zeros({h}, true);
    dec_out_w_ = lin(h, ffc);
    dec_out_b_ = Tensor::zeros({ffc}, true);
    if (cfg.kind == TokenizerKind::vq) {
        codebook_ = Tensor::randn({cfg.K(), cfg.D}, rng, static_cast<real>(0.5), true);
        cb_ = VqCodebook{cfg.K(), cfg.D, codebook_.val(),
                         std::vector<std::int64_t>(static_cast<std::size_t>(cfg.K()), 0)};
    }
}

Tensor ImageTokenizer::res_block(const Tensor& x, const Tensor& w1, const Tensor& b1,
                                 const Tensor& w2, const Tensor& b2) const {
    return add(x, add_bias(matmul(gelu(add_bias(matmul(x, w1), b1)), w2), b2));
}

Tensor ImageTokenizer::patchify(const Image& img) const {
    const int f = cfg_.f;
    if (img.H % f != 0 || img.W % f != 0)
        throw ShapeError("image " + std::to_string(img.H) + "x" + std::to_string(img.W) +
                         " not divisible by downsample factor f=" + std::to_string(f));
    if (img.C != cfg_.C)
        throw ShapeError("image has C=" + std::to_string(img.C) + ", tokenizer expects C=" +
                         std::to_string(cfg_.C));
    const int h = img.H / f, w = img.W / f;
    const int ffc = f * f * cfg_.C;
    std::vector<real> rows(static_cast<std::size_t>(h) * w * ffc);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            real* dst = rows.data() + (static_cast<std::size_t>(r) * w + c) * ffc;
            for (int pr = 0; pr < f; ++pr)
                for (int pc = 0; pc < f; ++pc)
                    for (int ch = 0; ch < cfg_.C; ++ch)
                        *dst++ = img.at(r * f + pr, c * f + pc, ch);
        }
    return Tensor::from({h * w, ffc}, std::move(rows));
}

Image ImageTokenizer::unpatchify(const std::vector<real>& rows, int h, int w) const {
    const int f = cfg_.f;
    const int ffc = f * f * cfg_.C;
    Image img(h * f, w * f, cfg_.C);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const real* src = rows.data() + (static_cast<std::size_t>(r) * w + c) * ffc;
            for (int pr = 0; pr < f; ++pr)
                for (int pc = 0; pc < f; ++pc)
                    for (int ch = 0; ch < cfg_.C; ++ch)
                        img.at(r * f + pr, c * f + pc, ch) = *src++;
        }
    return img;
}

Tensor ImageTokenizer::encode_rows(const Tensor& patches) const {
    Tensor x = add_bias(matmul(patches, enc_in_w_), enc_in_b_);
    x = res_block(x, enc_b1_w1_, enc_b1_b1_, enc_b1_w2_, enc_b1_b2_);
    x = res_block(x, enc_b2_w1_, enc_b2_b1_, enc_b2_w2_, enc_b2_b2_);
    Tensor z = add_bias(matmul(x, enc_out_w_), enc_out_b_);
    return cfg_.kind == TokenizerKind::bae ? sigmoid(z) : z;
}

Tensor ImageTokenizer::decode_rows(const Tensor& codes) const {
    Tensor x = add_bias(matmul(codes, dec_in_w_), dec_in_b_);
    x = res_block(x, dec_b1_w1_, dec_b1_b1_, dec_b1_w2_, dec_b1_b2_);
    x = res_block(x, dec_b2_w1_, dec_b2_b1_, dec_b2_w2_, dec_b2_b2_);
    return sigmoid(add_bias(matmul(x, dec_out_w_), dec_out_b_));
}

LatentGrid ImageTokenizer::encode(const Image& img) const {
    NoGradGuard ng;
    const int h = img.H / cfg_.f, w = img.W / cfg_.f;
    Tensor z = encode_rows(patchify(img));
    return LatentGrid{h, w, cfg_.D, z.val()};
}

Image ImageTokenizer::decode(const BitGrid& bits) const {
    if (bits.D != cfg_.D)
        throw ShapeError("bit grid depth " + std::to_string(bits.D) + " vs code dim " +
                         std::to_string(cfg_.D));
    NoGradGuard ng;
    std::vector<real> rows(bits.bits.size());
    for (std::size_t i = 0; i < bits.bits.size(); ++i) rows[i] = static_cast<real>(bits.bits[i]);
    Tensor out = decode_rows(Tensor::from({bits.h * bits.w, cfg_.D}, std::move(rows)));
    return unpatchify(out.val(), bits.h, bits.w);
}

Image ImageTokenizer::decode_vq(const std::vector<int>& indices, int h, int w) const {
    if (cfg_.kind != TokenizerKind::vq) throw ConfigError("decode_vq on a non-vq tokenizer");
    NoGradGuard ng;
    std::vector<real> rows(static_cast<std::size_t>(h) * w * cfg_.D);
    for (std::size_t p = 0; p < indices.size(); ++p) {
        const int k = indices[p];
        if (k < 0 || k >= cb_.K)
            throw ConfigError("vq index " + std::to_string(k) + " out of codebook size " +
                              std::to_string(cb_.K));
        std::copy_n(cb_.codes.data() + static_cast<std::size_t>(k) * cfg_.D, cfg_.D,
                    rows.data() + p * cfg_.D);
    }
    Tensor out = decode_rows(Tensor::from({h * w, cfg_.D}, std::move(rows)));
    return unpatchify(out.val(), h, w);
}

std::vector<real> ImageTokenizer::encode_pooled(const Image& img) const {
    const LatentGrid z = encode(img);
    std::vector<real> pooled(cfg_.D, 0);
    const int P = z.h * z.w;
    for (int p = 0; p < P; ++p)
        for (int d = 0; d < cfg_.D; ++d)
            pooled[d] += z.values[static_cast<std::size_t>(p) * cfg_.D + d];
    for (auto& v : pooled) v /= static_cast<real>(P);
    return pooled;
}

std::vector<Tensor> ImageTokenizer::parameters() {
    std::vector<Tensor> ps = {enc_in_w_,  enc_in_b_,  enc_b1_w1_, enc_b1_b1_, enc_b1_w2_,
                              enc_b1_b2_, enc_b2_w1_, enc_b2_b1_, enc_b2_w2_, enc_b2_b2_,
                              enc_out_w_, enc_out_b_, dec_in_w_,  dec_in_b_,  dec_b1_w1_,
                              dec_b1_b1_, dec_b1_w2_, dec_b1_b2_, dec_b2_w1_, dec_b2_b1_,
                              dec_b2_w2_, dec_b2_b2_, dec_out_w_, dec_out_b_};
    if (cfg_.kind == TokenizerKind::vq) ps.push_back(codebook_);
    return ps;
}

void ImageTokenizer::sync_codebook() {
    if (cfg_.kind != TokenizerKind::vq) return;
    cb_.codes = codebook_.val();
}

// -------------------- checkpoint --------------------

void ImageTokenizer::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    write_magic(f, "ELMC");
    write_u32(f, kCheckpointVersion);
    KvBlock kv;
    kv.set("kind", to_string(cfg_.kind));
    kv.set_int("f", cfg_.f);
    kv.set_int("D", cfg_.D);
    kv.set_int("C", cfg_.C);
    kv.set_int("hidden", cfg_.hidden);
    kv.set_real("beta", static_cast<double>(cfg_.beta));
    kv.write(f);
    auto params = const_cast<ImageTokenizer*>(this)->parameters();
    for (const auto& p : params)
        for (const real v : p.val()) write_f32(f, static_cast<float>(v));
    if (!f) throw DataError("short write to " + path);
}

ImageTokenizer ImageTokenizer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    expect_magic(f, "ELMC", path);
    const std::uint32_t version = read_u32(f, path + " version");
    if (version != kCheckpointVersion)
        throw DataError(path + ": unsupported tokenizer checkpoint version " +
                        std::to_string(version));
    const KvBlock kv = KvBlock::read(f, path);
    TokenizerConfig cfg;
    cfg.kind = tokenizer_kind_from_string(kv.get("kind"));
    cfg.f = static_cast<int>(kv.get_int("f"));
    cfg.D = static_cast<int>(kv.get_int("D"));
    cfg.C = static_cast<int>(kv.get_int("C"));
    cfg.hidden = static_cast<int>(kv.get_int("hidden"));
    cfg.beta = static_cast<real>(kv.get_real("beta"));
    ImageTokenizer tok(cfg, 0);
    auto params = tok.parameters();
    for (auto& p : params)
        for (auto& v : p.val()) v = static_cast<real>(read_f32(f, path + " parameters"));
    tok.sync_codebook();
    return tok;
}

// -------------------- training --------------------

TokenizerTrainResult train_tokenizer(const std::vector<ImageSample>& corpus,
                                     const TokenizerConfig& cfg,
                                     const TokenizerTrainOptions& opts) {
    if (corpus.empty()) throw ConfigError("cannot train a tokenizer on an empty corpus");
    cfg.validate();
    TokenizerTrainResult result{ImageTokenizer(cfg, opts.seed), {}, false};
    ImageTokenizer& tok = result.tokenizer;

    auto params = tok.parameters();
    AdamWConfig ocfg;
    ocfg.lr = opts.lr;
    ocfg.weight_decay = 0;  // small autoencoder, decay only hurts reconstruction
    AdamW opt(params, ocfg);

    Rng rng(opts.seed);
    std::vector<std::vector<real>> snapshot;
    auto take_snapshot = [&] {
        snapshot.clear();
        for (const auto& p : params) snapshot.push_back(p.val());
    };
    take_snapshot();

    for (int step = 0; step < opts.steps; ++step) {
        // assemble a patch batch from sampled images
        Tensor patches;
        {
            std::vector<real> all;
            int rows = 0;
            const int ffc = cfg.f * cfg.f * cfg.C;
            for (int i = 0; i < opts.batch; ++i) {
                const auto& img =
                    corpus[rng.bounded(static_cast<std::uint64_t>(corpus.size()))].image;
                Tensor p = tok.patchify(img);
                all.insert(all.end(), p.val().begin(), p.val().end());
                rows += p.rows();
            }
            patches = Tensor::from({rows, ffc}, std::move(all));
        }

        Tensor loss;
        if (cfg.kind == TokenizerKind::bae) {
            Tensor z = tok.encode_rows(patches);
            std::vector<real> q(z.numel());
            if (opts.train_quantizer == QuantizerMode::bernoulli) {
                Rng qrng = Rng::derive(opts.seed ^ 0x51ED270B, static_cast<std::uint64_t>(step));
                for (std::size_t i = 0; i < q.size(); ++i)
                    q[i] = qrng.bernoulli(static_cast<double>(z.val()[i])) ? 1 : 0;
            } else {
                for (std::size_t i = 0; i < q.size(); ++i)
                    q[i] = z.val()[i] < static_cast<real>(0.5) ? 0 : 1;
            }
            Tensor recon = tok.decode_rows(straight_through(z, std::move(q)));
            Tensor diff = sub(recon, patches);
            loss = mean(mul(diff, diff));
        } else {
            Tensor z = tok.encode_rows(patches);
            // nearest codes on the current codebook values
            tok.sync_codebook();
            LatentGrid zg{patches.rows(), 1, cfg.D, z.val()};
            std::vector<int> idx = vq_lookup(zg, tok.codebook());
            Tensor codes = gather_rows(tok.parameters().back(), idx);
            Tensor zq = add(z, detach(sub(codes, z)));  // values = codes, grads to encoder
            Tensor recon = tok.decode_rows(zq);
            Tensor rdiff = sub(recon, patches);
            Tensor cdiff = sub(detach(z), codes);    // moves the codebook
            Tensor ediff = sub(z, detach(codes));    // commitment, moves the encoder
            loss = add(mean(mul(rdiff, rdiff)),
                       add(mean(mul(cdiff, cdiff)), scale(mean(mul(ediff, ediff)), cfg.beta)));
        }

        if (!std::isfinite(static_cast<double>(loss.item()))) {
            // restore last good parameters and stop
            for (std::size_t k = 0; k < params.size(); ++k) params[k].val() = snapshot[k];
            tok.sync_codebook();
            result.diverged = true;
            break;
        }
        opt.zero_grad();
        backward(loss);
        opt.step();

        if (step % opts.log_every == 0 || step + 1 == opts.steps)
            result.loss_log.emplace_back(step, loss.item());
        if (step % opts.snapshot_every == 0) take_snapshot();
    }
    tok.sync_codebook();
    return result;
}

// -------------------- dataset tokenization --------------------

TokenDataset tokenize_dataset(const std::vector<ImageSample>& corpus,
                              const ImageTokenizer& tokenizer, QuantizerMode mode,
                              std::uint64_t seed, const VocabSpec& group) {
    if (corpus.empty()) throw ConfigError("cannot tokenize an empty corpus");
    const auto& cfg = tokenizer.config();
    group.validate();
    if (group.D != cfg.D)
        throw ConfigError("vocab " + group.name() + " does not cover D=" + std::to_string(cfg.D));
    if (cfg.kind == TokenizerKind::vq && mode != QuantizerMode::vq)
        throw ConfigError("vq tokenizer requires vq mode");
    if (cfg.kind == TokenizerKind::bae && mode == QuantizerMode::vq)
        throw ConfigError("bae tokenizer cannot tokenize in vq mode");

    TokenDataset ds;
    ds.vocab = group;
    ds.mode = mode;
    ds.seed = seed;
    ds.h = corpus[0].image.H / cfg.f;
    ds.w = corpus[0].image.W / cfg.f;
    int num_classes = 0;
    for (const auto& s : corpus) num_classes = std::max(num_classes, s.class_id + 1);
    ds.num_classes = num_classes;
    ds.samples.resize(corpus.size());

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(corpus.size()); ++i) {
        const auto& img = corpus[static_cast<std::size_t>(i)].image;
        TokenSample& out = ds.samples[static_cast<std::size_t>(i)];
        out.class_id = corpus[static_cast<std::size_t>(i)].class_id;
        const LatentGrid z = tokenizer.encode(img);
        const int L = z.h * z.w;
        out.codes.resize(static_cast<std::size_t>(L) * group.g);
        if (mode == QuantizerMode::vq) {
            VqCodebook cb = tokenizer.codebook();  // local copy: counters merged after
            std::vector<int> idx = vq_lookup(z, cb);
            for (int p = 0; p < L; ++p) {
                const auto sub = decompose_code(static_cast<std::uint32_t>(idx[p]), group);
                for (int s = 0; s < group.g; ++s)
                    out.codes[static_cast<std::size_t>(p) * group.g + s] = sub[s];
            }
        } else {
            BitGrid bits;
            if (mode == QuantizerMode::sign) {
                bits = quantize_sign(z);
            } else {
                Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
                bits = quantize_bernoulli(z, rng);
            }
            for (int p = 0; p < L; ++p) {
                std::vector<std::uint8_t> bv(bits.bits.begin() + static_cast<std::size_t>(p) * cfg.D,
                                             bits.bits.begin() +
                                                 static_cast<std::size_t>(p + 1) * cfg.D);
                const auto sub = decompose(bv, group);
                for (int s = 0; s < group.g; ++s)
                    out.codes[static_cast<std::size_t>(p) * group.g + s] = sub[s];
            }
        }
    }
    return ds;
}

UtilizationReport code_utilization(const TokenDataset& ds) {
    if (ds.samples.empty()) throw ConfigError("utilization of an empty dataset");
    const std::size_t K = 1ull << ds.vocab.D;
    UtilizationReport rep;
    rep.counts.assign(K, 0);
    const int L = ds.L();
    for (const auto& s : ds.samples)
        for (int p = 0; p < L; ++p) ++rep.counts[ds.code_at(s, p)];
    for (const auto c : rep.counts) {
        rep.total += c;
        if (c > 0) ++rep.distinct;
    }
    rep.fraction = static_cast<double>(rep.distinct) / static_cast<double>(K);
    rep.sorted_counts = rep.counts;
    std::sort(rep.sorted_counts.begin(), rep.sorted_counts.end(), std::greater<>());
    return rep;
}

}  // namespace elm
