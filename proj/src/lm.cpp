#include "elm/lm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "elm/io_util.hpp"
#include "elm/kernels.hpp"

namespace elm {

namespace {
constexpr std::uint32_t kLmVersion = 1;
constexpr real kPi = 3.14159265358979323846;
}  // namespace

LmMode lm_mode_from_string(const std::string& s) {
    if (s == "ar") return LmMode::ar;
    if (s == "mlm") return LmMode::mlm;
    throw ConfigError("unknown lm mode \"" + s + "\" (want ar|mlm)");
}

std::string to_string(LmMode m) { return m == LmMode::ar ? "ar" : "mlm"; }

void LmConfig::validate() const {
    vocab.validate();
    if (depth < 1 || dim < 1 || heads < 1 || seq_len < 1 || num_classes < 1)
        throw ConfigError("lm config needs positive sizes");
    if (dim % heads != 0)
        throw ConfigError("dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    if (dim % vocab.g != 0)
        throw ConfigError("dim " + std::to_string(dim) + " not divisible by g " +
                          std::to_string(vocab.g));
    if (class_drop_prob < 0 || class_drop_prob > 1)
        throw ConfigError("class_drop_prob must lie in [0,1]");
}

LmConfig LmConfig::preset(const std::string& name) {
    LmConfig c;
    if (name == "s") {
        c.depth = 4; c.dim = 128; c.heads = 4;
    } else if (name == "m") {
        c.depth = 8; c.dim = 256; c.heads = 8;
    } else if (name == "l") {
        c.depth = 24; c.dim = 1024; c.heads = 16;
    } else if (name == "xl") {
        c.depth = 36; c.dim = 1280; c.heads = 20;
    } else if (name == "xxl") {
        c.depth = 48; c.dim = 1536; c.heads = 24;
    } else if (name == "2b") {
        c.depth = 48; c.dim = 1792; c.heads = 28;
    } else {
        throw ConfigError("unknown size preset \"" + name + "\" (want s|m|l|xl|xxl|2b)");
    }
    return c;
}

real train_mask_ratio(real r) {
    if (r < 0 || r > 1)
        throw ConfigError("mask ratio progress " + std::to_string(static_cast<double>(r)) +
                          " outside [0,1]");
    if (r == 1) return 0;  // cos(pi/2) rounds to 6e-17, which ceil would turn into 1 position
    return std::cos(kPi * r / 2);
}

int sample_mask_count(int L, Rng& rng) {
    const real ratio = train_mask_ratio(static_cast<real>(rng.uniform01()));
    const int n = static_cast<int>(std::ceil(static_cast<double>(ratio) * L));
    return std::max(1, std::min(L, n));
}

std::vector<int> sample_mask_positions(int L, int n, Rng& rng) {
    std::vector<int> pos(static_cast<std::size_t>(L));
    std::iota(pos.begin(), pos.end(), 0);
    for (int i = 0; i < n; ++i) {
        const std::size_t j = i + rng.bounded(static_cast<std::uint64_t>(L - i));
        std::swap(pos[static_cast<std::size_t>(i)], pos[j]);
    }
    pos.resize(static_cast<std::size_t>(n));
    std::sort(pos.begin(), pos.end());
    return pos;
}

// -------------------- model --------------------

LmModel::LmModel(const LmConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    const int dim = cfg.dim;
    const real std_emb = static_cast<real>(0.02);
    embed_ = DecomposedEmbedding(cfg.vocab, dim, cfg.full_width_tables, rng);
    heads_ = MultiHead(cfg.vocab, dim);
    class_emb_ = Tensor::randn({cfg.num_classes + 1, dim}, rng, std_emb, true);
    pos_emb_ = Tensor::randn({cfg.T(), dim}, rng, std_emb, true);
    if (cfg.mode == LmMode::mlm) mask_emb_ = Tensor::randn({1, dim}, rng, std_emb, true);
    const real std_proj = static_cast<real>(1.0 / std::sqrt(static_cast<double>(dim)));
    const real std_out =
        static_cast<real>(1.0 / std::sqrt(2.0 * cfg.depth * static_cast<double>(dim)));
    layers_.resize(static_cast<std::size_t>(cfg.depth));
    for (auto& l : layers_) {
        l.ln1_gain = Tensor::full({dim}, 1, true);
        l.wq = Tensor::randn({dim, dim}, rng, std_proj, true);
        l.wk = Tensor::randn({dim, dim}, rng, std_proj, true);
        l.wv = Tensor::randn({dim, dim}, rng, std_proj, true);
        l.wo = Tensor::randn({dim, dim}, rng, std_out, true);
        l.ln2_gain = Tensor::full({dim}, 1, true);
        l.w1 = Tensor::randn({dim, 4 * dim}, rng, std_proj, true);
        l.w2 = Tensor::randn({4 * dim, dim}, rng, std_out, true);
    }
    lnf_gain_ = Tensor::full({dim}, 1, true);
}

std::vector<Tensor> LmModel::parameters() {
    std::vector<Tensor> ps = embed_.parameters();
    ps.push_back(class_emb_);
    ps.push_back(pos_emb_);
    if (cfg_.mode == LmMode::mlm) ps.push_back(mask_emb_);
    for (auto& l : layers_) {
        ps.push_back(l.ln1_gain);
        ps.push_back(l.wq);
        ps.push_back(l.wk);
        ps.push_back(l.wv);
        ps.push_back(l.wo);
        ps.push_back(l.ln2_gain);
        ps.push_back(l.w1);
        ps.push_back(l.w2);
    }
    ps.push_back(lnf_gain_);
    auto hp = heads_.parameters();
    ps.insert(ps.end(), hp.begin(), hp.end());
    return ps;
}

std::int64_t LmModel::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : const_cast<LmModel*>(this)->parameters())
        n += static_cast<std::int64_t>(p.numel());
    return n;
}

Tensor LmModel::trunk(const Tensor& input_rows, int T, std::vector<AttnCapture>* capture) const {
    if (capture) capture->assign(static_cast<std::size_t>(cfg_.depth), AttnCapture{});
    const bool causal = cfg_.mode == LmMode::ar;
    Tensor x = input_rows;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const auto& l = layers_[li];
        Tensor h = rmsnorm(x, l.ln1_gain);
        Tensor a = attention(matmul(h, l.wq), matmul(h, l.wk), matmul(h, l.wv), T, cfg_.heads,
                             causal, capture ? &(*capture)[li] : nullptr);
        x = add(x, matmul(a, l.wo));
        Tensor h2 = rmsnorm(x, l.ln2_gain);
        x = add(x, matmul(gelu(matmul(h2, l.w1)), l.w2));
    }
    return rmsnorm(x, lnf_gain_);
}

std::vector<Tensor> LmModel::forward_rows(const std::vector<int>& classes,
                                          const std::vector<std::uint16_t>& tokens,
                                          const std::vector<real>* mask,
                                          std::vector<AttnCapture>* capture) const {
    const int B = static_cast<int>(classes.size());
    const int L = cfg_.seq_len, T = cfg_.T(), g = cfg_.vocab.g;
    if (tokens.size() != static_cast<std::size_t>(B) * L * g)
        throw ShapeError("token stream has " + std::to_string(tokens.size()) + " indices, want " +
                         std::to_string(static_cast<std::size_t>(B) * L * g));
    if (cfg_.mode == LmMode::mlm) {
        if (!mask || mask->size() != static_cast<std::size_t>(B) * L)
            throw ConfigError("mlm forward needs a B*L mask vector");
        bool any = false;
        for (real m : *mask) any = any || m != 0;
        if (!any) throw ConfigError("mlm forward needs at least one masked position");
    } else if (mask) {
        throw ConfigError("ar forward does not take a mask");
    }
    for (int c : classes)
        if (c < 0 || c > cfg_.num_classes)
            throw ConfigError("class id " + std::to_string(c) + " out of [0," +
                              std::to_string(cfg_.num_classes) + "]");

    Tensor tok = embed_.forward(tokens);  // [B*L, dim]
    if (cfg_.mode == LmMode::mlm) {
        std::vector<real> keep(static_cast<std::size_t>(B) * L), use(mask->begin(), mask->end());
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = 1 - use[i];
        Tensor mask_rows =
            gather_rows(mask_emb_, std::vector<int>(static_cast<std::size_t>(B) * L, 0));
        tok = add(scale_rows(tok, keep), scale_rows(mask_rows, use));
    }
    Tensor cls = gather_rows(class_emb_, classes);  // [B, dim]

    // interleave: row b*T+0 <- cls[b], row b*T+1+i <- tok[b*L+i]
    std::vector<int> perm(static_cast<std::size_t>(B) * T);
    for (int b = 0; b < B; ++b) {
        perm[static_cast<std::size_t>(b) * T] = b;
        for (int i = 0; i < L; ++i)
            perm[static_cast<std::size_t>(b) * T + 1 + i] = B + b * L + i;
    }
    Tensor full = gather_rows(concat_rows(cls, tok), perm);

    std::vector<int> pos_idx(static_cast<std::size_t>(B) * T);
    for (int b = 0; b < B; ++b)
        for (int p = 0; p < T; ++p) pos_idx[static_cast<std::size_t>(b) * T + p] = p;
    Tensor x = add(full, gather_rows(pos_emb_, pos_idx));

    return heads_.forward(trunk(x, T, capture));
}

std::vector<Tensor> LmModel::ar_forward(const TokenSample& sample, int class_id,
                                        std::vector<AttnCapture>* capture) const {
    if (cfg_.mode != LmMode::ar) throw ConfigError("ar_forward on an mlm checkpoint");
    NoGradGuard ng;
    return forward_rows({class_id}, sample.codes, nullptr, capture);
}

std::vector<Tensor> LmModel::mlm_forward(const TokenSample& sample, const std::vector<bool>& mask,
                                         int class_id,
                                         std::vector<AttnCapture>* capture) const {
    if (cfg_.mode != LmMode::mlm) throw ConfigError("mlm_forward on an ar checkpoint");
    NoGradGuard ng;
    std::vector<real> m(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) m[i] = mask[i] ? 1 : 0;
    return forward_rows({class_id}, sample.codes, &m, capture);
}

Tensor LmModel::loss_graph(const LmBatch& batch, Rng& rng) const {
    const int B = batch.B, L = cfg_.seq_len, T = cfg_.T(), g = cfg_.vocab.g;
    std::vector<int> classes(batch.classes);
    for (auto& c : classes)
        if (rng.bernoulli(static_cast<double>(cfg_.class_drop_prob))) c = cfg_.num_classes;

    std::vector<real> mask;
    if (cfg_.mode == LmMode::mlm) {
        mask.assign(static_cast<std::size_t>(B) * L, 0);
        for (int b = 0; b < B; ++b) {
            const int n = sample_mask_count(L, rng);
            for (int p : sample_mask_positions(L, n, rng))
                mask[static_cast<std::size_t>(b) * L + p] = 1;
        }
    }

    auto logits =
        forward_rows(classes, batch.tokens, cfg_.mode == LmMode::mlm ? &mask : nullptr);

    // row weights and per-subhead targets over the B*T logit rows
    std::vector<real> w(static_cast<std::size_t>(B) * T, 0);
    std::vector<std::vector<int>> targets(static_cast<std::size_t>(g),
                                          std::vector<int>(static_cast<std::size_t>(B) * T, 0));
    for (int b = 0; b < B; ++b) {
        for (int p = 0; p < L; ++p) {
            // AR: row p predicts grid position p; MLM: row p+1 predicts its own
            const std::size_t row = static_cast<std::size_t>(b) * T +
                                    (cfg_.mode == LmMode::ar ? p : p + 1);
            const std::size_t tbase = (static_cast<std::size_t>(b) * L + p) * g;
            if (cfg_.mode == LmMode::ar)
                w[row] = 1;
            else
                w[row] = mask[static_cast<std::size_t>(b) * L + p];
            for (int s = 0; s < g; ++s) targets[static_cast<std::size_t>(s)][row] = batch.tokens[tbase + s];
        }
    }
    return multi_head_loss_weighted(logits, targets, w);
}

// -------------------- checkpoint --------------------

void LmModel::save(const std::string& path, std::int64_t step, const Rng& trainer_rng) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    write_magic(f, "ELML");
    write_u32(f, kLmVersion);
    KvBlock kv;
    kv.set_int("depth", cfg_.depth);
    kv.set_int("dim", cfg_.dim);
    kv.set_int("heads", cfg_.heads);
    kv.set("vocab", cfg_.vocab.name());
    kv.set_int("D", cfg_.vocab.D);
    kv.set_int("seq_len", cfg_.seq_len);
    kv.set_int("num_classes", cfg_.num_classes);
    kv.set("mode", to_string(cfg_.mode));
    kv.set_real("class_drop_prob", static_cast<double>(cfg_.class_drop_prob));
    kv.set_int("full_width_tables", cfg_.full_width_tables ? 1 : 0);
    kv.set_int("step", step);
    const auto st = trainer_rng.state();
    for (int i = 0; i < 4; ++i) kv.set_int("rng" + std::to_string(i), static_cast<long long>(st[i]));
    kv.write(f);
    for (const auto& p : const_cast<LmModel*>(this)->parameters())
        for (const real v : p.val()) write_f32(f, static_cast<float>(v));
    if (!f) throw DataError("short write to " + path);
}

LmLoaded LmModel::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    expect_magic(f, "ELML", path);
    const std::uint32_t version = read_u32(f, path + " version");
    if (version != kLmVersion)
        throw DataError(path + ": unsupported lm checkpoint version " + std::to_string(version));
    const KvBlock kv = KvBlock::read(f, path);
    LmConfig cfg;
    cfg.depth = static_cast<int>(kv.get_int("depth"));
    cfg.dim = static_cast<int>(kv.get_int("dim"));
    cfg.heads = static_cast<int>(kv.get_int("heads"));
    cfg.vocab = VocabSpec::parse(kv.get("vocab"), static_cast<int>(kv.get_int("D")));
    cfg.seq_len = static_cast<int>(kv.get_int("seq_len"));
    cfg.num_classes = static_cast<int>(kv.get_int("num_classes"));
    cfg.mode = lm_mode_from_string(kv.get("mode"));
    cfg.class_drop_prob = static_cast<real>(kv.get_real("class_drop_prob"));
    cfg.full_width_tables = kv.get_int("full_width_tables") != 0;
    LmLoaded out{LmModel(cfg, 0), kv.get_int("step"), {}};
    for (int i = 0; i < 4; ++i)
        out.rng_state[static_cast<std::size_t>(i)] =
            static_cast<std::uint64_t>(kv.get_int("rng" + std::to_string(i)));
    for (auto& p : out.model.parameters())
        for (auto& v : p.val()) v = static_cast<real>(read_f32(f, path + " parameters"));
    return out;
}

// -------------------- training --------------------

real lm_train_step(LmModel& model, AdamW& opt, const LmBatch& batch, Rng& rng) {
    Tensor loss = model.loss_graph(batch, rng);
    const real lv = loss.item();
    if (!std::isfinite(static_cast<double>(lv)))
        throw NumericalError("lm training loss is not finite at optimizer step " +
                             std::to_string(opt.step_count() + 1));
    opt.zero_grad();
    backward(loss);
    opt.step();
    return lv;
}

LmBatch sample_batch(const TokenDataset& data, int B, Rng& rng) {
    LmBatch batch;
    batch.B = B;
    batch.classes.resize(static_cast<std::size_t>(B));
    const std::size_t per = data.samples.empty() ? 0 : data.samples[0].codes.size();
    batch.tokens.resize(static_cast<std::size_t>(B) * per);
    for (int b = 0; b < B; ++b) {
        const auto& s = data.samples[rng.bounded(data.samples.size())];
        batch.classes[static_cast<std::size_t>(b)] = s.class_id;
        std::copy(s.codes.begin(), s.codes.end(),
                  batch.tokens.begin() + static_cast<std::size_t>(b) * per);
    }
    return batch;
}

LmTrainResult train_lm(LmModel& model, const TokenDataset& data, const LmTrainOptions& opts) {
    if (data.samples.empty()) throw ConfigError("cannot train on an empty token dataset");
    if (data.vocab.g != model.config().vocab.g || data.vocab.D != model.config().vocab.D)
        throw ConfigError("dataset vocab " + data.vocab.name() + " does not match model vocab " +
                          model.config().vocab.name());
    if (data.L() != model.config().seq_len)
        throw ConfigError("dataset sequence length " + std::to_string(data.L()) +
                          " vs model seq_len " + std::to_string(model.config().seq_len));
    AdamWConfig ocfg;
    ocfg.lr = opts.lr;
    ocfg.weight_decay = opts.weight_decay;
    AdamW opt(model.parameters(), ocfg);
    Rng rng(opts.seed);

    LmTrainResult result;
    std::vector<real> tail;
    const auto t0 = std::chrono::steady_clock::now();
    for (int step = 0; step < opts.steps; ++step) {
        LmBatch batch = sample_batch(data, opts.batch, rng);
        real lv;
        try {
            lv = lm_train_step(model, opt, batch, rng);
        } catch (const NumericalError&) {
            result.diverged = true;
            break;
        }
        tail.push_back(lv);
        if (tail.size() > 50) tail.erase(tail.begin());
        if (step % opts.log_every == 0 || step + 1 == opts.steps) {
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            result.log.push_back({step, lv, opts.lr, ms});
        }
    }
    if (!tail.empty())
        result.final_loss = kern::reduce_sum(tail.data(), tail.size()) / static_cast<real>(tail.size());
    return result;
}

}  // namespace elm
