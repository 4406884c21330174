#include "elm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elm {

CfgKind cfg_kind_from_string(const std::string& s) {
    if (s == "constant") return CfgKind::constant;
    if (s == "linear") return CfgKind::linear;
    if (s == "cos") return CfgKind::cos;
    if (s == "log") return CfgKind::log;
    if (s == "square") return CfgKind::square;
    if (s == "r_square" || s == "r-square") return CfgKind::r_square;
    throw ConfigError("unknown cfg schedule \"" + s +
                      "\" (want constant|linear|cos|log|square|r_square)");
}

std::string to_string(CfgKind k) {
    switch (k) {
        case CfgKind::constant: return "constant";
        case CfgKind::linear: return "linear";
        case CfgKind::cos: return "cos";
        case CfgKind::log: return "log";
        case CfgKind::square: return "square";
        case CfgKind::r_square: return "r_square";
    }
    return "?";
}

std::vector<real> cfg_scale_sequence(const CfgSchedule& sched) {
    if (sched.steps < 1) throw ConfigError("cfg schedule needs at least one step");
    if (sched.s_min > sched.s_max) throw ConfigError("cfg schedule needs s_min <= s_max");
    constexpr real kPi = 3.14159265358979323846;
    constexpr real kE = 2.71828182845904523536;
    std::vector<real> out(static_cast<std::size_t>(sched.steps));
    const real span = sched.s_max - sched.s_min;
    for (int i = 0; i < sched.steps; ++i) {
        const real t = sched.steps == 1
                           ? 0
                           : static_cast<real>(i) / static_cast<real>(sched.steps - 1);
        real v;
        switch (sched.kind) {
            case CfgKind::constant: v = sched.s_max; break;
            case CfgKind::linear: v = sched.s_min + span * t; break;
            case CfgKind::cos:
                v = sched.s_min + span * (1 - std::cos(kPi * t)) / 2;
                break;
            case CfgKind::log:
                v = sched.s_min + span * std::log(1 + (kE - 1) * t);
                break;
            case CfgKind::square: v = sched.s_min + span * t * t; break;
            case CfgKind::r_square:
                v = sched.s_min + span * (1 - (1 - t) * (1 - t));
                break;
            default: throw ConfigError("bad cfg kind");
        }
        out[static_cast<std::size_t>(i)] = v;
    }
    // single-step schedules decode at full strength
    if (sched.steps == 1 && sched.kind != CfgKind::constant) out[0] = sched.s_max;
    return out;
}

void cfg_combine(const real* cond, const real* uncond, real s, real* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = uncond[i] + s * (cond[i] - uncond[i]);
}

void top_k_filter(real* logits, int n, int k) {
    if (k < 1 || k > n)
        throw ConfigError("top_k " + std::to_string(k) + " out of [1," + std::to_string(n) + "]");
    if (k == n) return;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    // survivors: largest values, ties resolved toward lower indices
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    std::vector<char> keep(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < k; ++i) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    for (int i = 0; i < n; ++i)
        if (!keep[static_cast<std::size_t>(i)]) logits[i] = static_cast<real>(-1e30);
}

int sample_categorical(const real* logits, int n, real temperature, int top_k, Rng& rng,
                       real* logp) {
    if (!(temperature > 0)) throw ConfigError("temperature must be positive");
    std::vector<real> work(logits, logits + n);
    for (auto& v : work) v /= temperature;
    top_k_filter(work.data(), n, top_k < 1 ? n : top_k);
    real mx = work[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, work[static_cast<std::size_t>(i)]);
    real z = 0;
    for (int i = 0; i < n; ++i) {
        work[static_cast<std::size_t>(i)] = std::exp(work[static_cast<std::size_t>(i)] - mx);
        z += work[static_cast<std::size_t>(i)];
    }
    const real u = static_cast<real>(rng.uniform01()) * z;
    real acc = 0;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
        acc += work[static_cast<std::size_t>(i)];
        if (u < acc) {
            pick = i;
            break;
        }
    }
    if (logp) *logp = std::log(work[static_cast<std::size_t>(pick)] / z);
    return pick;
}

// -------------------- AR --------------------

namespace {

TokenGrid ar_generate_stream(const LmModel& model, int class_id, const SamplerConfig& cfg,
                             Rng& rng) {
    const auto& mc = model.config();
    const int L = mc.seq_len, g = mc.vocab.g, K = mc.vocab.sub_vocab();
    if (cfg.grid_h * cfg.grid_w != L)
        throw ConfigError("grid " + std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w) +
                          " does not match model seq_len " + std::to_string(L));
    const auto scales = cfg_scale_sequence(cfg.cfg.with_steps(L));
    ArDecoder cond(model), uncond(model);
    cond.start(class_id);
    uncond.start(mc.num_classes);
    TokenGrid grid{cfg.grid_h, cfg.grid_w, mc.vocab,
                   std::vector<std::uint16_t>(static_cast<std::size_t>(L) * g)};
    std::vector<real> combined(static_cast<std::size_t>(K));
    for (int p = 0; p < L; ++p) {
        const real s = scales[static_cast<std::size_t>(p)];
        std::uint16_t* tok = grid.codes.data() + static_cast<std::size_t>(p) * g;
        for (int sh = 0; sh < g; ++sh) {
            cfg_combine(cond.logits()[static_cast<std::size_t>(sh)].data(),
                        uncond.logits()[static_cast<std::size_t>(sh)].data(), s, combined.data(),
                        K);
            tok[sh] = static_cast<std::uint16_t>(
                sample_categorical(combined.data(), K, cfg.temperature, cfg.top_k, rng));
        }
        if (p + 1 < L) {
            cond.feed(tok, p + 1);
            uncond.feed(tok, p + 1);
        }
    }
    return grid;
}

}  // namespace

TokenGrid ar_generate(const LmModel& model, int class_id, const SamplerConfig& cfg) {
    Rng rng = Rng::derive(cfg.seed, 0);
    return ar_generate_stream(model, class_id, cfg, rng);
}

// -------------------- MLM --------------------

namespace {

TokenGrid mlm_generate_stream(const LmModel& model, int class_id, const SamplerConfig& cfg,
                              Rng& rng, std::vector<int>* masked_trajectory) {
    const auto& mc = model.config();
    if (mc.mode != LmMode::mlm) throw ConfigError("mlm_generate needs an mlm checkpoint");
    const int L = mc.seq_len, g = mc.vocab.g, K = mc.vocab.sub_vocab();
    const int T = cfg.iterations;
    if (T < 1 || T > L)
        throw ConfigError("iterations " + std::to_string(T) + " out of [1," + std::to_string(L) +
                          "]");
    if (cfg.grid_h * cfg.grid_w != L)
        throw ConfigError("grid does not match model seq_len");
    const auto scales = cfg_scale_sequence(cfg.cfg.with_steps(T));
    if (masked_trajectory) masked_trajectory->clear();

    TokenGrid grid{cfg.grid_h, cfg.grid_w, mc.vocab,
                   std::vector<std::uint16_t>(static_cast<std::size_t>(L) * g)};
    std::vector<bool> committed(static_cast<std::size_t>(L), false);
    std::vector<real> combined(static_cast<std::size_t>(K));

    struct Candidate {
        int pos;
        real confidence;
        std::vector<std::uint16_t> codes;
    };

    NoGradGuard ng;
    for (int t = 1; t <= T; ++t) {
        // one forward for the class row and one for the null row
        std::vector<real> mask(static_cast<std::size_t>(2) * L);
        for (int p = 0; p < L; ++p) {
            mask[static_cast<std::size_t>(p)] = committed[static_cast<std::size_t>(p)] ? 0 : 1;
            mask[static_cast<std::size_t>(L + p)] = mask[static_cast<std::size_t>(p)];
        }
        std::vector<std::uint16_t> tokens(static_cast<std::size_t>(2) * L * g);
        std::copy(grid.codes.begin(), grid.codes.end(), tokens.begin());
        std::copy(grid.codes.begin(), grid.codes.end(),
                  tokens.begin() + static_cast<std::size_t>(L) * g);
        auto logits = model.forward_rows({class_id, mc.num_classes}, tokens, &mask);

        const real s = scales[static_cast<std::size_t>(t - 1)];
        const real tau_eff =
            cfg.anneal_tau ? cfg.tau * (1 - static_cast<real>(t) / static_cast<real>(T)) : cfg.tau;

        std::vector<Candidate> cands;
        for (int p = 0; p < L; ++p) {
            if (committed[static_cast<std::size_t>(p)]) continue;
            Candidate c;
            c.pos = p;
            c.codes.resize(static_cast<std::size_t>(g));
            real conf = 0;
            // logit rows: sample 0 row p+1 (class token shift), sample 1 row T+p+1
            const int row_c = p + 1;
            const int row_u = mc.T() + p + 1;
            for (int sh = 0; sh < g; ++sh) {
                const auto& lg = logits[static_cast<std::size_t>(sh)];
                cfg_combine(lg.val().data() + static_cast<std::size_t>(row_c) * K,
                            lg.val().data() + static_cast<std::size_t>(row_u) * K, s,
                            combined.data(), K);
                real logp = 0;
                c.codes[static_cast<std::size_t>(sh)] = static_cast<std::uint16_t>(
                    sample_categorical(combined.data(), K, cfg.temperature, cfg.top_k, rng, &logp));
                conf += logp;
            }
            conf /= static_cast<real>(g);
            conf += tau_eff * static_cast<real>(rng.gumbel());
            c.confidence = conf;
            cands.push_back(std::move(c));
        }

        // keep the most confident so that exactly m_t stay masked
        const int m_t = static_cast<int>(std::ceil(
            static_cast<double>(train_mask_ratio(static_cast<real>(t) / static_cast<real>(T))) *
            L));
        const int masked_now = static_cast<int>(cands.size());
        const int n_commit = std::max(0, masked_now - m_t);
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            return a.pos < b.pos;
        });
        for (int i = 0; i < n_commit; ++i) {
            const auto& c = cands[static_cast<std::size_t>(i)];
            committed[static_cast<std::size_t>(c.pos)] = true;
            std::copy(c.codes.begin(), c.codes.end(),
                      grid.codes.begin() + static_cast<std::size_t>(c.pos) * g);
        }
        if (masked_trajectory) masked_trajectory->push_back(masked_now - n_commit);
    }
    return grid;
}

}  // namespace

TokenGrid mlm_generate(const LmModel& model, int class_id, const SamplerConfig& cfg,
                       std::vector<int>* masked_trajectory) {
    Rng rng = Rng::derive(cfg.seed, 0);
    return mlm_generate_stream(model, class_id, cfg, rng, masked_trajectory);
}

// -------------------- extension --------------------

TokenGrid extend_generate(const LmModel& model, int class_id, int target_h, int target_w,
                          const SamplerConfig& cfg) {
    const auto& mc = model.config();
    const int L = mc.seq_len, g = mc.vocab.g, K = mc.vocab.sub_vocab();
    if (target_h < cfg.grid_h && target_w < cfg.grid_w)
        throw ConfigError("extension target smaller than the trained grid in both dimensions; "
                          "use plain generation");
    if (target_h < 1 || target_w < 1) throw ConfigError("bad extension target");
    const int total = target_h * target_w;
    const auto scales = cfg_scale_sequence(cfg.cfg.with_steps(total));
    Rng rng = Rng::derive(cfg.seed, 0);

    TokenGrid grid{target_h, target_w, mc.vocab,
                   std::vector<std::uint16_t>(static_cast<std::size_t>(total) * g)};
    ArDecoder cond(model), uncond(model);
    cond.start(class_id);
    uncond.start(mc.num_classes);
    std::vector<real> combined(static_cast<std::size_t>(K));

    for (int p = 0; p < total; ++p) {
        const real s = scales[static_cast<std::size_t>(p)];
        std::vector<std::vector<real>> lc, lu;
        if (p < L) {
            lc = cond.logits();
            lu = uncond.logits();
        } else {
            // window of the most recent L tokens, positions 1..L
            const std::uint16_t* win = grid.codes.data() + static_cast<std::size_t>(p - L) * g;
            lc = window_logits(model, class_id, win, L);
            lu = window_logits(model, mc.num_classes, win, L);
        }
        std::uint16_t* tok = grid.codes.data() + static_cast<std::size_t>(p) * g;
        for (int sh = 0; sh < g; ++sh) {
            cfg_combine(lc[static_cast<std::size_t>(sh)].data(),
                        lu[static_cast<std::size_t>(sh)].data(), s, combined.data(), K);
            tok[sh] = static_cast<std::uint16_t>(
                sample_categorical(combined.data(), K, cfg.temperature, cfg.top_k, rng));
        }
        if (p + 1 < L) {
            cond.feed(tok, p + 1);
            uncond.feed(tok, p + 1);
        }
    }
    return grid;
}

// -------------------- batch + decode --------------------

std::vector<TokenGrid> generate_batch(const LmModel& model, const std::vector<int>& classes,
                                      const SamplerConfig& cfg) {
    std::vector<TokenGrid> out(classes.size());
    const bool ar = model.config().mode == LmMode::ar;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        Rng rng = Rng::derive(cfg.seed, i);
        out[i] = ar ? ar_generate_stream(model, classes[i], cfg, rng)
                    : mlm_generate_stream(model, classes[i], cfg, rng, nullptr);
    }
    return out;
}

Image tokens_to_image(const TokenGrid& grid, const ImageTokenizer& tokenizer) {
    const auto& cfg = tokenizer.config();
    if (grid.vocab.D != cfg.D)
        throw ShapeError("grid code width D=" + std::to_string(grid.vocab.D) +
                         " vs tokenizer D=" + std::to_string(cfg.D));
    if (tokenizer.config().kind == TokenizerKind::vq) {
        std::vector<int> indices(static_cast<std::size_t>(grid.L()));
        for (int p = 0; p < grid.L(); ++p) {
            std::vector<std::uint16_t> idx(grid.codes.begin() + static_cast<std::size_t>(p) * grid.vocab.g,
                                           grid.codes.begin() +
                                               static_cast<std::size_t>(p + 1) * grid.vocab.g);
            indices[static_cast<std::size_t>(p)] = static_cast<int>(recompose_code(idx, grid.vocab));
        }
        return tokenizer.decode_vq(indices, grid.h, grid.w);
    }
    BitGrid bits{grid.h, grid.w, grid.vocab.D,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(grid.L()) * grid.vocab.D)};
    for (int p = 0; p < grid.L(); ++p) {
        std::vector<std::uint16_t> idx(grid.codes.begin() + static_cast<std::size_t>(p) * grid.vocab.g,
                                       grid.codes.begin() +
                                           static_cast<std::size_t>(p + 1) * grid.vocab.g);
        const auto bv = recompose(idx, grid.vocab);
        std::copy(bv.begin(), bv.end(),
                  bits.bits.begin() + static_cast<std::size_t>(p) * grid.vocab.D);
    }
    return tokenizer.decode(bits);
}

void save_grid(const std::string& path, const TokenGrid& grid, int class_id, std::uint64_t seed,
               int num_classes) {
    TokenDataset ds;
    ds.h = grid.h;
    ds.w = grid.w;
    ds.vocab = grid.vocab;
    ds.mode = QuantizerMode::sign;
    ds.seed = seed;
    ds.num_classes = num_classes;
    ds.samples.push_back(TokenSample{class_id, grid.codes});
    save_dataset(path, ds);
}

TokenGrid load_grid(const std::string& path) {
    const TokenDataset ds = load_dataset(path);
    if (ds.samples.size() != 1) throw DataError(path + ": expected a single-grid file");
    return TokenGrid{ds.h, ds.w, ds.vocab, ds.samples[0].codes};
}

}  // namespace elm
