#include "elm/dataset.hpp"

#include <fstream>

#include "elm/io_util.hpp"
#include "elm/rng.hpp"

namespace elm {

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

QuantizerMode quantizer_mode_from_string(const std::string& s) {
    if (s == "sign") return QuantizerMode::sign;
    if (s == "bernoulli") return QuantizerMode::bernoulli;
    if (s == "vq") return QuantizerMode::vq;
    throw ConfigError("unknown quantizer mode \"" + s + "\" (want sign|bernoulli|vq)");
}

std::string to_string(QuantizerMode m) {
    switch (m) {
        case QuantizerMode::sign: return "sign";
        case QuantizerMode::bernoulli: return "bernoulli";
        case QuantizerMode::vq: return "vq";
    }
    return "?";
}

TokenDataset TokenDataset::regroup(const VocabSpec& target) const {
    target.validate();
    if (target.D != vocab.D)
        throw ConfigError("regroup cannot change code width: have D=" + std::to_string(vocab.D) +
                          ", want D=" + std::to_string(target.D));
    TokenDataset out = *this;
    out.vocab = target;
    const int L = h * w;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& src = samples[i].codes;
        auto& dst = out.samples[i].codes;
        dst.assign(static_cast<std::size_t>(L) * target.g, 0);
        for (int p = 0; p < L; ++p) {
            std::vector<std::uint16_t> old_idx(src.begin() + static_cast<std::size_t>(p) * vocab.g,
                                               src.begin() +
                                                   static_cast<std::size_t>(p + 1) * vocab.g);
            const auto bits = recompose(old_idx, vocab);
            const auto new_idx = decompose(bits, target);
            for (int s = 0; s < target.g; ++s)
                dst[static_cast<std::size_t>(p) * target.g + s] = new_idx[s];
        }
    }
    return out;
}

std::uint32_t TokenDataset::code_at(const TokenSample& s, int pos) const {
    std::vector<std::uint16_t> idx(s.codes.begin() + static_cast<std::size_t>(pos) * vocab.g,
                                   s.codes.begin() + static_cast<std::size_t>(pos + 1) * vocab.g);
    return recompose_code(idx, vocab);
}

void save_dataset(const std::string& path, const TokenDataset& ds) {
    ds.vocab.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    write_magic(f, "ELMT");
    write_u32(f, kDatasetVersion);
    write_u32(f, static_cast<std::uint32_t>(ds.samples.size()));
    write_u16(f, static_cast<std::uint16_t>(ds.h));
    write_u16(f, static_cast<std::uint16_t>(ds.w));
    write_u8(f, static_cast<std::uint8_t>(ds.vocab.D));
    write_u8(f, static_cast<std::uint8_t>(ds.vocab.g));
    write_u8(f, static_cast<std::uint8_t>(ds.vocab.b));
    write_u8(f, static_cast<std::uint8_t>(ds.mode));
    write_u64(f, ds.seed);
    write_u16(f, static_cast<std::uint16_t>(ds.num_classes));
    const std::size_t per = static_cast<std::size_t>(ds.h) * ds.w * ds.vocab.g;
    for (const auto& s : ds.samples) {
        if (s.codes.size() != per)
            throw ShapeError("sample has " + std::to_string(s.codes.size()) +
                             " indices, expected " + std::to_string(per));
        write_u16(f, static_cast<std::uint16_t>(s.class_id));
        for (const auto c : s.codes) write_u16(f, c);
    }
    if (!f) throw DataError("short write to " + path);
}

TokenDataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    expect_magic(f, "ELMT", path);
    const std::uint32_t version = read_u32(f, path + " version");
    if (version != kDatasetVersion)
        throw DataError(path + ": unsupported version " + std::to_string(version) + " (have " +
                        std::to_string(kDatasetVersion) + ")");
    TokenDataset ds;
    const std::uint32_t count = read_u32(f, path);
    ds.h = read_u16(f, path);
    ds.w = read_u16(f, path);
    const int D = read_u8(f, path);
    const int g = read_u8(f, path);
    const int b = read_u8(f, path);
    ds.vocab = VocabSpec(D, g, b);
    const std::uint8_t mode = read_u8(f, path);
    if (mode > 2) throw DataError(path + ": bad quantizer mode " + std::to_string(mode));
    ds.mode = static_cast<QuantizerMode>(mode);
    ds.seed = read_u64(f, path);
    ds.num_classes = read_u16(f, path);
    const std::size_t per = static_cast<std::size_t>(ds.h) * ds.w * g;
    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        s.class_id = read_u16(f, path);
        s.codes.resize(per);
        for (auto& c : s.codes) {
            c = read_u16(f, path);
            if (c >= (1u << b))
                throw DataError(path + ": subcode " + std::to_string(c) + " out of range for b=" +
                                std::to_string(b));
        }
    }
    return ds;
}

TokenDataset make_noise_dataset(int h, int w, const VocabSpec& vocab, int count, int num_classes,
                                std::uint64_t seed) {
    vocab.validate();
    TokenDataset ds;
    ds.h = h;
    ds.w = w;
    ds.vocab = vocab;
    ds.mode = QuantizerMode::sign;
    ds.seed = seed;
    ds.num_classes = num_classes;
    ds.samples.resize(count);
    const std::size_t per = static_cast<std::size_t>(h) * w * vocab.g;
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
        auto& s = ds.samples[static_cast<std::size_t>(i)];
        s.class_id = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(num_classes)));
        s.codes.resize(per);
        for (auto& c : s.codes)
            c = static_cast<std::uint16_t>(rng.bounded(1ull << vocab.b));
    }
    return ds;
}

}  // namespace elm
