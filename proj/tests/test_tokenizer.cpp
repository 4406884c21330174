#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "elm/corpus.hpp"
#include "elm/tokenizer.hpp"

using namespace elm;

namespace {

ImageTokenizer make_bae(std::uint64_t seed = 5) {
    TokenizerConfig cfg;
    cfg.kind = TokenizerKind::bae;
    return ImageTokenizer(cfg, seed);
}

Image random_image(int H, int W, Rng& rng) {
    Image img(H, W, 1);
    for (auto& p : img.pixels) p = static_cast<real>(rng.uniform01());
    return img;
}

}  // namespace

TEST_CASE("encode shape contract, sigmoid range, determinism") {
    auto tok = make_bae();
    Rng rng(9);
    const Image img = random_image(32, 32, rng);
    const LatentGrid z = tok.encode(img);
    CHECK(z.h == 8);
    CHECK(z.w == 8);
    CHECK(z.D == 8);
    for (real v : z.values) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    const LatentGrid z2 = tok.encode(img);
    CHECK(z.values == z2.values);

    Image bad(30, 32, 1);
    CHECK_THROWS_AS(tok.encode(bad), ShapeError);
}

TEST_CASE("sign quantizer: thresholds and the 0.5 boundary") {
    LatentGrid z{1, 1, 3, {static_cast<real>(0.3), static_cast<real>(0.7), static_cast<real>(0.5)}};
    const BitGrid b = quantize_sign(z);
    CHECK(b.bits == std::vector<std::uint8_t>{0, 1, 1});

    LatentGrid nines{2, 2, 2, std::vector<real>(8, static_cast<real>(0.9))};
    const BitGrid ones = quantize_sign(nines);
    for (auto bit : ones.bits) CHECK(bit == 1);
}

TEST_CASE("sign quantizer idempotent through the 0.25/0.75 embedding") {
    Rng rng(12);
    LatentGrid z{4, 4, 8, {}};
    z.values.resize(4 * 4 * 8);
    for (auto& v : z.values) v = static_cast<real>(rng.uniform01());
    const BitGrid b = quantize_sign(z);
    LatentGrid re{4, 4, 8, std::vector<real>(z.values.size())};
    for (std::size_t i = 0; i < b.bits.size(); ++i)
        re.values[i] = b.bits[i] ? static_cast<real>(0.75) : static_cast<real>(0.25);
    CHECK(quantize_sign(re).bits == b.bits);
}

TEST_CASE("bernoulli quantizer: boundary, empirical mean, determinism") {
    LatentGrid ones{1, 1, 4, std::vector<real>(4, 1)};
    Rng rng(1);
    CHECK(quantize_bernoulli(ones, rng).bits == std::vector<std::uint8_t>{1, 1, 1, 1});

    // p = 0.5 over 1e5 draws: mean within [0.49, 0.51] (3 sigma ~ 0.0047)
    const int n = 100000;
    LatentGrid half{n, 1, 1, std::vector<real>(n, static_cast<real>(0.5))};
    Rng r2(77);
    const BitGrid b = quantize_bernoulli(half, r2);
    double mean = 0;
    for (auto bit : b.bits) mean += bit;
    mean /= n;
    CHECK(mean > 0.49);
    CHECK(mean < 0.51);

    Rng r3(123), r4(123);
    LatentGrid z{8, 8, 8, {}};
    z.values.assign(8 * 8 * 8, static_cast<real>(0.3));
    CHECK(quantize_bernoulli(z, r3).bits == quantize_bernoulli(z, r4).bits);
}

TEST_CASE("bernoulli estimator is unbiased per entry (3 sigma binomial)") {
    Rng vals(5);
    LatentGrid z{2, 2, 4, {}};
    z.values.resize(16);
    for (auto& v : z.values) v = static_cast<real>(vals.uniform(0.05, 0.95));
    const int reps = 20000;
    std::vector<double> acc(16, 0);
    Rng rng(88);
    for (int r = 0; r < reps; ++r) {
        const BitGrid b = quantize_bernoulli(z, rng);
        for (int i = 0; i < 16; ++i) acc[static_cast<std::size_t>(i)] += b.bits[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 16; ++i) {
        const double p = static_cast<double>(z.values[static_cast<std::size_t>(i)]);
        const double sigma = std::sqrt(p * (1 - p) / reps);
        CHECK(std::abs(acc[static_cast<std::size_t>(i)] / reps - p) < 3.5 * sigma + 1e-9);
    }
}

TEST_CASE("vq lookup: nearest, tie to low index, usage counters, brute force") {
    VqCodebook cb{2, 2, {0, 0, 1, 1}, {0, 0}};
    LatentGrid z{1, 1, 2, {static_cast<real>(0.1), static_cast<real>(0.1)}};
    CHECK(vq_lookup(z, cb) == std::vector<int>{0});
    CHECK(cb.usage[0] == 1);

    LatentGrid tie{1, 1, 2, {static_cast<real>(0.5), static_cast<real>(0.5)}};
    CHECK(vq_lookup(tie, cb) == std::vector<int>{0});  // equidistant -> lowest index

    VqCodebook empty{0, 2, {}, {}};
    CHECK_THROWS_AS(vq_lookup(z, empty), ConfigError);

    // brute-force oracle over random instances
    Rng rng(17);
    VqCodebook book{8, 3, {}, std::vector<std::int64_t>(8, 0)};
    book.codes.resize(24);
    for (auto& c : book.codes) c = static_cast<real>(rng.uniform(-1, 1));
    LatentGrid pts{100, 1, 3, {}};
    pts.values.resize(300);
    for (auto& v : pts.values) v = static_cast<real>(rng.uniform(-1, 1));
    const auto got = vq_lookup(pts, book);
    for (int p = 0; p < 100; ++p) {
        int best = -1;
        double best_d = 0;
        for (int k = 0; k < 8; ++k) {
            double d = 0;
            for (int j = 0; j < 3; ++j) {
                const double t = static_cast<double>(pts.values[static_cast<std::size_t>(p) * 3 + j]) -
                                 static_cast<double>(book.codes[static_cast<std::size_t>(k) * 3 + j]);
                d += t * t;
            }
            if (best < 0 || d < best_d) {
                best = k;
                best_d = d;
            }
        }
        CHECK(got[static_cast<std::size_t>(p)] == best);
    }
}

TEST_CASE("decode shape round trip and purity") {
    auto tok = make_bae();
    Rng rng(4);
    const Image img = random_image(32, 32, rng);
    const BitGrid bits = quantize_sign(tok.encode(img));
    const Image recon = tok.decode(bits);
    CHECK(recon.H == 32);
    CHECK(recon.W == 32);
    for (real p : recon.pixels) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    const Image recon2 = tok.decode(bits);
    CHECK(recon.pixels == recon2.pixels);
}

TEST_CASE("one-image memorization drives reconstruction error down") {
    CorpusSpec spec;
    spec.num_classes = 1;
    spec.samples_per_class = 1;
    spec.H = spec.W = 32;
    spec.master_seed = 3;
    const auto corpus = generate_corpus(spec);

    TokenizerConfig cfg;
    TokenizerTrainOptions opts;
    opts.steps = 200;
    opts.batch = 1;
    opts.lr = 3e-3;
    opts.train_quantizer = QuantizerMode::sign;  // deterministic overfit
    const auto result = train_tokenizer(corpus, cfg, opts);
    CHECK_FALSE(result.diverged);

    const auto& tok = result.tokenizer;
    const Image recon = tok.decode(quantize_sign(tok.encode(corpus[0].image)));
    double mse = 0;
    for (std::size_t i = 0; i < recon.pixels.size(); ++i) {
        const double d = static_cast<double>(recon.pixels[i]) -
                         static_cast<double>(corpus[0].image.pixels[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(recon.pixels.size());
    CHECK(mse < 1e-3);
}

TEST_CASE("tokenize_dataset: raster order, modes, determinism") {
    auto tok = make_bae(21);
    CorpusSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 3;
    spec.H = spec.W = 32;
    const auto corpus = generate_corpus(spec);
    const VocabSpec group(8, 1, 8);

    const auto ds = tokenize_dataset(corpus, tok, QuantizerMode::sign, 7, group);
    CHECK(ds.h == 8);
    CHECK(ds.w == 8);
    CHECK(ds.samples.size() == corpus.size());

    // raster order: position (r,c) maps to index r*w + c
    const LatentGrid z = tok.encode(corpus[0].image);
    const BitGrid bits = quantize_sign(z);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            std::uint32_t code = 0;
            for (int d = 0; d < 8; ++d) code = (code << 1) | bits.at(r, c, d);
            CHECK(ds.code_at(ds.samples[0], r * 8 + c) == code);
        }

    const auto ds2 = tokenize_dataset(corpus, tok, QuantizerMode::sign, 7, group);
    CHECK(ds2.samples[1].codes == ds.samples[1].codes);

    const auto db1 = tokenize_dataset(corpus, tok, QuantizerMode::bernoulli, 42, group);
    const auto db2 = tokenize_dataset(corpus, tok, QuantizerMode::bernoulli, 42, group);
    for (std::size_t i = 0; i < db1.samples.size(); ++i)
        CHECK(db1.samples[i].codes == db2.samples[i].codes);
}

TEST_CASE("grammar corpus retokenizes identically after regeneration") {
    CorpusSpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 4;
    spec.H = spec.W = 16;
    spec.kind = CorpusKind::grammar;
    const auto corpus = generate_corpus(spec);
    auto tok = make_bae(33);
    const VocabSpec group(8, 1, 8);
    const auto ds1 = tokenize_dataset(corpus, tok, QuantizerMode::sign, 0, group);
    const auto regen = generate_corpus(spec);
    const auto ds2 = tokenize_dataset(regen, tok, QuantizerMode::sign, 0, group);
    for (std::size_t i = 0; i < ds1.samples.size(); ++i)
        CHECK(ds1.samples[i].codes == ds2.samples[i].codes);
    // within a class every sample carries the same sequence
    CHECK(ds1.samples[0].codes == ds1.samples[1].codes);
}

TEST_CASE("utilization report: point mass, full coverage, conservation") {
    TokenDataset ds;
    ds.h = 2;
    ds.w = 2;
    ds.vocab = VocabSpec(8, 1, 8);
    ds.num_classes = 1;
    ds.samples.push_back({0, {7, 7, 7, 7}});
    const auto rep = code_utilization(ds);
    CHECK(rep.distinct == 1);
    CHECK(rep.fraction == doctest::Approx(1.0 / 256));
    CHECK(rep.total == 4);
    CHECK(rep.sorted_counts[0] == 4);

    TokenDataset full;
    full.h = 16;
    full.w = 16;
    full.vocab = VocabSpec(8, 1, 8);
    full.num_classes = 1;
    TokenSample s;
    s.class_id = 0;
    for (int i = 0; i < 256; ++i) s.codes.push_back(static_cast<std::uint16_t>(i));
    full.samples.push_back(s);
    const auto rep2 = code_utilization(full);
    CHECK(rep2.fraction == 1.0);
    std::int64_t total = 0;
    for (auto c : rep2.counts) total += c;
    CHECK(total == rep2.total);
}

TEST_CASE("checkpoint round trip preserves config and parameters") {
    const auto dir = std::filesystem::temp_directory_path() / "elm_tok_ckpt";
    std::filesystem::create_directories(dir);
    auto tok = make_bae(55);
    const std::string p1 = (dir / "a.elmc").string();
    const std::string p2 = (dir / "b.elmc").string();
    tok.save(p1);
    auto loaded = ImageTokenizer::load(p1);
    CHECK(loaded.config().D == tok.config().D);
    CHECK(loaded.config().kind == tok.config().kind);
    loaded.save(p2);
    // reload/save is byte-stable (f32 storage is idempotent)
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(a == b);

    Rng rng(2);
    const Image img = random_image(32, 32, rng);
    CHECK(quantize_sign(loaded.encode(img)).bits == quantize_sign(loaded.encode(img)).bits);
}

TEST_CASE("vq tokenizer trains and tokenizes") {
    CorpusSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 5;
    spec.H = spec.W = 32;
    const auto corpus = generate_corpus(spec);
    TokenizerConfig cfg;
    cfg.kind = TokenizerKind::vq;
    cfg.D = 8;
    TokenizerTrainOptions opts;
    opts.steps = 60;
    opts.batch = 4;
    opts.lr = 1e-3;
    const auto result = train_tokenizer(corpus, cfg, opts);
    CHECK_FALSE(result.diverged);
    const auto ds =
        tokenize_dataset(corpus, result.tokenizer, QuantizerMode::vq, 0, VocabSpec(8, 1, 8));
    CHECK(ds.mode == QuantizerMode::vq);
    const auto rep = code_utilization(ds);
    CHECK(rep.total == 10 * 64);
    CHECK_THROWS_AS(
        tokenize_dataset(corpus, result.tokenizer, QuantizerMode::sign, 0, VocabSpec(8, 1, 8)),
        ConfigError);
}
