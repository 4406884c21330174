#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "elm/corpus.hpp"

using namespace elm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("image round trip stays within the quantization bound") {
    const auto dir = temp_dir("elm_img_test");
    Rng rng(3);
    Image img(16, 12, 1);
    for (auto& p : img.pixels) p = static_cast<real>(rng.uniform01());
    const std::string path = (dir / "x.pgm").string();
    write_image(path, img);
    const Image back = read_image(path);
    REQUIRE(back.H == 16);
    REQUIRE(back.W == 12);
    double max_err = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        max_err = std::max(max_err, std::abs(static_cast<double>(img.pixels[i]) -
                                             static_cast<double>(back.pixels[i])));
    CHECK(max_err <= 1.0 / 510.0 + 1e-12);
}

TEST_CASE("pixel extremes map to byte extremes") {
    const auto dir = temp_dir("elm_img_extremes");
    Image img(1, 2, 1);
    img.at(0, 0) = 0;
    img.at(0, 1) = 1;
    const std::string path = (dir / "e.pgm").string();
    write_image(path, img);
    std::ifstream f(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(static_cast<unsigned char>(all[all.size() - 2]) == 0);
    CHECK(static_cast<unsigned char>(all[all.size() - 1]) == 255);
}

TEST_CASE("all-zero image writes a zero raster") {
    const auto dir = temp_dir("elm_img_zero");
    Image img(4, 4, 1);
    const std::string path = (dir / "z.pgm").string();
    write_image(path, img);
    std::ifstream f(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string body = all.substr(all.size() - 16);
    for (char c : body) CHECK(c == 0);
}

TEST_CASE("malformed headers report the byte offset") {
    const auto dir = temp_dir("elm_img_bad");
    const std::string path = (dir / "bad.pgm").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "P7 zz";
    }
    try {
        read_image(path);
        CHECK(false);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    // truncated raster
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n4 4\n255\nab";
    }
    CHECK_THROWS_AS(read_image(path), DataError);
}

TEST_CASE("corpus generation is deterministic and exactly sized") {
    CorpusSpec spec;
    spec.num_classes = 10;
    spec.samples_per_class = 1;
    spec.H = spec.W = 32;
    spec.kind = CorpusKind::shapes;
    spec.master_seed = 7;
    const auto a = generate_corpus(spec);
    const auto b = generate_corpus(spec);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].class_id == static_cast<int>(i));
        CHECK(a[i].image.pixels == b[i].image.pixels);  // bit-identical
    }
}

TEST_CASE("empty corpus when samples_per_class is zero") {
    CorpusSpec spec;
    spec.samples_per_class = 0;
    CHECK(generate_corpus(spec).empty());
}

TEST_CASE("grammar images are identical within a class and differ across classes") {
    CorpusSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 3;
    spec.H = spec.W = 16;
    spec.kind = CorpusKind::grammar;
    const auto corpus = generate_corpus(spec);
    for (int c = 0; c < 4; ++c) {
        const auto& first = corpus[static_cast<std::size_t>(c) * 3].image.pixels;
        for (int s = 1; s < 3; ++s)
            CHECK(corpus[static_cast<std::size_t>(c) * 3 + s].image.pixels == first);
    }
    CHECK(corpus[0].image.pixels != corpus[3].image.pixels);
}

TEST_CASE("split: stratified, disjoint, union preserved, deterministic") {
    CorpusSpec spec;
    spec.num_classes = 10;
    spec.samples_per_class = 10;
    spec.H = spec.W = 8;
    const auto corpus = generate_corpus(spec);
    std::vector<ImageSample> train, val, train2, val2;
    split_corpus(corpus, 0.2, 11, train, val);
    split_corpus(corpus, 0.2, 11, train2, val2);
    CHECK(train.size() == 80);
    CHECK(val.size() == 20);
    int per_class[10] = {0};
    for (const auto& s : val) ++per_class[s.class_id];
    for (int c = 0; c < 10; ++c) CHECK(per_class[c] == 2);
    // determinism
    REQUIRE(val.size() == val2.size());
    for (std::size_t i = 0; i < val.size(); ++i) CHECK(val[i].seed == val2[i].seed);
    // fraction 0 -> empty val
    split_corpus(corpus, 0.0, 11, train, val);
    CHECK(val.empty());
    CHECK(train.size() == corpus.size());
    CHECK_THROWS_AS(split_corpus(corpus, 1.0, 11, train, val), ConfigError);
}

TEST_CASE("manifest round trip and corpus loading") {
    const auto dir = temp_dir("elm_corpus_io");
    CorpusSpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 2;
    spec.H = spec.W = 16;
    const auto corpus = generate_corpus(spec);
    write_corpus(dir.string(), corpus);
    const auto records = read_manifest((dir / "manifest.txt").string());
    REQUIRE(records.size() == 6);
    const auto loaded = load_corpus((dir / "manifest.txt").string());
    REQUIRE(loaded.size() == 6);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].class_id == corpus[i].class_id);
        double max_err = 0;
        for (std::size_t j = 0; j < loaded[i].image.pixels.size(); ++j)
            max_err = std::max(max_err,
                               std::abs(static_cast<double>(loaded[i].image.pixels[j]) -
                                        static_cast<double>(corpus[i].image.pixels[j])));
        CHECK(max_err <= 1.0 / 510.0 + 1e-12);
    }
}

TEST_CASE("nearest-class-mean separability on the shapes corpus") {
    CorpusSpec spec;
    spec.num_classes = 10;
    spec.samples_per_class = 40;
    spec.H = spec.W = 32;
    spec.master_seed = 7;
    const auto corpus = generate_corpus(spec);
    std::vector<ImageSample> train, val;
    split_corpus(corpus, 0.25, 3, train, val);

    const std::size_t npix = train[0].image.pixels.size();
    std::vector<std::vector<double>> means(10, std::vector<double>(npix, 0));
    std::vector<int> counts(10, 0);
    for (const auto& s : train) {
        for (std::size_t j = 0; j < npix; ++j)
            means[static_cast<std::size_t>(s.class_id)][j] += static_cast<double>(s.image.pixels[j]);
        ++counts[static_cast<std::size_t>(s.class_id)];
    }
    for (int c = 0; c < 10; ++c)
        for (auto& v : means[static_cast<std::size_t>(c)]) v /= counts[static_cast<std::size_t>(c)];

    int correct = 0;
    for (const auto& s : val) {
        int best = -1;
        double best_d = 0;
        for (int c = 0; c < 10; ++c) {
            double d = 0;
            for (std::size_t j = 0; j < npix; ++j) {
                const double t = static_cast<double>(s.image.pixels[j]) - means[static_cast<std::size_t>(c)][j];
                d += t * t;
            }
            if (best < 0 || d < best_d) {
                best = c;
                best_d = d;
            }
        }
        if (best == s.class_id) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(val.size());
    CHECK(acc >= 0.9);
}
