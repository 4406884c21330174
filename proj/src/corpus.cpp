#include "elm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "elm/errors.hpp"

namespace elm {

namespace fs = std::filesystem;

CorpusKind corpus_kind_from_string(const std::string& s) {
    if (s == "shapes") return CorpusKind::shapes;
    if (s == "grammar") return CorpusKind::grammar;
    throw ConfigError("unknown corpus kind \"" + s + "\" (want shapes|grammar)");
}

std::string to_string(CorpusKind k) { return k == CorpusKind::shapes ? "shapes" : "grammar"; }

namespace {

void validate(const CorpusSpec& s) {
    if (s.num_classes < 1 || s.samples_per_class < 0 || s.H < 1 || s.W < 1)
        throw ConfigError("corpus spec needs positive counts and dimensions");
    if (s.C != 1 && s.C != 3) throw ConfigError("corpus supports C=1 or C=3");
}

real clamp01(real v) { return std::clamp(v, static_cast<real>(0), static_cast<real>(1)); }

// ---- shapes kind ----
// Ten pattern families cycled by class id. Per-sample jitter moves centers,
// phases and intensities; light speckle keeps local patches varied.
void render_shape(Image& img, int class_id, Rng& rng) {
    const int H = img.H, W = img.W;
    const int kind = class_id % 10;
    const real bg = static_cast<real>(0.12 + 0.05 * ((class_id / 10) % 3) + rng.uniform(0, 0.06));
    const real fg = static_cast<real>(0.80 + rng.uniform(0, 0.16));
    const double cy = H / 2.0 + rng.uniform(-2.0, 2.0);
    const double cx = W / 2.0 + rng.uniform(-2.0, 2.0);
    const double size = std::min(H, W) * (0.28 + rng.uniform(0, 0.08));
    // small phase jitter keeps class means structured for the periodic kinds
    const double phase = rng.uniform(0, 0.7);

    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double dist = std::sqrt(dy * dy + dx * dx);
            real v = bg;
            switch (kind) {
                case 0:  // filled disk
                    if (dist < size) v = fg;
                    break;
                case 1:  // square outline
                    if (std::max(std::abs(dy), std::abs(dx)) < size &&
                        std::max(std::abs(dy), std::abs(dx)) > size - 3.0)
                        v = fg;
                    break;
                case 2:  // ring
                    if (dist < size && dist > size * 0.55) v = fg;
                    break;
                case 3:  // plus
                    if ((std::abs(dy) < size * 0.28 && std::abs(dx) < size) ||
                        (std::abs(dx) < size * 0.28 && std::abs(dy) < size))
                        v = fg;
                    break;
                case 4:  // horizontal stripes
                    v = static_cast<real>(
                        bg + (fg - bg) * 0.5 * (1.0 + std::sin(r * 0.9 + phase)));
                    break;
                case 5:  // vertical stripes
                    v = static_cast<real>(
                        bg + (fg - bg) * 0.5 * (1.0 + std::sin(c * 0.9 + phase)));
                    break;
                case 6:  // checkerboard
                    v = ((r / 4 + c / 4) % 2) ? fg : bg;
                    break;
                case 7:  // filled diamond
                    if (std::abs(dy) + std::abs(dx) < size * 1.3) v = fg;
                    break;
                case 8:  // dot grid
                    if (r % 6 < 2 && c % 6 < 2) v = fg;
                    break;
                case 9:  // diagonal gradient with a dark disk
                    v = static_cast<real>(bg + (fg - bg) * (r + c) / static_cast<double>(H + W));
                    if (dist < size * 0.5) v = static_cast<real>(bg * 0.4);
                    break;
            }
            for (int ch = 0; ch < img.C; ++ch) {
                real chv = v;
                if (img.C == 3) chv = clamp01(v * static_cast<real>(1.0 - 0.18 * ch));
                img.at(r, c, ch) = clamp01(chv + static_cast<real>(rng.uniform(-0.05, 0.05)));
            }
        }
    }
}

// ---- grammar kind ----
// 4x4 cells; the glyph in each cell is a pure function of (class, row, col).
// No sample-level randomness: every image of a class is bit-identical, which
// makes the tokenized sequence an exact function of the class.
std::uint32_t cell_hash(int class_id, int r, int c) {
    std::uint64_t x = 0x9E3779B97F4A7C15ull;
    x ^= static_cast<std::uint64_t>(class_id) * 0xD1B54A32D192ED03ull;
    x ^= static_cast<std::uint64_t>(r) * 0x8CB92BA72F3D8DD7ull;
    x ^= static_cast<std::uint64_t>(c) * 0xA24BAED4963EE407ull;
    x ^= x >> 29;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 32;
    return static_cast<std::uint32_t>(x);
}

void render_grammar(Image& img, int class_id) {
    constexpr int cell = 4;
    constexpr real levels[4] = {static_cast<real>(0.10), static_cast<real>(0.35),
                                static_cast<real>(0.65), static_cast<real>(0.90)};
    for (int r = 0; r < img.H; ++r) {
        for (int c = 0; c < img.W; ++c) {
            const std::uint32_t h = cell_hash(class_id, r / cell, c / cell);
            const real lo = levels[h & 3];
            const real hi = levels[(h >> 2) & 3];
            const int pattern = (h >> 4) & 3;
            const int rr = r % cell, cc = c % cell;
            bool on = false;
            switch (pattern) {
                case 0: on = true; break;                 // solid hi
                case 1: on = rr < cell / 2; break;        // top/bottom split
                case 2: on = cc < cell / 2; break;        // left/right split
                case 3: on = (rr + cc) % 2 == 0; break;   // fine checker
            }
            const real v = on ? hi : lo;
            for (int ch = 0; ch < img.C; ++ch) img.at(r, c, ch) = v;
        }
    }
}

}  // namespace

std::vector<ImageSample> generate_corpus(const CorpusSpec& spec) {
    validate(spec);
    const std::size_t total =
        static_cast<std::size_t>(spec.num_classes) * static_cast<std::size_t>(spec.samples_per_class);
    std::vector<ImageSample> out(total);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(total); ++i) {
        const int class_id = static_cast<int>(i) / spec.samples_per_class;
        ImageSample& s = out[static_cast<std::size_t>(i)];
        s.class_id = class_id;
        s.seed = spec.master_seed ^ (static_cast<std::uint64_t>(i) << 20);
        s.image = Image(spec.H, spec.W, spec.C);
        if (spec.kind == CorpusKind::shapes) {
            Rng rng = Rng::derive(spec.master_seed, static_cast<std::uint64_t>(i));
            render_shape(s.image, class_id, rng);
        } else {
            render_grammar(s.image, class_id);
        }
    }
    return out;
}

void split_corpus(const std::vector<ImageSample>& corpus, double val_fraction, std::uint64_t seed,
                  std::vector<ImageSample>& train, std::vector<ImageSample>& val) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("val_fraction must lie in [0,1), got " + std::to_string(val_fraction));
    train.clear();
    val.clear();
    int max_class = -1;
    for (const auto& s : corpus) max_class = std::max(max_class, s.class_id);
    for (int c = 0; c <= max_class; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            if (corpus[i].class_id == c) idx.push_back(i);
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(c));
        // Fisher-Yates
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.bounded(i)]);
        const std::size_t n_val = static_cast<std::size_t>(
            std::floor(static_cast<double>(idx.size()) * val_fraction));
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? val : train).push_back(corpus[idx[i]]);
    }
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path + " for writing");
    for (const auto& r : records) f << r.path << " " << r.class_id << " " << r.seed << "\n";
    if (!f) throw DataError("short write to " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        ManifestRecord r;
        if (!(is >> r.path >> r.class_id >> r.seed))
            throw DataError("malformed manifest line " + std::to_string(lineno) + " in " + path);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ManifestRecord> write_corpus(const std::string& dir,
                                         const std::vector<ImageSample>& corpus) {
    fs::create_directories(dir);
    std::vector<ManifestRecord> records;
    records.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        std::ostringstream name;
        name << "img_" << s.class_id << "_" << i << (s.image.C == 1 ? ".pgm" : ".ppm");
        write_image((fs::path(dir) / name.str()).string(), s.image);
        records.push_back({name.str(), s.class_id, s.seed});
    }
    write_manifest((fs::path(dir) / "manifest.txt").string(), records);
    return records;
}

std::vector<ImageSample> load_corpus(const std::string& manifest_path) {
    const auto records = read_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<ImageSample> out(records.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(records.size()); ++i) {
        const auto& r = records[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] =
            ImageSample{read_image((base / r.path).string()), r.class_id, r.seed};
    }
    return out;
}

}  // namespace elm
