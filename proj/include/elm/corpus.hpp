#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/image.hpp"
#include "elm/rng.hpp"

namespace elm {

enum class CorpusKind { shapes, grammar };

// Procedurally generated class-labeled corpus. The shapes kind gives each
// class a distinct textured pattern with per-sample jitter; the grammar kind
// renders a per-class glyph grid with no per-sample variation at all, so a
// frozen tokenizer maps every sample of a class to one fixed token sequence.
struct CorpusSpec {
    int num_classes = 10;
    int samples_per_class = 500;
    int H = 32, W = 32, C = 1;
    CorpusKind kind = CorpusKind::shapes;
    std::uint64_t master_seed = 7;
};

CorpusKind corpus_kind_from_string(const std::string& s);
std::string to_string(CorpusKind k);

// Exactly num_classes * samples_per_class images, ordered by (class, sample).
// Pure function of the spec: per-sample RNG streams are derived from
// (master_seed, global sample index), so parallel generation matches serial.
std::vector<ImageSample> generate_corpus(const CorpusSpec& spec);

// Stratified split; val gets floor(per-class count * val_fraction) samples.
void split_corpus(const std::vector<ImageSample>& corpus, double val_fraction,
                  std::uint64_t seed, std::vector<ImageSample>& train,
                  std::vector<ImageSample>& val);

// Manifest: one line per image, "relative-path class_id seed".
struct ManifestRecord {
    std::string path;
    int class_id = 0;
    std::uint64_t seed = 0;
};

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

// Writes images as PGM/PPM next to the manifest and returns its records.
std::vector<ManifestRecord> write_corpus(const std::string& dir,
                                         const std::vector<ImageSample>& corpus);
// Loads every image referenced by a manifest (paths relative to it).
std::vector<ImageSample> load_corpus(const std::string& manifest_path);

}  // namespace elm
