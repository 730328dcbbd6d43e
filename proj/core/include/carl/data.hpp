#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "carl/rng.hpp"

namespace carl {

// Byte-level vocabulary: raw bytes 0..255, then CLS and PAD.
constexpr std::size_t kClsId = 256;
constexpr std::size_t kPadId = 257;
constexpr std::size_t kVocabSize = 258;

struct Record {
    std::string text;
    double valence = 0.0;  // in [-1,1] once normalized
    double arousal = 0.0;
    std::string emotion;  // optional categorical tag, empty if absent
};

struct Corpus {
    std::vector<Record> records;
    std::pair<double, double> source_scale{-1.0, 1.0};

    std::size_t size() const { return records.size(); }
};

struct TokenBatch {
    std::size_t n = 0;  // batch size
    std::size_t t = 0;  // max sequence length in batch
    std::vector<std::size_t> token_ids;  // [n*t]
    std::vector<double> attention_mask;  // [n*t], 1 for real tokens
    std::vector<double> labels_va;       // [n*2]
    std::vector<std::string> emotions;   // [n]

    std::size_t id_at(std::size_t i, std::size_t j) const { return token_ids[i * t + j]; }
    double mask_at(std::size_t i, std::size_t j) const { return attention_mask[i * t + j]; }
    // real (unpadded) tokens in sentence i, CLS included
    std::size_t real_len(std::size_t i) const;
};

// Affine map [lo,hi] -> [-1,1]; endpoints map exactly.
double normalize_labels(double x, double lo, double hi);

// JSON-lines corpus: keys text/valence/arousal, optional emotion.
// Raw labels on scale [lo,hi] are normalized on load.
Corpus load_corpus(const std::string& path, std::pair<double, double> scale);
void save_corpus(const std::string& path, const Corpus& corpus);

// Byte-level ids prefixed with CLS, truncated/padded to max_len.
std::pair<std::vector<std::size_t>, std::vector<double>> tokenize(const std::string& text,
                                                                  std::size_t max_len);
// Inverse for real (non-CLS/PAD) positions.
std::string detokenize(const std::vector<std::size_t>& ids);

// Seeded shuffle, T per batch = longest sequence in that batch; a trailing
// batch of size 1 is dropped (contrastive loss needs N >= 2).
std::vector<TokenBatch> make_batches(const Corpus& corpus, std::size_t batch_size,
                                     std::uint64_t seed, std::size_t max_len);

// Four valence-arousal quadrants with centers (+-0.7, +-0.7), one disjoint
// theme word list each; labels are center + uniform(-noise, noise), clipped.
Corpus generate_synthetic(std::size_t n_per_quadrant,
                          const std::array<std::vector<std::string>, 4>& themes, double noise,
                          std::uint64_t seed);
Corpus generate_synthetic(std::size_t n_per_quadrant, double noise, std::uint64_t seed);

const std::array<std::vector<std::string>, 4>& default_themes();
const std::array<std::string, 4>& quadrant_names();

}  // namespace carl
