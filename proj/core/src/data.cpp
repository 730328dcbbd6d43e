#include "carl/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "carl/errors.hpp"

namespace carl {

std::size_t TokenBatch::real_len(std::size_t i) const {
    std::size_t len = 0;
    for (std::size_t j = 0; j < t; ++j) len += attention_mask[i * t + j] > 0.5 ? 1 : 0;
    return len;
}

double normalize_labels(double x, double lo, double hi) {
    if (hi <= lo)
        throw ConfigError("normalize_labels: scale hi (" + std::to_string(hi) +
                          ") must exceed lo (" + std::to_string(lo) + ")");
    if (x < lo || x > hi)
        throw DataError("normalize_labels: value " + std::to_string(x) + " outside scale [" +
                        std::to_string(lo) + "," + std::to_string(hi) + "]");
    return 2.0 * (x - lo) / (hi - lo) - 1.0;
}

Corpus load_corpus(const std::string& path, std::pair<double, double> scale) {
    std::ifstream in(path);
    if (!in) throw DataError("load_corpus: cannot open " + path);
    Corpus corpus;
    corpus.source_scale = scale;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("load_corpus: " + path + ":" + std::to_string(line_no) +
                            ": parse error: " + e.what());
        }
        for (const char* key : {"text", "valence", "arousal"}) {
            if (!j.contains(key))
                throw DataError("load_corpus: " + path + ":" + std::to_string(line_no) +
                                ": missing key '" + key + "'");
        }
        Record rec;
        rec.text = j["text"].get<std::string>();
        if (rec.text.empty())
            throw DataError("load_corpus: " + path + ":" + std::to_string(line_no) +
                            ": empty text");
        try {
            rec.valence = normalize_labels(j["valence"].get<double>(), scale.first, scale.second);
            rec.arousal = normalize_labels(j["arousal"].get<double>(), scale.first, scale.second);
        } catch (const DataError& e) {
            throw DataError("load_corpus: " + path + ":" + std::to_string(line_no) + ": " +
                            e.what());
        }
        if (j.contains("emotion")) rec.emotion = j["emotion"].get<std::string>();
        corpus.records.push_back(std::move(rec));
    }
    if (corpus.records.empty())
        std::cerr << "warning: corpus " << path << " is empty\n";
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw DataError("save_corpus: cannot write " + path);
    for (const auto& rec : corpus.records) {
        nlohmann::json j{{"text", rec.text}, {"valence", rec.valence}, {"arousal", rec.arousal}};
        if (!rec.emotion.empty()) j["emotion"] = rec.emotion;
        out << j.dump() << '\n';
    }
}

std::pair<std::vector<std::size_t>, std::vector<double>> tokenize(const std::string& text,
                                                                  std::size_t max_len) {
    if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
    std::vector<std::size_t> ids(max_len, kPadId);
    std::vector<double> mask(max_len, 0.0);
    ids[0] = kClsId;
    mask[0] = 1.0;
    const std::size_t n_bytes = std::min(text.size(), max_len - 1);
    for (std::size_t i = 0; i < n_bytes; ++i) {
        ids[i + 1] = static_cast<unsigned char>(text[i]);
        mask[i + 1] = 1.0;
    }
    return {std::move(ids), std::move(mask)};
}

std::string detokenize(const std::vector<std::size_t>& ids) {
    std::string text;
    for (auto id : ids) {
        if (id < 256) text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return text;
}

std::vector<TokenBatch> make_batches(const Corpus& corpus, std::size_t batch_size,
                                     std::uint64_t seed, std::size_t max_len) {
    if (batch_size < 2) throw ConfigError("make_batches: batch_size must be >= 2");
    if (corpus.size() < 2)
        throw ContractError("make_batches: contrastive training needs >= 2 records, got " +
                            std::to_string(corpus.size()));
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(i + 1)]);

    std::vector<TokenBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - start);
        if (n < 2) break;  // drop degenerate remainder
        std::size_t t = 0;
        std::vector<std::pair<std::vector<std::size_t>, std::vector<double>>> toks(n);
        for (std::size_t i = 0; i < n; ++i) {
            toks[i] = tokenize(corpus.records[order[start + i]].text, max_len);
            std::size_t len = 0;
            for (double m : toks[i].second) len += m > 0.5 ? 1 : 0;
            t = std::max(t, len);
        }
        TokenBatch batch;
        batch.n = n;
        batch.t = t;
        batch.token_ids.assign(n * t, kPadId);
        batch.attention_mask.assign(n * t, 0.0);
        batch.labels_va.resize(n * 2);
        batch.emotions.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Record& rec = corpus.records[order[start + i]];
            for (std::size_t j = 0; j < t; ++j) {
                batch.token_ids[i * t + j] = toks[i].first[j];
                batch.attention_mask[i * t + j] = toks[i].second[j];
            }
            batch.labels_va[i * 2] = rec.valence;
            batch.labels_va[i * 2 + 1] = rec.arousal;
            batch.emotions[i] = rec.emotion;
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

const std::array<std::string, 4>& quadrant_names() {
    static const std::array<std::string, 4> names{"joy", "calm", "anger", "sadness"};
    return names;
}

const std::array<std::vector<std::string>, 4>& default_themes() {
    // disjoint word lists, one per valence-arousal quadrant
    static const std::array<std::vector<std::string>, 4> themes{{
        // joy: +valence +arousal
        {"thrilled", "ecstatic", "celebrate", "wonderful", "excited", "amazing", "delighted",
         "fantastic", "cheering", "victory", "laughing", "party"},
        // calm: +valence -arousal
        {"peaceful", "serene", "relaxed", "gentle", "quiet", "content", "soothing", "tranquil",
         "restful", "mellow", "cozy", "calm"},
        // anger: -valence +arousal
        {"furious", "outraged", "screaming", "hate", "infuriating", "hostile", "rage",
         "disgusting", "enraged", "violent", "fuming", "bitter"},
        // sadness: -valence -arousal
        {"miserable", "gloomy", "lonely", "hopeless", "weary", "sorrow", "grief", "despair",
         "mourning", "dreary", "tearful", "defeated"},
    }};
    return themes;
}

Corpus generate_synthetic(std::size_t n_per_quadrant,
                          const std::array<std::vector<std::string>, 4>& themes, double noise,
                          std::uint64_t seed) {
    if (noise < 0.0 || noise >= 0.5)
        throw ConfigError("generate_synthetic: noise must be in [0, 0.5)");
    for (const auto& list : themes)
        if (list.empty()) throw ConfigError("generate_synthetic: empty theme word list");

    static const std::array<std::pair<double, double>, 4> centers{
        {{0.7, 0.7}, {0.7, -0.7}, {-0.7, 0.7}, {-0.7, -0.7}}};
    Rng rng(seed);
    Corpus corpus;
    for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t i = 0; i < n_per_quadrant; ++i) {
            const std::size_t n_words = 5 + rng.uniform_int(8);  // 5..12
            std::string text;
            for (std::size_t w = 0; w < n_words; ++w) {
                if (w) text += ' ';
                text += themes[q][rng.uniform_int(themes[q].size())];
            }
            Record rec;
            rec.text = std::move(text);
            rec.valence = std::clamp(
                centers[q].first + (noise > 0.0 ? rng.uniform(-noise, noise) : 0.0), -1.0, 1.0);
            rec.arousal = std::clamp(
                centers[q].second + (noise > 0.0 ? rng.uniform(-noise, noise) : 0.0), -1.0, 1.0);
            rec.emotion = quadrant_names()[q];
            corpus.records.push_back(std::move(rec));
        }
    }
    return corpus;
}

Corpus generate_synthetic(std::size_t n_per_quadrant, double noise, std::uint64_t seed) {
    return generate_synthetic(n_per_quadrant, default_themes(), noise, seed);
}

}  // namespace carl
