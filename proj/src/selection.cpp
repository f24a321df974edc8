#include "mates/selection.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mates/error.hpp"
#include "mates/rng.hpp"
#include "hashing.hpp"

namespace mates {

namespace {

using json = nlohmann::json;

constexpr std::int64_t kBigramDim = 4096;
constexpr std::uint64_t kBigramSeed = 0x6e6772616d736564ULL;

// Smoothed counts are rescaled to this fixed pseudo-total so that the
// resulting distribution depends only on bigram frequencies; duplicating a
// corpus then leaves every probability bitwise unchanged. Matching the table
// size mixes the empirical distribution equally with uniform, which keeps
// unseen-bigram log ratios small for same-distribution corpora while leaving
// systematic differences clearly visible.
constexpr double kPseudoTotal = static_cast<double>(kBigramDim);

std::string format_double(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("cannot format value");
    return std::string(buf, end);
}

void check_selection_args(std::int64_t n, std::int64_t k) {
    if (k < 1 || k > n)
        throw ContractError("cannot select " + std::to_string(k) + " of " + std::to_string(n) +
                            " candidates");
}

std::vector<std::int64_t> top_k_ids(const std::vector<double>& keys, std::int64_t k) {
    std::vector<std::int64_t> ids(keys.size());
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(),
                      [&keys](std::int64_t a, std::int64_t b) {
                          const double ka = keys[static_cast<std::size_t>(a)];
                          const double kb = keys[static_cast<std::size_t>(b)];
                          if (ka != kb) return ka > kb;
                          return a < b;
                      });
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::size_t bigram_bucket(std::int32_t a, std::int32_t b) {
    std::uint64_t h = kBigramSeed;
    h = hashing::mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)));
    h = hashing::mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(b)));
    return static_cast<std::size_t>(h % static_cast<std::uint64_t>(kBigramDim));
}

// Add-one smoothed bigram distribution over hash buckets, scale-free in the
// corpus size.
std::vector<double> bigram_distribution(const std::vector<Example>& corpus) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(kBigramDim), 0);
    std::int64_t total = 0;
    for (const Example& x : corpus) {
        for (std::size_t i = 0; i + 1 < x.tokens.size(); ++i) {
            counts[bigram_bucket(x.tokens[i], x.tokens[i + 1])] += 1;
            total += 1;
        }
    }
    std::vector<double> probs(static_cast<std::size_t>(kBigramDim));
    const double denom = kPseudoTotal + static_cast<double>(kBigramDim);
    for (std::size_t b = 0; b < probs.size(); ++b) {
        const double scaled =
            total > 0 ? static_cast<double>(counts[b]) * kPseudoTotal / static_cast<double>(total)
                      : 0.0;
        probs[b] = (scaled + 1.0) / denom;
    }
    return probs;
}

}  // namespace

std::vector<std::int64_t> gumbel_top_k(const std::vector<double>& scores,
                                       const SelectionConfig& cfg) {
    const std::int64_t n = static_cast<std::int64_t>(scores.size());
    check_selection_args(n, cfg.k);
    if (cfg.tau < 0.0)
        throw ConfigError("sampling temperature must be non-negative, got " +
                          std::to_string(cfg.tau));
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i]))
            throw NumericError("non-finite score at id " + std::to_string(i));
    }
    if (cfg.tau == 0.0) return top_k_ids(scores, cfg.k);

    Rng rng(cfg.seed);
    std::vector<double> keys(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double u = rng.next_double();
        u = std::min(std::max(u, 1e-300), 1.0 - 1e-16);
        keys[i] = scores[i] / cfg.tau + (-std::log(-std::log(u)));
    }
    return top_k_ids(keys, cfg.k);
}

std::vector<std::int64_t> random_select(std::int64_t n, std::int64_t k, std::uint64_t seed) {
    check_selection_args(n, k);
    std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    Rng rng(seed);
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j =
            i + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<double> ngram_proximity_weights(const std::vector<Example>& pool,
                                            const std::vector<Example>& reference) {
    const std::vector<double> p_ref = bigram_distribution(reference);
    const std::vector<double> p_pool = bigram_distribution(pool);
    std::vector<double> weights(pool.size(), 0.0);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const Example& x = pool[i];
        if (x.tokens.size() < 2) continue;
        double sum = 0.0;
        for (std::size_t t = 0; t + 1 < x.tokens.size(); ++t) {
            const std::size_t b = bigram_bucket(x.tokens[t], x.tokens[t + 1]);
            sum += std::log(p_ref[b] / p_pool[b]);
        }
        weights[i] = sum / static_cast<double>(x.tokens.size() - 1);
    }
    return weights;
}

std::vector<std::int64_t> ngram_proximity_select(const std::vector<Example>& pool,
                                                 const std::vector<Example>& reference,
                                                 std::int64_t k, std::uint64_t seed) {
    SelectionConfig cfg;
    cfg.k = k;
    cfg.tau = 1.0;
    cfg.seed = seed;
    return gumbel_top_k(ngram_proximity_weights(pool, reference), cfg);
}

void save_selection(const std::vector<SelectionRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path + "' for writing");
    for (const auto& r : records) {
        if (!std::isfinite(r.score))
            throw ContractError("selection record for id " + std::to_string(r.id) +
                                " has non-finite score");
        out << "{\"id\":" << r.id << ",\"score\":" << format_double(r.score)
            << ",\"stage\":" << r.stage << "}\n";
    }
    if (!out) throw IOError("write failed for '" + path + "'");
}

std::vector<SelectionRecord> load_selection(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open '" + path + "' for reading");
    std::vector<SelectionRecord> records;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path + " line " + std::to_string(line_no) + ": invalid JSON");
        if (!j.contains("id") || !j.contains("score") || !j.contains("stage") ||
            !j["id"].is_number_integer() || !j["score"].is_number() ||
            !j["stage"].is_number_integer())
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected integer id, numeric score, integer stage");
        SelectionRecord r;
        r.id = j["id"].get<std::int64_t>();
        r.score = j["score"].get<double>();
        r.stage = j["stage"].get<std::int64_t>();
        if (!std::isfinite(r.score))
            throw ParseError(path + " line " + std::to_string(line_no) + ": non-finite score");
        records.push_back(r);
    }
    return records;
}

}  // namespace mates
