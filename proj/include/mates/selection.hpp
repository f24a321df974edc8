#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mates/corpus.hpp"

namespace mates {

struct SelectionConfig {
    std::int64_t k = 0;
    double tau = 1.0;
    std::uint64_t seed = 0;
};

// Ids of the k largest (score/tau + Gumbel noise); ids are positions in the
// scores vector, returned in ascending order. tau = 0 is the deterministic
// top-k with ties broken by ascending id.
std::vector<std::int64_t> gumbel_top_k(const std::vector<double>& scores,
                                       const SelectionConfig& cfg);

// Uniform sample of k distinct ids from [0, n), ascending.
std::vector<std::int64_t> random_select(std::int64_t n, std::int64_t k, std::uint64_t seed);

// Importance weight per pool example: mean log(P_ref / P_pool) over its
// hashed bigrams. Both distributions are add-one smoothed over counts
// rescaled to a fixed pseudo-total, so weights depend only on bigram
// frequencies, not on corpus size.
std::vector<double> ngram_proximity_weights(const std::vector<Example>& pool,
                                            const std::vector<Example>& reference);

// Gumbel-Top-k over the proximity weights at temperature 1.
std::vector<std::int64_t> ngram_proximity_select(const std::vector<Example>& pool,
                                                 const std::vector<Example>& reference,
                                                 std::int64_t k, std::uint64_t seed);

struct SelectionRecord {
    std::int64_t id = 0;
    double score = 0.0;
    std::int64_t stage = 0;

    bool operator==(const SelectionRecord&) const = default;
};

// JSON-lines persistence, one {id, score, stage} object per line.
void save_selection(const std::vector<SelectionRecord>& records, const std::string& path);
std::vector<SelectionRecord> load_selection(const std::string& path);

}  // namespace mates
