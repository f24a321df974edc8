#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mates {

enum class QualityTag { clean, noise, shuffled };

std::string to_string(QualityTag tag);
QualityTag quality_tag_from_string(const std::string& s);

// One tokenized sequence. quality_tag is generation-time ground truth: it is
// persisted for evaluation but selectors never read it.
struct Example {
    std::int64_t id = 0;
    std::vector<std::int32_t> tokens;
    QualityTag quality_tag = QualityTag::clean;

    bool operator==(const Example&) const = default;
};

struct CorpusSplit {
    std::vector<Example> train_pool;  // D_t
    std::vector<Example> holdout;     // D_h
    std::vector<Example> reference;   // D_r, clean-process only

    bool operator==(const CorpusSplit&) const = default;
};

struct CorpusSizes {
    std::int64_t train = 0;
    std::int64_t holdout = 0;
    std::int64_t reference = 1024;
};

// Mixture fractions over quality tags; must sum to 1 within 1e-9.
struct QualityMix {
    double clean = 1.0;
    double noise = 0.0;
    double shuffled = 0.0;
};

// Clean sequences follow a fixed sparse order-2 Markov grammar (at most 8
// successors per state, skewed unigram base distribution); noise is i.i.d.
// uniform tokens; shuffled permutes a clean sequence's token order. D_t and
// D_h share the requested mixture, D_r is clean only. Ids are unique across
// splits.
CorpusSplit generate(std::uint64_t seed, const CorpusSizes& sizes, const QualityMix& mix,
                     std::int64_t vocab_size = 256, std::int64_t seq_len = 64);

// JSON-lines persistence: one example per line with fields id, tokens,
// quality_tag, split. Paths ending in .gz are gzip-compressed (load always
// accepts the compressed variant; save honors the extension).
void save(const CorpusSplit& split, const std::string& path);
CorpusSplit load(const std::string& path);

}  // namespace mates
