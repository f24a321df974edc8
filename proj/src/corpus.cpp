#include "mates/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mates/error.hpp"
#include "mates/rng.hpp"

namespace mates {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kGrammarSeed = 0x6d61726b6f763032ULL;
constexpr int kMaxSuccessors = 8;
constexpr double kZipfExponent = 0.7;

// Fixed order-2 Markov grammar: each (prev2, prev1) state transitions to at
// most 8 successor tokens with geometrically decaying weights. Successor
// identities are drawn from a Zipf-skewed base distribution so the unigram
// marginal stays far from uniform.
struct Grammar {
    std::int64_t vocab;
    std::vector<double> unigram_cum;
    std::vector<std::array<std::int32_t, kMaxSuccessors>> succ;
    std::vector<std::array<double, kMaxSuccessors>> cum;
    std::vector<std::uint8_t> n_succ;

    explicit Grammar(std::int64_t v) : vocab(v) {
        Rng rng(derive_seed(kGrammarSeed, static_cast<std::uint64_t>(v)));
        unigram_cum.resize(static_cast<std::size_t>(v));
        double total = 0.0;
        for (std::int64_t i = 0; i < v; ++i) {
            total += std::pow(static_cast<double>(i + 1), -kZipfExponent);
            unigram_cum[static_cast<std::size_t>(i)] = total;
        }
        for (double& c : unigram_cum) c /= total;
        unigram_cum.back() = 1.0;

        const std::size_t n_states = static_cast<std::size_t>(v) * static_cast<std::size_t>(v);
        succ.resize(n_states);
        cum.resize(n_states);
        n_succ.resize(n_states);
        const std::uint64_t ns_span =
            static_cast<std::uint64_t>(std::min<std::int64_t>(kMaxSuccessors, v) - 1);
        for (std::size_t s = 0; s < n_states; ++s) {
            const int ns = 2 + static_cast<int>(rng.next_below(ns_span));
            n_succ[s] = static_cast<std::uint8_t>(ns);
            for (int j = 0; j < ns; ++j) {
                std::int32_t candidate;
                bool duplicate;
                do {
                    candidate = sample_unigram(rng);
                    duplicate = false;
                    for (int p = 0; p < j; ++p) duplicate |= (succ[s][p] == candidate);
                } while (duplicate);
                succ[s][static_cast<std::size_t>(j)] = candidate;
            }
            double acc = 0.0;
            for (int j = 0; j < ns; ++j) {
                acc += std::pow(0.5, j);
                cum[s][static_cast<std::size_t>(j)] = acc;
            }
            for (int j = 0; j < ns; ++j) cum[s][static_cast<std::size_t>(j)] /= acc;
            cum[s][static_cast<std::size_t>(ns - 1)] = 1.0;
        }
    }

    std::int32_t sample_unigram(Rng& rng) const {
        const double u = rng.next_double();
        const auto it = std::lower_bound(unigram_cum.begin(), unigram_cum.end(), u);
        return static_cast<std::int32_t>(it - unigram_cum.begin());
    }

    std::int32_t sample_next(Rng& rng, std::int32_t prev2, std::int32_t prev1) const {
        const std::size_t s = static_cast<std::size_t>(prev2) * static_cast<std::size_t>(vocab) +
                              static_cast<std::size_t>(prev1);
        const double u = rng.next_double();
        const int ns = n_succ[s];
        for (int j = 0; j < ns; ++j)
            if (u <= cum[s][static_cast<std::size_t>(j)]) return succ[s][static_cast<std::size_t>(j)];
        return succ[s][static_cast<std::size_t>(ns - 1)];
    }
};

const Grammar& grammar_for(std::int64_t vocab) {
    static std::mutex mu;
    static std::map<std::int64_t, std::unique_ptr<Grammar>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[vocab];
    if (!slot) slot = std::make_unique<Grammar>(vocab);
    return *slot;
}

std::vector<std::int32_t> sample_clean(const Grammar& g, Rng& rng, std::int64_t seq_len) {
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(seq_len));
    tokens[0] = g.sample_unigram(rng);
    if (seq_len > 1) tokens[1] = g.sample_unigram(rng);
    for (std::int64_t i = 2; i < seq_len; ++i)
        tokens[static_cast<std::size_t>(i)] =
            g.sample_next(rng, tokens[static_cast<std::size_t>(i - 2)],
                          tokens[static_cast<std::size_t>(i - 1)]);
    return tokens;
}

// Largest-remainder apportionment so tag counts sum exactly to n.
std::array<std::int64_t, 3> mix_counts(const QualityMix& mix, std::int64_t n) {
    const std::array<double, 3> frac{mix.clean, mix.noise, mix.shuffled};
    std::array<std::int64_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::int64_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = frac[static_cast<std::size_t>(i)] * static_cast<double>(n);
        counts[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::floor(exact));
        remainder[static_cast<std::size_t>(i)] =
            exact - std::floor(exact);
        assigned += counts[static_cast<std::size_t>(i)];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainder[static_cast<std::size_t>(a)] >
                                                remainder[static_cast<std::size_t>(b)]; });
    for (std::int64_t left = n - assigned; left > 0; --left)
        ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(n - assigned - left)])];
    return counts;
}

std::vector<Example> generate_mixed(const Grammar& g, std::uint64_t seed, std::uint64_t split_tag,
                                    std::int64_t n, const QualityMix& mix, std::int64_t vocab,
                                    std::int64_t seq_len, std::int64_t first_id) {
    const auto counts = mix_counts(mix, n);
    std::vector<QualityTag> tags;
    tags.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < counts[0]; ++i) tags.push_back(QualityTag::clean);
    for (std::int64_t i = 0; i < counts[1]; ++i) tags.push_back(QualityTag::noise);
    for (std::int64_t i = 0; i < counts[2]; ++i) tags.push_back(QualityTag::shuffled);
    Rng assign(derive_seed(seed, seed_tag::corpus_assign, split_tag));
    assign.shuffle(tags);

    Rng clean_rng(derive_seed(seed, seed_tag::corpus_clean, split_tag));
    Rng noise_rng(derive_seed(seed, seed_tag::corpus_noise, split_tag));
    Rng shuffle_rng(derive_seed(seed, seed_tag::corpus_shuffle, split_tag));

    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Example ex;
        ex.id = first_id + i;
        ex.quality_tag = tags[static_cast<std::size_t>(i)];
        switch (ex.quality_tag) {
            case QualityTag::clean:
                ex.tokens = sample_clean(g, clean_rng, seq_len);
                break;
            case QualityTag::noise:
                ex.tokens.resize(static_cast<std::size_t>(seq_len));
                for (auto& t : ex.tokens)
                    t = static_cast<std::int32_t>(
                        noise_rng.next_below(static_cast<std::uint64_t>(vocab)));
                break;
            case QualityTag::shuffled:
                ex.tokens = sample_clean(g, clean_rng, seq_len);
                shuffle_rng.shuffle(ex.tokens);
                break;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::string read_all(const std::string& path) {
    if (path.size() > 3 && path.substr(path.size() - 3) == ".gz") {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw IOError("cannot open " + path);
        std::string content;
        char buf[1 << 16];
        int got;
        while ((got = gzread(f, buf, sizeof(buf))) > 0) content.append(buf, static_cast<std::size_t>(got));
        const bool bad = got < 0;
        gzclose(f);
        if (bad) throw IOError("gzip read failed for " + path);
        return content;
    }
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IOError("cannot open " + path);
    std::string content;
    char buf[1 << 16];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) content.append(buf, got);
    std::fclose(f);
    return content;
}

void write_all(const std::string& path, const std::string& content) {
    if (path.size() > 3 && path.substr(path.size() - 3) == ".gz") {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw IOError("cannot open " + path + " for writing");
        if (gzwrite(f, content.data(), static_cast<unsigned>(content.size())) !=
            static_cast<int>(content.size())) {
            gzclose(f);
            throw IOError("gzip write failed for " + path);
        }
        gzclose(f);
        return;
    }
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IOError("cannot open " + path + " for writing");
    const std::size_t written = std::fwrite(content.data(), 1, content.size(), f);
    std::fclose(f);
    if (written != content.size()) throw IOError("short write to " + path);
}

void append_split(std::string& out, const std::vector<Example>& examples, const char* split) {
    for (const auto& ex : examples) {
        out += "{\"id\":";
        out += std::to_string(ex.id);
        out += ",\"tokens\":[";
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) out += ',';
            out += std::to_string(ex.tokens[i]);
        }
        out += "],\"quality_tag\":\"";
        out += to_string(ex.quality_tag);
        out += "\",\"split\":\"";
        out += split;
        out += "\"}\n";
    }
}

}  // namespace

std::string to_string(QualityTag tag) {
    switch (tag) {
        case QualityTag::clean: return "clean";
        case QualityTag::noise: return "noise";
        case QualityTag::shuffled: return "shuffled";
    }
    throw ContractError("unknown quality tag");
}

QualityTag quality_tag_from_string(const std::string& s) {
    if (s == "clean") return QualityTag::clean;
    if (s == "noise") return QualityTag::noise;
    if (s == "shuffled") return QualityTag::shuffled;
    throw ParseError("unknown quality_tag '" + s + "'");
}

CorpusSplit generate(std::uint64_t seed, const CorpusSizes& sizes, const QualityMix& mix,
                     std::int64_t vocab_size, std::int64_t seq_len) {
    if (sizes.train < 1 || sizes.holdout < 1 || sizes.reference < 1)
        throw ConfigError("corpus sizes must all be at least 1");
    if (vocab_size < 2 || seq_len < 2)
        throw ConfigError("corpus needs vocab_size >= 2 and seq_len >= 2");
    if (mix.clean < 0 || mix.noise < 0 || mix.shuffled < 0 ||
        std::fabs(mix.clean + mix.noise + mix.shuffled - 1.0) > 1e-9)
        throw ConfigError("mix fractions must be non-negative and sum to 1");

    const Grammar& g = grammar_for(vocab_size);
    CorpusSplit split;
    split.train_pool = generate_mixed(g, seed, 0, sizes.train, mix, vocab_size, seq_len, 0);
    split.holdout =
        generate_mixed(g, seed, 1, sizes.holdout, mix, vocab_size, seq_len, sizes.train);
    const QualityMix clean_only{1.0, 0.0, 0.0};
    split.reference = generate_mixed(g, seed, 2, sizes.reference, clean_only, vocab_size, seq_len,
                                     sizes.train + sizes.holdout);
    return split;
}

void save(const CorpusSplit& split, const std::string& path) {
    std::string out;
    out.reserve((split.train_pool.size() + split.holdout.size() + split.reference.size()) * 128);
    append_split(out, split.train_pool, "train");
    append_split(out, split.holdout, "holdout");
    append_split(out, split.reference, "reference");
    write_all(path, out);
}

CorpusSplit load(const std::string& path) {
    const std::string content = read_all(path);
    CorpusSplit split;
    std::size_t pos = 0;
    std::int64_t line_no = 0;
    while (pos < content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string::npos) end = content.size();
        ++line_no;
        const std::string_view line(content.data() + pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path + " line " + std::to_string(line_no) + ": invalid JSON");
        for (const char* field : {"id", "tokens", "quality_tag", "split"})
            if (!j.contains(field))
                throw ParseError(path + " line " + std::to_string(line_no) + ": missing field '" +
                                 field + "'");
        Example ex;
        try {
            ex.id = j["id"].get<std::int64_t>();
            ex.tokens = j["tokens"].get<std::vector<std::int32_t>>();
            ex.quality_tag = quality_tag_from_string(j["quality_tag"].get<std::string>());
        } catch (const json::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (ex.tokens.empty())
            throw ParseError(path + " line " + std::to_string(line_no) + ": empty tokens");
        const std::string split_name = j["split"].get<std::string>();
        if (split_name == "train")
            split.train_pool.push_back(std::move(ex));
        else if (split_name == "holdout")
            split.holdout.push_back(std::move(ex));
        else if (split_name == "reference")
            split.reference.push_back(std::move(ex));
        else
            throw ParseError(path + " line " + std::to_string(line_no) + ": unknown split '" +
                             split_name + "'");
    }
    return split;
}

}  // namespace mates
