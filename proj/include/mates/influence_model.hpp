#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mates/corpus.hpp"
#include "mates/stats.hpp"

namespace mates {

// Hashed n-gram featurizer. Sequences longer than chunk_limit are split into
// consecutive chunks, each chunk's histogram is L2-normalized, and the chunk
// vectors are mean-pooled and renormalized.
struct FeaturizerConfig {
    std::vector<int> orders = {1, 2, 3};
    std::int64_t dim = 4096;
    std::uint64_t hash_seed = 0x9e3779b97f4a7c15ULL;
    std::int64_t chunk_limit = 32;

    bool operator==(const FeaturizerConfig&) const = default;
};

std::vector<double> featurize(const Example& x, const FeaturizerConfig& cfg);

enum class HeadKind { linear, mlp };

// Influence regressor: a linear head (w, b) or a one-hidden-layer ReLU
// network over the hashed features. Parameters live in one flat vector;
// layout depends on kind (linear: w[F], b; mlp: w1[F*H], b1[H], w2[H], b2).
struct Regressor {
    HeadKind kind = HeadKind::linear;
    FeaturizerConfig features;
    std::int64_t hidden = 64;  // used by the mlp head only
    std::vector<double> params;

    bool operator==(const Regressor&) const = default;
};

std::int64_t regressor_param_count(HeadKind kind, std::int64_t feature_dim,
                                   std::int64_t hidden);
double predict_features(const Regressor& reg, const std::vector<double>& features);

struct FitConfig {
    std::int64_t epochs = 5;
    std::int64_t batch = 256;
    double lr = 1e-2;
    double validation_fraction = 0.1;
    enum class Init { fresh, continue_from_last } init = Init::fresh;
    HeadKind head = HeadKind::linear;
    std::int64_t hidden = 64;
    std::uint64_t seed = 0;
    FeaturizerConfig features;

    bool operator==(const FitConfig&) const = default;
};

struct FitResult {
    Regressor regressor;
    double validation_spearman = 0.0;
    std::int64_t train_count = 0;
    std::int64_t val_count = 0;
};

// The deterministic record split fit() uses: positions [0, n) are shuffled by
// the seed and the tail becomes validation (at least 2 records). Exposed so a
// frozen regressor can be scored on the exact held-out subset a refit with the
// same seed would get.
struct RecordSplit {
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> val;
};

RecordSplit validation_split(std::int64_t n, double validation_fraction, std::uint64_t seed);

// Minibatch gradient descent on MSE against z-scored influence targets
// (normalized over the training split; sd floored at 1e-12). A held-out
// fraction scores the fit by Spearman correlation. continue_from_last starts
// from `last` instead of a fresh head.
FitResult fit(const std::vector<std::pair<Example, double>>& records, const FitConfig& cfg,
              const Regressor* last = nullptr);

// Scores every pool example; a pure map, parallelizable over examples.
std::vector<double> predict_pool(const Regressor& reg, const std::vector<Example>& pool);

// Binary "MTIF" files, same shape as model checkpoints: versioned header,
// named segment table, flat little-endian parameter vector.
void save_regressor(const Regressor& reg, const std::string& path);
Regressor load_regressor(const std::string& path);

}  // namespace mates
