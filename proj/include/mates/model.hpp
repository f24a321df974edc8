#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mates/corpus.hpp"

namespace mates {

enum class Arch { bigram, transformer };

struct LMConfig {
    std::int64_t vocab_size = 256;
    std::int64_t context_len = 64;
    std::int64_t d_model = 64;
    std::int64_t n_layers = 2;
    std::int64_t n_heads = 4;
    Arch arch = Arch::transformer;
    std::uint64_t seed = 0;

    bool operator==(const LMConfig&) const = default;
};

struct Segment {
    std::string name;
    std::int64_t offset = 0;
    std::int64_t length = 0;

    bool operator==(const Segment&) const = default;
};

// Flat parameter vector plus a named-segment layout table and the
// pretraining step counter. Snapshot/restore unit for probing.
struct ModelState {
    LMConfig config;
    std::vector<Segment> layout;
    std::vector<double> params;
    std::int64_t step = 0;
};

std::vector<Segment> layout_for(const LMConfig& config);
std::int64_t param_count(const LMConfig& config);

// Deterministic init from config.seed: embeddings and linear maps N(0, 0.02²),
// layer-norm gain 1 and bias 0. Linear maps carry no bias terms.
ModelState init(const LMConfig& config);

struct LossResult {
    double loss = 0.0;
    std::vector<double> grads;
    std::int64_t positions = 0;
};

// Mean next-token negative log-likelihood over all predicted positions in the
// batch, with gradients for every parameter.
LossResult loss(const ModelState& state, const std::vector<Example>& batch);

struct EvalSums {
    double nll_sum = 0.0;
    std::int64_t positions = 0;
};

// Gradient-free forward pass; returns per-example NLL sums so callers can form
// weighted means that are independent of micro-batching. Each example's sum is
// bitwise identical to the training-loss arithmetic, so for a single-example
// batch nll_sum / positions equals loss() exactly.
std::vector<EvalSums> eval_nll(const ModelState& state, const std::vector<Example>& batch);

ModelState snapshot(const ModelState& state);
void restore(ModelState& state, const ModelState& snap);

enum class FlopsMode { train, infer };
std::int64_t flops_per_token(const LMConfig& config, FlopsMode mode);

// Closed-form logit-table gradient of the bigram model: (softmax - onehot)
// accumulated over observed bigrams, divided by the number of predicted
// positions. Independent of the autodiff path; used as an analytic oracle.
std::vector<double> bigram_closed_form_grad(const ModelState& state,
                                            const std::vector<Example>& batch);

}  // namespace mates
