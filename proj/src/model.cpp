#include "mates/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>

#include "kernel.hpp"
#include "mates/error.hpp"
#include "mates/numerics.hpp"
#include "mates/rng.hpp"

namespace mates {

namespace {

constexpr double kInitSd = 0.02;

void validate(const LMConfig& c) {
    if (c.vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (c.context_len < 2) throw ConfigError("context_len must be at least 2");
    if (c.arch == Arch::transformer) {
        if (c.d_model < 1 || c.n_layers < 1 || c.n_heads < 1)
            throw ConfigError("transformer dimensions must be positive");
        if (c.d_model % c.n_heads != 0)
            throw ConfigError("d_model " + std::to_string(c.d_model) +
                              " not divisible by n_heads " + std::to_string(c.n_heads));
    }
}

void check_batch(const LMConfig& c, const std::vector<Example>& batch) {
    if (batch.empty()) throw ContractError("empty batch");
    for (const auto& ex : batch) {
        if (ex.tokens.empty())
            throw ContractError("example " + std::to_string(ex.id) + " has no tokens");
        if (static_cast<std::int64_t>(ex.tokens.size()) > c.context_len)
            throw ContractError("example " + std::to_string(ex.id) + " has length " +
                                std::to_string(ex.tokens.size()) + " > context_len " +
                                std::to_string(c.context_len));
        for (std::int32_t t : ex.tokens)
            if (t < 0 || t >= c.vocab_size)
                throw IndexError("example " + std::to_string(ex.id) + " token " +
                                 std::to_string(t) + " out of range [0, " +
                                 std::to_string(c.vocab_size) + ")");
    }
}

// Named views into the flat parameter vector.
struct SegmentMap {
    const std::vector<Segment>* layout;

    const Segment& find(const std::string& name) const {
        for (const auto& s : *layout)
            if (s.name == name) return s;
        throw ContractError("no parameter segment named '" + name + "'");
    }
};

Tensor segment_tensor(const std::vector<double>& params, const Segment& seg,
                      std::vector<std::int64_t> shape) {
    Tensor t(std::move(shape));
    std::copy(params.begin() + seg.offset, params.begin() + seg.offset + seg.length,
              t.data.begin());
    return t;
}

struct PackedBatch {
    std::vector<std::int32_t> ids;       // all tokens, example-major
    std::vector<std::int32_t> pos;       // position within example
    std::vector<std::int64_t> offsets;   // row offset per example
    std::vector<std::int64_t> lengths;
    std::vector<std::int32_t> targets;   // next tokens for predicted rows
    std::int64_t total_rows = 0;
    std::int64_t total_pred = 0;
};

PackedBatch pack(const std::vector<Example>& batch) {
    PackedBatch p;
    for (const auto& ex : batch) {
        p.offsets.push_back(p.total_rows);
        const std::int64_t len = static_cast<std::int64_t>(ex.tokens.size());
        p.lengths.push_back(len);
        for (std::int64_t i = 0; i < len; ++i) {
            p.ids.push_back(ex.tokens[static_cast<std::size_t>(i)]);
            p.pos.push_back(static_cast<std::int32_t>(i));
        }
        for (std::int64_t i = 0; i + 1 < len; ++i)
            p.targets.push_back(ex.tokens[static_cast<std::size_t>(i + 1)]);
        p.total_rows += len;
        p.total_pred += std::max<std::int64_t>(0, len - 1);
    }
    if (p.total_pred == 0) throw ContractError("batch has no predicted positions");
    return p;
}

// Transformer forward on the tape. Attention runs per example and head over
// block slices so every gradient rule stays a small primitive.
NodeRef transformer_loss_node(Tape& tape, const ModelState& state, const PackedBatch& p,
                              std::vector<NodeRef>& leaves_out,
                              std::vector<const Segment*>& segs_out) {
    const LMConfig& c = state.config;
    SegmentMap segs{&state.layout};
    const std::int64_t d = c.d_model;
    const std::int64_t dh = d / c.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    auto leaf_of = [&](const std::string& name, std::vector<std::int64_t> shape) {
        const Segment& seg = segs.find(name);
        auto node = tape.leaf(segment_tensor(state.params, seg, std::move(shape)));
        leaves_out.push_back(node);
        segs_out.push_back(&seg);
        return node;
    };

    auto wte = leaf_of("wte", {c.vocab_size, d});
    auto wpe = leaf_of("wpe", {c.context_len, d});
    auto x = add(tape, embedding_gather(tape, wte, p.ids), embedding_gather(tape, wpe, p.pos));

    const std::int64_t n_examples = static_cast<std::int64_t>(p.offsets.size());
    for (std::int64_t layer = 0; layer < c.n_layers; ++layer) {
        const std::string prefix = "layer" + std::to_string(layer) + ".";
        auto ln1_g = leaf_of(prefix + "ln1_gain", {d});
        auto ln1_b = leaf_of(prefix + "ln1_bias", {d});
        auto w_qkv = leaf_of(prefix + "w_qkv", {d, 3 * d});
        auto w_out = leaf_of(prefix + "w_attn_out", {d, d});
        auto ln2_g = leaf_of(prefix + "ln2_gain", {d});
        auto ln2_b = leaf_of(prefix + "ln2_bias", {d});
        auto w_fc = leaf_of(prefix + "w_fc", {d, 4 * d});
        auto w_proj = leaf_of(prefix + "w_proj", {4 * d, d});

        auto qkv = matmul(tape, layernorm(tape, x, ln1_g, ln1_b), w_qkv);
        std::vector<NodeRef> example_outs;
        example_outs.reserve(static_cast<std::size_t>(n_examples));
        for (std::int64_t b = 0; b < n_examples; ++b) {
            const std::int64_t r0 = p.offsets[static_cast<std::size_t>(b)];
            const std::int64_t r1 = r0 + p.lengths[static_cast<std::size_t>(b)];
            std::vector<NodeRef> head_outs;
            head_outs.reserve(static_cast<std::size_t>(c.n_heads));
            for (std::int64_t h = 0; h < c.n_heads; ++h) {
                auto q = slice_block(tape, qkv, r0, r1, h * dh, (h + 1) * dh);
                auto k = slice_block(tape, qkv, r0, r1, d + h * dh, d + (h + 1) * dh);
                auto v = slice_block(tape, qkv, r0, r1, 2 * d + h * dh, 2 * d + (h + 1) * dh);
                auto scores = scale(tape, matmul_nt(tape, q, k), inv_sqrt_dh);
                auto probs = softmax_rows(tape, causal_mask(tape, scores));
                head_outs.push_back(matmul(tape, probs, v));
            }
            example_outs.push_back(concat_cols(tape, head_outs));
        }
        auto att = n_examples == 1 ? example_outs[0] : concat_rows(tape, example_outs);
        x = add(tape, x, matmul(tape, att, w_out));
        auto mlp_in = layernorm(tape, x, ln2_g, ln2_b);
        x = add(tape, x, matmul(tape, gelu(tape, matmul(tape, mlp_in, w_fc)), w_proj));
    }

    auto lnf_g = leaf_of("lnf_gain", {d});
    auto lnf_b = leaf_of("lnf_bias", {d});
    auto lm_head = leaf_of("lm_head", {d, c.vocab_size});
    auto h_final = layernorm(tape, x, lnf_g, lnf_b);

    std::vector<NodeRef> pred_rows;
    for (std::int64_t b = 0; b < n_examples; ++b) {
        const std::int64_t len = p.lengths[static_cast<std::size_t>(b)];
        if (len < 2) continue;
        const std::int64_t r0 = p.offsets[static_cast<std::size_t>(b)];
        pred_rows.push_back(slice_block(tape, h_final, r0, r0 + len - 1, 0, d));
    }
    auto pred = pred_rows.size() == 1 ? pred_rows[0] : concat_rows(tape, pred_rows);
    return softmax_cross_entropy(tape, matmul(tape, pred, lm_head), p.targets);
}

NodeRef bigram_loss_node(Tape& tape, const ModelState& state, const PackedBatch& p,
                         std::vector<NodeRef>& leaves_out,
                         std::vector<const Segment*>& segs_out) {
    const LMConfig& c = state.config;
    SegmentMap segs{&state.layout};
    const Segment& seg = segs.find("logits");
    auto table = tape.leaf(segment_tensor(state.params, seg, {c.vocab_size, c.vocab_size}));
    leaves_out.push_back(table);
    segs_out.push_back(&seg);

    std::vector<std::int32_t> prefix;
    prefix.reserve(static_cast<std::size_t>(p.total_pred));
    const std::int64_t n_examples = static_cast<std::int64_t>(p.offsets.size());
    for (std::int64_t b = 0; b < n_examples; ++b) {
        const std::int64_t r0 = p.offsets[static_cast<std::size_t>(b)];
        const std::int64_t len = p.lengths[static_cast<std::size_t>(b)];
        for (std::int64_t i = 0; i + 1 < len; ++i)
            prefix.push_back(p.ids[static_cast<std::size_t>(r0 + i)]);
    }
    return softmax_cross_entropy(tape, embedding_gather(tape, table, prefix), p.targets);
}

// Row-block softmax cross entropy for the no-grad path; accumulation order per
// row matches the tape primitive exactly.
double row_nll(const double* logits, std::int64_t v, std::int32_t target) {
    double mx = logits[0];
    for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < v; ++j) sum += std::exp(logits[j] - mx);
    return -std::log(std::exp(logits[target] - mx) / sum);
}

// Gradient-free transformer forward mirroring the tape arithmetic: same
// kernels, same per-row operation order, so values agree bitwise.
void transformer_eval(const ModelState& state, const PackedBatch& p,
                      std::vector<EvalSums>& out) {
    const LMConfig& c = state.config;
    SegmentMap segs{&state.layout};
    const std::int64_t d = c.d_model;
    const std::int64_t dh = d / c.n_heads;
    const std::int64_t n = p.total_rows;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* params = state.params.data();

    auto seg_ptr = [&](const std::string& name) { return params + segs.find(name).offset; };

    std::vector<double> x(static_cast<std::size_t>(n) * d);
    const double* wte = seg_ptr("wte");
    const double* wpe = seg_ptr("wpe");
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            x[static_cast<std::size_t>(i) * d + j] =
                wte[static_cast<std::size_t>(p.ids[static_cast<std::size_t>(i)]) * d + j] +
                wpe[static_cast<std::size_t>(p.pos[static_cast<std::size_t>(i)]) * d + j];

    std::vector<double> normed(static_cast<std::size_t>(n) * d);
    std::vector<double> qkv(static_cast<std::size_t>(n) * 3 * d);
    std::vector<double> att(static_cast<std::size_t>(n) * d);
    std::vector<double> mlp_hidden(static_cast<std::size_t>(n) * 4 * d);
    std::vector<double> proj(static_cast<std::size_t>(n) * d);
    std::vector<double> scores;
    std::vector<double> q_buf, k_buf, v_buf, kt_buf, o_buf;

    auto apply_layernorm = [&](const double* in, double* dst, const double* gain,
                               const double* bias) {
        for (std::int64_t i = 0; i < n; ++i) {
            const double* row = in + static_cast<std::size_t>(i) * d;
            double mean = 0.0;
            for (std::int64_t j = 0; j < d; ++j) mean += row[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double diff = row[j] - mean;
                var += diff * diff;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + kLayernormEps);
            double* orow = dst + static_cast<std::size_t>(i) * d;
            for (std::int64_t j = 0; j < d; ++j) orow[j] = gain[j] * ((row[j] - mean) * inv) + bias[j];
        }
    };

    const std::int64_t n_examples = static_cast<std::int64_t>(p.offsets.size());
    for (std::int64_t layer = 0; layer < c.n_layers; ++layer) {
        const std::string prefix = "layer" + std::to_string(layer) + ".";
        apply_layernorm(x.data(), normed.data(), seg_ptr(prefix + "ln1_gain"),
                        seg_ptr(prefix + "ln1_bias"));
        kernel::mm(normed.data(), seg_ptr(prefix + "w_qkv"), qkv.data(), n, d, 3 * d);

        for (std::int64_t b = 0; b < n_examples; ++b) {
            const std::int64_t r0 = p.offsets[static_cast<std::size_t>(b)];
            const std::int64_t len = p.lengths[static_cast<std::size_t>(b)];
            scores.resize(static_cast<std::size_t>(len) * len);
            q_buf.resize(static_cast<std::size_t>(len) * dh);
            k_buf.resize(static_cast<std::size_t>(len) * dh);
            v_buf.resize(static_cast<std::size_t>(len) * dh);
            kt_buf.resize(static_cast<std::size_t>(dh) * len);
            o_buf.resize(static_cast<std::size_t>(len) * dh);
            for (std::int64_t h = 0; h < c.n_heads; ++h) {
                for (std::int64_t i = 0; i < len; ++i) {
                    const double* src = qkv.data() + static_cast<std::size_t>(r0 + i) * 3 * d;
                    std::memcpy(q_buf.data() + static_cast<std::size_t>(i) * dh, src + h * dh,
                                static_cast<std::size_t>(dh) * sizeof(double));
                    std::memcpy(k_buf.data() + static_cast<std::size_t>(i) * dh, src + d + h * dh,
                                static_cast<std::size_t>(dh) * sizeof(double));
                    std::memcpy(v_buf.data() + static_cast<std::size_t>(i) * dh,
                                src + 2 * d + h * dh, static_cast<std::size_t>(dh) * sizeof(double));
                }
                kernel::transpose(k_buf.data(), kt_buf.data(), len, dh);
                kernel::mm(q_buf.data(), kt_buf.data(), scores.data(), len, dh, len);
                for (std::int64_t i = 0; i < len; ++i) {
                    double* row = scores.data() + static_cast<std::size_t>(i) * len;
                    for (std::int64_t j = 0; j <= i; ++j) row[j] *= inv_sqrt_dh;
                    double mx = row[0];
                    for (std::int64_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
                    double sum = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        row[j] = std::exp(row[j] - mx);
                        sum += row[j];
                    }
                    for (std::int64_t j = 0; j <= i; ++j) row[j] /= sum;
                    for (std::int64_t j = i + 1; j < len; ++j) row[j] = 0.0;
                }
                kernel::mm(scores.data(), v_buf.data(), o_buf.data(), len, len, dh);
                for (std::int64_t i = 0; i < len; ++i)
                    std::memcpy(att.data() + static_cast<std::size_t>(r0 + i) * d + h * dh,
                                o_buf.data() + static_cast<std::size_t>(i) * dh,
                                static_cast<std::size_t>(dh) * sizeof(double));
            }
        }
        kernel::mm(att.data(), seg_ptr(prefix + "w_attn_out"), proj.data(), n, d, d);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];

        apply_layernorm(x.data(), normed.data(), seg_ptr(prefix + "ln2_gain"),
                        seg_ptr(prefix + "ln2_bias"));
        kernel::mm(normed.data(), seg_ptr(prefix + "w_fc"), mlp_hidden.data(), n, d, 4 * d);
        for (double& v : mlp_hidden) {
            const double u = 0.7978845608028653558798921198687 *
                             (v + kGeluCubicCoeff * v * v * v);
            v = 0.5 * v * (1.0 + std::tanh(u));
        }
        kernel::mm(mlp_hidden.data(), seg_ptr(prefix + "w_proj"), proj.data(), n, 4 * d, d);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];
    }

    apply_layernorm(x.data(), normed.data(), seg_ptr("lnf_gain"), seg_ptr("lnf_bias"));

    const double* lm_head = seg_ptr("lm_head");
    std::vector<double> logits;
    std::size_t target_idx = 0;
    for (std::int64_t b = 0; b < n_examples; ++b) {
        const std::int64_t r0 = p.offsets[static_cast<std::size_t>(b)];
        const std::int64_t len = p.lengths[static_cast<std::size_t>(b)];
        EvalSums sums;
        sums.positions = std::max<std::int64_t>(0, len - 1);
        if (sums.positions > 0) {
            logits.resize(static_cast<std::size_t>(sums.positions) * c.vocab_size);
            kernel::mm(normed.data() + static_cast<std::size_t>(r0) * d, lm_head, logits.data(),
                       sums.positions, d, c.vocab_size);
            for (std::int64_t i = 0; i < sums.positions; ++i)
                sums.nll_sum += row_nll(logits.data() + static_cast<std::size_t>(i) * c.vocab_size,
                                        c.vocab_size, p.targets[target_idx++]);
        }
        out.push_back(sums);
    }
}

void bigram_eval(const ModelState& state, const PackedBatch& p, std::vector<EvalSums>& out) {
    const LMConfig& c = state.config;
    SegmentMap segs{&state.layout};
    const double* table = state.params.data() + segs.find("logits").offset;
    std::size_t target_idx = 0;
    const std::int64_t n_examples = static_cast<std::int64_t>(p.offsets.size());
    for (std::int64_t b = 0; b < n_examples; ++b) {
        const std::int64_t r0 = p.offsets[static_cast<std::size_t>(b)];
        const std::int64_t len = p.lengths[static_cast<std::size_t>(b)];
        EvalSums sums;
        sums.positions = std::max<std::int64_t>(0, len - 1);
        for (std::int64_t i = 0; i + 1 < len; ++i) {
            const std::int32_t prev = p.ids[static_cast<std::size_t>(r0 + i)];
            sums.nll_sum +=
                row_nll(table + static_cast<std::size_t>(prev) * c.vocab_size, c.vocab_size,
                        p.targets[target_idx++]);
        }
        out.push_back(sums);
    }
}

}  // namespace

std::vector<Segment> layout_for(const LMConfig& config) {
    validate(config);
    std::vector<Segment> layout;
    std::int64_t offset = 0;
    auto push = [&](const std::string& name, std::int64_t length) {
        layout.push_back({name, offset, length});
        offset += length;
    };
    if (config.arch == Arch::bigram) {
        push("logits", config.vocab_size * config.vocab_size);
        return layout;
    }
    const std::int64_t d = config.d_model;
    push("wte", config.vocab_size * d);
    push("wpe", config.context_len * d);
    for (std::int64_t l = 0; l < config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        push(prefix + "ln1_gain", d);
        push(prefix + "ln1_bias", d);
        push(prefix + "w_qkv", d * 3 * d);
        push(prefix + "w_attn_out", d * d);
        push(prefix + "ln2_gain", d);
        push(prefix + "ln2_bias", d);
        push(prefix + "w_fc", d * 4 * d);
        push(prefix + "w_proj", 4 * d * d);
    }
    push("lnf_gain", d);
    push("lnf_bias", d);
    push("lm_head", d * config.vocab_size);
    return layout;
}

std::int64_t param_count(const LMConfig& config) {
    const auto layout = layout_for(config);
    return layout.back().offset + layout.back().length;
}

ModelState init(const LMConfig& config) {
    ModelState state;
    state.config = config;
    state.layout = layout_for(config);
    state.params.assign(static_cast<std::size_t>(param_count(config)), 0.0);
    Rng rng(derive_seed(config.seed, seed_tag::model_init));
    for (const auto& seg : state.layout) {
        const bool is_gain = seg.name.find("gain") != std::string::npos;
        const bool is_bias = seg.name.find("bias") != std::string::npos;
        double* dst = state.params.data() + seg.offset;
        if (is_gain)
            std::fill(dst, dst + seg.length, 1.0);
        else if (is_bias)
            std::fill(dst, dst + seg.length, 0.0);
        else
            for (std::int64_t i = 0; i < seg.length; ++i) dst[i] = kInitSd * rng.next_normal();
    }
    return state;
}

LossResult loss(const ModelState& state, const std::vector<Example>& batch) {
    check_batch(state.config, batch);
    const PackedBatch p = pack(batch);
    Tape tape;
    std::vector<NodeRef> leaves;
    std::vector<const Segment*> segs;
    auto root = state.config.arch == Arch::bigram
                    ? bigram_loss_node(tape, state, p, leaves, segs)
                    : transformer_loss_node(tape, state, p, leaves, segs);
    tape.backward(root);

    LossResult result;
    result.loss = root->value.data[0];
    result.positions = p.total_pred;
    result.grads.assign(state.params.size(), 0.0);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (leaves[i]->grad.data.empty()) continue;
        std::copy(leaves[i]->grad.data.begin(), leaves[i]->grad.data.end(),
                  result.grads.begin() + segs[i]->offset);
    }
    return result;
}

std::vector<EvalSums> eval_nll(const ModelState& state, const std::vector<Example>& batch) {
    check_batch(state.config, batch);
    const PackedBatch p = pack(batch);
    std::vector<EvalSums> out;
    out.reserve(batch.size());
    if (state.config.arch == Arch::bigram)
        bigram_eval(state, p, out);
    else
        transformer_eval(state, p, out);
    return out;
}

ModelState snapshot(const ModelState& state) { return state; }

void restore(ModelState& state, const ModelState& snap) {
    if (state.layout != snap.layout)
        throw ContractError("restore: parameter layouts do not match");
    state.config = snap.config;
    state.params = snap.params;
    state.step = snap.step;
}

std::int64_t flops_per_token(const LMConfig& config, FlopsMode mode) {
    const std::int64_t n = param_count(config);
    return mode == FlopsMode::train ? 6 * n : 2 * n;
}

std::vector<double> bigram_closed_form_grad(const ModelState& state,
                                            const std::vector<Example>& batch) {
    if (state.config.arch != Arch::bigram)
        throw ContractError("closed-form gradient applies to the bigram model only");
    check_batch(state.config, batch);
    const std::int64_t v = state.config.vocab_size;
    const double* table = state.params.data();
    std::vector<double> grad(state.params.size(), 0.0);

    std::int64_t positions = 0;
    for (const auto& ex : batch) positions += std::max<std::int64_t>(0, static_cast<std::int64_t>(ex.tokens.size()) - 1);
    if (positions == 0) throw ContractError("batch has no predicted positions");

    // softmax per distinct previous token, computed once
    std::map<std::int32_t, std::vector<double>> softmax_rows;
    for (const auto& ex : batch) {
        for (std::size_t i = 0; i + 1 < ex.tokens.size(); ++i) {
            const std::int32_t prev = ex.tokens[i];
            auto [it, inserted] = softmax_rows.try_emplace(prev);
            if (inserted) {
                auto& row = it->second;
                row.resize(static_cast<std::size_t>(v));
                const double* logits = table + static_cast<std::size_t>(prev) * v;
                double mx = logits[0];
                for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
                double sum = 0.0;
                for (std::int64_t j = 0; j < v; ++j) {
                    row[static_cast<std::size_t>(j)] = std::exp(logits[j] - mx);
                    sum += row[static_cast<std::size_t>(j)];
                }
                for (double& e : row) e /= sum;
            }
            const auto& probs = it->second;
            double* g = grad.data() + static_cast<std::size_t>(prev) * v;
            for (std::int64_t j = 0; j < v; ++j) g[j] += probs[static_cast<std::size_t>(j)];
            g[ex.tokens[i + 1]] -= 1.0;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(positions);
    for (double& g : grad) g *= inv_n;
    return grad;
}

}  // namespace mates
