#include "mates/influence_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "mates/error.hpp"
#include "mates/rng.hpp"
#include "binio.hpp"
#include "hashing.hpp"

namespace mates {

namespace {

using hashing::mix64;

void validate_featurizer(const FeaturizerConfig& cfg) {
    if (cfg.dim < 1) throw ConfigError("featurizer dim must be positive, got " + std::to_string(cfg.dim));
    if (cfg.chunk_limit < 1) {
        throw ConfigError("featurizer chunk_limit must be positive, got " +
                          std::to_string(cfg.chunk_limit));
    }
    if (cfg.orders.empty()) throw ConfigError("featurizer needs at least one n-gram order");
    for (int o : cfg.orders) {
        if (o < 1) throw ConfigError("n-gram order must be positive, got " + std::to_string(o));
    }
}

std::int64_t ngram_bucket(const std::int32_t* tokens, int order, const FeaturizerConfig& cfg) {
    std::uint64_t h = cfg.hash_seed ^ mix64(static_cast<std::uint64_t>(order));
    for (int i = 0; i < order; ++i) {
        h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(tokens[i])));
    }
    return static_cast<std::int64_t>(h % static_cast<std::uint64_t>(cfg.dim));
}

void normalize_l2(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq == 0.0) return;
    const double inv = 1.0 / std::sqrt(sq);
    for (double& x : v) x *= inv;
}

// Feature vector of one chunk: raw n-gram counts, then L2-normalized.
void featurize_chunk(const std::int32_t* tokens, std::int64_t len, const FeaturizerConfig& cfg,
                     std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int order : cfg.orders) {
        for (std::int64_t i = 0; i + order <= len; ++i) {
            out[ngram_bucket(tokens + i, order, cfg)] += 1.0;
        }
    }
    normalize_l2(out);
}

void featurize_into(const Example& x, const FeaturizerConfig& cfg, std::vector<double>& out,
                    std::vector<double>& chunk_scratch) {
    const std::int64_t len = static_cast<std::int64_t>(x.tokens.size());
    if (len == 0) {
        throw ContractError("cannot featurize example " + std::to_string(x.id) + ": no tokens");
    }
    const std::int64_t n_chunks = (len + cfg.chunk_limit - 1) / cfg.chunk_limit;
    if (n_chunks == 1) {
        featurize_chunk(x.tokens.data(), len, cfg, out);
        return;
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::int64_t c = 0; c < n_chunks; ++c) {
        const std::int64_t begin = c * cfg.chunk_limit;
        const std::int64_t end = std::min(begin + cfg.chunk_limit, len);
        featurize_chunk(x.tokens.data() + begin, end - begin, cfg, chunk_scratch);
        for (std::int64_t f = 0; f < cfg.dim; ++f) out[f] += chunk_scratch[f];
    }
    const double inv = 1.0 / static_cast<double>(n_chunks);
    for (double& v : out) v *= inv;
    normalize_l2(out);
}

struct LayoutSegment {
    std::string name;
    std::int64_t offset = 0;
    std::int64_t length = 0;

    bool operator==(const LayoutSegment&) const = default;
};

struct Layout {
    std::vector<LayoutSegment> segments;
    std::int64_t total = 0;
};

Layout regressor_layout(HeadKind kind, std::int64_t dim, std::int64_t hidden) {
    Layout lay;
    auto push = [&lay](const std::string& name, std::int64_t len) {
        lay.segments.push_back({name, lay.total, len});
        lay.total += len;
    };
    if (kind == HeadKind::linear) {
        push("w", dim);
        push("b", 1);
    } else {
        push("w1", dim * hidden);
        push("b1", hidden);
        push("w2", hidden);
        push("b2", 1);
    }
    return lay;
}

void validate_regressor(const Regressor& reg) {
    validate_featurizer(reg.features);
    if (reg.kind == HeadKind::mlp && reg.hidden < 1) {
        throw ConfigError("mlp head needs a positive hidden width, got " +
                          std::to_string(reg.hidden));
    }
    const std::int64_t want = regressor_param_count(reg.kind, reg.features.dim, reg.hidden);
    if (static_cast<std::int64_t>(reg.params.size()) != want) {
        throw ContractError("regressor has " + std::to_string(reg.params.size()) +
                            " parameters, layout expects " + std::to_string(want));
    }
}

// Sparse view of one record's features; fit touches only nonzero entries.
struct SparseFeats {
    std::vector<std::int64_t> idx;
    std::vector<double> val;
};

double predict_sparse(const Regressor& reg, const SparseFeats& x, std::vector<double>& hidden_buf) {
    const std::int64_t nnz = static_cast<std::int64_t>(x.idx.size());
    if (reg.kind == HeadKind::linear) {
        double y = reg.params[reg.features.dim];
        for (std::int64_t j = 0; j < nnz; ++j) y += reg.params[x.idx[j]] * x.val[j];
        return y;
    }
    const std::int64_t f_dim = reg.features.dim;
    const std::int64_t h_dim = reg.hidden;
    const double* w1 = reg.params.data();
    const double* b1 = w1 + f_dim * h_dim;
    const double* w2 = b1 + h_dim;
    const double b2 = w2[h_dim];
    hidden_buf.assign(static_cast<std::size_t>(h_dim), 0.0);
    for (std::int64_t j = 0; j < nnz; ++j) {
        const double xv = x.val[j];
        const double* row = w1 + x.idx[j] * h_dim;
        for (std::int64_t h = 0; h < h_dim; ++h) hidden_buf[h] += xv * row[h];
    }
    double y = b2;
    for (std::int64_t h = 0; h < h_dim; ++h) {
        const double z = hidden_buf[h] + b1[h];
        if (z > 0.0) y += w2[h] * z;
    }
    return y;
}

}  // namespace

std::vector<double> featurize(const Example& x, const FeaturizerConfig& cfg) {
    validate_featurizer(cfg);
    std::vector<double> out(static_cast<std::size_t>(cfg.dim));
    std::vector<double> scratch;
    if (static_cast<std::int64_t>(x.tokens.size()) > cfg.chunk_limit) {
        scratch.resize(static_cast<std::size_t>(cfg.dim));
    }
    featurize_into(x, cfg, out, scratch);
    return out;
}

std::int64_t regressor_param_count(HeadKind kind, std::int64_t feature_dim, std::int64_t hidden) {
    return regressor_layout(kind, feature_dim, hidden).total;
}

double predict_features(const Regressor& reg, const std::vector<double>& features) {
    validate_regressor(reg);
    if (static_cast<std::int64_t>(features.size()) != reg.features.dim) {
        throw DimensionError("feature vector has " + std::to_string(features.size()) +
                             " entries, regressor expects " + std::to_string(reg.features.dim));
    }
    SparseFeats sparse;
    for (std::int64_t f = 0; f < reg.features.dim; ++f) {
        if (features[static_cast<std::size_t>(f)] != 0.0) {
            sparse.idx.push_back(f);
            sparse.val.push_back(features[static_cast<std::size_t>(f)]);
        }
    }
    std::vector<double> hidden_buf;
    return predict_sparse(reg, sparse, hidden_buf);
}

RecordSplit validation_split(std::int64_t n, double validation_fraction, std::uint64_t seed) {
    if (n < 1) throw ContractError("cannot split " + std::to_string(n) + " records");
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(seed, seed_tag::fit_split));
    split_rng.shuffle(order);
    const std::int64_t val_count = std::min(
        n, std::max<std::int64_t>(
               2, static_cast<std::int64_t>(static_cast<double>(n) * validation_fraction)));
    const std::int64_t train_count = n - val_count;
    RecordSplit split;
    split.train.assign(order.begin(), order.begin() + train_count);
    split.val.assign(order.begin() + train_count, order.end());
    return split;
}

FitResult fit(const std::vector<std::pair<Example, double>>& records, const FitConfig& cfg,
              const Regressor* last) {
    validate_featurizer(cfg.features);
    if (cfg.epochs < 1) throw ConfigError("fit epochs must be positive");
    if (cfg.batch < 1) throw ConfigError("fit batch must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("fit lr must be positive");
    if (!(cfg.validation_fraction > 0.0) || !(cfg.validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0, 1), got " +
                          std::to_string(cfg.validation_fraction));
    }
    if (cfg.head == HeadKind::mlp && cfg.hidden < 1) {
        throw ConfigError("mlp head needs a positive hidden width");
    }
    const std::int64_t n = static_cast<std::int64_t>(records.size());
    if (n < 20) {
        throw ContractError("influence fit needs at least 20 records, got " + std::to_string(n));
    }
    for (const auto& [ex, y] : records) {
        if (!std::isfinite(y)) {
            throw NumericError("non-finite influence target for example " + std::to_string(ex.id));
        }
    }

    // Held-out split for the validation score.
    RecordSplit split = validation_split(n, cfg.validation_fraction, cfg.seed);
    std::vector<std::int64_t>& train_ids = split.train;
    std::vector<std::int64_t>& val_ids = split.val;
    const std::int64_t train_count = static_cast<std::int64_t>(train_ids.size());
    const std::int64_t val_count = static_cast<std::int64_t>(val_ids.size());
    if (train_count < 2) {
        throw ConfigError("validation_fraction " + std::to_string(cfg.validation_fraction) +
                          " leaves fewer than 2 training records out of " + std::to_string(n));
    }

    // Targets are z-scored over the training split so the head never has to
    // match the raw influence scale, which drifts as the probed model trains.
    double mean = 0.0;
    for (std::int64_t i : train_ids) mean += records[static_cast<std::size_t>(i)].second;
    mean /= static_cast<double>(train_count);
    double var = 0.0;
    bool all_identical = true;
    const double first = records[static_cast<std::size_t>(train_ids[0])].second;
    for (std::int64_t i : train_ids) {
        const double y = records[static_cast<std::size_t>(i)].second;
        var += (y - mean) * (y - mean);
        if (y != first) all_identical = false;
    }
    if (all_identical) {
        throw DegenerateTargetError("all " + std::to_string(train_count) +
                                    " training targets are identical (" + std::to_string(first) +
                                    "); influence ranks are undefined");
    }
    const double sd = std::max(std::sqrt(var / static_cast<double>(train_count)), 1e-12);

    std::vector<SparseFeats> feats(static_cast<std::size_t>(n));
    {
        std::vector<double> dense(static_cast<std::size_t>(cfg.features.dim));
        std::vector<double> scratch(static_cast<std::size_t>(cfg.features.dim));
        for (std::int64_t i = 0; i < n; ++i) {
            featurize_into(records[static_cast<std::size_t>(i)].first, cfg.features, dense, scratch);
            SparseFeats& s = feats[static_cast<std::size_t>(i)];
            for (std::int64_t f = 0; f < cfg.features.dim; ++f) {
                if (dense[static_cast<std::size_t>(f)] != 0.0) {
                    s.idx.push_back(f);
                    s.val.push_back(dense[static_cast<std::size_t>(f)]);
                }
            }
        }
    }

    FitResult result;
    Regressor& reg = result.regressor;
    reg.kind = cfg.head;
    reg.features = cfg.features;
    reg.hidden = cfg.hidden;
    if (cfg.init == FitConfig::Init::continue_from_last) {
        if (last == nullptr) {
            throw ContractError("continue_from_last requires a previous regressor");
        }
        validate_regressor(*last);
        if (last->kind != cfg.head || last->features != cfg.features ||
            (cfg.head == HeadKind::mlp && last->hidden != cfg.hidden)) {
            throw ContractError("previous regressor does not match the requested head shape");
        }
        reg.params = last->params;
    } else {
        reg.params.assign(static_cast<std::size_t>(
                              regressor_param_count(cfg.head, cfg.features.dim, cfg.hidden)),
                          0.0);
        if (cfg.head == HeadKind::mlp) {
            Rng init_rng(derive_seed(cfg.seed, seed_tag::fit_init));
            const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.features.dim));
            const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
            const std::int64_t w1_len = cfg.features.dim * cfg.hidden;
            for (std::int64_t i = 0; i < w1_len; ++i) {
                reg.params[static_cast<std::size_t>(i)] = s1 * init_rng.next_normal();
            }
            const std::int64_t w2_off = w1_len + cfg.hidden;
            for (std::int64_t i = 0; i < cfg.hidden; ++i) {
                reg.params[static_cast<std::size_t>(w2_off + i)] = s2 * init_rng.next_normal();
            }
        }
    }

    const std::int64_t f_dim = cfg.features.dim;
    const std::int64_t h_dim = cfg.hidden;
    Rng batch_rng(derive_seed(cfg.seed, seed_tag::fit_minibatch));
    std::vector<double> grad(reg.params.size());
    std::vector<double> hidden_buf;
    std::vector<double> z_buf(static_cast<std::size_t>(h_dim));
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        batch_rng.shuffle(train_ids);
        for (std::int64_t start = 0; start < train_count; start += cfg.batch) {
            const std::int64_t stop = std::min(start + cfg.batch, train_count);
            const double inv_nb = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::int64_t r = start; r < stop; ++r) {
                const std::int64_t i = train_ids[static_cast<std::size_t>(r)];
                const SparseFeats& x = feats[static_cast<std::size_t>(i)];
                const double target = (records[static_cast<std::size_t>(i)].second - mean) / sd;
                if (reg.kind == HeadKind::linear) {
                    const double* w = reg.params.data();
                    double pred = reg.params[static_cast<std::size_t>(f_dim)];
                    for (std::size_t j = 0; j < x.idx.size(); ++j) {
                        pred += w[x.idx[j]] * x.val[j];
                    }
                    const double d = 2.0 * (pred - target) * inv_nb;
                    for (std::size_t j = 0; j < x.idx.size(); ++j) {
                        grad[static_cast<std::size_t>(x.idx[j])] += d * x.val[j];
                    }
                    grad[static_cast<std::size_t>(f_dim)] += d;
                } else {
                    const double* w1 = reg.params.data();
                    const double* b1 = w1 + f_dim * h_dim;
                    const double* w2 = b1 + h_dim;
                    const double b2 = w2[h_dim];
                    double* g_w1 = grad.data();
                    double* g_b1 = g_w1 + f_dim * h_dim;
                    double* g_w2 = g_b1 + h_dim;
                    double* g_b2 = g_w2 + h_dim;
                    for (std::int64_t h = 0; h < h_dim; ++h) {
                        z_buf[static_cast<std::size_t>(h)] = b1[h];
                    }
                    for (std::size_t j = 0; j < x.idx.size(); ++j) {
                        const double xv = x.val[j];
                        const double* row = w1 + x.idx[j] * h_dim;
                        for (std::int64_t h = 0; h < h_dim; ++h) {
                            z_buf[static_cast<std::size_t>(h)] += xv * row[h];
                        }
                    }
                    double pred = b2;
                    for (std::int64_t h = 0; h < h_dim; ++h) {
                        const double z = z_buf[static_cast<std::size_t>(h)];
                        if (z > 0.0) pred += w2[h] * z;
                    }
                    const double d = 2.0 * (pred - target) * inv_nb;
                    for (std::int64_t h = 0; h < h_dim; ++h) {
                        const double z = z_buf[static_cast<std::size_t>(h)];
                        if (z <= 0.0) continue;
                        const double dz = d * w2[h];
                        g_w2[h] += d * z;
                        g_b1[h] += dz;
                        for (std::size_t j = 0; j < x.idx.size(); ++j) {
                            g_w1[x.idx[j] * h_dim + h] += dz * x.val[j];
                        }
                    }
                    *g_b2 += d;
                }
            }
            for (std::size_t p = 0; p < reg.params.size(); ++p) {
                reg.params[p] -= cfg.lr * grad[p];
            }
        }
    }
    for (double p : reg.params) {
        if (!std::isfinite(p)) {
            throw NumericError("influence fit diverged: non-finite parameter after training");
        }
    }

    std::vector<double> val_pred(val_ids.size());
    std::vector<double> val_true(val_ids.size());
    for (std::size_t k = 0; k < val_ids.size(); ++k) {
        const std::int64_t i = val_ids[k];
        val_pred[k] = predict_sparse(reg, feats[static_cast<std::size_t>(i)], hidden_buf);
        val_true[k] = records[static_cast<std::size_t>(i)].second;
    }
    result.validation_spearman = spearman(val_pred, val_true);
    result.train_count = train_count;
    result.val_count = val_count;
    return result;
}

std::vector<double> predict_pool(const Regressor& reg, const std::vector<Example>& pool) {
    validate_regressor(reg);
    std::vector<double> scores(pool.size());
    const std::int64_t n = static_cast<std::int64_t>(pool.size());
#pragma omp parallel
    {
        std::vector<double> dense(static_cast<std::size_t>(reg.features.dim));
        std::vector<double> scratch(static_cast<std::size_t>(reg.features.dim));
        std::vector<double> hidden_buf;
        SparseFeats sparse;
#pragma omp for schedule(dynamic, 64)
        for (std::int64_t i = 0; i < n; ++i) {
            featurize_into(pool[static_cast<std::size_t>(i)], reg.features, dense, scratch);
            sparse.idx.clear();
            sparse.val.clear();
            for (std::int64_t f = 0; f < reg.features.dim; ++f) {
                if (dense[static_cast<std::size_t>(f)] != 0.0) {
                    sparse.idx.push_back(f);
                    sparse.val.push_back(dense[static_cast<std::size_t>(f)]);
                }
            }
            scores[static_cast<std::size_t>(i)] = predict_sparse(reg, sparse, hidden_buf);
        }
    }
    return scores;
}

void save_regressor(const Regressor& reg, const std::string& path) {
    validate_regressor(reg);
    binio::Writer w;
    w.bytes("MTIF", 4);
    w.u32(1);
    w.u32(reg.kind == HeadKind::linear ? 0u : 1u);
    w.i64(reg.features.dim);
    w.i64(reg.hidden);
    w.u32(static_cast<std::uint32_t>(reg.features.orders.size()));
    for (int o : reg.features.orders) w.i64(o);
    w.u64(reg.features.hash_seed);
    w.i64(reg.features.chunk_limit);
    const Layout lay = regressor_layout(reg.kind, reg.features.dim, reg.hidden);
    w.u32(static_cast<std::uint32_t>(lay.segments.size()));
    for (const auto& seg : lay.segments) {
        w.str(seg.name);
        w.i64(seg.offset);
        w.i64(seg.length);
    }
    w.doubles(reg.params);
    binio::write_file(path, w);
}

Regressor load_regressor(const std::string& path) {
    binio::Reader r = binio::read_file(path);
    char magic[4];
    r.need(4);
    std::memcpy(magic, r.data.data(), 4);
    r.pos = 4;
    if (std::memcmp(magic, "MTIF", 4) != 0) {
        throw ParseError(path + ": not an influence-model file (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw ParseError(path + ": unsupported influence-model version " +
                         std::to_string(version));
    }
    const std::uint32_t kind_code = r.u32();
    if (kind_code > 1) {
        throw ParseError(path + ": unknown head kind code " + std::to_string(kind_code));
    }
    Regressor reg;
    reg.kind = kind_code == 0 ? HeadKind::linear : HeadKind::mlp;
    reg.features.dim = r.i64();
    reg.hidden = r.i64();
    const std::uint32_t n_orders = r.u32();
    reg.features.orders.clear();
    for (std::uint32_t i = 0; i < n_orders; ++i) {
        reg.features.orders.push_back(static_cast<int>(r.i64()));
    }
    reg.features.hash_seed = r.u64();
    reg.features.chunk_limit = r.i64();
    validate_featurizer(reg.features);
    const Layout lay = regressor_layout(reg.kind, reg.features.dim, reg.hidden);
    const std::uint32_t n_segments = r.u32();
    if (n_segments != lay.segments.size()) {
        throw ParseError(path + ": segment table does not match the stored head shape");
    }
    for (const auto& seg : lay.segments) {
        LayoutSegment stored;
        stored.name = r.str();
        stored.offset = r.i64();
        stored.length = r.i64();
        if (stored != seg) {
            throw ParseError(path + ": segment table does not match the stored head shape");
        }
    }
    r.doubles(reg.params, static_cast<std::size_t>(lay.total));
    r.expect_end();
    for (double p : reg.params) {
        if (!std::isfinite(p)) throw ParseError(path + ": non-finite parameter value");
    }
    return reg;
}

}  // namespace mates
