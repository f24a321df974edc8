#include "mates/optim.hpp"

#include <cmath>
#include <string>

#include "mates/error.hpp"

namespace mates {

namespace {

void validate(const WSDConfig& cfg) {
    if (cfg.warmup <= 0 || cfg.warmup > cfg.stable_end)
        throw ConfigError("wsd: need 0 < W <= S, got W=" + std::to_string(cfg.warmup) +
                          " S=" + std::to_string(cfg.stable_end));
    if (cfg.decay < 1) throw ConfigError("wsd: need D >= 1, got D=" + std::to_string(cfg.decay));
    if (!(cfg.eta > 0.0)) throw ConfigError("wsd: need eta > 0");
}

const std::string& segment_of(const std::vector<Segment>& layout, std::size_t index) {
    for (const auto& seg : layout)
        if (static_cast<std::int64_t>(index) >= seg.offset &&
            static_cast<std::int64_t>(index) < seg.offset + seg.length)
            return seg.name;
    throw ContractError("parameter index " + std::to_string(index) + " outside every segment");
}

}  // namespace

AdamState adam_init(std::int64_t param_len) {
    if (param_len <= 0)
        throw ConfigError("adam_init: parameter length must be positive, got " +
                          std::to_string(param_len));
    AdamState adam;
    adam.m.assign(static_cast<std::size_t>(param_len), 0.0);
    adam.v.assign(static_cast<std::size_t>(param_len), 0.0);
    return adam;
}

double wsd_lr(double t, const WSDConfig& cfg) {
    validate(cfg);
    const double w = static_cast<double>(cfg.warmup);
    const double s = static_cast<double>(cfg.stable_end);
    const double d = static_cast<double>(cfg.decay);
    if (t < 0.0 || t >= s + d)
        throw RangeError("wsd: step " + std::to_string(t) + " outside [0, " +
                         std::to_string(s + d) + ")");
    if (t < w) return (t / w) * cfg.eta;
    if (t < s) return cfg.eta;
    return std::pow(0.5, 4.0 * (t - s) / d) * cfg.eta;
}

void adam_step(ModelState& state, const std::vector<double>& grads, AdamState& adam,
               double lr) {
    const std::size_t n = state.params.size();
    if (grads.size() != n)
        throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                            std::to_string(n) + " parameters");
    if (adam.m.size() != n || adam.v.size() != n)
        throw ContractError("adam_step: optimizer moments sized " + std::to_string(adam.m.size()) +
                            " do not match " + std::to_string(n) + " parameters");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(grads[i]))
            throw NumericError("adam_step: non-finite gradient in segment '" +
                               segment_of(state.layout, i) + "' at flat index " +
                               std::to_string(i));

    adam.t_opt += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t_opt));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t_opt));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * g;
        adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * g * g;
        const double m_hat = adam.m[i] / bc1;
        const double v_hat = adam.v[i] / bc2;
        state.params[i] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
    }
}

void sgd_step(ModelState& state, const std::vector<double>& grads, double lr) {
    const std::size_t n = state.params.size();
    if (grads.size() != n)
        throw ContractError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                            std::to_string(n) + " parameters");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(grads[i]))
            throw NumericError("sgd_step: non-finite gradient in segment '" +
                               segment_of(state.layout, i) + "' at flat index " +
                               std::to_string(i));
    for (std::size_t i = 0; i < n; ++i) state.params[i] -= lr * grads[i];
}

AdamState clone_optimizer(const AdamState& adam) { return adam; }

}  // namespace mates
