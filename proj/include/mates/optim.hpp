#pragma once

#include <cstdint>
#include <vector>

#include "mates/model.hpp"

namespace mates {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t_opt = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamState&) const = default;
};

AdamState adam_init(std::int64_t param_len);

// Warmup-Stable-Decay schedule: linear ramp to eta over [0, W), flat eta on
// [W, S), then 0.5^{4(t-S)/D} * eta on [S, S+D). Steps at or past S+D are out
// of the schedule's domain.
struct WSDConfig {
    std::int64_t warmup = 0;       // W
    std::int64_t stable_end = 0;   // S
    std::int64_t decay = 1;        // D
    double eta = 1e-3;

    bool operator==(const WSDConfig&) const = default;
};

double wsd_lr(double t, const WSDConfig& cfg);

// Bias-corrected Adam update in place; elementwise, so the result is
// independent of how parameters are grouped into segments.
void adam_step(ModelState& state, const std::vector<double>& grads, AdamState& adam,
               double lr);

// Plain gradient descent, for probes that must stay first-order exact.
void sgd_step(ModelState& state, const std::vector<double>& grads, double lr);

AdamState clone_optimizer(const AdamState& adam);

}  // namespace mates
