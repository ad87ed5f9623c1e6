#pragma once

#include <vector>

#include "iseg/tensor.hpp"

namespace iseg {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

/// One bias-corrected Adam update over `params` using their current gradients.
/// `state` is sized lazily on first use and must then keep matching `params`.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamOptions& opt);

double grad_norm(const std::vector<Tensor>& params);
void zero_grads(std::vector<Tensor>& params);
/// Multiplies every gradient by `factor` (batch averaging).
void scale_grads(std::vector<Tensor>& params, double factor);

} // namespace iseg
