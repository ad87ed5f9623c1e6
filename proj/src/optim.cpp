#include "iseg/optim.hpp"

#include <cmath>
#include <string>

#include "iseg/errors.hpp"

namespace iseg {

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamOptions& opt) {
    if (!(opt.lr > 0.0)) throw ArgumentError("adam_step: learning rate must be positive");
    if (state.m.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                            " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].numel()) {
            throw ContractError("adam_step: state shape mismatch for parameter " + std::to_string(i));
        }
        if (params[i].trainable() && !params[i].has_grad()) {
            throw ContractError("adam_step: trainable parameter " + std::to_string(i) + " has no gradient");
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable()) continue;
        auto w = params[i].data();
        const auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

double grad_norm(const std::vector<Tensor>& params) {
    double acc = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.grad_buffer(), p.zero_grad();
}

void scale_grads(std::vector<Tensor>& params, double factor) {
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        for (double& g : p.grad()) g *= factor;
    }
}

} // namespace iseg
