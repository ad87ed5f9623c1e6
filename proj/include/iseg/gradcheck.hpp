#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "iseg/tensor.hpp"

namespace iseg {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
    double floor = 1e-3;
    int instances = 20;
    /// Coordinates probed per input tensor and instance; 0 probes all of them.
    int max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    std::string op;
    int instances = 0;
    long coords_checked = 0;
    long coords_skipped = 0; // perturbation crossed a relu kink
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Builds the scalar loss from the inputs on the given tape.
using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// Central finite differences against reverse mode for every (sampled) coordinate
/// of every input. Inputs are made trainable. Coordinates whose +/- step changes the
/// relu sign pattern are skipped and counted.
void check_instance(const LossFn& loss, std::vector<Tensor> inputs, const GradCheckOptions& opt, std::mt19937_64& rng,
                    GradCheckResult& acc);

/// Names accepted by run_gradcheck ("all" expands to the full list).
const std::vector<std::string>& gradcheck_op_names();

/// Runs opt.instances random instances per named op.
std::vector<GradCheckResult> run_gradcheck(const std::vector<std::string>& ops, const GradCheckOptions& opt);

} // namespace iseg
