#pragma once

#include <span>
#include <vector>

#include "iseg/tensor.hpp"

namespace iseg::ops {

struct Conv2dOptions {
    int stride = 1;
    int dilation = 1;
    int pad = 0;
};

/// Cross-correlation of a CinxHxW input with a CoutxCinxKxK kernel (K odd).
/// `bias` may be an undefined tensor; otherwise it has shape [Cout].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Conv2dOptions opt = {});

/// Corner-aligned bilinear upsampling of CxHxW to Cx(fH)x(fW): output row y samples
/// source row y*(H-1)/(fH-1), so the first and last rows/columns coincide with the
/// input's. The zoom crop and remap in the cascade use the same convention.
Tensor bilinear_upsample(Tape& tape, const Tensor& input, int factor);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor sum(Tape& tape, const Tensor& x);
/// CxHxW -> 1xHxW.
Tensor channel_sum(Tape& tape, const Tensor& x);
/// Channel concatenation of CixHxW tensors sharing H and W.
Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts);
/// Row-wise softmax of an n x m matrix (each row is normalized over its m entries).
Tensor softmax_rows(Tape& tape, const Tensor& x);

/// Corner-aligned bilinear sample of a single HxW plane at fractional (y, x),
/// clamped to the plane.
double sample_bilinear(std::span<const double> plane, int height, int width, double y, double x);

} // namespace iseg::ops
