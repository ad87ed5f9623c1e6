#include "iseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "iseg/errors.hpp"

namespace iseg::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

struct ConvGeometry {
    std::size_t cin, h, w, cout, k, oh, ow;
    int stride, dilation, pad;
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t plane = g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + ci * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = col + ((ci * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki) * g.dilation;
                    double* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = xc + iy * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix =
                            static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kj) * g.dilation;
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
    const std::size_t plane = g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        double* dc = dx + ci * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = col + ((ci * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki) * g.dilation;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    const double* src = row + oy * g.ow;
                    double* dst = dc + iy * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix =
                            static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kj) * g.dilation;
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Per-axis interpolation table for corner-aligned resampling.
struct AxisTable {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

AxisTable corner_aligned_axis(std::size_t in, std::size_t out) {
    AxisTable t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double src = (out == 1 || in == 1) ? 0.0
                                                 : static_cast<double>(i) * static_cast<double>(in - 1) /
                                                       static_cast<double>(out - 1);
        std::size_t lo = static_cast<std::size_t>(std::floor(src));
        lo = std::min(lo, in - 1);
        const std::size_t hi = std::min(lo + 1, in - 1);
        t.lo[i] = lo;
        t.hi[i] = hi;
        t.frac[i] = src - static_cast<double>(lo);
    }
    return t;
}

} // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions opt) {
    require_rank(input, 3, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    if (kernel.dim(1) != input.dim(0)) {
        throw DimensionError("conv2d: channel axis mismatch, kernel expects " + std::to_string(kernel.dim(1)) +
                             " input channels, input has " + std::to_string(input.dim(0)));
    }
    if (kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0) {
        throw DimensionError("conv2d: kernel spatial axes must be equal and odd, got " + shape_str(kernel.shape()));
    }
    if (opt.stride < 1 || opt.dilation < 1 || opt.pad < 0) {
        throw ArgumentError("conv2d: stride and dilation must be >= 1 and pad >= 0");
    }
    ConvGeometry g{};
    g.cin = input.dim(0);
    g.h = input.dim(1);
    g.w = input.dim(2);
    g.cout = kernel.dim(0);
    g.k = kernel.dim(2);
    g.stride = opt.stride;
    g.dilation = opt.dilation;
    g.pad = opt.pad;
    const long span = static_cast<long>(opt.dilation) * (static_cast<long>(g.k) - 1) + 1;
    const long oh = (static_cast<long>(g.h) + 2 * opt.pad - span) / opt.stride + 1;
    const long ow = (static_cast<long>(g.w) + 2 * opt.pad - span) / opt.stride + 1;
    if (static_cast<long>(g.h) + 2 * opt.pad < span || oh < 1) {
        throw DimensionError("conv2d: height axis too small for kernel extent");
    }
    if (static_cast<long>(g.w) + 2 * opt.pad < span || ow < 1) {
        throw DimensionError("conv2d: width axis too small for kernel extent");
    }
    g.oh = static_cast<std::size_t>(oh);
    g.ow = static_cast<std::size_t>(ow);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
        throw DimensionError("conv2d: bias must have shape [" + std::to_string(g.cout) + "], got " +
                             shape_str(bias.shape()));
    }

    const std::size_t plane = g.oh * g.ow;
    const std::size_t rows = g.cin * g.k * g.k;
    std::shared_ptr<AlignedBuffer> col;
    const double* col_ptr = input.data().data();
    if (!g.pointwise()) {
        col = std::make_shared<AlignedBuffer>(rows * plane);
        im2col(input.data().data(), g, col->data());
        col_ptr = col->data();
    }

    const bool track = tape.tracks({&input, &kernel, &bias});
    Tensor out = make_result({g.cout, g.oh, g.ow}, track);
    MapMat y(out.data().data(), g.cout, plane);
    ConstMapMat wmat(kernel.data().data(), g.cout, rows);
    ConstMapMat cmat(col_ptr, rows, plane);
    y.noalias() = wmat * cmat;
    if (bias.defined()) {
        const auto b = bias.data();
        for (std::size_t o = 0; o < g.cout; ++o) y.row(o).array() += b[o];
    }

    if (track) {
        tape.record([out, input, kernel, bias, col, g, rows, plane]() mutable {
            if (!out.has_grad()) return;
            ConstMapMat dy(out.grad().data(), g.cout, plane);
            const double* cp = col ? col->data() : input.data().data();
            ConstMapMat cmat(cp, rows, plane);
            if (kernel.requires_grad()) {
                MapMat dw(kernel.grad_buffer().data(), g.cout, rows);
                dw.noalias() += dy * cmat.transpose();
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = bias.grad_buffer();
                for (std::size_t o = 0; o < g.cout; ++o) db[o] += dy.row(o).sum();
            }
            if (input.requires_grad()) {
                ConstMapMat wmat(kernel.data().data(), g.cout, rows);
                if (g.pointwise()) {
                    MapMat dx(input.grad_buffer().data(), rows, plane);
                    dx.noalias() += wmat.transpose() * dy;
                } else {
                    AlignedBuffer dcol(rows * plane);
                    MapMat dc(dcol.data(), rows, plane);
                    dc.noalias() = wmat.transpose() * dy;
                    col2im_add(dcol.data(), g, input.grad_buffer().data());
                }
            }
        });
    }
    return out;
}

Tensor bilinear_upsample(Tape& tape, const Tensor& input, int factor) {
    if (factor < 1) throw ArgumentError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
    require_rank(input, 3, "bilinear_upsample", "input");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t oh = h * static_cast<std::size_t>(factor), ow = w * static_cast<std::size_t>(factor);
    const bool track = tape.tracks({&input});
    Tensor out = make_result({c, oh, ow}, track);
    if (factor == 1) {
        std::copy(input.data().begin(), input.data().end(), out.data().begin());
    } else {
        const auto ty = corner_aligned_axis(h, oh);
        const auto tx = corner_aligned_axis(w, ow);
        const double* src = input.data().data();
        double* dst = out.data().data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* s = src + ch * h * w;
            double* d = dst + ch * oh * ow;
            for (std::size_t y = 0; y < oh; ++y) {
                const double fy = ty.frac[y];
                const double* r0 = s + ty.lo[y] * w;
                const double* r1 = s + ty.hi[y] * w;
                for (std::size_t x = 0; x < ow; ++x) {
                    const double fx = tx.frac[x];
                    const double top = r0[tx.lo[x]] * (1.0 - fx) + r0[tx.hi[x]] * fx;
                    const double bot = r1[tx.lo[x]] * (1.0 - fx) + r1[tx.hi[x]] * fx;
                    d[y * ow + x] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    if (track) {
        tape.record([out, input, c, h, w, oh, ow, factor]() mutable {
            if (!out.has_grad() || !input.requires_grad()) return;
            auto dx = input.grad_buffer();
            const auto dy = out.grad();
            if (factor == 1) {
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                return;
            }
            const auto ty = corner_aligned_axis(h, oh);
            const auto tx = corner_aligned_axis(w, ow);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double* g = dx.data() + ch * h * w;
                const double* gy = dy.data() + ch * oh * ow;
                for (std::size_t y = 0; y < oh; ++y) {
                    const double fy = ty.frac[y];
                    double* r0 = g + ty.lo[y] * w;
                    double* r1 = g + ty.hi[y] * w;
                    for (std::size_t x = 0; x < ow; ++x) {
                        const double fx = tx.frac[x];
                        const double v = gy[y * ow + x];
                        r0[tx.lo[x]] += v * (1.0 - fy) * (1.0 - fx);
                        r0[tx.hi[x]] += v * (1.0 - fy) * fx;
                        r1[tx.lo[x]] += v * fy * (1.0 - fx);
                        r1[tx.hi[x]] += v * fy * fx;
                    }
                }
            }
        });
    }
    return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul", "lhs");
    require_rank(b, 2, "matmul", "rhs");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner axis mismatch, lhs " + shape_str(a.shape()) + " rhs " +
                             shape_str(b.shape()));
    }
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    const bool track = tape.tracks({&a, &b});
    Tensor out = make_result({n, m}, track);
    MapMat(out.data().data(), n, m).noalias() =
        ConstMapMat(a.data().data(), n, k) * ConstMapMat(b.data().data(), k, m);
    if (track) {
        tape.record([out, a, b, n, k, m]() mutable {
            if (!out.has_grad()) return;
            ConstMapMat dy(out.grad().data(), n, m);
            if (a.requires_grad()) {
                MapMat(a.grad_buffer().data(), n, k).noalias() += dy * ConstMapMat(b.data().data(), k, m).transpose();
            }
            if (b.requires_grad()) {
                MapMat(b.grad_buffer().data(), k, m).noalias() += ConstMapMat(a.data().data(), n, k).transpose() * dy;
            }
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    const bool track = tape.tracks({&x});
    Tensor out = make_result(x.shape(), track);
    const auto in = x.data();
    auto o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    if (tape.probing_kinks()) {
        auto& sig = tape.kink_signature();
        for (double v : in) sig.push_back(v > 0.0 ? 1 : 0);
    }
    if (track) {
        tape.record([out, x]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto dx = x.grad_buffer();
            const auto dy = out.grad();
            const auto in = x.data();
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (in[i] > 0.0) dx[i] += dy[i];
        });
    }
    return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    const bool track = tape.tracks({&x});
    Tensor out = make_result(x.shape(), track);
    const auto in = x.data();
    auto o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double v = in[i];
        // Split by sign so exp never overflows.
        if (v >= 0.0) {
            o[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            o[i] = e / (1.0 + e);
        }
    }
    if (track) {
        tape.record([out, x]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto dx = x.grad_buffer();
            const auto dy = out.grad();
            const auto s = out.data();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * s[i] * (1.0 - s[i]);
        });
    }
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const bool track = tape.tracks({&a, &b});
    Tensor out = make_result(a.shape(), track);
    const auto x = a.data(), y = b.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    if (track) {
        tape.record([out, a, b]() mutable {
            if (!out.has_grad()) return;
            const auto dy = out.grad();
            for (const Tensor* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto d = t->grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const bool track = tape.tracks({&a, &b});
    Tensor out = make_result(a.shape(), track);
    const auto x = a.data(), y = b.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    if (track) {
        tape.record([out, a, b]() mutable {
            if (!out.has_grad()) return;
            const auto dy = out.grad();
            if (a.requires_grad()) {
                auto d = a.grad_buffer();
                const auto other = b.data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad_buffer();
                const auto other = a.data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
    const bool track = tape.tracks({&x});
    Tensor out = make_result(x.shape(), track);
    const auto in = x.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
    if (track) {
        tape.record([out, x, factor]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto d = x.grad_buffer();
            const auto dy = out.grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * factor;
        });
    }
    return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
    const bool track = tape.tracks({&x});
    Tensor out = make_result({}, track);
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.data()[0] = acc;
    if (track) {
        tape.record([out, x]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const double g = out.grad()[0];
            for (double& d : x.grad_buffer()) d += g;
        });
    }
    return out;
}

Tensor channel_sum(Tape& tape, const Tensor& x) {
    require_rank(x, 3, "channel_sum", "input");
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    const bool track = tape.tracks({&x});
    Tensor out = make_result({1, x.dim(1), x.dim(2)}, track);
    auto o = out.data();
    const auto in = x.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) o[i] += in[ch * plane + i];
    if (track) {
        tape.record([out, x, c, plane]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto d = x.grad_buffer();
            const auto dy = out.grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < plane; ++i) d[ch * plane + i] += dy[i];
        });
    }
    return out;
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
    std::size_t channels = 0;
    bool track = false;
    for (const auto& p : parts) {
        require_rank(p, 3, "concat_channels", "input");
        if (p.dim(1) != parts[0].dim(1)) throw DimensionError("concat_channels: height axis mismatch");
        if (p.dim(2) != parts[0].dim(2)) throw DimensionError("concat_channels: width axis mismatch");
        channels += p.dim(0);
        track = track || tape.tracks({&p});
    }
    Tensor out = make_result({channels, parts[0].dim(1), parts[0].dim(2)}, track);
    auto o = out.data().begin();
    for (const auto& p : parts) o = std::copy(p.data().begin(), p.data().end(), o);
    if (track) {
        tape.record([out, parts]() mutable {
            if (!out.has_grad()) return;
            const auto dy = out.grad();
            std::size_t offset = 0;
            for (auto& p : parts) {
                if (p.requires_grad()) {
                    auto d = p.grad_buffer();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[offset + i];
                }
                offset += p.numel();
            }
        });
    }
    return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "softmax_rows", "input");
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (m == 0) throw DimensionError("softmax_rows: empty set axis");
    const bool track = tape.tracks({&x});
    Tensor out = make_result(x.shape(), track);
    const auto in = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = in.data() + r * m;
        double* dst = o.data() + r * m;
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += (dst[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < m; ++j) dst[j] /= z;
    }
    if (track) {
        tape.record([out, x, n, m]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            auto dx = x.grad_buffer();
            const auto dy = out.grad();
            const auto s = out.data();
            for (std::size_t r = 0; r < n; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += dy[r * m + j] * s[r * m + j];
                for (std::size_t j = 0; j < m; ++j) dx[r * m + j] += s[r * m + j] * (dy[r * m + j] - dot);
            }
        });
    }
    return out;
}

double sample_bilinear(std::span<const double> plane, int height, int width, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
    const double fy = y - y0, fx = x - x0;
    const auto at = [&](int r, int c) { return plane[static_cast<std::size_t>(r) * width + c]; };
    const double top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    const double bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

} // namespace iseg::ops
