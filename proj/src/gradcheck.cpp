#include "iseg/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "iseg/checkpoint.hpp"
#include "iseg/errors.hpp"
#include "iseg/graph_prop.hpp"
#include "iseg/model.hpp"
#include "iseg/ops.hpp"

namespace iseg {

namespace {

struct Probe {
    double loss;
    std::vector<std::uint8_t> kinks;
};

Probe evaluate(const LossFn& fn, const std::vector<Tensor>& inputs) {
    Tape tape(false);
    tape.enable_kink_probe();
    const auto l = fn(tape, inputs);
    return {l.item(), tape.kink_signature()};
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.data()) v = u(rng);
    return t;
}

// Loss = sum(r * out) with a fixed random r, so every output coordinate matters.
Tensor project(Tape& tape, const Tensor& out, const Tensor& r) { return ops::sum(tape, ops::mul(tape, out, r)); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

ClickIndexSet random_clicks(std::size_t grid, int m, std::mt19937_64& rng) {
    std::vector<std::size_t> cells(grid);
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    std::vector<ClickIndex> out;
    for (int j = 0; j < m && j < static_cast<int>(grid); ++j)
        out.push_back({cells[static_cast<std::size_t>(j)], uniform_int(rng, 0, 1) ? Polarity::negative : Polarity::positive});
    return ClickIndexSet::from_indices(out, grid);
}

struct Instance {
    std::vector<Tensor> inputs;
    LossFn loss;
    int coords_cap = 0;
};

Instance make_instance(const std::string& op, std::mt19937_64& rng, int index) {
    Instance in;
    const auto projected = [&](Shape out_shape, std::function<Tensor(Tape&, const std::vector<Tensor>&)> f) {
        const Tensor r = random_tensor(std::move(out_shape), rng);
        return [r, f](Tape& tape, const std::vector<Tensor>& x) { return project(tape, f(tape, x), r); };
    };
    if (op == "conv2d") {
        const std::size_t cin = uniform_int(rng, 1, 3), cout = uniform_int(rng, 1, 3);
        const int k = uniform_int(rng, 0, 1) ? 3 : 1;
        ops::Conv2dOptions o{uniform_int(rng, 1, 2), uniform_int(rng, 1, 2), uniform_int(rng, 0, 2)};
        const std::size_t h = uniform_int(rng, 5, 8), w = uniform_int(rng, 5, 8);
        in.inputs = {random_tensor({cin, h, w}, rng), random_tensor({cout, cin, std::size_t(k), std::size_t(k)}, rng),
                     random_tensor({cout}, rng)};
        const std::size_t oh = (h + 2 * o.pad - o.dilation * (k - 1) - 1) / o.stride + 1;
        const std::size_t ow = (w + 2 * o.pad - o.dilation * (k - 1) - 1) / o.stride + 1;
        in.loss = projected({cout, oh, ow}, [o](Tape& t, const std::vector<Tensor>& x) {
            return ops::conv2d(t, x[0], x[1], x[2], o);
        });
    } else if (op == "bilinear_upsample") {
        const std::size_t c = uniform_int(rng, 1, 2), h = uniform_int(rng, 2, 4), w = uniform_int(rng, 2, 4);
        const int f = uniform_int(rng, 1, 3);
        in.inputs = {random_tensor({c, h, w}, rng)};
        in.loss = projected({c, h * f, w * f},
                            [f](Tape& t, const std::vector<Tensor>& x) { return ops::bilinear_upsample(t, x[0], f); });
    } else if (op == "matmul") {
        const std::size_t n = uniform_int(rng, 1, 4), k = uniform_int(rng, 1, 4), m = uniform_int(rng, 1, 4);
        in.inputs = {random_tensor({n, k}, rng), random_tensor({k, m}, rng)};
        in.loss = projected({n, m}, [](Tape& t, const std::vector<Tensor>& x) { return ops::matmul(t, x[0], x[1]); });
    } else if (op == "relu") {
        auto x = random_tensor({2, 3, 4}, rng, 0.01, 1.0);
        for (double& v : x.data())
            if (uniform_int(rng, 0, 1)) v = -v;
        in.inputs = {x};
        in.loss = projected({2, 3, 4}, [](Tape& t, const std::vector<Tensor>& x) { return ops::relu(t, x[0]); });
    } else if (op == "sigmoid") {
        in.inputs = {random_tensor({2, 3, 4}, rng, -4.0, 4.0)};
        in.loss = projected({2, 3, 4}, [](Tape& t, const std::vector<Tensor>& x) { return ops::sigmoid(t, x[0]); });
    } else if (op == "add" || op == "mul") {
        in.inputs = {random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng)};
        const bool is_add = op == "add";
        in.loss = projected({2, 3, 3}, [is_add](Tape& t, const std::vector<Tensor>& x) {
            return is_add ? ops::add(t, x[0], x[1]) : ops::mul(t, x[0], x[1]);
        });
    } else if (op == "scale") {
        const double f = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        in.inputs = {random_tensor({3, 4}, rng)};
        in.loss = projected({3, 4}, [f](Tape& t, const std::vector<Tensor>& x) { return ops::scale(t, x[0], f); });
    } else if (op == "sum") {
        in.inputs = {random_tensor({2, 3, 4}, rng)};
        in.loss = projected({}, [](Tape& t, const std::vector<Tensor>& x) { return ops::sum(t, x[0]); });
    } else if (op == "channel_sum") {
        in.inputs = {random_tensor({3, 3, 4}, rng)};
        in.loss = projected({1, 3, 4}, [](Tape& t, const std::vector<Tensor>& x) { return ops::channel_sum(t, x[0]); });
    } else if (op == "concat") {
        const int parts = uniform_int(rng, 2, 3);
        std::size_t total = 0;
        for (int i = 0; i < parts; ++i) {
            const std::size_t c = uniform_int(rng, 1, 3);
            total += c;
            in.inputs.push_back(random_tensor({c, 3, 4}, rng));
        }
        in.loss = projected({total, 3, 4},
                            [](Tape& t, const std::vector<Tensor>& x) { return ops::concat_channels(t, x); });
    } else if (op == "softmax") {
        const std::size_t n = uniform_int(rng, 1, 4), m = uniform_int(rng, 1, 5);
        in.inputs = {random_tensor({n, m}, rng, -3.0, 3.0)};
        in.loss = projected({n, m}, [](Tape& t, const std::vector<Tensor>& x) { return ops::softmax_rows(t, x[0]); });
    } else if (op == "sgm") {
        const std::size_t c = uniform_int(rng, 2, 4), h = uniform_int(rng, 3, 5), w = uniform_int(rng, 3, 5);
        const auto clicks = random_clicks(h * w, uniform_int(rng, 1, 3), rng);
        in.inputs = {random_tensor({c, h, w}, rng), random_tensor({c, c}, rng), random_tensor({c, c}, rng),
                     random_tensor({c, c}, rng), random_tensor({c, 2}, rng)};
        in.loss = projected({c, h, w}, [clicks](Tape& t, const std::vector<Tensor>& x) {
            return sgm_forward(t, x[0], clicks, SgmParams{x[1], x[2], x[3], x[4]});
        });
    } else if (op == "hsgm") {
        const std::size_t cl = uniform_int(rng, 2, 3), ch = uniform_int(rng, 2, 3);
        const std::size_t h = uniform_int(rng, 3, 5), w = uniform_int(rng, 3, 5);
        const auto clicks = random_clicks(h * w, uniform_int(rng, 1, 3), rng);
        in.inputs = {random_tensor({cl, h, w}, rng),          random_tensor({ch, h, w}, rng),
                     random_tensor({cl, cl + ch, 1, 1}, rng), random_tensor({cl}, rng, 0.2, 0.6),
                     random_tensor({cl, cl}, rng),            random_tensor({ch, ch}, rng),
                     random_tensor({ch, ch}, rng),            random_tensor({ch, 2}, rng)};
        in.loss = projected({cl, h, w}, [clicks](Tape& t, const std::vector<Tensor>& x) {
            return hsgm_forward(t, x[0], x[1], clicks, HsgmParams{x[2], x[3], x[4], x[5], x[6], x[7]});
        });
    } else if (op == "nfl") {
        const int h = uniform_int(rng, 3, 8), w = uniform_int(rng, 3, 8);
        const double gamma = std::array<double, 4>{0.0, 1.0, 2.0, 2.5}[static_cast<std::size_t>(index % 4)];
        BinMask target(h, w);
        for (auto& v : target.data) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
        in.inputs = {random_tensor({1, std::size_t(h), std::size_t(w)}, rng, 0.05, 0.95)};
        in.loss = [target, gamma](Tape& t, const std::vector<Tensor>& x) { return nfl_loss(t, x[0], target, gamma); };
    } else if (op == "fusion" || op == "model") {
        ModelConfig cfg;
        cfg.c_low = 3;
        cfg.c_high = 4;
        const FpmMode modes[] = {FpmMode::sgm_hsgm, FpmMode::none, FpmMode::sgm, FpmMode::sgm_fuse,
                                 FpmMode::sgm_fuse_sgm};
        cfg.fpm = modes[index % 5];
        cfg.polarity_embedding = index % 2 == 0;
        cfg.seed = rng();
        const auto params = ModelParams::init(cfg);
        const int h = 16, w = 24;
        Tensor image = random_tensor({3, std::size_t(h), std::size_t(w)}, rng, 0.0, 1.0);
        ProbMask prev(h, w);
        for (double& v : prev.data) v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        ClickSet clicks;
        const int m = uniform_int(rng, 1, 3);
        for (int j = 0; j < m; ++j)
            clicks.push_back({uniform_int(rng, 0, h - 1), uniform_int(rng, 0, w - 1),
                              j % 2 ? Polarity::negative : Polarity::positive, j + 1});
        const auto x = encode_input(image, clicks, prev, 3);
        in.inputs = params.parameters(); // shared handles: perturbing them perturbs the model
        in.coords_cap = 6;
        if (op == "fusion") {
            const Tensor r = random_tensor({3, std::size_t(h / 2), std::size_t(w / 2)}, rng);
            std::vector<Tensor> fusion_inputs;
            for (const auto& name : {"img1.w", "img1.b", "img2.w", "img2.b", "guide1.w", "guide1.b", "guide2.w", "guide2.b"})
                fusion_inputs.push_back(params.get(name));
            in.inputs = fusion_inputs;
            in.coords_cap = 0;
            in.loss = [params, x, r](Tape& t, const std::vector<Tensor>&) {
                return project(t, fuse_guidance(t, x, params), r);
            };
        } else {
            BinMask target(h, w);
            for (auto& v : target.data) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
            in.loss = [params, x, clicks, target](Tape& t, const std::vector<Tensor>&) {
                return nfl_loss(t, forward(t, x, clicks, params).prob, target, 2.0);
            };
        }
    } else {
        throw ArgumentError("gradcheck: unknown op '" + op + "'");
    }
    return in;
}

} // namespace

void check_instance(const LossFn& loss, std::vector<Tensor> inputs, const GradCheckOptions& opt, std::mt19937_64& rng,
                    GradCheckResult& acc) {
    for (auto& t : inputs) {
        t.set_trainable(true);
        t.clear_grad();
    }
    {
        Tape tape;
        const auto l = loss(tape, inputs);
        backward(l, tape);
    }
    const auto base = evaluate(loss, inputs);
    for (auto& t : inputs) {
        const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                          : std::vector<double>(t.numel(), 0.0);
        std::vector<std::size_t> coords(t.numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (opt.max_coords_per_tensor > 0 && coords.size() > static_cast<std::size_t>(opt.max_coords_per_tensor)) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(static_cast<std::size_t>(opt.max_coords_per_tensor));
        }
        auto data = t.data();
        for (std::size_t i : coords) {
            const double keep = data[i];
            data[i] = keep + opt.step;
            const auto plus = evaluate(loss, inputs);
            data[i] = keep - opt.step;
            const auto minus = evaluate(loss, inputs);
            data[i] = keep;
            if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
                ++acc.coords_skipped;
                continue;
            }
            const double numeric = (plus.loss - minus.loss) / (2.0 * opt.step);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
            acc.max_rel_error = std::max(acc.max_rel_error, rel);
            ++acc.coords_checked;
        }
        t.clear_grad();
    }
    ++acc.instances;
}

const std::vector<std::string>& gradcheck_op_names() {
    static const std::vector<std::string> names = {"conv2d", "bilinear_upsample", "matmul", "relu", "sigmoid",
                                                   "add",    "mul",               "scale",  "sum",  "channel_sum",
                                                   "concat", "softmax",           "sgm",    "hsgm", "nfl",
                                                   "fusion", "model"};
    return names;
}

std::vector<GradCheckResult> run_gradcheck(const std::vector<std::string>& ops, const GradCheckOptions& opt) {
    std::vector<std::string> names;
    for (const auto& op : ops) {
        if (op == "all") names.insert(names.end(), gradcheck_op_names().begin(), gradcheck_op_names().end());
        else names.push_back(op);
    }
    std::vector<GradCheckResult> out;
    for (const auto& op : names) {
        std::mt19937_64 rng(opt.seed ^ fnv1a(reinterpret_cast<const std::uint8_t*>(op.data()), op.size()));
        GradCheckResult res;
        res.op = op;
        for (int i = 0; i < opt.instances; ++i) {
            auto inst = make_instance(op, rng, i);
            GradCheckOptions o = opt;
            if (inst.coords_cap > 0 && (o.max_coords_per_tensor == 0 || o.max_coords_per_tensor > inst.coords_cap))
                o.max_coords_per_tensor = inst.coords_cap;
            check_instance(inst.loss, inst.inputs, o, rng, res);
        }
        res.passed = res.instances >= opt.instances && res.coords_checked > 0 && res.max_rel_error < opt.tolerance;
        out.push_back(res);
    }
    return out;
}

} // namespace iseg
