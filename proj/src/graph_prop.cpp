#include "iseg/graph_prop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "iseg/errors.hpp"
#include "iseg/ops.hpp"

namespace iseg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_square(const Tensor& t, std::size_t c, const char* name) {
    if (t.rank() != 2 || t.dim(0) != c || t.dim(1) != c) {
        throw DimensionError(std::string(name) + " must be " + std::to_string(c) + "x" + std::to_string(c) +
                             ", got " + shape_str(t.shape()));
    }
}

void validate_clicks(const ClickIndexSet& clicks, std::size_t n) {
    for (const auto& e : clicks.entries()) {
        if (e.index >= n) {
            throw ArgumentError("click index " + std::to_string(e.index) + " outside feature grid of " +
                                std::to_string(n) + " cells");
        }
    }
}

// Forward intermediates of click_message_passing, retained for backward.
struct MessageCache {
    RowMat q;        // Cq x N, theta * X
    RowMat keys_in;  // Cq x M, X[:, u] + polarity embedding
    RowMat keys;     // Cq x M, phi * keys_in
    RowMat attn;     // N x M
    RowMat vals_u;   // Cv x M, V[:, u]
    RowMat messages; // Cv x M, W^T V[:, u]
};

void attention_forward(const Tensor& attn_feats, const ClickIndexSet& clicks, const Tensor& theta,
                       const Tensor& phi, const Tensor& polarity, MessageCache& cache) {
    const std::size_t cq = attn_feats.dim(0);
    const std::size_t n = attn_feats.dim(1) * attn_feats.dim(2);
    const std::size_t m = clicks.size();
    ConstMapMat x(attn_feats.data().data(), cq, n);
    cache.q.noalias() = ConstMapMat(theta.data().data(), cq, cq) * x;
    cache.keys_in.resize(cq, m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto& e = clicks.entries()[j];
        cache.keys_in.col(j) = x.col(e.index);
        if (polarity.defined()) {
            const std::size_t pc = static_cast<std::size_t>(e.polarity);
            for (std::size_t c = 0; c < cq; ++c) cache.keys_in(c, j) += polarity.data()[c * 2 + pc];
        }
    }
    cache.keys.noalias() = ConstMapMat(phi.data().data(), cq, cq) * cache.keys_in;
    cache.attn.noalias() = cache.q.transpose() * cache.keys;
    for (std::size_t r = 0; r < n; ++r) {
        auto row = cache.attn.row(r);
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
}

void check_message_args(const Tensor& attn_feats, const Tensor& values, const Tensor& theta, const Tensor& phi,
                        const Tensor& w, const Tensor& polarity) {
    if (attn_feats.rank() != 3 || values.rank() != 3) {
        throw DimensionError("message passing: features must be CxHxW");
    }
    if (attn_feats.dim(1) != values.dim(1)) throw DimensionError("message passing: height axis mismatch");
    if (attn_feats.dim(2) != values.dim(2)) throw DimensionError("message passing: width axis mismatch");
    const std::size_t cq = attn_feats.dim(0);
    require_square(theta, cq, "theta");
    require_square(phi, cq, "phi");
    require_square(w, values.dim(0), "message transform");
    if (polarity.defined() && (polarity.rank() != 2 || polarity.dim(0) != cq || polarity.dim(1) != 2)) {
        throw DimensionError("polarity embedding must be " + std::to_string(cq) + "x2");
    }
}

} // namespace

ClickIndexSet ClickIndexSet::from_clicks(const ClickSet& clicks, std::size_t grid_h, std::size_t grid_w,
                                         int stride) {
    if (stride < 1) throw ArgumentError("click stride must be >= 1");
    std::vector<ClickIndex> entries;
    for (const auto& c : clicks) {
        if (c.row < 0 || c.col < 0) throw ArgumentError("negative click coordinate");
        const std::size_t r = std::min<std::size_t>(static_cast<std::size_t>(c.row / stride), grid_h - 1);
        const std::size_t q = std::min<std::size_t>(static_cast<std::size_t>(c.col / stride), grid_w - 1);
        entries.push_back({r * grid_w + q, c.polarity});
    }
    return from_indices(entries, grid_h * grid_w);
}

ClickIndexSet ClickIndexSet::from_indices(const std::vector<ClickIndex>& entries, std::size_t grid_size) {
    ClickIndexSet out;
    std::unordered_set<std::size_t> seen;
    for (const auto& e : entries) {
        if (e.index >= grid_size) {
            throw ArgumentError("click index " + std::to_string(e.index) + " outside grid of " +
                                std::to_string(grid_size) + " cells");
        }
        if (seen.insert(e.index).second) out.entries_.push_back(e);
    }
    return out;
}

Tensor click_message_passing(Tape& tape, const Tensor& attn_feats, const Tensor& values,
                             const ClickIndexSet& clicks, const Tensor& theta, const Tensor& phi,
                             const Tensor& w, const Tensor& polarity) {
    check_message_args(attn_feats, values, theta, phi, w, polarity);
    const std::size_t cq = attn_feats.dim(0), cv = values.dim(0);
    const std::size_t n = attn_feats.dim(1) * attn_feats.dim(2);
    const std::size_t m = clicks.size();
    validate_clicks(clicks, n);
    if (m == 0) return values;

    auto cache = std::make_shared<MessageCache>();
    attention_forward(attn_feats, clicks, theta, phi, polarity, *cache);
    ConstMapMat v(values.data().data(), cv, n);
    cache->vals_u.resize(cv, m);
    for (std::size_t j = 0; j < m; ++j) cache->vals_u.col(j) = v.col(clicks.entries()[j].index);
    cache->messages.noalias() = ConstMapMat(w.data().data(), cv, cv).transpose() * cache->vals_u;

    const bool track = tape.tracks({&attn_feats, &values, &theta, &phi, &w, &polarity});
    Tensor out = make_result(values.shape(), track);
    MapMat y(out.data().data(), cv, n);
    y = v;
    y.noalias() += cache->messages * cache->attn.transpose();

    if (track) {
        tape.record([=]() mutable {
            if (!out.has_grad()) return;
            ConstMapMat dy(out.grad().data(), cv, n);
            const auto& c = *cache;
            if (values.requires_grad()) MapMat(values.grad_buffer().data(), cv, n) += dy;

            const RowMat d_messages = dy * c.attn; // Cv x M
            RowMat d_attn = dy.transpose() * c.messages; // N x M
            // Softmax Jacobian, row by row.
            for (std::size_t r = 0; r < n; ++r) {
                const double dot = d_attn.row(r).dot(c.attn.row(r));
                d_attn.row(r) = c.attn.row(r).array() * (d_attn.row(r).array() - dot);
            }
            const RowMat dq = c.keys * d_attn.transpose(); // Cq x N
            const RowMat dkeys = c.q * d_attn;             // Cq x M
            ConstMapMat x(attn_feats.data().data(), cq, n);
            ConstMapMat phi_m(phi.data().data(), cq, cq);
            ConstMapMat theta_m(theta.data().data(), cq, cq);
            ConstMapMat w_m(w.data().data(), cv, cv);

            if (theta.requires_grad()) MapMat(theta.grad_buffer().data(), cq, cq).noalias() += dq * x.transpose();
            if (phi.requires_grad()) MapMat(phi.grad_buffer().data(), cq, cq).noalias() += dkeys * c.keys_in.transpose();
            if (w.requires_grad()) MapMat(w.grad_buffer().data(), cv, cv).noalias() += c.vals_u * d_messages.transpose();

            const RowMat dkeys_in = phi_m.transpose() * dkeys; // Cq x M
            if (attn_feats.requires_grad()) {
                MapMat dx(attn_feats.grad_buffer().data(), cq, n);
                dx.noalias() += theta_m.transpose() * dq;
                for (std::size_t j = 0; j < m; ++j) dx.col(clicks.entries()[j].index) += dkeys_in.col(j);
            }
            if (polarity.defined() && polarity.requires_grad()) {
                auto dp = polarity.grad_buffer();
                for (std::size_t j = 0; j < m; ++j) {
                    const std::size_t pc = static_cast<std::size_t>(clicks.entries()[j].polarity);
                    for (std::size_t ch = 0; ch < cq; ++ch) dp[ch * 2 + pc] += dkeys_in(ch, j);
                }
            }
            if (values.requires_grad()) {
                MapMat dv(values.grad_buffer().data(), cv, n);
                const RowMat dvals_u = w_m * d_messages;
                for (std::size_t j = 0; j < m; ++j) dv.col(clicks.entries()[j].index) += dvals_u.col(j);
            }
        });
    }
    return out;
}

namespace {

Tensor attention_matrix(const Tensor& feats, const ClickIndexSet& clicks, const Tensor& theta, const Tensor& phi,
                        const Tensor& polarity) {
    if (clicks.empty()) throw ArgumentError("attention over an empty click set");
    if (feats.rank() != 3) throw DimensionError("attention features must be CxHxW");
    const std::size_t cq = feats.dim(0), n = feats.dim(1) * feats.dim(2);
    require_square(theta, cq, "theta");
    require_square(phi, cq, "phi");
    validate_clicks(clicks, n);
    MessageCache cache;
    attention_forward(feats, clicks, theta, phi, polarity, cache);
    Tensor out({n, clicks.size()});
    MapMat(out.data().data(), n, clicks.size()) = cache.attn;
    return out;
}

} // namespace

Tensor sgm_attention(const Tensor& features, const ClickIndexSet& clicks, const SgmParams& p) {
    return attention_matrix(features, clicks, p.theta, p.phi, p.polarity);
}

Tensor sgm_forward(Tape& tape, const Tensor& features, const ClickIndexSet& clicks, const SgmParams& p) {
    return click_message_passing(tape, features, features, clicks, p.theta, p.phi, p.w_c, p.polarity);
}

Tensor hsgm_attention(const Tensor& ghat_up, const ClickIndexSet& clicks_h, const HsgmParams& p) {
    return attention_matrix(ghat_up, clicks_h, p.theta_g, p.phi_g, p.polarity);
}

Tensor hsgm_fuse(Tape& tape, const Tensor& fh, const Tensor& ghat_up, const HsgmParams& p) {
    if (fh.rank() != 3 || ghat_up.rank() != 3) throw DimensionError("hsgm: features must be CxHxW");
    if (fh.dim(1) != ghat_up.dim(1)) throw DimensionError("hsgm: height axis mismatch between F^h and g");
    if (fh.dim(2) != ghat_up.dim(2)) throw DimensionError("hsgm: width axis mismatch between F^h and g");
    auto cat = ops::concat_channels(tape, {fh, ghat_up});
    return ops::relu(tape, ops::conv2d(tape, cat, p.sigma_w, p.sigma_b));
}

Tensor hsgm_forward(Tape& tape, const Tensor& fh, const Tensor& ghat_up, const ClickIndexSet& clicks_h,
                    const HsgmParams& p) {
    auto fused = hsgm_fuse(tape, fh, ghat_up, p);
    return click_message_passing(tape, ghat_up, fused, clicks_h, p.theta_g, p.phi_g, p.w_f, p.polarity);
}

Tensor dense_nonlocal_oracle(const Tensor& features, const SgmParams& p,
                             const std::optional<ClickIndexSet>& restrict_cols) {
    if (features.rank() != 3) throw DimensionError("dense_nonlocal_oracle: features must be CxHxW");
    const std::size_t c = features.dim(0), n = features.dim(1) * features.dim(2);
    require_square(p.theta, c, "theta");
    require_square(p.phi, c, "phi");
    require_square(p.w_c, c, "W_c");

    // Column set: every location, or the given clicks (with their polarity offsets).
    std::vector<std::size_t> cols;
    std::vector<int> pol;
    if (restrict_cols) {
        validate_clicks(*restrict_cols, n);
        for (const auto& e : restrict_cols->entries()) {
            cols.push_back(e.index);
            pol.push_back(static_cast<int>(e.polarity));
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) cols.push_back(i);
        pol.assign(n, -1);
    }
    Tensor out = features.clone();
    out.set_trainable(false);
    if (cols.empty()) return out;
    const std::size_t k = cols.size();
    const auto f = features.data();
    const auto th = p.theta.data(), ph = p.phi.data(), wc = p.w_c.data();

    std::vector<double> q(c * n), key(c * k), val(c * k);
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t b = 0; b < c; ++b) s += th[a * c + b] * f[b * n + i];
            q[i * c + a] = s;
        }
    std::vector<double> kin(c);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t b = 0; b < c; ++b) {
            kin[b] = f[b * n + cols[j]];
            if (pol[j] >= 0 && p.polarity.defined()) kin[b] += p.polarity.data()[b * 2 + pol[j]];
        }
        for (std::size_t a = 0; a < c; ++a) {
            double s = 0.0, t = 0.0;
            for (std::size_t b = 0; b < c; ++b) {
                s += ph[a * c + b] * kin[b];
                t += wc[b * c + a] * f[b * n + cols[j]]; // (W^T f)_a
            }
            key[j * c + a] = s;
            val[j * c + a] = t;
        }
    }
    auto o = out.data();
    std::vector<double> logits(k), acc(c);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t a = 0; a < c; ++a) s += q[i * c + a] * key[j * c + a];
            logits[j] = s;
            mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += (logits[j] = std::exp(logits[j] - mx));
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const double a = logits[j] / z;
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += a * val[j * c + ch];
        }
        for (std::size_t ch = 0; ch < c; ++ch) o[ch * n + i] += acc[ch];
    }
    return out;
}

ScalingReport benchmark_scaling(std::size_t c, std::size_t m, const std::vector<std::size_t>& sizes,
                                const ScalingOptions& opt) {
    if (!std::is_sorted(sizes.begin(), sizes.end())) throw ArgumentError("benchmark sizes must be ascending");
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto rand_tensor = [&](Shape s, double sd) {
        Tensor t(std::move(s));
        for (double& v : t.data()) v = normal(rng) * sd;
        return t;
    };
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    SgmParams p{rand_tensor({c, c}, sd), rand_tensor({c, c}, sd), rand_tensor({c, c}, sd), Tensor{}};

    using clock = std::chrono::steady_clock;
    const auto elapsed_ms = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };
    const auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t h = v.size() / 2;
        return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    };

    // One timed job per (size, method). Each timed run repeats the call until it spans
    // at least min_run_ms, and runs are interleaved across sizes so a burst of machine
    // noise spreads over every size instead of skewing one. The two methods are timed
    // in separate phases so the dense N x N buffers do not disturb the sparse timings.
    struct Job {
        std::function<void()> call;
        int reps = 1;
        std::vector<double> times = {};
    };
    struct SizeData {
        Tensor f;
        ClickIndexSet clicks;
    };
    std::vector<SizeData> data;
    for (std::size_t n : sizes) {
        std::vector<ClickIndex> entries;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        Tensor f = rand_tensor({c, 1, n}, 1.0);
        while (entries.size() < std::min(m, n)) {
            ClickIndex e{pick(rng), entries.size() % 2 ? Polarity::negative : Polarity::positive};
            if (std::none_of(entries.begin(), entries.end(), [&](const auto& x) { return x.index == e.index; }))
                entries.push_back(e);
        }
        data.push_back({f, ClickIndexSet::from_indices(entries, n)});
    }
    Tape tape(false);
    volatile double sink = 0.0;
    std::vector<Job> sparse_jobs, dense_jobs;
    for (const auto& d : data) {
        sparse_jobs.push_back({[&] { sink = sink + sgm_forward(tape, d.f, d.clicks, p).data()[0]; }});
        dense_jobs.push_back({[&] { sink = sink + dense_nonlocal_oracle(d.f, p).data()[0]; }});
    }
    for (auto* jobs : {&sparse_jobs, &dense_jobs}) {
        for (auto& job : *jobs) {
            for (int i = 0; i < opt.warmup; ++i) job.call();
            for (;;) {
                const auto t0 = clock::now();
                for (int r = 0; r < job.reps; ++r) job.call();
                if (elapsed_ms(t0) >= opt.min_run_ms || job.reps >= (1 << 20)) break;
                job.reps *= 2;
            }
        }
        for (int i = 0; i < std::max(opt.runs, 1); ++i) {
            for (auto& job : *jobs) {
                const auto t0 = clock::now();
                for (int r = 0; r < job.reps; ++r) job.call();
                job.times.push_back(elapsed_ms(t0) / job.reps);
            }
        }
    }

    ScalingReport report;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        report.rows.push_back(
            {sizes[k], data[k].clicks.size(), c, median(sparse_jobs[k].times), median(dense_jobs[k].times)});
    }

    const auto fit = [&](auto get) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double k = static_cast<double>(report.rows.size());
        for (const auto& r : report.rows) {
            const double x = std::log(static_cast<double>(r.n)), y = std::log(std::max(get(r), 1e-9));
            sx += x, sy += y, sxx += x * x, sxy += x * y;
        }
        const double den = k * sxx - sx * sx;
        return den > 0 ? (k * sxy - sx * sy) / den : 0.0;
    };
    report.sparse_slope = fit([](const ScalingRow& r) { return r.sparse_ms; });
    report.dense_slope = fit([](const ScalingRow& r) { return r.dense_ms; });
    return report;
}

void write_scaling_report(const ScalingReport& report, const std::filesystem::path& stem) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    std::ofstream csv(stem.string() + ".csv");
    if (!csv) throw IoError("cannot write " + stem.string() + ".csv");
    csv << "n,m,c,sparse_ms,dense_ms\n";
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        csv << r.n << ',' << r.m << ',' << r.c << ',' << r.sparse_ms << ',' << r.dense_ms << '\n';
        rows.push_back({{"n", r.n}, {"m", r.m}, {"c", r.c}, {"sparse_ms", r.sparse_ms}, {"dense_ms", r.dense_ms}});
    }
    nlohmann::json j{{"rows", rows},
                     {"sparse_loglog_slope", report.sparse_slope},
                     {"dense_loglog_slope", report.dense_slope}};
    std::ofstream js(stem.string() + ".json");
    if (!js) throw IoError("cannot write " + stem.string() + ".json");
    js << j.dump(2) << '\n';
}

} // namespace iseg
