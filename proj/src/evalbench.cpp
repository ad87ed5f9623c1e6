#include "iseg/evalbench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "iseg/clicks.hpp"
#include "iseg/errors.hpp"

namespace iseg {

void EvalConfig::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ArgumentError("eval.tau must lie in (0,1)");
    if (max_clicks < 1) throw ArgumentError("eval.max_clicks must be >= 1");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) throw ArgumentError("binarize threshold in (0,1)");
}

double iou(const BinMask& pred, const BinMask& gt) {
    require_same_shape(pred, gt, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred.data[i] && gt.data[i];
        uni += pred.data[i] || gt.data[i];
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

EvalRecord evaluate_sample(const Predictor& coarse, const Predictor& fine, const SyntheticScene& scene,
                           const EvalConfig& cfg, const CascadeConfig& cascade) {
    EvalRecord rec;
    rec.sample = scene.meta.id;
    try {
        auto session = SessionState::start(scene.image);
        require_same_shape(session.prev_prob, scene.gt, "evaluate");
        for (int k = 0; k < cfg.max_clicks; ++k) {
            const auto pred = binarize(session.prev_prob, cfg.binarize_threshold);
            const auto click = simulate_next_click(pred, scene.gt, session.clicks);
            if (!click) break; // nothing left to correct; only reachable when IoU is already 1
            const auto t0 = std::chrono::steady_clock::now();
            interactive_step(session, *click, coarse, fine, cascade);
            const auto t1 = std::chrono::steady_clock::now();
            rec.ms_per_click.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            rec.ious.push_back(iou(binarize(session.prev_prob, cfg.binarize_threshold), scene.gt));
            rec.clicks_used = static_cast<int>(rec.ious.size());
            if (rec.ious.back() >= cfg.tau) {
                rec.success = true;
                break;
            }
        }
    } catch (const std::exception& e) {
        rec.error = e.what();
        rec.success = false;
        rec.clicks_used = cfg.max_clicks;
    }
    return rec;
}

std::vector<EvalRecord> evaluate(const Predictor& coarse, const Predictor& fine, const Dataset& data,
                                 const EvalConfig& cfg, const CascadeConfig& cascade, int threads) {
    cfg.validate();
    cascade.validate();
    std::vector<EvalRecord> out(data.size());
    const int workers = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(data.size(), 1)));
    if (workers == 1) {
        for (std::size_t i = 0; i < data.size(); ++i) out[i] = evaluate_sample(coarse, fine, data[i], cfg, cascade);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < data.size(); i = next++)
                out[i] = evaluate_sample(coarse, fine, data[i], cfg, cascade);
        });
    }
    pool.clear();
    return out;
}

double noc(const std::vector<EvalRecord>& records, const EvalConfig& cfg) {
    if (records.empty()) throw ArgumentError("noc: no records");
    double total = 0.0;
    for (const auto& r : records) total += r.success ? r.clicks_used : cfg.max_clicks;
    return total / double(records.size());
}

int nof(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw ArgumentError("nof: no records");
    return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.success; }));
}

std::vector<double> miou_at_k(const std::vector<EvalRecord>& records, int k_max) {
    std::vector<double> curve(static_cast<std::size_t>(std::max(k_max, 0)), 0.0);
    if (records.empty()) return curve;
    for (const auto& r : records) {
        for (int k = 0; k < k_max; ++k) {
            double v = 0.0;
            if (!r.ious.empty()) v = r.ious[std::min<std::size_t>(static_cast<std::size_t>(k), r.ious.size() - 1)];
            curve[static_cast<std::size_t>(k)] += v;
        }
    }
    for (double& v : curve) v /= double(records.size());
    return curve;
}

ClickHistogram click_histogram(const std::vector<EvalRecord>& records, int max_clicks, int bin_width) {
    if (bin_width < 1) throw ArgumentError("click_histogram: bin width must be >= 1");
    ClickHistogram h;
    for (int lo = 1; lo <= max_clicks; lo += bin_width) {
        const int hi = std::min(lo + bin_width - 1, max_clicks);
        h.labels.push_back(std::to_string(lo) + "-" + std::to_string(hi));
    }
    h.labels.emplace_back("fail");
    h.counts.assign(h.labels.size(), 0);
    for (const auto& r : records) {
        if (!r.success) ++h.counts.back();
        else ++h.counts[static_cast<std::size_t>((std::max(r.clicks_used, 1) - 1) / bin_width)];
    }
    return h;
}

std::string machine_descriptor() {
    std::string cpu = "unknown cpu";
    std::ifstream info("/proc/cpuinfo");
    for (std::string line; std::getline(info, line);) {
        if (line.rfind("model name", 0) == 0) {
            cpu = line.substr(line.find(':') + 2);
            break;
        }
    }
    return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

SpcStats spc_benchmark(const Predictor& coarse, const Predictor& fine, const Dataset& data, const CascadeConfig& cascade,
                       int clicks_per_sample) {
    if (data.empty()) throw ArgumentError("spc_benchmark: empty dataset");
    const auto run = [&](const SyntheticScene& s, std::vector<double>* times) {
        auto session = SessionState::start(s.image);
        for (int k = 0; k < clicks_per_sample; ++k) {
            const auto click = simulate_next_click(binarize(session.prev_prob), s.gt, session.clicks);
            if (!click) break;
            const auto t0 = std::chrono::steady_clock::now();
            interactive_step(session, *click, coarse, fine, cascade);
            const auto t1 = std::chrono::steady_clock::now();
            if (times) times->push_back(std::chrono::duration<double>(t1 - t0).count());
        }
    };
    run(data.front(), nullptr);
    std::vector<double> times;
    for (const auto& s : data) run(s, &times);
    SpcStats st;
    st.machine = machine_descriptor();
    st.steps = times.size();
    if (times.empty()) return st;
    st.mean_s = std::accumulate(times.begin(), times.end(), 0.0) / double(times.size());
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    st.median_s = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
    return st;
}

void write_eval_report(const std::vector<EvalRecord>& records, const EvalConfig& cfg,
                       const std::filesystem::path& stem) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    std::ofstream csv(stem.string() + ".csv");
    if (!csv) throw IoError("cannot write " + stem.string() + ".csv");
    csv << "sample,clicks,success,final_iou,ms_per_click\n";
    for (const auto& r : records) {
        const double ms = r.ms_per_click.empty()
                              ? 0.0
                              : std::accumulate(r.ms_per_click.begin(), r.ms_per_click.end(), 0.0) /
                                    double(r.ms_per_click.size());
        csv << r.sample << ',' << r.clicks_used << ',' << (r.success ? 1 : 0) << ',' << r.final_iou() << ',' << ms
            << '\n';
    }
    const auto curve = miou_at_k(records, cfg.max_clicks);
    const auto hist = click_histogram(records, cfg.max_clicks);
    nlohmann::json j{{"tau", cfg.tau},
                     {"max_clicks", cfg.max_clicks},
                     {"samples", records.size()},
                     {"noc", records.empty() ? 0.0 : noc(records, cfg)},
                     {"nof", records.empty() ? 0 : nof(records)},
                     {"curve", curve},
                     {"histogram", {{"labels", hist.labels}, {"counts", hist.counts}}},
                     {"reference", {{"noc90_davis", kReferenceNoc90Davis},
                                    {"within_5_clicks_davis", kReferenceWithin5ClicksDavis}}}};
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& r : records)
        if (!r.error.empty()) errors.push_back({{"sample", r.sample}, {"error", r.error}});
    j["errors"] = errors;
    std::ofstream js(stem.string() + ".json");
    js << j.dump(2) << '\n';
    std::ofstream tsv(stem.string() + "_miou.tsv");
    tsv << "k\tmiou\n";
    for (std::size_t k = 0; k < curve.size(); ++k) tsv << k + 1 << '\t' << curve[k] << '\n';
}

} // namespace iseg
