#include "iseg/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "iseg/clicks.hpp"
#include "iseg/errors.hpp"
#include "iseg/ops.hpp"
#include "iseg/optim.hpp"

namespace iseg {

const char* to_string(Ablation a) {
    switch (a) {
    case Ablation::baseline: return "baseline";
    case Ablation::fpm: return "+FPM";
    case Ablation::iaf: return "+IAF";
    case Ablation::full: return "full";
    }
    return "?";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "baseline") return Ablation::baseline;
    if (s == "+FPM" || s == "fpm") return Ablation::fpm;
    if (s == "+IAF" || s == "iaf") return Ablation::iaf;
    if (s == "full") return Ablation::full;
    throw ArgumentError("unknown ablation '" + s + "'");
}

bool uses_fpm(Ablation a) { return a == Ablation::fpm || a == Ablation::full; }
bool uses_iaf(Ablation a) { return a == Ablation::iaf || a == Ablation::full; }

void TrainConfig::validate() const {
    if (epochs_coarse < 0 || epochs_fine < 0) throw ArgumentError("epoch counts must be >= 0");
    if (!(lr_coarse > 0.0) || !(lr_fine > 0.0)) throw ArgumentError("learning rates must be > 0");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (gamma < 0.0) throw ArgumentError("gamma must be >= 0");
    if (sampler.max_clicks < 1) throw ArgumentError("sampler.max_clicks must be >= 1");
    if (sampler.random_prob < 0.0 || sampler.random_prob > 1.0) throw ArgumentError("sampler.random_prob in [0,1]");
    if (augment.scale_min <= 0.0 || augment.scale_max < augment.scale_min) throw ArgumentError("bad scale range");
    if (!(milestone1 > 0.0 && milestone1 <= milestone2 && milestone2 <= 1.0)) throw ArgumentError("bad lr milestones");
    zoom.validate();
}

double scheduled_lr(double base, int epoch, int epochs, double milestone1, double milestone2) {
    const double pos = epochs > 0 ? double(epoch) / double(epochs) : 0.0;
    if (pos >= milestone2) return base * 0.01;
    if (pos >= milestone1) return base * 0.1;
    return base;
}

// ---- click sampling -----------------------------------------------------------

namespace {

int pick(const std::vector<int>& pool, std::mt19937_64& rng) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

// Background pixels at Euclidean distance >= d from every object pixel.
std::vector<int> far_background(const BinMask& gt, int d) {
    const int h = gt.height, w = gt.width;
    std::vector<std::uint8_t> near(gt.size(), 0);
    const long d2 = long(d) * d;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!gt.at(r, c)) continue;
            const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || !gt.at(r - 1, c) || !gt.at(r + 1, c) ||
                              !gt.at(r, c - 1) || !gt.at(r, c + 1);
            if (!edge) continue;
            for (int y = std::max(0, r - d); y <= std::min(h - 1, r + d); ++y)
                for (int x = std::max(0, c - d); x <= std::min(w - 1, c + d); ++x)
                    if (long(y - r) * (y - r) + long(x - c) * (x - c) < d2) near[y * w + x] = 1;
        }
    }
    std::vector<int> out;
    for (int i = 0; i < h * w; ++i)
        if (!gt.data[i] && !near[i]) out.push_back(i);
    return out;
}

Click make_click(int flat, int width, Polarity pol, int step) { return {flat / width, flat % width, pol, step}; }

} // namespace

SampledClicks sample_training_clicks(const BinMask& gt, const Tensor& image, const Predictor* model,
                                     std::mt19937_64& rng, const SamplerConfig& cfg) {
    if (count_foreground(gt) == 0) throw ArgumentError("sample_training_clicks: empty ground truth");
    if (cfg.max_clicks < 1) throw ArgumentError("sample_training_clicks: max_clicks must be >= 1");
    const int w = gt.width;
    SampledClicks out;
    out.prev_prob = ProbMask(gt.height, gt.width);

    // First click: deep inside the largest object component.
    const auto comps = error_regions(BinMask(gt.height, gt.width), gt);
    BinMask comp(gt.height, gt.width);
    for (int p : comps.front().pixels) comp.data[p] = 1;
    const auto depth = squared_distance_to_complement(comp);
    const long max_d = *std::max_element(depth.begin(), depth.end());
    std::vector<int> deep;
    for (int p : comps.front().pixels)
        if (4 * depth[p] >= max_d) deep.push_back(p);
    out.clicks.push_back(make_click(pick(deep, rng), w, Polarity::positive, 1));

    const int k = std::uniform_int_distribution<int>(1, cfg.max_clicks)(rng);
    const bool random_mode = model == nullptr || std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.random_prob;
    out.corrective = !random_mode;
    std::set<int> taken{out.clicks.front().row * w + out.clicks.front().col};

    if (random_mode) {
        const auto gt_depth = squared_distance_to_complement(gt);
        std::vector<int> inner, any_fg;
        const long min_depth2 = long(cfg.pos_min_depth) * cfg.pos_min_depth;
        for (int i = 0; i < static_cast<int>(gt.size()); ++i) {
            if (!gt.data[i]) continue;
            any_fg.push_back(i);
            if (gt_depth[i] >= min_depth2) inner.push_back(i);
        }
        if (inner.empty()) inner = any_fg;
        const auto far = far_background(gt, cfg.neg_min_distance);
        std::bernoulli_distribution coin(0.5);
        for (int i = 1; i < k; ++i) {
            const bool negative = coin(rng) && !far.empty();
            const auto& pool = negative ? far : inner;
            int p = -1;
            for (int tries = 0; tries < 16 && p < 0; ++tries) {
                const int cand = pick(pool, rng);
                if (!taken.count(cand)) p = cand;
            }
            if (p < 0) break;
            taken.insert(p);
            out.clicks.push_back(make_click(p, w, negative ? Polarity::negative : Polarity::positive, i + 1));
        }
        return out;
    }

    ProbMask prev(gt.height, gt.width);
    for (int i = 1; i < k; ++i) {
        const auto pred = (*model)(image, prev, out.clicks);
        const auto next = simulate_next_click(binarize(pred), gt, out.clicks);
        if (!next) break;
        prev = pred;
        out.clicks.push_back(*next);
    }
    out.prev_prob = std::move(prev);
    return out;
}

// ---- augmentation ----------------------------------------------------------------

AugmentDraw draw_augment(int height, int width, std::mt19937_64& rng, const AugmentConfig& cfg) {
    AugmentDraw d;
    if (!cfg.enabled) return d;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    d.hflip = u(rng) < cfg.flip_prob;
    d.vflip = cfg.vertical_flip && u(rng) < cfg.flip_prob;
    d.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u(rng);
    const int sh = std::max(1, static_cast<int>(std::lround(d.scale * height)));
    const int sw = std::max(1, static_cast<int>(std::lround(d.scale * width)));
    const auto offset = [&](int scaled, int out) {
        const int lo = std::min(0, scaled - out), hi = std::max(0, scaled - out);
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    d.offset_y = offset(sh, height);
    d.offset_x = offset(sw, width);
    return d;
}

SyntheticScene apply_augment(const SyntheticScene& scene, const AugmentDraw& d) {
    const int h = scene.gt.height, w = scene.gt.width;
    const int sh = std::max(1, static_cast<int>(std::lround(d.scale * h)));
    const int sw = std::max(1, static_cast<int>(std::lround(d.scale * w)));
    const double ry = sh > 1 ? double(h - 1) / double(sh - 1) : 0.0;
    const double rx = sw > 1 ? double(w - 1) / double(sw - 1) : 0.0;
    SyntheticScene out;
    out.meta = scene.meta;
    out.gt = BinMask(h, w);
    out.image = Tensor({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    const auto src = scene.image.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int yy = y + d.offset_y, xx = x + d.offset_x; // position in the scaled frame
            double sy = std::clamp(yy, 0, sh - 1) * ry, sx = std::clamp(xx, 0, sw - 1) * rx;
            if (d.vflip) sy = (h - 1) - sy;
            if (d.hflip) sx = (w - 1) - sx;
            for (std::size_t c = 0; c < 3; ++c)
                out.image.at(c, y, x) = ops::sample_bilinear(src.subspan(c * plane, plane), h, w, sy, sx);
            const bool inside = yy >= 0 && yy < sh && xx >= 0 && xx < sw;
            if (inside) {
                const int my = std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1);
                const int mx = std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1);
                out.gt.at(y, x) = scene.gt.at(my, mx);
            }
        }
    }
    return out;
}

SyntheticScene augment(const SyntheticScene& scene, std::mt19937_64& rng, const AugmentConfig& cfg) {
    const auto d = draw_augment(scene.gt.height, scene.gt.width, rng, cfg);
    if (!cfg.enabled) return scene;
    auto out = apply_augment(scene, d);
    if (count_foreground(out.gt) == 0) return scene;
    return out;
}

BinMask crop_mask(const BinMask& gt, const ZoomRegion& region) {
    ProbMask soft(gt.height, gt.width);
    for (std::size_t i = 0; i < gt.size(); ++i) soft.data[i] = gt.data[i];
    return binarize(crop_plane(soft, region), 0.5);
}

// ---- trainers -------------------------------------------------------------------

namespace {

class StepLogger {
  public:
    explicit StepLogger(const std::filesystem::path& path) {
        if (path.empty()) return;
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path);
        if (!out_) throw IoError("cannot open training log " + path.string());
    }
    void write(const StepLog& s) {
        if (!out_.is_open()) return;
        out_ << nlohmann::json{{"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss}, {"grad_norm", s.grad_norm},
                               {"lr", s.lr}}
                    .dump()
             << '\n';
        out_.flush();
    }

  private:
    std::ofstream out_;
};

struct PreparedSample {
    Tensor image;
    BinMask gt;
    ClickSet clicks;
    ProbMask prev;
    std::string id;
};

using Preparer = std::function<std::optional<PreparedSample>(const SyntheticScene&, std::mt19937_64&)>;

[[noreturn]] void nan_abort(const TrainConfig& cfg, long step, const std::vector<PreparedSample>& batch) {
    nlohmann::json dump{{"step", step}, {"samples", nlohmann::json::array()}};
    for (const auto& s : batch) dump["samples"].push_back({{"id", s.id}, {"clicks", s.clicks}});
    if (!cfg.log_path.empty()) {
        std::ofstream(cfg.log_path.string() + ".nan.json") << dump.dump(2) << '\n';
    }
    throw TrainingError("non-finite loss at step " + std::to_string(step) + "; batch: " + dump.dump());
}

TrainResult run_training(ModelParams params, const Dataset& data, const TrainConfig& cfg, int epochs, double lr,
                         std::uint64_t stream, const Preparer& prepare, const StepCallback& on_step) {
    if (data.empty()) throw ArgumentError("training needs a nonempty dataset");
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + stream);
    auto weights = params.parameters();
    AdamState adam;
    StepLogger logger(cfg.log_path);
    TrainResult res;
    long step = 0;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double cur_lr = scheduled_lr(lr, epoch, epochs, cfg.milestone1, cfg.milestone2);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            std::vector<PreparedSample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
                if (auto s = prepare(data[order[i]], rng)) batch.push_back(std::move(*s));
            }
            if (batch.empty()) continue;
            zero_grads(weights);
            double loss_sum = 0.0;
            for (const auto& s : batch) {
                Tape tape;
                const auto x = encode_input(s.image, s.clicks, s.prev, params.config().click_radius);
                const auto fw = forward(tape, x, s.clicks, params);
                const auto loss = nfl_loss(tape, fw.prob, s.gt, cfg.gamma);
                if (!std::isfinite(loss.item())) nan_abort(cfg, step, batch);
                backward(loss, tape);
                loss_sum += loss.item();
            }
            scale_grads(weights, 1.0 / double(batch.size()));
            StepLog log{step, epoch, loss_sum / double(batch.size()), grad_norm(weights), cur_lr};
            if (!std::isfinite(log.grad_norm)) nan_abort(cfg, step, batch);
            adam_step(weights, adam, AdamOptions{cur_lr});
            logger.write(log);
            res.log.push_back(log);
            ++step;
            if (on_step && !on_step(log, params)) {
                res.params = std::move(params);
                return res;
            }
        }
    }
    res.params = std::move(params);
    return res;
}

} // namespace

TrainResult train_coarse(const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    ModelConfig mc = cfg.model;
    mc.seed = cfg.seed;
    auto params = ModelParams::init(mc);
    const Preparer prepare = [&](const SyntheticScene& scene, std::mt19937_64& rng) -> std::optional<PreparedSample> {
        auto s = augment(scene, rng, cfg.augment);
        if (count_foreground(s.gt) == 0) {
            std::cerr << "warning: skipping sample " << scene.meta.id << " with empty ground truth\n";
            return std::nullopt;
        }
        const Predictor current = model_predictor(params);
        auto clicks = sample_training_clicks(s.gt, s.image, &current, rng, cfg.sampler);
        return PreparedSample{s.image, s.gt, std::move(clicks.clicks), std::move(clicks.prev_prob), scene.meta.id};
    };
    return run_training(params, data, cfg, cfg.epochs_coarse, cfg.lr_coarse, 1, prepare, on_step);
}

TrainResult train_fine(const ModelParams& coarse, const Dataset& data, const TrainConfig& cfg,
                       const StepCallback& on_step) {
    cfg.validate();
    const auto before = coarse.fingerprint();
    const Predictor coarse_pred = model_predictor(coarse);
    auto fine = coarse.clone();
    const Preparer prepare = [&](const SyntheticScene& scene, std::mt19937_64& rng) -> std::optional<PreparedSample> {
        auto s = augment(scene, rng, cfg.augment);
        if (count_foreground(s.gt) == 0) {
            std::cerr << "warning: skipping sample " << scene.meta.id << " with empty ground truth\n";
            return std::nullopt;
        }
        auto clicks = sample_training_clicks(s.gt, s.image, &coarse_pred, rng, cfg.sampler);
        const auto pc = coarse_pred(s.image, clicks.prev_prob, clicks.clicks);
        auto region = adaptive_box(pc, cfg.zoom);
        if (!region) {
            // The coarse pass found nothing; crop around the object instead.
            ProbMask soft(s.gt.height, s.gt.width);
            for (std::size_t i = 0; i < soft.size(); ++i) soft.data[i] = s.gt.data[i];
            region = adaptive_box(soft, cfg.zoom);
        }
        auto crop_clicks = map_clicks_to_crop(clicks.clicks, *region);
        return PreparedSample{crop_image(s.image, *region), crop_mask(s.gt, *region), std::move(crop_clicks.clicks),
                              crop_plane(pc, *region), scene.meta.id};
    };
    auto res = run_training(fine, data, cfg, cfg.epochs_fine, cfg.lr_fine, 2, prepare, on_step);
    if (coarse.fingerprint() != before) throw TrainingError("coarse parameters changed during fine training");
    return res;
}

// ---- ablations --------------------------------------------------------------------

const char* to_string(AblationGrid g) {
    switch (g) {
    case AblationGrid::components: return "components";
    case AblationGrid::fpm: return "fpm";
    case AblationGrid::iaf: return "iaf";
    }
    return "?";
}

AblationGrid ablation_grid_from_string(const std::string& s) {
    for (auto g : {AblationGrid::components, AblationGrid::fpm, AblationGrid::iaf})
        if (s == to_string(g)) return g;
    throw ArgumentError("unknown ablation grid '" + s + "'");
}

std::vector<std::pair<std::string, double>> AblationReport::mean_noc() const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& c : cells) {
        const std::string key = c.grid + "/" + c.variant;
        if (std::none_of(out.begin(), out.end(), [&](const auto& e) { return e.first == key; })) {
            double sum = 0.0;
            int n = 0;
            for (const auto& d : cells)
                if (d.grid == c.grid && d.variant == c.variant) sum += d.noc, ++n;
            out.emplace_back(key, sum / n);
        }
    }
    return out;
}

double AblationReport::mean_noc(const std::string& variant) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cells)
        if (c.variant == variant || c.grid + "/" + c.variant == variant) sum += c.noc, ++n;
    if (n == 0) throw ArgumentError("no ablation cells for variant '" + variant + "'");
    return sum / n;
}

namespace {

struct VariantSpec {
    std::string grid;
    std::string name;
    FpmMode fpm;
    Strategy strategy;
};

std::vector<VariantSpec> grid_variants(AblationGrid g) {
    switch (g) {
    case AblationGrid::components:
        return {{"components", "baseline", FpmMode::none, Strategy::coarse_only},
                {"components", "+FPM", FpmMode::sgm_hsgm, Strategy::coarse_only},
                {"components", "+IAF", FpmMode::none, Strategy::coarse_to_fine},
                {"components", "full", FpmMode::sgm_hsgm, Strategy::coarse_to_fine}};
    case AblationGrid::fpm:
        return {{"fpm", "SGM", FpmMode::sgm, Strategy::coarse_only},
                {"fpm", "SGM+HSGM", FpmMode::sgm_hsgm, Strategy::coarse_only},
                {"fpm", "SGM+Fuse", FpmMode::sgm_fuse, Strategy::coarse_only},
                {"fpm", "SGM+Fuse+SGM", FpmMode::sgm_fuse_sgm, Strategy::coarse_only}};
    case AblationGrid::iaf:
        return {{"iaf", "coarse_to_coarse", FpmMode::sgm_hsgm, Strategy::coarse_to_coarse},
                {"iaf", "fine_to_fine", FpmMode::sgm_hsgm, Strategy::fine_to_fine},
                {"iaf", "coarse_to_fine", FpmMode::sgm_hsgm, Strategy::coarse_to_fine}};
    }
    return {};
}

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    const auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int workers = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(n, 1)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
}

using JobKey = std::pair<FpmMode, std::uint64_t>;

struct TrainedPair {
    std::optional<ModelParams> coarse;
    std::optional<ModelParams> fine;
    double coarse_seconds = 0.0;
    double fine_seconds = 0.0;
};

} // namespace

AblationReport run_ablation(const Dataset& train, const Dataset& eval, const TrainConfig& base,
                            const EvalConfig& eval_cfg, const AblationOptions& opt) {
    base.validate();
    eval_cfg.validate();
    std::vector<std::pair<VariantSpec, std::uint64_t>> cells;
    for (const auto& name : opt.variants) {
        bool known = false;
        for (auto g : opt.grids)
            for (const auto& v : grid_variants(g)) known = known || v.name == name;
        if (!known) throw ArgumentError("unknown ablation variant: " + name);
    }
    for (auto g : opt.grids)
        for (const auto& v : grid_variants(g)) {
            if (!opt.variants.empty() && std::find(opt.variants.begin(), opt.variants.end(), v.name) == opt.variants.end())
                continue;
            for (auto seed : opt.seeds) cells.emplace_back(v, seed);
        }

    std::map<JobKey, TrainedPair> trained;
    std::set<JobKey> need_fine;
    for (const auto& [v, seed] : cells) {
        trained[{v.fpm, seed}];
        if (v.strategy != Strategy::coarse_only) need_fine.insert({v.fpm, seed});
    }
    if (!opt.work_dir.empty()) std::filesystem::create_directories(opt.work_dir);
    const auto job_cfg = [&](const JobKey& key, const char* stage) {
        TrainConfig c = base;
        c.model.fpm = key.first;
        c.seed = key.second;
        if (!opt.work_dir.empty()) {
            c.log_path = opt.work_dir / (std::string(stage) + "_" + to_string(key.first) + "_s" +
                                         std::to_string(key.second) + ".jsonl");
        } else {
            c.log_path.clear();
        }
        return c;
    };

    std::vector<JobKey> coarse_jobs;
    for (const auto& e : trained) coarse_jobs.push_back(e.first);
    parallel_for(coarse_jobs.size(), opt.threads, [&](std::size_t i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = train_coarse(train, job_cfg(coarse_jobs[i], "coarse"));
        auto& slot = trained.at(coarse_jobs[i]);
        slot.coarse_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        slot.coarse = std::move(r.params);
    });
    std::vector<JobKey> fine_jobs(need_fine.begin(), need_fine.end());
    parallel_for(fine_jobs.size(), opt.threads, [&](std::size_t i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto& slot = trained.at(fine_jobs[i]);
        auto r = train_fine(*slot.coarse, train, job_cfg(fine_jobs[i], "fine"));
        slot.fine_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        slot.fine = std::move(r.params);
    });
    if (!opt.work_dir.empty()) {
        for (const auto& [key, slot] : trained) {
            const auto name = std::string(to_string(key.first)) + "_s" + std::to_string(key.second) + ".ckpt";
            save_cascade(opt.work_dir / name, CascadeModel{*slot.coarse, slot.fine});
        }
    }

    AblationReport report;
    report.cells.resize(cells.size());
    parallel_for(cells.size(), opt.threads, [&](std::size_t i) {
        const auto& [v, seed] = cells[i];
        const auto& slot = trained.at({v.fpm, seed});
        CascadeConfig cc = base.zoom;
        cc.strategy = v.strategy;
        const auto coarse = model_predictor(*slot.coarse);
        const auto fine = model_predictor(slot.fine ? *slot.fine : *slot.coarse);
        const auto records = evaluate(coarse, fine, eval, eval_cfg, cc, 1);
        AblationCell cell{v.grid, v.name, seed, noc(records, eval_cfg), nof(records), 0.0,
                          slot.coarse_seconds + (v.strategy != Strategy::coarse_only ? slot.fine_seconds : 0.0)};
        cell.miou_at_5 = miou_at_k(records, 5).back();
        report.cells[i] = cell;
    });
    return report;
}

void write_ablation_csv(const AblationReport& r, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "grid,variant,seed,noc,nof,miou_at_5,train_seconds\n";
    for (const auto& c : r.cells) {
        out << c.grid << ',' << c.variant << ',' << c.seed << ',' << c.noc << ',' << c.nof << ',' << c.miou_at_5 << ','
            << c.train_seconds << '\n';
    }
    auto summary_path = path;
    summary_path.replace_filename(path.stem().string() + "_summary.csv");
    std::ofstream sum(summary_path);
    if (!sum) throw IoError("cannot write " + summary_path.string());
    sum << "grid,variant,mean_noc\n";
    for (const auto& [key, mean] : r.mean_noc()) {
        const auto slash = key.find('/');
        sum << key.substr(0, slash) << ',' << key.substr(slash + 1) << ',' << mean << '\n';
    }
}

} // namespace iseg
