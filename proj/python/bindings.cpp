#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iseg/cascade.hpp"
#include "iseg/clicks.hpp"
#include "iseg/data_io.hpp"
#include "iseg/evalbench.hpp"
#include "iseg/graph_prop.hpp"
#include "iseg/model.hpp"
#include "iseg/session_service.hpp"

namespace py = pybind11;
using namespace iseg;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const F64Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

F64Array array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    F64Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

BinMask mask_from(const U8Array& a) {
    if (a.ndim() != 2) throw DimensionError("mask must be 2-d");
    BinMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    for (auto v : m.data)
        if (v > 1) throw ArgumentError("mask values must be 0 or 1");
    return m;
}

template <class T>
py::array_t<T> array_from(const Grid<T>& g) {
    py::array_t<T> out({g.height, g.width});
    std::copy(g.data.begin(), g.data.end(), out.mutable_data());
    return out;
}

Click click_from(const py::tuple& t) {
    if (t.size() != 3) throw ArgumentError("click must be (row, col, positive)");
    return {t[0].cast<int>(), t[1].cast<int>(), t[2].cast<bool>() ? Polarity::positive : Polarity::negative, 1};
}

ClickSet clicks_from(const std::vector<py::tuple>& list) {
    ClickSet out;
    int step = 1;
    for (const auto& t : list) {
        auto c = click_from(t);
        c.step = step++;
        out.push_back(c);
    }
    return out;
}

ClickIndexSet indices_from(const std::vector<std::pair<std::size_t, bool>>& list, std::size_t grid_size) {
    std::vector<ClickIndex> entries;
    for (const auto& [index, positive] : list) entries.push_back({index, positive ? Polarity::positive : Polarity::negative});
    return ClickIndexSet::from_indices(entries, grid_size);
}

SgmParams sgm_params(const F64Array& w_c, const F64Array& theta, const F64Array& phi, const std::optional<F64Array>& polarity) {
    SgmParams p{tensor_from(w_c), tensor_from(theta), tensor_from(phi), {}};
    if (polarity) p.polarity = tensor_from(*polarity);
    return p;
}

std::size_t grid_size(const F64Array& features) {
    if (features.ndim() != 3) throw DimensionError("features must be CxHxW");
    return static_cast<std::size_t>(features.shape(1) * features.shape(2));
}

/// Interactive session bound to a cascade model.
class PySession {
  public:
    PySession(CascadeModel model, const F64Array& image, const std::string& strategy)
        : model_(std::move(model)), coarse_(model_.coarse_predictor()), fine_(model_.fine_predictor()) {
        cfg_.strategy = strategy_from_string(strategy);
        cfg_.validate();
        state_ = SessionState::start(tensor_from(image));
    }

    F64Array click(int row, int col, bool positive) {
        Click c{row, col, positive ? Polarity::positive : Polarity::negative, 0};
        StepResult r;
        {
            py::gil_scoped_release release;
            r = interactive_step(state_, c, coarse_, fine_, cfg_);
        }
        region_ = r.region;
        return array_from(r.prob);
    }

    py::array_t<std::uint8_t> mask() const { return array_from(binarize(state_.prev_prob)); }
    F64Array prob() const { return array_from(state_.prev_prob); }
    int step() const { return state_.step; }
    std::vector<py::tuple> clicks() const {
        std::vector<py::tuple> out;
        for (const auto& c : state_.clicks) out.push_back(py::make_tuple(c.row, c.col, c.polarity == Polarity::positive));
        return out;
    }
    std::optional<py::tuple> region() const {
        if (!region_) return std::nullopt;
        return py::make_tuple(region_->top, region_->left, region_->height, region_->width);
    }

  private:
    CascadeModel model_;
    Predictor coarse_;
    Predictor fine_;
    CascadeConfig cfg_;
    SessionState state_;
    std::optional<ZoomRegion> region_;
};

} // namespace

PYBIND11_MODULE(_iseg, m) {
    m.doc() = "Click-based interactive segmentation with sparse click graphs";

    auto base = py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<OutOfBoundsError>(m, "OutOfBoundsError", base.ptr());
    py::register_exception<DuplicateClickError>(m, "DuplicateClickError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    m.def(
        "generate_scene",
        [](std::uint64_t seed, int height, int width, std::optional<std::string> kind) {
            SceneConfig cfg;
            cfg.height = height;
            cfg.width = width;
            if (kind) cfg.kind = shape_kind_from_string(*kind);
            const auto s = generate_scene(seed, cfg);
            return py::make_tuple(array_from(s.image), array_from(s.gt), to_string(s.meta.kind));
        },
        py::arg("seed"), py::arg("height") = 96, py::arg("width") = 144, py::arg("kind") = py::none(),
        "Returns (image 3xHxW float64, gt HxW uint8, shape kind).");

    m.def(
        "sgm_forward",
        [](const F64Array& features, const std::vector<std::pair<std::size_t, bool>>& clicks, const F64Array& w_c,
           const F64Array& theta, const F64Array& phi, std::optional<F64Array> polarity) {
            Tape tape(false);
            return array_from(sgm_forward(tape, tensor_from(features), indices_from(clicks, grid_size(features)),
                                          sgm_params(w_c, theta, phi, polarity)));
        },
        py::arg("features"), py::arg("clicks"), py::arg("w_c"), py::arg("theta"), py::arg("phi"),
        py::arg("polarity") = py::none(), "Sparse click graph over CxHxW features; clicks are (flat index, positive).");

    m.def(
        "sgm_attention",
        [](const F64Array& features, const std::vector<std::pair<std::size_t, bool>>& clicks, const F64Array& w_c,
           const F64Array& theta, const F64Array& phi, std::optional<F64Array> polarity) {
            return array_from(sgm_attention(tensor_from(features), indices_from(clicks, grid_size(features)),
                                            sgm_params(w_c, theta, phi, polarity)));
        },
        py::arg("features"), py::arg("clicks"), py::arg("w_c"), py::arg("theta"), py::arg("phi"),
        py::arg("polarity") = py::none(), "Row-stochastic (H*W) x M attention matrix.");

    m.def(
        "dense_nonlocal",
        [](const F64Array& features, const F64Array& w_c, const F64Array& theta, const F64Array& phi,
           std::optional<std::vector<std::pair<std::size_t, bool>>> restrict_cols) {
            std::optional<ClickIndexSet> cols;
            if (restrict_cols) cols = indices_from(*restrict_cols, grid_size(features));
            return array_from(dense_nonlocal_oracle(tensor_from(features), sgm_params(w_c, theta, phi, std::nullopt), cols));
        },
        py::arg("features"), py::arg("w_c"), py::arg("theta"), py::arg("phi"), py::arg("restrict_cols") = py::none(),
        "Fully connected non-local block with the same parameters.");

    m.def("rle_encode", [](const U8Array& mask) { return rle_encode(mask_from(mask)); }, py::arg("mask"));
    m.def(
        "rle_decode", [](const std::vector<std::size_t>& counts, int height, int width) {
            return array_from(rle_decode(counts, height, width));
        },
        py::arg("counts"), py::arg("height"), py::arg("width"));

    m.def("iou", [](const U8Array& pred, const U8Array& gt) { return iou(mask_from(pred), mask_from(gt)); }, py::arg("pred"),
          py::arg("gt"));

    m.def(
        "simulate_next_click",
        [](const U8Array& pred, const U8Array& gt, const std::vector<py::tuple>& existing) -> std::optional<py::tuple> {
            const auto c = simulate_next_click(mask_from(pred), mask_from(gt), clicks_from(existing));
            if (!c) return std::nullopt;
            return py::make_tuple(c->row, c->col, c->polarity == Polarity::positive);
        },
        py::arg("pred"), py::arg("gt"), py::arg("existing") = std::vector<py::tuple>{},
        "Next robot click as (row, col, positive), or None when the prediction is perfect.");

    py::class_<CascadeModel>(m, "Model")
        .def_static(
            "init",
            [](int c_low, int c_high, const std::string& fpm, std::uint64_t seed, bool with_fine) {
                ModelConfig cfg;
                cfg.c_low = c_low;
                cfg.c_high = c_high;
                cfg.fpm = fpm_mode_from_string(fpm);
                cfg.seed = seed;
                CascadeModel model{ModelParams::init(cfg), std::nullopt};
                if (with_fine) model.fine = model.coarse.clone();
                return model;
            },
            py::arg("c_low") = 16, py::arg("c_high") = 32, py::arg("fpm") = "sgm_hsgm", py::arg("seed") = 0,
            py::arg("with_fine") = false)
        .def_static("load", [](const std::filesystem::path& path) { return load_cascade(path); }, py::arg("path"))
        .def("save", [](const CascadeModel& model, const std::filesystem::path& path) { save_cascade(path, model); },
             py::arg("path"))
        .def_property_readonly("fpm", [](const CascadeModel& model) { return std::string(to_string(model.coarse.config().fpm)); })
        .def_property_readonly("has_fine", [](const CascadeModel& model) { return model.fine.has_value(); })
        .def_property_readonly("parameter_count", [](const CascadeModel& model) { return model.coarse.parameter_count(); })
        .def_property_readonly("fingerprint", [](const CascadeModel& model) { return model.coarse.fingerprint(); })
        .def(
            "predict",
            [](const CascadeModel& model, const F64Array& image, const std::vector<py::tuple>& clicks) {
                const auto t = tensor_from(image);
                if (t.rank() != 3) throw DimensionError("image must be 3xHxW");
                const ProbMask prev(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
                return array_from(predict(model.coarse, t, prev, clicks_from(clicks)));
            },
            py::arg("image"), py::arg("clicks"), "Single coarse forward pass with an empty previous mask.");

    py::class_<PySession>(m, "Session")
        .def(py::init<CascadeModel, const F64Array&, const std::string&>(), py::arg("model"), py::arg("image"),
             py::arg("strategy") = "coarse_to_fine")
        .def("click", &PySession::click, py::arg("row"), py::arg("col"), py::arg("positive") = true,
             "Adds a click, runs one step and returns the full-frame probability map.")
        .def_property_readonly("mask", &PySession::mask)
        .def_property_readonly("prob", &PySession::prob)
        .def_property_readonly("step", &PySession::step)
        .def_property_readonly("clicks", &PySession::clicks)
        .def_property_readonly("region", &PySession::region, "Last zoom region as (top, left, height, width).");
}
