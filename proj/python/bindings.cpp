#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "revdeblur/checkpoint.hpp"
#include "revdeblur/infer.hpp"
#include "revdeblur/metrics.hpp"
#include "revdeblur/synth.hpp"
#include "revdeblur/train.hpp"

namespace py = pybind11;
using namespace rvd;

namespace {

Image image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    auto buf = arr.request();
    if (buf.ndim != 3 || buf.shape[2] != 3)
        throw std::invalid_argument("expected an (h, w, 3) float array in [0, 1]");
    Image img(3, buf.shape[0], buf.shape[1]);
    const float* p = static_cast<const float*>(buf.ptr);
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < img.width; ++x)
            for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = p[(y * img.width + x) * 3 + c];
    return img;
}

py::array_t<float> array_from_image(const Image& img) {
    py::array_t<float> arr({img.height, img.width, img.channels});
    auto buf = arr.request();
    float* p = static_cast<float*>(buf.ptr);
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < img.width; ++x)
            for (int64_t c = 0; c < img.channels; ++c)
                p[(y * img.width + x) * img.channels + c] = img.at(c, y, x);
    return arr;
}

metrics::FeatureMatrix matrix_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    auto buf = arr.request();
    if (buf.ndim != 2) throw std::invalid_argument("expected a 2-D array");
    metrics::FeatureMatrix m(buf.shape[0], buf.shape[1]);
    std::memcpy(m.data.data(), buf.ptr, m.data.size() * sizeof(double));
    return m;
}

class PyModel {
public:
    explicit PyModel(std::unique_ptr<Model<float>> m) : model_(std::move(m)) {}

    static PyModel load(const std::string& path) { return PyModel(load_model<float>(path)); }

    static PyModel create(int64_t base_channels, int columns, int num_classes, uint64_t seed) {
        ModelConfig cfg;
        cfg.base_channels = base_channels;
        cfg.columns = columns;
        cfg.num_classes = num_classes;
        return PyModel(Model<float>::create(cfg, seed));
    }

    void save(const std::string& path) const { save_model(path, *model_); }

    int columns() const { return model_->cfg.columns; }
    int num_classes() const { return model_->cfg.num_classes; }

    py::tuple deblur(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr, int fixed_j,
                     const std::vector<int>& policy_exits, int64_t window, int64_t stride) {
        InferenceOptions opt;
        opt.fixed_j = fixed_j;
        opt.tiles.window = window;
        opt.tiles.stride = stride;
        if (!policy_exits.empty()) {
            opt.adaptive = true;
            opt.policy.exit = policy_exits;
        }
        InferenceResult res = deblur_image(*model_, image_from_array(arr), opt);
        py::list exits;
        for (const auto& e : res.exits) exits.append(py::make_tuple(e.x, e.y, e.exit));
        return py::make_tuple(array_from_image(res.output), exits, res.mean_exit);
    }

    std::vector<double> column_psnrs(const py::array_t<float, py::array::c_style | py::array::forcecast>& blur,
                                     const py::array_t<float, py::array::c_style | py::array::forcecast>& sharp) {
        Image b = image_from_array(blur);
        Image s = image_from_array(sharp);
        Tape<float> t(false);
        auto r = model_->restore(t, t.leaf(b.to_tensor()), model_->cfg.columns);
        Tensor<float> sharp_t = s.to_tensor();
        std::vector<double> out;
        for (auto sh : r.s_hats) {
            const Tensor<float>& o = t.val(sh);
            out.push_back(metrics::psnr(o.ptr(), sharp_t.ptr(), o.numel()));
        }
        return out;
    }

    int classify(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
        Image img = image_from_array(arr);
        Tape<float> t(false);
        Var<float> x = t.leaf(img.to_tensor());
        int64_t div = model_->cfg.scale_divisor();
        int64_t ph = (div - img.height % div) % div;
        int64_t pw = (div - img.width % div) % div;
        if (ph || pw) x = ops::reflect_pad(x, 0, static_cast<int>(ph), 0, static_cast<int>(pw));
        auto e = model_->encode(t, model_->apply_head(t, x));
        auto logits = model_->classify(t, e[static_cast<size_t>(model_->cfg.levels - 2)]);
        return Model<float>::predict_class(t.val(logits))[0];
    }

private:
    std::unique_ptr<Model<float>> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Reversible multi-sub-decoder deblurring core";
#ifdef REVDEBLUR_VERSION
    m.attr("__version__") = REVDEBLUR_VERSION;
#else
    m.attr("__version__") = "dev";
#endif

    m.def(
        "psnr",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
            auto ba = a.request(), bb = b.request();
            if (ba.size != bb.size) throw std::invalid_argument("psnr: size mismatch");
            return metrics::psnr(static_cast<const float*>(ba.ptr), static_cast<const float*>(bb.ptr),
                                 static_cast<int64_t>(ba.size));
        },
        py::arg("a"), py::arg("b"), "PSNR (dB) between two [0,1] arrays, capped at 100");

    m.def(
        "ssim",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
            return metrics::ssim(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"), "SSIM between two (h, w, 3) arrays in [0,1]");

    m.def(
        "linear_cka",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
            return metrics::linear_cka(matrix_from_array(x), matrix_from_array(y));
        },
        py::arg("x"), py::arg("y"), "Linear CKA between two (samples, features) matrices");

    m.def(
        "psnr_class",
        [](double psnr_db, const std::vector<double>& edges) {
            Bins b{edges};
            b.validate();
            return b.class_of(psnr_db);
        },
        py::arg("psnr_db"), py::arg("edges"), "1-based degradation class of a PSNR value");

    m.def(
        "exit_signal",
        [](const std::vector<std::vector<double>>& gains, const std::vector<int64_t>& counts, double tau,
           bool strict) {
            IncrementTable t;
            t.classes = static_cast<int>(gains.size());
            if (t.classes == 0) throw std::invalid_argument("empty table");
            t.columns = static_cast<int>(gains.front().size());
            for (const auto& row : gains) {
                if (static_cast<int>(row.size()) != t.columns) throw std::invalid_argument("ragged table");
                for (double v : row) t.gains.push_back(v);
            }
            t.counts = counts.empty() ? std::vector<int64_t>(static_cast<size_t>(t.classes), 1) : counts;
            return compute_exit_signal(t, tau, strict).exit;
        },
        py::arg("gains"), py::arg("counts") = std::vector<int64_t>(), py::arg("tau") = 0.05,
        py::arg("strict") = true, "Exit index per class from a per-class gain table");

    m.def(
        "d_rate", [](const std::vector<int>& exits, int columns) { return d_rate(exits, columns); },
        py::arg("exits"), py::arg("columns"), "Utilization of the decoder stack");

    m.def(
        "tile_plan",
        [](int64_t h, int64_t w, int64_t window, int64_t stride) {
            TileConfig cfg{window, stride};
            py::list out;
            for (const auto& r : tile_plan(h, w, cfg)) out.append(py::make_tuple(r.y, r.x, r.h, r.w));
            return out;
        },
        py::arg("height"), py::arg("width"), py::arg("window") = 384, py::arg("stride") = 352,
        "Sliding-window plan as (y, x, h, w) tuples");

    m.def(
        "generate_sharp",
        [](int64_t h, int64_t w, uint64_t seed) { return array_from_image(generate_sharp_image(h, w, seed)); },
        py::arg("height"), py::arg("width"), py::arg("seed") = 0, "Procedural sharp test image");

    m.def(
        "synthesize_blur",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& sharp, uint64_t seed,
           double min_len, double max_len, double noise) {
            BlurSpec spec;
            spec.min_length = min_len;
            spec.max_length = max_len;
            spec.noise_sigma = noise;
            return array_from_image(synthesize_pair(image_from_array(sharp), spec, seed));
        },
        py::arg("sharp"), py::arg("seed") = 0, py::arg("min_len") = 1.0, py::arg("max_len") = 13.0,
        py::arg("noise") = 0.01, "Spatially-variant blur of a sharp image");

    py::class_<PyModel>(m, "Model")
        .def_static("load", &PyModel::load, py::arg("path"))
        .def_static("create", &PyModel::create, py::arg("base_channels") = 8, py::arg("columns") = 2,
                    py::arg("num_classes") = 6, py::arg("seed") = 1)
        .def("save", &PyModel::save, py::arg("path"))
        .def_property_readonly("columns", &PyModel::columns)
        .def_property_readonly("num_classes", &PyModel::num_classes)
        .def("deblur", &PyModel::deblur, py::arg("blur"), py::arg("fixed_j") = 0,
             py::arg("policy_exits") = std::vector<int>(), py::arg("window") = 384, py::arg("stride") = 352,
             "Returns (restored, [(x, y, exit)...], mean_exit)")
        .def("column_psnrs", &PyModel::column_psnrs, py::arg("blur"), py::arg("sharp"))
        .def("classify", &PyModel::classify, py::arg("patch"));
}
