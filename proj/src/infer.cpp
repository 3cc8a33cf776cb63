#include "revdeblur/infer.hpp"

#include <fstream>

#include "revdeblur/tiling.hpp"

namespace rvd {

std::vector<TileRect> tile_plan(int64_t height, int64_t width, const TileConfig& cfg) {
    cfg.validate();
    if (height < 1 || width < 1) throw std::runtime_error("tile_plan: empty image");
    std::vector<TileRect> out;
    int64_t th = std::min(cfg.window, height);
    int64_t tw = std::min(cfg.window, width);
    for (int64_t y : tile_positions(height, th, cfg.stride))
        for (int64_t x : tile_positions(width, tw, cfg.stride)) out.push_back({y, x, th, tw});
    return out;
}

namespace {

// Rises linearly over the overlap at both ends; complementary for neighbours
// at exact stride, normalized overall so blend weights sum to one.
double ramp_weight(int64_t i, int64_t len, int64_t overlap) {
    double w = 1.0;
    if (overlap > 0) {
        double denom = static_cast<double>(overlap + 1);
        w = std::min(w, static_cast<double>(i + 1) / denom);
        w = std::min(w, static_cast<double>(len - i) / denom);
    }
    return w;
}

// One window through the network; exit_columns picks how many sub-decoders run.
Tensor<float> run_tile(Model<float>& model, const Tensor<float>& tile, int exit_columns) {
    Tape<float> t(false);
    auto r = model.restore(t, t.leaf(tile), exit_columns);
    return t.val(r.s_hats.back());
}

int classify_tile(Model<float>& model, const Tensor<float>& tile) {
    Tape<float> t(false);
    const auto& is = tile.shape();
    int64_t div = model.cfg.scale_divisor();
    int64_t ph = (div - is.h % div) % div;
    int64_t pw = (div - is.w % div) % div;
    Var<float> x = t.leaf(tile);
    if (ph || pw) x = ops::reflect_pad(x, 0, static_cast<int>(ph), 0, static_cast<int>(pw));
    auto e = model.encode(t, model.apply_head(t, x));
    auto logits = model.classify(t, e[static_cast<size_t>(model.cfg.levels - 2)]);
    return Model<float>::predict_class(t.val(logits))[0];
}

}  // namespace

InferenceResult deblur_image(Model<float>& model, const Image& blur, const InferenceOptions& opt) {
    if (blur.height < 16 || blur.width < 16)
        throw std::runtime_error("deblur_image: image smaller than 16 px");
    int J = model.cfg.columns;
    if (opt.fixed_j < 0 || opt.fixed_j > J)
        throw std::runtime_error("deblur_image: fixed_j out of range for this checkpoint");
    if (opt.adaptive && opt.policy.exit.empty())
        throw std::runtime_error("deblur_image: adaptive mode needs an exit policy");
    if (opt.adaptive && opt.policy.classes() != model.cfg.num_classes)
        throw std::runtime_error("deblur_image: policy classes do not match the classifier");

    auto tiles = tile_plan(blur.height, blur.width, opt.tiles);
    int64_t overlap = opt.tiles.overlap();

    std::vector<double> acc(static_cast<size_t>(3 * blur.height * blur.width), 0.0);
    std::vector<double> wsum(static_cast<size_t>(blur.height * blur.width), 0.0);

    InferenceResult res;
    double exit_total = 0;
    for (const TileRect& tr : tiles) {
        Image patch = blur.crop(tr.y, tr.x, tr.h, tr.w);
        Tensor<float> tile = patch.to_tensor();

        int run_j = opt.fixed_j > 0 ? opt.fixed_j : J;
        if (opt.adaptive) {
            int c = classify_tile(model, tile);
            run_j = std::clamp(opt.policy.exit_for(c), 1, J);
        }
        exit_total += run_j;
        res.exits.push_back({tr.x, tr.y, run_j});

        Tensor<float> out = run_tile(model, tile, run_j);
        for (int64_t y = 0; y < tr.h; ++y) {
            double wy = ramp_weight(y, tr.h, overlap);
            for (int64_t x = 0; x < tr.w; ++x) {
                double w = wy * ramp_weight(x, tr.w, overlap);
                int64_t gp = (tr.y + y) * blur.width + (tr.x + x);
                wsum[static_cast<size_t>(gp)] += w;
                for (int64_t c = 0; c < 3; ++c)
                    acc[static_cast<size_t>(c * blur.height * blur.width + gp)] +=
                        w * static_cast<double>(out.ptr()[(c * tr.h + y) * tr.w + x]);
            }
        }
    }

    res.output = Image(3, blur.height, blur.width);
    for (int64_t p = 0; p < blur.height * blur.width; ++p) {
        double w = wsum[static_cast<size_t>(p)];
        for (int64_t c = 0; c < 3; ++c)
            res.output.data[static_cast<size_t>(c * blur.height * blur.width + p)] =
                static_cast<float>(acc[static_cast<size_t>(c * blur.height * blur.width + p)] / w);
    }
    res.mean_exit = exit_total / static_cast<double>(tiles.size());
    return res;
}

void save_exit_map(const std::string& path, const std::vector<TileExit>& exits) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write exit map: " + path);
    os << "x\ty\tE\n";
    for (const auto& e : exits) os << e.x << '\t' << e.y << '\t' << e.exit << '\n';
}

}  // namespace rvd
