#include "revdeblur/bench.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "revdeblur/losses.hpp"

namespace rvd {

namespace {

MemoryReport run_mode(Model<float>& model, const Tensor<float>& blur, const Tensor<float>& sharp,
                      bool reversible) {
    Tape<float> t(true, reversible);
    auto B = t.leaf(blur);
    auto S = t.leaf(sharp);
    auto r = model.restore(t, B, model.cfg.columns);
    auto loss = decoder_loss(t, r.s_hats, S);
    model.params.zero_grads();
    t.backward({{loss, Tensor<float>::scalar(1.f)}});
    return t.count_live_activations();
}

double least_squares_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double num = 0, den = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
}

}  // namespace

MemoryBenchReport bench_memory(ModelConfig base, const std::vector<int>& column_counts, Shape4 input,
                               uint64_t seed) {
    if (column_counts.size() < 2) throw std::runtime_error("bench_memory: need at least two column counts");
    MemoryBenchReport rep;
    Pcg32 rng(seed);
    Tensor<float> blur = random_uniform<float>(input, rng);
    Tensor<float> sharp = random_uniform<float>(input, rng);
    for (int j : column_counts) {
        ModelConfig cfg = base;
        cfg.columns = j;
        auto model = Model<float>::create(cfg, seed);
        MemoryBenchRow row;
        row.columns = j;
        MemoryReport rev = run_mode(*model, blur, sharp, true);
        MemoryReport plain = run_mode(*model, blur, sharp, false);
        row.rev_interior = rev.interior_bytes;
        row.rev_boundary = rev.boundary_bytes;
        row.plain_interior = plain.interior_bytes;
        row.plain_boundary = plain.boundary_bytes;
        rep.rows.push_back(row);
    }
    std::vector<double> xs, rev_ys, plain_ys;
    for (const auto& r : rep.rows) {
        xs.push_back(r.columns);
        rev_ys.push_back(static_cast<double>(r.rev_total()));
        plain_ys.push_back(static_cast<double>(r.plain_total()));
    }
    rep.slope_rev = least_squares_slope(xs, rev_ys);
    rep.slope_plain = least_squares_slope(xs, plain_ys);
    rep.slope_ratio = rep.slope_plain / rep.slope_rev;
    return rep;
}

std::string MemoryBenchReport::to_tsv() const {
    std::ostringstream os;
    os << "columns\trev_interior\trev_boundary\trev_total\tplain_interior\tplain_boundary\tplain_total\n";
    for (const auto& r : rows)
        os << r.columns << '\t' << r.rev_interior << '\t' << r.rev_boundary << '\t' << r.rev_total() << '\t'
           << r.plain_interior << '\t' << r.plain_boundary << '\t' << r.plain_total() << '\n';
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# slope_rev\t%.6g\n# slope_plain\t%.6g\n# slope_ratio\t%.6g\n",
                  slope_rev, slope_plain, slope_ratio);
    os << buf;
    return os.str();
}

CkaReport analyze_cka(Model<float>& model, const std::vector<CorpusPair>& corpus,
                      const std::vector<PatchRecord>& records, size_t max_patches) {
    std::map<std::string, size_t> by_path;
    for (size_t i = 0; i < corpus.size(); ++i) {
        std::string p = corpus[i].blur_path;
        auto pos = p.rfind("blur/");
        by_path[pos == std::string::npos ? p : p.substr(pos)] = i;
    }

    size_t n = std::min(max_patches, records.size());
    if (n < 2) throw std::runtime_error("analyze_cka: need at least 2 patches");

    int J = model.cfg.columns;
    int levels = model.cfg.levels;
    std::vector<metrics::FeatureMatrix> enc_feats(static_cast<size_t>(levels));
    std::vector<metrics::FeatureMatrix> dec_feats(static_cast<size_t>(J * (levels - 1)));
    metrics::FeatureMatrix blur_pattern, degradation;

    for (size_t pi = 0; pi < n; ++pi) {
        const PatchRecord& rec = records[pi];
        const CorpusPair& pair = corpus.at(by_path.at(rec.blur_path));
        Image bp = pair.blur.crop(rec.y, rec.x, rec.size, rec.size);
        Image sp = pair.sharp.crop(rec.y, rec.x, rec.size, rec.size);

        Tape<float> t(false);
        auto B = t.leaf(bp.to_tensor());
        auto e = model.encode(t, model.apply_head(t, B));
        auto states = model.stack_forward(t, e, J);
        auto degr = model.classifier_feature(t, e[static_cast<size_t>(levels - 2)]);

        auto fill = [&](metrics::FeatureMatrix& m, const Tensor<float>& v) {
            if (m.rows == 0) m = metrics::FeatureMatrix(static_cast<int64_t>(n), v.numel());
            for (int64_t k = 0; k < v.numel(); ++k) m.at(static_cast<int64_t>(pi), k) = v.ptr()[k];
        };
        for (int i = 0; i < levels; ++i) fill(enc_feats[static_cast<size_t>(i)], t.val(e[static_cast<size_t>(i)]));
        for (int j = 0; j < J; ++j)
            for (int i = 0; i < levels - 1; ++i)
                fill(dec_feats[static_cast<size_t>(j * (levels - 1) + i)],
                     t.val(states[static_cast<size_t>(j)][static_cast<size_t>(i)]));
        fill(degradation, t.val(degr));

        if (blur_pattern.rows == 0)
            blur_pattern = metrics::FeatureMatrix(static_cast<int64_t>(n), static_cast<int64_t>(bp.data.size()));
        for (size_t k = 0; k < bp.data.size(); ++k)
            blur_pattern.at(static_cast<int64_t>(pi), static_cast<int64_t>(k)) =
                static_cast<double>(bp.data[k]) - static_cast<double>(sp.data[k]);
    }

    CkaReport rep;
    for (int i = 0; i < levels; ++i)
        rep.rows.push_back({"enc.level" + std::to_string(i + 1),
                            metrics::linear_cka(enc_feats[static_cast<size_t>(i)], blur_pattern),
                            metrics::linear_cka(enc_feats[static_cast<size_t>(i)], degradation)});
    for (int j = 0; j < J; ++j)
        for (int i = 0; i < levels - 1; ++i)
            rep.rows.push_back({"dec" + std::to_string(j + 1) + ".level" + std::to_string(i + 1),
                                metrics::linear_cka(dec_feats[static_cast<size_t>(j * (levels - 1) + i)],
                                                    blur_pattern),
                                metrics::linear_cka(dec_feats[static_cast<size_t>(j * (levels - 1) + i)],
                                                    degradation)});
    return rep;
}

std::string CkaReport::to_tsv() const {
    std::ostringstream os;
    os << "feature\tcka_blur_pattern\tcka_degradation\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6g\t%.6g", r.vs_blur_pattern, r.vs_degradation);
        os << r.feature << '\t' << buf << '\n';
    }
    return os.str();
}

}  // namespace rvd
