#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "revdeblur/bench.hpp"
#include "revdeblur/checkpoint.hpp"
#include "revdeblur/config.hpp"
#include "revdeblur/infer.hpp"
#include "revdeblur/train.hpp"

namespace fs = std::filesystem;
using namespace rvd;

namespace {

constexpr const char* kVersion = "0.1.0";

ModelConfig model_config_from(const Config& cfg) {
    ModelConfig m;
    m.base_channels = cfg.get_int("base_channels", m.base_channels);
    m.levels = static_cast<int>(cfg.get_int("levels", m.levels));
    m.enc_blocks = cfg.get_int_list("enc_blocks", std::vector<int>(static_cast<size_t>(m.levels), 1));
    m.columns = static_cast<int>(cfg.get_int("columns", m.columns));
    m.num_classes = static_cast<int>(cfg.get_int("num_classes", m.num_classes));
    m.alpha_min = cfg.get_double("alpha_min", m.alpha_min);
    return m;
}

std::vector<std::string> model_keys() {
    return {"base_channels", "levels", "enc_blocks", "columns", "num_classes", "alpha_min", "bins"};
}

Bins bins_from(const Config& cfg) {
    Bins b;
    b.edges = cfg.get_double_list("bins", Bins::six_class().edges);
    b.validate();
    return b;
}

Config load_config_arg(const std::string& path) {
    if (path.empty()) return Config::from_string("");
    Config c = Config::load(path);
    auto known = TrainConfig::known_keys();
    auto mk = model_keys();
    known.insert(known.end(), mk.begin(), mk.end());
    auto unknown = c.unknown_keys(known);
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw std::runtime_error(msg);
    }
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

void write_metrics(const std::string& path, const std::vector<std::string>& lines) {
    if (path.empty()) return;
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_text(path, text);
}

// ---- gen-data ----

int cmd_gen_data(const std::string& out, int images, int val_images, int test_images, int64_t height,
                 int64_t width, int64_t patch, int64_t stride, uint64_t seed, const std::string& family,
                 double min_len, double max_len, double noise, int kernel_size, int grid,
                 const std::vector<double>& bin_edges) {
    CorpusOptions opt;
    opt.height = height;
    opt.width = width;
    opt.patch = patch;
    opt.stride = stride;
    opt.bins.edges = bin_edges;
    opt.bins.validate();
    opt.blur.family = family == "linear" ? BlurSpec::Family::LinearMotion : BlurSpec::Family::RandomWalk;
    opt.blur.min_length = min_len;
    opt.blur.max_length = max_len;
    opt.blur.noise_sigma = noise;
    opt.blur.kernel_size = kernel_size;
    opt.blur.grid = grid;

    struct Split {
        const char* name;
        int count;
        uint64_t seed;
    } splits[] = {{"train", images, seed}, {"val", val_images, seed + 1000}, {"test", test_images, seed + 2000}};
    for (const auto& s : splits) {
        if (s.count <= 0) continue;
        CorpusOptions o = opt;
        o.images = s.count;
        o.seed = s.seed;
        generate_corpus((fs::path(out) / s.name).string(), o);
        std::cout << "wrote " << s.count << " pairs to " << (fs::path(out) / s.name).string() << "\n";
    }
    return 0;
}

// ---- train-decoder ----

int cmd_train_decoder(const std::string& data, const std::string& out, const std::string& config_path,
                      const std::string& init_ckpt, const std::string& metrics_path, int64_t iters_override,
                      int64_t seed_override, int columns_override) {
    Config cfg = load_config_arg(config_path);
    TrainConfig tc = TrainConfig::from_config(cfg);
    if (iters_override >= 0) tc.iters = iters_override;
    if (seed_override >= 0) tc.seed = static_cast<uint64_t>(seed_override);

    std::unique_ptr<Model<float>> model;
    if (!init_ckpt.empty()) {
        model = load_model<float>(init_ckpt);
    } else {
        ModelConfig mc = model_config_from(cfg);
        if (columns_override > 0) mc.columns = columns_override;
        model = Model<float>::create(mc, tc.seed);
    }

    auto train = load_corpus((fs::path(data) / "train").string());
    std::vector<CorpusPair> val;
    if (fs::exists(fs::path(data) / "val")) val = load_corpus((fs::path(data) / "val").string());

    TrainResult res = train_decoder(*model, train, val, tc);
    save_model(out, *model);
    write_metrics(metrics_path, res.metric_lines);
    for (const auto& l : res.metric_lines) std::cout << l << "\n";
    if (res.aborted_on_nan) {
        std::cerr << "training aborted on non-finite loss at iteration " << res.iters_done
                  << "; last-good checkpoint written to " << out << "\n";
        return 2;
    }
    std::cout << "saved " << out << "\n";
    return 0;
}

// ---- train-classifier ----

int cmd_train_classifier(const std::string& data, const std::string& ckpt, const std::string& out,
                         const std::string& config_path, const std::string& metrics_path,
                         int64_t iters_override) {
    Config cfg = load_config_arg(config_path);
    TrainConfig tc = TrainConfig::from_config(cfg);
    if (iters_override >= 0) tc.iters = iters_override;

    auto model = load_model<float>(ckpt);
    auto corpus = load_corpus((fs::path(data) / "train").string());
    auto records = load_manifest((fs::path(data) / "train" / "manifest.tsv").string());

    TrainResult res = train_classifier(*model, corpus, records, tc);
    save_model(out, *model);
    write_metrics(metrics_path, res.metric_lines);
    double acc = classifier_accuracy(*model, corpus, records);
    std::cout << "train accuracy " << acc << "\nsaved " << out << "\n";
    return res.aborted_on_nan ? 2 : 0;
}

// ---- build-table ----

int cmd_build_table(const std::string& ckpt, const std::string& data, const std::string& out,
                    const std::vector<double>& bin_edges) {
    auto model = load_model<float>(ckpt);
    auto corpus = load_corpus(data);
    auto records = load_manifest((fs::path(data) / "manifest.tsv").string());
    Bins bins{bin_edges};
    bins.validate();
    auto evals = evaluate_patches(*model, corpus, records);
    IncrementTable table = build_increment_table(evals, bins, model->cfg.columns);
    table.save(out);
    std::cout << table.to_tsv();
    return 0;
}

// ---- make-policy ----

int cmd_make_policy(const std::string& table_path, double tau, const std::string& cmp,
                    const std::string& out) {
    IncrementTable table = IncrementTable::load(table_path);
    ExitPolicy policy = compute_exit_signal(table, tau, cmp != "le");
    policy.save(out);
    std::cout << policy.to_tsv();
    return 0;
}

// ---- infer ----

int cmd_infer(const std::string& ckpt, const std::string& input, const std::string& output, int fixed_j,
              bool adaptive, const std::string& policy_path, int64_t window, int64_t stride,
              const std::string& exit_map) {
    auto model = load_model<float>(ckpt);
    InferenceOptions opt;
    opt.fixed_j = fixed_j;
    opt.adaptive = adaptive;
    opt.tiles.window = window;
    opt.tiles.stride = stride;
    if (adaptive) {
        if (policy_path.empty()) throw std::runtime_error("--adaptive requires --policy");
        opt.policy = ExitPolicy::load(policy_path);
    }
    Image blur = read_png(input);
    InferenceResult res = deblur_image(*model, blur, opt);
    write_png(output, res.output);
    if (!exit_map.empty()) save_exit_map(exit_map, res.exits);
    std::cout << "tiles " << res.exits.size() << " mean-exit " << res.mean_exit << " -> " << output << "\n";
    return 0;
}

// ---- bench-memory ----

int cmd_bench_memory(const std::string& config_path, const std::vector<int>& columns, int64_t height,
                     int64_t width, int batch, uint64_t seed, const std::string& out) {
    Config cfg = load_config_arg(config_path);
    ModelConfig mc = model_config_from(cfg);
    MemoryBenchReport rep = bench_memory(mc, columns, Shape4(batch, 3, height, width), seed);
    std::cout << rep.to_tsv();
    if (!out.empty()) write_text(out, rep.to_tsv());
    return 0;
}

// ---- analyze-cka ----

int cmd_analyze_cka(const std::string& ckpt, const std::string& data, size_t patches,
                    const std::string& out) {
    auto model = load_model<float>(ckpt);
    auto corpus = load_corpus(data);
    auto records = load_manifest((fs::path(data) / "manifest.tsv").string());
    CkaReport rep = analyze_cka(*model, corpus, records, patches);
    std::cout << rep.to_tsv();
    if (!out.empty()) write_text(out, rep.to_tsv());
    return 0;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt, const std::string& data, int fixed_j, bool adaptive,
             const std::string& policy_path, int64_t window, int64_t stride, const std::string& out) {
    auto model = load_model<float>(ckpt);
    auto corpus = load_corpus(data);
    InferenceOptions opt;
    opt.fixed_j = fixed_j;
    opt.adaptive = adaptive;
    opt.tiles.window = window;
    opt.tiles.stride = stride;
    if (adaptive) {
        if (policy_path.empty()) throw std::runtime_error("--adaptive requires --policy");
        opt.policy = ExitPolicy::load(policy_path);
    }
    std::ostringstream os;
    os << "image\tpsnr\tssim\tmean_exit\n";
    char buf[96];
    double psnr_sum = 0, ssim_sum = 0, exit_sum = 0;
    for (const auto& pair : corpus) {
        InferenceResult res = deblur_image(*model, pair.blur, opt);
        double p = metrics::psnr(res.output, pair.sharp);
        double s = metrics::ssim(res.output, pair.sharp);
        psnr_sum += p;
        ssim_sum += s;
        exit_sum += res.mean_exit;
        std::snprintf(buf, sizeof(buf), "%.9g\t%.9g\t%.9g", p, s, res.mean_exit);
        os << fs::path(pair.blur_path).filename().string() << '\t' << buf << '\n';
    }
    double n = static_cast<double>(corpus.size());
    std::snprintf(buf, sizeof(buf), "%.9g\t%.9g\t%.9g", psnr_sum / n, ssim_sum / n, exit_sum / n);
    os << "mean\t" << buf << '\n';
    std::cout << os.str();
    if (!out.empty()) write_text(out, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reversible multi-sub-decoder deblurring toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic blur corpus");
    std::string gen_out = "corpus";
    int gen_images = 16, gen_val = 4, gen_test = 4, gen_kernel = 21, gen_grid = 3;
    int64_t gen_h = 192, gen_w = 192, gen_patch = 64, gen_stride = 64;
    uint64_t gen_seed = 1;
    std::string gen_family = "walk";
    double gen_min_len = 1.0, gen_max_len = 13.0, gen_noise = 0.01;
    std::vector<double> gen_bins = Bins::six_class().edges;
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
    gen->add_option("--images", gen_images, "Training images")->capture_default_str();
    gen->add_option("--val", gen_val, "Validation images")->capture_default_str();
    gen->add_option("--test", gen_test, "Test images")->capture_default_str();
    gen->add_option("--height", gen_h, "Image height")->capture_default_str();
    gen->add_option("--width", gen_w, "Image width")->capture_default_str();
    gen->add_option("--patch", gen_patch, "Patch size for the manifest")->capture_default_str();
    gen->add_option("--stride", gen_stride, "Patch stride")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Corpus seed")->capture_default_str();
    gen->add_option("--family", gen_family, "Kernel family: walk|linear")->capture_default_str();
    gen->add_option("--min-len", gen_min_len, "Min kernel length (px)")->capture_default_str();
    gen->add_option("--max-len", gen_max_len, "Max kernel length (px)")->capture_default_str();
    gen->add_option("--noise", gen_noise, "Max additive noise sigma")->capture_default_str();
    gen->add_option("--kernel-size", gen_kernel, "Kernel support (odd)")->capture_default_str();
    gen->add_option("--grid", gen_grid, "Spatial variation cells per axis")->capture_default_str();
    gen->add_option("--bins", gen_bins, "PSNR bin edges (dB)")->capture_default_str();

    // train-decoder
    auto* td = app.add_subcommand("train-decoder", "Train the reversible decoder stack");
    std::string td_data = "corpus", td_out = "model.rvd", td_cfg, td_init, td_metrics;
    int64_t td_iters = -1, td_seed = -1;
    int td_columns = 0;
    td->add_option("--data", td_data, "Corpus root (train/, val/)")->capture_default_str();
    td->add_option("--out", td_out, "Output checkpoint")->capture_default_str();
    td->add_option("--config", td_cfg, "key=value config file");
    td->add_option("--init", td_init, "Continue from an existing checkpoint");
    td->add_option("--metrics", td_metrics, "Write the metrics log here");
    td->add_option("--iters", td_iters, "Override iteration count");
    td->add_option("--seed", td_seed, "Override seed");
    td->add_option("--columns", td_columns, "Override sub-decoder count");

    // train-classifier
    auto* tc = app.add_subcommand("train-classifier", "Train the degradation classifier");
    std::string tc_data = "corpus", tc_ckpt, tc_out = "model-cls.rvd", tc_cfg, tc_metrics;
    int64_t tc_iters = -1;
    tc->add_option("--data", tc_data, "Corpus root")->capture_default_str();
    tc->add_option("--ckpt", tc_ckpt, "Input checkpoint")->required();
    tc->add_option("--out", tc_out, "Output checkpoint")->capture_default_str();
    tc->add_option("--config", tc_cfg, "key=value config file");
    tc->add_option("--metrics", tc_metrics, "Write the metrics log here");
    tc->add_option("--iters", tc_iters, "Override iteration count");

    // build-table
    auto* bt = app.add_subcommand("build-table", "Measure per-class PSNR gains of each sub-decoder");
    std::string bt_ckpt, bt_data, bt_out = "table.tsv";
    std::vector<double> bt_bins = Bins::six_class().edges;
    bt->add_option("--ckpt", bt_ckpt, "Checkpoint")->required();
    bt->add_option("--data", bt_data, "Corpus split directory (with manifest.tsv)")->required();
    bt->add_option("--out", bt_out, "Output TSV")->capture_default_str();
    bt->add_option("--bins", bt_bins, "PSNR bin edges (dB)")->capture_default_str();

    // make-policy
    auto* mp = app.add_subcommand("make-policy", "Derive exit indices from a gain table");
    std::string mp_table, mp_out = "policy.tsv", mp_cmp = "lt";
    double mp_tau = 0.05;
    mp->add_option("--table", mp_table, "Increment table TSV")->required();
    mp->add_option("--tau", mp_tau, "Gain threshold (dB)")->capture_default_str();
    mp->add_option("--cmp", mp_cmp, "Comparison: lt (strict) or le")->capture_default_str();
    mp->add_option("--out", mp_out, "Output TSV")->capture_default_str();

    // infer
    auto* in = app.add_subcommand("infer", "Deblur one image with sliding windows");
    std::string in_ckpt, in_input, in_output = "out.png", in_policy, in_exit_map;
    int in_fixed_j = 0;
    bool in_adaptive = false;
    int64_t in_window = 384, in_stride = 352;
    in->add_option("--ckpt", in_ckpt, "Checkpoint")->required();
    in->add_option("--input", in_input, "Blurred PNG")->required();
    in->add_option("--output", in_output, "Restored PNG")->capture_default_str();
    in->add_option("--fixed-j", in_fixed_j, "Run exactly this many sub-decoders (0 = all)");
    in->add_flag("--adaptive", in_adaptive, "Per-window exits from the classifier");
    in->add_option("--policy", in_policy, "Exit policy TSV (for --adaptive)");
    in->add_option("--window", in_window, "Window size")->capture_default_str();
    in->add_option("--stride", in_stride, "Window stride")->capture_default_str();
    in->add_option("--exit-map", in_exit_map, "Write per-window exits here (TSV)");

    // bench-memory
    auto* bm = app.add_subcommand("bench-memory", "Retained-activation comparison across column counts");
    std::string bm_cfg, bm_out;
    std::vector<int> bm_columns = {1, 2, 4, 8};
    int64_t bm_h = 64, bm_w = 64;
    int bm_batch = 1;
    uint64_t bm_seed = 1;
    bm->add_option("--config", bm_cfg, "key=value config file");
    bm->add_option("--columns", bm_columns, "Column counts")->capture_default_str();
    bm->add_option("--height", bm_h, "Input height")->capture_default_str();
    bm->add_option("--width", bm_w, "Input width")->capture_default_str();
    bm->add_option("--batch", bm_batch, "Batch size")->capture_default_str();
    bm->add_option("--seed", bm_seed, "Seed")->capture_default_str();
    bm->add_option("--out", bm_out, "Write the report TSV here");

    // analyze-cka
    auto* ck = app.add_subcommand("analyze-cka", "Feature-similarity sweep over a corpus");
    std::string ck_ckpt, ck_data, ck_out;
    size_t ck_patches = 64;
    ck->add_option("--ckpt", ck_ckpt, "Checkpoint")->required();
    ck->add_option("--data", ck_data, "Corpus split directory")->required();
    ck->add_option("--patches", ck_patches, "Patch sample size")->capture_default_str();
    ck->add_option("--out", ck_out, "Write the report TSV here");

    // eval
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM over a corpus split");
    std::string ev_ckpt, ev_data, ev_policy, ev_out;
    int ev_fixed_j = 0;
    bool ev_adaptive = false;
    int64_t ev_window = 384, ev_stride = 352;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
    ev->add_option("--data", ev_data, "Corpus split directory")->required();
    ev->add_option("--fixed-j", ev_fixed_j, "Run exactly this many sub-decoders (0 = all)");
    ev->add_flag("--adaptive", ev_adaptive, "Per-window exits from the classifier");
    ev->add_option("--policy", ev_policy, "Exit policy TSV");
    ev->add_option("--window", ev_window, "Window size")->capture_default_str();
    ev->add_option("--stride", ev_stride, "Window stride")->capture_default_str();
    ev->add_option("--out", ev_out, "Write the report TSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_images, gen_val, gen_test, gen_h, gen_w, gen_patch, gen_stride,
                                gen_seed, gen_family, gen_min_len, gen_max_len, gen_noise, gen_kernel,
                                gen_grid, gen_bins);
        if (td->parsed())
            return cmd_train_decoder(td_data, td_out, td_cfg, td_init, td_metrics, td_iters, td_seed,
                                     td_columns);
        if (tc->parsed()) return cmd_train_classifier(tc_data, tc_ckpt, tc_out, tc_cfg, tc_metrics, tc_iters);
        if (bt->parsed()) return cmd_build_table(bt_ckpt, bt_data, bt_out, bt_bins);
        if (mp->parsed()) return cmd_make_policy(mp_table, mp_tau, mp_cmp, mp_out);
        if (in->parsed())
            return cmd_infer(in_ckpt, in_input, in_output, in_fixed_j, in_adaptive, in_policy, in_window,
                             in_stride, in_exit_map);
        if (bm->parsed()) return cmd_bench_memory(bm_cfg, bm_columns, bm_h, bm_w, bm_batch, bm_seed, bm_out);
        if (ck->parsed()) return cmd_analyze_cka(ck_ckpt, ck_data, ck_patches, ck_out);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_fixed_j, ev_adaptive, ev_policy, ev_window, ev_stride,
                            ev_out);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
