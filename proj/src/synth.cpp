#include "revdeblur/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "revdeblur/metrics.hpp"
#include "revdeblur/tiling.hpp"

namespace fs = std::filesystem;

namespace rvd {

namespace {

constexpr double kPi = 3.14159265358979323846;

void splat_bilinear(BlurKernel& k, double y, double x, double weight) {
    int y0 = static_cast<int>(std::floor(y));
    int x0 = static_cast<int>(std::floor(x));
    double fy = y - y0, fx = x - x0;
    auto add = [&](int yy, int xx, double w) {
        if (yy < 0 || yy >= k.size || xx < 0 || xx >= k.size || w == 0) return;
        k.taps[static_cast<size_t>(yy * k.size + xx)] += static_cast<float>(w);
    };
    add(y0, x0, weight * (1 - fy) * (1 - fx));
    add(y0, x0 + 1, weight * (1 - fy) * fx);
    add(y0 + 1, x0, weight * fy * (1 - fx));
    add(y0 + 1, x0 + 1, weight * fy * fx);
}

void normalize(BlurKernel& k) {
    double sum = 0;
    for (float v : k.taps) sum += v;
    if (sum <= 0) {
        // degenerate: fall back to identity
        std::fill(k.taps.begin(), k.taps.end(), 0.f);
        k.taps[static_cast<size_t>((k.size / 2) * k.size + k.size / 2)] = 1.f;
        return;
    }
    for (float& v : k.taps) v = static_cast<float>(v / sum);
}

}  // namespace

BlurKernel make_linear_kernel(int size, double length, double angle_rad) {
    if (size % 2 == 0) throw std::runtime_error("kernel size must be odd");
    BlurKernel k{size, std::vector<float>(static_cast<size_t>(size * size), 0.f)};
    double c = size / 2;
    int n = std::max(1, static_cast<int>(std::lround(length)));
    double dx = std::cos(angle_rad), dy = std::sin(angle_rad);
    for (int i = 0; i < n; ++i) {
        double off = i - (n - 1) / 2.0;
        splat_bilinear(k, c + off * dy, c + off * dx, 1.0);
    }
    normalize(k);
    return k;
}

BlurKernel make_random_walk_kernel(int size, double length, Pcg32& rng) {
    if (size % 2 == 0) throw std::runtime_error("kernel size must be odd");
    BlurKernel k{size, std::vector<float>(static_cast<size_t>(size * size), 0.f)};
    double c = size / 2;
    int n = std::max(1, static_cast<int>(std::lround(length)));
    double theta = rng.uniform(0, 2 * kPi);
    double y = 0, x = 0;
    double lim = c - 0.51;
    for (int i = 0; i < n; ++i) {
        splat_bilinear(k, c + y, c + x, 1.0);
        theta += rng.gaussian() * 0.4;
        y = std::clamp(y + std::sin(theta), -lim, lim);
        x = std::clamp(x + std::cos(theta), -lim, lim);
    }
    normalize(k);
    return k;
}

Image convolve_spatially_variant(const Image& sharp, const std::vector<BlurKernel>& lattice,
                                 int lattice_rows, int lattice_cols) {
    if (lattice_rows < 2 || lattice_cols < 2 ||
        static_cast<int>(lattice.size()) != lattice_rows * lattice_cols)
        throw std::runtime_error("kernel lattice must be at least 2x2");
    int ks = lattice.front().size;
    for (const auto& k : lattice)
        if (k.size != ks) throw std::runtime_error("kernel lattice sizes differ");
    if (ks > sharp.height || ks > sharp.width)
        throw std::runtime_error("blur kernel larger than the image");

    Image out(sharp.channels, sharp.height, sharp.width);
    int half = ks / 2;
    double cell_h = static_cast<double>(sharp.height - 1) / (lattice_rows - 1);
    double cell_w = static_cast<double>(sharp.width - 1) / (lattice_cols - 1);

    for (int64_t yy = 0; yy < sharp.height; ++yy) {
        double gy = yy / cell_h;
        int iy = std::min<int>(lattice_rows - 2, static_cast<int>(gy));
        double fy = gy - iy;
        for (int64_t xx = 0; xx < sharp.width; ++xx) {
            double gx = xx / cell_w;
            int ix = std::min<int>(lattice_cols - 2, static_cast<int>(gx));
            double fx = gx - ix;
            const BlurKernel* ks4[4] = {&lattice[static_cast<size_t>(iy * lattice_cols + ix)],
                                        &lattice[static_cast<size_t>(iy * lattice_cols + ix + 1)],
                                        &lattice[static_cast<size_t>((iy + 1) * lattice_cols + ix)],
                                        &lattice[static_cast<size_t>((iy + 1) * lattice_cols + ix + 1)]};
            double w4[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
            for (int64_t ch = 0; ch < sharp.channels; ++ch) {
                double acc = 0;
                for (int q = 0; q < 4; ++q) {
                    if (w4[q] == 0) continue;
                    double conv = 0;
                    for (int ky = 0; ky < ks4[q]->size; ++ky) {
                        int64_t sy = std::clamp<int64_t>(yy + ky - half, 0, sharp.height - 1);
                        for (int kx = 0; kx < ks4[q]->size; ++kx) {
                            float tap = ks4[q]->at(ky, kx);
                            if (tap == 0.f) continue;
                            int64_t sx = std::clamp<int64_t>(xx + kx - half, 0, sharp.width - 1);
                            conv += tap * sharp.at(ch, sy, sx);
                        }
                    }
                    acc += w4[q] * conv;
                }
                out.at(ch, yy, xx) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Image synthesize_pair(const Image& sharp, const BlurSpec& spec, uint64_t seed) {
    Pcg32 rng(seed, 0x9e3779b97f4a7c15ULL);
    int rows = spec.grid + 1, cols = spec.grid + 1;
    double log_lo = std::log(std::max(1.0, spec.min_length));
    double log_hi = std::log(std::max(1.0, spec.max_length));
    // one base length per image, jittered per lattice point
    double base = std::exp(rng.uniform(log_lo, log_hi));
    std::vector<BlurKernel> lattice;
    for (int i = 0; i < rows * cols; ++i) {
        double len = std::max(1.0, base * rng.uniform(0.7, 1.3));
        if (spec.family == BlurSpec::Family::LinearMotion) {
            double ang = rng.uniform(spec.min_angle_deg, spec.max_angle_deg) * kPi / 180.0;
            lattice.push_back(make_linear_kernel(spec.kernel_size, len, ang));
        } else {
            lattice.push_back(make_random_walk_kernel(spec.kernel_size, len, rng));
        }
    }
    Image blur = convolve_spatially_variant(sharp, lattice, rows, cols);
    double sigma = rng.uniform(0.0, spec.noise_sigma);
    for (auto& v : blur.data) {
        double noisy = v + rng.gaussian() * sigma;
        v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    return blur;
}

// ---------------------------------------------------------------------------
// Procedural sharp content
// ---------------------------------------------------------------------------

namespace {

struct Color {
    float r, g, b;
};

Color random_color(Pcg32& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
            static_cast<float>(rng.uniform())};
}

void put(Image& img, int64_t y, int64_t x, const Color& c) {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
    img.at(0, y, x) = c.r;
    img.at(1, y, x) = c.g;
    img.at(2, y, x) = c.b;
}

void fill_triangle(Image& img, double x0, double y0, double x1, double y1, double x2, double y2,
                   const Color& c) {
    double minx = std::min({x0, x1, x2}), maxx = std::max({x0, x1, x2});
    double miny = std::min({y0, y1, y2}), maxy = std::max({y0, y1, y2});
    double den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2);
    if (std::abs(den) < 1e-9) return;
    for (int64_t y = std::max<int64_t>(0, static_cast<int64_t>(miny));
         y <= std::min<int64_t>(img.height - 1, static_cast<int64_t>(maxy)); ++y)
        for (int64_t x = std::max<int64_t>(0, static_cast<int64_t>(minx));
             x <= std::min<int64_t>(img.width - 1, static_cast<int64_t>(maxx)); ++x) {
            double a = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / den;
            double b = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / den;
            double g = 1 - a - b;
            if (a >= 0 && b >= 0 && g >= 0) put(img, y, x, c);
        }
}

void fill_disk(Image& img, double cx, double cy, double r, const Color& c) {
    for (int64_t y = std::max<int64_t>(0, static_cast<int64_t>(cy - r));
         y <= std::min<int64_t>(img.height - 1, static_cast<int64_t>(cy + r)); ++y)
        for (int64_t x = std::max<int64_t>(0, static_cast<int64_t>(cx - r));
             x <= std::min<int64_t>(img.width - 1, static_cast<int64_t>(cx + r)); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) put(img, y, x, c);
}

}  // namespace

Image generate_sharp_image(int64_t h, int64_t w, uint64_t seed) {
    Pcg32 rng(seed, 0xda3e39cb94b95bdbULL);
    Image img(3, h, w);

    Color a = random_color(rng), b = random_color(rng);
    double ang = rng.uniform(0, 2 * kPi);
    double ca = std::cos(ang), sa = std::sin(ang);
    double diag = std::sqrt(static_cast<double>(h * h + w * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double t = 0.5 + (ca * x + sa * y) / diag;
            t = std::clamp(t, 0.0, 1.0);
            img.at(0, y, x) = static_cast<float>(a.r * (1 - t) + b.r * t);
            img.at(1, y, x) = static_cast<float>(a.g * (1 - t) + b.g * t);
            img.at(2, y, x) = static_cast<float>(a.b * (1 - t) + b.b * t);
        }

    int shapes = static_cast<int>(rng.uniform_int(6, 14));
    for (int s = 0; s < shapes; ++s) {
        Color c = random_color(rng);
        if (rng.uniform() < 0.5) {
            double x0 = rng.uniform(0, static_cast<double>(w)), y0 = rng.uniform(0, static_cast<double>(h));
            double r = rng.uniform(4, static_cast<double>(std::min(h, w)) / 3);
            double x1 = x0 + rng.uniform(-r, r) * 2, y1 = y0 + rng.uniform(-r, r) * 2;
            double x2 = x0 + rng.uniform(-r, r) * 2, y2 = y0 + rng.uniform(-r, r) * 2;
            fill_triangle(img, x0, y0, x1, y1, x2, y2, c);
        } else {
            fill_disk(img, rng.uniform(0, static_cast<double>(w)), rng.uniform(0, static_cast<double>(h)),
                      rng.uniform(3, static_cast<double>(std::min(h, w)) / 4), c);
        }
    }

    int strokes = static_cast<int>(rng.uniform_int(4, 9));
    for (int s = 0; s < strokes; ++s) {
        Color c = rng.uniform() < 0.5 ? Color{0.05f, 0.05f, 0.05f} : Color{0.95f, 0.95f, 0.95f};
        double x = rng.uniform(0, static_cast<double>(w)), y = rng.uniform(0, static_cast<double>(h));
        double theta = rng.uniform(0, 2 * kPi);
        double r = rng.uniform(0.6, 1.8);
        int steps = static_cast<int>(rng.uniform_int(20, 120));
        for (int i = 0; i < steps; ++i) {
            fill_disk(img, x, y, r, c);
            theta += rng.gaussian() * 0.25;
            x += std::cos(theta) * 1.5;
            y += std::sin(theta) * 1.5;
            if (x < 0 || x >= w || y < 0 || y >= h) break;
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Patches, manifests, corpus
// ---------------------------------------------------------------------------

std::vector<PatchRecord> extract_patches(const Image& blur, const Image& sharp, int64_t size, int64_t stride,
                                         const Bins& bins, const std::string& blur_path,
                                         const std::string& sharp_path) {
    if (size > blur.height || size > blur.width) throw std::runtime_error("patch size exceeds image");
    std::vector<PatchRecord> out;
    for (int64_t y : tile_positions(blur.height, size, stride))
        for (int64_t x : tile_positions(blur.width, size, stride)) {
            Image bp = blur.crop(y, x, size, size);
            Image sp = sharp.crop(y, x, size, size);
            PatchRecord r;
            r.blur_path = blur_path;
            r.sharp_path = sharp_path;
            r.x = x;
            r.y = y;
            r.size = size;
            r.psnr = metrics::psnr(bp, sp);
            r.cls = bins.class_of(r.psnr);
            out.push_back(std::move(r));
        }
    return out;
}

void save_manifest(const std::string& path, const std::vector<PatchRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write manifest: " + path);
    os << "blur\tsharp\tx\ty\tsize\tpsnr\tclass\n";
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.psnr);
        os << r.blur_path << '\t' << r.sharp_path << '\t' << r.x << '\t' << r.y << '\t' << r.size << '\t'
           << buf << '\t' << r.cls << '\n';
    }
}

std::vector<PatchRecord> load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read manifest: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("blur\tsharp", 0) != 0)
        throw std::runtime_error("manifest: bad header");
    std::vector<PatchRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        PatchRecord r;
        std::string psnr_s, cls_s, x_s, y_s, size_s;
        if (!std::getline(ls, r.blur_path, '\t') || !std::getline(ls, r.sharp_path, '\t') ||
            !std::getline(ls, x_s, '\t') || !std::getline(ls, y_s, '\t') || !std::getline(ls, size_s, '\t') ||
            !std::getline(ls, psnr_s, '\t') || !std::getline(ls, cls_s))
            throw std::runtime_error("manifest: bad row '" + line + "'");
        r.x = std::stoll(x_s);
        r.y = std::stoll(y_s);
        r.size = std::stoll(size_s);
        r.psnr = std::stod(psnr_s);
        r.cls = std::stoi(cls_s);
        out.push_back(std::move(r));
    }
    return out;
}

void generate_corpus(const std::string& dir, const CorpusOptions& opt) {
    fs::create_directories(fs::path(dir) / "blur");
    fs::create_directories(fs::path(dir) / "sharp");
    std::vector<PatchRecord> manifest;
    for (int i = 0; i < opt.images; ++i) {
        uint64_t img_seed = opt.seed * 1000003ULL + static_cast<uint64_t>(i);
        Image sharp = generate_sharp_image(opt.height, opt.width, img_seed);
        Image blur = synthesize_pair(sharp, opt.blur, img_seed ^ 0x5bf03635ULL);
        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", i);
        std::string bpath = (fs::path(dir) / "blur" / name).string();
        std::string spath = (fs::path(dir) / "sharp" / name).string();
        write_png(bpath, blur);
        write_png(spath, sharp);
        auto records = extract_patches(blur, sharp, opt.patch, opt.stride, opt.bins,
                                       std::string("blur/") + name, std::string("sharp/") + name);
        manifest.insert(manifest.end(), records.begin(), records.end());
    }
    save_manifest((fs::path(dir) / "manifest.tsv").string(), manifest);
}

std::vector<CorpusPair> load_corpus(const std::string& dir) {
    std::vector<CorpusPair> out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / "blur")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        CorpusPair p;
        p.blur_path = f.string();
        p.sharp_path = (fs::path(dir) / "sharp" / f.filename()).string();
        p.blur = read_png(p.blur_path);
        p.sharp = read_png(p.sharp_path);
        out.push_back(std::move(p));
    }
    if (out.empty()) throw std::runtime_error("no corpus images found under " + dir);
    return out;
}

}  // namespace rvd
