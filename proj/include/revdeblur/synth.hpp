#pragma once

#include <string>
#include <vector>

#include "revdeblur/image.hpp"
#include "revdeblur/policy.hpp"

namespace rvd {

// Spatially-variant blur specification. A (grid+1) x (grid+1) lattice of
// kernels is sampled per image; every pixel sees the bilinear blend of its
// four surrounding lattice kernels.
struct BlurSpec {
    enum class Family { LinearMotion, RandomWalk };
    Family family = Family::RandomWalk;
    double min_length = 1.0;   // px, sampled log-uniform per image
    double max_length = 13.0;
    double min_angle_deg = 0.0;
    double max_angle_deg = 360.0;
    int grid = 3;              // cells per axis
    int kernel_size = 21;      // square support, odd
    double noise_sigma = 0.01; // additive Gaussian, sampled uniform [0, sigma]
};

struct BlurKernel {
    int size = 0;
    std::vector<float> taps;  // size*size, sums to 1

    float at(int y, int x) const { return taps[static_cast<size_t>(y * size + x)]; }
};

BlurKernel make_linear_kernel(int size, double length, double angle_rad);
BlurKernel make_random_walk_kernel(int size, double length, Pcg32& rng);

// Bilinear blend of lattice kernels; border pixels replicate the edge.
Image convolve_spatially_variant(const Image& sharp, const std::vector<BlurKernel>& lattice,
                                 int lattice_rows, int lattice_cols);

// Deterministic per (sharp, spec, seed): lattice sampling, blended
// convolution, additive noise, clip to [0,1].
Image synthesize_pair(const Image& sharp, const BlurSpec& spec, uint64_t seed);

// Procedural sharp content: gradients, polygons, disks and strokes.
Image generate_sharp_image(int64_t h, int64_t w, uint64_t seed);

struct PatchRecord {
    std::string blur_path;
    std::string sharp_path;
    int64_t x = 0, y = 0, size = 0;
    double psnr = 0;
    int cls = 0;
};

std::vector<PatchRecord> extract_patches(const Image& blur, const Image& sharp, int64_t size, int64_t stride,
                                         const Bins& bins, const std::string& blur_path,
                                         const std::string& sharp_path);

void save_manifest(const std::string& path, const std::vector<PatchRecord>& records);
std::vector<PatchRecord> load_manifest(const std::string& path);

struct CorpusOptions {
    int images = 16;
    int64_t height = 192, width = 192;
    int64_t patch = 64, stride = 64;
    BlurSpec blur;
    Bins bins = Bins::six_class();
    uint64_t seed = 1;
};

// Writes dir/{blur,sharp}/NNNN.png and dir/manifest.tsv.
void generate_corpus(const std::string& dir, const CorpusOptions& opt);

struct CorpusPair {
    Image blur, sharp;
    std::string blur_path, sharp_path;
};

std::vector<CorpusPair> load_corpus(const std::string& dir);

}  // namespace rvd
