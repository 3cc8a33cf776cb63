#pragma once

#include "revdeblur/metrics.hpp"
#include "revdeblur/model.hpp"
#include "revdeblur/synth.hpp"

namespace rvd {

// Retained-for-backward bytes of a full forward+backward in reversible and
// plain mode, across sub-decoder counts.
struct MemoryBenchRow {
    int columns = 0;
    size_t rev_interior = 0, rev_boundary = 0;
    size_t plain_interior = 0, plain_boundary = 0;

    size_t rev_total() const { return rev_interior + rev_boundary; }
    size_t plain_total() const { return plain_interior + plain_boundary; }
};

struct MemoryBenchReport {
    std::vector<MemoryBenchRow> rows;
    double slope_rev = 0;    // bytes per added column, least squares
    double slope_plain = 0;
    double slope_ratio = 0;  // plain / reversible

    std::string to_tsv() const;
};

MemoryBenchReport bench_memory(ModelConfig base, const std::vector<int>& column_counts, Shape4 input,
                               uint64_t seed);

// Representation-similarity sweep: linear CKA of every encoder/decoder level
// feature against the blur pattern (blur - sharp) and against the
// classifier's post-block degradation feature, over a set of patches.
struct CkaRow {
    std::string feature;  // "enc.level3" or "dec2.level1"
    double vs_blur_pattern = 0;
    double vs_degradation = 0;
};

struct CkaReport {
    std::vector<CkaRow> rows;
    std::string to_tsv() const;
};

CkaReport analyze_cka(Model<float>& model, const std::vector<CorpusPair>& corpus,
                      const std::vector<PatchRecord>& records, size_t max_patches);

}  // namespace rvd
