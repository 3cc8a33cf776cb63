#pragma once

#include <string>
#include <vector>

namespace rvd {

// Degradation-degree bins over PSNR(blur, sharp). Edges are ascending dB
// thresholds; class c covers (edge[c-2], edge[c-1]] with open ends, so the
// bins partition the whole axis and higher PSNR never maps to a lower class.
struct Bins {
    std::vector<double> edges;

    int classes() const { return static_cast<int>(edges.size()) + 1; }

    // 1-based class index.
    int class_of(double psnr_db) const;

    void validate() const;

    static Bins six_class() { return Bins{{20, 25, 30, 35, 40}}; }    // default, 5 dB steps
    static Bins eight_class() { return Bins{{20, 25, 30, 35, 40, 45, 50}}; }
    static Bins with_step(double gamma, double lo, double hi);
};

double psnr_of_mse(double mse);  // 10*log10(1/mse), 100 dB when mse == 0

int psnr_class(double psnr_db, const Bins& bins);

// Mean PSNR gain of each sub-decoder over its predecessor, per class.
// Column j holds PSNR(S^j) - PSNR(S^{j-1}) with S^0 the blur input.
// Classes without samples are absent, not zero.
struct IncrementTable {
    int classes = 0;
    int columns = 0;
    std::vector<double> gains;    // classes x columns, row-major
    std::vector<int64_t> counts;  // per class

    double& at(int c /*1-based*/, int j /*1-based*/) { return gains[static_cast<size_t>((c - 1) * columns + (j - 1))]; }
    double at(int c, int j) const { return gains[static_cast<size_t>((c - 1) * columns + (j - 1))]; }
    bool has_class(int c) const { return counts[static_cast<size_t>(c - 1)] > 0; }

    std::string to_tsv() const;
    static IncrementTable from_tsv(const std::string& text);
    void save(const std::string& path) const;
    static IncrementTable load(const std::string& path);
};

// Per-patch evaluation feeding the table: PSNR of the blur input and of each
// sub-decoder output against the sharp patch.
struct PatchEval {
    double psnr_blur = 0;
    std::vector<double> psnr_columns;
};

IncrementTable build_increment_table(const std::vector<PatchEval>& evals, const Bins& bins, int columns);

// Early-exit indices per class. exit[c-1] is the sub-decoder after which a
// class-c patch stops; tau is the gain threshold that produced it.
struct ExitPolicy {
    std::vector<int> exit;
    double tau = 0;

    int classes() const { return static_cast<int>(exit.size()); }
    int exit_for(int c /*1-based*/) const { return exit[static_cast<size_t>(c - 1)]; }

    std::string to_tsv() const;
    static ExitPolicy from_tsv(const std::string& text);
    void save(const std::string& path) const;
    static ExitPolicy load(const std::string& path);
};

// E_c = (first j whose gain falls below tau) - 1, floored at 1; J when no
// column falls below. Classes without data exit at J (conservative).
// strict_less selects "<" (default) versus "<=".
ExitPolicy compute_exit_signal(const IncrementTable& table, double tau, bool strict_less = true);

// Utilization of the decoder stack: sum(exits) / (count * J).
double d_rate(const std::vector<int>& exits, int columns);

}  // namespace rvd
