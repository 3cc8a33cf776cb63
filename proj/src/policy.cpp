#include "revdeblur/policy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rvd {

int Bins::class_of(double psnr_db) const {
    int c = 1;
    for (double e : edges)
        if (psnr_db > e) ++c;
    return c;
}

void Bins::validate() const {
    for (size_t i = 1; i < edges.size(); ++i)
        if (edges[i] <= edges[i - 1]) throw std::runtime_error("bin edges must be strictly ascending");
}

Bins Bins::with_step(double gamma, double lo, double hi) {
    if (gamma <= 0 || hi <= lo) throw std::runtime_error("invalid bin step specification");
    Bins b;
    for (double e = lo; e < hi + 1e-9; e += gamma) b.edges.push_back(e);
    return b;
}

double psnr_of_mse(double mse) {
    if (mse <= 0) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

int psnr_class(double psnr_db, const Bins& bins) { return bins.class_of(psnr_db); }

IncrementTable build_increment_table(const std::vector<PatchEval>& evals, const Bins& bins, int columns) {
    IncrementTable t;
    t.classes = bins.classes();
    t.columns = columns;
    t.gains.assign(static_cast<size_t>(t.classes * columns), 0.0);
    t.counts.assign(static_cast<size_t>(t.classes), 0);
    for (const auto& ev : evals) {
        if (static_cast<int>(ev.psnr_columns.size()) != columns)
            throw std::runtime_error("patch evaluation has wrong column count");
        int c = bins.class_of(ev.psnr_blur);
        t.counts[static_cast<size_t>(c - 1)] += 1;
        for (int j = 1; j <= columns; ++j) {
            double prev = (j == 1) ? ev.psnr_blur : ev.psnr_columns[static_cast<size_t>(j - 2)];
            t.at(c, j) += ev.psnr_columns[static_cast<size_t>(j - 1)] - prev;
        }
    }
    for (int c = 1; c <= t.classes; ++c) {
        if (!t.has_class(c)) continue;
        for (int j = 1; j <= columns; ++j) t.at(c, j) /= static_cast<double>(t.counts[static_cast<size_t>(c - 1)]);
    }
    return t;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string IncrementTable::to_tsv() const {
    std::ostringstream os;
    os << "class";
    for (int j = 1; j <= columns; ++j) os << "\tdec" << j;
    os << "\tcount\n";
    for (int c = 1; c <= classes; ++c) {
        os << c;
        for (int j = 1; j <= columns; ++j) {
            os << '\t';
            if (has_class(c))
                os << format_double(at(c, j));
            else
                os << '-';
        }
        os << '\t' << counts[static_cast<size_t>(c - 1)] << '\n';
    }
    return os.str();
}

IncrementTable IncrementTable::from_tsv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("increment table: empty input");
    auto header = split_tabs(line);
    if (header.size() < 3 || header.front() != "class" || header.back() != "count")
        throw std::runtime_error("increment table: bad header");
    IncrementTable t;
    t.columns = static_cast<int>(header.size()) - 2;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        if (cells.size() != header.size()) throw std::runtime_error("increment table: ragged row");
        rows.push_back(cells);
    }
    t.classes = static_cast<int>(rows.size());
    t.gains.assign(static_cast<size_t>(t.classes * t.columns), 0.0);
    t.counts.assign(static_cast<size_t>(t.classes), 0);
    for (int c = 1; c <= t.classes; ++c) {
        const auto& cells = rows[static_cast<size_t>(c - 1)];
        if (std::stoi(cells[0]) != c) throw std::runtime_error("increment table: class rows out of order");
        t.counts[static_cast<size_t>(c - 1)] = std::stoll(cells.back());
        for (int j = 1; j <= t.columns; ++j) {
            const std::string& cell = cells[static_cast<size_t>(j)];
            if (cell == "-") {
                if (t.counts[static_cast<size_t>(c - 1)] != 0)
                    throw std::runtime_error("increment table: absent entry with nonzero count");
                continue;
            }
            t.at(c, j) = std::stod(cell);
        }
    }
    return t;
}

void IncrementTable::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write table: " + path);
    os << to_tsv();
}

IncrementTable IncrementTable::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read table: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_tsv(ss.str());
}

ExitPolicy compute_exit_signal(const IncrementTable& table, double tau, bool strict_less) {
    ExitPolicy p;
    p.tau = tau;
    for (int c = 1; c <= table.classes; ++c) {
        int e = table.columns;
        if (table.has_class(c)) {
            for (int j = 1; j <= table.columns; ++j) {
                double gain = table.at(c, j);
                bool below = strict_less ? (gain < tau) : (gain <= tau);
                if (below) {
                    e = std::max(1, j - 1);
                    break;
                }
            }
        }
        p.exit.push_back(e);
    }
    return p;
}

std::string ExitPolicy::to_tsv() const {
    std::ostringstream os;
    os << "# tau\t" << format_double(tau) << '\n';
    for (int c = 1; c <= classes(); ++c) os << c << '\t' << exit[static_cast<size_t>(c - 1)] << '\n';
    return os.str();
}

ExitPolicy ExitPolicy::from_tsv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    ExitPolicy p;
    int expect_class = 1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto cells = split_tabs(line);
            if (cells.size() == 2 && cells[0] == "# tau") p.tau = std::stod(cells[1]);
            continue;
        }
        auto cells = split_tabs(line);
        if (cells.size() != 2) throw std::runtime_error("exit policy: bad line '" + line + "'");
        if (std::stoi(cells[0]) != expect_class) throw std::runtime_error("exit policy: class rows out of order");
        p.exit.push_back(std::stoi(cells[1]));
        ++expect_class;
    }
    if (p.exit.empty()) throw std::runtime_error("exit policy: no classes");
    return p;
}

void ExitPolicy::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write policy: " + path);
    os << to_tsv();
}

ExitPolicy ExitPolicy::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read policy: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_tsv(ss.str());
}

double d_rate(const std::vector<int>& exits, int columns) {
    if (exits.empty()) throw std::runtime_error("d_rate: no exits recorded");
    double sum = 0;
    for (int e : exits) sum += e;
    return sum / (static_cast<double>(exits.size()) * columns);
}

}  // namespace rvd
