#pragma once

// Trial records and the delimited-text dataset format:
//
//   index,stimulus,unit,outcome
//   1,360,N,1
//
// Lines starting with '#' are comments.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sensitest/errors.hpp"

namespace sensitest {

struct TrialRecord {
    int index = 0;
    double stimulus = 0.0;
    double log_stimulus = 0.0;
    int outcome = 0;
    std::optional<std::string> grid_label;

    static TrialRecord make(int index, double stimulus, int outcome, std::optional<std::string> label = {}) {
        if (!(stimulus > 0.0) || !std::isfinite(stimulus)) throw DomainError("stimulus must be positive");
        if (outcome != 0 && outcome != 1) throw DomainError("outcome must be 0 or 1");
        return {index, stimulus, std::log(stimulus), outcome, std::move(label)};
    }

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// Number of trials and positives at one stimulus level.
struct LevelCount {
    double stimulus = 0.0;
    int positives = 0;
    int trials = 0;
};

class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<TrialRecord> trials, std::string unit = "N")
        : trials_(std::move(trials)), unit_(std::move(unit)) {
        for (std::size_t i = 1; i < trials_.size(); ++i)
            if (trials_[i].index <= trials_[i - 1].index)
                throw DomainError("trial indices must be strictly increasing");
    }

    /// Builds a dataset from (stimulus, outcome) pairs, numbering trials from 1.
    static Dataset from_pairs(const std::vector<std::pair<double, int>>& pairs, std::string unit = "N") {
        std::vector<TrialRecord> t;
        t.reserve(pairs.size());
        int i = 0;
        for (auto [x, y] : pairs) t.push_back(TrialRecord::make(++i, x, y));
        return Dataset(std::move(t), std::move(unit));
    }

    /// Expands per-level counts, listing positives after negatives within a level.
    static Dataset from_counts(const std::vector<LevelCount>& levels, std::string unit = "N") {
        std::vector<std::pair<double, int>> pairs;
        for (const auto& l : levels) {
            if (l.positives < 0 || l.positives > l.trials) throw DomainError("invalid level count");
            for (int k = 0; k < l.trials; ++k) pairs.emplace_back(l.stimulus, k >= l.trials - l.positives ? 1 : 0);
        }
        return from_pairs(pairs, std::move(unit));
    }

    const std::vector<TrialRecord>& trials() const noexcept { return trials_; }
    const std::string& unit() const noexcept { return unit_; }
    std::size_t size() const noexcept { return trials_.size(); }
    bool empty() const noexcept { return trials_.empty(); }

    void append(TrialRecord t) {
        if (!trials_.empty() && t.index <= trials_.back().index)
            throw DomainError("trial indices must be strictly increasing");
        trials_.push_back(std::move(t));
    }

    /// Per-level counts in increasing stimulus order.
    std::vector<LevelCount> levels() const {
        std::map<double, LevelCount> m;
        for (const auto& t : trials_) {
            auto& l = m[t.stimulus];
            l.stimulus = t.stimulus;
            l.trials += 1;
            l.positives += t.outcome;
        }
        std::vector<LevelCount> out;
        for (auto& [_, l] : m) out.push_back(l);
        return out;
    }

    std::vector<double> log_stimuli() const {
        std::vector<double> v;
        v.reserve(trials_.size());
        for (const auto& t : trials_) v.push_back(t.log_stimulus);
        return v;
    }

    std::vector<int> outcomes() const {
        std::vector<int> v;
        v.reserve(trials_.size());
        for (const auto& t : trials_) v.push_back(t.outcome);
        return v;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::vector<TrialRecord> trials_;
    std::string unit_ = "N";
};

namespace io {

inline std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(15) << v;
    return os.str();
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
    os << "index,stimulus,unit,outcome\n";
    for (const auto& t : d.trials())
        os << t.index << ',' << format_number(t.stimulus) << ',' << d.unit() << ',' << t.outcome << '\n';
}

inline std::string dataset_to_string(const Dataset& d) {
    std::ostringstream os;
    write_dataset(os, d);
    return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("cannot parse '" + s + "' as a number", what);
    }
}

inline Dataset read_dataset(std::istream& is) {
    std::string line;
    std::vector<std::string> header;
    std::vector<TrialRecord> trials;
    std::string unit;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (header.empty()) {
            header = cells;
            if (header != std::vector<std::string>{"index", "stimulus", "unit", "outcome"})
                throw ConfigError("dataset header must be 'index,stimulus,unit,outcome'", "dataset");
            continue;
        }
        if (cells.size() != 4)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 4 fields", "dataset");
        const int index = static_cast<int>(parse_double(cells[0], "index"));
        const double x = parse_double(cells[1], "stimulus");
        const double y = parse_double(cells[3], "outcome");
        if (y != 0.0 && y != 1.0)
            throw ConfigError("line " + std::to_string(lineno) + ": outcome must be 0 or 1", "dataset");
        if (unit.empty()) unit = cells[2];
        else if (cells[2] != unit)
            throw ConfigError("line " + std::to_string(lineno) + ": mixed units", "dataset");
        try {
            trials.push_back(TrialRecord::make(index, x, static_cast<int>(y)));
        } catch (const DomainError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what(), "dataset");
        }
    }
    if (header.empty()) throw ConfigError("dataset has no header", "dataset");
    try {
        return Dataset(std::move(trials), unit.empty() ? "N" : unit);
    } catch (const DomainError& e) {
        throw ConfigError(e.what(), "dataset");
    }
}

inline Dataset read_dataset_string(const std::string& s) {
    std::istringstream is(s);
    return read_dataset(is);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open dataset '" + path + "'", "dataset");
    return read_dataset(f);
}

inline void save_dataset(const std::string& path, const Dataset& d) {
    if (path.empty()) throw ConfigError("empty destination path", "output");
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    write_dataset(f, d);
}

}  // namespace io
}  // namespace sensitest
