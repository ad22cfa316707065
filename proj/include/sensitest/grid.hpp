#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sensitest/errors.hpp"

namespace sensitest {

/// Strictly increasing set of admissible stimuli, with optional labels
/// (e.g. BAM weight/notch combinations).
class StimulusGrid {
public:
    StimulusGrid() = default;

    explicit StimulusGrid(std::vector<double> values, std::vector<std::string> labels = {})
        : values_(std::move(values)), labels_(std::move(labels)) {
        if (values_.empty()) throw ConfigError("grid must not be empty", "grid");
        if (!labels_.empty() && labels_.size() != values_.size())
            throw ConfigError("grid labels must parallel grid values", "grid");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!(values_[i] > 0.0) || !std::isfinite(values_[i]))
                throw ConfigError("grid values must be positive and finite", "grid");
            if (i > 0 && !(values_[i] > values_[i - 1]))
                throw ConfigError("grid values must be strictly increasing", "grid");
        }
    }

    const std::vector<double>& values() const noexcept { return values_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_.at(i); }
    double min() const { return values_.front(); }
    double max() const { return values_.back(); }

    /// Index of an exact member (relative tolerance 1e-9), if any.
    std::optional<std::size_t> index_of(double x) const noexcept {
        auto it = std::lower_bound(values_.begin(), values_.end(), x * (1.0 - 1e-9));
        if (it != values_.end() && std::abs(*it - x) <= 1e-9 * std::abs(x))
            return static_cast<std::size_t>(it - values_.begin());
        return std::nullopt;
    }

    bool contains(double x) const noexcept { return index_of(x).has_value(); }

    std::optional<std::string> label_at(std::size_t i) const {
        if (labels_.empty() || labels_[i].empty()) return std::nullopt;
        return labels_[i];
    }

    friend bool operator==(const StimulusGrid&, const StimulusGrid&) = default;

private:
    std::vector<double> values_;
    std::vector<std::string> labels_;
};

enum class SnapPolicy { nearest, nearest_above, nearest_below };

inline std::string_view to_string(SnapPolicy p) noexcept {
    switch (p) {
        case SnapPolicy::nearest: return "nearest";
        case SnapPolicy::nearest_above: return "nearest-above";
        case SnapPolicy::nearest_below: return "nearest-below";
    }
    return "?";
}

inline SnapPolicy parse_snap_policy(std::string_view s) {
    if (s == "nearest") return SnapPolicy::nearest;
    if (s == "nearest-above") return SnapPolicy::nearest_above;
    if (s == "nearest-below") return SnapPolicy::nearest_below;
    throw ConfigError("unknown snap policy '" + std::string(s) + "'", "snap_policy");
}

/// Maps a proposed stimulus onto the grid. Ties under `nearest` go to the
/// lower value (the conservative choice for explosives).
inline double snap_to_grid(double x, const StimulusGrid& grid, SnapPolicy policy) {
    if (auto i = grid.index_of(x)) return grid[*i];
    const auto& v = grid.values();
    auto above = std::upper_bound(v.begin(), v.end(), x);
    switch (policy) {
        case SnapPolicy::nearest_above:
            if (above == v.end()) throw DomainError("no grid value at or above " + std::to_string(x));
            return *above;
        case SnapPolicy::nearest_below:
            if (above == v.begin()) throw DomainError("no grid value at or below " + std::to_string(x));
            return *(above - 1);
        case SnapPolicy::nearest:
            if (above == v.end()) return v.back();
            if (above == v.begin()) return v.front();
            return (*above - x) < (x - *(above - 1)) ? *above : *(above - 1);
    }
    return x;
}

// BAM friction apparatus: load in newtons for weight B1..B9 in notch 1..6.
namespace bam {

inline constexpr std::array<std::array<int, 6>, 9> kLoads{{
    {5, 6, 7, 8, 9, 10},
    {10, 12, 14, 16, 18, 20},
    {20, 24, 28, 32, 36, 40},
    {30, 36, 42, 48, 54, 60},
    {40, 48, 56, 64, 72, 80},
    {60, 72, 84, 96, 108, 120},
    {80, 96, 112, 128, 144, 160},
    {120, 144, 168, 192, 216, 240},
    {180, 216, 252, 288, 324, 360},
}};

/// All weight/notch settings producing `load`, e.g. "B5/6" for 80 N. The
/// heaviest weight comes first since operators prefer the outer notches.
inline std::vector<std::string> settings_for(double load) {
    std::vector<std::string> out;
    for (int w = 8; w >= 0; --w)
        for (int n = 5; n >= 0; --n)
            if (std::abs(kLoads[w][n] - load) < 1e-9)
                out.push_back("B" + std::to_string(w + 1) + "/" + std::to_string(n + 1));
    return out;
}

/// Preferred label: notch 6 when available, else the first listed setting.
inline std::string label_for(double load) {
    auto all = settings_for(load);
    for (const auto& s : all)
        if (s.ends_with("/6")) return s;
    return all.empty() ? std::string{} : all.front();
}

}  // namespace bam

inline StimulusGrid labelled_bam_grid(std::vector<double> values) {
    std::vector<std::string> labels;
    labels.reserve(values.size());
    for (double v : values) labels.push_back(bam::label_for(v));
    return StimulusGrid(std::move(values), std::move(labels));
}

/// Named grids: "f1-default" (the manual's load list), "notch6" (notch 6 for
/// every weight plus 5 N from notch 1), "all" (every load in the BAM table).
inline std::map<std::string, StimulusGrid> builtin_grids() {
    std::map<std::string, StimulusGrid> out;
    out.emplace("f1-default", labelled_bam_grid({5, 10, 20, 40, 60, 80, 120, 240, 360}));
    std::vector<double> notch6{5};
    for (const auto& row : bam::kLoads) notch6.push_back(row[5]);
    out.emplace("notch6", labelled_bam_grid(notch6));
    std::vector<double> all;
    for (const auto& row : bam::kLoads) all.insert(all.end(), row.begin(), row.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    out.emplace("all", labelled_bam_grid(all));
    return out;
}

inline StimulusGrid builtin_grid(std::string_view name) {
    auto grids = builtin_grids();
    auto it = grids.find(std::string(name));
    if (it == grids.end()) throw ConfigError("unknown grid '" + std::string(name) + "'", "grid");
    return it->second;
}

}  // namespace sensitest
