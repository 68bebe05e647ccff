#pragma once
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "crs/errors.hpp"
#include "crs/voxel_store.hpp"

namespace crs {

// ---------------------------------------------------------------------------
// Rand error restricted to ground-truth foreground voxels (gt id 0 is
// ignored; prediction id 0 counts as a regular segment of its own).
//
// Normative convention: precision and recall are ratios of squared-overlap
// sums, i.e. counts of ordered voxel pairs including self-pairs:
//   P = sum_ij n_ij^2 / sum_i s_i^2,  R = sum_ij n_ij^2 / sum_j t_j^2
// where rows index prediction segments and columns ground-truth segments.
// The error is 1 - 2PR/(P+R). The quadratic pair_counting_oracle enumerates
// the same ordered pairs directly and must agree to float round-off.
// ---------------------------------------------------------------------------

namespace detail {

struct RandSums {
    double both = 0.0;  // sum n_ij^2
    double pred = 0.0;  // sum s_i^2
    double gt = 0.0;    // sum t_j^2
    std::size_t n = 0;
};

inline double rand_error_from_sums(const RandSums& s) {
    const double precision = s.both / s.pred;
    const double recall = s.both / s.gt;
    const double f = 2.0 * precision * recall / (precision + recall);
    return 1.0 - f;
}

} // namespace detail

inline double adapted_rand_error(const LabelMap& pred, const LabelMap& gt) {
    if (pred.z != gt.z || pred.y != gt.y || pred.x != gt.x)
        throw shape_error("adapted_rand_error: shapes differ");
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> table;
    std::map<std::uint32_t, std::uint64_t> rows, cols;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        if (gt.data[i] == 0) continue;
        ++n;
        ++table[{pred.data[i], gt.data[i]}];
        ++rows[pred.data[i]];
        ++cols[gt.data[i]];
    }
    if (n == 0) throw metric_error("adapted_rand_error: ground truth has no foreground");
    detail::RandSums s;
    s.n = n;
    for (const auto& [key, c] : table) s.both += static_cast<double>(c) * static_cast<double>(c);
    for (const auto& [id, c] : rows) s.pred += static_cast<double>(c) * static_cast<double>(c);
    for (const auto& [id, c] : cols) s.gt += static_cast<double>(c) * static_cast<double>(c);
    return detail::rand_error_from_sums(s);
}

/// Brute-force verification path: loops over all ordered voxel pairs (u, v)
/// of the ground-truth foreground, self-pairs included, counting pairs
/// co-clustered in the prediction, in the truth, and in both. Quadratic, so
/// it refuses more than 10^4 foreground voxels.
inline double pair_counting_oracle(const LabelMap& pred, const LabelMap& gt) {
    if (pred.z != gt.z || pred.y != gt.y || pred.x != gt.x)
        throw shape_error("pair_counting_oracle: shapes differ");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> fg;
    for (std::size_t i = 0; i < gt.data.size(); ++i)
        if (gt.data[i] != 0) fg.emplace_back(pred.data[i], gt.data[i]);
    if (fg.empty()) throw metric_error("pair_counting_oracle: ground truth has no foreground");
    if (fg.size() > 10000)
        throw metric_error("pair_counting_oracle: " + std::to_string(fg.size()) +
                           " foreground voxels exceed the quadratic-size guard of 10000");
    std::uint64_t both = 0, same_pred = 0, same_gt = 0;
    for (const auto& [pu, gu] : fg) {
        for (const auto& [pv, gv] : fg) {
            const bool p = pu == pv;
            const bool g = gu == gv;
            same_pred += p;
            same_gt += g;
            both += p && g;
        }
    }
    detail::RandSums s;
    s.n = fg.size();
    s.both = static_cast<double>(both);
    s.pred = static_cast<double>(same_pred);
    s.gt = static_cast<double>(same_gt);
    return detail::rand_error_from_sums(s);
}

} // namespace crs
