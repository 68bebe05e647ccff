#pragma once
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "crs/decoder.hpp"
#include "crs/tape.hpp"

namespace crs {

// ---------------------------------------------------------------------------
// Soft intersection over union between an object's mask tube (all frames
// concatenated) and a ground-truth tube:
//   sIoU(m, g) = 1 - sum(m g) / sum(m + g - m g)
// An empty-vs-empty pair is defined as 0 so padded slots match at no cost;
// a nonempty prediction against an empty truth scores 1 (pure false
// positive).
// ---------------------------------------------------------------------------

inline double siou_value(std::span<const double> m, std::span<const double> g) {
    if (m.size() != g.size()) throw shape_error("siou: tube lengths differ");
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        inter += m[i] * g[i];
        uni += m[i] + g[i] - m[i] * g[i];
    }
    if (uni == 0.0) return 0.0;
    return 1.0 - inter / uni;
}

inline double siou_value(const std::vector<Tensor>& m, const std::vector<Tensor>& g) {
    if (m.size() != g.size()) throw shape_error("siou: tube frame counts differ");
    double inter = 0.0, uni = 0.0;
    for (std::size_t t = 0; t < m.size(); ++t) {
        require_same_shape(m[t], g[t], "siou");
        for (std::size_t i = 0; i < m[t].data.size(); ++i) {
            const double mv = m[t].data[i], gv = g[t].data[i];
            inter += mv * gv;
            uni += mv + gv - mv * gv;
        }
    }
    if (uni == 0.0) return 0.0;
    return 1.0 - inter / uni;
}

/// Tape-level sIoU over tubes of per-frame masks. Gradients flow through
/// both tubes unless the union is exactly zero, in which case the result is
/// the constant 0.
inline VarId siou(Tape& t, std::span<const VarId> m, std::span<const VarId> g) {
    if (m.size() != g.size()) throw shape_error("siou: tube frame counts differ");
    VarId inter = kNoVar, mass = kNoVar;
    for (std::size_t i = 0; i < m.size(); ++i) {
        require_same_shape(t.val(m[i]), t.val(g[i]), "siou");
        VarId d = dot(t, m[i], g[i]);
        VarId s = add(t, sum_all(t, m[i]), sum_all(t, g[i]));
        inter = inter == kNoVar ? d : add(t, inter, d);
        mass = mass == kNoVar ? s : add(t, mass, s);
    }
    VarId uni = sub(t, mass, inter);
    if (t.val(uni).item() == 0.0) return t.constant(Tensor::scalar(0.0));
    return affine(t, divide(t, inter, uni), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Minimum-cost assignment (shortest augmenting paths with potentials). The
// public hungarian() additionally refines ties to the lexicographically
// smallest optimal permutation, fixing rows in order and preferring the
// lowest column that still reaches the optimal total.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> hungarian_base(const std::vector<std::vector<double>>& a) {
    const int n = static_cast<int>(a.size());
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

inline double assignment_cost(const std::vector<std::vector<double>>& a, const std::vector<int>& perm) {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += a[i][static_cast<std::size_t>(perm[i])];
    return c;
}

} // namespace detail

/// Minimum-total-cost permutation of a square cost matrix; among optima the
/// lexicographically smallest row-to-column mapping is returned.
inline std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) throw shape_error("hungarian: empty matrix");
    for (const auto& row : cost) {
        if (static_cast<int>(row.size()) != n) throw shape_error("hungarian: matrix is not square");
        for (double c : row)
            if (!std::isfinite(c)) throw shape_error("hungarian: non-finite cost entry");
    }
    const auto base = detail::hungarian_base(cost);
    const double best = detail::assignment_cost(cost, base);
    const double tol = 1e-9 * (1.0 + std::fabs(best));

    std::vector<int> result(static_cast<std::size_t>(n), -1);
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    double fixed = 0.0;
    for (int i = 0; i < n; ++i) {
        bool placed = false;
        for (int j = 0; j < n && !placed; ++j) {
            if (used[j]) continue;
            // Cost of the remaining rows if (i -> j) is fixed.
            double rest = 0.0;
            const int m = n - i - 1;
            if (m > 0) {
                std::vector<int> cols;
                for (int jj = 0; jj < n; ++jj)
                    if (!used[jj] && jj != j) cols.push_back(jj);
                std::vector<std::vector<double>> sub(static_cast<std::size_t>(m),
                                                     std::vector<double>(static_cast<std::size_t>(m)));
                for (int r = 0; r < m; ++r)
                    for (int cc = 0; cc < m; ++cc) sub[r][cc] = cost[i + 1 + r][cols[cc]];
                rest = detail::assignment_cost(sub, detail::hungarian_base(sub));
            }
            if (fixed + cost[i][j] + rest <= best + tol) {
                result[i] = j;
                used[j] = 1;
                fixed += cost[i][j];
                placed = true;
            }
        }
        if (!placed) throw state_error("hungarian: tie refinement failed to place a row");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sequence loss: Hungarian-matched mean sIoU over whole spatio-temporal
// tubes. The assignment is chosen on current values and treated as a
// constant; gradients flow only through the matched pairs.
// ---------------------------------------------------------------------------

/// Ground-truth mask tubes as tape constants, one slot per id in order,
/// zero-padded up to `slots`.
inline MaskSequenceVars ground_truth_masks(Tape& t, const std::vector<LabelMap2D>& labels,
                                           const std::vector<std::uint32_t>& ids, int slots) {
    if (labels.empty()) throw shape_error("ground_truth_masks: no label slices");
    if (static_cast<int>(ids.size()) > slots)
        throw shape_error("ground_truth_masks: more ids than slots");
    MaskSequenceVars gt;
    gt.frames = static_cast<int>(labels.size());
    gt.slots = slots;
    gt.ids = ids;
    gt.masks.assign(static_cast<std::size_t>(gt.frames) * slots, kNoVar);
    VarId zero = t.constant(Tensor(1, labels[0].h, labels[0].w));
    for (int tf = 0; tf < gt.frames; ++tf)
        for (int o = 0; o < slots; ++o)
            gt.masks[static_cast<std::size_t>(tf) * slots + o] =
                o < static_cast<int>(ids.size())
                    ? t.constant(onehot_mask(labels[static_cast<std::size_t>(tf)], ids[o]))
                    : zero;
    return gt;
}

struct SequenceLoss {
    VarId loss = kNoVar;
    std::vector<int> assignment;  // pred slot -> gt slot
};

inline SequenceLoss sequence_loss(Tape& t, const MaskSequenceVars& pred, const MaskSequenceVars& gt) {
    if (pred.frames != gt.frames)
        throw shape_error("sequence_loss: frame counts differ (" + std::to_string(pred.frames) +
                          " vs " + std::to_string(gt.frames) + ")");
    if (pred.slots != gt.slots)
        throw shape_error("sequence_loss: slot counts differ (" + std::to_string(pred.slots) +
                          " vs " + std::to_string(gt.slots) + ")");
    const int M = pred.slots;
    const int N = pred.frames;

    std::vector<VarId> pair_cost(static_cast<std::size_t>(M) * M, kNoVar);
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(M),
                                          std::vector<double>(static_cast<std::size_t>(M)));
    std::vector<VarId> tube_m(static_cast<std::size_t>(N)), tube_g(static_cast<std::size_t>(N));
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < M; ++j) {
            for (int tf = 0; tf < N; ++tf) {
                tube_m[tf] = pred.mask(tf, i);
                tube_g[tf] = gt.mask(tf, j);
            }
            VarId s = siou(t, tube_m, tube_g);
            pair_cost[static_cast<std::size_t>(i) * M + j] = s;
            cost[i][j] = t.val(s).item();
        }
    }
    SequenceLoss out;
    out.assignment = hungarian(cost);
    VarId total = kNoVar;
    for (int i = 0; i < M; ++i) {
        VarId c = pair_cost[static_cast<std::size_t>(i) * M + out.assignment[i]];
        total = total == kNoVar ? c : add(t, total, c);
    }
    out.loss = affine(t, total, 1.0 / M, 0.0);
    return out;
}

} // namespace crs
