#pragma once
#include <cstdio>
#include <optional>
#include <queue>
#include <tuple>
#include <vector>

#include "crs/decoder.hpp"
#include "crs/loss.hpp"
#include "crs/model.hpp"
#include "crs/voxel_store.hpp"

namespace crs {

// ---------------------------------------------------------------------------
// Marker-based 2D watershed used to seed volumes without ground truth and to
// propose regions for new-object discovery.
// ---------------------------------------------------------------------------

namespace detail {

/// Separable Gaussian blur with replicated borders.
inline Frame gaussian_blur(const Frame& in, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kern(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kern[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += kern[i + radius];
    }
    for (double& k : kern) k /= norm;
    Frame tmp(in.h, in.w), out(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kern[i + radius] * in.at(y, std::clamp(x + i, 0, in.w - 1));
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kern[i + radius] * tmp.at(std::clamp(y + i, 0, in.h - 1), x);
            out.at(y, x) = acc;
        }
    return out;
}

/// Reconstruction by erosion of `marker` above `mask` (marker >= mask),
/// iterated 4-neighbor raster sweeps until stable.
inline Frame reconstruct_by_erosion(Frame marker, const Frame& mask) {
    bool changed = true;
    int guard = 0;
    while (changed && guard++ < 512) {
        changed = false;
        for (int y = 0; y < marker.h; ++y)
            for (int x = 0; x < marker.w; ++x) {
                double v = marker.at(y, x);
                if (y > 0) v = std::min(v, marker.at(y - 1, x));
                if (x > 0) v = std::min(v, marker.at(y, x - 1));
                v = std::max(v, mask.at(y, x));
                if (v < marker.at(y, x)) {
                    marker.at(y, x) = v;
                    changed = true;
                }
            }
        for (int y = marker.h - 1; y >= 0; --y)
            for (int x = marker.w - 1; x >= 0; --x) {
                double v = marker.at(y, x);
                if (y + 1 < marker.h) v = std::min(v, marker.at(y + 1, x));
                if (x + 1 < marker.w) v = std::min(v, marker.at(y, x + 1));
                v = std::max(v, mask.at(y, x));
                if (v < marker.at(y, x)) {
                    marker.at(y, x) = v;
                    changed = true;
                }
            }
    }
    return marker;
}

/// Regional minima plateaus (4-connectivity), labeled 1..R in raster order
/// of each plateau's first pixel.
inline LabelMap2D regional_minima(const Frame& f) {
    LabelMap2D out(f.h, f.w, 0);
    std::vector<char> visited(static_cast<std::size_t>(f.h) * f.w, 0);
    std::uint32_t next_id = 1;
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    for (int y0 = 0; y0 < f.h; ++y0) {
        for (int x0 = 0; x0 < f.w; ++x0) {
            const std::size_t i0 = static_cast<std::size_t>(y0) * f.w + x0;
            if (visited[i0]) continue;
            const double v = f.at(y0, x0);
            std::vector<std::pair<int, int>> plateau{{y0, x0}};
            visited[i0] = 1;
            bool is_min = true;
            for (std::size_t head = 0; head < plateau.size(); ++head) {
                auto [y, x] = plateau[head];
                for (int d = 0; d < 4; ++d) {
                    const int ny = y + dy[d], nx = x + dx[d];
                    if (ny < 0 || ny >= f.h || nx < 0 || nx >= f.w) continue;
                    const double nv = f.at(ny, nx);
                    if (nv < v) is_min = false;
                    if (nv == v && !visited[static_cast<std::size_t>(ny) * f.w + nx]) {
                        visited[static_cast<std::size_t>(ny) * f.w + nx] = 1;
                        plateau.emplace_back(ny, nx);
                    }
                }
            }
            if (is_min) {
                for (auto [y, x] : plateau) out.at(y, x) = next_id;
                ++next_id;
            }
        }
    }
    return out;
}

} // namespace detail

/// Seeded watershed of one intensity frame: smooth the inverted image
/// (sigma = 2 px), suppress minima shallower than h = 0.05 by reconstruction,
/// take the surviving regional minima as markers and priority-flood the
/// smoothed relief from them. Labels are 1..R in marker raster order; a flat
/// frame yields a single region.
inline LabelMap2D watershed2d(const Frame& frame) {
    constexpr double kSigma = 2.0;
    constexpr double kHMin = 0.05;
    Frame inverted(frame.h, frame.w);
    for (std::size_t i = 0; i < inverted.data.size(); ++i) inverted.data[i] = 1.0 - frame.data[i];
    Frame relief = detail::gaussian_blur(inverted, kSigma);

    Frame lifted = relief;
    for (double& v : lifted.data) v += kHMin;
    Frame suppressed = detail::reconstruct_by_erosion(std::move(lifted), relief);
    LabelMap2D labels = detail::regional_minima(suppressed);

    // Meyer-style priority flood over the smoothed relief; FIFO among equal
    // priorities keeps the result deterministic.
    using Item = std::tuple<double, std::uint64_t, int, int, std::uint32_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    std::uint64_t counter = 0;
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    auto push_neighbors = [&](int y, int x, std::uint32_t label) {
        for (int d = 0; d < 4; ++d) {
            const int ny = y + dy[d], nx = x + dx[d];
            if (ny < 0 || ny >= frame.h || nx < 0 || nx >= frame.w) continue;
            if (labels.at(ny, nx) == 0) pq.emplace(relief.at(ny, nx), counter++, ny, nx, label);
        }
    };
    for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x)
            if (labels.at(y, x) != 0) push_neighbors(y, x, labels.at(y, x));
    while (!pq.empty()) {
        auto [v, c, y, x, label] = pq.top();
        pq.pop();
        if (labels.at(y, x) != 0) continue;
        labels.at(y, x) = label;
        push_neighbors(y, x, label);
    }
    return labels;
}

/// Per pixel: the id of the highest-probability mask if that maximum clears
/// the threshold, else background. Ties go to the lowest slot index.
inline LabelMap2D masks_to_labels(const std::vector<Tensor>& masks,
                                  const std::vector<std::uint32_t>& ids, double threshold) {
    if (masks.size() != ids.size()) throw shape_error("masks_to_labels: ids do not match masks");
    if (masks.empty()) throw shape_error("masks_to_labels: no masks");
    const int h = masks[0].h, w = masks[0].w;
    for (const Tensor& m : masks)
        if (m.c != 1 || m.h != h || m.w != w)
            throw shape_error("masks_to_labels: mask shapes differ");
    LabelMap2D out(h, w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double best = -1.0;
            int best_o = -1;
            for (std::size_t o = 0; o < masks.size(); ++o) {
                const double v = masks[o].at(0, y, x);
                if (v > best) {
                    best = v;
                    best_o = static_cast<int>(o);
                }
            }
            if (best >= threshold) out.at(y, x) = ids[static_cast<std::size_t>(best_o)];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Volume inference: overlapping z-chunks chained through predicted labels.
// ---------------------------------------------------------------------------

struct InferenceConfig {
    int chunk_length = 8;
    int z_overlap = 1;
    double binarize_threshold = 0.5;
    bool discover_new_objects = false;
    int min_new_object_area = 16;

    void validate() const {
        if (chunk_length < 2) throw config_error("infer: chunk_length must be >= 2");
        if (z_overlap < 1 || z_overlap >= chunk_length)
            throw config_error("infer: need 1 <= z_overlap < chunk_length");
        if (min_new_object_area < 1) throw config_error("infer: min_new_object_area must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const InferenceConfig& c) {
    j = {{"chunk_length", c.chunk_length},
         {"z_overlap", c.z_overlap},
         {"binarize_threshold", c.binarize_threshold},
         {"discover_new_objects", c.discover_new_objects},
         {"min_new_object_area", c.min_new_object_area}};
}

inline void from_json(const nlohmann::json& j, InferenceConfig& c) {
    if (j.contains("chunk_length")) c.chunk_length = j.at("chunk_length").get<int>();
    if (j.contains("z_overlap")) c.z_overlap = j.at("z_overlap").get<int>();
    if (j.contains("binarize_threshold")) c.binarize_threshold = j.at("binarize_threshold").get<double>();
    if (j.contains("discover_new_objects"))
        c.discover_new_objects = j.at("discover_new_objects").get<bool>();
    if (j.contains("min_new_object_area"))
        c.min_new_object_area = j.at("min_new_object_area").get<int>();
}

struct InferTrace {
    std::vector<int> chunk_starts;
    std::vector<LabelMap2D> chunk_seeds;
};

/// Propagates the seed labels through the whole volume in overlapping
/// z-chunks. The first frame of the output is the seed itself; every chunk
/// after the first is seeded by the predicted labels at its overlap frame,
/// bit-exactly. With discovery enabled, watershed regions at an overlap
/// frame that the propagated set left unclaimed and that clear the area
/// floor join under fresh ids up to the slot cap.
inline LabelMap infer_volume(const Volume& vol, const std::optional<LabelMap2D>& seed,
                             const ParamStore& params, const ModelConfig& cfg,
                             const InferenceConfig& icfg, InferTrace* trace = nullptr) {
    icfg.validate();
    cfg.validate();
    LabelMap2D cur_seed = seed ? *seed : watershed2d(slice_frame(vol, 0));
    if (cur_seed.h != vol.y || cur_seed.w != vol.x)
        throw shape_error("infer_volume: seed dims do not match the volume");
    const int slots = cfg.decoder.objects_per_sequence;
    std::uint32_t next_fresh_id = 0;
    for (std::uint32_t id : cur_seed.distinct_nonzero_ids()) next_fresh_id = std::max(next_fresh_id, id);
    ++next_fresh_id;

    LabelMap out(vol.z, vol.y, vol.x, 0);
    auto write_slice = [&](int z, const LabelMap2D& m) {
        std::copy(m.data.begin(), m.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(z) * vol.y * vol.x);
    };
    write_slice(0, cur_seed);

    int start = 0;
    int filled = 1;  // frames [0, filled) are final
    while (true) {
        if (static_cast<int>(cur_seed.distinct_nonzero_ids().size()) > slots)
            std::fprintf(stderr,
                         "crs: warning: seed at frame %d carries more than %d objects; extra ids "
                         "stay background\n",
                         start, slots);
        if (trace) {
            trace->chunk_starts.push_back(start);
            trace->chunk_seeds.push_back(cur_seed);
        }
        const int length = std::min(icfg.chunk_length, vol.z - start);
        std::vector<Frame> frames;
        frames.reserve(static_cast<std::size_t>(length));
        for (int tf = 0; tf < length; ++tf) frames.push_back(slice_frame(vol, start + tf));

        Tape tape(/*grad_enabled=*/false);
        ModelBinding binding = bind_model(tape, params, cfg);
        MaskSequenceVars masks = decode_sequence(tape, binding, frames, cur_seed);

        for (int tf = 1; tf < length; ++tf) {
            const int gz = start + tf;
            if (gz < filled) continue;
            std::vector<Tensor> slot_masks;
            for (int o = 0; o < masks.bound_objects(); ++o)
                slot_masks.push_back(tape.val(masks.mask(tf, o)));
            write_slice(gz, masks_to_labels(slot_masks, masks.ids, icfg.binarize_threshold));
        }
        filled = std::max(filled, start + length);
        if (filled >= vol.z) break;

        start = filled - icfg.z_overlap;
        cur_seed = slice_labels(out, start);
        if (icfg.discover_new_objects) {
            LabelMap2D ws = watershed2d(slice_frame(vol, start));
            for (std::uint32_t region : ws.distinct_nonzero_ids()) {
                int unclaimed = 0;
                for (std::size_t i = 0; i < ws.data.size(); ++i)
                    if (ws.data[i] == region && cur_seed.data[i] == 0) ++unclaimed;
                if (unclaimed < icfg.min_new_object_area) continue;
                if (static_cast<int>(cur_seed.distinct_nonzero_ids().size()) >= slots) {
                    std::fprintf(stderr,
                                 "crs: warning: object capacity %d reached at frame %d; further "
                                 "regions stay background\n",
                                 slots, start);
                    break;
                }
                for (std::size_t i = 0; i < ws.data.size(); ++i)
                    if (ws.data[i] == region && cur_seed.data[i] == 0) cur_seed.data[i] = next_fresh_id;
                ++next_fresh_id;
            }
            write_slice(start, cur_seed);
        }
        if (cur_seed.distinct_nonzero_ids().empty()) {
            std::fprintf(stderr,
                         "crs: warning: every object vanished by frame %d; later frames stay "
                         "background\n",
                         start);
            break;
        }
    }
    return out;
}

} // namespace crs
