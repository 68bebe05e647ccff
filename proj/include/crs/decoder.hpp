#pragma once
#include <array>
#include <string>
#include <vector>

#include "crs/cconvlstm.hpp"
#include "crs/encoder.hpp"
#include "crs/model.hpp"
#include "crs/voxel_store.hpp"

namespace crs {

inline Tensor onehot_mask(const LabelMap2D& m, std::uint32_t id) {
    Tensor t(1, m.h, m.w);
    for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i] == id ? 1.0 : 0.0;
    return t;
}

inline Tensor foreground_mask(const LabelMap2D& m) {
    Tensor t(1, m.h, m.w);
    for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i] != 0 ? 1.0 : 0.0;
    return t;
}

using MaskLevels = std::array<VarId, kPyramidLevels>;

/// One-hot masks of `id` at every pyramid level, built from an id-preserving
/// label pyramid (so they agree exactly with top-left downsampling of the
/// full-resolution one-hot).
inline MaskLevels constant_mask_levels(Tape& t, const std::vector<LabelMap2D>& pyr,
                                       std::uint32_t id) {
    MaskLevels out;
    for (int k = 0; k < kPyramidLevels; ++k)
        out[k] = t.constant(onehot_mask(pyr[kPyramidLevels - 1 - k], id));
    return out;
}

/// Level-resolution views of a predicted (differentiable) mask.
inline MaskLevels downsample_mask_levels(Tape& t, VarId full) {
    MaskLevels out;
    out[kPyramidLevels - 1] = full;
    for (int k = kPyramidLevels - 2; k >= 0; --k)
        out[k] = nearest_downsample2x(t, out[k + 1]);
    return out;
}

inline VarId mask_head(Tape& t, const ModelBinding& m, VarId h_finest) {
    return sigmoid(t, conv2d(t, h_finest, m.id("head.w"), m.id("head.b")));
}

/// Soft union 1 - prod(1 - m_o) of the given masks; exact set union on
/// binary inputs, smooth on soft ones.
inline VarId soft_union(Tape& t, const std::vector<VarId>& masks) {
    VarId prod = kNoVar;
    for (VarId m : masks) {
        VarId inv = affine(t, m, -1.0, 1.0);
        prod = prod == kNoVar ? inv : mul(t, prod, inv);
    }
    return affine(t, prod, -1.0, 1.0);
}

/// Forward-direction pass of one object at one frame: chains the levels from
/// deepest to finest, updating the forward spatial/temporal states, and
/// fuses per mode (with a zero stand-in for the backward part, which does
/// not exist yet during the forward sweep). Returns the finest fused state;
/// raw forward hidden states per level land in h_fwd_out for the final fuse.
inline VarId forward_object_step(Tape& t, const ModelBinding& m, const PyramidVars& proj, int o,
                                 StateBank& bank, const MaskLevels& prev_mask,
                                 std::vector<VarId>* h_fwd_out) {
    const ConsistencyMode mode = m.cfg->decoder.mode;
    VarId below = kNoVar;
    for (int k = 0; k < bank.levels; ++k) {
        VarId x = build_input(t, below, proj.level[k], prev_mask[k]);
        DirStateVar step =
            directional_step(t, x, bank.spatial_fwd[k], bank.temporal_fwd[bank.at(k, o)],
                             m.cell(k, false));
        bank.spatial_fwd[k] = step;
        bank.temporal_fwd[bank.at(k, o)] = step;
        if (h_fwd_out) (*h_fwd_out)[k] = step.h;
        VarId fused = fuse(t, step.h, mode_has_backward(mode) ? bank.zero_state[k] : kNoVar,
                           mode_has_reference(mode) ? bank.reference[bank.at(k, o)] : kNoVar,
                           m.fuse_w(k), m.fuse_b(k), mode);
        below = fused;
    }
    return below;
}

/// Backward-direction pass of one object at one frame (frames visited in
/// reverse order): the level chain feeds on the final fused states, and the
/// fuse combines the stored forward hidden state, the fresh backward one and
/// the reference skip. Returns the finest final fused state.
inline VarId backward_object_step(Tape& t, const ModelBinding& m, const PyramidVars& proj, int o,
                                  StateBank& bank, const MaskLevels& prev_mask,
                                  const std::vector<VarId>& h_fwd_saved) {
    const ConsistencyMode mode = m.cfg->decoder.mode;
    VarId below = kNoVar;
    for (int k = 0; k < bank.levels; ++k) {
        VarId x = build_input(t, below, proj.level[k], prev_mask[k]);
        DirStateVar step =
            directional_step(t, x, bank.spatial_bwd[k], bank.temporal_bwd[bank.at(k, o)],
                             m.cell(k, true));
        bank.spatial_bwd[k] = step;
        bank.temporal_bwd[bank.at(k, o)] = step;
        VarId fused = fuse(t, h_fwd_saved[k], step.h,
                           mode_has_reference(mode) ? bank.reference[bank.at(k, o)] : kNoVar,
                           m.fuse_w(k), m.fuse_b(k), mode);
        below = fused;
    }
    return below;
}

/// One (frame, object) decode step against a primed bank: level chain,
/// directional step(s), fuse, mask head. For modes with a backward branch
/// the returned mask is the forward sweep's provisional estimate that
/// decode_sequence later finalizes.
inline VarId decode_object_frame(Tape& t, const ModelBinding& m, const PyramidVars& proj, int o,
                                 StateBank& bank, const MaskLevels& prev_mask,
                                 std::vector<VarId>* h_fwd_out = nullptr) {
    if (!bank.primed) throw state_error("decode_object_frame: bank has no reference states");
    std::vector<VarId> scratch(static_cast<std::size_t>(bank.levels), kNoVar);
    std::vector<VarId>* sink = h_fwd_out ? h_fwd_out : &scratch;
    VarId finest = forward_object_step(t, m, proj, o, bank, prev_mask, sink);
    return mask_head(t, m, finest);
}

struct DecodeOptions {
    bool teacher_forcing = false;
    /// Ground-truth label slices per frame; required when teacher_forcing.
    const std::vector<LabelMap2D>* gt_labels = nullptr;
};

struct DecodeTelemetry {
    /// Mask-channel source per frame of each sweep: "reference",
    /// "ground_truth" or "self".
    std::vector<std::string> forward_sources;
    std::vector<std::string> backward_sources;
    /// True when the spatial state consumed by the first object of every
    /// frame was the zero matrix.
    bool spatial_zero_ok = true;
};

/// Predicted soft masks for every (frame, slot). Slots beyond the bound
/// object count hold exact zero masks so every frame carries the same
/// constant number of entries.
struct MaskSequenceVars {
    int frames = 0;
    int slots = 0;
    std::vector<VarId> masks;        // [t * slots + o]
    std::vector<std::uint32_t> ids;  // ascending reference ids, one per bound slot

    [[nodiscard]] VarId mask(int t, int o) const {
        return masks[static_cast<std::size_t>(t) * slots + o];
    }
    [[nodiscard]] int bound_objects() const { return static_cast<int>(ids.size()); }
};

/// Full sequence decode: prime on the reference frame, forward sweep over
/// frames with objects in ascending-id order, optional backward sweep with
/// mask feedback from the forward sweep's provisional predictions, final
/// fuse per mode. The mask channel at the reference frame is the one-hot
/// reference mask; later frames use ground truth under teacher forcing and
/// the model's own previous-frame prediction otherwise.
inline MaskSequenceVars decode_sequence(Tape& t, const ModelBinding& m,
                                        const std::vector<Frame>& frames,
                                        const LabelMap2D& reference,
                                        const DecodeOptions& opt = {},
                                        DecodeTelemetry* telemetry = nullptr) {
    const DecoderConfig& dec = m.cfg->decoder;
    const ConsistencyMode mode = dec.mode;
    if (frames.empty()) throw shape_error("decode_sequence: no frames");
    const int N = static_cast<int>(frames.size());
    const int H = frames[0].h, W = frames[0].w;
    for (const Frame& f : frames)
        if (f.h != H || f.w != W) throw shape_error("decode_sequence: frame dims differ");
    if (reference.h != H || reference.w != W)
        throw shape_error("decode_sequence: reference dims do not match frames");
    if (opt.teacher_forcing &&
        (!opt.gt_labels || static_cast<int>(opt.gt_labels->size()) != N))
        throw state_error("decode_sequence: teacher forcing needs one label slice per frame");

    auto ids = reference.distinct_nonzero_ids();
    if (ids.empty()) throw seed_error("decode_sequence: reference frame has no objects");
    const int slots = dec.objects_per_sequence;
    if (static_cast<int>(ids.size()) > slots) ids.resize(static_cast<std::size_t>(slots));
    const int bound = static_cast<int>(ids.size());

    // Per-level one-hot reference masks, via the id-preserving label pyramid.
    const auto ref_pyr = label_pyramid(reference, kPyramidLevels);
    std::vector<std::vector<VarId>> ref_masks(static_cast<std::size_t>(bound));
    for (int o = 0; o < bound; ++o) {
        auto lv = constant_mask_levels(t, ref_pyr, ids[o]);
        ref_masks[o].assign(lv.begin(), lv.end());
    }

    // Ground-truth pyramids are shared between sweeps; built on demand.
    std::vector<std::vector<LabelMap2D>> gt_pyr;
    if (opt.teacher_forcing) {
        gt_pyr.reserve(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) gt_pyr.push_back(label_pyramid((*opt.gt_labels)[i], kPyramidLevels));
    }

    StateBank bank = StateBank::make(t, dec.levels, bound, dec.hidden_width, H, W);

    // Reference-frame pyramid doubles for priming and for the t = 0 step.
    VarId ref_fg = t.constant(foreground_mask(reference));
    VarId input0 =
        t.constant(make_encoder_input(frames[0], t.val(ref_fg), m.cfg->encoder.input_channels));
    PyramidVars pyr0 = project(t, m, encode(t, m, input0));
    prime_reference(t, m, pyr0, ref_masks, bank);

    std::vector<PyramidVars> pyramids(static_cast<std::size_t>(N));
    pyramids[0] = pyr0;

    if (telemetry) {
        telemetry->forward_sources.clear();
        telemetry->backward_sources.clear();
        telemetry->spatial_zero_ok = true;
    }

    // Forward sweep.
    std::vector<VarId> prov(static_cast<std::size_t>(N) * bound, kNoVar);
    std::vector<std::vector<VarId>> h_fwd(
        static_cast<std::size_t>(N) * bound,
        std::vector<VarId>(static_cast<std::size_t>(dec.levels), kNoVar));
    for (int tf = 0; tf < N; ++tf) {
        std::string source;
        if (tf == 0) {
            source = "reference";
        } else if (opt.teacher_forcing) {
            source = "ground_truth";
            VarId est = t.constant(foreground_mask((*opt.gt_labels)[tf - 1]));
            VarId in = t.constant(
                make_encoder_input(frames[tf], t.val(est), m.cfg->encoder.input_channels));
            pyramids[tf] = project(t, m, encode(t, m, in));
        } else {
            source = "self";
            std::vector<VarId> prev;
            for (int o = 0; o < bound; ++o) prev.push_back(prov[(tf - 1) * bound + o]);
            VarId est = soft_union(t, prev);
            // The frame itself is constant; the estimate channel is live, so
            // the input concatenates a constant intensity block with it.
            Tensor img(m.cfg->encoder.input_channels - 1, H, W);
            for (int c = 0; c < img.c; ++c)
                std::copy(frames[tf].data.begin(), frames[tf].data.end(), img.channel(c));
            VarId in = concat_channels(t, {t.constant(std::move(img)), est});
            pyramids[tf] = project(t, m, encode(t, m, in));
        }
        if (telemetry) telemetry->forward_sources.push_back(source);

        bank.reset_spatial(false);
        for (int o = 0; o < bound; ++o) {
            if (telemetry && o == 0) {
                for (int k = 0; k < bank.levels; ++k)
                    if (t.val(bank.spatial_fwd[k].h).max_abs() != 0.0)
                        telemetry->spatial_zero_ok = false;
            }
            MaskLevels prev_mask;
            if (tf == 0) {
                std::copy(ref_masks[o].begin(), ref_masks[o].end(), prev_mask.begin());
            } else if (opt.teacher_forcing) {
                prev_mask = constant_mask_levels(t, gt_pyr[tf - 1], ids[o]);
            } else {
                prev_mask = downsample_mask_levels(t, prov[(tf - 1) * bound + o]);
            }
            VarId finest =
                forward_object_step(t, m, pyramids[tf], o, bank, prev_mask, &h_fwd[tf * bound + o]);
            prov[tf * bound + o] = mask_head(t, m, finest);
        }
    }

    // Backward sweep and final fuse for modes with a local-consistency branch.
    std::vector<VarId> final_masks = prov;
    if (mode_has_backward(mode)) {
        for (int tf = N - 1; tf >= 0; --tf) {
            std::string source;
            bank.reset_spatial(true);
            for (int o = 0; o < bound; ++o) {
                if (telemetry && o == 0) {
                    for (int k = 0; k < bank.levels; ++k)
                        if (t.val(bank.spatial_bwd[k].h).max_abs() != 0.0)
                            telemetry->spatial_zero_ok = false;
                }
                MaskLevels prev_mask;
                if (opt.teacher_forcing) {
                    source = "ground_truth";
                    prev_mask = constant_mask_levels(t, gt_pyr[std::min(tf + 1, N - 1)], ids[o]);
                } else {
                    source = "self";
                    prev_mask =
                        downsample_mask_levels(t, prov[std::min(tf + 1, N - 1) * bound + o]);
                }
                VarId finest = backward_object_step(t, m, pyramids[tf], o, bank, prev_mask,
                                                    h_fwd[tf * bound + o]);
                final_masks[tf * bound + o] = mask_head(t, m, finest);
            }
            if (telemetry) telemetry->backward_sources.push_back(source);
        }
    }

    // Assemble the constant-M output; padded slots are exact zero masks.
    MaskSequenceVars out;
    out.frames = N;
    out.slots = slots;
    out.ids = ids;
    out.masks.assign(static_cast<std::size_t>(N) * slots, kNoVar);
    VarId zero_mask = bound < slots ? t.constant(Tensor(1, H, W)) : kNoVar;
    for (int tf = 0; tf < N; ++tf)
        for (int o = 0; o < slots; ++o)
            out.masks[static_cast<std::size_t>(tf) * slots + o] =
                o < bound ? final_masks[tf * bound + o] : zero_mask;
    return out;
}

} // namespace crs
