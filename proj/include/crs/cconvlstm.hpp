#pragma once
#include <vector>

#include "crs/encoder.hpp"
#include "crs/model.hpp"

namespace crs {

/// Hidden/cell state pair of one recurrence direction. The cell memory is
/// carried along the temporal axis only; a spatial predecessor contributes
/// through its hidden map alone.
struct DirStateVar {
    VarId h = kNoVar;
    VarId c = kNoVar;
};

/// Recurrent state of one sequence decode: per (level, object) temporal
/// states for each direction, per-level spatial chain states that reset at
/// the first object of every frame, and the frozen per-object reference
/// states h_ref written once by prime_reference.
struct StateBank {
    int levels = 0;
    int objects = 0;
    std::vector<DirStateVar> temporal_fwd, temporal_bwd;  // [k * objects + o]
    std::vector<DirStateVar> spatial_fwd, spatial_bwd;    // [k]
    std::vector<VarId> reference;                         // [k * objects + o]
    std::vector<VarId> zero_state;                        // [k], shared zero map
    bool primed = false;

    static StateBank make(Tape& t, int levels, int objects, int hidden, int frame_h, int frame_w) {
        StateBank b;
        b.levels = levels;
        b.objects = objects;
        b.zero_state.resize(static_cast<std::size_t>(levels));
        for (int k = 0; k < levels; ++k)
            b.zero_state[k] =
                t.constant(Tensor(hidden, frame_h / level_stride(k), frame_w / level_stride(k)));
        b.temporal_fwd.assign(static_cast<std::size_t>(levels) * objects, DirStateVar{});
        b.temporal_bwd.assign(static_cast<std::size_t>(levels) * objects, DirStateVar{});
        for (int k = 0; k < levels; ++k)
            for (int o = 0; o < objects; ++o) {
                b.temporal_fwd[b.at(k, o)] = {b.zero_state[k], b.zero_state[k]};
                b.temporal_bwd[b.at(k, o)] = {b.zero_state[k], b.zero_state[k]};
            }
        b.spatial_fwd.assign(static_cast<std::size_t>(levels), DirStateVar{});
        b.spatial_bwd.assign(static_cast<std::size_t>(levels), DirStateVar{});
        b.reference.assign(static_cast<std::size_t>(levels) * objects, kNoVar);
        return b;
    }

    [[nodiscard]] std::size_t at(int k, int o) const {
        return static_cast<std::size_t>(k) * objects + o;
    }

    /// Spatial chains restart from the zero matrix at the first object of
    /// every frame.
    void reset_spatial(bool backward) {
        auto& chain = backward ? spatial_bwd : spatial_fwd;
        for (int k = 0; k < levels; ++k) chain[k] = {zero_state[k], zero_state[k]};
    }
};

/// h_input = [upsample2x(h_below) | f_proj | prev_mask]; the first part is
/// omitted at the deepest level. f_proj and prev_mask must already sit at
/// the level's resolution.
inline VarId build_input(Tape& t, VarId h_below, VarId f_proj, VarId prev_mask) {
    const int fh = t.val(f_proj).h, fw = t.val(f_proj).w;
    const Tensor& mk = t.val(prev_mask);
    if (mk.c != 1 || mk.h != fh || mk.w != fw)
        throw shape_error("build_input: mask " + mk.shape_str() + " vs features " +
                          t.val(f_proj).shape_str());
    if (h_below == kNoVar) return concat_channels(t, {f_proj, prev_mask});
    VarId up = bilinear_upsample2x(t, h_below);
    if (t.val(up).h != fh || t.val(up).w != fw)
        throw shape_error("build_input: upsampled state " + t.val(up).shape_str() + " vs features " +
                          t.val(f_proj).shape_str());
    return concat_channels(t, {up, f_proj, prev_mask});
}

/// One ConvLSTM step of a single direction. The recurrent hidden input is
/// the channel concatenation [spatial.h | temporal.h]; the cell memory comes
/// from the temporal predecessor.
inline DirStateVar directional_step(Tape& t, VarId h_input, const DirStateVar& spatial,
                                    const DirStateVar& temporal, const ConvLstmVars& params) {
    VarId h_prev = concat_channels(t, {spatial.h, temporal.h});
    auto [h, c] = convlstm_cell(t, h_input, h_prev, temporal.c, params);
    return {h, c};
}

/// h_out = tanh(conv3x3([h_fwd | h_bwd? | h_ref?])) with the parts selected
/// by the mode; the kernel's input channels are laid out in that fixed
/// order, so zeroing the h_bwd slice of an STC kernel reproduces STN, and
/// likewise STL reduces to ST.
inline VarId fuse(Tape& t, VarId h_fwd, VarId h_bwd, VarId h_ref, VarId fuse_w, VarId fuse_b,
                  ConsistencyMode mode) {
    std::vector<VarId> parts{h_fwd};
    if (mode_has_backward(mode)) {
        if (h_bwd == kNoVar) throw mode_error(to_string(mode) + " fuse needs a backward state");
        parts.push_back(h_bwd);
    }
    if (mode_has_reference(mode)) {
        if (h_ref == kNoVar) throw mode_error(to_string(mode) + " fuse needs a reference state");
        parts.push_back(h_ref);
    }
    VarId cat = parts.size() == 1 ? parts[0] : concat_channels(t, std::span<const VarId>(parts));
    return tanh_act(t, conv2d(t, cat, fuse_w, fuse_b));
}

/// Runs the forward-direction decoder pass over the reference frame with
/// zero temporal states, the one-hot reference masks as the mask channel and
/// the reference-skip input replaced by zeros, then freezes the fused
/// outputs h_ref[k][o] into the bank. `ref_mask[o][k]` are the per-level
/// one-hot reference masks (1, H_k, W_k).
inline void prime_reference(Tape& t, const ModelBinding& m, const PyramidVars& proj_ref,
                            const std::vector<std::vector<VarId>>& ref_mask, StateBank& bank) {
    const ConsistencyMode mode = m.cfg->decoder.mode;
    if (static_cast<int>(ref_mask.size()) != bank.objects)
        throw state_error("prime_reference: mask list does not match object count");
    for (int o = 0; o < bank.objects; ++o) {
        const Tensor& full = t.val(ref_mask[o][kPyramidLevels - 1]);
        if (full.max_abs() == 0.0)
            throw seed_error("object " + std::to_string(o) + " is absent from the reference frame");
    }
    std::vector<DirStateVar> spatial(static_cast<std::size_t>(bank.levels));
    for (int k = 0; k < bank.levels; ++k) spatial[k] = {bank.zero_state[k], bank.zero_state[k]};
    for (int o = 0; o < bank.objects; ++o) {
        VarId below = kNoVar;
        for (int k = 0; k < bank.levels; ++k) {
            VarId x = build_input(t, below, proj_ref.level[k], ref_mask[o][k]);
            DirStateVar zero{bank.zero_state[k], bank.zero_state[k]};
            DirStateVar step = directional_step(t, x, spatial[k], zero, m.cell(k, false));
            spatial[k] = step;
            VarId fused = fuse(t, step.h, mode_has_backward(mode) ? bank.zero_state[k] : kNoVar,
                               mode_has_reference(mode) ? bank.zero_state[k] : kNoVar, m.fuse_w(k),
                               m.fuse_b(k), mode);
            bank.reference[bank.at(k, o)] = fused;
            below = fused;
        }
    }
    bank.primed = true;
}

} // namespace crs
