#pragma once
#include <array>
#include <string>

#include "crs/model.hpp"
#include "crs/tape.hpp"
#include "crs/voxel_store.hpp"

namespace crs {

/// Five feature maps at strides 16, 8, 4, 2, 1 relative to the frame;
/// index 0 is the deepest level.
struct PyramidVars {
    std::array<VarId, kPyramidLevels> level{kNoVar, kNoVar, kNoVar, kNoVar, kNoVar};
};

/// Stacks (input_channels - 1) copies of the intensity frame and one
/// estimate channel into the encoder input tensor.
inline Tensor make_encoder_input(const Frame& frame, const Tensor& estimate, int input_channels) {
    if (estimate.c != 1 || estimate.h != frame.h || estimate.w != frame.w)
        throw shape_error("encoder input: estimate channel " + estimate.shape_str() +
                          " does not match frame (" + std::to_string(frame.h) + "," +
                          std::to_string(frame.w) + ")");
    Tensor in(input_channels, frame.h, frame.w);
    for (int c = 0; c < input_channels - 1; ++c)
        std::copy(frame.data.begin(), frame.data.end(), in.channel(c));
    std::copy(estimate.data.begin(), estimate.data.end(), in.channel(input_channels - 1));
    return in;
}

/// Feed-forward pyramid extraction: per level two 3x3 convolutions with
/// pointwise ReLU, stride 2 on the first convolution of every level below
/// the stride-1 top. Spatial dims must be divisible by 16.
inline PyramidVars encode(Tape& t, const ModelBinding& m, VarId input) {
    const int xh = t.val(input).h, xw = t.val(input).w;
    if (xh % 16 != 0 || xw % 16 != 0)
        throw shape_error("encode: frame dims must be divisible by 16, got " +
                          t.val(input).shape_str());
    if (t.val(input).c != m.cfg->encoder.input_channels)
        throw shape_error("encode: expected " + std::to_string(m.cfg->encoder.input_channels) +
                          " input channels, got " + t.val(input).shape_str());
    PyramidVars pyr;
    VarId cur = input;
    for (int k = kPyramidLevels - 1; k >= 0; --k) {
        const std::string p = "enc.l" + std::to_string(k);
        const int stride = k == kPyramidLevels - 1 ? 1 : 2;
        cur = relu(t, conv2d(t, cur, m.id(p + ".c1.w"), m.id(p + ".c1.b"), stride));
        cur = relu(t, conv2d(t, cur, m.id(p + ".c2.w"), m.id(p + ".c2.b")));
        pyr.level[k] = cur;
    }
    // Stride contract: level k sits at stride 2^(4-k).
    for (int k = 0; k < kPyramidLevels; ++k) {
        const Tensor& f = t.val(pyr.level[k]);
        if (f.h * level_stride(k) != xh || f.w * level_stride(k) != xw)
            throw shape_error("encode: level " + std::to_string(k) + " stride broken: " +
                              f.shape_str());
    }
    return pyr;
}

/// 1x1 projection of each level to the decoder width.
inline PyramidVars project(Tape& t, const ModelBinding& m, const PyramidVars& f) {
    PyramidVars out;
    for (int k = 0; k < kPyramidLevels; ++k) {
        const std::string p = "proj.l" + std::to_string(k);
        out.level[k] = conv2d(t, f.level[k], m.id(p + ".w"), m.id(p + ".b"));
    }
    return out;
}

} // namespace crs
