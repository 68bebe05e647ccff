#pragma once
#include <array>
#include <string>
#include <vector>

#include "json.hpp"

#include "crs/convlstm.hpp"
#include "crs/params.hpp"

namespace crs {

/// Which consistency terms the fuse step combines on top of the forward
/// recurrence: ST = none, STL = the backward direction, STN = the frozen
/// reference hidden state, STC = both.
enum class ConsistencyMode { ST, STL, STN, STC };

inline std::string to_string(ConsistencyMode m) {
    switch (m) {
        case ConsistencyMode::ST: return "ST";
        case ConsistencyMode::STL: return "STL";
        case ConsistencyMode::STN: return "STN";
        case ConsistencyMode::STC: return "STC";
    }
    return "?";
}

inline ConsistencyMode parse_mode(const std::string& s) {
    if (s == "ST") return ConsistencyMode::ST;
    if (s == "STL") return ConsistencyMode::STL;
    if (s == "STN") return ConsistencyMode::STN;
    if (s == "STC") return ConsistencyMode::STC;
    throw mode_error("unknown consistency mode '" + s + "' (expected ST, STL, STN or STC)");
}

inline bool mode_has_backward(ConsistencyMode m) {
    return m == ConsistencyMode::STL || m == ConsistencyMode::STC;
}

inline bool mode_has_reference(ConsistencyMode m) {
    return m == ConsistencyMode::STN || m == ConsistencyMode::STC;
}

/// Channel parts of the fuse kernel, always in [fwd | bwd | ref] order.
inline int fuse_part_count(ConsistencyMode m) {
    return 1 + (mode_has_backward(m) ? 1 : 0) + (mode_has_reference(m) ? 1 : 0);
}

inline constexpr int kPyramidLevels = 5;
/// Stride of pyramid level k relative to the frame; level 0 is the deepest.
inline constexpr int level_stride(int k) { return 1 << (kPyramidLevels - 1 - k); }

struct EncoderConfig {
    std::vector<int> widths = {64, 48, 32, 16, 8};  // level 0 (deepest) .. level 4 (stride 1)
    int input_channels = 2;                         // replicated intensity + one estimate channel

    void validate() const {
        if (widths.size() != kPyramidLevels)
            throw config_error("encoder: widths must list " + std::to_string(kPyramidLevels) +
                               " levels");
        for (int w : widths)
            if (w < 1) throw config_error("encoder: widths must be >= 1");
        if (input_channels < 2) throw config_error("encoder: input_channels must be >= 2");
    }
};

struct DecoderConfig {
    int levels = kPyramidLevels;
    int hidden_width = 16;        // channels of every recurrent state
    int objects_per_sequence = 8; // constant slot count M per sequence
    int sequence_length = 8;      // frames per chunk
    ConsistencyMode mode = ConsistencyMode::STC;

    void validate() const {
        if (levels != kPyramidLevels)
            throw config_error("decoder: levels is pinned to the pyramid depth " +
                               std::to_string(kPyramidLevels));
        if (hidden_width < 1) throw config_error("decoder: hidden_width must be >= 1");
        if (objects_per_sequence < 1) throw config_error("decoder: objects_per_sequence must be >= 1");
        if (sequence_length < 1) throw config_error("decoder: sequence_length must be >= 1");
    }
};

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;

    void validate() const {
        encoder.validate();
        decoder.validate();
    }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"widths", c.widths}, {"input_channels", c.input_channels}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<int>>();
    if (j.contains("input_channels")) c.input_channels = j.at("input_channels").get<int>();
}

inline void to_json(nlohmann::json& j, const DecoderConfig& c) {
    j = {{"levels", c.levels},
         {"hidden_width", c.hidden_width},
         {"objects_per_sequence", c.objects_per_sequence},
         {"sequence_length", c.sequence_length},
         {"consistency_mode", to_string(c.mode)}};
}

inline void from_json(const nlohmann::json& j, DecoderConfig& c) {
    if (j.contains("levels")) c.levels = j.at("levels").get<int>();
    if (j.contains("hidden_width")) c.hidden_width = j.at("hidden_width").get<int>();
    if (j.contains("objects_per_sequence"))
        c.objects_per_sequence = j.at("objects_per_sequence").get<int>();
    if (j.contains("sequence_length")) c.sequence_length = j.at("sequence_length").get<int>();
    if (j.contains("consistency_mode")) c.mode = parse_mode(j.at("consistency_mode").get<std::string>());
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"encoder", c.encoder}, {"decoder", c.decoder}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
    if (j.contains("decoder")) j.at("decoder").get_to(c.decoder);
}

// ---------------------------------------------------------------------------
// Parameter registration. Names are stable; the checkpoint order is the
// registration order below.
// ---------------------------------------------------------------------------

/// Cell input channels at level k: projected features plus the mask channel,
/// plus the upsampled fused state from the level below everywhere but the
/// deepest level.
inline int cell_input_channels(const DecoderConfig& dec, int k) {
    return (k == 0 ? 0 : dec.hidden_width) + dec.hidden_width + 1;
}

inline ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore store;
    CounterRng rng(seed, 0x9A11);
    const auto& enc = cfg.encoder;
    const auto& dec = cfg.decoder;

    // Encoder: two 3x3 convs per level, stride 2 on the first conv of every
    // level below the stride-1 top. Registered finest-first to follow the
    // forward pass.
    for (int k = kPyramidLevels - 1; k >= 0; --k) {
        const int c_in = k == kPyramidLevels - 1 ? enc.input_channels : enc.widths[k + 1];
        const int c_out = enc.widths[k];
        const std::string p = "enc.l" + std::to_string(k);
        store.add(p + ".c1.w", uniform_kernel(c_out * c_in, 3, 3, c_in * 9, p + ".c1.w", rng));
        store.add(p + ".c1.b", Tensor(c_out, 1, 1));
        store.add(p + ".c2.w", uniform_kernel(c_out * c_out, 3, 3, c_out * 9, p + ".c2.w", rng));
        store.add(p + ".c2.b", Tensor(c_out, 1, 1));
    }
    // Per-level 1x1 projection to the decoder width.
    for (int k = 0; k < kPyramidLevels; ++k) {
        const std::string p = "proj.l" + std::to_string(k);
        store.add(p + ".w",
                  uniform_kernel(dec.hidden_width * enc.widths[k], 1, 1, enc.widths[k], p + ".w", rng));
        store.add(p + ".b", Tensor(dec.hidden_width, 1, 1));
    }
    // Recurrent cells: separate parameters per level and per direction. The
    // recurrent input is the concatenated spatial|temporal hidden state.
    for (int k = 0; k < kPyramidLevels; ++k) {
        register_convlstm_params(store, "dec.l" + std::to_string(k) + ".f", cell_input_channels(dec, k),
                                 2 * dec.hidden_width, dec.hidden_width, rng);
        if (mode_has_backward(dec.mode))
            register_convlstm_params(store, "dec.l" + std::to_string(k) + ".b",
                                     cell_input_channels(dec, k), 2 * dec.hidden_width,
                                     dec.hidden_width, rng);
    }
    // Fuse: one 3x3 conv over the concatenated [fwd | bwd | ref] parts.
    const int fuse_in = fuse_part_count(dec.mode) * dec.hidden_width;
    for (int k = 0; k < kPyramidLevels; ++k) {
        const std::string p = "fuse.l" + std::to_string(k);
        store.add(p + ".w",
                  uniform_kernel(dec.hidden_width * fuse_in, 3, 3, fuse_in * 9, p + ".w", rng));
        store.add(p + ".b", Tensor(dec.hidden_width, 1, 1));
    }
    // Mask head: 1x1 conv to one channel plus logistic, applied at the
    // finest level only.
    store.add("head.w", uniform_kernel(dec.hidden_width, 1, 1, dec.hidden_width, "head.w", rng));
    store.add("head.b", Tensor(1, 1, 1));
    return store;
}

/// Per-tape lookup table for the model parameters.
struct ModelBinding {
    const ModelConfig* cfg = nullptr;
    const ParamStore* store = nullptr;
    BoundParams bound;

    [[nodiscard]] VarId id(const std::string& name) const { return bound[store->index_of(name)]; }
    [[nodiscard]] ConvLstmVars cell(int level, bool backward) const {
        return convlstm_vars(*store, bound,
                             "dec.l" + std::to_string(level) + (backward ? ".b" : ".f"));
    }
    [[nodiscard]] VarId fuse_w(int level) const { return id("fuse.l" + std::to_string(level) + ".w"); }
    [[nodiscard]] VarId fuse_b(int level) const { return id("fuse.l" + std::to_string(level) + ".b"); }
};

inline ModelBinding bind_model(Tape& tape, const ParamStore& store, const ModelConfig& cfg) {
    ModelBinding b;
    b.cfg = &cfg;
    b.store = &store;
    b.bound = bind_params(tape, store);
    return b;
}

/// Re-targets a parameter set to a narrower consistency mode by slicing the
/// fuse kernels down to the [fwd | bwd? | ref?] parts the target keeps.
/// Works whenever the target's parts are a subset of the source's (any mode
/// from STC, ST from every mode); everything else is a mode error.
inline ParamStore restrict_to_mode(const ParamStore& store, const ModelConfig& from,
                                   ConsistencyMode to) {
    const ConsistencyMode src = from.decoder.mode;
    if (to == src) {
        ParamStore copy;
        for (std::size_t i = 0; i < store.size(); ++i)
            copy.add(store[static_cast<int>(i)].name, store[static_cast<int>(i)].value);
        return copy;
    }
    if ((mode_has_backward(to) && !mode_has_backward(src)) ||
        (mode_has_reference(to) && !mode_has_reference(src)))
        throw mode_error("checkpoint trained as " + to_string(src) + " cannot run as " +
                         to_string(to));
    const int c = from.decoder.hidden_width;
    // part channel offsets inside the source fuse kernel
    std::vector<int> part_offsets;  // offsets of the parts the target keeps
    part_offsets.push_back(0);      // fwd
    if (mode_has_backward(to)) part_offsets.push_back(c);
    if (mode_has_reference(to)) part_offsets.push_back(mode_has_backward(src) ? 2 * c : c);
    const int src_in = fuse_part_count(src) * c;
    const int dst_in = fuse_part_count(to) * c;

    ParamStore out;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store[static_cast<int>(i)];
        if (e.name.rfind("fuse.", 0) == 0 && e.name.size() > 2 &&
            e.name.compare(e.name.size() - 2, 2, ".w") == 0) {
            Tensor sliced(c * dst_in, e.value.h, e.value.w);
            for (int co = 0; co < c; ++co) {
                int dst_ci = 0;
                for (int off : part_offsets)
                    for (int ci = 0; ci < c; ++ci, ++dst_ci)
                        std::copy(e.value.channel(co * src_in + off + ci),
                                  e.value.channel(co * src_in + off + ci) + e.value.h * e.value.w,
                                  sliced.channel(co * dst_in + dst_ci));
            }
            out.add(e.name, std::move(sliced));
        } else {
            out.add(e.name, e.value);
        }
    }
    return out;
}

} // namespace crs
