#pragma once
#include <string>
#include <utility>

#include "crs/params.hpp"
#include "crs/tape.hpp"

namespace crs {

/// Tape handles for one ConvLSTM cell: input-to-gate kernels, hidden-to-gate
/// kernels and biases for the i, f, o, g gates. Kernels are 3x3; there are
/// no peephole connections.
struct ConvLstmVars {
    VarId wx_i = kNoVar, wx_f = kNoVar, wx_o = kNoVar, wx_g = kNoVar;
    VarId wh_i = kNoVar, wh_f = kNoVar, wh_o = kNoVar, wh_g = kNoVar;
    VarId b_i = kNoVar, b_f = kNoVar, b_o = kNoVar, b_g = kNoVar;
};

/// i = sig(x*Wxi + h*Whi + bi), f and o likewise, g = tanh(x*Wxg + h*Whg + bg),
/// c = f.c_prev + i.g, h = o.tanh(c).
inline std::pair<VarId, VarId> convlstm_cell(Tape& t, VarId x, VarId h_prev, VarId c_prev,
                                             const ConvLstmVars& p) {
    auto gate_pre = [&](VarId wx, VarId wh, VarId b) {
        return add(t, conv2d(t, x, wx, b), conv2d(t, h_prev, wh, kNoVar));
    };
    VarId i = sigmoid(t, gate_pre(p.wx_i, p.wh_i, p.b_i));
    VarId f = sigmoid(t, gate_pre(p.wx_f, p.wh_f, p.b_f));
    VarId o = sigmoid(t, gate_pre(p.wx_o, p.wh_o, p.b_o));
    VarId g = tanh_act(t, gate_pre(p.wx_g, p.wh_g, p.b_g));
    VarId c = add(t, mul(t, f, c_prev), mul(t, i, g));
    VarId h = mul(t, o, tanh_act(t, c));
    return {h, c};
}

/// Registers the twelve tensors of one cell under `prefix`.<gate> names.
/// c_in is the input channel count, c_hid the concatenated recurrent-state
/// channel count, c_out the cell width. The forget bias starts at 1 so the
/// memory path is open before any training.
inline void register_convlstm_params(ParamStore& store, const std::string& prefix, int c_in,
                                     int c_hid, int c_out, const CounterRng& rng) {
    const int k = 3;
    auto kern = [&](const std::string& name, int cin) {
        store.add(name, uniform_kernel(c_out * cin, k, k, cin * k * k, name, rng));
    };
    for (const char* gate : {"i", "f", "o", "g"}) {
        kern(prefix + ".wx_" + gate, c_in);
        kern(prefix + ".wh_" + gate, c_hid);
        Tensor b(c_out, 1, 1, std::string(gate) == "f" ? 1.0 : 0.0);
        store.add(prefix + ".b_" + gate, std::move(b));
    }
}

/// Looks up the cell's tape handles by name.
inline ConvLstmVars convlstm_vars(const ParamStore& store, const BoundParams& bound,
                                  const std::string& prefix) {
    auto id = [&](const std::string& n) { return bound[store.index_of(n)]; };
    ConvLstmVars v;
    v.wx_i = id(prefix + ".wx_i");
    v.wx_f = id(prefix + ".wx_f");
    v.wx_o = id(prefix + ".wx_o");
    v.wx_g = id(prefix + ".wx_g");
    v.wh_i = id(prefix + ".wh_i");
    v.wh_f = id(prefix + ".wh_f");
    v.wh_o = id(prefix + ".wh_o");
    v.wh_g = id(prefix + ".wh_g");
    v.b_i = id(prefix + ".b_i");
    v.b_f = id(prefix + ".b_f");
    v.b_o = id(prefix + ".b_o");
    v.b_g = id(prefix + ".b_g");
    return v;
}

} // namespace crs
