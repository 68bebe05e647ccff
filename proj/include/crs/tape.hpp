#pragma once
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "crs/kernels.hpp"
#include "crs/tensor.hpp"

namespace crs {

using VarId = std::int32_t;
inline constexpr VarId kNoVar = -1;

/// Reverse-accumulation tape over Tensor values. Nodes are appended in
/// execution order, so the tape is already topologically sorted and
/// backward() is a single reverse walk. With gradients disabled the tape
/// only stores forward values, which keeps inference cheap.
///
/// Memory contract: backward() releases interior values and gradients as it
/// consumes them; read op outputs before calling backward(), and read leaf
/// gradients (parameters) after.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }
    [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }

    /// Value that never receives a gradient (inputs, ground truth, zeros).
    VarId constant(Tensor v) {
        nodes_.push_back(Node{std::move(v), Tensor{}, {}, nullptr, false});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    /// Differentiable leaf (a parameter). Gradient survives backward().
    VarId leaf(Tensor v) {
        nodes_.push_back(Node{std::move(v), Tensor{}, {}, nullptr, grad_enabled_});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    [[nodiscard]] const Tensor& val(VarId id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(VarId id) const { return nodes_[id].requires_grad; }

    /// Gradient of a leaf after backward(); zero tensor if nothing flowed.
    [[nodiscard]] Tensor grad_of(VarId id) const {
        const Node& n = nodes_[id];
        if (n.grad.size() == 0) return Tensor(n.value.c, n.value.h, n.value.w);
        return n.grad;
    }

    /// Seeds d(root)/d(root) = 1 and pulls gradients back to every leaf.
    /// `root` must be scalar-shaped.
    void backward(VarId root) {
        if (!grad_enabled_) throw state_error("tape: backward() on a gradient-disabled tape");
        if (nodes_[root].value.size() != 1)
            throw shape_error("tape: backward root must be scalar, got " + nodes_[root].value.shape_str());
        if (!nodes_[root].requires_grad) return;
        grad_slot(root)->data[0] = 1.0;
        for (VarId i = root; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.backward) continue;  // leaf or constant
            if (n.grad.size() != 0 && n.requires_grad) n.backward(*this, i);
            // Interior values and grads are dead from here on.
            n.grad = Tensor{};
            n.value = Tensor{};
        }
    }

    // ------------------------------------------------------------------
    // Used by op implementations.
    // ------------------------------------------------------------------

    using BackwardFn = std::function<void(Tape&, VarId)>;

    VarId push(Tensor value, std::vector<VarId> parents, BackwardFn fn) {
        bool req = false;
        if (grad_enabled_) {
            for (VarId p : parents)
                if (p != kNoVar && nodes_[p].requires_grad) req = true;
        }
        if (!req) {
            nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr, false});
        } else {
            nodes_.push_back(Node{std::move(value), Tensor{}, std::move(parents), std::move(fn), true});
        }
        return static_cast<VarId>(nodes_.size() - 1);
    }

    /// Gradient accumulation target for `id`, or nullptr if grads do not
    /// flow there. Allocates a zero tensor on first use.
    Tensor* grad_slot(VarId id) {
        if (id == kNoVar) return nullptr;
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.size() == 0) n.grad = Tensor(n.value.c, n.value.h, n.value.w);
        return &n.grad;
    }

    [[nodiscard]] const Tensor& grad_ref(VarId id) const { return nodes_[id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<VarId> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    // deque: references returned by val()/grad_ref() stay valid while nodes
    // are appended, which op implementations rely on
    std::deque<Node> nodes_;
    bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Ops. Each returns the id of a freshly pushed node.
// ---------------------------------------------------------------------------

inline VarId conv2d(Tape& t, VarId x, VarId w, VarId b, int stride = 1) {
    Tensor out = conv2d_fwd(t.val(x), t.val(w), b == kNoVar ? nullptr : &t.val(b), stride);
    return t.push(std::move(out), {x, w, b}, [x, w, b, stride](Tape& tp, VarId self) {
        const Tensor& gout = tp.grad_ref(self);
        conv2d_bwd(tp.val(x), tp.val(w), stride, gout, tp.grad_slot(x), tp.grad_slot(w),
                   b == kNoVar ? nullptr : tp.grad_slot(b));
    });
}

inline VarId bilinear_upsample2x(Tape& t, VarId x) {
    return t.push(bilinear_upsample2x_fwd(t.val(x)), {x}, [x](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) bilinear_upsample2x_bwd(tp.val(x), tp.grad_ref(self), *gx);
    });
}

inline VarId nearest_downsample2x(Tape& t, VarId x) {
    return t.push(nearest_downsample2x_fwd(t.val(x)), {x}, [x](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) nearest_downsample2x_bwd(tp.val(x), tp.grad_ref(self), *gx);
    });
}

inline VarId concat_channels(Tape& t, std::span<const VarId> parts) {
    if (parts.empty()) throw shape_error("concat_channels: no inputs");
    const Tensor& first = t.val(parts[0]);
    int c_total = 0;
    for (VarId p : parts) {
        const Tensor& v = t.val(p);
        if (v.h != first.h || v.w != first.w)
            throw shape_error("concat_channels: spatial mismatch " + v.shape_str() + " vs " +
                              first.shape_str());
        c_total += v.c;
    }
    Tensor out(c_total, first.h, first.w);
    int at = 0;
    for (VarId p : parts) {
        const Tensor& v = t.val(p);
        std::copy(v.data.begin(), v.data.end(), out.channel(at));
        at += v.c;
    }
    std::vector<VarId> ps(parts.begin(), parts.end());
    return t.push(std::move(out), ps, [ps](Tape& tp, VarId self) {
        const Tensor& g = tp.grad_ref(self);
        int at = 0;
        for (VarId p : ps) {
            const Tensor& v = tp.val(p);
            if (Tensor* gp = tp.grad_slot(p)) {
                const double* src = g.channel(at);
                for (std::size_t i = 0; i < gp->data.size(); ++i) gp->data[i] += src[i];
            }
            at += v.c;
        }
    });
}

inline VarId concat_channels(Tape& t, std::initializer_list<VarId> parts) {
    std::vector<VarId> v(parts);
    return concat_channels(t, std::span<const VarId>(v));
}

inline VarId slice_channels(Tape& t, VarId x, int c0, int count) {
    const Tensor& v = t.val(x);
    if (c0 < 0 || count < 1 || c0 + count > v.c)
        throw shape_error("slice_channels: [" + std::to_string(c0) + "," + std::to_string(c0 + count) +
                          ") out of " + v.shape_str());
    Tensor out(count, v.h, v.w);
    std::copy(v.channel(c0), v.channel(c0) + out.size(), out.data.begin());
    return t.push(std::move(out), {x}, [x, c0, count](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) {
            const Tensor& g = tp.grad_ref(self);
            double* dst = gx->channel(c0);
            for (std::size_t i = 0; i < g.data.size(); ++i) dst[i] += g.data[i];
        }
    });
}

inline VarId add(Tape& t, VarId a, VarId b) {
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    require_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& tp, VarId self) {
        const Tensor& g = tp.grad_ref(self);
        if (Tensor* ga = tp.grad_slot(a))
            for (std::size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
        if (Tensor* gb = tp.grad_slot(b))
            for (std::size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i];
    });
}

inline VarId sub(Tape& t, VarId a, VarId b) {
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    require_same_shape(va, vb, "sub");
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& tp, VarId self) {
        const Tensor& g = tp.grad_ref(self);
        if (Tensor* ga = tp.grad_slot(a))
            for (std::size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
        if (Tensor* gb = tp.grad_slot(b))
            for (std::size_t i = 0; i < g.data.size(); ++i) gb->data[i] -= g.data[i];
    });
}

inline VarId mul(Tape& t, VarId a, VarId b) {
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    require_same_shape(va, vb, "mul");
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& tp, VarId self) {
        const Tensor& g = tp.grad_ref(self);
        const Tensor& va = tp.val(a);
        const Tensor& vb = tp.val(b);
        if (Tensor* ga = tp.grad_slot(a))
            for (std::size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] * vb.data[i];
        if (Tensor* gb = tp.grad_slot(b))
            for (std::size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i] * va.data[i];
    });
}

inline VarId divide(Tape& t, VarId a, VarId b) {
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    require_same_shape(va, vb, "divide");
    Tensor out = va;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= vb.data[i];
    return t.push(std::move(out), {a, b}, [a, b](Tape& tp, VarId self) {
        const Tensor& g = tp.grad_ref(self);
        const Tensor& va = tp.val(a);
        const Tensor& vb = tp.val(b);
        if (Tensor* ga = tp.grad_slot(a))
            for (std::size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] / vb.data[i];
        if (Tensor* gb = tp.grad_slot(b))
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gb->data[i] -= g.data[i] * va.data[i] / (vb.data[i] * vb.data[i]);
    });
}

/// scale * x + shift, elementwise with compile-time constants.
inline VarId affine(Tape& t, VarId x, double scale, double shift) {
    Tensor out = t.val(x);
    for (double& v : out.data) v = scale * v + shift;
    return t.push(std::move(out), {x}, [x, scale](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) {
            const Tensor& g = tp.grad_ref(self);
            for (std::size_t i = 0; i < g.data.size(); ++i) gx->data[i] += scale * g.data[i];
        }
    });
}

inline VarId sigmoid(Tape& t, VarId x) {
    Tensor out = t.val(x);
    for (double& v : out.data) v = sigmoid_scalar(v);
    return t.push(std::move(out), {x}, [x](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) {
            const Tensor& g = tp.grad_ref(self);
            const Tensor& y = tp.val(self);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gx->data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
        }
    });
}

inline VarId tanh_act(Tape& t, VarId x) {
    Tensor out = t.val(x);
    for (double& v : out.data) v = std::tanh(v);
    return t.push(std::move(out), {x}, [x](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) {
            const Tensor& g = tp.grad_ref(self);
            const Tensor& y = tp.val(self);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gx->data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
        }
    });
}

inline VarId relu(Tape& t, VarId x) {
    Tensor out = t.val(x);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return t.push(std::move(out), {x}, [x](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) {
            const Tensor& g = tp.grad_ref(self);
            const Tensor& vx = tp.val(x);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                if (vx.data[i] > 0.0) gx->data[i] += g.data[i];
        }
    });
}

inline VarId sum_all(Tape& t, VarId x) {
    double acc = 0.0;
    for (double v : t.val(x).data) acc += v;
    return t.push(Tensor::scalar(acc), {x}, [x](Tape& tp, VarId self) {
        if (Tensor* gx = tp.grad_slot(x)) {
            const double g = tp.grad_ref(self).data[0];
            for (double& v : gx->data) v += g;
        }
    });
}

inline VarId dot(Tape& t, VarId a, VarId b) {
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    require_same_shape(va, vb, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < va.data.size(); ++i) acc += va.data[i] * vb.data[i];
    return t.push(Tensor::scalar(acc), {a, b}, [a, b](Tape& tp, VarId self) {
        const double g = tp.grad_ref(self).data[0];
        const Tensor& va = tp.val(a);
        const Tensor& vb = tp.val(b);
        if (Tensor* ga = tp.grad_slot(a))
            for (std::size_t i = 0; i < vb.data.size(); ++i) ga->data[i] += g * vb.data[i];
        if (Tensor* gb = tp.grad_slot(b))
            for (std::size_t i = 0; i < va.data.size(); ++i) gb->data[i] += g * va.data[i];
    });
}

} // namespace crs
