#pragma once
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "crs/errors.hpp"

namespace crs {

/// Dense (channels, height, width) map of 64-bit floats. Activation maps,
/// kernels and scalars all use this one container: a convolution kernel of
/// logical shape (C_out, C_in, k, k) is stored as (C_out * C_in, k, k) with
/// channel index co * C_in + ci, and a scalar is (1, 1, 1).
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, fill) {
        if (c_ < 1 || h_ < 1 || w_ < 1)
            throw shape_error("tensor dims must be positive, got (" + std::to_string(c_) + "," +
                              std::to_string(h_) + "," + std::to_string(w_) + ")");
    }

    static Tensor scalar(double v) {
        Tensor t(1, 1, 1);
        t.data[0] = v;
        return t;
    }

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    [[nodiscard]] std::string shape_str() const {
        return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
    }

    double& at(int ci, int y, int x) { return data[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    [[nodiscard]] double at(int ci, int y, int x) const {
        return data[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }

    double* channel(int ci) { return data.data() + static_cast<std::size_t>(ci) * h * w; }
    [[nodiscard]] const double* channel(int ci) const {
        return data.data() + static_cast<std::size_t>(ci) * h * w;
    }

    [[nodiscard]] double item() const {
        if (size() != 1) throw shape_error("item() on non-scalar tensor " + shape_str());
        return data[0];
    }

    [[nodiscard]] bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::fabs(v));
        return m;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw shape_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace crs
