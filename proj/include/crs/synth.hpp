#pragma once
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "crs/errors.hpp"
#include "crs/rng.hpp"
#include "crs/voxel_store.hpp"

namespace crs {

/// Recipe for a synthetic tubular volume: M disjoint bright tubes with dark
/// boundary rings drifting through z over a mid-gray background, optional
/// fully blanked slices, and clipped Gaussian intensity noise. Everything is
/// a pure function of `seed`.
struct SynthSpec {
    int z = 16, y = 64, x = 64;
    int object_count = 3;
    double radius_min = 3.0, radius_max = 5.0;
    double drift_sigma = 0.4;        // voxels of center drift per frame
    double noise_sigma = 0.02;       // intensity units
    std::vector<int> artifact_slices;
    std::vector<int> terminate_z;    // per object: first frame without it (-1 = never)
    std::uint64_t seed = 1;

    void validate() const {
        if (object_count < 1) throw config_error("synth: object_count must be >= 1");
        if (z < 1 || y < 1 || x < 1) throw config_error("synth: dims must be >= 1");
        if (radius_min <= 0 || radius_max < radius_min)
            throw config_error("synth: need 0 < radius_min <= radius_max");
        if (2.0 * (radius_max + kRingWidth) + 2.0 > std::min(y, x))
            throw config_error("synth: radii do not fit the frame");
        for (int s : artifact_slices)
            if (s < 0 || s >= z) throw config_error("synth: artifact slice out of range");
        if (!terminate_z.empty() && static_cast<int>(terminate_z.size()) != object_count)
            throw config_error("synth: terminate_z must list one entry per object");
    }

    static constexpr double kRingWidth = 1.5;
    static constexpr double kInterior = 0.8;
    static constexpr double kRing = 0.1;
    static constexpr double kBackground = 0.5;
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = {{"shape", {s.z, s.y, s.x}},
         {"object_count", s.object_count},
         {"radius_range", {s.radius_min, s.radius_max}},
         {"drift_sigma", s.drift_sigma},
         {"noise_sigma", s.noise_sigma},
         {"artifact_slices", s.artifact_slices},
         {"terminate_z", s.terminate_z},
         {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
    if (j.contains("shape")) {
        auto sh = j.at("shape").get<std::vector<int>>();
        if (sh.size() != 3) throw config_error("synth: shape must be [z,y,x]");
        s.z = sh[0];
        s.y = sh[1];
        s.x = sh[2];
    }
    if (j.contains("object_count")) s.object_count = j.at("object_count").get<int>();
    if (j.contains("radius_range")) {
        auto r = j.at("radius_range").get<std::vector<double>>();
        if (r.size() != 2) throw config_error("synth: radius_range must be [min,max]");
        s.radius_min = r[0];
        s.radius_max = r[1];
    }
    if (j.contains("drift_sigma")) s.drift_sigma = j.at("drift_sigma").get<double>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("artifact_slices")) s.artifact_slices = j.at("artifact_slices").get<std::vector<int>>();
    if (j.contains("terminate_z")) s.terminate_z = j.at("terminate_z").get<std::vector<int>>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
}

namespace detail {

struct TubePath {
    std::vector<double> cy, cx, radius;  // per frame
    int end_z;                           // frames >= end_z carry no mask
};

inline TubePath sample_tube(const SynthSpec& spec, CounterRng rng, int end_z) {
    TubePath p;
    p.end_z = end_z;
    const double margin = spec.radius_max + SynthSpec::kRingWidth + 1.0;
    p.cy.resize(static_cast<std::size_t>(spec.z));
    p.cx.resize(static_cast<std::size_t>(spec.z));
    p.radius.resize(static_cast<std::size_t>(spec.z));
    double cy = rng.uniform(margin, spec.y - margin);
    double cx = rng.uniform(margin, spec.x - margin);
    for (int t = 0; t < spec.z; ++t) {
        if (t > 0) {
            cy += rng.normal(0.0, spec.drift_sigma);
            cx += rng.normal(0.0, spec.drift_sigma);
            cy = std::clamp(cy, margin, spec.y - margin);
            cx = std::clamp(cx, margin, spec.x - margin);
        }
        p.cy[t] = cy;
        p.cx[t] = cx;
        p.radius[t] = rng.uniform(spec.radius_min, spec.radius_max);
    }
    return p;
}

inline bool tubes_collide(const SynthSpec& spec, const TubePath& a, const TubePath& b) {
    for (int t = 0; t < spec.z; ++t) {
        if (t >= a.end_z || t >= b.end_z) continue;
        const double dy = a.cy[t] - b.cy[t];
        const double dx = a.cx[t] - b.cx[t];
        const double min_sep =
            a.radius[t] + b.radius[t] + 2.0 * SynthSpec::kRingWidth + 1.0;
        if (dy * dy + dx * dx < min_sep * min_sep) return true;
    }
    return false;
}

} // namespace detail

/// Deterministic synthesis of (intensity volume, label volume). Tube
/// interiors are bright and labeled 1..M, boundary rings dark and unlabeled,
/// background mid-gray. Slices listed in artifact_slices have their
/// intensity forced to zero after noise while labels stay intact.
inline std::pair<Volume, LabelMap> generate(const SynthSpec& spec) {
    spec.validate();
    CounterRng root(spec.seed, 0xC4A7);

    // Placement with bounded retries per tube.
    std::vector<detail::TubePath> tubes;
    constexpr int kMaxAttempts = 256;
    for (int o = 0; o < spec.object_count; ++o) {
        const int end_z = spec.terminate_z.empty() || spec.terminate_z[o] < 0
                              ? spec.z
                              : std::min(spec.terminate_z[o], spec.z);
        bool placed = false;
        for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
            auto path = detail::sample_tube(
                spec, root.derive((static_cast<std::uint64_t>(o) << 20) | attempt), end_z);
            bool clear = true;
            for (const auto& other : tubes)
                if (detail::tubes_collide(spec, path, other)) {
                    clear = false;
                    break;
                }
            if (clear) {
                tubes.push_back(std::move(path));
                placed = true;
            }
        }
        if (!placed)
            throw generation_error("could not place tube " + std::to_string(o + 1) + " of " +
                                   std::to_string(spec.object_count) + " after " +
                                   std::to_string(kMaxAttempts) + " attempts");
    }

    Volume vol(spec.z, spec.y, spec.x, SynthSpec::kBackground);
    LabelMap labels(spec.z, spec.y, spec.x, 0);
    for (int t = 0; t < spec.z; ++t) {
        for (int o = 0; o < spec.object_count; ++o) {
            const auto& tube = tubes[static_cast<std::size_t>(o)];
            if (t >= tube.end_z) continue;
            const double r = tube.radius[t];
            const double outer = r + SynthSpec::kRingWidth;
            const int y_lo = std::max(0, static_cast<int>(std::floor(tube.cy[t] - outer)));
            const int y_hi = std::min(spec.y - 1, static_cast<int>(std::ceil(tube.cy[t] + outer)));
            const int x_lo = std::max(0, static_cast<int>(std::floor(tube.cx[t] - outer)));
            const int x_hi = std::min(spec.x - 1, static_cast<int>(std::ceil(tube.cx[t] + outer)));
            for (int yy = y_lo; yy <= y_hi; ++yy) {
                for (int xx = x_lo; xx <= x_hi; ++xx) {
                    const double dy = yy - tube.cy[t];
                    const double dx = xx - tube.cx[t];
                    const double d = std::sqrt(dy * dy + dx * dx);
                    if (d <= r) {
                        vol.at(t, yy, xx) = SynthSpec::kInterior;
                        labels.at(t, yy, xx) = static_cast<std::uint32_t>(o + 1);
                    } else if (d <= outer) {
                        vol.at(t, yy, xx) = SynthSpec::kRing;
                    }
                }
            }
        }
    }

    if (spec.noise_sigma > 0.0) {
        CounterRng noise = root.derive(0xBEEF);
        for (double& v : vol.data) v = std::clamp(v + noise.normal(0.0, spec.noise_sigma), 0.0, 1.0);
    }
    for (int s : spec.artifact_slices) {
        std::fill(vol.data.begin() + static_cast<std::ptrdiff_t>(s) * spec.y * spec.x,
                  vol.data.begin() + static_cast<std::ptrdiff_t>(s + 1) * spec.y * spec.x, 0.0);
    }
    return {std::move(vol), std::move(labels)};
}

} // namespace crs
