#pragma once
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crs/binio.hpp"
#include "crs/rng.hpp"
#include "crs/tape.hpp"
#include "crs/tensor.hpp"

namespace crs {

/// Named trainable tensors with matching gradient slots. Iteration order is
/// insertion order and is the order used by the checkpoint format.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        Tensor grad;
    };

    int add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw state_error("param already registered: " + name);
        Entry e;
        e.name = name;
        e.grad = Tensor(init.c, init.h, init.w);
        e.value = std::move(init);
        items_.push_back(std::move(e));
        index_[name] = static_cast<int>(items_.size()) - 1;
        return static_cast<int>(items_.size()) - 1;
    }

    [[nodiscard]] std::size_t size() const { return items_.size(); }
    [[nodiscard]] bool has(const std::string& name) const { return index_.count(name) > 0; }

    [[nodiscard]] int index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw state_error("unknown param: " + name);
        return it->second;
    }

    Entry& operator[](int i) { return items_[static_cast<std::size_t>(i)]; }
    const Entry& operator[](int i) const { return items_[static_cast<std::size_t>(i)]; }
    Entry& at(const std::string& name) { return items_[static_cast<std::size_t>(index_of(name))]; }
    [[nodiscard]] const Entry& at(const std::string& name) const {
        return items_[static_cast<std::size_t>(index_of(name))];
    }

    void zero_grads() {
        for (Entry& e : items_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
    }

    [[nodiscard]] double grad_norm() const {
        double s = 0.0;
        for (const Entry& e : items_)
            for (double g : e.grad.data) s += g * g;
        return std::sqrt(s);
    }

    void scale_grads(double k) {
        for (Entry& e : items_)
            for (double& g : e.grad.data) g *= k;
    }

    [[nodiscard]] std::size_t value_count() const {
        std::size_t n = 0;
        for (const Entry& e : items_) n += e.value.size();
        return n;
    }

private:
    std::vector<Entry> items_;
    std::unordered_map<std::string, int> index_;
};

/// Kernel init: uniform in [-s, s] with s = sqrt(1 / fan_in). The stream is
/// derived from the parameter name so the layout of unrelated parameters
/// cannot shift an existing tensor's draw.
inline Tensor uniform_kernel(int c, int h, int w, int fan_in, const std::string& name,
                             const CounterRng& model_rng) {
    Tensor t(c, h, w);
    CounterRng r = model_rng.derive(CounterRng::hash_name(name.c_str()));
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = r.uniform(-s, s);
    return t;
}

/// Per-tape handles for every entry of a ParamStore.
struct BoundParams {
    std::vector<VarId> ids;
    VarId operator[](int i) const { return ids[static_cast<std::size_t>(i)]; }
};

inline BoundParams bind_params(Tape& tape, const ParamStore& store) {
    BoundParams b;
    b.ids.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
        b.ids.push_back(tape.leaf(store[static_cast<int>(i)].value));
    return b;
}

/// Adds tape leaf gradients into the store's gradient slots (after backward).
inline void accumulate_grads(const Tape& tape, const BoundParams& bound, ParamStore& store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor g = tape.grad_of(bound.ids[i]);
        Tensor& slot = store[static_cast<int>(i)].grad;
        for (std::size_t j = 0; j < slot.data.size(); ++j) slot.data[j] += g.data[j];
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: `<path>` holds the concatenated values of every entry
// as 32-bit little-endian floats in store order; `<path>.json` is a manifest
// with names, shapes and an open "meta" object for model configuration.
// Writes are atomic (temp file + rename).
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ParamStore& store, const std::string& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    std::string payload;
    payload.reserve(store.value_count() * 4);
    nlohmann::json names = nlohmann::json::array();
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store[static_cast<int>(i)];
        for (double v : e.value.data) put_f32le(payload, static_cast<float>(v));
        names.push_back({{"name", e.name}, {"shape", {e.value.c, e.value.h, e.value.w}}});
    }
    nlohmann::json manifest = {{"params", names}, {"meta", meta}};

    const std::string tmp_bin = path + ".tmp";
    const std::string tmp_json = path + ".json.tmp";
    write_file_bytes(tmp_bin, payload);
    write_file_bytes(tmp_json, manifest.dump(2) + "\n");
    std::error_code ec;
    std::filesystem::rename(tmp_bin, path, ec);
    if (ec) throw storage_error("checkpoint rename failed: " + path);
    std::filesystem::rename(tmp_json, path + ".json", ec);
    if (ec) throw storage_error("checkpoint manifest rename failed: " + path);
}

struct Checkpoint {
    ParamStore store;
    nlohmann::json meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    auto bytes = read_file_bytes(path);
    nlohmann::json manifest;
    try {
        auto mbytes = read_file_bytes(path + ".json");
        manifest = nlohmann::json::parse(mbytes.begin(), mbytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw format_error("checkpoint manifest unreadable: " + path + ".json: " + e.what());
    }
    Checkpoint ck;
    if (manifest.contains("meta")) ck.meta = manifest["meta"];
    std::size_t offset = 0;
    for (const auto& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const auto shape = p.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw format_error("checkpoint shape rank != 3 for " + name);
        Tensor t(shape[0], shape[1], shape[2]);
        if (offset + t.size() * 4 > bytes.size())
            throw format_error("checkpoint payload truncated at param " + name);
        for (std::size_t i = 0; i < t.size(); ++i)
            t.data[i] = static_cast<double>(get_f32le(bytes.data() + offset + i * 4));
        offset += t.size() * 4;
        ck.store.add(name, std::move(t));
    }
    if (offset != bytes.size())
        throw format_error("checkpoint payload has trailing bytes: " + path);
    return ck;
}

} // namespace crs
