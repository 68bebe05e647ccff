#pragma once
#include <chrono>
#include <filesystem>
#include <mutex>
#include <thread>
#include <vector>

#include "crs/report.hpp"
#include "crs/trainer.hpp"

namespace crs {

/// Benchmark recipe for the consistency ablation: per (mode, seed) cell a
/// model is trained on clean synthetic volumes and evaluated on twins of the
/// same volumes with one mid-stack slice blanked. The blanked twin shares
/// the clean volume's tubes exactly: the generator blanks intensity after
/// the fact and leaves labels intact.
struct AblateConfig {
    std::vector<ConsistencyMode> modes = {ConsistencyMode::ST, ConsistencyMode::STC};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    SynthSpec synth;          // clean base recipe; artifact_slices is overridden per twin
    int volumes_per_cell = 2; // training volumes per (mode, seed)
    int blank_slice = -1;     // -1 = middle of the stack
    /// Terminate the last object of every second training volume mid-stack,
    /// so models learn that an object with no image evidence goes empty (the
    /// behavior a blanked slice then triggers at evaluation time).
    bool terminated_examples = true;
    TrainConfig train;        // template; dataset/out_dir/model.mode filled per cell
    std::string out_dir = "ablate_out";
    int workers = 0;          // 0 = hardware concurrency

    void validate() const {
        if (modes.empty()) throw usage_error("ablate: empty mode list");
        if (seeds.empty()) throw usage_error("ablate: empty seed list");
        if (volumes_per_cell < 1) throw config_error("ablate: volumes_per_cell must be >= 1");
        synth.validate();
        const int blank = blank_slice < 0 ? synth.z / 2 : blank_slice;
        if (blank < 1 || blank >= synth.z - 1)
            throw config_error("ablate: the blanked slice must be interior to the stack");
    }
};

inline void from_json(const nlohmann::json& j, AblateConfig& c) {
    if (j.contains("modes")) {
        c.modes.clear();
        for (const auto& s : j.at("modes")) c.modes.push_back(parse_mode(s.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("synth")) j.at("synth").get_to(c.synth);
    if (j.contains("volumes_per_cell")) c.volumes_per_cell = j.at("volumes_per_cell").get<int>();
    if (j.contains("blank_slice")) c.blank_slice = j.at("blank_slice").get<int>();
    if (j.contains("terminated_examples")) c.terminated_examples = j.at("terminated_examples").get<bool>();
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("workers")) c.workers = j.at("workers").get<int>();
}

struct IdentityCounts {
    int preserved = 0;
    int considered = 0;
};

/// Per-object survival across the blanked slice: object o counts as
/// preserved when the prediction still covers at least half of its
/// ground-truth pixels on the first frame after the blank. Objects that end
/// before the blank are not considered.
inline IdentityCounts identity_counts(const LabelMap& pred, const LabelMap& gt, int blank_z) {
    const int z = blank_z + 1;
    if (z >= gt.z) throw bounds_error("identity_counts: no frame after the blanked slice");
    LabelMap2D gt_slice = slice_labels(gt, z);
    LabelMap2D pred_slice = slice_labels(pred, z);
    IdentityCounts out;
    for (std::uint32_t id : slice_labels(gt, 0).distinct_nonzero_ids()) {
        std::size_t total = 0, covered = 0;
        for (std::size_t i = 0; i < gt_slice.data.size(); ++i) {
            if (gt_slice.data[i] != id) continue;
            ++total;
            if (pred_slice.data[i] == id) ++covered;
        }
        if (total == 0) continue;
        ++out.considered;
        if (2 * covered >= total) ++out.preserved;
    }
    return out;
}

inline double identity_preservation(const LabelMap& pred, const LabelMap& gt, int blank_z) {
    IdentityCounts c = identity_counts(pred, gt, blank_z);
    if (c.considered == 0) throw metric_error("identity_preservation: no objects reach the blank");
    return static_cast<double>(c.preserved) / static_cast<double>(c.considered);
}

namespace detail {

struct AblateCell {
    ConsistencyMode mode;
    std::uint64_t seed;
};

inline AblateRow run_ablate_cell(const AblateConfig& cfg, const AblateCell& cell) {
    const int blank = cfg.blank_slice < 0 ? cfg.synth.z / 2 : cfg.blank_slice;

    std::vector<VolumePair> train_data;
    std::vector<VolumePair> eval_data;
    for (int v = 0; v < cfg.volumes_per_cell; ++v) {
        SynthSpec clean = cfg.synth;
        clean.artifact_slices.clear();
        clean.seed = CounterRng::mix(cell.seed + 0x51ED * static_cast<std::uint64_t>(v + 1));
        if (cfg.terminated_examples && v % 2 == 1) {
            clean.terminate_z.assign(static_cast<std::size_t>(clean.object_count), -1);
            clean.terminate_z.back() = blank;
        }
        // The blanked twin only differs in intensity on the blanked slice;
        // tubes and labels are identical, so evaluation isolates the artifact.
        SynthSpec blanked = clean;
        blanked.artifact_slices = {blank};
        auto [cv, cl] = generate(clean);
        auto [bv, bl] = generate(blanked);
        train_data.push_back({std::move(cv), std::move(cl)});
        eval_data.push_back({std::move(bv), std::move(bl)});
    }

    TrainConfig tc = cfg.train;
    tc.model.decoder.mode = cell.mode;
    tc.seed = cell.seed;
    tc.val_fraction = 0.0;
    tc.out_dir = cfg.out_dir + "/" + to_string(cell.mode) + "_seed" + std::to_string(cell.seed);
    TrainResult tr = train(tc, train_data);

    AblateRow row;
    row.mode = cell.mode;
    row.seed = cell.seed;
    double ari_sum = 0.0;
    IdentityCounts ids;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& vp : eval_data) {
        LabelMap pred =
            infer_volume(vp.volume, slice_labels(vp.labels, 0), tr.params, tc.model, tc.infer);
        ari_sum += adapted_rand_error(pred, vp.labels);
        IdentityCounts c = identity_counts(pred, vp.labels, blank);
        ids.preserved += c.preserved;
        ids.considered += c.considered;
    }
    row.inference_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.ari = ari_sum / static_cast<double>(eval_data.size());
    row.identity_preserved =
        ids.considered == 0 ? 0.0
                            : static_cast<double>(ids.preserved) / static_cast<double>(ids.considered);
    return row;
}

} // namespace detail

struct AblateReport {
    std::vector<AblateRow> rows;  // (mode, seed) in config order
    std::string csv_path;
    std::vector<std::string> chart_paths;
};

/// Trains and evaluates every (mode, seed) cell, writes the report CSV and
/// the charts. Cells are independent and run on a small worker pool; the
/// row order is the deterministic (mode-major, seed-minor) config order.
inline AblateReport ablate(const AblateConfig& cfg) {
    cfg.validate();
    std::vector<detail::AblateCell> cells;
    for (ConsistencyMode mode : cfg.modes)
        for (std::uint64_t seed : cfg.seeds) cells.push_back({mode, seed});

    std::vector<AblateRow> rows(cells.size());
    unsigned workers = cfg.workers > 0 ? static_cast<unsigned>(cfg.workers)
                                       : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(cells.size()));

    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&] {
        while (true) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (failure || next >= cells.size()) return;
                i = next++;
            }
            try {
                rows[i] = detail::run_ablate_cell(cfg, cells[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);

    std::filesystem::create_directories(cfg.out_dir);
    AblateReport report;
    report.rows = rows;
    report.csv_path = cfg.out_dir + "/report.csv";
    write_report_csv(report.csv_path, rows);
    ReportTable table;
    table.rows = rows;
    for (const auto& [name, svg] : render_report_charts(table)) {
        const std::string path = cfg.out_dir + "/" + name;
        write_file_bytes(path, svg);
        report.chart_paths.push_back(path);
    }
    return report;
}

} // namespace crs
