// crs: reference-seeded multi-object mask propagation through image stacks.
// Subcommands: synth, train, infer, eval, ablate, plot. Every subcommand is
// reproducible from its config and seed alone; flags override config file
// values and the CRS_SEED environment variable overrides the seed last.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crs/ablate.hpp"
#include "crs/report.hpp"
#include "crs/segmenter.hpp"
#include "crs/synth.hpp"
#include "crs/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    auto bytes = crs::read_file_bytes(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw crs::parse_error(path + ": " + e.what());
    }
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    return load_json_file(path);
}

json section(const json& config, const std::string& name) {
    if (config.contains(name)) return config.at(name);
    return json::object();
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("CRS_SEED");
    if (!s || !*s) return std::nullopt;
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw crs::usage_error(std::string("CRS_SEED is not an unsigned integer: ") + s);
    }
}

std::vector<crs::ConsistencyMode> parse_mode_list(const std::string& csv) {
    std::vector<crs::ConsistencyMode> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(crs::parse_mode(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

int run_synth(const std::string& config_path, const std::string& spec_path, std::string out_dir,
              std::optional<std::uint64_t> seed_flag) {
    json cfg = load_config(config_path);
    crs::SynthSpec spec;
    if (!spec_path.empty())
        spec = load_json_file(spec_path).get<crs::SynthSpec>();
    else
        spec = section(cfg, "synth").get<crs::SynthSpec>();
    if (seed_flag) spec.seed = *seed_flag;
    if (auto s = env_seed()) spec.seed = *s;
    if (out_dir.empty()) out_dir = "synth_out";
    fs::create_directories(out_dir);
    auto [volume, labels] = crs::generate(spec);
    crs::write_volume(out_dir + "/volume.vol1", volume, crs::VolDtype::f32);
    crs::write_volume(out_dir + "/labels.vol1", labels);
    json manifest = spec;
    crs::write_file_bytes(out_dir + "/spec.json", manifest.dump(2) + "\n");
    std::printf("wrote %s/volume.vol1 and %s/labels.vol1 (%dx%dx%d, %d objects)\n", out_dir.c_str(),
                out_dir.c_str(), spec.z, spec.y, spec.x, spec.object_count);
    return 0;
}

int run_train(const std::string& config_path, double lr_flag, int epochs_flag,
              const std::string& out_flag, std::optional<std::uint64_t> seed_flag) {
    json cfg = load_config(config_path);
    crs::TrainConfig tc = section(cfg, "train").get<crs::TrainConfig>();
    if (lr_flag > 0.0) tc.learning_rate = lr_flag;
    if (epochs_flag > 0) tc.epochs = epochs_flag;
    if (!out_flag.empty()) tc.out_dir = out_flag;
    if (seed_flag) tc.seed = *seed_flag;
    if (auto s = env_seed()) tc.seed = *s;
    crs::TrainResult res = crs::train(tc, [](const crs::StepInfo& info) {
        std::printf("epoch %d step %d loss %.6f (%s)\n", info.epoch, info.step, info.loss,
                    info.teacher_forced ? "gt masks" : "own masks");
        std::fflush(stdout);
    });
    std::printf("final checkpoint: %s\n", res.final_checkpoint.c_str());
    return 0;
}

int run_infer(const std::string& config_path, const std::string& volume_path,
              const std::string& seed_path, const std::string& checkpoint_path,
              const std::string& out_path, const std::string& mode_flag) {
    json cfg = load_config(config_path);
    crs::InferenceConfig icfg = section(cfg, "infer").get<crs::InferenceConfig>();
    crs::Checkpoint ck = crs::load_checkpoint(checkpoint_path);
    if (!ck.meta.contains("model"))
        throw crs::format_error("checkpoint manifest lacks the model config: " + checkpoint_path);
    crs::ModelConfig model = ck.meta.at("model").get<crs::ModelConfig>();
    crs::ParamStore params = std::move(ck.store);
    if (!mode_flag.empty()) {
        const crs::ConsistencyMode target = crs::parse_mode(mode_flag);
        if (target != model.decoder.mode) {
            params = crs::restrict_to_mode(params, model, target);
            model.decoder.mode = target;
        }
    }
    crs::Volume volume = crs::read_intensity_volume(volume_path);
    std::optional<crs::LabelMap2D> seed;
    if (!seed_path.empty()) {
        crs::LabelMap sl = crs::read_label_volume(seed_path);
        seed = crs::slice_labels(sl, 0);
    }
    crs::LabelMap pred = crs::infer_volume(volume, seed, params, model, icfg);
    crs::write_volume(out_path, pred);
    std::printf("wrote %s (%dx%dx%d, %zu ids)\n", out_path.c_str(), pred.z, pred.y, pred.x,
                [&] {
                    std::set<std::uint32_t> ids;
                    for (auto v : pred.data)
                        if (v) ids.insert(v);
                    return ids.size();
                }());
    return 0;
}

int run_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& report_path) {
    crs::LabelMap pred = crs::read_label_volume(pred_path);
    crs::LabelMap gt = crs::read_label_volume(gt_path);
    const double ari = crs::adapted_rand_error(pred, gt);
    std::printf("%.9f\n", ari);
    if (!report_path.empty()) {
        const bool fresh = !fs::exists(report_path);
        std::ofstream out(report_path, std::ios::app);
        if (!out) throw crs::storage_error("cannot append to " + report_path);
        if (fresh) out << "pred,gt,ari\n";
        out << pred_path << "," << gt_path << "," << crs::format_double(ari) << "\n";
    }
    return 0;
}

int run_ablate(const std::string& config_path, const std::string& modes_flag,
               const std::string& seeds_flag, const std::string& out_flag) {
    json cfg = load_config(config_path);
    crs::AblateConfig ac;
    if (cfg.contains("ablate")) cfg.at("ablate").get_to(ac);
    if (!modes_flag.empty()) ac.modes = parse_mode_list(modes_flag);
    if (!seeds_flag.empty()) {
        ac.seeds.clear();
        std::string cur;
        for (char c : seeds_flag + ",") {
            if (c == ',') {
                if (!cur.empty()) ac.seeds.push_back(std::stoull(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
    }
    if (!out_flag.empty()) ac.out_dir = out_flag;
    crs::AblateReport report = crs::ablate(ac);
    for (const auto& row : report.rows)
        std::printf("%s seed %llu: ari %.4f, identity %.2f, %.1fs inference\n",
                    crs::to_string(row.mode).c_str(), static_cast<unsigned long long>(row.seed),
                    row.ari, row.identity_preserved, row.inference_seconds);
    std::printf("report: %s\n", report.csv_path.c_str());
    for (const auto& p : report.chart_paths) std::printf("chart: %s\n", p.c_str());
    return 0;
}

int run_plot(const std::string& report_path, std::string out_dir) {
    auto bytes = crs::read_file_bytes(report_path);
    crs::ReportTable table = crs::parse_report_csv(std::string(bytes.begin(), bytes.end()));
    if (out_dir.empty()) out_dir = fs::path(report_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    fs::create_directories(out_dir);
    for (const auto& [name, svg] : crs::render_report_charts(table)) {
        const std::string path = out_dir + "/" + name;
        crs::write_file_bytes(path, svg);
        std::printf("chart: %s\n", path.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "crs - consistent recurrent segmentation of volumetric image stacks.\n"
        "A single JSON config file holds per-subcommand sections: synth {shape, object_count,\n"
        "radius_range, drift_sigma, noise_sigma, artifact_slices, terminate_z, seed}, train\n"
        "{learning_rate, batch_size, epochs, teacher_forced_epochs, seed, dataset, model\n"
        "{encoder {widths, input_channels}, decoder {levels, hidden_width, objects_per_sequence,\n"
        "sequence_length, consistency_mode}}, infer {chunk_length, z_overlap, binarize_threshold,\n"
        "discover_new_objects, min_new_object_area}, checkpoint_every, validate_every,\n"
        "val_fraction, grad_clip_norm, out_dir, resume}, ablate {modes, seeds, synth, volumes_per_cell,\n"
        "blank_slice, terminated_examples, train, out_dir, workers}. Flags override config values; the CRS_SEED\n"
        "environment variable overrides the seed last."};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file with per-subcommand sections")
        ->envname("CRS_CONFIG");

    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    app.add_option("--seed", seed_flag, "override the config seed (config key: seed)")
        ->each([&](const std::string&) { seed_set = true; });

    auto* synth = app.add_subcommand("synth", "generate a synthetic tubular volume pair");
    std::string spec_path, synth_out;
    synth->add_option("--spec", spec_path, "SynthSpec JSON file (overrides the synth section)");
    synth->add_option("--out", synth_out, "output directory for volume.vol1 + labels.vol1");

    auto* train = app.add_subcommand("train", "optimize a model on VOL1 volume/label pairs");
    double lr_flag = 0.0;
    int epochs_flag = 0;
    std::string train_out;
    train->add_option("--lr", lr_flag, "override train.learning_rate");
    train->add_option("--epochs", epochs_flag, "override train.epochs");
    train->add_option("--out", train_out, "override train.out_dir");

    auto* infer = app.add_subcommand("infer", "propagate seed labels through a volume");
    std::string vol_path, seed_path, ckpt_path, pred_out = "pred.vol1", mode_flag;
    infer->add_option("--volume", vol_path, "intensity volume (.vol1)")->required();
    infer->add_option("--seed", seed_path, "seed label map (.vol1); first-frame watershed if absent");
    infer->add_option("--checkpoint", ckpt_path, "model checkpoint (.ckpt)")->required();
    infer->add_option("--out", pred_out, "output label volume (.vol1)");
    infer->add_option("--mode", mode_flag,
                      "run a narrower consistency mode than the checkpoint (ST, STL, STN, STC)");

    auto* eval = app.add_subcommand("eval", "adapted Rand error of a prediction");
    std::string eval_pred, eval_gt, eval_report;
    eval->add_option("--pred", eval_pred, "predicted label volume (.vol1)")->required();
    eval->add_option("--gt", eval_gt, "ground-truth label volume (.vol1)")->required();
    eval->add_option("--report", eval_report, "CSV file to append pred,gt,ari rows to");

    auto* ablate = app.add_subcommand("ablate", "train and score every consistency mode per seed");
    std::string modes_flag, seeds_flag, ablate_out;
    ablate->add_option("--modes", modes_flag, "comma list overriding ablate.modes (e.g. ST,STC)");
    ablate->add_option("--seeds", seeds_flag, "comma list overriding ablate.seeds");
    ablate->add_option("--out", ablate_out, "override ablate.out_dir");

    auto* plot = app.add_subcommand("plot", "render SVG charts from a report CSV");
    std::string plot_report, plot_out;
    plot->add_option("--report", plot_report, "report CSV (mode,seed,ari,inference_seconds)")
        ->required();
    plot->add_option("--out", plot_out, "output directory for the SVG files");

    CLI11_PARSE(app, argc, argv);

    try {
        std::optional<std::uint64_t> seed;
        if (seed_set) seed = seed_flag;
        if (*synth) return run_synth(config_path, spec_path, synth_out, seed);
        if (*train) return run_train(config_path, lr_flag, epochs_flag, train_out, seed);
        if (*infer) return run_infer(config_path, vol_path, seed_path, ckpt_path, pred_out, mode_flag);
        if (*eval) return run_eval(eval_pred, eval_gt, eval_report);
        if (*ablate) return run_ablate(config_path, modes_flag, seeds_flag, ablate_out);
        if (*plot) return run_plot(plot_report, plot_out);
    } catch (const crs::error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
